#include "gcmcg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace gcmcg::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("config: cannot open " + path);
    Config cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw error("config: missing '=' at " + path + ":" + std::to_string(line_no));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw error("config: empty key at " + path + ":" + std::to_string(line_no));
        cfg.kv_[key] = value;
    }
    return cfg;
}

std::string Config::str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double Config::num(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw error("config: key '" + key + "' is not a number: " + it->second);
    }
}

long Config::integer(const std::string& key, long fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stol(it->second);
    } catch (...) {
        throw error("config: key '" + key + "' is not an integer: " + it->second);
    }
}

bool Config::flag(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw error("config: key '" + key + "' is not a boolean: " + it->second);
}

std::vector<std::string> Config::list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = kv_.find(key);
    if (it == kv_.end()) return out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ';')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

std::vector<std::vector<std::size_t>> Config::groups(const std::string& key) const {
    std::vector<std::vector<std::size_t>> out;
    for (const std::string& tok : list(key)) {
        std::vector<std::size_t> grp;
        const auto dash = tok.find('-');
        try {
            if (dash == std::string::npos) {
                grp.push_back(static_cast<std::size_t>(std::stoul(tok)));
            } else {
                const std::size_t lo = std::stoul(tok.substr(0, dash));
                const std::size_t hi = std::stoul(tok.substr(dash + 1));
                if (hi < lo) throw error("config: descending range " + tok);
                for (std::size_t c = lo; c <= hi; ++c) grp.push_back(c);
            }
        } catch (const error&) {
            throw;
        } catch (...) {
            throw error("config: bad group token '" + tok + "' in key " + key);
        }
        out.push_back(std::move(grp));
    }
    return out;
}

eval::CvOptions cv_options_from(const Config& cfg) {
    eval::CvOptions opt;

    model::ModelConfig& m = opt.model_cfg;
    m.gat.layers = static_cast<std::size_t>(cfg.integer("gat_layers", 2));
    m.gat.heads = static_cast<std::size_t>(cfg.integer("gat_heads", 4));
    m.gat.token_dim = static_cast<std::size_t>(cfg.integer("token_dim", 16));
    m.gat.embed_dim = static_cast<std::size_t>(cfg.integer("embed_dim", 32));
    m.conv_kernel = static_cast<std::size_t>(cfg.integer("conv_kernel", 7));
    m.conv_stride = static_cast<std::size_t>(cfg.integer("conv_stride", 2));
    m.gate_hidden = static_cast<std::size_t>(cfg.integer("gate_hidden", 64));
    m.head_hidden = static_cast<std::size_t>(cfg.integer("head_hidden", 64));
    m.lambda_gate = cfg.num("lambda_gate", 0.01);
    m.expert_kind = model::expert_kind_from_string(cfg.str("expert", "cnn-gru"));

    train::TrainConfig& t = opt.train_cfg;
    t.epochs_stage1 = static_cast<int>(cfg.integer("epochs_stage1", 18));
    t.epochs_stage2 = static_cast<int>(cfg.integer("epochs_stage2", 8));
    t.epochs_stage3 = static_cast<int>(cfg.integer("epochs_stage3", 4));
    t.batch = static_cast<std::size_t>(cfg.integer("batch", 32));
    t.lr = cfg.num("lr", 1e-3);
    t.lr_stage3 = cfg.num("lr_stage3", 1e-2);
    t.grad_clip = cfg.num("grad_clip", 5.0);
    t.lambda_gate = m.lambda_gate;
    t.focal_gamma = cfg.num("focal_gamma", 2.0);
    t.cluster_warmup = static_cast<int>(cfg.integer("cluster_warmup", 5));
    t.seed = static_cast<std::uint64_t>(cfg.integer("seed", 1));
    t.spectral.k_min = static_cast<std::size_t>(cfg.integer("k_min", 2));
    t.spectral.k_max = static_cast<std::size_t>(cfg.integer("k_max", 10));
    const std::string s3 = cfg.str("stage3_loss", "focal");
    if (s3 == "focal")
        t.stage3_loss = model::LossKind::focal;
    else if (s3 == "ce")
        t.stage3_loss = model::LossKind::cross_entropy;
    else
        throw error("config: stage3_loss must be 'focal' or 'ce'");

    dsp::DenoiseConfig& d = opt.denoise_cfg;
    d.filter.band_low_hz = cfg.num("band_low_hz", 0.2);
    d.filter.band_high_hz = cfg.num("band_high_hz", 75.0);
    d.filter.order = static_cast<int>(cfg.integer("filter_order", 4));
    if (cfg.has("notch_hz") && cfg.num("notch_hz", 0.0) > 0.0)
        d.filter.notch_hz = cfg.num("notch_hz", 60.0);
    d.filter.notch_q = cfg.num("notch_q", 30.0);
    d.kurt_threshold = cfg.num("kurt_threshold", 0.5);
    d.wavelet_levels = static_cast<int>(cfg.integer("wavelet_levels", 0));
    d.lambda_scale = cfg.num("wavelet_lambda_scale", 1.0);
    d.ica_max_iter = static_cast<int>(cfg.integer("ica_max_iter", 500));
    d.ica_tol = cfg.num("ica_tol", 1e-4);

    opt.denoise = cfg.flag("denoise", true);
    opt.folds = static_cast<std::size_t>(cfg.integer("folds", 2));
    opt.parallel_folds = cfg.flag("parallel_folds", true);
    return opt;
}

data::SynthSpec synth_spec_from(const Config& cfg) {
    data::SynthSpec spec;
    spec.classes = static_cast<std::size_t>(cfg.integer("synth_classes", 3));
    spec.channels = static_cast<std::size_t>(cfg.integer("synth_channels", 16));
    spec.samples = static_cast<std::size_t>(cfg.integer("synth_samples", 256));
    spec.rate = cfg.num("synth_rate", 160.0);
    spec.subjects = static_cast<std::size_t>(cfg.integer("synth_subjects", 8));
    spec.trials_per_subject =
        static_cast<std::size_t>(cfg.integer("synth_trials_per_subject", 120));
    spec.groups = cfg.groups("synth_groups");
    for (const std::string& tok : cfg.list("synth_freqs")) {
        try {
            spec.class_freqs.push_back(std::stod(tok));
        } catch (...) {
            throw error("config: bad synth_freqs token " + tok);
        }
    }
    spec.rhythm_amp = cfg.num("synth_amp", 40.0);
    spec.noise_sigma = cfg.num("synth_noise", 20.0);
    spec.common_noise = cfg.num("synth_common_noise", 0.0);
    spec.artifact_noise = cfg.num("synth_artifact_noise", 0.0);
    spec.artifact_sources = static_cast<std::size_t>(cfg.integer("synth_artifact_sources", 3));
    spec.hum_amp = cfg.num("synth_hum_amp", 0.0);
    spec.spike_rate = cfg.num("synth_spike_rate", 0.0);
    spec.spike_amp = cfg.num("synth_spike_amp", 150.0);
    spec.seed = static_cast<std::uint64_t>(cfg.integer("seed", 1));
    return spec;
}

} // namespace gcmcg::config
