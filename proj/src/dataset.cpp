#include "gcmcg/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace gcmcg::data {

std::string DatasetContainer::subject_name(std::uint16_t subject) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "S%05u", static_cast<unsigned>(subject));
    return buf;
}

std::vector<std::string> DatasetContainer::subject_ids() const {
    std::vector<std::string> ids;
    for (const Trial& t : trials) ids.push_back(subject_name(t.subject));
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

std::uint16_t get_u16(const std::string& buf, std::size_t off) {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
        v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}
std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}
float get_f32(const std::string& buf, std::size_t off) {
    const std::uint32_t bits = get_u32(buf, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace

void save_container(const DatasetContainer& c, const std::string& path) {
    for (const Trial& t : c.trials) {
        if (t.samples.rows != c.channels || t.samples.cols != c.samples)
            throw error("container: trial shape mismatch");
        if (t.label >= c.classes) throw error("container: label outside [0, Q)");
    }
    std::string buf = "GCD1";
    put_u32(buf, c.version);
    put_u32(buf, static_cast<std::uint32_t>(c.channels));
    put_u32(buf, static_cast<std::uint32_t>(c.samples));
    put_f32(buf, c.rate);
    put_u32(buf, static_cast<std::uint32_t>(c.classes));
    put_u32(buf, static_cast<std::uint32_t>(c.trials.size()));
    for (const Trial& t : c.trials) {
        put_u16(buf, t.subject);
        put_u16(buf, t.label);
        for (std::size_t i = 0; i < t.samples.a.size(); ++i)
            put_f32(buf, static_cast<float>(t.samples.a[i]));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("save_container: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

DatasetContainer load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("load_container: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 24) throw error("load_container: truncated header");
    if (buf.compare(0, 4, "GCD1") != 0) throw error("load_container: bad magic bytes");

    DatasetContainer c;
    c.version = get_u32(buf, 4);
    if (c.version != 1)
        throw error("load_container: unsupported version " + std::to_string(c.version));
    c.channels = get_u32(buf, 8);
    c.samples = get_u32(buf, 12);
    c.rate = get_f32(buf, 16);
    c.classes = get_u32(buf, 20);
    const std::uint32_t n_trials = get_u32(buf, 24);
    const std::size_t per_trial = 4 + c.channels * c.samples * 4;
    const std::size_t expect = 28 + static_cast<std::size_t>(n_trials) * per_trial;
    if (buf.size() != expect)
        throw error("load_container: payload size " + std::to_string(buf.size()) +
                    " does not match header count " + std::to_string(expect));

    std::size_t off = 28;
    for (std::uint32_t i = 0; i < n_trials; ++i) {
        Trial t;
        t.subject = get_u16(buf, off);
        t.label = get_u16(buf, off + 2);
        off += 4;
        if (t.label >= c.classes) throw error("load_container: label outside [0, Q)");
        t.samples = linalg::Mat(c.channels, c.samples);
        for (std::size_t k = 0; k < t.samples.a.size(); ++k, off += 4)
            t.samples.a[k] = static_cast<double>(get_f32(buf, off));
        c.trials.push_back(std::move(t));
    }
    return c;
}

// ---- synthetic generator ------------------------------------------------------

void SynthSpec::fill_defaults() {
    if (groups.empty()) {
        // three contiguous blocks covering the montage
        const std::size_t g = 3;
        const std::size_t base = channels / g;
        const std::size_t extra = channels % g;
        std::size_t pos = 0;
        for (std::size_t k = 0; k < g; ++k) {
            std::vector<std::size_t> grp;
            const std::size_t size = base + (k < extra ? 1 : 0);
            for (std::size_t i = 0; i < size; ++i) grp.push_back(pos++);
            groups.push_back(std::move(grp));
        }
    }
    if (class_freqs.empty()) {
        // one rhythm per class spread across dyadic bands
        const double base[6] = {3.0, 6.0, 11.0, 21.0, 9.0, 15.0};
        for (std::size_t q = 0; q < classes; ++q) class_freqs.push_back(base[q % 6]);
    }
}

void SynthSpec::validate() const {
    if (classes < 2) throw error("synth: need at least 2 classes");
    if (channels < 2 || samples < 16) throw error("synth: montage too small");
    if (subjects == 0 || trials_per_subject == 0) throw error("synth: empty dataset");
    if (class_freqs.size() != classes) throw error("synth: need one rhythm per class");
    std::vector<bool> used(channels, false);
    for (const auto& grp : groups) {
        if (grp.empty()) throw error("synth: empty planted group");
        for (std::size_t ch : grp) {
            if (ch >= channels) throw error("synth: planted channel out of range");
            if (used[ch]) throw error("synth: planted groups overlap");
            used[ch] = true;
        }
    }
    for (double f : class_freqs)
        if (f <= 0.0 || f >= rate / 2.0) throw error("synth: rhythm frequency beyond Nyquist");
}

namespace {

// Paul Kellet's economy pink filter over white noise
struct PinkFilter {
    double b0 = 0, b1 = 0, b2 = 0;
    double step(double white) {
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        return b0 + b1 + b2 + white * 0.1848;
    }
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

} // namespace

SynthResult synth(const SynthSpec& spec_in) {
    SynthSpec spec = spec_in;
    spec.fill_defaults();
    spec.validate();

    SynthResult result;
    result.groups = spec.groups;
    result.channel_cluster.assign(spec.channels, spec.groups.size()); // ungrouped sentinel
    for (std::size_t k = 0; k < spec.groups.size(); ++k)
        for (std::size_t ch : spec.groups[k]) result.channel_cluster[ch] = k;
    for (std::size_t q = 0; q < spec.classes; ++q)
        result.class_group.push_back(q % spec.groups.size());

    DatasetContainer& c = result.data;
    c.channels = spec.channels;
    c.samples = spec.samples;
    c.rate = static_cast<float>(spec.rate);
    c.classes = spec.classes;

    for (std::size_t s = 0; s < spec.subjects; ++s) {
        std::mt19937_64 subject_rng(mix_seed(spec.seed, 0x5000 + s));
        std::uniform_real_distribution<double> gain_jitter(0.85, 1.15);
        const double subject_gain = gain_jitter(subject_rng);

        // balanced labels, per-subject shuffled order
        std::vector<std::uint16_t> labels;
        for (std::size_t i = 0; i < spec.trials_per_subject; ++i)
            labels.push_back(static_cast<std::uint16_t>(i % spec.classes));
        std::shuffle(labels.begin(), labels.end(), subject_rng);

        for (std::size_t ti = 0; ti < spec.trials_per_subject; ++ti) {
            std::mt19937_64 rng(mix_seed(spec.seed, (s << 20) | ti));
            std::normal_distribution<double> white(0.0, 1.0);
            std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

            Trial trial;
            trial.subject = static_cast<std::uint16_t>(s + 1);
            trial.label = labels[ti];
            trial.samples = linalg::Mat(spec.channels, spec.samples);

            const std::size_t grp = result.class_group[trial.label];
            const double freq = spec.class_freqs[trial.label];
            const double trial_phase = phase(rng);

            std::vector<double> common(spec.samples, 0.0);
            if (spec.common_noise > 0.0) {
                PinkFilter shared;
                for (double& v : common)
                    v = spec.common_noise * subject_gain * 0.25 * shared.step(white(rng));
            }

            // artifact sources project onto channel stripes that cut across
            // the planted groups (muscle/ocular-style spatial patterns)
            std::vector<std::vector<double>> artifacts;
            if (spec.artifact_noise > 0.0 && spec.artifact_sources > 0) {
                for (std::size_t p = 0; p < spec.artifact_sources; ++p) {
                    PinkFilter pf;
                    std::vector<double> src(spec.samples);
                    for (double& v : src)
                        v = spec.artifact_noise * subject_gain * 0.25 * pf.step(white(rng));
                    artifacts.push_back(std::move(src));
                }
            }

            for (std::size_t ch = 0; ch < spec.channels; ++ch) {
                PinkFilter pink;
                std::uniform_real_distribution<double> amp_jitter(0.9, 1.1);
                const double rhythm_gain =
                    result.channel_cluster[ch] == grp
                        ? spec.rhythm_amp * subject_gain * amp_jitter(rng)
                        : 0.0;
                const double ch_phase = trial_phase + 0.05 * white(rng);
                for (std::size_t t = 0; t < spec.samples; ++t) {
                    double v = spec.noise_sigma * subject_gain * 0.25 * pink.step(white(rng));
                    v += spec.noise_sigma * subject_gain * white(rng);
                    v += common[t];
                    if (!artifacts.empty())
                        v += artifacts[ch % artifacts.size()][t];
                    v += rhythm_gain *
                         std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) /
                                      spec.rate +
                                  ch_phase);
                    if (spec.hum_amp > 0.0)
                        v += spec.hum_amp * std::sin(2.0 * std::numbers::pi * 60.0 *
                                                         static_cast<double>(t) / spec.rate +
                                                     trial_phase * 0.5);
                    trial.samples(ch, t) = v;
                }
            }

            if (spec.spike_rate > 0.0) {
                std::poisson_distribution<int> spikes(spec.spike_rate);
                std::uniform_int_distribution<std::size_t> pos(2, spec.samples - 3);
                std::uniform_int_distribution<std::size_t> chan(0, spec.channels - 1);
                std::bernoulli_distribution sign(0.5);
                const int count = spikes(rng);
                for (int k = 0; k < count; ++k) {
                    const std::size_t p = pos(rng);
                    const std::size_t ch = chan(rng);
                    const double a = (sign(rng) ? 1.0 : -1.0) * spec.spike_amp;
                    trial.samples(ch, p - 1) += 0.4 * a;
                    trial.samples(ch, p) += a;
                    trial.samples(ch, p + 1) += 0.4 * a;
                }
            }
            c.trials.push_back(std::move(trial));
        }
    }
    return result;
}

void write_truth_sidecar(const SynthSpec& spec_in, const SynthResult& result,
                         const std::string& path) {
    SynthSpec spec = spec_in;
    spec.fill_defaults();
    nlohmann::ordered_json j;
    j["seed"] = spec.seed;
    j["classes"] = spec.classes;
    j["channels"] = spec.channels;
    j["samples"] = spec.samples;
    j["rate"] = spec.rate;
    j["subjects"] = spec.subjects;
    j["trials_per_subject"] = spec.trials_per_subject;
    j["groups"] = result.groups;
    j["channel_cluster"] = result.channel_cluster;
    j["class_group"] = result.class_group;
    j["class_freqs"] = spec.class_freqs;
    j["rhythm_amp"] = spec.rhythm_amp;
    j["noise_sigma"] = spec.noise_sigma;
    j["common_noise"] = spec.common_noise;
    j["artifact_noise"] = spec.artifact_noise;
    j["artifact_sources"] = spec.artifact_sources;
    j["hum_amp"] = spec.hum_amp;
    j["spike_rate"] = spec.spike_rate;
    std::ofstream out(path);
    if (!out) throw error("write_truth_sidecar: cannot open " + path);
    out << j.dump(2) << '\n';
}

graph::ElectrodeGraph synth_graph(const SynthSpec& spec_in) {
    SynthSpec spec = spec_in;
    spec.fill_defaults();
    spec.validate();
    return graph::grouped_graph(spec.channels, spec.groups);
}

void write_graph_files(const graph::ElectrodeGraph& g, const std::string& adjacency_path,
                       const std::string& map_path) {
    std::ofstream adj(adjacency_path);
    if (!adj) throw error("write_graph_files: cannot open " + adjacency_path);
    for (std::size_t i = 0; i < g.node_count; ++i) {
        adj << (i + 1) << ':';
        for (std::size_t j : g.adjacency[i]) adj << ' ' << (j + 1);
        adj << '\n';
    }
    std::ofstream map(map_path);
    if (!map) throw error("write_graph_files: cannot open " + map_path);
    for (std::size_t i = 0; i < g.node_count; ++i)
        if (g.electrode_map[i] >= 0) map << (i + 1) << ' ' << (g.electrode_map[i] + 1) << '\n';
}

// ---- CSV ingestion ----------------------------------------------------------

DatasetContainer ingest_csv(const std::string& csv_path, double rate,
                            const std::string& labels_path, std::size_t window,
                            const std::map<std::string, int>& label_map) {
    if (rate <= 0.0) throw error("ingest: rate must be positive");
    if (window < 2) throw error("ingest: window must be at least 2 samples");

    std::ifstream in(csv_path);
    if (!in) throw error("ingest: cannot open " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw error("ingest: empty csv " + csv_path);

    std::vector<std::string> channel_names;
    {
        std::stringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) channel_names.push_back(cell);
    }
    const std::size_t channels = channel_names.size();
    if (channels == 0) throw error("ingest: header has no channels");

    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (...) {
                throw error("ingest: bad value at line " + std::to_string(line_no));
            }
        }
        if (row.size() != channels)
            throw error("ingest: ragged row at line " + std::to_string(line_no) + " (" +
                        std::to_string(row.size()) + " of " + std::to_string(channels) +
                        " columns)");
        rows.push_back(std::move(row));
    }

    std::ifstream lab(labels_path);
    if (!lab) throw error("ingest: cannot open label sidecar " + labels_path);

    DatasetContainer c;
    c.channels = channels;
    c.samples = window;
    c.rate = static_cast<float>(rate);
    int max_label = -1;

    std::size_t lab_line = 0;
    std::map<std::string, std::uint16_t> subject_index;
    while (std::getline(lab, line)) {
        ++lab_line;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ls(line);
        std::string start_s, end_s, label_s, subject_s;
        if (!std::getline(ls, start_s, ',') || !std::getline(ls, end_s, ',') ||
            !std::getline(ls, label_s, ',') || !std::getline(ls, subject_s))
            throw error("ingest: malformed label line " + std::to_string(lab_line));
        if (label_s.empty())
            throw error("ingest: missing label for segment at line " + std::to_string(lab_line));

        std::size_t start = 0, end = 0;
        try {
            start = static_cast<std::size_t>(std::stoull(start_s));
            end = static_cast<std::size_t>(std::stoull(end_s));
        } catch (...) {
            throw error("ingest: bad sample range at line " + std::to_string(lab_line));
        }
        if (end <= start || end > rows.size())
            throw error("ingest: segment [" + start_s + "," + end_s + ") out of range at line " +
                        std::to_string(lab_line));
        if (end - start < window)
            throw error("ingest: segment at line " + std::to_string(lab_line) + " has " +
                        std::to_string(end - start) + " samples, shorter than the window " +
                        std::to_string(window));

        int label = -1;
        if (auto it = label_map.find(label_s); it != label_map.end()) {
            label = it->second;
        } else {
            try {
                label = std::stoi(label_s);
            } catch (...) {
                throw error("ingest: unknown label \"" + label_s + "\" at line " +
                            std::to_string(lab_line));
            }
        }
        if (label < 0) throw error("ingest: negative label at line " + std::to_string(lab_line));
        max_label = std::max(max_label, label);

        if (!subject_index.count(subject_s))
            subject_index[subject_s] =
                static_cast<std::uint16_t>(subject_index.size() + 1);

        Trial t;
        t.subject = subject_index[subject_s];
        t.label = static_cast<std::uint16_t>(label);
        t.samples = linalg::Mat(channels, window);
        for (std::size_t i = 0; i < window; ++i)
            for (std::size_t ch = 0; ch < channels; ++ch)
                t.samples(ch, i) = rows[start + i][ch];
        c.trials.push_back(std::move(t));
    }
    if (c.trials.empty()) throw error("ingest: label sidecar defined no segments");
    c.classes = static_cast<std::size_t>(max_label) + 1;
    return c;
}

} // namespace gcmcg::data
