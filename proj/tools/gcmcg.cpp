#include <CLI11.hpp>
#include <json.hpp>

#include "gcmcg/config.hpp"
#include "gcmcg/dataset.hpp"
#include "gcmcg/eval.hpp"
#include "gcmcg/model.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace gcmcg;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = ".";
};

config::Config load_config(const GlobalArgs& g) {
    config::Config cfg;
    if (!g.config_path.empty()) cfg = config::Config::from_file(g.config_path);
    if (g.seed_set) cfg.set("seed", std::to_string(g.seed));
    return cfg;
}

std::string out_path(const GlobalArgs& g, const std::string& name) {
    fs::create_directories(g.out_dir);
    return (fs::path(g.out_dir) / name).string();
}

std::string companion(const std::string& data_path, const std::string& suffix) {
    return data_path + suffix;
}

graph::ElectrodeGraph resolve_graph(const std::string& data_path, std::string adjacency,
                                    std::string electrode_map) {
    if (adjacency.empty()) adjacency = companion(data_path, ".adj.txt");
    if (electrode_map.empty()) electrode_map = companion(data_path, ".map.txt");
    if (!fs::exists(adjacency))
        throw error("no adjacency file at " + adjacency +
                    " (generate one or pass --adjacency)");
    if (!fs::exists(electrode_map))
        throw error("no electrode map at " + electrode_map + " (pass --map)");
    return graph::load_graph(adjacency, electrode_map);
}

std::map<std::string, int> load_label_map(const std::string& path) {
    std::map<std::string, int> out;
    if (path.empty()) return out;
    std::ifstream in(path);
    if (!in) throw error("cannot open label map " + path);
    std::string name;
    int index;
    while (in >> name >> index) out[name] = index;
    return out;
}

std::vector<std::string> class_names(std::size_t q) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < q; ++i) names.push_back("class" + std::to_string(i));
    return names;
}

void write_clusters_json(const eval::FoldOutcome& fold, const std::string& path) {
    nlohmann::ordered_json j;
    j["cluster_count"] = fold.cluster_groups.size();
    j["channel_cluster"] = fold.channel_cluster;
    j["groups"] = fold.cluster_groups;
    j["test_subjects"] = fold.plan.test_subjects;
    std::ofstream out(path);
    if (!out) throw error("cannot open " + path);
    out << j.dump(2) << '\n';
}

void emit_fold_artifacts(const GlobalArgs& g, const eval::FoldOutcome& fold,
                         std::size_t classes, const std::string& tag) {
    eval::write_report_json(fold.report, class_names(classes),
                            out_path(g, "report" + tag + ".json"));
    fold.history.write_csv(out_path(g, "history" + tag + ".csv"));
    write_clusters_json(fold, out_path(g, "clusters" + tag + ".json"));
}

int cmd_synth(const GlobalArgs& g, const std::string& out_file) {
    config::Config cfg = load_config(g);
    data::SynthSpec spec = config::synth_spec_from(cfg);
    data::SynthResult result = data::synth(spec);

    const std::string out = out_file.empty() ? out_path(g, "data.gcd") : out_file;
    data::save_container(result.data, out);
    data::write_truth_sidecar(spec, result, companion(out, ".truth.json"));
    graph::ElectrodeGraph graph = data::synth_graph(spec);
    data::write_graph_files(graph, companion(out, ".adj.txt"), companion(out, ".map.txt"));
    std::cout << "wrote " << out << " (" << result.data.trials.size() << " trials, "
              << result.data.channels << " channels)\n";
    return 0;
}

int cmd_ingest(const GlobalArgs& g, const std::string& csv, double rate,
               const std::string& labels, std::size_t window, const std::string& label_map,
               const std::string& out_file) {
    data::DatasetContainer c = data::ingest_csv(csv, rate, labels, window,
                                                load_label_map(label_map));
    const std::string out = out_file.empty() ? out_path(g, "data.gcd") : out_file;
    data::save_container(c, out);
    std::cout << "wrote " << out << " (" << c.trials.size() << " trials)\n";
    return 0;
}

int cmd_denoise(const GlobalArgs& g, const std::string& data_path, const std::string& out_file) {
    config::Config cfg = load_config(g);
    eval::CvOptions opt = config::cv_options_from(cfg);
    data::DatasetContainer c = data::load_container(data_path);

    data::DatasetContainer out = c;
    for (std::size_t i = 0; i < c.trials.size(); ++i) {
        dsp::Recording rec;
        rec.samples = c.trials[i].samples;
        rec.rate = static_cast<double>(c.rate);
        dsp::DenoiseConfig dcfg = opt.denoise_cfg;
        dcfg.ica_seed = opt.train_cfg.seed * 0x9E3779B97F4A7C15ULL + i + 1;
        out.trials[i].samples = dsp::denoise(rec, dcfg).samples;
    }
    const std::string path = out_file.empty() ? out_path(g, "denoised.gcd") : out_file;
    data::save_container(out, path);

    nlohmann::ordered_json prov;
    prov["source"] = data_path;
    prov["band_low_hz"] = opt.denoise_cfg.filter.band_low_hz;
    prov["band_high_hz"] = opt.denoise_cfg.filter.band_high_hz;
    prov["notch_hz"] =
        opt.denoise_cfg.filter.notch_hz ? nlohmann::ordered_json(*opt.denoise_cfg.filter.notch_hz)
                                        : nlohmann::ordered_json(nullptr);
    prov["filter_order"] = opt.denoise_cfg.filter.order;
    prov["kurt_threshold"] = opt.denoise_cfg.kurt_threshold;
    prov["wavelet_lambda_scale"] = opt.denoise_cfg.lambda_scale;
    prov["seed"] = opt.train_cfg.seed;
    std::ofstream pj(companion(path, ".provenance.json"));
    pj << prov.dump(2) << '\n';

    std::cout << "wrote " << path << '\n';
    return 0;
}

int cmd_cluster_report(const GlobalArgs& g, const std::string& data_path,
                       const std::string& adjacency, const std::string& electrode_map,
                       const std::string& model_path, bool no_graph,
                       const std::string& out_file) {
    config::Config cfg = load_config(g);
    eval::CvOptions opt = config::cv_options_from(cfg);
    data::DatasetContainer c = data::load_container(data_path);

    linalg::Mat embeddings;
    std::vector<std::size_t> channel_of_row;
    if (no_graph) {
        const std::size_t C = c.channels;
        embeddings = linalg::Mat(C, C);
        std::vector<linalg::Mat> prepared = eval::prepare_trials(c, opt);
        for (const linalg::Mat& z : prepared) {
            linalg::Mat r = cluster::correlation_matrix(z);
            for (std::size_t i = 0; i < C * C; ++i) embeddings.a[i] += r.a[i];
        }
        for (double& v : embeddings.a) v /= static_cast<double>(prepared.size());
        for (std::size_t ch = 0; ch < C; ++ch) channel_of_row.push_back(ch);
    } else {
        model::ModelState state;
        if (!model_path.empty()) {
            state = model::load_model(model_path);
        } else {
            graph::ElectrodeGraph graph = resolve_graph(data_path, adjacency, electrode_map);
            model::ModelConfig mcfg = opt.model_cfg;
            mcfg.channels = c.channels;
            mcfg.classes = c.classes;
            state = model::init_model(mcfg, graph, std::nullopt, opt.train_cfg.seed);
        }
        Tensor theta = model::graph_embedding(state);
        const auto unmasked = state.electrode_graph.unmasked_nodes();
        embeddings = linalg::Mat(unmasked.size(), theta.dim(1));
        for (std::size_t r = 0; r < unmasked.size(); ++r) {
            for (std::size_t col = 0; col < theta.dim(1); ++col)
                embeddings(r, col) = theta.at(unmasked[r], col);
            channel_of_row.push_back(
                static_cast<std::size_t>(state.electrode_graph.electrode_map[unmasked[r]]));
        }
        embeddings = cluster::center_columns(embeddings);
    }

    cluster::SpectralOptions sopt = opt.train_cfg.spectral;
    sopt.seed = opt.train_cfg.seed;
    sopt.k_max = std::min(sopt.k_max, embeddings.rows - 1);
    cluster::ClusterAssignment assignment = cluster::cluster_channels(embeddings, sopt);

    const std::string path = out_file.empty() ? out_path(g, "cluster_report.csv") : out_file;
    std::ofstream out(path);
    if (!out) throw error("cannot open " + path);
    out << "channel,cluster\n";
    for (std::size_t r = 0; r < assignment.labels.size(); ++r)
        out << (channel_of_row[r] + 1) << ',' << assignment.labels[r] << '\n';
    out << "\neigenvalue_index,eigenvalue\n";
    for (std::size_t i = 0; i < assignment.eigenvalues.size(); ++i)
        out << (i + 1) << ',' << assignment.eigenvalues[i] << '\n';
    std::cout << "wrote " << path << " (K=" << assignment.k << ")\n";
    return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& data_path, const std::string& adjacency,
              const std::string& electrode_map, std::size_t folds, std::size_t fold_index) {
    config::Config cfg = load_config(g);
    eval::CvOptions opt = config::cv_options_from(cfg);
    if (folds) opt.folds = folds;
    data::DatasetContainer c = data::load_container(data_path);
    graph::ElectrodeGraph graph = resolve_graph(data_path, adjacency, electrode_map);

    std::vector<linalg::Mat> prepared = eval::prepare_trials(c, opt);
    eval::FoldRun run = eval::run_fold(c, prepared, graph, opt, fold_index);

    model::save_model(run.state, out_path(g, "model.ckpt"));
    emit_fold_artifacts(g, run.outcome, c.classes, "");
    eval::write_confusion_csv(run.outcome.report, class_names(c.classes),
                              out_path(g, "confusion.csv"));
    std::cout << "fold " << fold_index << "/" << opt.folds
              << " top1=" << run.outcome.report.top1 << " kappa=" << run.outcome.report.kappa
              << '\n';
    return 0;
}

int run_eval_like(const GlobalArgs& g, const std::string& data_path,
                  const std::string& adjacency, const std::string& electrode_map,
                  std::size_t folds, bool no_graph, bool no_cluster,
                  const std::string& expert) {
    config::Config cfg = load_config(g);
    eval::CvOptions opt = config::cv_options_from(cfg);
    if (folds) opt.folds = folds;
    if (no_graph) opt.model_cfg.use_graph = false;
    if (no_cluster) opt.model_cfg.use_cluster = false;
    if (!expert.empty()) opt.model_cfg.expert_kind = model::expert_kind_from_string(expert);

    data::DatasetContainer c = data::load_container(data_path);
    graph::ElectrodeGraph graph;
    if (opt.model_cfg.use_graph) graph = resolve_graph(data_path, adjacency, electrode_map);

    eval::CvResult cv = eval::run_cv(c, graph, opt);

    for (std::size_t i = 0; i < cv.folds.size(); ++i)
        emit_fold_artifacts(g, cv.folds[i], c.classes, "_fold" + std::to_string(i + 1));

    std::map<std::string, std::string> extra;
    extra["folds"] = std::to_string(opt.folds);
    extra["seed"] = std::to_string(opt.train_cfg.seed);
    extra["expert"] = model::to_string(opt.model_cfg.expert_kind);
    extra["graph"] = opt.model_cfg.use_graph ? "on" : "off";
    extra["cluster"] = opt.model_cfg.use_cluster ? "on" : "off";
    eval::write_report_json(cv.aggregate, class_names(c.classes), out_path(g, "report.json"),
                            extra);
    eval::write_confusion_csv(cv.aggregate, class_names(c.classes),
                              out_path(g, "confusion.csv"));

    std::cout << "aggregate top1=" << cv.aggregate.top1 << " macro_f1=" << cv.aggregate.macro_f1
              << " kappa=" << cv.aggregate.kappa << " macro_auc=" << cv.aggregate.macro_auc
              << '\n';
    return 0;
}

int cmd_export_tokenizer(const std::string& model_path, const std::string& out_file) {
    model::ModelState state = model::load_model(model_path);
    if (!state.cfg.use_graph) throw error("model was trained without the graph branch");
    graph::TokenizerState tok;
    tok.features = state.find("tokenizer").value;
    tok.seed = state.seed;
    graph::tokenizer_save(tok, out_file);
    std::cout << "wrote " << out_file << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GCMCG EEG decoding pipeline"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "flat key=value configuration file");
    auto* seed_opt = app.add_option("--seed", g.seed, "RNG seed override");
    app.add_option("--out-dir", g.out_dir, "artifact output directory");

    std::string out_file, data_path, csv_path, labels_path, label_map_path;
    std::string adjacency, electrode_map, model_path, expert;
    double rate = 160.0;
    std::size_t window = 0, folds = 0, fold_index = 1;
    bool no_graph = false, no_cluster = false;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic EEG container");
    synth->add_option("--out", out_file, "output container path");

    CLI::App* ingest = app.add_subcommand("ingest", "convert CSV recordings to a container");
    ingest->add_option("--csv", csv_path, "input CSV (header = channel names)")->required();
    ingest->add_option("--rate", rate, "sampling rate in Hz")->required();
    ingest->add_option("--labels", labels_path, "label sidecar: start,end,label,subject")
        ->required();
    ingest->add_option("--window", window, "trial window in samples")->required();
    ingest->add_option("--label-map", label_map_path, "file of 'name index' pairs");
    ingest->add_option("--out", out_file, "output container path");

    CLI::App* denoise = app.add_subcommand("denoise", "run the two-stage denoiser");
    denoise->add_option("--data", data_path, "input container")->required();
    denoise->add_option("--out", out_file, "output container path");

    CLI::App* creport = app.add_subcommand("cluster-report", "electrode clustering report");
    creport->add_option("--data", data_path, "input container")->required();
    creport->add_option("--adjacency", adjacency, "adjacency list file");
    creport->add_option("--map", electrode_map, "electrode map file");
    creport->add_option("--model", model_path, "model checkpoint for trained embeddings");
    creport->add_flag("--no-graph", no_graph, "cluster on signal correlations instead");
    creport->add_option("--out", out_file, "output CSV path");

    CLI::App* train_cmd = app.add_subcommand("train", "train one LGSO fold");
    train_cmd->add_option("--data", data_path, "input container")->required();
    train_cmd->add_option("--adjacency", adjacency, "adjacency list file");
    train_cmd->add_option("--map", electrode_map, "electrode map file");
    train_cmd->add_option("--folds", folds, "LGSO group count");
    train_cmd->add_option("--fold", fold_index, "fold index (1-based)");

    CLI::App* eval_cmd = app.add_subcommand("eval", "full LGSO cross-validation");
    eval_cmd->add_option("--data", data_path, "input container")->required();
    eval_cmd->add_option("--adjacency", adjacency, "adjacency list file");
    eval_cmd->add_option("--map", electrode_map, "electrode map file");
    eval_cmd->add_option("--folds", folds, "LGSO group count");

    CLI::App* exp_tok = app.add_subcommand("export-tokenizer", "export tokenizer features");
    exp_tok->add_option("--model", model_path, "model checkpoint")->required();
    exp_tok->add_option("--out", out_file, "output tokenizer path")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "cross-validation with ablations");
    ablate->add_option("--data", data_path, "input container")->required();
    ablate->add_option("--adjacency", adjacency, "adjacency list file");
    ablate->add_option("--map", electrode_map, "electrode map file");
    ablate->add_option("--folds", folds, "LGSO group count");
    ablate->add_flag("--no-graph", no_graph, "drop the GAT branch");
    ablate->add_flag("--no-cluster", no_cluster, "drop the cluster experts");
    ablate->add_option("--expert", expert, "expert backbone: gru|lstm|bilstm|cnn-lstm|cnn-gru");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (synth->parsed()) return cmd_synth(g, out_file);
        if (ingest->parsed())
            return cmd_ingest(g, csv_path, rate, labels_path, window, label_map_path, out_file);
        if (denoise->parsed()) return cmd_denoise(g, data_path, out_file);
        if (creport->parsed())
            return cmd_cluster_report(g, data_path, adjacency, electrode_map, model_path,
                                      no_graph, out_file);
        if (train_cmd->parsed())
            return cmd_train(g, data_path, adjacency, electrode_map, folds, fold_index);
        if (eval_cmd->parsed())
            return run_eval_like(g, data_path, adjacency, electrode_map, folds, false, false, "");
        if (exp_tok->parsed()) return cmd_export_tokenizer(model_path, out_file);
        if (ablate->parsed())
            return run_eval_like(g, data_path, adjacency, electrode_map, folds, no_graph,
                                 no_cluster, expert);
    } catch (const gcmcg::error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
