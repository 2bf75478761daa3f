#include "gcmcg/train.hpp"
#include "gcmcg/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace gcmcg::train {

using model::ModelState;
using model::Param;

std::vector<double> pbs_probabilities(const std::vector<std::size_t>& class_counts, double rho) {
    if (rho < 0.0 || rho > 1.0) throw error("pbs_probabilities: rho outside [0,1]");
    if (class_counts.empty()) throw error("pbs_probabilities: no classes");
    std::size_t total = 0;
    for (std::size_t c : class_counts) {
        if (c == 0) throw error("pbs_probabilities: empty class");
        total += c;
    }
    const double q = static_cast<double>(class_counts.size());
    std::vector<double> p(class_counts.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        p[i] = (1.0 - rho) * static_cast<double>(class_counts[i]) / static_cast<double>(total) +
               rho / q;
    return p;
}

ProgressiveSampler::ProgressiveSampler(const std::vector<int>& labels, std::size_t classes,
                                       std::uint64_t seed)
    : by_class_(classes), counts_(classes, 0), rng_(seed) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw error("sampler: label outside [0, Q)");
        by_class_[static_cast<std::size_t>(l)].push_back(i);
        ++counts_[static_cast<std::size_t>(l)];
    }
    set_rho(0.0);
}

void ProgressiveSampler::set_rho(double rho) { probs_ = pbs_probabilities(counts_, rho); }

std::size_t ProgressiveSampler::draw() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double target = u(rng_), acc = 0.0;
    std::size_t cls = probs_.size() - 1;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
        acc += probs_[i];
        if (target <= acc) {
            cls = i;
            break;
        }
    }
    std::uniform_int_distribution<std::size_t> pick(0, by_class_[cls].size() - 1);
    return by_class_[cls][pick(rng_)];
}

double ce_loss(const std::vector<double>& onehot, const std::vector<double>& probs) {
    if (onehot.size() != probs.size()) throw error("ce_loss: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        acc -= onehot[i] * std::log(std::max(probs[i], 1e-12));
    return acc;
}

double focal_loss(const std::vector<double>& onehot, const std::vector<double>& probs,
                  double gamma, const std::vector<double>& class_weights) {
    if (gamma < 0.0) throw error("focal_loss: gamma must be >= 0");
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (onehot[i] == 0.0) continue;
        const double w = class_weights.empty() ? 1.0 : class_weights[i];
        const double p = std::max(probs[i], 1e-12);
        acc -= onehot[i] * w * std::pow(1.0 - p, gamma) * std::log(p);
    }
    return acc;
}

void History::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw error("history: cannot open " + path);
    out << "epoch,stage,loss,cls_loss,gate_entropy,train_acc,val_acc,lr\n";
    for (const EpochRecord& r : epochs) {
        out << r.epoch << ',' << r.stage << ',' << r.loss << ',' << r.cls_loss << ','
            << r.gate_entropy << ',' << r.train_acc << ',';
        if (std::isfinite(r.val_acc)) out << r.val_acc;
        out << ',' << r.lr << '\n';
    }
}

namespace {

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int t = 0;

    void step(ModelState& state, const std::map<std::string, Tensor>& grads,
              const std::vector<bool>& trainable, double clip) {
        ++t;
        // global norm over trainable gradients
        double norm_sq = 0.0;
        for (Param& p : state.params) {
            if (p.group >= trainable.size() || !trainable[p.group]) continue;
            auto it = grads.find(p.name);
            if (it == grads.end()) continue;
            const Tensor& g = it->second;
            norm_sq += kernels::active().dot(g.data(), g.data(), g.size());
        }
        const double norm = std::sqrt(norm_sq);
        const double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;

        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        for (Param& p : state.params) {
            if (p.group >= trainable.size() || !trainable[p.group]) continue;
            auto it = grads.find(p.name);
            if (it == grads.end()) continue;
            const Tensor& g = it->second;
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double gi = g.at(i) * scale;
                p.adam_m.at(i) = beta1 * p.adam_m.at(i) + (1.0 - beta1) * gi;
                p.adam_v.at(i) = beta2 * p.adam_v.at(i) + (1.0 - beta2) * gi * gi;
                const double mhat = p.adam_m.at(i) / c1;
                const double vhat = p.adam_v.at(i) / c2;
                p.value.at(i) -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

std::size_t argmax(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v.at(i) > v.at(best)) best = i;
    return best;
}

double evaluate_accuracy(const ModelState& state, const std::vector<TrialView>& set) {
    if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t hit = 0;
    for (const TrialView& t : set) {
        model::Prediction p = model::predict(state, *t.z);
        if (static_cast<int>(argmax(p.logits)) == t.label) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(set.size());
}

void fit_clusters(ModelState& state, const std::vector<TrialView>& train_set,
                  const TrainConfig& cfg, History& history) {
    if (!state.cfg.use_cluster) {
        return;
    }
    const auto t0 = std::chrono::steady_clock::now();

    linalg::Mat embeddings;
    std::vector<std::size_t> channel_of_row;
    if (state.cfg.use_graph) {
        Tensor theta = model::graph_embedding(state);
        const auto& g = state.electrode_graph;
        const auto unmasked = g.unmasked_nodes();
        embeddings = linalg::Mat(unmasked.size(), theta.dim(1));
        for (std::size_t r = 0; r < unmasked.size(); ++r) {
            for (std::size_t c = 0; c < theta.dim(1); ++c)
                embeddings(r, c) = theta.at(unmasked[r], c);
            channel_of_row.push_back(
                static_cast<std::size_t>(g.electrode_map[unmasked[r]]));
        }
    } else {
        // graph ablation: per-channel embeddings from the mean signal
        // correlation matrix over the training trials
        const std::size_t C = state.cfg.channels;
        embeddings = linalg::Mat(C, C);
        for (const TrialView& t : train_set) {
            linalg::Mat r = cluster::correlation_matrix(*t.z);
            for (std::size_t i = 0; i < C * C; ++i) embeddings.a[i] += r.a[i];
        }
        const double inv = 1.0 / static_cast<double>(train_set.size());
        for (double& v : embeddings.a) v *= inv;
        for (std::size_t c = 0; c < C; ++c) channel_of_row.push_back(c);
    }

    cluster::SpectralOptions opt = cfg.spectral;
    opt.seed = cfg.seed;
    opt.k_max = std::min(opt.k_max, embeddings.rows > 1 ? embeddings.rows - 1 : 1);
    if (state.cfg.use_graph) embeddings = cluster::center_columns(embeddings);
    cluster::ClusterAssignment assignment = cluster::cluster_channels(embeddings, opt);

    std::vector<std::vector<std::size_t>> groups(assignment.k);
    for (std::size_t r = 0; r < assignment.labels.size(); ++r)
        groups[assignment.labels[r]].push_back(channel_of_row[r]);
    model::add_cluster_experts(state, groups, assignment.labels);

    history.cluster_count = assignment.k;
    history.cluster_warmup_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct StageSpec {
    int stage;
    int epochs;
    std::vector<bool> trainable; // indexed by ParamGroup
    model::LossKind loss;
    bool progressive_sampler;
    double lr;
};

} // namespace

History run_training(ModelState& state, const std::vector<TrialView>& train_set,
              const std::vector<TrialView>& val_set, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
    if (train_set.empty()) throw error("train: empty training set");
    const std::size_t classes = state.cfg.classes;
    state.cfg.lambda_gate = cfg.lambda_gate;

    std::vector<int> labels;
    std::vector<std::size_t> counts(classes, 0);
    for (const TrialView& t : train_set) {
        if (t.label < 0 || static_cast<std::size_t>(t.label) >= classes)
            throw error("train: label outside [0, Q)");
        labels.push_back(t.label);
        ++counts[static_cast<std::size_t>(t.label)];
    }
    for (std::size_t q = 0; q < classes; ++q)
        if (counts[q] == 0)
            throw error("train: class " + std::to_string(q) + " absent from the training set");

    // inverse-frequency weights normalized to mean 1
    std::vector<double> class_weights(classes);
    {
        double mean = 0.0;
        for (std::size_t q = 0; q < classes; ++q) {
            class_weights[q] = 1.0 / static_cast<double>(counts[q]);
            mean += class_weights[q];
        }
        mean /= static_cast<double>(classes);
        for (double& w : class_weights) w /= mean;
    }

    History history;
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5bf03635ULL);
    ProgressiveSampler sampler(labels, classes, cfg.seed ^ 0x9e3779b9ULL);

    const int warmup = std::min(std::max(cfg.cluster_warmup, 0), cfg.epochs_stage1);
    bool clusters_fitted = !state.cfg.use_cluster || state.clusters_ready;
    int global_epoch = 0;

    const StageSpec stages[3] = {
        {1, cfg.epochs_stage1, {true, true, false}, model::LossKind::cross_entropy, false,
         cfg.lr},
        {2, cfg.epochs_stage2, {false, true, false}, model::LossKind::focal, true, cfg.lr},
        {3, cfg.epochs_stage3, {false, false, true}, cfg.stage3_loss, true, cfg.lr_stage3},
    };

    for (const StageSpec& spec : stages) {
        if (!clusters_fitted && (spec.stage == 2 || (spec.stage == 1 && warmup == 0))) {
            fit_clusters(state, train_set, cfg, history);
            clusters_fitted = true;
        }

        const std::uint64_t backbone_before = model::group_checksum(state, model::kBackbone);
        const std::uint64_t headfc_before = model::group_checksum(state, model::kHeadFc);
        if (spec.stage == 2) history.backbone_checksum_stage2_start = backbone_before;
        if (spec.stage == 3) history.headfc_checksum_stage3_start = headfc_before;

        Adam adam;
        adam.lr = spec.lr;

        for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
            state.stage = static_cast<std::uint8_t>(spec.stage);
            // order of this epoch's samples
            std::vector<std::size_t> order;
            if (spec.progressive_sampler) {
                const double rho =
                    spec.stage == 2
                        ? static_cast<double>(epoch) / std::max(1, cfg.epochs_stage2)
                        : 1.0;
                sampler.set_rho(rho);
                for (std::size_t i = 0; i < train_set.size(); ++i)
                    order.push_back(sampler.draw());
            } else {
                order.resize(train_set.size());
                std::iota(order.begin(), order.end(), 0);
                std::shuffle(order.begin(), order.end(), shuffle_rng);
            }

            model::LossParams lp;
            lp.kind = spec.loss;
            lp.focal_gamma = cfg.focal_gamma;
            if (spec.loss == model::LossKind::focal) lp.class_weights = class_weights;

            double ep_loss = 0.0, ep_cls = 0.0, ep_gate = 0.0;
            std::size_t ep_hits = 0, batches = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
                const std::size_t stop = std::min(order.size(), start + cfg.batch);
                std::vector<const linalg::Mat*> zs;
                std::vector<int> ys;
                for (std::size_t i = start; i < stop; ++i) {
                    zs.push_back(train_set[order[i]].z);
                    ys.push_back(train_set[order[i]].label);
                }
                ad::Tape tape;
                auto vars = model::register_params(tape, state, spec.trainable);
                model::BatchResult r = model::forward_batch(tape, state, vars, zs, ys, lp);
                tape.backward(r.loss);
                auto grads = tape.input_gradients();
                adam.step(state, grads, spec.trainable, cfg.grad_clip);

                ep_loss += r.loss.value().at(0);
                ep_cls += r.cls_loss.value().at(0);
                ep_gate += r.gate_entropy.value().at(0);
                for (std::size_t i = 0; i < r.logits.size(); ++i)
                    if (static_cast<int>(argmax(r.logits[i])) == ys[i]) ++ep_hits;
                ++batches;
            }

            // stage-1 warmup boundary: freeze the clustering
            if (spec.stage == 1 && !clusters_fitted && epoch == warmup) {
                fit_clusters(state, train_set, cfg, history);
                clusters_fitted = true;
            }

            EpochRecord rec;
            rec.epoch = ++global_epoch;
            rec.stage = spec.stage;
            rec.loss = ep_loss / std::max<std::size_t>(batches, 1);
            rec.cls_loss = ep_cls / std::max<std::size_t>(batches, 1);
            rec.gate_entropy = ep_gate / std::max<std::size_t>(batches, 1);
            rec.train_acc = static_cast<double>(ep_hits) / static_cast<double>(order.size());
            rec.val_acc = evaluate_accuracy(state, val_set);
            rec.lr = spec.lr;
            history.epochs.push_back(rec);
            if (on_epoch) on_epoch(rec);
        }

        // the freeze contract: untouched groups keep their checksums
        if (spec.stage == 2) {
            history.backbone_checksum_stage2_end = model::group_checksum(state, model::kBackbone);
            if (history.backbone_checksum_stage2_end != backbone_before)
                throw error("train: frozen backbone changed during stage 2");
        }
        if (spec.stage == 3) {
            history.headfc_checksum_stage3_end = model::group_checksum(state, model::kHeadFc);
            if (history.headfc_checksum_stage3_end != headfc_before)
                throw error("train: frozen FC layers changed during stage 3");
            if (model::group_checksum(state, model::kBackbone) != backbone_before)
                throw error("train: frozen backbone changed during stage 3");
        }
    }

    // a config that never reaches stage 2 still needs the cluster experts for
    // downstream evaluation
    if (!clusters_fitted) fit_clusters(state, train_set, cfg, history);
    return history;
}

} // namespace gcmcg::train
