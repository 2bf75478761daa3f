#pragma once

#include "gcmcg/model.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace gcmcg::train {

struct TrainConfig {
    int epochs_stage1 = 18;
    int epochs_stage2 = 8;
    int epochs_stage3 = 4;
    std::size_t batch = 32;
    double lr = 1e-3;        // stages 1-2
    double lr_stage3 = 1e-2; // gamma only
    double grad_clip = 5.0;  // global norm
    double lambda_gate = 0.01;
    double focal_gamma = 2.0;
    model::LossKind stage3_loss = model::LossKind::focal;
    int cluster_warmup = 5; // stage-1 epochs before the clustering is frozen
    cluster::SpectralOptions spectral;
    std::uint64_t seed = 1;
};

// N_q counts and a progress fraction rho in [0,1]:
// p_q = (1 - rho) * n_q / N + rho / Q.
std::vector<double> pbs_probabilities(const std::vector<std::size_t>& class_counts, double rho);

// Draws classes from pbs probabilities, then uniformly within the class.
class ProgressiveSampler {
public:
    ProgressiveSampler(const std::vector<int>& labels, std::size_t classes, std::uint64_t seed);
    void set_rho(double rho);
    std::size_t draw(); // index into the label vector
    const std::vector<double>& probabilities() const { return probs_; }

private:
    std::vector<std::vector<std::size_t>> by_class_;
    std::vector<std::size_t> counts_;
    std::vector<double> probs_;
    std::mt19937_64 rng_;
};

double ce_loss(const std::vector<double>& onehot, const std::vector<double>& probs);
double focal_loss(const std::vector<double>& onehot, const std::vector<double>& probs,
                  double gamma, const std::vector<double>& class_weights);

struct EpochRecord {
    int epoch = 0; // global epoch index, 1-based
    int stage = 1;
    double loss = 0.0;
    double cls_loss = 0.0;
    double gate_entropy = 0.0;
    double train_acc = 0.0;
    double val_acc = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;
};

struct History {
    std::vector<EpochRecord> epochs;
    std::uint64_t backbone_checksum_stage2_start = 0;
    std::uint64_t backbone_checksum_stage2_end = 0;
    std::uint64_t headfc_checksum_stage3_start = 0;
    std::uint64_t headfc_checksum_stage3_end = 0;
    std::size_t cluster_count = 0;
    double cluster_warmup_seconds = 0.0;

    void write_csv(const std::string& path) const;
};

// Standardized trials ready for the model.
struct TrialView {
    const linalg::Mat* z = nullptr;
    int label = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Three-stage strategy: stage 1 trains everything under CE with a uniform
// shuffler (clusters fitted and frozen after the warmup epochs), stage 2
// freezes the backbone and tunes the head FC layers under focal loss with
// progressively balanced sampling, stage 3 freezes the FC layers and tunes
// only the per-class scaling.
History run_training(model::ModelState& state, const std::vector<TrialView>& train_set,
              const std::vector<TrialView>& val_set, const TrainConfig& cfg,
              const EpochCallback& on_epoch = nullptr);

} // namespace gcmcg::train
