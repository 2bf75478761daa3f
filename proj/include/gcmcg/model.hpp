#pragma once

#include "gcmcg/autodiff.hpp"
#include "gcmcg/cluster.hpp"
#include "gcmcg/graph.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gcmcg::model {

enum class ExpertKind { cnn_gru, gru, lstm, bilstm, cnn_lstm };

ExpertKind expert_kind_from_string(const std::string& s);
std::string to_string(ExpertKind k);

struct ModelConfig {
    graph::GatConfig gat;        // token_dim F, embed_dim D, layers, heads
    std::size_t channels = 16;   // dataset channels C
    std::size_t classes = 3;     // Q
    std::size_t conv_kernel = 7;
    std::size_t conv_stride = 2;
    std::size_t gate_hidden = 64;
    std::size_t head_hidden = 64;
    double lambda_gate = 0.01;
    ExpertKind expert_kind = ExpertKind::cnn_gru;
    bool use_graph = true;   // ablation: off routes clustering to signal stats
    bool use_cluster = true; // ablation: off keeps only global experts
};

// Parameter groups drive the stage freezing contract.
enum ParamGroup : std::uint8_t { kBackbone = 0, kHeadFc = 1, kGamma = 2 };

struct Param {
    std::string name;
    Tensor value;
    Tensor adam_m, adam_v;
    ParamGroup group = kBackbone;
};

struct ModelState {
    ModelConfig cfg;
    graph::ElectrodeGraph electrode_graph; // meaningful when cfg.use_graph
    std::vector<Param> params;             // insertion-ordered, unique names
    std::vector<std::vector<std::size_t>> cluster_groups; // dataset channels per expert
    std::vector<std::size_t> cluster_labels;              // per unmasked node
    bool clusters_ready = false;
    std::uint8_t stage = 0;
    std::uint64_t seed = 0;
    std::uint64_t rng_state = 0;

    Param& find(const std::string& name);
    const Param& find(const std::string& name) const;
    bool has(const std::string& name) const;
    std::size_t expert_block_count() const; // spatial? + temporal + K
};

// Fresh model with tokenizer, GAT, spatial and temporal experts, gate sized
// for the pre-clustering expert set, LWS head.
ModelState init_model(const ModelConfig& cfg, const graph::ElectrodeGraph& g,
                      const std::optional<Tensor>& tokenizer_features, std::uint64_t seed);

// Installs the frozen cluster assignment: creates the K cluster experts and
// resizes the gate for the final expert count.
void add_cluster_experts(ModelState& state,
                         const std::vector<std::vector<std::size_t>>& channel_groups,
                         const std::vector<std::size_t>& labels);

enum class LossKind { cross_entropy, focal };

struct LossParams {
    LossKind kind = LossKind::cross_entropy;
    double focal_gamma = 2.0;
    std::vector<double> class_weights; // empty = unit weights
};

struct BatchResult {
    ad::Var loss;         // cls mean + lambda_gate * gate entropy
    ad::Var cls_loss;     // mean classification loss
    ad::Var gate_entropy; // Eq. 10 value
    std::vector<Tensor> logits; // per sample
    std::vector<Tensor> alphas; // per sample gate scores
};

// Registers every parameter on the tape (requires_grad per group flags) and
// runs the full forward over a batch of standardized trials.
std::map<std::string, ad::Var> register_params(ad::Tape& tape, const ModelState& state,
                                               const std::vector<bool>& trainable_groups);

BatchResult forward_batch(ad::Tape& tape, const ModelState& state,
                          std::map<std::string, ad::Var>& vars,
                          const std::vector<const linalg::Mat*>& trials,
                          const std::vector<int>& labels, const LossParams& loss);

// Single GRU step without biases: u = sig(Wu z + Uu h), r = sig(Wr z + Ur h),
// cand = tanh(Wh z + Uh (r.h)), out = (1-u).h + u.cand.
ad::Var gru_step(const ad::Var& z, const ad::Var& h_prev, const ad::Var& Wu, const ad::Var& Uu,
                 const ad::Var& Wr, const ad::Var& Ur, const ad::Var& Wh, const ad::Var& Uh);

// Gate scores alpha = g' / (1 + sum g') with g' from the exp-wrapped layers.
ad::Var gate_scores(std::map<std::string, ad::Var>& vars, const ad::Var& vhat);

// Mean over the batch of -sum_i alpha_i ln(alpha_i + 1e-8).
ad::Var gate_entropy_of(const std::vector<ad::Var>& alphas);

struct Prediction {
    Tensor logits;
    Tensor probs;
    Tensor alpha;
};

Prediction predict(const ModelState& state, const linalg::Mat& z);

// Per-expert feature vectors for one trial, in gate order; introspection for
// reports and tests.
std::vector<Tensor> expert_values(const ModelState& state, const linalg::Mat& z);

// Graph embedding used for clustering and the spatial branch; forward-only.
Tensor graph_embedding(const ModelState& state);

std::uint64_t group_checksum(const ModelState& state, ParamGroup group);

void save_model(const ModelState& state, const std::string& path);
ModelState load_model(const std::string& path);

} // namespace gcmcg::model
