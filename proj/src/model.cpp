#include "gcmcg/model.hpp"
#include "gcmcg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace gcmcg::model {

using ad::Tape;
using ad::Var;

ExpertKind expert_kind_from_string(const std::string& s) {
    if (s == "cnn-gru") return ExpertKind::cnn_gru;
    if (s == "gru") return ExpertKind::gru;
    if (s == "lstm") return ExpertKind::lstm;
    if (s == "bilstm") return ExpertKind::bilstm;
    if (s == "cnn-lstm") return ExpertKind::cnn_lstm;
    throw error("unknown expert kind: " + s);
}

std::string to_string(ExpertKind k) {
    switch (k) {
        case ExpertKind::cnn_gru: return "cnn-gru";
        case ExpertKind::gru: return "gru";
        case ExpertKind::lstm: return "lstm";
        case ExpertKind::bilstm: return "bilstm";
        case ExpertKind::cnn_lstm: return "cnn-lstm";
    }
    throw error("bad expert kind");
}

Param& ModelState::find(const std::string& name) {
    for (Param& p : params)
        if (p.name == name) return p;
    throw error("model: no parameter named " + name);
}

const Param& ModelState::find(const std::string& name) const {
    for (const Param& p : params)
        if (p.name == name) return p;
    throw error("model: no parameter named " + name);
}

bool ModelState::has(const std::string& name) const {
    for (const Param& p : params)
        if (p.name == name) return true;
    return false;
}

std::size_t ModelState::expert_block_count() const {
    return (cfg.use_graph ? 1 : 0) + 1 + cluster_groups.size();
}

// ---- construction ---------------------------------------------------------

namespace {

bool has_conv(ExpertKind k) {
    return k == ExpertKind::cnn_gru || k == ExpertKind::cnn_lstm;
}

bool is_gru(ExpertKind k) { return k == ExpertKind::cnn_gru || k == ExpertKind::gru; }

Tensor init_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = g(rng);
    return t;
}

struct ParamFactory {
    ModelState& state;

    void add(const std::string& name, std::vector<std::size_t> shape, ParamGroup group,
             double scale) {
        Param p;
        p.name = name;
        const std::uint64_t s =
            state.seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL * (++state.rng_state);
        p.value = scale == 0.0 ? Tensor::zeros(shape) : init_tensor(shape, s, scale);
        p.adam_m = Tensor::zeros(shape);
        p.adam_v = Tensor::zeros(shape);
        p.group = group;
        state.params.push_back(std::move(p));
    }

    void add_recurrent(const std::string& prefix, ExpertKind kind, std::size_t in_dim,
                       std::size_t hidden) {
        const double ws = 1.0 / std::sqrt(static_cast<double>(in_dim));
        const double us = 1.0 / std::sqrt(static_cast<double>(hidden));
        auto cell = [&](const std::string& base) {
            const char* gru_names[] = {"Wu", "Uu", "Wr", "Ur", "Wh", "Uh"};
            const char* lstm_names[] = {"Wi", "Ui", "Wf", "Uf", "Wo", "Uo", "Wc", "Uc"};
            const bool gru = is_gru(kind);
            const char** names = gru ? gru_names : lstm_names;
            const std::size_t count = gru ? 6 : 8;
            for (std::size_t i = 0; i < count; ++i) {
                const bool input_side = names[i][0] == 'W';
                add(base + "." + names[i],
                    {hidden, input_side ? in_dim : hidden}, kBackbone,
                    input_side ? ws : us);
            }
        };
        if (kind == ExpertKind::bilstm) {
            cell(prefix + ".fwd");
            cell(prefix + ".bwd");
        } else {
            cell(prefix);
        }
    }

    void add_expert(const std::string& name, std::size_t c_in) {
        const ModelConfig& cfg = state.cfg;
        const std::size_t d = cfg.gat.embed_dim;
        std::size_t rec_in = c_in;
        if (has_conv(cfg.expert_kind)) {
            add("expert." + name + ".conv.W", {d, c_in, cfg.conv_kernel}, kBackbone,
                1.0 / std::sqrt(static_cast<double>(c_in * cfg.conv_kernel)));
            add("expert." + name + ".conv.b", {d}, kBackbone, 0.0);
            rec_in = d;
        }
        add_recurrent("expert." + name, cfg.expert_kind, rec_in, d);
    }

    void add_gate(std::size_t blocks) {
        const ModelConfig& cfg = state.cfg;
        const std::size_t in = blocks * 2 * cfg.gat.embed_dim;
        add("gate.W1", {cfg.gate_hidden, in}, kBackbone,
            1.0 / std::sqrt(static_cast<double>(in)));
        add("gate.b1", {cfg.gate_hidden}, kBackbone, 0.0);
        add("gate.W2", {blocks, cfg.gate_hidden}, kBackbone,
            1.0 / std::sqrt(static_cast<double>(cfg.gate_hidden)));
        add("gate.b2", {blocks}, kBackbone, 0.0);
    }
};

} // namespace

ModelState init_model(const ModelConfig& cfg, const graph::ElectrodeGraph& g,
                      const std::optional<Tensor>& tokenizer_features, std::uint64_t seed) {
    ModelState state;
    state.cfg = cfg;
    state.seed = seed;
    if (cfg.use_graph) {
        g.validate();
        state.electrode_graph = g;
        for (std::size_t i = 0; i < g.node_count; ++i) {
            const std::ptrdiff_t ch = g.electrode_map[i];
            if (g.mask[i] && (ch < 0 || static_cast<std::size_t>(ch) >= cfg.channels))
                throw error("model: electrode map points outside the dataset channels");
        }
    }

    ParamFactory f{state};
    const std::size_t d = cfg.gat.embed_dim;

    if (cfg.use_graph) {
        if (tokenizer_features) {
            if (tokenizer_features->rank() != 2 ||
                tokenizer_features->dim(0) != g.node_count ||
                tokenizer_features->dim(1) != cfg.gat.token_dim)
                throw error("model: tokenizer features " + tokenizer_features->shape_str() +
                            " do not match graph nodes " + std::to_string(g.node_count) +
                            " x token_dim " + std::to_string(cfg.gat.token_dim));
            Param p;
            p.name = "tokenizer";
            p.value = *tokenizer_features;
            p.adam_m = Tensor::zeros(p.value.shape());
            p.adam_v = Tensor::zeros(p.value.shape());
            p.group = kBackbone;
            state.params.push_back(std::move(p));
            ++state.rng_state;
        } else {
            graph::TokenizerState tok = graph::tokenizer_init(g, cfg.gat.token_dim, seed);
            Param p;
            p.name = "tokenizer";
            p.value = tok.features;
            p.adam_m = Tensor::zeros(p.value.shape());
            p.adam_v = Tensor::zeros(p.value.shape());
            p.group = kBackbone;
            state.params.push_back(std::move(p));
            ++state.rng_state;
        }
        for (const auto& [name, shape] : graph::gat_param_shapes(cfg.gat))
            f.add(name, shape, kBackbone, 1.0 / std::sqrt(static_cast<double>(shape[0])));
        f.add_expert("spatial", d);
    }
    f.add_expert("temporal", cfg.channels + (cfg.use_graph ? d : 0));
    f.add_gate(state.expert_block_count());

    f.add("head.W1", {cfg.head_hidden, 2 * d}, kHeadFc,
          1.0 / std::sqrt(static_cast<double>(2 * d)));
    f.add("head.b1", {cfg.head_hidden}, kHeadFc, 0.0);
    f.add("head.W2", {cfg.head_hidden, cfg.head_hidden}, kHeadFc,
          1.0 / std::sqrt(static_cast<double>(cfg.head_hidden)));
    f.add("head.b2", {cfg.head_hidden}, kHeadFc, 0.0);
    f.add("head.W", {cfg.classes, cfg.head_hidden}, kHeadFc,
          1.0 / std::sqrt(static_cast<double>(cfg.head_hidden)));
    f.add("head.b", {cfg.classes}, kHeadFc, 0.0);
    f.add("head.log_gamma", {cfg.classes}, kGamma, 0.0);
    return state;
}

void add_cluster_experts(ModelState& state,
                         const std::vector<std::vector<std::size_t>>& channel_groups,
                         const std::vector<std::size_t>& labels) {
    if (state.clusters_ready) throw error("model: cluster experts already installed");
    for (const auto& grp : channel_groups) {
        if (grp.empty()) throw error("model: empty cluster group");
        for (std::size_t ch : grp)
            if (ch >= state.cfg.channels)
                throw error("model: cluster channel out of range");
    }
    state.cluster_groups = channel_groups;
    state.cluster_labels = labels;
    state.clusters_ready = true;

    ParamFactory f{state};
    for (std::size_t k = 0; k < channel_groups.size(); ++k)
        f.add_expert("c" + std::to_string(k), state.cfg.channels);

    // the gate is sized by the expert count; rebuild it for the final bank
    state.params.erase(std::remove_if(state.params.begin(), state.params.end(),
                                      [](const Param& p) {
                                          return p.name.rfind("gate.", 0) == 0;
                                      }),
                       state.params.end());
    f.add_gate(state.expert_block_count());
}

// ---- forward --------------------------------------------------------------

std::map<std::string, Var> register_params(Tape& tape, const ModelState& state,
                                           const std::vector<bool>& trainable_groups) {
    std::map<std::string, Var> vars;
    for (const Param& p : state.params) {
        const bool rg = p.group < trainable_groups.size() && trainable_groups[p.group];
        vars[p.name] = tape.input(p.name, p.value, rg);
    }
    return vars;
}

Var gru_step(const Var& z, const Var& h_prev, const Var& Wu, const Var& Uu, const Var& Wr,
             const Var& Ur, const Var& Wh, const Var& Uh) {
    Var u = ad::sigmoid(ad::add(ad::matvec(Wu, z), ad::matvec(Uu, h_prev)));
    Var r = ad::sigmoid(ad::add(ad::matvec(Wr, z), ad::matvec(Ur, h_prev)));
    Var cand = ad::tanh_(ad::add(ad::matvec(Wh, z), ad::matvec(Uh, ad::mul(r, h_prev))));
    Var keep = ad::mul(ad::add_const(ad::scale_const(u, -1.0), 1.0), h_prev);
    return ad::add(keep, ad::mul(u, cand));
}

namespace {

// One pass of the recurrent cell over the rows of seq; returns the final
// hidden state and optionally every hidden state in visit order.
Var recurrent_pass(Tape& tape, std::map<std::string, Var>& vars, const std::string& base,
                   bool gru, const Var& seq, bool backward_direction,
                   std::vector<Var>* states_out) {
    const std::size_t steps = seq.value().dim(0);
    const std::size_t hidden = vars.at(base + (gru ? ".Wu" : ".Wi")).value().dim(0);
    Var h = tape.constant(Tensor::zeros({hidden}));
    Var c = gru ? Var() : tape.constant(Tensor::zeros({hidden}));
    for (std::size_t step = 0; step < steps; ++step) {
        const std::size_t t = backward_direction ? steps - 1 - step : step;
        Var z = ad::row_vec(seq, t);
        if (gru) {
            h = gru_step(z, h, vars.at(base + ".Wu"), vars.at(base + ".Uu"),
                         vars.at(base + ".Wr"), vars.at(base + ".Ur"), vars.at(base + ".Wh"),
                         vars.at(base + ".Uh"));
        } else {
            Var i = ad::sigmoid(ad::add(ad::matvec(vars.at(base + ".Wi"), z),
                                        ad::matvec(vars.at(base + ".Ui"), h)));
            Var fgate = ad::sigmoid(ad::add(ad::matvec(vars.at(base + ".Wf"), z),
                                            ad::matvec(vars.at(base + ".Uf"), h)));
            Var o = ad::sigmoid(ad::add(ad::matvec(vars.at(base + ".Wo"), z),
                                        ad::matvec(vars.at(base + ".Uo"), h)));
            Var cand = ad::tanh_(ad::add(ad::matvec(vars.at(base + ".Wc"), z),
                                         ad::matvec(vars.at(base + ".Uc"), h)));
            c = ad::add(ad::mul(fgate, c), ad::mul(i, cand));
            h = ad::mul(o, ad::tanh_(c));
        }
        if (states_out) states_out->push_back(h);
    }
    return h;
}

// v_k in R^{2D}: final hidden state || temporal mean of hidden states for the
// unidirectional cells, final forward || final backward for bilstm.
Var expert_forward(Tape& tape, std::map<std::string, Var>& vars, const ModelState& state,
                   const std::string& name, const Var& input_cs) {
    const ModelConfig& cfg = state.cfg;
    const std::string prefix = "expert." + name;
    Var seq;
    if (has_conv(cfg.expert_kind)) {
        Var fm = ad::relu(ad::conv1d(input_cs, vars.at(prefix + ".conv.W"),
                                     vars.at(prefix + ".conv.b"), cfg.conv_stride));
        seq = ad::transpose(fm); // (T, D)
    } else {
        seq = ad::transpose(input_cs); // (L, c_in)
    }

    if (cfg.expert_kind == ExpertKind::bilstm) {
        Var hf = recurrent_pass(tape, vars, prefix + ".fwd", false, seq, false, nullptr);
        Var hb = recurrent_pass(tape, vars, prefix + ".bwd", false, seq, true, nullptr);
        return ad::concat1d({hf, hb});
    }

    std::vector<Var> states;
    Var h = recurrent_pass(tape, vars, prefix, is_gru(cfg.expert_kind), seq, false, &states);
    Var mean_state = ad::mean_rows(ad::stack_rows(states));
    return ad::concat1d({h, mean_state});
}

Var lws_logits(std::map<std::string, Var>& vars, const Var& fused) {
    Var h1 = ad::relu(ad::add(ad::matvec(vars.at("head.W1"), fused), vars.at("head.b1")));
    Var h2 = ad::relu(ad::add(ad::matvec(vars.at("head.W2"), h1), vars.at("head.b2")));
    Var raw = ad::matvec(vars.at("head.W"), h2);
    Var gamma = ad::exp_(vars.at("head.log_gamma"));
    return ad::add(ad::mul(gamma, raw), vars.at("head.b"));
}

// Shared per-batch graph features and the per-trial expert block assembly.
struct GraphShared {
    Var summary;
    Var v_spatial;
    bool valid = false;
};

GraphShared compute_graph_shared(Tape& tape, const ModelState& state,
                                 std::map<std::string, Var>& vars) {
    GraphShared out;
    const ModelConfig& cfg = state.cfg;
    if (!cfg.use_graph) return out;
    const auto& g = state.electrode_graph;
    Tensor mask_rows({g.node_count, cfg.gat.token_dim});
    for (std::size_t i = 0; i < g.node_count; ++i)
        for (std::size_t f = 0; f < cfg.gat.token_dim; ++f)
            mask_rows.at(i, f) = g.mask[i] ? 1.0 : 0.0;
    Var theta0 = ad::mul(vars.at("tokenizer"), tape.constant(mask_rows));

    std::vector<graph::GatLayerVars> gat_vars(cfg.gat.layers);
    for (std::size_t t = 0; t < cfg.gat.layers; ++t) {
        const std::size_t heads = (t + 1 == cfg.gat.layers) ? 1 : cfg.gat.heads;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::string base = "gat.l" + std::to_string(t) + ".h" + std::to_string(h);
            gat_vars[t].W.push_back(vars.at(base + ".W"));
            gat_vars[t].a.push_back(vars.at(base + ".a"));
        }
    }
    Var theta_prime = graph::gat_forward(tape, theta0, g, gat_vars, cfg.gat);

    const auto unmasked = g.unmasked_nodes();
    Tensor w({g.node_count});
    for (std::size_t i : unmasked) w.at(i) = 1.0 / static_cast<double>(unmasked.size());
    out.summary = ad::vecmat(tape.constant(w), theta_prime);
    out.v_spatial = expert_forward(tape, vars, state, "spatial", ad::transpose(theta_prime));
    out.valid = true;
    return out;
}

std::vector<Var> trial_blocks(Tape& tape, const ModelState& state,
                              std::map<std::string, Var>& vars, const GraphShared& shared,
                              const Var& zc, const std::vector<Tensor>& cluster_masks) {
    std::vector<Var> blocks;
    if (state.cfg.use_graph) blocks.push_back(shared.v_spatial);
    Var temporal_input =
        state.cfg.use_graph
            ? ad::concat_rows(zc, ad::tile_cols(shared.summary, zc.value().dim(1)))
            : zc;
    blocks.push_back(expert_forward(tape, vars, state, "temporal", temporal_input));
    for (std::size_t k = 0; k < state.cluster_groups.size(); ++k) {
        Var masked = ad::mul(zc, tape.constant(cluster_masks[k]));
        blocks.push_back(expert_forward(tape, vars, state, "c" + std::to_string(k), masked));
    }
    return blocks;
}

std::vector<Tensor> build_cluster_masks(const ModelState& state, std::size_t cols) {
    std::vector<Tensor> masks;
    for (const auto& grp : state.cluster_groups) {
        Tensor m({state.cfg.channels, cols});
        for (std::size_t ch : grp)
            for (std::size_t j = 0; j < cols; ++j) m.at(ch, j) = 1.0;
        masks.push_back(std::move(m));
    }
    return masks;
}

Var sample_loss(Tape& tape, const Var& probs, int label, const LossParams& lp) {
    const std::size_t q = probs.value().dim(0);
    if (label < 0 || static_cast<std::size_t>(label) >= q)
        throw error("model: label " + std::to_string(label) + " outside [0, Q)");
    Var py = ad::gather1d(probs, {static_cast<std::size_t>(label)});
    Var log_py = ad::log_clamped(py, 1e-12);
    const double w = lp.class_weights.empty()
                         ? 1.0
                         : lp.class_weights.at(static_cast<std::size_t>(label));
    if (lp.kind == LossKind::cross_entropy) return ad::scale_const(ad::sum(log_py), -w);
    Var one_minus = ad::add_const(ad::scale_const(py, -1.0), 1.0);
    Var focal = ad::mul(ad::pow_const(one_minus, lp.focal_gamma), log_py);
    (void)tape;
    return ad::scale_const(ad::sum(focal), -w);
}

} // namespace

Var gate_scores(std::map<std::string, Var>& vars, const Var& vhat) {
    Var g1 = ad::exp_(ad::clamp(
        ad::tanh_(ad::add(ad::matvec(vars.at("gate.W1"), vhat), vars.at("gate.b1"))), -30.0,
        30.0));
    Var gp = ad::exp_(ad::clamp(
        ad::tanh_(ad::add(ad::matvec(vars.at("gate.W2"), g1), vars.at("gate.b2"))), -30.0,
        30.0));
    const std::size_t n = gp.value().dim(0);
    Var denom = ad::add_const(ad::sum(gp), 1.0);
    return ad::div(gp, ad::broadcast_scalar(denom, n));
}

Var gate_entropy_of(const std::vector<Var>& alphas) {
    if (alphas.empty()) throw error("gate_entropy_of: empty batch");
    Var acc = ad::neg(ad::sum(ad::mul(alphas[0], ad::log_offset(alphas[0], 1e-8))));
    for (std::size_t b = 1; b < alphas.size(); ++b)
        acc = ad::add(acc, ad::neg(ad::sum(ad::mul(alphas[b], ad::log_offset(alphas[b], 1e-8)))));
    return ad::scale_const(acc, 1.0 / static_cast<double>(alphas.size()));
}

BatchResult forward_batch(Tape& tape, const ModelState& state,
                          std::map<std::string, Var>& vars,
                          const std::vector<const linalg::Mat*>& trials,
                          const std::vector<int>& labels, const LossParams& lp) {
    if (trials.empty() || trials.size() != labels.size())
        throw error("forward_batch: empty batch or label count mismatch");
    const ModelConfig& cfg = state.cfg;
    const std::size_t expected_blocks = state.expert_block_count();
    if (vars.at("gate.W2").value().dim(0) != expected_blocks)
        throw error("forward_batch: gate sized for " +
                    std::to_string(vars.at("gate.W2").value().dim(0)) + " experts, bank has " +
                    std::to_string(expected_blocks));

    GraphShared shared = compute_graph_shared(tape, state, vars);
    std::vector<Tensor> cluster_masks = build_cluster_masks(state, trials[0]->cols);

    BatchResult out;
    std::vector<Var> losses, alpha_vars;
    for (std::size_t b = 0; b < trials.size(); ++b) {
        const linalg::Mat& z = *trials[b];
        if (z.rows != cfg.channels) throw error("forward_batch: trial has wrong channel count");
        Var zc = tape.constant(Tensor::from_matrix(z));

        std::vector<Var> blocks = trial_blocks(tape, state, vars, shared, zc, cluster_masks);
        Var vhat = ad::concat1d(blocks);
        Var alpha = gate_scores(vars, vhat);
        Var fused = ad::vecmat(alpha, ad::stack_rows(blocks));
        Var logits = lws_logits(vars, fused);
        Var probs = ad::softmax(logits);

        losses.push_back(sample_loss(tape, probs, labels[b], lp));
        alpha_vars.push_back(alpha);
        out.logits.push_back(logits.value());
        out.alphas.push_back(alpha.value());
    }

    Var cls = losses[0];
    for (std::size_t b = 1; b < losses.size(); ++b) cls = ad::add(cls, losses[b]);
    cls = ad::scale_const(cls, 1.0 / static_cast<double>(losses.size()));

    out.cls_loss = cls;
    out.gate_entropy = gate_entropy_of(alpha_vars);
    out.loss = ad::add(cls, ad::scale_const(out.gate_entropy, cfg.lambda_gate));
    return out;
}

std::vector<Tensor> expert_values(const ModelState& state, const linalg::Mat& z) {
    Tape tape;
    auto vars = register_params(tape, state, {false, false, false});
    GraphShared shared = compute_graph_shared(tape, state, vars);
    std::vector<Tensor> masks = build_cluster_masks(state, z.cols);
    Var zc = tape.constant(Tensor::from_matrix(z));
    std::vector<Var> blocks = trial_blocks(tape, state, vars, shared, zc, masks);
    std::vector<Tensor> out;
    for (const Var& b : blocks) out.push_back(b.value());
    return out;
}

Prediction predict(const ModelState& state, const linalg::Mat& z) {
    Tape tape;
    auto vars = register_params(tape, state, {false, false, false});
    LossParams lp;
    BatchResult r = forward_batch(tape, state, vars, {&z}, {0}, lp);
    Prediction p;
    p.logits = r.logits[0];
    p.alpha = r.alphas[0];
    Tensor probs({p.logits.dim(0)});
    double mx = p.logits.at(0);
    for (std::size_t i = 1; i < p.logits.size(); ++i) mx = std::max(mx, p.logits.at(i));
    double zsum = 0.0;
    for (std::size_t i = 0; i < p.logits.size(); ++i) {
        probs.at(i) = std::exp(p.logits.at(i) - mx);
        zsum += probs.at(i);
    }
    for (std::size_t i = 0; i < probs.size(); ++i) probs.at(i) /= zsum;
    p.probs = probs;
    return p;
}

Tensor graph_embedding(const ModelState& state) {
    if (!state.cfg.use_graph) throw error("graph_embedding: model runs without a graph");
    Tape tape;
    auto vars = register_params(tape, state, {false, false, false});
    const auto& g = state.electrode_graph;
    Tensor mask_rows({g.node_count, state.cfg.gat.token_dim});
    for (std::size_t i = 0; i < g.node_count; ++i)
        for (std::size_t f = 0; f < state.cfg.gat.token_dim; ++f)
            mask_rows.at(i, f) = g.mask[i] ? 1.0 : 0.0;
    Var theta0 = ad::mul(vars.at("tokenizer"), tape.constant(mask_rows));
    std::vector<graph::GatLayerVars> gat_vars(state.cfg.gat.layers);
    for (std::size_t t = 0; t < state.cfg.gat.layers; ++t) {
        const std::size_t heads = (t + 1 == state.cfg.gat.layers) ? 1 : state.cfg.gat.heads;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::string base = "gat.l" + std::to_string(t) + ".h" + std::to_string(h);
            gat_vars[t].W.push_back(vars.at(base + ".W"));
            gat_vars[t].a.push_back(vars.at(base + ".a"));
        }
    }
    return graph::gat_forward(tape, theta0, g, gat_vars, state.cfg.gat).value();
}

std::uint64_t group_checksum(const ModelState& state, ParamGroup group) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a
    for (const Param& p : state.params) {
        if (p.group != group) continue;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            std::uint64_t bits;
            const double v = p.value.at(i);
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xff;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

// ---- serialization ----------------------------------------------------------

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(buf, bits);
}
void put_str(std::string& buf, const std::string& s) {
    put_u16(buf, static_cast<std::uint16_t>(s.size()));
    buf += s;
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw error("model checkpoint: truncated");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i)
            v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const std::uint16_t n = u16();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_tensor(std::string& buf, const Tensor& t) {
    buf.push_back(static_cast<char>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) put_u32(buf, static_cast<std::uint32_t>(t.dim(i)));
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(buf, t.at(i));
}

Tensor read_tensor(Reader& r) {
    r.need(1);
    const int rank = static_cast<unsigned char>(r.buf[r.pos++]);
    if (rank < 1 || rank > 3) throw error("model checkpoint: bad tensor rank");
    std::vector<std::size_t> shape;
    for (int i = 0; i < rank; ++i) shape.push_back(r.u32());
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = r.f64();
    return t;
}

} // namespace

void save_model(const ModelState& state, const std::string& path) {
    std::string buf = "GCMCMDL";
    put_u32(buf, 1); // version
    const ModelConfig& c = state.cfg;
    put_u32(buf, static_cast<std::uint32_t>(c.gat.layers));
    put_u32(buf, static_cast<std::uint32_t>(c.gat.heads));
    put_u32(buf, static_cast<std::uint32_t>(c.gat.token_dim));
    put_u32(buf, static_cast<std::uint32_t>(c.gat.embed_dim));
    put_f64(buf, c.gat.leaky_slope);
    put_u32(buf, static_cast<std::uint32_t>(c.channels));
    put_u32(buf, static_cast<std::uint32_t>(c.classes));
    put_u32(buf, static_cast<std::uint32_t>(c.conv_kernel));
    put_u32(buf, static_cast<std::uint32_t>(c.conv_stride));
    put_u32(buf, static_cast<std::uint32_t>(c.gate_hidden));
    put_u32(buf, static_cast<std::uint32_t>(c.head_hidden));
    put_f64(buf, c.lambda_gate);
    put_str(buf, to_string(c.expert_kind));
    buf.push_back(c.use_graph ? 1 : 0);
    buf.push_back(c.use_cluster ? 1 : 0);

    // electrode graph
    const auto& g = state.electrode_graph;
    put_u32(buf, static_cast<std::uint32_t>(g.node_count));
    for (std::size_t i = 0; i < g.node_count; ++i) {
        put_u32(buf, static_cast<std::uint32_t>(g.adjacency[i].size()));
        for (std::size_t j : g.adjacency[i]) put_u32(buf, static_cast<std::uint32_t>(j));
    }
    for (std::size_t i = 0; i < g.node_count; ++i)
        put_u32(buf, static_cast<std::uint32_t>(g.electrode_map[i] + 1)); // 0 = unmapped
    for (std::size_t i = 0; i < g.node_count; ++i) buf.push_back(static_cast<char>(g.mask[i]));

    // cluster assignment
    buf.push_back(state.clusters_ready ? 1 : 0);
    put_u32(buf, static_cast<std::uint32_t>(state.cluster_groups.size()));
    for (const auto& grp : state.cluster_groups) {
        put_u32(buf, static_cast<std::uint32_t>(grp.size()));
        for (std::size_t ch : grp) put_u32(buf, static_cast<std::uint32_t>(ch));
    }
    put_u32(buf, static_cast<std::uint32_t>(state.cluster_labels.size()));
    for (std::size_t l : state.cluster_labels) put_u32(buf, static_cast<std::uint32_t>(l));

    buf.push_back(static_cast<char>(state.stage));
    put_u64(buf, state.seed);
    put_u64(buf, state.rng_state);

    // parameter table
    put_u32(buf, static_cast<std::uint32_t>(state.params.size()));
    for (const Param& p : state.params) {
        put_str(buf, p.name);
        buf.push_back(static_cast<char>(p.group));
        put_tensor(buf, p.value);
        put_tensor(buf, p.adam_m);
        put_tensor(buf, p.adam_v);
    }

    std::uint64_t sum = 0;
    for (unsigned char ch : buf) sum += ch;
    put_u64(buf, sum);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("save_model: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

ModelState load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("load_model: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 7 + 4 + 8) throw error("load_model: truncated file");
    if (buf.compare(0, 7, "GCMCMDL") != 0) throw error("load_model: bad magic bytes");

    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[buf.size() - 8 + i]))
                  << (8 * i);
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i + 8 < buf.size(); ++i) sum += static_cast<unsigned char>(buf[i]);
    if (sum != stored) throw error("load_model: checksum failure");

    Reader r(buf);
    r.pos = 7;
    const std::uint32_t version = r.u32();
    if (version != 1) throw error("load_model: unsupported version " + std::to_string(version));

    ModelState state;
    ModelConfig& c = state.cfg;
    c.gat.layers = r.u32();
    c.gat.heads = r.u32();
    c.gat.token_dim = r.u32();
    c.gat.embed_dim = r.u32();
    c.gat.leaky_slope = r.f64();
    c.channels = r.u32();
    c.classes = r.u32();
    c.conv_kernel = r.u32();
    c.conv_stride = r.u32();
    c.gate_hidden = r.u32();
    c.head_hidden = r.u32();
    c.lambda_gate = r.f64();
    c.expert_kind = expert_kind_from_string(r.str());
    r.need(2);
    c.use_graph = buf[r.pos++] != 0;
    c.use_cluster = buf[r.pos++] != 0;

    auto& g = state.electrode_graph;
    g.node_count = r.u32();
    g.adjacency.assign(g.node_count, {});
    for (std::size_t i = 0; i < g.node_count; ++i) {
        const std::uint32_t deg = r.u32();
        for (std::uint32_t k = 0; k < deg; ++k) g.adjacency[i].push_back(r.u32());
    }
    g.electrode_map.assign(g.node_count, -1);
    for (std::size_t i = 0; i < g.node_count; ++i)
        g.electrode_map[i] = static_cast<std::ptrdiff_t>(r.u32()) - 1;
    g.mask.assign(g.node_count, 0);
    for (std::size_t i = 0; i < g.node_count; ++i) {
        r.need(1);
        g.mask[i] = static_cast<std::uint8_t>(buf[r.pos++]);
    }

    r.need(1);
    state.clusters_ready = buf[r.pos++] != 0;
    const std::uint32_t groups = r.u32();
    for (std::uint32_t k = 0; k < groups; ++k) {
        std::vector<std::size_t> grp(r.u32());
        for (std::size_t& ch : grp) ch = r.u32();
        state.cluster_groups.push_back(std::move(grp));
    }
    std::vector<std::size_t> labels(r.u32());
    for (std::size_t& l : labels) l = r.u32();
    state.cluster_labels = std::move(labels);

    r.need(1);
    state.stage = static_cast<std::uint8_t>(buf[r.pos++]);
    state.seed = r.u64();
    state.rng_state = r.u64();

    const std::uint32_t nparams = r.u32();
    for (std::uint32_t i = 0; i < nparams; ++i) {
        Param p;
        p.name = r.str();
        r.need(1);
        p.group = static_cast<ParamGroup>(buf[r.pos++]);
        p.value = read_tensor(r);
        p.adam_m = read_tensor(r);
        p.adam_v = read_tensor(r);
        state.params.push_back(std::move(p));
    }
    return state;
}

} // namespace gcmcg::model
