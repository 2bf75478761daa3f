#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gcmcg/model.hpp"

#include <cmath>
#include <random>

using namespace gcmcg;
using namespace gcmcg::model;
using ad::Tape;
using ad::Var;
using linalg::Mat;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape, double s = 0.5) {
    std::normal_distribution<double> g(0.0, s);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = g(rng);
    return t;
}

Mat random_mat(std::mt19937_64& rng, std::size_t r, std::size_t c, double s = 1.0) {
    std::normal_distribution<double> g(0.0, s);
    Mat m(r, c);
    for (double& v : m.a) v = g(rng);
    return m;
}

ModelConfig toy_config(std::size_t channels = 6, std::size_t classes = 3) {
    ModelConfig cfg;
    cfg.gat.layers = 2;
    cfg.gat.heads = 2;
    cfg.gat.token_dim = 4;
    cfg.gat.embed_dim = 4;
    cfg.channels = channels;
    cfg.classes = classes;
    cfg.conv_kernel = 3;
    cfg.conv_stride = 2;
    cfg.gate_hidden = 8;
    cfg.head_hidden = 8;
    return cfg;
}

ModelState toy_model(const ModelConfig& cfg, std::uint64_t seed,
                     const std::vector<std::vector<std::size_t>>& groups = {}) {
    graph::ElectrodeGraph g;
    if (cfg.use_graph) {
        std::vector<std::vector<std::size_t>> layout;
        if (!groups.empty()) {
            layout = groups;
        } else {
            // pairs of channels as graph cliques
            for (std::size_t c = 0; c + 1 < cfg.channels; c += 2)
                layout.push_back({c, c + 1});
        }
        g = graph::grouped_graph(cfg.channels, layout);
    }
    ModelState state = init_model(cfg, g, std::nullopt, seed);
    if (!groups.empty()) {
        std::vector<std::size_t> labels;
        for (std::size_t k = 0; k < groups.size(); ++k)
            for (std::size_t i = 0; i < groups[k].size(); ++i) labels.push_back(k);
        add_cluster_experts(state, groups, labels);
    }
    return state;
}

} // namespace

TEST_CASE("gru step with zero params halves the previous state") {
    std::mt19937_64 rng(1);
    Tape tape;
    const std::size_t d = 4;
    Tensor h0 = random_tensor(rng, {d});
    Var h = tape.constant(h0);
    Var z = tape.constant(Tensor::zeros({d}));
    Var zero = tape.constant(Tensor::zeros({d, d}));
    Var out = gru_step(z, h, zero, zero, zero, zero, zero, zero);
    for (std::size_t i = 0; i < d; ++i)
        CHECK(out.value().at(i) == doctest::Approx(0.5 * h0.at(i)).epsilon(1e-15));
}

TEST_CASE("gru step keeps states inside [-1, 1]") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        Tape tape;
        const std::size_t d = 3;
        Tensor h0({d});
        for (std::size_t i = 0; i < d; ++i) h0.at(i) = u(rng);
        Var out = gru_step(tape.constant(random_tensor(rng, {d}, 2.0)), tape.constant(h0),
                           tape.constant(random_tensor(rng, {d, d}, 2.0)),
                           tape.constant(random_tensor(rng, {d, d}, 2.0)),
                           tape.constant(random_tensor(rng, {d, d}, 2.0)),
                           tape.constant(random_tensor(rng, {d, d}, 2.0)),
                           tape.constant(random_tensor(rng, {d, d}, 2.0)),
                           tape.constant(random_tensor(rng, {d, d}, 2.0)));
        for (std::size_t i = 0; i < d; ++i) {
            CHECK(out.value().at(i) >= -1.0);
            CHECK(out.value().at(i) <= 1.0);
        }
    }
}

TEST_CASE("gru step matches an independent scalar-loop oracle") {
    std::mt19937_64 rng(3);
    const std::size_t d = 5, in = 4;
    Tensor Wu = random_tensor(rng, {d, in}), Uu = random_tensor(rng, {d, d});
    Tensor Wr = random_tensor(rng, {d, in}), Ur = random_tensor(rng, {d, d});
    Tensor Wh = random_tensor(rng, {d, in}), Uh = random_tensor(rng, {d, d});
    Tensor z = random_tensor(rng, {in}), h = random_tensor(rng, {d});

    Tape tape;
    Var out = gru_step(tape.constant(z), tape.constant(h), tape.constant(Wu), tape.constant(Uu),
                       tape.constant(Wr), tape.constant(Ur), tape.constant(Wh),
                       tape.constant(Uh));

    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (std::size_t i = 0; i < d; ++i) {
        double wu = 0, uu = 0, wr = 0, ur = 0;
        for (std::size_t j = 0; j < in; ++j) {
            wu += Wu.at(i, j) * z.at(j);
            wr += Wr.at(i, j) * z.at(j);
        }
        for (std::size_t j = 0; j < d; ++j) {
            uu += Uu.at(i, j) * h.at(j);
            ur += Ur.at(i, j) * h.at(j);
        }
        const double u = sig(wu + uu);
        double wh = 0, uhr = 0;
        for (std::size_t j = 0; j < in; ++j) wh += Wh.at(i, j) * z.at(j);
        for (std::size_t j = 0; j < d; ++j) {
            double rj = 0, wrj = 0, urj = 0;
            for (std::size_t l = 0; l < in; ++l) wrj += Wr.at(j, l) * z.at(l);
            for (std::size_t l = 0; l < d; ++l) urj += Ur.at(j, l) * h.at(l);
            rj = sig(wrj + urj);
            uhr += Uh.at(i, j) * rj * h.at(j);
        }
        const double cand = std::tanh(wh + uhr);
        const double expect = (1.0 - u) * h.at(i) + u * cand;
        CHECK(std::fabs(out.value().at(i) - expect) < 1e-12);
    }
}

TEST_CASE("expert output width and zero propagation") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 11, {{0, 1, 2}, {3, 4, 5}});
    const std::size_t d = cfg.gat.embed_dim;

    Mat z(cfg.channels, 16); // all zeros
    auto values = expert_values(state, z);
    // spatial + temporal + 2 cluster experts
    REQUIRE(values.size() == 4);
    for (const Tensor& v : values) CHECK(v.dim(0) == 2 * d);
    // zero input with zero conv bias propagates zeros through the cluster experts
    for (std::size_t k = 2; k < 4; ++k)
        for (std::size_t i = 0; i < 2 * d; ++i) CHECK(values[k].at(i) == 0.0);
}

TEST_CASE("hand-zeroed channels equal the mask path") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 13, {{0, 1, 2}, {3, 4, 5}});
    std::mt19937_64 rng(7);
    Mat z = random_mat(rng, cfg.channels, 16);

    Mat z_hand = z;
    for (std::size_t ch : {3, 4, 5})
        for (std::size_t j = 0; j < 16; ++j) z_hand(ch, j) = 0.0;

    auto v_mask = expert_values(state, z);
    auto v_hand = expert_values(state, z_hand);
    // expert c0 (channels 0-2) sees identical masked input either way
    for (std::size_t i = 0; i < v_mask[2].size(); ++i)
        CHECK(v_mask[2].at(i) == v_hand[2].at(i));
}

TEST_CASE("channel outside every mask and graph leaves cluster experts unchanged") {
    ModelConfig cfg = toy_config(7); // channel 6 stays outside the clusters and graph
    std::vector<std::vector<std::size_t>> groups{{0, 1, 2}, {3, 4, 5}};
    graph::ElectrodeGraph g = graph::grouped_graph(6, groups);
    // extend graph bookkeeping to 7 dataset channels without node 7
    ModelState state = init_model(cfg, g, std::nullopt, 17);
    std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1};
    add_cluster_experts(state, groups, labels);

    std::mt19937_64 rng(9);
    Mat z = random_mat(rng, 7, 16);
    auto before = expert_values(state, z);
    z(6, 3) += 25.0;
    auto after = expert_values(state, z);
    // spatial expert (index 0) and cluster experts (2, 3) must be bit-identical
    for (std::size_t e : {std::size_t{0}, std::size_t{2}, std::size_t{3}})
        for (std::size_t i = 0; i < before[e].size(); ++i)
            CHECK(before[e].at(i) == after[e].at(i));
}

TEST_CASE("expert forward matches a scalar conv+gru oracle") {
    ModelConfig cfg = toy_config(2);
    cfg.use_graph = false; // temporal expert consumes the raw trial
    ModelState state = toy_model(cfg, 23);
    std::mt19937_64 rng(5);
    const std::size_t S = 16;
    Mat z = random_mat(rng, 2, S);

    auto values = expert_values(state, z);
    REQUIRE(values.size() == 1);
    const Tensor& v = values[0];

    // independent scalar re-implementation
    const std::size_t d = cfg.gat.embed_dim, K = cfg.conv_kernel, stride = cfg.conv_stride;
    const Tensor& W = state.find("expert.temporal.conv.W").value;
    const Tensor& bias = state.find("expert.temporal.conv.b").value;
    const std::size_t T = (S - K) / stride + 1;
    std::vector<std::vector<double>> feat(T, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t dd = 0; dd < d; ++dd) {
            double acc = bias.at(dd);
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t k = 0; k < K; ++k) acc += W.at(dd, c, k) * z(c, t * stride + k);
            feat[t][dd] = std::max(acc, 0.0);
        }
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    auto mv = [&](const Tensor& m, const std::vector<double>& x) {
        std::vector<double> out(m.dim(0), 0.0);
        for (std::size_t i = 0; i < m.dim(0); ++i)
            for (std::size_t j = 0; j < m.dim(1); ++j) out[i] += m.at(i, j) * x[j];
        return out;
    };
    const Tensor& Wu = state.find("expert.temporal.Wu").value;
    const Tensor& Uu = state.find("expert.temporal.Uu").value;
    const Tensor& Wr = state.find("expert.temporal.Wr").value;
    const Tensor& Ur = state.find("expert.temporal.Ur").value;
    const Tensor& Wh = state.find("expert.temporal.Wh").value;
    const Tensor& Uh = state.find("expert.temporal.Uh").value;
    std::vector<double> h(d, 0.0), mean(d, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        auto wu = mv(Wu, feat[t]), uu = mv(Uu, h);
        auto wr = mv(Wr, feat[t]), ur = mv(Ur, h);
        std::vector<double> r(d), u(d), rh(d);
        for (std::size_t i = 0; i < d; ++i) {
            u[i] = sig(wu[i] + uu[i]);
            r[i] = sig(wr[i] + ur[i]);
            rh[i] = r[i] * h[i];
        }
        auto wh = mv(Wh, feat[t]), uh = mv(Uh, rh);
        for (std::size_t i = 0; i < d; ++i) {
            const double cand = std::tanh(wh[i] + uh[i]);
            h[i] = (1.0 - u[i]) * h[i] + u[i] * cand;
            mean[i] += h[i] / static_cast<double>(T);
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        CHECK(std::fabs(v.at(i) - h[i]) < 1e-10);
        CHECK(std::fabs(v.at(d + i) - mean[i]) < 1e-10);
    }
}

TEST_CASE("assembled feature width follows (K+2) * 2D") {
    ModelConfig cfg = toy_config();
    // K = 1
    ModelState s1 = toy_model(cfg, 31, {{0, 1, 2, 3, 4, 5}});
    std::mt19937_64 rng(1);
    Mat z = random_mat(rng, 6, 16);
    CHECK(expert_values(s1, z).size() == 3);
    // K = 3, D = 4 -> total 40
    ModelState s3 = toy_model(cfg, 33, {{0, 1}, {2, 3}, {4, 5}});
    auto vals = expert_values(s3, z);
    std::size_t total = 0;
    for (const Tensor& v : vals) total += v.size();
    CHECK(total == 40);
}

TEST_CASE("permuting cluster order permutes only the matching blocks") {
    ModelConfig cfg = toy_config();
    std::mt19937_64 rng(2);
    Mat z = random_mat(rng, 6, 16);

    graph::ElectrodeGraph g = graph::grouped_graph(6, {{0, 1}, {2, 3}, {4, 5}});
    ModelState a = init_model(cfg, g, std::nullopt, 41);
    ModelState b = init_model(cfg, g, std::nullopt, 41);
    add_cluster_experts(a, {{0, 1}, {2, 3}, {4, 5}}, {0, 0, 1, 1, 2, 2});
    add_cluster_experts(b, {{2, 3}, {0, 1}, {4, 5}}, {1, 1, 0, 0, 2, 2});
    // align expert parameters so only the mask assignment differs
    for (const char* n : {"Wu", "Uu", "Wr", "Ur", "Wh", "Uh"}) {
        b.find(std::string("expert.c0.") + n).value =
            a.find(std::string("expert.c1.") + n).value;
        b.find(std::string("expert.c1.") + n).value =
            a.find(std::string("expert.c0.") + n).value;
        b.find(std::string("expert.c2.") + n).value =
            a.find(std::string("expert.c2.") + n).value;
    }
    for (const char* n : {"conv.W", "conv.b"}) {
        b.find(std::string("expert.c0.") + n).value =
            a.find(std::string("expert.c1.") + n).value;
        b.find(std::string("expert.c1.") + n).value =
            a.find(std::string("expert.c0.") + n).value;
        b.find(std::string("expert.c2.") + n).value =
            a.find(std::string("expert.c2.") + n).value;
    }
    auto va = expert_values(a, z);
    auto vb = expert_values(b, z);
    // blocks 0,1 are spatial/temporal; cluster blocks swap
    for (std::size_t i = 0; i < va[0].size(); ++i) {
        CHECK(va[0].at(i) == vb[0].at(i));
        CHECK(va[1].at(i) == vb[1].at(i));
        CHECK(va[2].at(i) == vb[3].at(i));
        CHECK(va[3].at(i) == vb[2].at(i));
    }
}

TEST_CASE("gate normalization for unit logits") {
    // zero gate weights give g' = exp(tanh(0)) = 1 for each expert
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 51, {{0, 1, 2}, {3, 4, 5}});
    for (Param& p : state.params)
        if (p.name.rfind("gate.", 0) == 0)
            for (std::size_t i = 0; i < p.value.size(); ++i) p.value.at(i) = 0.0;
    std::mt19937_64 rng(3);
    Mat z = random_mat(rng, 6, 16);
    Prediction pr = predict(state, z);
    REQUIRE(pr.alpha.size() == 4); // spatial + temporal + 2 clusters
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(pr.alpha.at(i) == doctest::Approx(1.0 / 5.0).epsilon(1e-12));
}

TEST_CASE("gate scores live in (0,1) and sum below 1 on random inputs") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 53, {{0, 1, 2}, {3, 4, 5}});
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 1000; ++rep) {
        Tape tape;
        auto vars = register_params(tape, state, {false, false, false});
        Tensor vhat = random_tensor(rng, {4 * 2 * cfg.gat.embed_dim}, 3.0);
        Var alpha = gate_scores(vars, tape.constant(vhat));
        double total = 0.0;
        for (std::size_t i = 0; i < alpha.value().size(); ++i) {
            const double a = alpha.value().at(i);
            CHECK(a > 0.0);
            CHECK(a < 1.0);
            total += a;
        }
        CHECK(total < 1.0);
    }
}

TEST_CASE("gate entropy formula") {
    Tape tape;
    Var a = tape.constant(Tensor::from_vector({0.5, 0.5}));
    Var e1 = gate_entropy_of({a});
    CHECK(e1.value().at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Var nearly_onehot = tape.constant(Tensor::from_vector({0.999999, 1e-6}));
    CHECK(gate_entropy_of({nearly_onehot}).value().at(0) < 2e-5);

    // duplicating the batch leaves the mean unchanged
    Var e2 = gate_entropy_of({a, a});
    CHECK(e2.value().at(0) == doctest::Approx(e1.value().at(0)).epsilon(1e-15));
}

TEST_CASE("fusion selects and scales blocks") {
    Tape tape;
    std::mt19937_64 rng(6);
    Tensor b0 = random_tensor(rng, {4});
    Tensor b1 = random_tensor(rng, {4});
    Var blocks = ad::stack_rows({tape.constant(b0), tape.constant(b1)});

    // one-hot alpha selects the block scaled by its weight
    Var alpha = tape.constant(Tensor::from_vector({0.7, 0.0}));
    Var fused = ad::vecmat(alpha, blocks);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(fused.value().at(i) == doctest::Approx(0.7 * b0.at(i)).epsilon(1e-12));

    // identical blocks scale by the alpha sum
    Var same = ad::stack_rows({tape.constant(b0), tape.constant(b0)});
    Var alpha2 = tape.constant(Tensor::from_vector({0.3, 0.45}));
    Var fused2 = ad::vecmat(alpha2, same);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(fused2.value().at(i) == doctest::Approx(0.75 * b0.at(i)).epsilon(1e-12));
}

TEST_CASE("lws scaling doubles the first logit") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 61, {{0, 1, 2}, {3, 4, 5}});
    for (std::size_t i = 0; i < cfg.classes; ++i) state.find("head.b").value.at(i) = 0.0;
    std::mt19937_64 rng(8);
    Mat z = random_mat(rng, 6, 16);

    Prediction base = predict(state, z);
    state.find("head.log_gamma").value.at(0) = std::log(2.0);
    Prediction scaled = predict(state, z);
    CHECK(scaled.logits.at(0) == doctest::Approx(2.0 * base.logits.at(0)).epsilon(1e-12));
    CHECK(scaled.logits.at(1) == doctest::Approx(base.logits.at(1)).epsilon(1e-12));
}

TEST_CASE("uniform positive gamma scaling preserves the argmax") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 63, {{0, 1, 2}, {3, 4, 5}});
    for (std::size_t i = 0; i < cfg.classes; ++i) state.find("head.b").value.at(i) = 0.0;
    std::mt19937_64 rng(9);
    Mat z = random_mat(rng, 6, 16);
    Prediction base = predict(state, z);
    for (std::size_t i = 0; i < cfg.classes; ++i)
        state.find("head.log_gamma").value.at(i) = std::log(3.7);
    Prediction scaled = predict(state, z);
    std::size_t am1 = 0, am2 = 0;
    for (std::size_t i = 1; i < cfg.classes; ++i) {
        if (base.logits.at(i) > base.logits.at(am1)) am1 = i;
        if (scaled.logits.at(i) > scaled.logits.at(am2)) am2 = i;
    }
    CHECK(am1 == am2);
}

TEST_CASE("softmax probabilities sum to one") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 65, {{0, 1, 2}, {3, 4, 5}});
    std::mt19937_64 rng(10);
    for (int rep = 0; rep < 20; ++rep) {
        Mat z = random_mat(rng, 6, 16);
        Prediction p = predict(state, z);
        double sum = 0.0;
        for (std::size_t i = 0; i < p.probs.size(); ++i) sum += p.probs.at(i);
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("full model gradient check on the toy configuration") {
    // C=6, S=32, K=2, D=4, Q=3
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 71, {{0, 1, 2}, {3, 4, 5}});
    std::mt19937_64 rng(11);
    Mat z0 = random_mat(rng, 6, 32);
    Mat z1 = random_mat(rng, 6, 32);
    std::vector<int> labels{1, 2};

    std::map<std::string, Tensor> inputs;
    for (const Param& p : state.params) inputs[p.name] = p.value;

    LossParams lp;
    lp.kind = LossKind::focal;
    lp.focal_gamma = 2.0;

    auto f = [&](Tape& tape, std::map<std::string, Var>& vars) {
        BatchResult r = forward_batch(tape, state, vars, {&z0, &z1}, labels, lp);
        return r.loss;
    };
    CHECK(ad::grad_check(f, inputs, 1e-4) < 1e-4);
}

TEST_CASE("checkpoint round trip is byte exact") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 81, {{0, 1, 2}, {3, 4, 5}});
    state.stage = 2;
    const std::string p1 = "/tmp/gcmcg_model_a.bin", p2 = "/tmp/gcmcg_model_b.bin";
    save_model(state, p1);
    ModelState loaded = load_model(p1);
    save_model(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(loaded.stage == 2);
    CHECK(loaded.clusters_ready);

    // predictions agree exactly
    std::mt19937_64 rng(12);
    Mat z = random_mat(rng, 6, 16);
    Prediction pa = predict(state, z);
    Prediction pb = predict(loaded, z);
    for (std::size_t i = 0; i < pa.logits.size(); ++i)
        CHECK(pa.logits.at(i) == pb.logits.at(i));
}

TEST_CASE("checkpoint rejects corruption and bad magic") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 91);
    const std::string path = "/tmp/gcmcg_model_c.bin";
    save_model(state, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        char c = 0x77;
        f.write(&c, 1);
    }
    CHECK_THROWS_AS(load_model(path), error);
}

TEST_CASE("tokenizer with mismatched feature dim is rejected") {
    ModelConfig cfg = toy_config();
    graph::ElectrodeGraph g = graph::grouped_graph(cfg.channels, {{0, 1, 2}, {3, 4, 5}});
    graph::TokenizerState tok = graph::tokenizer_init(g, 16, 3); // F=16, config wants 4
    CHECK_THROWS_AS(init_model(cfg, g, tok.features, 1), error);
}

TEST_CASE("group checksums respond only to their group") {
    ModelConfig cfg = toy_config();
    ModelState state = toy_model(cfg, 95, {{0, 1, 2}, {3, 4, 5}});
    const auto backbone = group_checksum(state, kBackbone);
    const auto head = group_checksum(state, kHeadFc);
    const auto gamma = group_checksum(state, kGamma);

    state.find("head.W1").value.at(0) += 1.0;
    CHECK(group_checksum(state, kBackbone) == backbone);
    CHECK(group_checksum(state, kHeadFc) != head);
    CHECK(group_checksum(state, kGamma) == gamma);

    state.find("gate.W1").value.at(0) += 1.0;
    CHECK(group_checksum(state, kBackbone) != backbone);
}
