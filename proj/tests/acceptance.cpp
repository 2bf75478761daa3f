// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion.
//
// usage: acceptance <path-to-cli-binary> <scratch-dir>

#include <json.hpp>

#include "gcmcg/cluster.hpp"
#include "gcmcg/dataset.hpp"
#include "gcmcg/dsp.hpp"
#include "gcmcg/eval.hpp"
#include "gcmcg/graph.hpp"
#include "gcmcg/model.hpp"
#include "gcmcg/train.hpp"
#include "gcmcg/wavelet.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace gcmcg;
using linalg::Mat;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

double rms(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc / static_cast<double>(v.size()));
}

// ---- criterion 1: gradient correctness -----------------------------------------

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    model::ModelConfig cfg;
    cfg.gat.layers = 2;
    cfg.gat.heads = 2;
    cfg.gat.token_dim = 4;
    cfg.gat.embed_dim = 4; // D=4
    cfg.channels = 6;      // C=6
    cfg.classes = 3;       // Q=3
    cfg.conv_kernel = 3;
    cfg.conv_stride = 2;
    cfg.gate_hidden = 8;
    cfg.head_hidden = 8;
    graph::ElectrodeGraph g = graph::grouped_graph(6, {{0, 1, 2}, {3, 4, 5}});
    model::ModelState state = model::init_model(cfg, g, std::nullopt, 71);
    model::add_cluster_experts(state, {{0, 1, 2}, {3, 4, 5}}, {0, 0, 0, 1, 1, 1}); // K=2

    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat z0(6, 32), z1(6, 32); // S=32
    for (double& v : z0.a) v = n01(rng);
    for (double& v : z1.a) v = n01(rng);

    std::map<std::string, Tensor> inputs;
    for (const model::Param& p : state.params) inputs[p.name] = p.value;

    model::LossParams lp;
    lp.kind = model::LossKind::focal;
    lp.focal_gamma = 2.0;
    auto f = [&](ad::Tape& tape, std::map<std::string, ad::Var>& vars) {
        return model::forward_batch(tape, state, vars, {&z0, &z1}, {1, 2}, lp).loss;
    };
    const double err = ad::grad_check(f, inputs, 1e-4);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(1, "full-loss gradient check", err < 1e-4 && secs < 60.0,
           "max rel err " + fmt(err) + ", " + fmt(secs) + " s");
}

// ---- criterion 2: denoising oracle ----------------------------------------------

void criterion_denoising() {
    std::mt19937_64 rng(2025);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
    const double rate = 160.0;
    const std::size_t C = 8, S = 1920;
    const double freqs[3] = {3.0, 4.5, 8.0};

    auto snr_db = [](const std::vector<double>& clean, const std::vector<double>& noisy) {
        double sp = 0.0, np = 0.0;
        for (std::size_t i = 0; i < clean.size(); ++i) {
            sp += clean[i] * clean[i];
            const double e = noisy[i] - clean[i];
            np += e * e;
        }
        return 10.0 * std::log10(sp / np);
    };

    double gain_sum = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Mat srcs(3, S);
        for (int k = 0; k < 3; ++k) {
            const double phase = ph(rng);
            for (std::size_t i = 0; i < S; ++i)
                srcs(k, i) = std::sqrt(2.0) * std::sin(2.0 * std::numbers::pi * freqs[k] *
                                                           static_cast<double>(i) / rate +
                                                       phase);
        }
        Mat mixing(C, 3);
        for (double& v : mixing.a) v = n01(rng);
        Mat clean = linalg::matmul(mixing, srcs);
        Mat noisy = clean;
        for (std::size_t c = 0; c < C; ++c) {
            std::vector<double> row(clean.row(c), clean.row(c) + S);
            const double scale = 50.0 / rms(row);
            for (std::size_t j = 0; j < S; ++j) {
                clean(c, j) *= scale;
                noisy(c, j) = clean(c, j) + 50.0 * n01(rng); // 0 dB
            }
        }
        dsp::Recording rec;
        rec.samples = noisy;
        rec.rate = rate;
        dsp::DenoiseConfig cfg;
        cfg.kurt_threshold = -3.0; // rhythms are sub-gaussian
        cfg.ica_seed = 100 + static_cast<std::uint64_t>(trial);
        dsp::Recording den = dsp::denoise(rec, cfg);

        double in_snr = 0.0, out_snr = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            std::vector<double> cl(clean.row(c), clean.row(c) + S);
            std::vector<double> no(noisy.row(c), noisy.row(c) + S);
            std::vector<double> de(den.samples.row(c), den.samples.row(c) + S);
            in_snr += snr_db(cl, no);
            out_snr += snr_db(cl, de);
        }
        gain_sum += (out_snr - in_snr) / static_cast<double>(C);
    }
    const double mean_gain = gain_sum / 20.0;

    // notch stage on a pure 60 Hz hum (60 s recording)
    double worst_db = 1e9;
    for (double phase : {0.0, 1.0, 2.5}) {
        std::vector<double> hum(9600);
        for (std::size_t i = 0; i < hum.size(); ++i)
            hum[i] = std::sin(2.0 * std::numbers::pi * 60.0 * static_cast<double>(i) / 160.0 +
                              phase);
        auto out = dsp::sosfiltfilt({dsp::notch_biquad(60.0, 160.0, 30.0)}, hum);
        worst_db = std::min(worst_db, 20.0 * std::log10(rms(hum) / rms(out)));
    }
    report(2, "denoising oracle", mean_gain >= 3.0 && worst_db >= 26.0,
           "mean SNR gain " + fmt(mean_gain) + " dB, notch attenuation " + fmt(worst_db) +
               " dB");
}

// ---- criterion 3: wavelet round trip + shrink branches ---------------------------

void criterion_wavelet() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01(0.0, 1.0);
    const std::size_t lengths[] = {64, 128, 256, 512, 1024};
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = lengths[rep % 5];
        std::vector<double> s(n);
        for (double& v : s) v = n01(rng);
        const int levels =
            std::min(3 + rep % 4, dsp::max_dwt_levels(n, dsp::Boundary::periodic));
        auto rec = dsp::idwt(dsp::dwt(s, levels, dsp::Boundary::periodic));
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            num += (s[i] - rec[i]) * (s[i] - rec[i]);
            den += s[i] * s[i];
        }
        worst = std::max(worst, std::sqrt(num / den));
    }
    const bool branches = std::fabs(dsp::shrink_coeff(3.0, 1.0) - 2.2092) < 1e-4 &&
                          dsp::shrink_coeff(0.5, 1.0) == 0.0 &&
                          std::fabs(dsp::shrink_coeff(-3.0, 1.0) + 2.2092) < 1e-4;
    report(3, "wavelet round trip and shrink branches", worst < 1e-8 && branches,
           "worst rel err " + fmt(worst) + ", branches " + (branches ? "ok" : "wrong"));
}

// ---- criterion 4: ICA contract ---------------------------------------------------

void criterion_ica() {
    std::mt19937_64 rng(4);
    int successes = 0;
    double worst_identity = 0.0;
    for (int run = 0; run < 100; ++run) {
        std::uniform_real_distribution<double> uni(-std::sqrt(3.0), std::sqrt(3.0));
        const std::size_t S = 2000;
        Mat sources(2, S);
        for (double& v : sources.a) v = uni(rng);
        Mat mixing(2, 2);
        mixing(0, 0) = 1.0;
        mixing(0, 1) = 0.5;
        mixing(1, 0) = 0.5;
        mixing(1, 1) = 1.0;
        Mat x = linalg::matmul(mixing, sources);
        dsp::IcaModel m;
        try {
            m = dsp::fastica(x, 500, 1e-6, 1000 + static_cast<std::uint64_t>(run));
        } catch (const error&) {
            continue;
        }

        Mat xc = x;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < S; ++j) xc(i, j) -= m.row_means[i];
        const double identity =
            linalg::frobenius(linalg::matmul(m.mixing, m.sources) - xc) / linalg::frobenius(xc);
        worst_identity = std::max(worst_identity, identity);

        auto corr = [&](const double* a, const double* b) {
            double ma = 0, mb = 0;
            for (std::size_t i = 0; i < S; ++i) {
                ma += a[i];
                mb += b[i];
            }
            ma /= S;
            mb /= S;
            double ab = 0, aa = 0, bb = 0;
            for (std::size_t i = 0; i < S; ++i) {
                ab += (a[i] - ma) * (b[i] - mb);
                aa += (a[i] - ma) * (a[i] - ma);
                bb += (b[i] - mb) * (b[i] - mb);
            }
            return std::fabs(ab / std::sqrt(aa * bb));
        };
        const double c00 = corr(m.sources.row(0), sources.row(0));
        const double c01 = corr(m.sources.row(0), sources.row(1));
        const double c10 = corr(m.sources.row(1), sources.row(0));
        const double c11 = corr(m.sources.row(1), sources.row(1));
        if ((c00 > 0.95 && c11 > 0.95) || (c01 > 0.95 && c10 > 0.95)) ++successes;
    }
    report(4, "fastica contract", successes >= 95 && worst_identity < 1e-6,
           std::to_string(successes) + "/100 demixed, worst identity err " +
               fmt(worst_identity));
}

// ---- criterion 5: attention and gate normalization -------------------------------

void criterion_normalization() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    graph::ElectrodeGraph g = graph::grouped_graph(6, {{0, 1, 2}, {3, 4, 5}});

    double worst_row = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        Tensor theta({6, 4}), W({4, 5}), a({10});
        for (std::size_t i = 0; i < theta.size(); ++i) theta.at(i) = n01(rng);
        for (std::size_t i = 0; i < W.size(); ++i) W.at(i) = n01(rng);
        for (std::size_t i = 0; i < a.size(); ++i) a.at(i) = n01(rng);
        auto alpha = graph::attention_coefficients(theta, g, W, a);
        for (std::size_t i = 0; i < 6; ++i) {
            double s = 0.0;
            for (std::size_t j : g.adjacency[i])
                if (g.mask[j]) s += alpha.at({i, j});
            worst_row = std::max(worst_row, std::fabs(s - 1.0));
        }
    }

    model::ModelConfig cfg;
    cfg.gat.token_dim = 4;
    cfg.gat.embed_dim = 4;
    cfg.gat.heads = 2;
    cfg.channels = 6;
    cfg.classes = 3;
    cfg.conv_kernel = 3;
    cfg.gate_hidden = 8;
    cfg.head_hidden = 8;
    model::ModelState state = model::init_model(cfg, g, std::nullopt, 55);
    model::add_cluster_experts(state, {{0, 1, 2}, {3, 4, 5}}, {0, 0, 0, 1, 1, 1});

    bool gate_ok = true;
    for (int rep = 0; rep < 1000 && gate_ok; ++rep) {
        ad::Tape tape;
        auto vars = model::register_params(tape, state, {false, false, false});
        Tensor vhat({4 * 8});
        for (std::size_t i = 0; i < vhat.size(); ++i) vhat.at(i) = 3.0 * n01(rng);
        ad::Var alpha = model::gate_scores(vars, tape.constant(vhat));
        double total = 0.0;
        for (std::size_t i = 0; i < alpha.value().size(); ++i) {
            const double v = alpha.value().at(i);
            if (!(v > 0.0 && v < 1.0)) gate_ok = false;
            total += v;
        }
        if (!(total < 1.0)) gate_ok = false;
    }
    report(5, "attention/gate normalization", worst_row < 1e-12 && gate_ok,
           "worst attention row dev " + fmt(worst_row) + ", gate bounds " +
               (gate_ok ? "ok" : "violated"));
}

// ---- criterion 6: eigengap + clustering -------------------------------------------

void criterion_clustering() {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n01(0.0, 1.0);
    int perfect = 0;
    for (int run = 0; run < 100; ++run) {
        // planted 3-block embeddings on disjoint supports
        const std::vector<std::size_t> sizes{4, 3, 5};
        Mat emb(12, 9);
        std::vector<std::size_t> truth;
        std::size_t row = 0;
        for (std::size_t grp = 0; grp < 3; ++grp) {
            std::vector<double> base(9, 0.0);
            for (std::size_t j = grp * 3; j < grp * 3 + 3; ++j)
                base[j] = 1.0 + 0.2 * std::fabs(n01(rng));
            for (std::size_t i = 0; i < sizes[grp]; ++i, ++row) {
                for (std::size_t j = 0; j < 9; ++j) emb(row, j) = base[j] + 0.01 * n01(rng);
                truth.push_back(grp);
            }
        }
        cluster::SpectralOptions opt;
        opt.seed = 600 + static_cast<std::uint64_t>(run);
        cluster::ClusterAssignment asg = cluster::cluster_channels(emb, opt);
        if (asg.k == 3 && cluster::adjusted_rand_index(asg.labels, truth) == 1.0) ++perfect;
    }

    Mat r(4, 4);
    for (std::size_t i = 0; i < 4; ++i) r(i, i) = 1.0;
    r(0, 1) = r(1, 0) = 1.0;
    r(2, 3) = r(3, 2) = 1.0;
    auto eig = linalg::jacobi_eigen(cluster::laplacian(r));
    const bool spectrum = std::fabs(eig.values[0]) < 1e-10 && std::fabs(eig.values[1]) < 1e-10 &&
                          std::fabs(eig.values[2] - 2.0) < 1e-10 &&
                          std::fabs(eig.values[3] - 2.0) < 1e-10;
    report(6, "eigengap clustering", perfect == 100 && spectrum,
           std::to_string(perfect) + "/100 exact recoveries, block spectrum " +
               (spectrum ? "ok" : "wrong"));
}

// ---- criterion 7: loss identities ---------------------------------------------------

void criterion_losses() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::uniform_int_distribution<int> cls(0, 3);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<double> p(4);
        double z = 0.0;
        for (double& v : p) {
            v = u(rng);
            z += v;
        }
        for (double& v : p) v /= z;
        std::vector<double> y(4, 0.0);
        y[static_cast<std::size_t>(cls(rng))] = 1.0;
        worst = std::max(worst, std::fabs(train::focal_loss(y, p, 0.0, {}) - train::ce_loss(y, p)));
    }

    auto p0 = train::pbs_probabilities({90, 10}, 0.0);
    auto p1 = train::pbs_probabilities({90, 10}, 1.0);
    const bool endpoints = p0[0] == 0.9 && p0[1] == 0.1 && p1[0] == 0.5 && p1[1] == 0.5;

    // overall loss with lambda 0 equals the mean classification loss
    model::ModelConfig cfg;
    cfg.gat.token_dim = 4;
    cfg.gat.embed_dim = 4;
    cfg.gat.heads = 2;
    cfg.channels = 6;
    cfg.classes = 3;
    cfg.conv_kernel = 3;
    cfg.gate_hidden = 8;
    cfg.head_hidden = 8;
    cfg.lambda_gate = 0.0;
    graph::ElectrodeGraph g = graph::grouped_graph(6, {{0, 1, 2}, {3, 4, 5}});
    model::ModelState state = model::init_model(cfg, g, std::nullopt, 77);
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat z0(6, 16), z1(6, 16);
    for (double& v : z0.a) v = n01(rng);
    for (double& v : z1.a) v = n01(rng);
    ad::Tape tape;
    auto vars = model::register_params(tape, state, {false, false, false});
    model::LossParams lp;
    model::BatchResult r = model::forward_batch(tape, state, vars, {&z0, &z1}, {0, 2}, lp);
    const double overall_dev = std::fabs(r.loss.value().at(0) - r.cls_loss.value().at(0));

    report(7, "loss identities", worst < 1e-12 && endpoints && overall_dev < 1e-12,
           "focal-ce dev " + fmt(worst) + ", pbs endpoints " + (endpoints ? "exact" : "wrong") +
               ", overall-cls dev " + fmt(overall_dev));
}

// ---- criterion 8: freeze contract ---------------------------------------------------

void criterion_freeze() {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
    std::vector<std::vector<std::size_t>> groups{{0, 1, 2, 3}, {4, 5, 6, 7}, {8, 9, 10, 11}};
    std::vector<Mat> trials;
    std::vector<train::TrialView> views;
    const double freqs[3] = {2.0, 4.0, 7.0};
    for (int i = 0; i < 36; ++i) {
        const int label = i % 3;
        Mat z(12, 32);
        const double phase = ph(rng);
        for (double& v : z.a) v = 0.3 * n01(rng);
        for (std::size_t c : groups[static_cast<std::size_t>(label)])
            for (std::size_t t = 0; t < 32; ++t)
                z(c, t) += 2.0 * std::sin(2.0 * std::numbers::pi * freqs[label] *
                                              static_cast<double>(t) / 32.0 +
                                          phase);
        trials.push_back(dsp::standardize(z));
    }
    for (int i = 0; i < 36; ++i) views.push_back({&trials[i], i % 3});

    model::ModelConfig cfg;
    cfg.gat.token_dim = 8;
    cfg.gat.embed_dim = 8;
    cfg.gat.heads = 2;
    cfg.channels = 12;
    cfg.classes = 3;
    cfg.conv_kernel = 3;
    cfg.gate_hidden = 8;
    cfg.head_hidden = 16;
    graph::ElectrodeGraph g = graph::grouped_graph(12, groups);
    model::ModelState state = model::init_model(cfg, g, std::nullopt, 88);

    train::TrainConfig tcfg;
    tcfg.epochs_stage1 = 4;
    tcfg.epochs_stage2 = 3;
    tcfg.epochs_stage3 = 2;
    tcfg.batch = 8;
    tcfg.cluster_warmup = 2;
    tcfg.seed = 88;
    tcfg.spectral.k_max = 6;
    train::History h = train::run_training(state, views, {}, tcfg);

    const bool backbone_frozen =
        h.backbone_checksum_stage2_start == h.backbone_checksum_stage2_end;
    const bool fc_frozen = h.headfc_checksum_stage3_start == h.headfc_checksum_stage3_end;
    report(8, "stage freeze contract", backbone_frozen && fc_frozen,
           std::string("backbone ") + (backbone_frozen ? "unchanged" : "CHANGED") + ", head FC " +
               (fc_frozen ? "unchanged" : "CHANGED"));
}

// ---- criterion 9: metric oracle ------------------------------------------------------

void criterion_metrics() {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> cell(0, 50);
    double worst = 0.0;
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<std::vector<std::size_t>> m(3, std::vector<std::size_t>(3));
        std::size_t total = 0;
        for (auto& row : m)
            for (auto& v : row) {
                v = cell(rng);
                total += v;
            }
        if (total == 0) m[1][1] = 1;
        eval::EvalReport r = eval::metrics(m);

        // brute-force recomputation from the definitions
        double tot = 0, diag = 0;
        std::vector<double> rs(3, 0), cs(3, 0);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                tot += static_cast<double>(m[i][j]);
                rs[i] += static_cast<double>(m[i][j]);
                cs[j] += static_cast<double>(m[i][j]);
                if (i == j) diag += static_cast<double>(m[i][j]);
            }
        double mp = 0, mr = 0, mf = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double tp = static_cast<double>(m[c][c]);
            const double p = cs[c] > 0 ? tp / cs[c] : 0.0;
            const double rr = rs[c] > 0 ? tp / rs[c] : 0.0;
            mp += p / 3.0;
            mr += rr / 3.0;
            mf += (p + rr > 0 ? 2 * p * rr / (p + rr) : 0.0) / 3.0;
        }
        double pe = 0;
        for (std::size_t c = 0; c < 3; ++c) pe += rs[c] * cs[c];
        pe /= tot * tot;
        const double kappa = (diag / tot - pe) / (1.0 - pe);
        worst = std::max(worst, std::fabs(r.top1 - diag / tot));
        worst = std::max(worst, std::fabs(r.macro_precision - mp));
        worst = std::max(worst, std::fabs(r.macro_recall - mr));
        worst = std::max(worst, std::fabs(r.macro_f1 - mf));
        worst = std::max(worst, std::fabs(r.kappa - kappa));
    }

    const bool kappa_diag = std::fabs(eval::metrics({{5, 0}, {0, 5}}).kappa - 1.0) < 1e-12;
    const bool kappa_onecls = std::fabs(eval::metrics({{50, 0}, {50, 0}}).kappa) < 1e-12;

    // trapezoid equals the rank statistic with ties
    std::uniform_int_distribution<int> q10(0, 9);
    std::bernoulli_distribution lbl(0.5);
    double auc_dev = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> scores;
        std::vector<int> pos;
        bool hp = false, hn = false;
        for (int i = 0; i < 50; ++i) {
            scores.push_back(q10(rng) / 10.0);
            pos.push_back(lbl(rng) ? 1 : 0);
            (pos.back() ? hp : hn) = true;
        }
        if (!hp || !hn) continue;
        double wins = 0.0;
        std::size_t np = 0, nn = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (!pos[i]) continue;
            ++np;
            for (std::size_t j = 0; j < scores.size(); ++j) {
                if (pos[j]) continue;
                if (scores[i] > scores[j])
                    wins += 1.0;
                else if (scores[i] == scores[j])
                    wins += 0.5;
            }
        }
        for (int p : pos)
            if (!p) ++nn;
        const double rank_auc = wins / (static_cast<double>(np) * static_cast<double>(nn));
        auc_dev = std::max(auc_dev,
                           std::fabs(eval::roc_auc_binary(scores, pos) - rank_auc));
    }
    report(9, "metric oracle", worst < 1e-12 && kappa_diag && kappa_onecls && auc_dev < 1e-12,
           "metric dev " + fmt(worst) + ", auc dev " + fmt(auc_dev));
}

// ---- criterion 10: LGSO partition ------------------------------------------------------

void criterion_lgso() {
    bool ok = true;
    std::string detail = "all partitions valid";
    for (std::size_t total = 3; total <= 30 && ok; ++total) {
        std::vector<std::string> subjects;
        for (std::size_t i = 0; i < total; ++i)
            subjects.push_back(data::DatasetContainer::subject_name(
                static_cast<std::uint16_t>(i + 1)));
        for (std::size_t n = 2; n <= total && ok; ++n) {
            std::vector<std::string> seen;
            for (std::size_t m = 1; m <= n; ++m) {
                eval::FoldPlan p = eval::lgso_split(subjects, n, m);
                const std::size_t expect = total / n + (m <= total % n ? 1 : 0);
                if (p.test_subjects.size() != expect ||
                    p.test_subjects.size() + p.train_subjects.size() != total) {
                    ok = false;
                    detail = "bad sizes at |S|=" + std::to_string(total) +
                             " N=" + std::to_string(n) + " m=" + std::to_string(m);
                    break;
                }
                for (const auto& s : p.test_subjects) seen.push_back(s);
            }
            std::sort(seen.begin(), seen.end());
            if (ok && (seen.size() != total ||
                       std::adjacent_find(seen.begin(), seen.end()) != seen.end())) {
                ok = false;
                detail = "not a partition at |S|=" + std::to_string(total) +
                         " N=" + std::to_string(n);
            }
        }
    }
    // spot checks from the algorithm trace
    eval::FoldPlan ten = eval::lgso_split(
        [] {
            std::vector<std::string> s;
            for (int i = 1; i <= 10; ++i)
                s.push_back(data::DatasetContainer::subject_name(static_cast<std::uint16_t>(i)));
            return s;
        }(),
        3, 1);
    if (ten.test_subjects.size() != 4) {
        ok = false;
        detail = "10 subjects / N=3 first group should take 4";
    }
    report(10, "lgso partition", ok, detail);
}

// ---- criteria 11 and 12: CLI end-to-end -----------------------------------------------

std::string g_cli;
fs::path g_scratch;

int run_cli(const std::string& args, const std::string& log_name) {
    const std::string log = (g_scratch / (log_name + ".log")).string();
    const std::string cmd = g_cli + " " + args + " > " + log + " 2>&1";
    return std::system(cmd.c_str());
}

std::string easy_cfg_text(std::uint64_t seed, int e1, int e2, int e3) {
    std::ostringstream cfg;
    cfg << "# easy synthetic benchmark\n";
    cfg << "seed = " << seed << "\n";
    cfg << "synth_classes = 3\nsynth_channels = 16\nsynth_samples = 256\nsynth_rate = 160\n";
    cfg << "synth_subjects = 8\nsynth_trials_per_subject = 120\n";
    cfg << "synth_groups = 0-5;6-10;11-15\nsynth_freqs = 4;8;14\n";
    cfg << "synth_amp = 40\nsynth_noise = 20\n";
    cfg << "band_low_hz = 0.2\nband_high_hz = 75\nfilter_order = 4\n";
    cfg << "kurt_threshold = -3\nica_max_iter = 120\n";
    cfg << "token_dim = 16\nembed_dim = 32\ngat_heads = 4\ngat_layers = 2\n";
    cfg << "conv_kernel = 7\nconv_stride = 2\n";
    cfg << "k_min = 2\nk_max = 10\n";
    cfg << "lambda_gate = 0.01\nfocal_gamma = 2\n";
    cfg << "epochs_stage1 = " << e1 << "\nepochs_stage2 = " << e2 << "\nepochs_stage3 = " << e3
        << "\n";
    cfg << "batch = 16\nlr = 0.001\ncluster_warmup = 3\nfolds = 2\n";
    return cfg.str();
}

double read_json_number(const fs::path& p, const std::string& key) {
    std::ifstream in(p);
    if (!in) throw error("missing " + p.string());
    nlohmann::json j;
    in >> j;
    if (!j.contains(key) || j[key].is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j[key].get<double>();
}

std::vector<std::size_t> read_json_sizes(const fs::path& p, const std::string& key) {
    std::ifstream in(p);
    if (!in) throw error("missing " + p.string());
    nlohmann::json j;
    in >> j;
    return j[key].get<std::vector<std::size_t>>();
}

void criterion_end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = g_scratch / "bench";
    fs::create_directories(dir);
    const fs::path cfg_path = dir / "easy.cfg";
    {
        std::ofstream out(cfg_path);
        out << easy_cfg_text(1, 14, 4, 2);
    }
    const fs::path data = dir / "data.gcd";
    bool ok = run_cli("--config " + cfg_path.string() + " synth --out " + data.string(),
                      "bench_synth") == 0;
    ok = ok && run_cli("--config " + cfg_path.string() + " --out-dir " + dir.string() +
                           " eval --data " + data.string(),
                       "bench_eval") == 0;

    double top1 = 0.0, min_ari = 1.0;
    if (ok) {
        top1 = read_json_number(dir / "report.json", "top1");
        const auto truth = read_json_sizes(fs::path(data.string() + ".truth.json"),
                                           "channel_cluster");
        for (int fold = 1; fold <= 2; ++fold) {
            const auto got = read_json_sizes(
                dir / ("clusters_fold" + std::to_string(fold) + ".json"), "channel_cluster");
            min_ari = std::min(min_ari, cluster::adjusted_rand_index(got, truth));
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(11, "end-to-end benchmark", ok && top1 >= 0.90 && min_ari >= 0.9 && secs < 900.0,
           "top1 " + fmt(top1) + ", cluster ARI " + fmt(min_ari) + ", " + fmt(secs) + " s");

    // ablation: --no-graph scores strictly lower mean AUC over 5 seeds
    double full_sum = 0.0, nograph_sum = 0.0;
    bool ab_ok = true;
    for (int seed = 1; seed <= 5 && ab_ok; ++seed) {
        const fs::path adir = g_scratch / ("ablate_seed" + std::to_string(seed));
        fs::create_directories(adir);
        const fs::path acfg = adir / "ablate.cfg";
        {
            std::ofstream out(acfg);
            out << easy_cfg_text(static_cast<std::uint64_t>(seed), 6, 2, 1);
            out << "parallel_folds = true\n";
        }
        const fs::path adata = adir / "data.gcd";
        ab_ok = run_cli("--config " + acfg.string() + " synth --out " + adata.string(),
                        "ablate_synth" + std::to_string(seed)) == 0;
        ab_ok = ab_ok && run_cli("--config " + acfg.string() + " --out-dir " +
                                     (adir / "full").string() + " eval --data " + adata.string(),
                                 "ablate_full" + std::to_string(seed)) == 0;
        ab_ok = ab_ok && run_cli("--config " + acfg.string() + " --out-dir " +
                                     (adir / "nograph").string() + " ablate --no-graph --data " +
                                     adata.string(),
                                 "ablate_ng" + std::to_string(seed)) == 0;
        if (ab_ok) {
            full_sum += read_json_number(adir / "full" / "report.json", "macro_auc");
            nograph_sum += read_json_number(adir / "nograph" / "report.json", "macro_auc");
        }
    }
    report(11, "graph ablation direction", ab_ok && nograph_sum / 5.0 < full_sum / 5.0,
           "mean AUC full " + fmt(full_sum / 5.0) + " vs no-graph " + fmt(nograph_sum / 5.0));
}

bool same_bytes(const fs::path& a, const fs::path& b) {
    std::ifstream f1(a, std::ios::binary), f2(b, std::ios::binary);
    if (!f1 || !f2) return false;
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    return s1 == s2;
}

bool dirs_identical(const fs::path& a, const fs::path& b, std::string* why) {
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
    std::sort(rel.begin(), rel.end());
    for (const fs::path& r : rel) {
        if (!same_bytes(a / r, b / r)) {
            *why = r.string();
            return false;
        }
    }
    return !rel.empty();
}

void criterion_determinism() {
    const fs::path dir = g_scratch / "determinism";
    fs::create_directories(dir);

    // small dataset shared by the deterministic runs
    const fs::path cfg_path = dir / "small.cfg";
    {
        std::ostringstream cfg;
        cfg << "seed = 9\n";
        cfg << "synth_classes = 2\nsynth_channels = 8\nsynth_samples = 64\nsynth_rate = 160\n";
        cfg << "synth_subjects = 4\nsynth_trials_per_subject = 8\n";
        cfg << "synth_groups = 0-3;4-7\nsynth_freqs = 4;9\n";
        cfg << "synth_amp = 50\nsynth_noise = 10\n";
        cfg << "kurt_threshold = -3\nica_max_iter = 80\n";
        cfg << "token_dim = 8\nembed_dim = 8\ngat_heads = 2\ngat_layers = 2\n";
        cfg << "conv_kernel = 5\nconv_stride = 2\ngate_hidden = 8\nhead_hidden = 16\n";
        cfg << "k_max = 5\nepochs_stage1 = 2\nepochs_stage2 = 1\nepochs_stage3 = 1\n";
        cfg << "batch = 8\ncluster_warmup = 1\nfolds = 2\n";
        std::ofstream out(cfg_path);
        out << cfg.str();
    }

    struct Step {
        std::string name;
        std::string args; // %OUT% replaced by the run directory
    };
    const fs::path data = dir / "data.gcd";
    std::vector<Step> steps{
        {"synth", "--config " + cfg_path.string() + " synth --out %OUT%/data.gcd"},
        {"denoise",
         "--config " + cfg_path.string() + " denoise --data " + data.string() +
             " --out %OUT%/denoised.gcd"},
        {"cluster-report",
         "--config " + cfg_path.string() + " cluster-report --data " + data.string() +
             " --adjacency " + data.string() + ".adj.txt --map " + data.string() +
             ".map.txt --out %OUT%/cluster_report.csv"},
        {"train",
         "--config " + cfg_path.string() + " --out-dir %OUT% train --data " + data.string() +
             " --adjacency " + data.string() + ".adj.txt --map " + data.string() + ".map.txt"},
        {"eval",
         "--config " + cfg_path.string() + " --out-dir %OUT% eval --data " + data.string() +
             " --adjacency " + data.string() + ".adj.txt --map " + data.string() + ".map.txt"},
        {"ablate",
         "--config " + cfg_path.string() + " --out-dir %OUT% ablate --no-graph --data " +
             data.string()},
        {"export-tokenizer", ""}, // filled after train produces a checkpoint
        {"ingest", ""},
    };

    // seed dataset for the dependent steps
    {
        const std::string cmd = "--config " + cfg_path.string() + " synth --out " + data.string();
        if (run_cli(cmd, "det_seed_synth") != 0) {
            report(12, "determinism", false, "seeding synth failed");
            return;
        }
    }
    // csv for the ingest run
    const fs::path csv = dir / "in.csv";
    {
        std::ofstream out(csv);
        out << "c1,c2\n";
        for (int i = 0; i < 16; ++i) out << i * 0.5 << ',' << (15 - i) * 0.25 << '\n';
    }
    const fs::path labels = dir / "in_labels.csv";
    {
        std::ofstream out(labels);
        out << "0,8,0,sA\n8,16,1,sB\n";
    }

    bool all_ok = true;
    std::string detail = "all subcommands byte-identical";
    for (Step& step : steps) {
        if (step.name == "export-tokenizer") {
            const std::string ckpt = (dir / "run_train_a" / "model.ckpt").string();
            step.args = "export-tokenizer --model " + ckpt + " --out %OUT%/tok.gtok";
        }
        if (step.name == "ingest") {
            step.args = "ingest --csv " + csv.string() + " --rate 160 --labels " +
                        labels.string() + " --window 8 --out %OUT%/ingested.gcd";
        }
        const fs::path run_a = dir / ("run_" + step.name + "_a");
        const fs::path run_b = dir / ("run_" + step.name + "_b");
        fs::create_directories(run_a);
        fs::create_directories(run_b);
        auto subst = [&](const fs::path& out_dir) {
            std::string args = step.args;
            const std::string token = "%OUT%";
            std::size_t at;
            while ((at = args.find(token)) != std::string::npos)
                args.replace(at, token.size(), out_dir.string());
            return args;
        };
        if (run_cli(subst(run_a), "det_" + step.name + "_a") != 0 ||
            run_cli(subst(run_b), "det_" + step.name + "_b") != 0) {
            all_ok = false;
            detail = step.name + " exited nonzero";
            break;
        }
        std::string why;
        if (!dirs_identical(run_a, run_b, &why)) {
            all_ok = false;
            detail = step.name + " artifact differs: " + why;
            break;
        }
    }
    report(12, "determinism", all_ok, detail);
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: acceptance <cli-binary> <scratch-dir>\n");
        return 2;
    }
    g_cli = argv[1];
    g_scratch = argv[2];
    fs::create_directories(g_scratch);

    criterion_gradients();
    criterion_denoising();
    criterion_wavelet();
    criterion_ica();
    criterion_normalization();
    criterion_clustering();
    criterion_losses();
    criterion_freeze();
    criterion_metrics();
    criterion_lgso();
    criterion_end_to_end();
    criterion_determinism();

    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d criterion check(s) failed\n", g_failures);
    return 1;
}
