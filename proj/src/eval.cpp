#include "gcmcg/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

namespace gcmcg::eval {

FoldPlan lgso_split(std::vector<std::string> subjects, std::size_t n, std::size_t m) {
    if (subjects.empty()) throw error("lgso_split: no subjects");
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (n < 1 || n > subjects.size())
        throw error("lgso_split: N=" + std::to_string(n) + " outside [1, " +
                    std::to_string(subjects.size()) + "]");
    if (m < 1 || m > n) throw error("lgso_split: group index m outside [1, N]");

    const std::size_t base = subjects.size() / n;
    const std::size_t extra = subjects.size() % n;
    FoldPlan plan;
    plan.groups = n;
    plan.index = m;
    std::size_t pos = 0;
    for (std::size_t g = 1; g <= n; ++g) {
        const std::size_t size = base + (g <= extra ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i, ++pos) {
            if (g == m)
                plan.test_subjects.push_back(subjects[pos]);
            else
                plan.train_subjects.push_back(subjects[pos]);
        }
    }
    return plan;
}

EvalReport metrics(const std::vector<std::vector<std::size_t>>& confusion) {
    const std::size_t q = confusion.size();
    if (q == 0) throw error("metrics: empty confusion matrix");
    for (const auto& row : confusion)
        if (row.size() != q) throw error("metrics: confusion matrix not square");

    EvalReport r;
    r.confusion = confusion;

    double total = 0.0, diag = 0.0;
    std::vector<double> row_sum(q, 0.0), col_sum(q, 0.0);
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            const double v = static_cast<double>(confusion[i][j]);
            total += v;
            row_sum[i] += v;
            col_sum[j] += v;
            if (i == j) diag += v;
        }
    }
    if (total == 0.0) throw error("metrics: confusion matrix has no samples");

    r.top1 = diag / total;

    double prec_sum = 0.0, rec_sum = 0.0, f1_sum = 0.0;
    for (std::size_t c = 0; c < q; ++c) {
        const double tp = static_cast<double>(confusion[c][c]);
        const double prec = col_sum[c] > 0.0 ? tp / col_sum[c] : 0.0;
        const double rec = row_sum[c] > 0.0 ? tp / row_sum[c] : 0.0;
        const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        prec_sum += prec;
        rec_sum += rec;
        f1_sum += f1;
    }
    r.macro_precision = prec_sum / static_cast<double>(q);
    r.macro_recall = rec_sum / static_cast<double>(q);
    r.macro_f1 = f1_sum / static_cast<double>(q);

    double pe = 0.0;
    for (std::size_t c = 0; c < q; ++c) pe += row_sum[c] * col_sum[c];
    pe /= total * total;
    r.kappa = pe < 1.0 ? (r.top1 - pe) / (1.0 - pe) : 1.0;
    return r;
}

double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& is_positive,
                      std::vector<RocPoint>* curve) {
    if (scores.size() != is_positive.size()) throw error("roc_auc: size mismatch");
    std::size_t pos = 0, neg = 0;
    for (int p : is_positive) (p ? ++pos : ++neg);
    if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    if (curve) {
        curve->clear();
        curve->push_back({0.0, 0.0});
    }
    double auc = 0.0;
    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        // group ties so equal scores advance diagonally in one step
        std::size_t j = i;
        double dtp = 0.0, dfp = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (is_positive[order[j]])
                dtp += 1.0;
            else
                dfp += 1.0;
            ++j;
        }
        const double tpr0 = tp / static_cast<double>(pos);
        tp += dtp;
        fp += dfp;
        const double tpr1 = tp / static_cast<double>(pos);
        auc += (dfp / static_cast<double>(neg)) * 0.5 * (tpr0 + tpr1);
        if (curve) curve->push_back({fp / static_cast<double>(neg), tpr1});
        i = j;
    }
    return auc;
}

void fill_roc_auc(EvalReport& report, const std::vector<std::vector<double>>& class_scores,
                  const std::vector<int>& labels) {
    const std::size_t q = report.confusion.size();
    report.auc.assign(q, std::numeric_limits<double>::quiet_NaN());
    report.roc.assign(q, {});
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < q; ++c) {
        std::vector<double> scores;
        std::vector<int> pos;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            scores.push_back(class_scores[i][c]);
            pos.push_back(labels[i] == static_cast<int>(c) ? 1 : 0);
        }
        report.auc[c] = roc_auc_binary(scores, pos, &report.roc[c]);
        if (std::isfinite(report.auc[c])) {
            sum += report.auc[c];
            ++defined;
        }
    }
    report.macro_auc = defined > 0 ? sum / static_cast<double>(defined)
                                   : std::numeric_limits<double>::quiet_NaN();
}

void write_report_json(const EvalReport& report, const std::vector<std::string>& class_names,
                       const std::string& path,
                       const std::map<std::string, std::string>& extra) {
    nlohmann::ordered_json j;
    j["classes"] = class_names;
    j["confusion"] = report.confusion;
    j["top1"] = report.top1;
    j["macro_precision"] = report.macro_precision;
    j["macro_recall"] = report.macro_recall;
    j["macro_f1"] = report.macro_f1;
    j["kappa"] = report.kappa;
    nlohmann::ordered_json auc = nlohmann::ordered_json::array();
    for (double a : report.auc) {
        if (std::isfinite(a))
            auc.push_back(a);
        else
            auc.push_back(nullptr);
    }
    j["auc"] = auc;
    j["macro_auc"] = std::isfinite(report.macro_auc)
                         ? nlohmann::ordered_json(report.macro_auc)
                         : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json roc = nlohmann::ordered_json::array();
    for (const auto& points : report.roc) {
        nlohmann::ordered_json sweep = nlohmann::ordered_json::array();
        for (const RocPoint& p : points) sweep.push_back({p.fpr, p.tpr});
        roc.push_back(sweep);
    }
    j["roc"] = roc;
    for (const auto& [k, v] : extra) j[k] = v;

    std::ofstream out(path);
    if (!out) throw error("write_report_json: cannot open " + path);
    out << j.dump(2) << '\n';
}

void write_confusion_csv(const EvalReport& report, const std::vector<std::string>& class_names,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw error("write_confusion_csv: cannot open " + path);
    out << "true\\pred";
    for (const std::string& n : class_names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < report.confusion.size(); ++i) {
        out << class_names.at(i);
        for (std::size_t j = 0; j < report.confusion[i].size(); ++j)
            out << ',' << report.confusion[i][j];
        out << '\n';
    }
}

// ---- cross-validation pipeline -----------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    return x ^ (x >> 31);
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& body) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1))
                    body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace

std::vector<linalg::Mat> prepare_trials(const data::DatasetContainer& dataset,
                                        const CvOptions& opt) {
    std::vector<linalg::Mat> prepared(dataset.trials.size());
    const std::size_t threads =
        std::max<std::size_t>(1, std::thread::hardware_concurrency());
    parallel_for(dataset.trials.size(), threads, [&](std::size_t i) {
        const data::Trial& t = dataset.trials[i];
        if (opt.denoise) {
            dsp::Recording rec;
            rec.samples = t.samples;
            rec.rate = static_cast<double>(dataset.rate);
            rec.subject_id = data::DatasetContainer::subject_name(t.subject);
            rec.label = t.label;
            dsp::DenoiseConfig cfg = opt.denoise_cfg;
            cfg.ica_seed = mix_seed(opt.train_cfg.seed, i);
            prepared[i] = dsp::standardize(dsp::denoise(rec, cfg).samples);
        } else {
            prepared[i] = dsp::standardize(t.samples);
        }
    });
    return prepared;
}

FoldRun run_fold(const data::DatasetContainer& dataset,
                 const std::vector<linalg::Mat>& prepared, const graph::ElectrodeGraph& g,
                 const CvOptions& opt, std::size_t fold_index) {
    if (prepared.size() != dataset.trials.size())
        throw error("run_fold: prepared trial count mismatch");
    FoldRun run;
    run.outcome.plan = lgso_split(dataset.subject_ids(), opt.folds, fold_index);

    for (const std::string& s : run.outcome.plan.test_subjects)
        for (const std::string& t : run.outcome.plan.train_subjects)
            if (s == t) throw error("run_fold: subject leakage between folds: " + s);

    std::vector<train::TrialView> train_set, test_set;
    for (std::size_t i = 0; i < dataset.trials.size(); ++i) {
        const std::string subject =
            data::DatasetContainer::subject_name(dataset.trials[i].subject);
        const bool in_test =
            std::find(run.outcome.plan.test_subjects.begin(),
                      run.outcome.plan.test_subjects.end(),
                      subject) != run.outcome.plan.test_subjects.end();
        train::TrialView view{&prepared[i], static_cast<int>(dataset.trials[i].label)};
        (in_test ? test_set : train_set).push_back(view);
    }
    if (train_set.empty() || test_set.empty())
        throw error("run_fold: fold " + std::to_string(fold_index) + " has an empty split");

    model::ModelConfig mcfg = opt.model_cfg;
    mcfg.channels = dataset.channels;
    mcfg.classes = dataset.classes;
    train::TrainConfig tcfg = opt.train_cfg;
    tcfg.seed = mix_seed(opt.train_cfg.seed, 0xF01D + fold_index);

    run.state = model::init_model(mcfg, g, std::nullopt, tcfg.seed);
    run.outcome.history = train::run_training(run.state, train_set, {}, tcfg);

    // evaluate the held-out subjects
    const std::size_t q = dataset.classes;
    std::vector<std::vector<std::size_t>> confusion(q, std::vector<std::size_t>(q, 0));
    std::vector<std::vector<double>> scores;
    std::vector<int> labels;
    for (const train::TrialView& t : test_set) {
        model::Prediction p = model::predict(run.state, *t.z);
        std::size_t best = 0;
        for (std::size_t i = 1; i < p.probs.size(); ++i)
            if (p.probs.at(i) > p.probs.at(best)) best = i;
        confusion[static_cast<std::size_t>(t.label)][best] += 1;
        std::vector<double> row(q);
        for (std::size_t i = 0; i < q; ++i) row[i] = p.probs.at(i);
        scores.push_back(std::move(row));
        labels.push_back(t.label);
    }
    run.outcome.report = metrics(confusion);
    fill_roc_auc(run.outcome.report, scores, labels);

    run.outcome.cluster_groups = run.state.cluster_groups;
    run.outcome.channel_cluster.assign(dataset.channels, run.state.cluster_groups.size());
    for (std::size_t k = 0; k < run.state.cluster_groups.size(); ++k)
        for (std::size_t ch : run.state.cluster_groups[k])
            run.outcome.channel_cluster[ch] = k;
    return run;
}

CvResult run_cv(const data::DatasetContainer& dataset, const graph::ElectrodeGraph& g,
                const CvOptions& opt) {
    if (dataset.trials.empty()) throw error("run_cv: empty dataset");
    std::vector<linalg::Mat> prepared = prepare_trials(dataset, opt);

    CvResult result;
    result.folds.resize(opt.folds);
    const std::size_t threads =
        opt.parallel_folds
            ? std::min<std::size_t>(opt.folds,
                                    std::max<std::size_t>(1, std::thread::hardware_concurrency()))
            : 1;
    parallel_for(opt.folds, threads, [&](std::size_t i) {
        result.folds[i] = run_fold(dataset, prepared, g, opt, i + 1).outcome;
    });

    // aggregate: unweighted means of the fold scalars, summed confusion
    const std::size_t q = dataset.classes;
    EvalReport agg;
    agg.confusion.assign(q, std::vector<std::size_t>(q, 0));
    agg.auc.assign(q, 0.0);
    std::vector<std::size_t> auc_defined(q, 0);
    for (const FoldOutcome& f : result.folds) {
        agg.top1 += f.report.top1;
        agg.macro_precision += f.report.macro_precision;
        agg.macro_recall += f.report.macro_recall;
        agg.macro_f1 += f.report.macro_f1;
        agg.kappa += f.report.kappa;
        for (std::size_t i = 0; i < q; ++i) {
            for (std::size_t j = 0; j < q; ++j) agg.confusion[i][j] += f.report.confusion[i][j];
            if (std::isfinite(f.report.auc[i])) {
                agg.auc[i] += f.report.auc[i];
                ++auc_defined[i];
            }
        }
    }
    const double n = static_cast<double>(result.folds.size());
    agg.top1 /= n;
    agg.macro_precision /= n;
    agg.macro_recall /= n;
    agg.macro_f1 /= n;
    agg.kappa /= n;
    double auc_sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < q; ++i) {
        if (auc_defined[i] > 0) {
            agg.auc[i] /= static_cast<double>(auc_defined[i]);
            auc_sum += agg.auc[i];
            ++defined;
        } else {
            agg.auc[i] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    agg.macro_auc = defined ? auc_sum / static_cast<double>(defined)
                            : std::numeric_limits<double>::quiet_NaN();
    result.aggregate = agg;
    return result;
}

} // namespace gcmcg::eval
