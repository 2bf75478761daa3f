#pragma once

#include "gcmcg/dataset.hpp"
#include "gcmcg/dsp.hpp"
#include "gcmcg/linalg.hpp"
#include "gcmcg/model.hpp"
#include "gcmcg/train.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gcmcg::eval {

struct FoldPlan {
    std::size_t groups = 0; // N
    std::size_t index = 0;  // m, 1-based
    std::vector<std::string> test_subjects;
    std::vector<std::string> train_subjects;
};

// Algorithm: subjects sorted by id, base size floor(|S|/N), the first
// |S| mod N groups take one extra, group m is the test set.
FoldPlan lgso_split(std::vector<std::string> subjects, std::size_t n, std::size_t m);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct EvalReport {
    std::vector<std::vector<std::size_t>> confusion; // [true][predicted]
    double top1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double kappa = 0.0;
    std::vector<double> auc;       // per class, NaN when undefined
    double macro_auc = 0.0;        // over defined classes
    std::vector<std::vector<RocPoint>> roc; // per class sweep
};

// Scalar metrics from a confusion matrix; 0/0 precision or recall is 0,
// kappa uses p_e = sum_q row_q * col_q / T^2.
EvalReport metrics(const std::vector<std::vector<std::size_t>>& confusion);

// Trapezoidal one-vs-rest AUC over the full threshold sweep (ties grouped);
// positives ranked by score. Returns NaN when a class lacks positives or
// negatives.
double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& is_positive,
                      std::vector<RocPoint>* curve = nullptr);

// Per-class one-vs-rest AUC from per-sample class scores.
void fill_roc_auc(EvalReport& report, const std::vector<std::vector<double>>& class_scores,
                  const std::vector<int>& labels);

void write_report_json(const EvalReport& report, const std::vector<std::string>& class_names,
                       const std::string& path,
                       const std::map<std::string, std::string>& extra = {});
void write_confusion_csv(const EvalReport& report, const std::vector<std::string>& class_names,
                         const std::string& path);

// ---- cross-validation pipeline ------------------------------------------------

struct CvOptions {
    model::ModelConfig model_cfg;
    train::TrainConfig train_cfg;
    dsp::DenoiseConfig denoise_cfg;
    bool denoise = true;
    std::size_t folds = 2;
    bool parallel_folds = true;
};

struct FoldOutcome {
    FoldPlan plan;
    EvalReport report;
    train::History history;
    std::vector<std::vector<std::size_t>> cluster_groups;
    std::vector<std::size_t> channel_cluster; // per dataset channel; K = unassigned
};

struct CvResult {
    std::vector<FoldOutcome> folds;
    EvalReport aggregate; // unweighted means of the fold scalars, confusion summed
};

// Per-trial denoising (no cross-trial statistics) followed by per-channel
// standardization; shared by every fold.
std::vector<linalg::Mat> prepare_trials(const data::DatasetContainer& dataset,
                                        const CvOptions& opt);

struct FoldRun {
    FoldOutcome outcome;
    model::ModelState state;
};

// Train on the fold's train subjects, evaluate on its test subjects.
FoldRun run_fold(const data::DatasetContainer& dataset,
                 const std::vector<linalg::Mat>& prepared, const graph::ElectrodeGraph& g,
                 const CvOptions& opt, std::size_t fold_index);

CvResult run_cv(const data::DatasetContainer& dataset, const graph::ElectrodeGraph& g,
                const CvOptions& opt);

} // namespace gcmcg::eval
