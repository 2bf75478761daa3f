#pragma once

#include "gcmcg/linalg.hpp"
#include "gcmcg/wavelet.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gcmcg::dsp {

struct Recording {
    linalg::Mat samples; // C x S, microvolts
    double rate = 0.0;
    std::vector<std::string> channel_names;
    std::string subject_id;
    int label = 0;
};

struct FilterSpec {
    std::optional<double> notch_hz;
    double band_low_hz = 0.2;
    double band_high_hz = 75.0;
    int order = 4; // per Butterworth half (highpass and lowpass cascade)
    double notch_q = 30.0;

    void validate(double rate) const;
};

// Normalized biquad section (a0 == 1).
struct Biquad {
    double b0, b1, b2, a1, a2;
};

std::vector<Biquad> butter_lowpass(int order, double cutoff_hz, double rate);
std::vector<Biquad> butter_highpass(int order, double cutoff_hz, double rate);
Biquad notch_biquad(double f0_hz, double rate, double q);

// Zero-phase (forward-backward) cascade filtering with odd-reflection padding
// and steady-state section initialization. padlen 0 selects 3*(2*nsec+1).
std::vector<double> sosfiltfilt(const std::vector<Biquad>& sections,
                                const std::vector<double>& x, std::size_t padlen = 0);

Recording frequency_filter(const Recording& rec, const FilterSpec& spec);

struct IcaModel {
    linalg::Mat mixing;   // Phi, C x C
    linalg::Mat unmixing; // Phi^{-1}
    linalg::Mat sources;  // unmixing * centered input, C x S
    std::vector<double> row_means;
    int iterations = 0;
    bool converged = false;
    std::uint64_t seed = 0;
};

// Symmetric-decorrelation fixed-point FastICA with tanh contrast on centered,
// whitened data. In strict mode a run that fails to meet tol within max_iter
// throws; otherwise the final (still orthogonal) iterate is returned with
// converged = false. Inputs with an exactly Gaussian subspace have no fixed
// point in that subspace, so pipelines pass strict = false.
IcaModel fastica(const linalg::Mat& x, int max_iter = 500, double tol = 1e-6,
                 std::uint64_t seed = 1, bool strict = true);

// Population excess kurtosis: E[(s-mu)^4]/sigma^4 - 3.
double excess_kurtosis(const std::vector<double>& s);

struct ScreenResult {
    linalg::Mat sources;
    std::vector<std::size_t> zeroed;
};

// Rows with excess kurtosis below the threshold are replaced by zeros.
ScreenResult screen_components(const linalg::Mat& sources, double threshold = 0.5);

struct DenoiseConfig {
    FilterSpec filter;
    double kurt_threshold = 0.5;
    int wavelet_levels = 0;       // 0 = floor(log2(S)) capped at feasible depth
    double lambda_scale = 1.0;    // scales the universal threshold; 0 disables shrinkage
    Boundary boundary = Boundary::periodic;
    int ica_max_iter = 500;
    // Looser than the fastica() default: mixed rhythm-plus-noise trials keep a
    // near-degenerate noise subspace whose rotation never settles to 1e-6.
    double ica_tol = 1e-4;
    std::uint64_t ica_seed = 1;
    bool ica_strict = false;
    int ica_retries = 3; // deterministic re-seeds before giving up (strict mode)
};

// Full two-stage pipeline: frequency filter, FastICA, kurtosis screen,
// per-component wavelet shrinkage, reconstruction through the mixing matrix.
Recording denoise(const Recording& rec, const DenoiseConfig& cfg);

// Per-channel mean removal and scaling by the population standard deviation.
linalg::Mat standardize(const linalg::Mat& x);

} // namespace gcmcg::dsp
