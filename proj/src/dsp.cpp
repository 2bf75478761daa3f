#include "gcmcg/dsp.hpp"
#include "gcmcg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

namespace gcmcg::dsp {

using linalg::Mat;

// ---- filter design -----------------------------------------------------------

void FilterSpec::validate(double rate) const {
    const double nyq = rate / 2.0;
    if (rate <= 0.0) throw error("FilterSpec: rate must be positive");
    if (!(band_low_hz > 0.0) || !(band_low_hz < band_high_hz))
        throw error("FilterSpec: require 0 < band_low < band_high");
    if (band_high_hz >= nyq)
        throw error("FilterSpec: band edge " + std::to_string(band_high_hz) +
                    " Hz at/above Nyquist " + std::to_string(nyq) + " Hz");
    if (notch_hz && (*notch_hz <= 0.0 || *notch_hz >= nyq))
        throw error("FilterSpec: notch " + std::to_string(*notch_hz) + " Hz at/above Nyquist " +
                    std::to_string(nyq) + " Hz");
    if (order < 1 || order > 16) throw error("FilterSpec: order out of range");
}

namespace {

// Left-half-plane Butterworth prototype poles, |s|=1.
std::vector<std::complex<double>> butter_poles(int order) {
    std::vector<std::complex<double>> poles;
    for (int k = 0; k < order; ++k) {
        const double theta =
            std::numbers::pi * (2.0 * k + order + 1.0) / (2.0 * order);
        poles.emplace_back(std::cos(theta), std::sin(theta));
    }
    return poles;
}

// Bilinear transform of a unity-gain second-order analog section with pole
// pair re +- i*im and |pole| = omega. Highpass sections carry the (z-1)^2
// numerator, lowpass omega^2 (z+1)^2.
Biquad bilinear_pair(double re, double omega, bool highpass) {
    const double w2 = omega * omega;
    const double a0 = 1.0 - 2.0 * re + w2;
    Biquad s{};
    if (highpass) {
        s.b0 = 1.0 / a0;
        s.b1 = -2.0 / a0;
        s.b2 = 1.0 / a0;
    } else {
        s.b0 = w2 / a0;
        s.b1 = 2.0 * w2 / a0;
        s.b2 = w2 / a0;
    }
    s.a1 = (2.0 * w2 - 2.0) / a0;
    s.a2 = (1.0 + 2.0 * re + w2) / a0;
    return s;
}

Biquad bilinear_real(double omega, bool highpass) {
    const double a0 = 1.0 + omega;
    Biquad s{};
    if (highpass) {
        s.b0 = 1.0 / a0;
        s.b1 = -1.0 / a0;
    } else {
        s.b0 = omega / a0;
        s.b1 = omega / a0;
    }
    s.b2 = 0.0;
    s.a1 = (omega - 1.0) / a0;
    s.a2 = 0.0;
    return s;
}

std::vector<Biquad> butter(int order, double cutoff_hz, double rate, bool highpass) {
    if (order < 1) throw error("butter: order must be >= 1");
    if (cutoff_hz <= 0.0 || cutoff_hz >= rate / 2.0)
        throw error("butter: cutoff " + std::to_string(cutoff_hz) + " Hz at/above Nyquist " +
                    std::to_string(rate / 2.0) + " Hz");
    const double omega = std::tan(std::numbers::pi * cutoff_hz / rate);
    std::vector<Biquad> sections;
    auto poles = butter_poles(order);
    std::vector<bool> used(poles.size(), false);
    for (std::size_t i = 0; i < poles.size(); ++i) {
        if (used[i]) continue;
        if (std::fabs(poles[i].imag()) < 1e-12) {
            // real pole: p = -omega (LP) or -omega (HP after 1/s transform)
            sections.push_back(bilinear_real(omega, highpass));
            used[i] = true;
        } else {
            // conjugate pair; the 1/s highpass transform keeps |p| = omega
            // and flips nothing that matters for the section denominator.
            const double re = omega * poles[i].real();
            sections.push_back(bilinear_pair(re, omega, highpass));
            used[i] = true;
            for (std::size_t j = i + 1; j < poles.size(); ++j) {
                if (!used[j] && std::fabs(poles[j].real() - poles[i].real()) < 1e-12 &&
                    std::fabs(poles[j].imag() + poles[i].imag()) < 1e-12) {
                    used[j] = true;
                    break;
                }
            }
        }
    }
    return sections;
}

} // namespace

std::vector<Biquad> butter_lowpass(int order, double cutoff_hz, double rate) {
    return butter(order, cutoff_hz, rate, false);
}

std::vector<Biquad> butter_highpass(int order, double cutoff_hz, double rate) {
    return butter(order, cutoff_hz, rate, true);
}

Biquad notch_biquad(double f0_hz, double rate, double q) {
    if (f0_hz <= 0.0 || f0_hz >= rate / 2.0)
        throw error("notch: frequency " + std::to_string(f0_hz) + " Hz at/above Nyquist");
    if (q <= 0.0) throw error("notch: q must be positive");
    // q is f0 over the -3 dB bandwidth, prewarped for the bilinear transform
    const double w0 = 2.0 * std::numbers::pi * f0_hz / rate;
    const double beta = std::tan(w0 / (2.0 * q) / 2.0);
    const double gain = 1.0 / (1.0 + beta);
    Biquad s{};
    s.b0 = gain;
    s.b1 = -2.0 * std::cos(w0) * gain;
    s.b2 = gain;
    s.a1 = s.b1;
    s.a2 = 2.0 * gain - 1.0;
    return s;
}

// ---- zero-phase filtering ------------------------------------------------------

namespace {

// steady-state initial conditions for a unit step (direct form II transposed)
void section_zi(const Biquad& s, double& z1, double& z2) {
    const double k = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    z1 = k - s.b0;
    z2 = s.b2 - s.a2 * k;
}

void apply_section(const Biquad& s, std::vector<double>& x) {
    double z1, z2;
    section_zi(s, z1, z2);
    z1 *= x.empty() ? 0.0 : x[0];
    z2 *= x.empty() ? 0.0 : x[0];
    for (double& v : x) {
        const double in = v;
        const double out = s.b0 * in + z1;
        z1 = s.b1 * in - s.a1 * out + z2;
        z2 = s.b2 * in - s.a2 * out;
        v = out;
    }
}

double max_pole_radius(const std::vector<Biquad>& sections) {
    double r = 0.0;
    for (const Biquad& s : sections) {
        const double disc = s.a1 * s.a1 - 4.0 * s.a2;
        if (disc >= 0.0) {
            const double root = std::sqrt(disc);
            r = std::max(r, std::fabs((-s.a1 + root) / 2.0));
            r = std::max(r, std::fabs((-s.a1 - root) / 2.0));
        } else {
            r = std::max(r, std::sqrt(s.a2));
        }
    }
    return r;
}

} // namespace

std::vector<double> sosfiltfilt(const std::vector<Biquad>& sections, const std::vector<double>& x,
                                std::size_t padlen) {
    if (sections.empty()) return x;
    const std::size_t n = x.size();
    if (n < 4) throw error("sosfiltfilt: signal too short");

    if (padlen == 0) padlen = 3 * (2 * sections.size() + 1);
    padlen = std::min(padlen, n - 1);

    // odd reflection on both ends
    std::vector<double> ext;
    ext.reserve(n + 2 * padlen);
    for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[0] - x[padlen - i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 2 - i]);

    for (const Biquad& s : sections) apply_section(s, ext);
    std::reverse(ext.begin(), ext.end());
    for (const Biquad& s : sections) apply_section(s, ext);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<long>(padlen),
                               ext.begin() + static_cast<long>(padlen + n));
}

namespace {

// Slow poles need reflection runway for their transients; resonant stopband
// sections (the notch) do best with the short scipy-style default.
std::size_t chain_padlen(const std::vector<Biquad>& chain, std::size_t n) {
    const double r = std::min(max_pole_radius(chain), 0.999999);
    const std::size_t by_decay = static_cast<std::size_t>(std::ceil(6.0 / (1.0 - r)));
    const std::size_t floor_len = 3 * (2 * chain.size() + 1);
    return std::min(n - 1, std::max(floor_len, by_decay));
}

} // namespace

Recording frequency_filter(const Recording& rec, const FilterSpec& spec) {
    spec.validate(rec.rate);
    const std::size_t n = rec.samples.cols;

    std::vector<std::pair<std::vector<Biquad>, std::size_t>> passes;
    if (spec.notch_hz) {
        std::vector<Biquad> nb{notch_biquad(*spec.notch_hz, rec.rate, spec.notch_q)};
        passes.emplace_back(nb, 3 * (2 * nb.size() + 1));
    }
    auto hp = butter_highpass(spec.order, spec.band_low_hz, rec.rate);
    passes.emplace_back(hp, chain_padlen(hp, n));
    auto lp = butter_lowpass(spec.order, spec.band_high_hz, rec.rate);
    passes.emplace_back(lp, chain_padlen(lp, n));

    Recording out = rec;
    for (std::size_t c = 0; c < rec.samples.rows; ++c) {
        std::vector<double> row(rec.samples.row(c), rec.samples.row(c) + n);
        for (const auto& [chain, padlen] : passes) row = sosfiltfilt(chain, row, padlen);
        std::copy(row.begin(), row.end(), out.samples.row(c));
    }
    return out;
}

// ---- FastICA -------------------------------------------------------------------

IcaModel fastica(const Mat& x, int max_iter, double tol, std::uint64_t seed, bool strict) {
    const std::size_t C = x.rows, S = x.cols;
    if (C < 2) throw error("fastica: need at least 2 channels, got " + std::to_string(C));
    if (S < 10 * C)
        throw error("fastica: need at least 10*C samples, got " + std::to_string(S) + " for C=" +
                    std::to_string(C));

    IcaModel model;
    model.seed = seed;
    model.row_means.resize(C);
    Mat xc = x;
    for (std::size_t i = 0; i < C; ++i) {
        double mu = kernels::active().sum(xc.row(i), S) / static_cast<double>(S);
        model.row_means[i] = mu;
        for (std::size_t j = 0; j < S; ++j) xc(i, j) -= mu;
    }

    // whiten
    Mat cov(C, C);
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = i; j < C; ++j) {
            const double v = kernels::active().dot(xc.row(i), xc.row(j), S) / static_cast<double>(S);
            cov(i, j) = cov(j, i) = v;
        }
    auto eig = linalg::jacobi_eigen(cov);
    const double lmax = eig.values.back();
    if (lmax <= 0.0 || eig.values.front() <= 1e-12 * lmax)
        throw error("fastica: rank-deficient input (eigenvalue ratio " +
                    std::to_string(eig.values.front() / std::max(lmax, 1e-300)) + ")");
    Mat whiten(C, C);
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j)
            whiten(i, j) = eig.vectors(j, i) / std::sqrt(eig.values[i]);
    Mat xw = linalg::matmul(whiten, xc);

    // random orthonormal start
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat w(C, C);
    for (double& v : w.a) v = gauss(rng);
    w = linalg::matmul(linalg::inv_sqrt_spd(linalg::matmul(w, linalg::transpose(w))), w);

    int iter = 0;
    bool converged = false;
    for (; iter < max_iter; ++iter) {
        Mat u = linalg::matmul(w, xw); // C x S projections
        Mat gu(C, S);
        std::vector<double> gprime_mean(C, 0.0);
        for (std::size_t i = 0; i < C; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < S; ++j) {
                const double t = std::tanh(u(i, j));
                gu(i, j) = t;
                acc += 1.0 - t * t;
            }
            gprime_mean[i] = acc / static_cast<double>(S);
        }
        Mat wn(C, C);
        // w_new_i = E[x g(w_i x)] - E[g'(w_i x)] w_i
        Mat exg = linalg::matmul(gu, linalg::transpose(xw));
        for (std::size_t i = 0; i < C; ++i)
            for (std::size_t j = 0; j < C; ++j)
                wn(i, j) = exg(i, j) / static_cast<double>(S) - gprime_mean[i] * w(i, j);
        wn = linalg::matmul(linalg::inv_sqrt_spd(linalg::matmul(wn, linalg::transpose(wn))), wn);

        double delta = 0.0;
        for (std::size_t i = 0; i < C; ++i) {
            const double d = std::fabs(
                1.0 - std::fabs(kernels::active().dot(wn.row(i), w.row(i), C)));
            delta = std::max(delta, d);
        }
        w = std::move(wn);
        if (delta < tol) {
            converged = true;
            ++iter;
            break;
        }
    }
    if (!converged && strict)
        throw error("fastica: no convergence within " + std::to_string(max_iter) +
                    " iterations (tol " + std::to_string(tol) + ")");

    model.converged = converged;
    model.iterations = iter;
    model.unmixing = linalg::matmul(w, whiten);
    model.mixing = linalg::invert(model.unmixing);
    // normalize mixing columns so the sources keep the input's physical scale
    for (std::size_t j = 0; j < C; ++j) {
        double nrm = 0.0;
        for (std::size_t i = 0; i < C; ++i) nrm += model.mixing(i, j) * model.mixing(i, j);
        nrm = std::sqrt(nrm);
        if (nrm <= 0.0) continue;
        for (std::size_t i = 0; i < C; ++i) model.mixing(i, j) /= nrm;
        for (std::size_t i = 0; i < C; ++i) model.unmixing(j, i) *= nrm;
    }
    model.sources = linalg::matmul(model.unmixing, xc);
    return model;
}

// ---- kurtosis screen -------------------------------------------------------------

double excess_kurtosis(const std::vector<double>& s) {
    const std::size_t n = s.size();
    if (n < 4) throw error("excess_kurtosis: need at least 4 samples");
    double mu = 0.0;
    for (double v : s) mu += v;
    mu /= static_cast<double>(n);
    double m2 = 0.0, m4 = 0.0;
    for (double v : s) {
        const double d = v - mu;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    if (m2 <= 0.0) throw error("excess_kurtosis: zero variance");
    return m4 / (m2 * m2) - 3.0;
}

ScreenResult screen_components(const Mat& sources, double threshold) {
    ScreenResult r;
    r.sources = sources;
    for (std::size_t i = 0; i < sources.rows; ++i) {
        std::vector<double> row(sources.row(i), sources.row(i) + sources.cols);
        if (excess_kurtosis(row) < threshold) {
            std::fill(r.sources.row(i), r.sources.row(i) + r.sources.cols, 0.0);
            r.zeroed.push_back(i);
        }
    }
    return r;
}

// ---- full pipeline -----------------------------------------------------------------

Recording denoise(const Recording& rec, const DenoiseConfig& cfg) {
    Recording filtered = frequency_filter(rec, cfg.filter);
    const std::size_t C = filtered.samples.rows, S = filtered.samples.cols;

    IcaModel ica;
    if (!cfg.ica_strict) {
        ica = fastica(filtered.samples, cfg.ica_max_iter, cfg.ica_tol, cfg.ica_seed, false);
    } else {
        std::uint64_t seed = cfg.ica_seed;
        for (int attempt = 0;; ++attempt) {
            try {
                ica = fastica(filtered.samples, cfg.ica_max_iter, cfg.ica_tol, seed, true);
                break;
            } catch (const error&) {
                if (attempt + 1 >= std::max(1, cfg.ica_retries)) throw;
                seed = seed * 6364136223846793005ULL + 1442695040888963407ULL;
            }
        }
    }
    ScreenResult screened = screen_components(ica.sources, cfg.kurt_threshold);

    int levels = cfg.wavelet_levels;
    const int feasible = max_dwt_levels(S, cfg.boundary);
    const int by_log = static_cast<int>(std::floor(std::log2(static_cast<double>(S))));
    if (levels <= 0) levels = std::min(by_log, feasible);
    levels = std::min(levels, feasible);
    if (levels < 1) throw error("denoise: signal too short for wavelet decomposition");

    Mat shat = screened.sources;
    if (cfg.lambda_scale > 0.0) {
        for (std::size_t i = 0; i < C; ++i) {
            bool zeroed = std::find(screened.zeroed.begin(), screened.zeroed.end(), i) !=
                          screened.zeroed.end();
            if (zeroed) continue;
            std::vector<double> comp(shat.row(i), shat.row(i) + S);
            WaveletDecomposition d = dwt(comp, levels, cfg.boundary);
            const double lambda = cfg.lambda_scale * universal_threshold(d.details[0], S);
            if (lambda > 0.0)
                for (auto& cd : d.details) cd = shrink(cd, lambda);
            std::vector<double> rebuilt = idwt(d);
            std::copy(rebuilt.begin(), rebuilt.end(), shat.row(i));
        }
    }

    Mat xhat = linalg::matmul(ica.mixing, shat);
    Recording out = rec;
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < S; ++j) out.samples(i, j) = xhat(i, j) + ica.row_means[i];
    return out;
}

linalg::Mat standardize(const Mat& x) {
    Mat z(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) mu += x(i, j);
        mu /= static_cast<double>(x.cols);
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double d = x(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(x.cols);
        if (var <= 0.0)
            throw error("standardize: channel " + std::to_string(i) + " has zero variance");
        const double inv = 1.0 / std::sqrt(var);
        for (std::size_t j = 0; j < x.cols; ++j) z(i, j) = (x(i, j) - mu) * inv;
    }
    return z;
}

} // namespace gcmcg::dsp
