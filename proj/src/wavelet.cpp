#include "gcmcg/wavelet.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace gcmcg::dsp {

namespace {

using cplx = std::complex<double>;

// Durand-Kerner root finding for small polynomials (ascending coefficients).
std::vector<cplx> poly_roots(const std::vector<double>& coeffs) {
    const std::size_t deg = coeffs.size() - 1;
    std::vector<cplx> r(deg);
    for (std::size_t i = 0; i < deg; ++i)
        r[i] = std::pow(cplx(0.4, 0.9), static_cast<double>(i + 1));
    auto eval = [&](cplx x) {
        cplx acc = coeffs.back();
        for (std::size_t i = coeffs.size() - 1; i-- > 0;) acc = acc * x + coeffs[i];
        return acc;
    };
    const cplx lead = coeffs.back();
    for (int iter = 0; iter < 500; ++iter) {
        double shift = 0.0;
        for (std::size_t i = 0; i < deg; ++i) {
            cplx denom = lead;
            for (std::size_t j = 0; j < deg; ++j)
                if (j != i) denom *= (r[i] - r[j]);
            const cplx delta = eval(r[i]) / denom;
            r[i] -= delta;
            shift = std::max(shift, std::abs(delta));
        }
        if (shift < 1e-15) break;
    }
    return r;
}

// Build the Daubechies lowpass filter with p vanishing moments via spectral
// factorization of P(y) = sum_k C(p-1+k, k) y^k, keeping roots inside the
// unit circle.
std::vector<double> daubechies_lowpass(int p) {
    // binomial coefficients C(p-1+k, k)
    std::vector<double> P(p);
    P[0] = 1.0;
    for (int k = 1; k < p; ++k)
        P[k] = P[k - 1] * static_cast<double>(p - 1 + k) / static_cast<double>(k);

    // Each root y of P maps to a quadratic in z: z^2 - (2 - 4y) z + 1 = 0.
    std::vector<cplx> zroots;
    for (const cplx& y : poly_roots(P)) {
        const cplx b = 2.0 - 4.0 * y;
        const cplx disc = std::sqrt(b * b - 4.0);
        cplx z1 = (b + disc) / 2.0;
        cplx z2 = (b - disc) / 2.0;
        zroots.push_back(std::abs(z1) < std::abs(z2) ? z1 : z2);
    }

    // Q(z) = prod (z - z_k), expanded
    std::vector<cplx> q{1.0};
    for (const cplx& zr : zroots) {
        std::vector<cplx> nq(q.size() + 1, 0.0);
        for (std::size_t i = 0; i < q.size(); ++i) {
            nq[i + 1] += q[i];
            nq[i] -= q[i] * zr;
        }
        q = nq;
    }

    // multiply by (1 + z)^p
    std::vector<cplx> h = q;
    for (int rep = 0; rep < p; ++rep) {
        std::vector<cplx> nh(h.size() + 1, 0.0);
        for (std::size_t i = 0; i < h.size(); ++i) {
            nh[i] += h[i];
            nh[i + 1] += h[i];
        }
        h = nh;
    }

    std::vector<double> out(h.size());
    double s = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        out[i] = h[i].real();
        s += out[i];
    }
    const double target = std::sqrt(2.0);
    for (double& v : out) v *= target / s;
    return out;
}

std::vector<double> qmf_highpass(const std::vector<double>& low) {
    const std::size_t L = low.size();
    std::vector<double> g(L);
    for (std::size_t n = 0; n < L; ++n)
        g[n] = (n % 2 == 0 ? 1.0 : -1.0) * low[L - 1 - n];
    return g;
}

int valuation2(std::size_t n) {
    int v = 0;
    while (n > 1 && n % 2 == 0) {
        n /= 2;
        ++v;
    }
    return v;
}

// one analysis step, periodic boundary; n must be even
void dwt_step_periodic(const std::vector<double>& x, std::vector<double>& ca,
                       std::vector<double>& cd) {
    const auto& h = db4_lowpass();
    const auto& g = db4_highpass();
    const std::size_t n = x.size(), half = n / 2, L = h.size();
    ca.assign(half, 0.0);
    cd.assign(half, 0.0);
    for (std::size_t k = 0; k < half; ++k) {
        double a = 0.0, d = 0.0;
        for (std::size_t m = 0; m < L; ++m) {
            const double v = x[(2 * k + m) % n];
            a += v * h[m];
            d += v * g[m];
        }
        ca[k] = a;
        cd[k] = d;
    }
}

std::vector<double> idwt_step_periodic(const std::vector<double>& ca,
                                       const std::vector<double>& cd) {
    const auto& h = db4_lowpass();
    const auto& g = db4_highpass();
    const std::size_t half = ca.size(), n = 2 * half, L = h.size();
    std::vector<double> x(n, 0.0);
    for (std::size_t k = 0; k < half; ++k) {
        for (std::size_t m = 0; m < L; ++m) {
            x[(2 * k + m) % n] += ca[k] * h[m] + cd[k] * g[m];
        }
    }
    return x;
}

double sym_sample(const std::vector<double>& x, long i) {
    // half-sample symmetric extension: ... x1 x0 | x0 x1 ... xn-1 | xn-1 ...
    const long n = static_cast<long>(x.size());
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return x[static_cast<std::size_t>(i)];
}

void dwt_step_symmetric(const std::vector<double>& x, std::vector<double>& ca,
                        std::vector<double>& cd) {
    const auto& h = db4_lowpass();
    const auto& g = db4_highpass();
    const long n = static_cast<long>(x.size());
    const long L = static_cast<long>(h.size());
    const std::size_t out_len = static_cast<std::size_t>((n + L - 1) / 2);
    ca.assign(out_len, 0.0);
    cd.assign(out_len, 0.0);
    for (std::size_t k = 0; k < out_len; ++k) {
        double a = 0.0, d = 0.0;
        for (long m = 0; m < L; ++m) {
            const double v = sym_sample(x, 2 * static_cast<long>(k) + m - (L - 2));
            a += v * h[static_cast<std::size_t>(L - 1 - m)];
            d += v * g[static_cast<std::size_t>(L - 1 - m)];
        }
        ca[k] = a;
        cd[k] = d;
    }
}

std::vector<double> idwt_step_symmetric(const std::vector<double>& ca,
                                        const std::vector<double>& cd, std::size_t out_len) {
    const auto& h = db4_lowpass();
    const auto& g = db4_highpass();
    const long L = static_cast<long>(h.size());
    const long m = static_cast<long>(ca.size());
    // full upsampled convolution with the reversed (reconstruction) filters,
    // then crop L-2 leading samples
    const long full = 2 * m + L - 2;
    std::vector<double> buf(static_cast<std::size_t>(full), 0.0);
    for (long k = 0; k < m; ++k) {
        for (long t = 0; t < L; ++t) {
            const long pos = 2 * k + t;
            if (pos >= 0 && pos < full) {
                buf[static_cast<std::size_t>(pos)] +=
                    ca[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(L - 1 - t)] +
                    cd[static_cast<std::size_t>(k)] * g[static_cast<std::size_t>(L - 1 - t)];
            }
        }
    }
    std::vector<double> out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) out[i] = buf[i + static_cast<std::size_t>(L - 2)];
    return out;
}

} // namespace

const std::vector<double>& db4_lowpass() {
    static const std::vector<double> h = daubechies_lowpass(4);
    return h;
}

const std::vector<double>& db4_highpass() {
    static const std::vector<double> g = qmf_highpass(db4_lowpass());
    return g;
}

int max_dwt_levels(std::size_t n, Boundary boundary) {
    if (n < 2) return 0;
    if (boundary == Boundary::periodic) return valuation2(n);
    const std::size_t L = db4_lowpass().size();
    int lv = 0;
    while (n >= L) {
        n /= 2;
        ++lv;
    }
    return lv;
}

WaveletDecomposition dwt(const std::vector<double>& signal, int levels, Boundary boundary) {
    if (levels < 1) throw error("dwt: levels must be >= 1");
    const int feasible = max_dwt_levels(signal.size(), boundary);
    if (levels > feasible)
        throw error("dwt: " + std::to_string(levels) + " levels infeasible for length " +
                    std::to_string(signal.size()) + " (max " + std::to_string(feasible) + ")");
    WaveletDecomposition d;
    d.levels = levels;
    d.boundary = boundary;
    d.signal_length = signal.size();
    std::vector<double> cur = signal;
    for (int lv = 0; lv < levels; ++lv) {
        std::vector<double> ca, cd;
        if (boundary == Boundary::periodic)
            dwt_step_periodic(cur, ca, cd);
        else
            dwt_step_symmetric(cur, ca, cd);
        d.details.push_back(std::move(cd));
        cur = std::move(ca);
    }
    d.approx = std::move(cur);
    return d;
}

std::vector<double> idwt(const WaveletDecomposition& d) {
    if (d.levels < 1 || d.details.size() != static_cast<std::size_t>(d.levels))
        throw error("idwt: inconsistent decomposition");
    std::vector<double> cur = d.approx;
    // reconstruct the per-level lengths seen during analysis
    std::vector<std::size_t> lens(static_cast<std::size_t>(d.levels) + 1);
    lens[0] = d.signal_length;
    const std::size_t L = db4_lowpass().size();
    for (int lv = 0; lv < d.levels; ++lv) {
        lens[static_cast<std::size_t>(lv) + 1] =
            d.boundary == Boundary::periodic ? lens[static_cast<std::size_t>(lv)] / 2
                                             : (lens[static_cast<std::size_t>(lv)] + L - 1) / 2;
    }
    for (int lv = d.levels - 1; lv >= 0; --lv) {
        const auto& cd = d.details[static_cast<std::size_t>(lv)];
        if (cd.size() != cur.size()) throw error("idwt: coefficient length mismatch");
        if (d.boundary == Boundary::periodic)
            cur = idwt_step_periodic(cur, cd);
        else
            cur = idwt_step_symmetric(cur, cd, lens[static_cast<std::size_t>(lv)]);
    }
    return cur;
}

double shrink_coeff(double c, double lambda) {
    if (c > lambda) return c * (1.0 - std::exp((lambda - c) / 1.5));
    if (c < -lambda) return (-c) * (std::exp((lambda + c) / 1.5) - 1.0);
    return 0.0;
}

std::vector<double> shrink(const std::vector<double>& detail, double lambda) {
    if (lambda <= 0.0) throw error("shrink: lambda must be positive");
    std::vector<double> out(detail.size());
    for (std::size_t i = 0; i < detail.size(); ++i) out[i] = shrink_coeff(detail[i], lambda);
    return out;
}

double universal_threshold(const std::vector<double>& finest_detail, std::size_t n) {
    if (finest_detail.empty()) throw error("universal_threshold: empty detail vector");
    std::vector<double> mag(finest_detail.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::fabs(finest_detail[i]);
    std::sort(mag.begin(), mag.end());
    const std::size_t m = mag.size();
    const double med = (m % 2 == 1) ? mag[m / 2] : 0.5 * (mag[m / 2 - 1] + mag[m / 2]);
    const double sigma = med / 0.6745;
    return sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

} // namespace gcmcg::dsp
