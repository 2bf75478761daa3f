#pragma once

#include "gcmcg/linalg.hpp"

#include <cstddef>
#include <vector>

namespace gcmcg::dsp {

enum class Boundary { periodic, symmetric };

struct WaveletDecomposition {
    std::vector<double> approx;               // cA at the deepest level
    std::vector<std::vector<double>> details; // details[0] = finest level cD1
    int levels = 0;
    Boundary boundary = Boundary::periodic;
    std::size_t signal_length = 0;
};

// Daubechies filter with 4 vanishing moments (8 taps), derived by spectral
// factorization at startup. Lowpass sums to sqrt(2).
const std::vector<double>& db4_lowpass();
const std::vector<double>& db4_highpass();

int max_dwt_levels(std::size_t n, Boundary boundary);

WaveletDecomposition dwt(const std::vector<double>& signal, int levels,
                         Boundary boundary = Boundary::periodic);
std::vector<double> idwt(const WaveletDecomposition& d);

// Exponential-taper threshold: zero inside the dead zone, smooth shrink
// toward identity far outside it. Odd by construction.
double shrink_coeff(double c, double lambda);
std::vector<double> shrink(const std::vector<double>& detail, double lambda);

// sigma_hat * sqrt(2 ln n) with sigma_hat = median(|finest detail|) / 0.6745.
double universal_threshold(const std::vector<double>& finest_detail, std::size_t n);

} // namespace gcmcg::dsp
