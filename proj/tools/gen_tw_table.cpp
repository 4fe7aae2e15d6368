// Regenerates data/tw1_cdf.txt: Monte-Carlo Tracy-Widom (beta = 1) CDF from
// the largest eigenvalue of real Wishart matrices, drawn through the
// bidiagonal Laguerre model so each draw costs O(n) instead of O(n^3).
//
//   gen_tw_table [--n 400] [--draws 200000] [--seed 20240611] > data/tw1_cdf.txt

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include <CLI11.hpp>

#include "specgeo/rmt_laws.hpp"

namespace {

// Number of eigenvalues of the symmetric tridiagonal (diag, off) below x.
int sturm_count(const std::vector<double>& diag, const std::vector<double>& off2, double x) {
    int count = 0;
    double q = diag[0] - x;
    if (q < 0.0) ++count;
    for (std::size_t i = 1; i < diag.size(); ++i) {
        if (q == 0.0) q = 1e-300;
        q = diag[i] - x - off2[i - 1] / q;
        if (q < 0.0) ++count;
    }
    return count;
}

double largest_eigenvalue(const std::vector<double>& diag, const std::vector<double>& off2) {
    // Gershgorin upper bound.
    double hi = 0.0;
    for (std::size_t i = 0; i < diag.size(); ++i) {
        double r = 0.0;
        if (i > 0) r += std::sqrt(off2[i - 1]);
        if (i + 1 < diag.size()) r += std::sqrt(off2[i]);
        hi = std::max(hi, diag[i] + r);
    }
    double lo = 0.0;
    const int n = static_cast<int>(diag.size());
    while (hi - lo > 1e-12 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (sturm_count(diag, off2, mid) < n) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte-Carlo Tracy-Widom beta=1 CDF table generator"};
    std::size_t n = 400;
    std::size_t draws = 200000;
    std::uint64_t seed = 20240611;
    double s_min = -6.0;
    double s_max = 4.0;
    std::size_t rows = 251;
    app.add_option("--n", n, "Matrix size (n = d)")->capture_default_str();
    app.add_option("--draws", draws, "Monte-Carlo draws")->capture_default_str();
    app.add_option("--seed", seed, "RNG seed")->capture_default_str();
    app.add_option("--rows", rows, "Table rows")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    std::mt19937_64 rng(seed);
    const specgeo::MpParams params(1.0, 1.0);
    std::vector<double> diag(n);
    std::vector<double> off2(n - 1);
    std::vector<double> bidiag(n);
    std::vector<double> sub(n - 1);
    std::vector<double> samples;
    samples.reserve(draws);

    for (std::size_t k = 0; k < draws; ++k) {
        // B lower bidiagonal: B_ii ~ chi_{n-i}, B_{i+1,i} ~ chi_{n-1-i}; BB^T ~ Wishart(n, n).
        for (std::size_t i = 0; i < n; ++i) {
            std::chi_squared_distribution<double> chi(static_cast<double>(n - i));
            bidiag[i] = std::sqrt(chi(rng));
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            std::chi_squared_distribution<double> chi(static_cast<double>(n - 1 - i));
            sub[i] = std::sqrt(chi(rng));
        }
        diag[0] = bidiag[0] * bidiag[0];
        for (std::size_t i = 1; i < n; ++i) diag[i] = sub[i - 1] * sub[i - 1] + bidiag[i] * bidiag[i];
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double t = bidiag[i] * sub[i];
            off2[i] = t * t;
        }
        const double lambda1 = largest_eigenvalue(diag, off2) / static_cast<double>(n);
        samples.push_back(specgeo::tw_standardize(lambda1, params, n));
    }
    std::sort(samples.begin(), samples.end());

    std::printf("# Tracy-Widom beta=1 CDF, Monte-Carlo: largest eigenvalue of (1/n) X^T X,\n");
    std::printf("# X n x n standard Gaussian, n = %zu, %zu draws, seed %llu.\n", n, draws,
                static_cast<unsigned long long>(seed));
    std::printf("# Standardized with the real-Wishart edge scaling used by tw_standardize.\n");
    std::printf("# columns: s F1(s)\n");
    for (std::size_t r = 0; r < rows; ++r) {
        const double s = s_min + (s_max - s_min) * static_cast<double>(r) / static_cast<double>(rows - 1);
        const auto below = std::upper_bound(samples.begin(), samples.end(), s) - samples.begin();
        std::printf("%.4f %.6f\n", s, static_cast<double>(below) / static_cast<double>(draws));
    }
    return 0;
}
