#pragma once

// Random-matrix reference laws: Marchenko-Pastur, Wigner semicircle,
// Tracy-Widom edge statistics and the BBP detection threshold.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace specgeo {

/// Descending, nonnegative eigenvalues of a sample covariance together with the
/// shape (n samples x d features) of the matrix they came from. Only the
/// min(n, d) potentially nonzero eigenvalues are stored.
struct EigenSpectrum {
    std::vector<double> values;
    std::size_t n_samples = 0;
    std::size_t d_features = 0;

    std::size_t size() const noexcept { return values.size(); }
    bool empty() const noexcept { return values.empty(); }
    double largest() const { return values.front(); }
    double trace() const;
};

/// Builds a spectrum from raw eigenvalues: sorts descending and clamps tiny
/// negatives (within 1e-10 of the largest magnitude) to zero. Throws
/// DataError on non-finite or clearly negative values and
/// std::invalid_argument when values.size() != min(n, d).
EigenSpectrum make_spectrum(std::vector<double> values, std::size_t n_samples,
                            std::size_t d_features);

/// Square-shape convenience (n = d = values.size()).
EigenSpectrum make_spectrum(std::vector<double> values);

/// Marchenko-Pastur parameters. The support edges are always derived from
/// (sigma2, q) so they can never drift out of sync.
class MpParams {
public:
    MpParams(double sigma2, double q);

    double sigma2() const noexcept { return sigma2_; }
    double q() const noexcept { return q_; }
    double lambda_minus() const noexcept { return lambda_minus_; }
    double lambda_plus() const noexcept { return lambda_plus_; }

    /// Mass of the continuous part of the law: min(1, 1/q).
    double bulk_mass() const noexcept;

private:
    double sigma2_;
    double q_;
    double lambda_minus_;
    double lambda_plus_;
};

std::pair<double, double> mp_support(double sigma2, double q);

/// Continuous MP density. The point mass (1 - 1/q) at zero for q > 1 is not
/// part of the returned value, so the density integrates to min(1, 1/q).
double mp_density(double lambda, const MpParams& params);

/// Cumulative distribution of the continuous MP part, conditioned on the
/// nonzero bulk (so it runs from 0 at lambda_minus to 1 at lambda_plus for
/// every q). Uses a tabulated integral on 1024 panels with Gauss-Legendre
/// refinement inside a panel.
class MpDistribution {
public:
    explicit MpDistribution(const MpParams& params);

    const MpParams& params() const noexcept { return params_; }
    double cdf(double lambda) const;
    double quantile(double p) const;
    /// Probability mass of [lo, hi] under the conditioned law.
    double mass(double lo, double hi) const { return cdf(hi) - cdf(lo); }

private:
    double angle_of(double lambda) const;
    double lambda_of(double angle) const;
    double integrand(double angle) const;
    double integrate(double a0, double a1) const;
    double cdf_at_angle(double angle) const;

    MpParams params_;
    std::vector<double> node_cdf_;  // cdf at uniformly spaced angles in [0, pi]
    double panel_width_ = 0.0;
    double norm_ = 1.0;
};

double mp_cdf(double lambda, const MpParams& params);
double mp_quantile(double p, const MpParams& params);

/// Linear-interpolated tau-quantile of the eigenvalues (tau = 0.5 is the median).
double estimate_sigma2_quantile(const EigenSpectrum& spectrum, double tau = 0.5);
double estimate_sigma2_mean(const EigenSpectrum& spectrum);

/// Squared L2 distance between the density histogram of the spectrum on
/// [0, range_max] and the MP density at the bin centers. Bin counts are
/// normalized by d_features so that the histogram mass matches the MP bulk
/// mass min(1, 1/q).
double mp_fit_objective(const EigenSpectrum& spectrum, double q, double sigma2, double range_max,
                        std::size_t bins);

/// Histogram range used by fit_sigma2 for a given starting point.
double mp_fit_range(const EigenSpectrum& spectrum, double q, double sigma2_init);

/// Golden-section refinement of sigma^2 over [init/4, 4 init] (relative
/// tolerance 1e-4). Never returns a point worse than sigma2_init.
MpParams fit_sigma2(const EigenSpectrum& spectrum, double q, double sigma2_init,
                    std::size_t bins = 64);

/// Critical population spike sigma^2 (1 + sqrt(c)).
double bbp_threshold(double sigma2, double c);

/// Asymptotic sample location of a population spike `ell` (in units of sigma^2,
/// ell > 1): sigma^2 (ell + c ell / (ell - 1)).
double bbp_outlier_location(double ell, double sigma2, double c);

double wigner_density(double lambda, double sigma2);

struct TwStandardization {
    double center = 0.0;
    double scale = 1.0;
};

/// Real-Wishart edge centering and scaling for a spectrum from n samples.
TwStandardization tw_standardization(const MpParams& params, std::size_t n_samples);
double tw_standardize(double lambda1, const MpParams& params, std::size_t n_samples);

/// Tabulated Tracy-Widom (beta = 1) CDF with monotone interpolation.
class TwTable {
public:
    TwTable(std::vector<double> s, std::vector<double> cdf);

    static TwTable load(const std::filesystem::path& path);
    static TwTable parse(std::string_view text);
    /// The table compiled into the library.
    static const TwTable& builtin();

    double cdf(double s) const;
    double tail(double s) const { return 1.0 - cdf(s); }

    std::span<const double> s() const noexcept { return s_; }
    std::span<const double> values() const noexcept { return cdf_; }

private:
    std::vector<double> s_;
    std::vector<double> cdf_;
    std::vector<double> slopes_;
};

/// 1 - F1(s) from the builtin table; clamps to 1 below and 0 above the table.
double tw_tail_probability(double s);
double tw_tail_probability(double s, const TwTable& table);

}  // namespace specgeo
