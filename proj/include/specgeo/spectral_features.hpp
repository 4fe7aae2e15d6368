#pragma once

// Spectral descriptors of an activation window (time steps x concatenated
// layer width).

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "specgeo/rmt_laws.hpp"

namespace specgeo {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x D block of activations, one row per time step. N >= 2, D >= 2, finite.
class ActivationWindow {
public:
    explicit ActivationWindow(RowMatrix data);

    const RowMatrix& data() const noexcept { return data_; }
    std::size_t n_steps() const noexcept { return static_cast<std::size_t>(data_.rows()); }
    std::size_t width() const noexcept { return static_cast<std::size_t>(data_.cols()); }

private:
    RowMatrix data_;
};

inline constexpr std::size_t kFeatureCount = 22;
inline constexpr int kFeatureSchemaVersion = 1;

/// Slot registry, version 1. Index i of FeatureVector::values holds slot i+1.
enum class FeatureSlot : std::size_t {
    eig1_over_trace = 0,
    eig2_over_trace,
    eig3_over_trace,
    eig4_over_trace,
    eig5_over_trace,
    leading_sum5,
    spectral_entropy,
    normalized_entropy,
    kl_to_mp,
    wasserstein_to_mp,
    tw_tail_probability,
    log_gap1,
    log_gap2,
    log_gap3,
    skewness,
    excess_kurtosis,
    trace,
    effective_rank,
    fraction_above_edge,
    top_eigenvalue_share,
    median_eigenvalue,
    fitted_sigma2,
};

struct FeatureSlotInfo {
    std::string_view name;
    std::string_view unit;
};

const std::array<FeatureSlotInfo, kFeatureCount>& feature_registry();

struct FeatureVector {
    std::array<double, kFeatureCount> values{};
    std::size_t window_index = 0;

    double operator[](FeatureSlot slot) const { return values[static_cast<std::size_t>(slot)]; }
    double& operator[](FeatureSlot slot) { return values[static_cast<std::size_t>(slot)]; }
};

/// Gap ratios are capped at this value (and log-scaled to log(cap) in the
/// descriptor vector) when the denominator is numerically zero.
inline constexpr double kGapRatioCap = 1e6;

/// Eigenvalues sigma_i^2 / N of the window covariance H^T H / N, computed from
/// the singular values of H. Returns the min(N, D) leading values.
EigenSpectrum eigenspectrum(const ActivationWindow& window);

double leading_sum(const EigenSpectrum& spectrum, std::size_t k = 5);

/// Shannon entropy (nats) of the trace-normalized eigenvalues.
double spectral_entropy(const EigenSpectrum& spectrum);

/// KL(empirical || MP) over `bins` equal bins on [0, 1.1 max(lambda_1, lambda_+)],
/// with 1e-8 added to every bin of both distributions before renormalizing.
double kl_to_mp(const EigenSpectrum& spectrum, const MpParams& params, std::size_t bins = 64);

/// Probability mass of each of `bins` equal bins on [0, range_max] under the
/// (bulk-conditioned) MP law.
std::vector<double> mp_bin_masses(const MpDistribution& mp, double range_max, std::size_t bins);

/// KL(p || q) of two binned distributions after adding 1e-8 to every bin and
/// renormalizing both. Inputs need not be normalized.
double smoothed_kl(std::span<const double> p, std::span<const double> q);

/// W1 distance between the eigenvalues and the continuous MP law via the
/// quantile coupling at (i - 0.5)/m.
double wasserstein_to_mp(const EigenSpectrum& spectrum, const MpParams& params);

std::vector<double> gap_ratios(const EigenSpectrum& spectrum, std::size_t k);

struct SpectralMoments {
    double mean = 0.0;
    double std = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
};

/// Population moments of the eigenvalue multiset. Skewness and excess
/// kurtosis are 0 for a constant spectrum.
SpectralMoments spectral_moments(const EigenSpectrum& spectrum);

struct DescriptorOptions {
    std::size_t fit_bins = 64;
    double sigma2_quantile = 0.5;
    bool center = false;  // subtract per-column means before the covariance
};

/// Noise variance starting point for the MP fit: the tau-quantile of the
/// spectrum, floored at 1e-12 lambda_1 so rank-deficient windows stay fittable.
double robust_sigma2_init(const EigenSpectrum& spectrum, double tau);

/// MP fit used by the descriptor vector: quantile init then histogram refinement.
MpParams fit_window_mp(const EigenSpectrum& spectrum, double q, const DescriptorOptions& options);

FeatureVector descriptor_vector(const ActivationWindow& window,
                                const DescriptorOptions& options = {});

}  // namespace specgeo
