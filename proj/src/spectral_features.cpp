#include "specgeo/spectral_features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/SVD>

#include "specgeo/errors.hpp"

namespace specgeo {

namespace {

constexpr double kKlSmoothing = 1e-8;

std::vector<double> bin_counts(const EigenSpectrum& spectrum, double range_max, std::size_t bins) {
    std::vector<double> counts(bins, 0.0);
    const double width = range_max / static_cast<double>(bins);
    for (double v : spectrum.values) {
        counts[std::min(static_cast<std::size_t>(v / width), bins - 1)] += 1.0;
    }
    return counts;
}

}  // namespace

ActivationWindow::ActivationWindow(RowMatrix data) : data_(std::move(data)) {
    if (data_.rows() < 2 || data_.cols() < 2) {
        throw std::invalid_argument("activation window needs at least 2 steps and 2 features");
    }
    if (!data_.allFinite()) throw DataError("activation window contains non-finite entries");
}

const std::array<FeatureSlotInfo, kFeatureCount>& feature_registry() {
    static const std::array<FeatureSlotInfo, kFeatureCount> registry = {{
        {"eig1_over_trace", "ratio"},
        {"eig2_over_trace", "ratio"},
        {"eig3_over_trace", "ratio"},
        {"eig4_over_trace", "ratio"},
        {"eig5_over_trace", "ratio"},
        {"leading_sum5", "activation^2"},
        {"spectral_entropy", "nats"},
        {"normalized_entropy", "ratio"},
        {"kl_to_mp", "nats"},
        {"wasserstein_to_mp", "activation^2"},
        {"tw_tail_probability", "probability"},
        {"log_gap1", "log ratio"},
        {"log_gap2", "log ratio"},
        {"log_gap3", "log ratio"},
        {"skewness", "dimensionless"},
        {"excess_kurtosis", "dimensionless"},
        {"trace", "activation^2"},
        {"effective_rank", "count"},
        {"fraction_above_edge", "ratio"},
        {"top_eigenvalue_share", "ratio"},
        {"median_eigenvalue", "activation^2"},
        {"fitted_sigma2", "activation^2"},
    }};
    return registry;
}

EigenSpectrum eigenspectrum(const ActivationWindow& window) {
    const Eigen::MatrixXd h = window.data();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(h);
    const auto& sv = svd.singularValues();
    const double n = static_cast<double>(window.n_steps());
    std::vector<double> values(static_cast<std::size_t>(sv.size()));
    for (Eigen::Index i = 0; i < sv.size(); ++i) values[static_cast<std::size_t>(i)] = sv[i] * sv[i] / n;
    return make_spectrum(std::move(values), window.n_steps(), window.width());
}

double leading_sum(const EigenSpectrum& spectrum, std::size_t k) {
    if (k == 0) throw std::invalid_argument("leading_sum needs k >= 1");
    const auto take = std::min(k, spectrum.size());
    return std::accumulate(spectrum.values.begin(), spectrum.values.begin() + static_cast<std::ptrdiff_t>(take), 0.0);
}

double spectral_entropy(const EigenSpectrum& spectrum) {
    const double total = spectrum.trace();
    if (!(total > 0.0)) throw DataError("spectral entropy of a zero-trace spectrum");
    double h = 0.0;
    for (double v : spectrum.values) {
        const double p = v / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::max(h, 0.0);
}

std::vector<double> mp_bin_masses(const MpDistribution& mp, double range_max, std::size_t bins) {
    std::vector<double> masses(bins);
    const double width = range_max / static_cast<double>(bins);
    double prev = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        const double next = mp.cdf(static_cast<double>(b + 1) * width);
        masses[b] = next - prev;
        prev = next;
    }
    return masses;
}

double smoothed_kl(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty()) throw std::invalid_argument("KL needs equal, non-empty bins");
    const double p_sum = std::accumulate(p.begin(), p.end(), 0.0);
    const double q_sum = std::accumulate(q.begin(), q.end(), 0.0);
    if (!(p_sum > 0.0) || !(q_sum > 0.0)) throw std::invalid_argument("KL needs positive total mass");
    const double smooth_total = 1.0 + kKlSmoothing * static_cast<double>(p.size());
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = (p[i] / p_sum + kKlSmoothing) / smooth_total;
        const double qi = (q[i] / q_sum + kKlSmoothing) / smooth_total;
        kl += pi * std::log(pi / qi);
    }
    return std::max(kl, 0.0);
}

double kl_to_mp(const EigenSpectrum& spectrum, const MpParams& params, std::size_t bins) {
    if (spectrum.empty()) throw DataError("KL divergence of an empty spectrum");
    if (bins == 0) throw std::invalid_argument("KL divergence needs at least one bin");
    const double range_max = 1.1 * std::max(spectrum.largest(), params.lambda_plus());
    const auto counts = bin_counts(spectrum, range_max, bins);
    const auto masses = mp_bin_masses(MpDistribution(params), range_max, bins);
    return smoothed_kl(counts, masses);
}

double wasserstein_to_mp(const EigenSpectrum& spectrum, const MpParams& params) {
    if (spectrum.empty()) throw DataError("Wasserstein distance of an empty spectrum");
    const MpDistribution mp(params);
    const auto m = spectrum.size();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double ascending = spectrum.values[m - 1 - i];
        const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
        total += std::abs(ascending - mp.quantile(p));
    }
    return total / static_cast<double>(m);
}

std::vector<double> gap_ratios(const EigenSpectrum& spectrum, std::size_t k) {
    std::vector<double> ratios(k, kGapRatioCap);
    if (spectrum.empty()) return ratios;
    const double floor = 1e-12 * spectrum.largest();
    for (std::size_t i = 0; i < k && i + 1 < spectrum.size(); ++i) {
        const double num = spectrum.values[i];
        const double den = spectrum.values[i + 1];
        if (den > floor && den > 0.0) ratios[i] = std::min(num / den, kGapRatioCap);
    }
    return ratios;
}

SpectralMoments spectral_moments(const EigenSpectrum& spectrum) {
    if (spectrum.empty()) throw DataError("moments of an empty spectrum");
    const double m = static_cast<double>(spectrum.size());
    SpectralMoments out;
    out.mean = spectrum.trace() / m;
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
    for (double v : spectrum.values) {
        const double d = v - out.mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= m;
    m3 /= m;
    m4 /= m;
    out.std = std::sqrt(m2);
    if (out.std <= 1e-12 * std::max(std::abs(out.mean), 1e-300)) {
        out.std = 0.0;
        return out;
    }
    out.skewness = m3 / (m2 * out.std);
    out.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    return out;
}

double robust_sigma2_init(const EigenSpectrum& spectrum, double tau) {
    if (spectrum.empty() || !(spectrum.largest() > 0.0)) {
        throw DataError("cannot fit MP law to an all-zero spectrum");
    }
    return std::max(estimate_sigma2_quantile(spectrum, tau), 1e-12 * spectrum.largest());
}

MpParams fit_window_mp(const EigenSpectrum& spectrum, double q, const DescriptorOptions& options) {
    return fit_sigma2(spectrum, q, robust_sigma2_init(spectrum, options.sigma2_quantile),
                      options.fit_bins);
}

FeatureVector descriptor_vector(const ActivationWindow& window, const DescriptorOptions& options) {
    EigenSpectrum spectrum;
    if (options.center) {
        RowMatrix centered = window.data().rowwise() - window.data().colwise().mean();
        spectrum = eigenspectrum(ActivationWindow(std::move(centered)));
    } else {
        spectrum = eigenspectrum(window);
    }
    const double q = static_cast<double>(window.width()) / static_cast<double>(window.n_steps());
    const MpParams params = fit_window_mp(spectrum, q, options);

    FeatureVector f;
    const double trace = spectrum.trace();
    for (std::size_t i = 0; i < 5; ++i) {
        f.values[i] = i < spectrum.size() ? spectrum.values[i] / trace : 0.0;
    }
    const double entropy = spectral_entropy(spectrum);
    const auto gaps = gap_ratios(spectrum, 3);
    const auto moments = spectral_moments(spectrum);
    const double m = static_cast<double>(spectrum.size());
    const auto above = std::count_if(spectrum.values.begin(), spectrum.values.end(),
                                     [&](double v) { return v > params.lambda_plus(); });

    f[FeatureSlot::leading_sum5] = leading_sum(spectrum, 5);
    f[FeatureSlot::spectral_entropy] = entropy;
    f[FeatureSlot::normalized_entropy] = spectrum.size() > 1 ? entropy / std::log(m) : 0.0;
    f[FeatureSlot::kl_to_mp] = kl_to_mp(spectrum, params, options.fit_bins);
    f[FeatureSlot::wasserstein_to_mp] = wasserstein_to_mp(spectrum, params);
    f[FeatureSlot::tw_tail_probability] =
        tw_tail_probability(tw_standardize(spectrum.largest(), params, window.n_steps()));
    f[FeatureSlot::log_gap1] = std::log(gaps[0]);
    f[FeatureSlot::log_gap2] = std::log(gaps[1]);
    f[FeatureSlot::log_gap3] = std::log(gaps[2]);
    f[FeatureSlot::skewness] = moments.skewness;
    f[FeatureSlot::excess_kurtosis] = moments.excess_kurtosis;
    f[FeatureSlot::trace] = trace;
    f[FeatureSlot::effective_rank] = std::exp(entropy);
    f[FeatureSlot::fraction_above_edge] = static_cast<double>(above) / m;
    f[FeatureSlot::top_eigenvalue_share] = spectrum.largest() / trace;
    f[FeatureSlot::median_eigenvalue] = estimate_sigma2_quantile(spectrum, 0.5);
    f[FeatureSlot::fitted_sigma2] = params.sigma2();
    return f;
}

}  // namespace specgeo
