#include "specgeo/rmt_laws.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>

#include "specgeo/errors.hpp"

namespace specgeo {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kMpPanels = 1024;

// 5-point Gauss-Legendre on [-1, 1].
constexpr std::array<double, 5> kGlNodes = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                            0.5384693101056831, 0.9061798459386640};
constexpr std::array<double, 5> kGlWeights = {0.2369268850561891, 0.4786286704993665,
                                              0.5688888888888889, 0.4786286704993665,
                                              0.2369268850561891};

void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw DataError(std::string(what) + " must be finite");
}

}  // namespace

double EigenSpectrum::trace() const { return std::accumulate(values.begin(), values.end(), 0.0); }

EigenSpectrum make_spectrum(std::vector<double> values, std::size_t n_samples,
                            std::size_t d_features) {
    if (values.size() != std::min(n_samples, d_features)) {
        throw std::invalid_argument("spectrum must hold min(n, d) eigenvalues");
    }
    double scale = 0.0;
    for (double v : values) {
        require_finite(v, "eigenvalue");
        scale = std::max(scale, std::abs(v));
    }
    for (double& v : values) {
        if (v < 0.0) {
            if (v < -1e-10 * scale) throw DataError("covariance eigenvalue is negative");
            v = 0.0;
        }
    }
    std::sort(values.begin(), values.end(), std::greater<>());
    return EigenSpectrum{std::move(values), n_samples, d_features};
}

EigenSpectrum make_spectrum(std::vector<double> values) {
    const auto n = values.size();
    return make_spectrum(std::move(values), n, n);
}

MpParams::MpParams(double sigma2, double q) : sigma2_(sigma2), q_(q) {
    std::tie(lambda_minus_, lambda_plus_) = mp_support(sigma2, q);
}

double MpParams::bulk_mass() const noexcept { return q_ <= 1.0 ? 1.0 : 1.0 / q_; }

std::pair<double, double> mp_support(double sigma2, double q) {
    if (!(sigma2 > 0.0) || !(q > 0.0) || !std::isfinite(sigma2) || !std::isfinite(q)) {
        throw std::invalid_argument("mp_support requires sigma2 > 0 and q > 0");
    }
    const double r = std::sqrt(q);
    return {sigma2 * (1.0 - r) * (1.0 - r), sigma2 * (1.0 + r) * (1.0 + r)};
}

double mp_density(double lambda, const MpParams& params) {
    require_finite(lambda, "lambda");
    const double lo = params.lambda_minus();
    const double hi = params.lambda_plus();
    if (lambda <= lo || lambda >= hi || lambda <= 0.0) return 0.0;
    return std::sqrt((hi - lambda) * (lambda - lo)) /
           (2.0 * kPi * params.sigma2() * params.q() * lambda);
}

// The bulk is parameterized by an angle: lambda = lo + (hi - lo)(1 - cos a)/2.
// The square-root endpoint behaviour cancels against d(lambda)/da, leaving a
// smooth integrand on [0, pi].
MpDistribution::MpDistribution(const MpParams& params)
    : params_(params), node_cdf_(kMpPanels + 1, 0.0), panel_width_(kPi / kMpPanels) {
    for (std::size_t i = 0; i < kMpPanels; ++i) {
        node_cdf_[i + 1] =
            node_cdf_[i] + integrate(static_cast<double>(i) * panel_width_,
                                     static_cast<double>(i + 1) * panel_width_);
    }
    const double total = node_cdf_.back();
    for (double& c : node_cdf_) c /= total;
    node_cdf_.back() = 1.0;
    norm_ = total;
}

double MpDistribution::angle_of(double lambda) const {
    const double lo = params_.lambda_minus();
    const double hi = params_.lambda_plus();
    const double x = std::clamp(1.0 - 2.0 * (lambda - lo) / (hi - lo), -1.0, 1.0);
    return std::acos(x);
}

double MpDistribution::lambda_of(double angle) const {
    const double lo = params_.lambda_minus();
    const double hi = params_.lambda_plus();
    return lo + (hi - lo) * 0.5 * (1.0 - std::cos(angle));
}

double MpDistribution::integrand(double angle) const {
    const double half = 0.5 * (params_.lambda_plus() - params_.lambda_minus());
    const double s = std::sin(angle);
    const double lambda = lambda_of(angle);
    if (lambda <= 0.0) {
        // q == 1 at angle 0: sin^2(a) / lambda -> 2 / half in the limit.
        return half / (kPi * params_.sigma2() * params_.q());
    }
    return half * half * s * s / (2.0 * kPi * params_.sigma2() * params_.q() * lambda);
}

double MpDistribution::integrate(double a0, double a1) const {
    const double mid = 0.5 * (a0 + a1);
    const double rad = 0.5 * (a1 - a0);
    double sum = 0.0;
    for (std::size_t k = 0; k < kGlNodes.size(); ++k) {
        sum += kGlWeights[k] * integrand(mid + rad * kGlNodes[k]);
    }
    return sum * rad;
}

double MpDistribution::cdf_at_angle(double angle) const {
    if (angle <= 0.0) return 0.0;
    if (angle >= kPi) return 1.0;
    const auto panel = std::min(static_cast<std::size_t>(angle / panel_width_), kMpPanels - 1);
    const double start = static_cast<double>(panel) * panel_width_;
    return std::clamp(node_cdf_[panel] + integrate(start, angle) / norm_, 0.0, 1.0);
}

double MpDistribution::cdf(double lambda) const {
    require_finite(lambda, "lambda");
    if (lambda <= params_.lambda_minus()) return 0.0;
    if (lambda >= params_.lambda_plus()) return 1.0;
    return cdf_at_angle(angle_of(lambda));
}

double MpDistribution::quantile(double p) const {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile probability outside [0, 1]");
    if (p == 0.0) return params_.lambda_minus();
    if (p == 1.0) return params_.lambda_plus();

    const auto it = std::upper_bound(node_cdf_.begin(), node_cdf_.end(), p);
    const auto panel = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
        std::distance(node_cdf_.begin(), it) - 1, 0, static_cast<std::ptrdiff_t>(kMpPanels - 1)));
    double lo = static_cast<double>(panel) * panel_width_;
    double hi = lo + panel_width_;
    const double c0 = node_cdf_[panel];
    const double c1 = node_cdf_[panel + 1];
    double angle = c1 > c0 ? lo + (p - c0) / (c1 - c0) * panel_width_ : 0.5 * (lo + hi);

    // Safeguarded Newton on the angle; the bracket [lo, hi] always holds the root.
    for (int iter = 0; iter < 60; ++iter) {
        const double f = cdf_at_angle(angle) - p;
        if (f > 0.0) hi = angle; else lo = angle;
        const double slope = integrand(angle) / norm_;
        double next = slope > 0.0 ? angle - f / slope : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - angle);
        angle = next;
        if (step < 1e-15 || hi - lo < 1e-15) break;
    }
    return lambda_of(angle);
}

double mp_cdf(double lambda, const MpParams& params) { return MpDistribution(params).cdf(lambda); }

double mp_quantile(double p, const MpParams& params) {
    return MpDistribution(params).quantile(p);
}

double estimate_sigma2_quantile(const EigenSpectrum& spectrum, double tau) {
    if (spectrum.empty()) throw DataError("cannot estimate sigma2 from an empty spectrum");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
    std::vector<double> ascending(spectrum.values.rbegin(), spectrum.values.rend());
    const double pos = tau * static_cast<double>(ascending.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= ascending.size()) return ascending.back();
    const double frac = pos - static_cast<double>(i);
    return ascending[i] + frac * (ascending[i + 1] - ascending[i]);
}

double estimate_sigma2_mean(const EigenSpectrum& spectrum) {
    if (spectrum.empty()) throw DataError("cannot estimate sigma2 from an empty spectrum");
    return spectrum.trace() / static_cast<double>(spectrum.size());
}

double mp_fit_range(const EigenSpectrum& spectrum, double q, double sigma2_init) {
    return 1.1 * std::max(spectrum.largest(), MpParams(sigma2_init, q).lambda_plus());
}

double mp_fit_objective(const EigenSpectrum& spectrum, double q, double sigma2, double range_max,
                        std::size_t bins) {
    const MpParams params(sigma2, q);
    const double width = range_max / static_cast<double>(bins);
    std::vector<double> counts(bins, 0.0);
    for (double v : spectrum.values) {
        const auto b = std::min(static_cast<std::size_t>(v / width), bins - 1);
        counts[b] += 1.0;
    }
    const double norm = static_cast<double>(spectrum.d_features) * width;
    double err = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        const double center = (static_cast<double>(b) + 0.5) * width;
        const double diff = counts[b] / norm - mp_density(center, params);
        err += diff * diff;
    }
    return err;
}

MpParams fit_sigma2(const EigenSpectrum& spectrum, double q, double sigma2_init,
                    std::size_t bins) {
    if (spectrum.empty()) throw DataError("cannot fit MP law to an empty spectrum");
    if (bins < 16) throw std::invalid_argument("fit_sigma2 needs at least 16 bins");
    if (!(sigma2_init > 0.0) || !std::isfinite(sigma2_init)) {
        throw std::invalid_argument("sigma2_init must be positive");
    }
    if (!(spectrum.largest() > 0.0)) throw DataError("cannot fit MP law to an all-zero spectrum");

    const double range = mp_fit_range(spectrum, q, sigma2_init);
    auto objective = [&](double s2) { return mp_fit_objective(spectrum, q, s2, range, bins); };

    constexpr double kInvPhi = 0.6180339887498949;
    double lo = 0.25 * sigma2_init;
    double hi = 4.0 * sigma2_init;
    double x1 = hi - kInvPhi * (hi - lo);
    double x2 = lo + kInvPhi * (hi - lo);
    double f1 = objective(x1);
    double f2 = objective(x2);
    while (hi - lo > 1e-4 * 0.5 * (hi + lo)) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - kInvPhi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + kInvPhi * (hi - lo);
            f2 = objective(x2);
        }
    }
    double best = f1 <= f2 ? x1 : x2;
    if (objective(sigma2_init) < std::min(f1, f2)) best = sigma2_init;
    return MpParams(best, q);
}

double bbp_threshold(double sigma2, double c) {
    if (!(sigma2 > 0.0) || !(c > 0.0)) {
        throw std::invalid_argument("bbp_threshold requires sigma2 > 0 and c > 0");
    }
    return sigma2 * (1.0 + std::sqrt(c));
}

double bbp_outlier_location(double ell, double sigma2, double c) {
    if (!(ell > 1.0)) throw std::invalid_argument("spike must exceed the noise level");
    return sigma2 * (ell + c * ell / (ell - 1.0));
}

double wigner_density(double lambda, double sigma2) {
    require_finite(lambda, "lambda");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("wigner_density requires sigma2 > 0");
    const double r2 = 4.0 * sigma2 - lambda * lambda;
    if (r2 <= 0.0) return 0.0;
    return std::sqrt(r2) / (2.0 * kPi * sigma2);
}

TwStandardization tw_standardization(const MpParams& params, std::size_t n_samples) {
    if (n_samples < 2) throw std::invalid_argument("Tracy-Widom scaling needs n_samples >= 2");
    const double rq = std::sqrt(params.q());
    const double n = static_cast<double>(n_samples);
    return {params.lambda_plus(),
            params.sigma2() * std::pow(n, -2.0 / 3.0) * (1.0 + rq) * std::cbrt(1.0 + 1.0 / rq)};
}

double tw_standardize(double lambda1, const MpParams& params, std::size_t n_samples) {
    const auto t = tw_standardization(params, n_samples);
    return (lambda1 - t.center) / t.scale;
}

TwTable::TwTable(std::vector<double> s, std::vector<double> cdf)
    : s_(std::move(s)), cdf_(std::move(cdf)) {
    if (s_.size() != cdf_.size() || s_.size() < 2) {
        throw DataError("Tracy-Widom table needs at least two (s, F) rows");
    }
    for (std::size_t i = 0; i < s_.size(); ++i) {
        if (!std::isfinite(s_[i]) || !(cdf_[i] >= 0.0 && cdf_[i] <= 1.0)) {
            throw DataError("Tracy-Widom table row " + std::to_string(i) + " is invalid");
        }
        if (i > 0 && (s_[i] <= s_[i - 1] || cdf_[i] < cdf_[i - 1])) {
            throw DataError("Tracy-Widom table is not monotone at row " + std::to_string(i));
        }
    }
    // Fritsch-Carlson slopes keep the cubic Hermite interpolant monotone.
    const std::size_t n = s_.size();
    std::vector<double> secant(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        secant[i] = (cdf_[i + 1] - cdf_[i]) / (s_[i + 1] - s_[i]);
    }
    slopes_.assign(n, 0.0);
    slopes_.front() = secant.front();
    slopes_.back() = secant.back();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (secant[i - 1] * secant[i] <= 0.0) {
            slopes_[i] = 0.0;
        } else {
            const double h0 = s_[i] - s_[i - 1];
            const double h1 = s_[i + 1] - s_[i];
            const double w0 = 2.0 * h1 + h0;
            const double w1 = h1 + 2.0 * h0;
            slopes_[i] = (w0 + w1) / (w0 / secant[i - 1] + w1 / secant[i]);
        }
    }
}

TwTable TwTable::parse(std::string_view text) {
    std::vector<double> s;
    std::vector<double> f;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream row(line);
        double a = 0.0;
        double b = 0.0;
        if (!(row >> a >> b)) {
            throw DataError("Tracy-Widom table: cannot parse line " + std::to_string(lineno));
        }
        s.push_back(a);
        f.push_back(b);
    }
    return TwTable(std::move(s), std::move(f));
}

TwTable TwTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open Tracy-Widom table " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

double TwTable::cdf(double s) const {
    require_finite(s, "Tracy-Widom argument");
    if (s <= s_.front()) return s < s_.front() ? 0.0 : cdf_.front();
    if (s >= s_.back()) return s > s_.back() ? 1.0 : cdf_.back();
    const auto it = std::upper_bound(s_.begin(), s_.end(), s);
    const auto i = static_cast<std::size_t>(std::distance(s_.begin(), it) - 1);
    const double h = s_[i + 1] - s_[i];
    const double t = (s - s_[i]) / h;
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double value = (2 * t3 - 3 * t2 + 1) * cdf_[i] + (t3 - 2 * t2 + t) * h * slopes_[i] +
                         (-2 * t3 + 3 * t2) * cdf_[i + 1] + (t3 - t2) * h * slopes_[i + 1];
    return std::clamp(value, cdf_[i], cdf_[i + 1]);
}

double tw_tail_probability(double s, const TwTable& table) { return table.tail(s); }

double tw_tail_probability(double s) { return tw_tail_probability(s, TwTable::builtin()); }

}  // namespace specgeo
