#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>
#include <gsl/gsl_roots.h>
#include <gtest/gtest.h>

#include "specgeo/errors.hpp"
#include "specgeo/rmt_kd.hpp"
#include "specgeo/rmt_laws.hpp"

using namespace specgeo;

namespace {

template <typename F>
double gsl_integrate(F f, double a, double b) {
    gsl_set_error_handler_off();
    gsl_integration_workspace* ws = gsl_integration_workspace_alloc(2000);
    gsl_function fn;
    fn.function = [](double x, void* p) { return (*static_cast<F*>(p))(x); };
    fn.params = &f;
    double result = 0.0;
    double err = 0.0;
    gsl_integration_qags(&fn, a, b, 0.0, 1e-11, 2000, ws, &result, &err);
    gsl_integration_workspace_free(ws);
    return result;
}

// CDF of the continuous MP part conditioned on the bulk, by adaptive quadrature.
double oracle_cdf(double lambda, const MpParams& p) {
    auto f = [&](double x) { return mp_density(x, p); };
    return gsl_integrate(f, p.lambda_minus(), lambda) / p.bulk_mass();
}

double oracle_quantile(double prob, const MpParams& p) {
    double lo = p.lambda_minus();
    double hi = p.lambda_plus();
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (oracle_cdf(mid, p) < prob ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST(MpDensity, OutsideSupportIsZero) {
    const MpParams p(1.0, 0.25);
    EXPECT_EQ(mp_density(0.1, p), 0.0);
    EXPECT_EQ(mp_density(2.5, p), 0.0);
    EXPECT_EQ(mp_density(-1.0, p), 0.0);
}

TEST(MpDensity, MidpointValue) {
    EXPECT_NEAR(mp_density(2.0, MpParams(1.0, 1.0)), 1.0 / (2.0 * M_PI), 1e-15);
}

TEST(MpDensity, NonFiniteThrows) {
    EXPECT_THROW(mp_density(std::nan(""), MpParams(1.0, 1.0)), DataError);
    EXPECT_THROW(mp_density(INFINITY, MpParams(1.0, 1.0)), DataError);
}

TEST(MpDensity, MassMatchesQuadrature) {
    for (double q : {0.1, 0.5, 1.0, 2.0, 4.0}) {
        const MpParams p(1.0, q);
        auto f = [&](double x) { return mp_density(x, p); };
        const double mass = gsl_integrate(f, p.lambda_minus(), p.lambda_plus());
        EXPECT_NEAR(mass, std::min(1.0, 1.0 / q), 1e-4) << "q=" << q;
        EXPECT_NEAR(p.bulk_mass(), std::min(1.0, 1.0 / q), 1e-15);
    }
}

TEST(MpSupport, ClosedForm) {
    EXPECT_EQ(mp_support(1.0, 1.0), std::make_pair(0.0, 4.0));
    EXPECT_EQ(mp_support(1.0, 0.25), std::make_pair(0.25, 2.25));
    EXPECT_EQ(mp_support(2.0, 1.0), std::make_pair(0.0, 8.0));
}

TEST(MpSupport, LinearInSigma2) {
    for (double a : {0.5, 3.0, 7.25}) {
        const auto [lo, hi] = mp_support(1.0, 0.3);
        const auto [lo2, hi2] = mp_support(a, 0.3);
        EXPECT_DOUBLE_EQ(lo2, a * lo);
        EXPECT_DOUBLE_EQ(hi2, a * hi);
    }
}

TEST(MpSupport, RejectsNonpositive) {
    EXPECT_THROW(mp_support(0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(mp_support(1.0, -1.0), std::invalid_argument);
    EXPECT_THROW(MpParams(-1.0, 1.0), std::invalid_argument);
}

TEST(MpQuantile, Endpoints) {
    for (double q : {0.25, 1.0, 3.0}) {
        const MpParams p(1.5, q);
        EXPECT_NEAR(mp_quantile(0.0, p), p.lambda_minus(), 1e-12);
        EXPECT_NEAR(mp_quantile(1.0, p), p.lambda_plus(), 1e-12);
    }
}

TEST(MpQuantile, RejectsOutOfRange) {
    EXPECT_THROW(mp_quantile(-0.01, MpParams(1.0, 1.0)), std::invalid_argument);
    EXPECT_THROW(mp_quantile(1.01, MpParams(1.0, 1.0)), std::invalid_argument);
}

TEST(MpQuantile, MedianMatchesQuadratureBisection) {
    const MpParams p(1.0, 1.0);
    EXPECT_NEAR(mp_quantile(0.5, p), oracle_quantile(0.5, p), 1e-7);
}

TEST(MpQuantile, MatchesOracleAcrossShapes) {
    for (double q : {0.1, 0.5, 2.0, 4.0}) {
        const MpParams p(0.7, q);
        for (double prob : {0.05, 0.3, 0.77, 0.98}) {
            EXPECT_NEAR(mp_quantile(prob, p), oracle_quantile(prob, p), 1e-7 * p.lambda_plus())
                << "q=" << q << " p=" << prob;
        }
    }
}

TEST(MpQuantile, Monotone) {
    const MpParams p(1.0, 0.5);
    double prev = -1.0;
    for (int i = 0; i <= 400; ++i) {
        const double v = mp_quantile(i / 400.0, p);
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(MpCdf, RoundTrip) {
    for (double q : {0.2, 1.0, 2.5}) {
        const MpParams p(1.0, q);
        for (int i = 1; i < 50; ++i) {
            const double lambda = p.lambda_minus() + (p.lambda_plus() - p.lambda_minus()) * i / 50.0;
            EXPECT_NEAR(mp_quantile(mp_cdf(lambda, p), p), lambda, 1e-6);
        }
    }
}

TEST(MpCdf, MatchesQuadrature) {
    const MpParams p(2.0, 0.6);
    for (double lambda : {0.3, 1.0, 2.2, 4.0}) {
        EXPECT_NEAR(mp_cdf(lambda, p), oracle_cdf(lambda, p), 1e-8);
    }
}

TEST(Sigma2Quantile, Examples) {
    EXPECT_DOUBLE_EQ(estimate_sigma2_quantile(make_spectrum({1, 2, 3, 4}), 0.5), 2.5);
    EXPECT_DOUBLE_EQ(estimate_sigma2_quantile(make_spectrum({7, 1, 4}), 0.0), 1.0);
    for (double tau : {0.0, 0.3, 0.5, 1.0}) {
        EXPECT_DOUBLE_EQ(estimate_sigma2_quantile(make_spectrum({3, 3, 3, 3, 3}), tau), 3.0);
    }
    EXPECT_DOUBLE_EQ(estimate_sigma2_mean(make_spectrum({1, 2, 3, 6})), 3.0);
}

TEST(Sigma2Quantile, EmptyThrows) {
    EigenSpectrum empty;
    EXPECT_THROW(estimate_sigma2_quantile(empty, 0.5), DataError);
}

TEST(MakeSpectrum, ClampsAndValidates) {
    const auto s = make_spectrum({-1e-14, 2.0, 1.0});
    EXPECT_EQ(s.values, (std::vector<double>{2.0, 1.0, 0.0}));
    EXPECT_THROW(make_spectrum({-0.5, 2.0}), DataError);
    EXPECT_THROW(make_spectrum({NAN, 2.0}), DataError);
    EXPECT_THROW(make_spectrum({1.0, 2.0}, 5, 3), std::invalid_argument);
}

TEST(FitSigma2, QuantileConstructedSpectrum) {
    const std::size_t d = 500;
    const MpParams truth(1.0, 0.5);
    std::vector<double> v;
    for (std::size_t i = 1; i <= d; ++i) v.push_back(mp_quantile((i - 0.5) / d, truth));
    const auto spec = make_spectrum(v, 1000, d);
    const auto fit = fit_sigma2(spec, 0.5, estimate_sigma2_quantile(spec, 0.5));
    EXPECT_NEAR(fit.sigma2(), 1.0, 0.02);
}

TEST(FitSigma2, GaussianRecovery) {
    std::vector<double> fitted;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::MatrixXd x = spiked_sample({500, 2000, 1.0, {}}, seed);
        const auto spec = sample_spectrum(x);
        fitted.push_back(fit_sigma2(spec, 0.25, estimate_sigma2_quantile(spec, 0.5)).sigma2());
    }
    std::sort(fitted.begin(), fitted.end());
    EXPECT_NEAR(0.5 * (fitted[4] + fitted[5]), 1.0, 0.05);
}

TEST(FitSigma2, NeverWorseThanStart) {
    std::mt19937_64 rng(3);
    std::gamma_distribution<double> g(2.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(200);
        for (auto& x : v) x = g(rng);
        const auto spec = make_spectrum(v, 400, 200);
        const double init = estimate_sigma2_quantile(spec, 0.5);
        const auto fit = fit_sigma2(spec, 0.5, init);
        const double range = mp_fit_range(spec, 0.5, init);
        EXPECT_LE(mp_fit_objective(spec, 0.5, fit.sigma2(), range, 64),
                  mp_fit_objective(spec, 0.5, init, range, 64));
        EXPECT_GE(fit.sigma2(), init / 4.0 * (1 - 1e-12));
        EXPECT_LE(fit.sigma2(), init * 4.0 * (1 + 1e-12));
    }
}

TEST(FitSigma2, Errors) {
    EXPECT_THROW(fit_sigma2(make_spectrum({0.0, 0.0, 0.0}), 1.0, 1.0), DataError);
    EXPECT_THROW(fit_sigma2(make_spectrum({1.0, 2.0}), 1.0, 1.0, 8), std::invalid_argument);
}

TEST(Bbp, Threshold) {
    EXPECT_DOUBLE_EQ(bbp_threshold(1.0, 1.0), 2.0);
    EXPECT_DOUBLE_EQ(bbp_threshold(1.0, 0.25), 1.5);
    EXPECT_DOUBLE_EQ(bbp_threshold(2.0, 1.0), 4.0);
    EXPECT_THROW(bbp_threshold(0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(bbp_threshold(1.0, 0.0), std::invalid_argument);
}

TEST(Bbp, OutlierAtThresholdHitsEdge) {
    for (double c : {0.1, 0.25, 0.5, 1.0, 2.0}) {
        const double ell = 1.0 + std::sqrt(c);
        EXPECT_NEAR(bbp_outlier_location(ell, 1.0, c), MpParams(1.0, c).lambda_plus(), 1e-9);
        EXPECT_NEAR(bbp_outlier_location(ell, 3.0, c), MpParams(3.0, c).lambda_plus(), 1e-9);
        EXPECT_NEAR(bbp_threshold(1.0, c), ell, 1e-15);
    }
}

TEST(Wigner, Values) {
    EXPECT_NEAR(wigner_density(0.0, 1.0), 1.0 / M_PI, 1e-15);
    EXPECT_EQ(wigner_density(2.01, 1.0), 0.0);
    EXPECT_EQ(wigner_density(-3.0, 2.0), 0.0);
    for (double s2 : {0.5, 1.0, 4.0}) {
        const double r = 2.0 * std::sqrt(s2);
        auto f = [&](double x) { return wigner_density(x, s2); };
        EXPECT_NEAR(gsl_integrate(f, -r, r), 1.0, 1e-4);
    }
}

TEST(TracyWidom, StandardizeProperties) {
    const MpParams p(1.3, 0.25);
    EXPECT_DOUBLE_EQ(tw_standardize(p.lambda_plus(), p, 1000), 0.0);
    double prev = -INFINITY;
    for (int i = 0; i < 50; ++i) {
        const double s = tw_standardize(p.lambda_plus() * (0.9 + 0.005 * i), p, 1000);
        EXPECT_GT(s, prev);
        prev = s;
    }
    EXPECT_GT(tw_standardization(p, 1000).scale, 0.0);
    EXPECT_THROW(tw_standardize(1.0, p, 1), std::invalid_argument);
}

TEST(TracyWidom, TailClampsAndMonotone) {
    EXPECT_EQ(tw_tail_probability(-50.0), 1.0);
    EXPECT_EQ(tw_tail_probability(50.0), 0.0);
    double prev = 1.0;
    for (int i = 0; i <= 1000; ++i) {
        const double t = tw_tail_probability(-7.0 + 0.012 * i);
        EXPECT_LE(t, prev);
        prev = t;
    }
}

TEST(TracyWidom, TableShape) {
    const auto& t = TwTable::builtin();
    EXPECT_GE(t.s().size(), 200u);
    EXPECT_LE(t.s().front(), -6.0);
    EXPECT_GE(t.s().back(), 4.0);
    EXPECT_TRUE(std::is_sorted(t.values().begin(), t.values().end()));
    // asymptotic F1 has median -1.27 and sd 1.27; the n = 400 table sits slightly left of it
    double median = 0.0;
    for (double s = -6.0; s < 4.0; s += 1e-3) {
        if (t.cdf(s) >= 0.5) {
            median = s;
            break;
        }
    }
    EXPECT_GT(median, -1.5);
    EXPECT_LT(median, -1.2);
    EXPECT_NEAR(t.cdf(-1.27 + 1.27) - t.cdf(-1.27 - 1.27), 0.68, 0.05);
}

TEST(TracyWidom, TableParseErrors) {
    EXPECT_THROW(TwTable::parse("0 0.5\n1 0.4\n"), DataError);
    EXPECT_THROW(TwTable::parse("nonsense"), DataError);
    EXPECT_THROW(TwTable::load("/nonexistent/tw.txt"), DataError);
}

TEST(TracyWidom, PureNoiseMedian) {
    std::vector<double> s;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto spec = sample_spectrum(spiked_sample({250, 1000, 1.0, {}}, 1000 + seed));
        s.push_back(tw_standardize(spec.largest(), MpParams(1.0, 0.25), 1000));
    }
    std::nth_element(s.begin(), s.begin() + 100, s.end());
    EXPECT_GE(s[100], -2.5);
    EXPECT_LE(s[100], 0.5);
}

TEST(BulkConfinement, FractionOutsideEdges) {
    double total = 0.0;
    const std::size_t d = 200;
    const std::size_t n = 800;
    const MpParams p(1.0, static_cast<double>(d) / n);
    const double delta = 3.0 * tw_standardization(p, n).scale;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto spec = sample_spectrum(spiked_sample({d, n, 1.0, {}}, 77 + seed));
        std::size_t outside = 0;
        for (double v : spec.values) {
            if (v < p.lambda_minus() - delta || v > p.lambda_plus() + delta) ++outside;
        }
        total += static_cast<double>(outside) / d;
    }
    EXPECT_LE(total / 20.0, 2.0 / d);
}
