#include "specgeo/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <Eigen/QR>

namespace specgeo {

namespace {

Eigen::MatrixXd random_orthonormal(std::size_t d, std::size_t k, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    return qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
}

}  // namespace

ActivationContainer generate_stream(const StreamSpec& spec, std::uint64_t seed) {
    if (spec.steps == 0 || spec.width == 0) throw std::invalid_argument("stream needs positive steps and width");
    if (!(spec.sigma2 > 0.0)) throw std::invalid_argument("stream sigma2 must be positive");
    if (spec.structured && (spec.spikes == 0 || spec.spikes > spec.width)) {
        throw std::invalid_argument("structured stream needs 1 <= spikes <= width");
    }
    if (spec.structured && !(spec.ell_start >= 1.0)) throw std::invalid_argument("ell_start must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const auto d = static_cast<Eigen::Index>(spec.width);
    const double sigma = std::sqrt(spec.sigma2);

    Eigen::MatrixXd dirs;
    if (spec.structured) dirs = random_orthonormal(spec.width, spec.spikes, rng);

    ActivationContainer out;
    out.flags = spec.structured ? kFlagStructured : 0;
    out.rows.resize(static_cast<Eigen::Index>(spec.steps), d);
    Eigen::VectorXd z(d);
    for (std::size_t t = 0; t < spec.steps; ++t) {
        for (Eigen::Index j = 0; j < d; ++j) z[j] = normal(rng);
        Eigen::VectorXd x = sigma * z;
        if (spec.structured) {
            const double frac = spec.steps > 1 ? static_cast<double>(t) / static_cast<double>(spec.steps - 1) : 0.0;
            const double ell = spec.ell_start + (1.0 - spec.ell_start) * frac;
            const Eigen::VectorXd proj = dirs.transpose() * z;
            x += (std::sqrt(ell) - 1.0) * sigma * (dirs * proj);
        }
        out.rows.row(static_cast<Eigen::Index>(t)) = x.cast<float>().transpose();
    }
    return out;
}

std::vector<LabeledSequence> detection_fixture(const DetectionFixtureSpec& spec, std::uint64_t seed) {
    if (spec.max_spikes == 0) throw std::invalid_argument("max_spikes must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ell_dist(spec.ell_min, spec.ell_max);
    std::uniform_real_distribution<double> sigma_dist(std::log(spec.sigma2_min), std::log(spec.sigma2_max));
    std::uniform_int_distribution<std::size_t> spike_dist(1, spec.max_spikes);
    std::vector<LabeledSequence> out;
    out.reserve(spec.sequences);
    for (std::size_t i = 0; i < spec.sequences; ++i) {
        StreamSpec s;
        s.steps = spec.steps;
        s.width = spec.width;
        s.structured = (i % 2) == 1;
        s.sigma2 = std::exp(sigma_dist(rng));
        s.spikes = spike_dist(rng);
        s.ell_start = ell_dist(rng);
        const std::uint64_t stream_seed = rng();
        const auto stream = generate_stream(s, stream_seed);
        const RowMatrix rows = stream.rows.cast<double>();
        out.push_back({series_matrix(descriptor_series(rows, spec.window)), s.structured ? 1 : 0});
    }
    return out;
}

std::vector<LabeledSequence> separable_fixture(std::size_t count, std::size_t steps, std::uint64_t seed) {
    if (count < 2 || steps == 0) throw std::invalid_argument("separable fixture needs count >= 2 and steps >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const auto entropy_slot = static_cast<Eigen::Index>(FeatureSlot::spectral_entropy);
    std::vector<LabeledSequence> out;
    for (std::size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % 2);
        RowMatrix m(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(kFeatureCount));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = normal(rng);
            m(r, entropy_slot) += label ? 10.0 : -10.0;
        }
        out.push_back({std::move(m), label});
    }
    return out;
}

MixtureTask gaussian_mixture(const MixtureSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2 || spec.dim == 0) throw std::invalid_argument("mixture needs >= 2 classes and dim > 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const auto dim = static_cast<Eigen::Index>(spec.dim);
    Eigen::MatrixXd means(dim, static_cast<Eigen::Index>(spec.classes));
    for (Eigen::Index c = 0; c < means.cols(); ++c) {
        for (Eigen::Index i = 0; i < dim; ++i) means(i, c) = spec.separation * normal(rng);
    }
    std::uniform_int_distribution<int> label_dist(0, static_cast<int>(spec.classes) - 1);
    auto draw = [&](std::size_t n) {
        Dataset d;
        d.x.resize(dim, static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < n; ++j) {
            const int y = label_dist(rng);
            for (Eigen::Index i = 0; i < dim; ++i) d.x(i, static_cast<Eigen::Index>(j)) = means(i, y) + normal(rng);
            d.y.push_back(y);
        }
        return d;
    };
    MixtureTask task;
    task.train = draw(spec.n_train);
    task.validation = draw(spec.n_validation);
    task.test = draw(spec.n_test);
    return task;
}

}  // namespace specgeo
