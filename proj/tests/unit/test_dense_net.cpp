#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "specgeo/dense_net.hpp"
#include "specgeo/errors.hpp"
#include "specgeo/synthetic.hpp"

using namespace specgeo;

namespace {

Dataset random_batch(std::size_t d, std::size_t n, int classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> label(0, classes - 1);
    Dataset b;
    b.x.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = normal(rng);
    for (std::size_t j = 0; j < n; ++j) b.y.push_back(label(rng));
    return b;
}

double batch_loss(const DenseNet& net, const Dataset& batch, const DenseNet* teacher, double alpha, double t) {
    const Eigen::MatrixXd s = net.forward(batch.x);
    Eigen::MatrixXd tl;
    if (teacher) tl = teacher->forward(batch.x);
    double total = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        const Eigen::VectorXd sj = s.col(j);
        total += teacher ? distill_loss(sj, tl.col(j), batch.y[j], alpha, t) : cross_entropy(sj, batch.y[j]);
    }
    return total / static_cast<double>(s.cols());
}

}  // namespace

TEST(DenseNet, ShapesAndCount) {
    const DenseNet net({8, 16, 12, 3}, 1);
    EXPECT_EQ(net.layer_count(), 3u);
    EXPECT_EQ(net.input_width(), 8u);
    EXPECT_EQ(net.output_width(), 3u);
    EXPECT_EQ(net.widths(), (std::vector<std::size_t>{8, 16, 12, 3}));
    EXPECT_EQ(net.parameter_count(), 16u * 9 + 12 * 17 + 3 * 13);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(8, 5);
    EXPECT_EQ(net.forward(x).rows(), 3);
    EXPECT_EQ(net.layer_output(x, 1).rows(), 12);
    EXPECT_THROW(net.layer_output(x, 3), std::invalid_argument);
    EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(7, 2)), std::invalid_argument);
    EXPECT_THROW(DenseNet({4}, 0), std::invalid_argument);
}

TEST(DenseNet, LayerOutputChain) {
    const DenseNet net({4, 6, 5, 2}, 3);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 7);
    const auto& l = net.layers();
    const Eigen::MatrixXd a0 = ((l[0].weight * x).colwise() + l[0].bias).array().tanh();
    EXPECT_TRUE(net.layer_output(x, 0).isApprox(a0, 1e-14));
    const Eigen::MatrixXd a1 = ((l[1].weight * a0).colwise() + l[1].bias).array().tanh();
    const Eigen::MatrixXd logits = (l[2].weight * a1).colwise() + l[2].bias;
    EXPECT_TRUE(net.forward(x).isApprox(logits, 1e-14));
    EXPECT_TRUE(net.layer_output(x, 2).isApprox(logits, 1e-14));
}

TEST(Softmax, TemperatureAndStability) {
    Eigen::VectorXd z(3);
    z << 1000.0, 1001.0, 999.0;
    const auto p = softmax(z);
    EXPECT_NEAR(p.sum(), 1.0, 1e-15);
    EXPECT_NEAR(p[1] / p[0], std::exp(1.0), 1e-12);
    const auto pt = softmax(z, 2.0);
    EXPECT_NEAR(pt[1] / pt[0], std::exp(0.5), 1e-12);
    EXPECT_THROW(softmax(z, 0.0), std::invalid_argument);
}

TEST(DistillLoss, AlphaOneIsCrossEntropy) {
    Eigen::VectorXd s(3), t(3);
    s << 0.3, -1.0, 2.0;
    t << 5.0, 0.0, -3.0;
    for (int y = 0; y < 3; ++y) EXPECT_EQ(distill_loss(s, t, y, 1.0, 2.0), cross_entropy(s, y));
}

TEST(DistillLoss, IdenticalLogitsLeaveCrossEntropy) {
    Eigen::VectorXd s(4);
    s << 0.3, -1.0, 2.0, 0.0;
    EXPECT_NEAR(distill_loss(s, s, 2, 0.7, 3.0), 0.7 * cross_entropy(s, 2), 1e-15);
}

TEST(DistillLoss, HandCase) {
    Eigen::VectorXd teacher(2), student(2);
    teacher << 1.0, 0.0;
    student << 0.0, 1.0;
    const double e = std::exp(1.0);
    const double ce = std::log(1.0 + e);
    const double pt0 = e / (1.0 + e);
    const double pt1 = 1.0 / (1.0 + e);
    const double kl = pt0 * std::log(pt0 / pt1) + pt1 * std::log(pt1 / pt0);
    EXPECT_NEAR(distill_loss(student, teacher, 0, 0.7, 1.0), 0.7 * ce + 0.3 * kl, 1e-14);
    EXPECT_NEAR(distill_loss(student, teacher, 0, 0.7, 1.0), 1.0579183, 1e-6);
}

TEST(DistillLoss, Errors) {
    Eigen::VectorXd s(2);
    s << 0.0, 1.0;
    EXPECT_THROW(distill_loss(s, s, 0, 1.5, 1.0), std::invalid_argument);
    EXPECT_THROW(distill_loss(s, Eigen::VectorXd::Zero(3), 0, 0.5, 1.0), std::invalid_argument);
    EXPECT_THROW(cross_entropy(s, 2), std::invalid_argument);
}

class DenseGradientCheck : public ::testing::TestWithParam<std::tuple<double, double, int>> {};

TEST_P(DenseGradientCheck, MatchesCentralDifferences) {
    const auto [alpha, temperature, activation] = GetParam();
    DenseNet net({5, 7, 6, 4}, 2, static_cast<Activation>(activation));
    const DenseNet teacher({5, 9, 4}, 8);
    const Dataset batch = random_batch(5, 11, 4, 3);
    const DenseNet* t = alpha < 1.0 ? &teacher : nullptr;
    const auto g = dense_gradients(net, batch, t, alpha, temperature);
    EXPECT_NEAR(g.loss, batch_loss(net, batch, t, alpha, temperature), 1e-12);
    ASSERT_EQ(g.grads.size(), 6u);
    const double h = 1e-5;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        for (int part = 0; part < 2; ++part) {
            double* data = part == 0 ? net.layers()[l].weight.data() : net.layers()[l].bias.data();
            const Eigen::Index size = part == 0 ? net.layers()[l].weight.size() : net.layers()[l].bias.size();
            const auto& grad = g.grads[2 * l + part];
            for (Eigen::Index i = 0; i < size; ++i) {
                const double saved = data[i];
                data[i] = saved + h;
                const double up = batch_loss(net, batch, t, alpha, temperature);
                data[i] = saved - h;
                const double down = batch_loss(net, batch, t, alpha, temperature);
                data[i] = saved;
                const double numeric = (up - down) / (2 * h);
                const double analytic = grad.data()[i];
                EXPECT_LE(std::abs(analytic - numeric),
                          1e-4 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9)
                    << "layer " << l << " part " << part << " index " << i;
            }
        }
    }
}

INSTANTIATE_TEST_SUITE_P(LossesAndActivations, DenseGradientCheck,
                         ::testing::Values(std::make_tuple(1.0, 1.0, 0), std::make_tuple(0.7, 1.0, 0),
                                           std::make_tuple(0.3, 2.5, 0), std::make_tuple(0.5, 1.0, 1)));

TEST(Fit, LearnsMixture) {
    MixtureSpec spec;
    spec.n_train = 1500;
    spec.n_validation = 500;
    spec.n_test = 10;
    spec.separation = 1.0;
    const auto task = gaussian_mixture(spec, 1);
    DenseNet net({32, 64, 10}, 1);
    const double before = accuracy(net, task.validation);
    FitConfig cfg;
    cfg.epochs = 10;
    fit_cross_entropy(net, task.train, cfg);
    EXPECT_GT(accuracy(net, task.validation), std::max(0.8, before + 0.3));
}

TEST(Fit, DistillMovesStudentTowardTeacher) {
    const auto task = gaussian_mixture({4, 8, 1.5, 800, 200, 10}, 2);
    DenseNet teacher({8, 16, 4}, 1);
    fit_cross_entropy(teacher, task.train, {{1e-2, 0.9, 0.999, 1e-8, 0.0}, 10, 32, 0});
    DenseNet student({8, 16, 4}, 9);
    auto gap = [&](const DenseNet& s) { return (s.forward(task.validation.x) - teacher.forward(task.validation.x)).norm(); };
    const double before = gap(student);
    fit_distill(student, teacher, task.train, 0.0, 1.0, {{1e-2, 0.9, 0.999, 1e-8, 0.0}, 10, 32, 0});
    EXPECT_LT(gap(student), before);
}

TEST(Checkpoint, RoundTrip) {
    const DenseNet net({6, 5, 3}, 4, Activation::identity);
    const auto path = (std::filesystem::temp_directory_path() / "specgeo_dense.bin").string();
    save_dense(path, net);
    const DenseNet back = load_dense(path);
    EXPECT_EQ(back.hidden_activation(), Activation::identity);
    EXPECT_EQ(back.widths(), net.widths());
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        EXPECT_EQ(back.layers()[l].weight, net.layers()[l].weight);
        EXPECT_EQ(back.layers()[l].bias, net.layers()[l].bias);
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDetected) {
    const std::string bytes = encode_dense(DenseNet({3, 2}, 1));
    EXPECT_THROW(decode_dense(bytes.substr(0, bytes.size() - 1)), FormatError);
    EXPECT_THROW(decode_dense(bytes + "z"), FormatError);
    EXPECT_THROW(decode_dense("SPKX" + bytes.substr(4)), FormatError);
}
