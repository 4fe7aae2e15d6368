#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "specgeo/errors.hpp"
#include "specgeo/recurrent_head.hpp"
#include "specgeo/synthetic.hpp"

using namespace specgeo;

namespace {

RowMatrix random_sequence(Eigen::Index steps, Eigen::Index width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    RowMatrix m(steps, width);
    for (Eigen::Index i = 0; i < steps; ++i)
        for (Eigen::Index j = 0; j < width; ++j) m(i, j) = normal(rng);
    return m;
}

RecurrentHeadParams random_params(CellKind kind, std::size_t hidden, std::size_t input, std::uint64_t seed) {
    auto p = RecurrentHeadParams::initialize(kind, hidden, seed, input);
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& t : p.tensors)
        if (t.cols() == 1)
            for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, 0) = u(rng);
    return p;
}

// |a - b| <= 1e-4 max(|a|, |b|), with an absolute floor where both vanish
bool close(double analytic, double numeric) {
    return std::abs(analytic - numeric) <= 1e-4 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9;
}

void gradient_check(CellKind kind, Eigen::Index steps, std::size_t hidden, LossReduction reduction,
                    std::uint64_t seed) {
    const std::size_t input = 6;
    auto p = random_params(kind, hidden, input, seed);
    const RowMatrix x = random_sequence(steps, static_cast<Eigen::Index>(input), seed + 7);
    const int label = static_cast<int>(seed % 2);
    const auto g = backward(p, x, label, reduction);
    EXPECT_NEAR(g.loss, bce_loss(head_forward(p, x), label, reduction), 1e-12);
    const auto& names = tensor_registry(kind);
    const double h = 1e-5;
    for (std::size_t t = 0; t < p.tensors.size(); ++t) {
        for (Eigen::Index i = 0; i < p.tensors[t].size(); ++i) {
            double& w = p.tensors[t].data()[i];
            const double saved = w;
            w = saved + h;
            const double up = bce_loss(head_forward(p, x), label, reduction);
            w = saved - h;
            const double down = bce_loss(head_forward(p, x), label, reduction);
            w = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = g.grads[t].data()[i];
            EXPECT_TRUE(close(analytic, numeric))
                << to_string(kind) << " T=" << steps << " h=" << hidden << " " << names[t] << "[" << i
                << "] analytic " << analytic << " numeric " << numeric;
        }
    }
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Registry, ParameterCountClosedForm) {
    for (auto kind : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
        for (std::size_t h : {1, 4, 16}) {
            const auto p = RecurrentHeadParams::zeros(kind, h);
            EXPECT_EQ(p.parameter_count(), parameter_count(kind, h));
            EXPECT_EQ(p.tensors.size(), tensor_registry(kind).size());
            p.validate();
        }
    }
    EXPECT_EQ(parameter_count(CellKind::gru, 16, 22), 16u * 22 + 16 + 3 * (2 * 256 + 16) + 17);
}

TEST(Registry, ParseCellKind) {
    EXPECT_EQ(parse_cell_kind("gru"), CellKind::gru);
    EXPECT_EQ(parse_cell_kind("lstm"), CellKind::lstm);
    EXPECT_EQ(parse_cell_kind("vanilla"), CellKind::vanilla);
    EXPECT_THROW(parse_cell_kind("transformer"), std::invalid_argument);
}

TEST(Cell, GruZeroWeights) {
    const auto p = RecurrentHeadParams::zeros(CellKind::gru, 3, 2);
    CellState s = CellState::zeros(p);
    s.h << 1.0, -2.0, 0.25;
    const auto next = cell_step(p, Eigen::VectorXd::Zero(3), s);
    EXPECT_TRUE(next.h.isApprox(0.5 * s.h, 1e-15));
}

TEST(Cell, LstmZeroWeights) {
    const auto p = RecurrentHeadParams::zeros(CellKind::lstm, 3, 2);
    CellState s = CellState::zeros(p);
    s.c << 1.0, -2.0, 0.25;
    const auto next = cell_step(p, Eigen::VectorXd::Zero(3), s);
    EXPECT_TRUE(next.c.isApprox(0.5 * s.c, 1e-15));
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(next.h[i], 0.5 * std::tanh(0.5 * s.c[i]), 1e-15);
}

TEST(Cell, VanillaWithoutRecurrenceIgnoresState) {
    auto p = random_params(CellKind::vanilla, 4, 3, 1);
    p.tensor("W_hh").setZero();
    const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
    CellState a = CellState::zeros(p);
    CellState b = CellState::zeros(p);
    b.h << 5.0, -3.0, 2.0, 0.1;
    EXPECT_EQ(cell_step(p, u, a).h, cell_step(p, u, b).h);
}

TEST(Forward, ZeroOutputHeadGivesHalf) {
    auto p = random_params(CellKind::gru, 5, 22, 2);
    p.tensor("out_W").setZero();
    p.tensor("out_b").setZero();
    for (double prob : head_forward(p, random_sequence(9, 22, 3))) EXPECT_EQ(prob, 0.5);
}

TEST(Forward, LengthOneSeries) {
    const auto p = random_params(CellKind::lstm, 4, 22, 2);
    const auto probs = head_forward(p, random_sequence(1, 22, 1));
    ASSERT_EQ(probs.size(), 1u);
    EXPECT_GT(probs[0], 0.0);
    EXPECT_LT(probs[0], 1.0);
}

TEST(Forward, Causal) {
    for (auto kind : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
        const auto p = random_params(kind, 6, 22, 4);
        const RowMatrix x = random_sequence(7, 22, 5);
        RowMatrix doubled(14, 22);
        doubled << x, x;
        const auto a = head_forward(p, x);
        const auto b = head_forward(p, doubled);
        ASSERT_EQ(b.size(), 14u);
        for (std::size_t t = 0; t < 7; ++t) EXPECT_EQ(a[t], b[t]);
    }
}

TEST(Forward, WidthMismatchThrows) {
    const auto p = random_params(CellKind::gru, 4, 22, 1);
    EXPECT_THROW(head_forward(p, random_sequence(3, 5, 1)), std::invalid_argument);
}

TEST(Loss, Examples) {
    EXPECT_NEAR(bce(0.5, 0), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce(0.5, 1), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce(0.9, 1), -std::log(0.9), 1e-15);
    EXPECT_LT(bce(1.0 - 1e-12, 1), 1e-6);
    EXPECT_LT(bce(1e-12, 0), 1e-6);
    EXPECT_TRUE(std::isfinite(bce(0.0, 1)));
    const std::vector<double> probs{0.2, 0.5, 0.9};
    EXPECT_NEAR(bce_loss(probs, 1), -std::log(0.9), 1e-15);
    EXPECT_NEAR(bce_loss(probs, 1, LossReduction::mean_over_steps),
                -(std::log(0.2) + std::log(0.5) + std::log(0.9)) / 3.0, 1e-15);
}

class GradientCheck : public ::testing::TestWithParam<std::tuple<CellKind, int, int>> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
    const auto [kind, steps, hidden] = GetParam();
    gradient_check(kind, steps, static_cast<std::size_t>(hidden), LossReduction::final_step,
                   static_cast<std::uint64_t>(steps * 31 + hidden));
}

INSTANTIATE_TEST_SUITE_P(AllCells, GradientCheck,
                         ::testing::Combine(::testing::Values(CellKind::vanilla, CellKind::gru, CellKind::lstm),
                                            ::testing::Values(1, 5, 17), ::testing::Values(4, 16)));

TEST(Gradient, MeanReduction) {
    for (auto kind : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
        gradient_check(kind, 5, 4, LossReduction::mean_over_steps, 99);
    }
}

TEST(Gradient, LengthOneHasNoRecurrentGradient) {
    const auto p = random_params(CellKind::vanilla, 5, 22, 3);
    const auto g = backward(p, random_sequence(1, 22, 2), 1);
    EXPECT_EQ(g.grads[3].norm(), 0.0);  // W_hh
    EXPECT_GT(g.grads[2].norm(), 0.0);
}

TEST(Gradient, SaturatedOptimumHasTinyBiasGradient) {
    auto p = RecurrentHeadParams::zeros(CellKind::gru, 4, 22);
    p.tensor("out_b")(0, 0) = 20.0;
    const auto g = backward(p, random_sequence(4, 22, 1), 1);
    EXPECT_LE(std::abs(g.grads.back()(0, 0)), 1e-6);
}

TEST(Adam, ZeroGradientNoDecayIsNoop) {
    auto p = random_params(CellKind::gru, 4, 6, 1);
    const auto before = p.tensors;
    std::vector<Eigen::MatrixXd> zero;
    for (const auto& t : p.tensors) zero.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
    AdamState state;
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    adam_step(p, zero, state, cfg);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(p.tensors[i], before[i]);
}

TEST(Adam, FirstStepIsSignStep) {
    Eigen::MatrixXd theta(1, 2);
    theta << 1.0, -0.5;
    Eigen::MatrixXd grad(1, 2);
    grad << 3.0, -0.01;
    AdamState state;
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
    Eigen::MatrixXd* ptr = &theta;
    adam_step(std::span<Eigen::MatrixXd* const>(&ptr, 1), std::span<const Eigen::MatrixXd>(&grad, 1), state, cfg);
    EXPECT_NEAR(theta(0, 0), 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
    EXPECT_NEAR(theta(0, 1), -0.5 + 0.1 * 0.01 / (0.01 + 1e-8), 1e-12);
    EXPECT_EQ(state.step, 1);
}

TEST(Adam, DecayShrinks) {
    Eigen::MatrixXd theta(1, 2);
    theta << 2.0, -3.0;
    const Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(1, 2);
    AdamState state;
    AdamConfig cfg;
    cfg.weight_decay = 0.1;
    Eigen::MatrixXd* ptr = &theta;
    for (int i = 0; i < 3; ++i) {
        const Eigen::MatrixXd prev = theta;
        adam_step(std::span<Eigen::MatrixXd* const>(&ptr, 1), std::span<const Eigen::MatrixXd>(&grad, 1), state,
                  cfg);
        EXPECT_LT(std::abs(theta(0, 0)), std::abs(prev(0, 0)));
        EXPECT_LT(std::abs(theta(0, 1)), std::abs(prev(0, 1)));
    }
}

TEST(Auroc, Examples) {
    EXPECT_EQ(auroc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}), 1.0);
    EXPECT_EQ(auroc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1, 0}), 0.5);
    EXPECT_EQ(auroc(std::vector<double>{0.9, 0.8, 0.4, 0.3}, std::vector<int>{1, 0, 1, 0}), 0.75);
    EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
}

TEST(Auroc, MatchesPairCounting) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> bucket(0, 5);
    std::vector<double> s(60);
    std::vector<int> y(60);
    for (std::size_t i = 0; i < s.size(); ++i) {
        y[i] = static_cast<int>(i % 3 == 0);
        s[i] = bucket(rng) + 0.5 * y[i];
    }
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    EXPECT_NEAR(auroc(s, y), wins / pairs, 1e-14);
}

TEST(Gate, Strict) {
    EXPECT_EQ(gate(0.9, 0.5), GateDecision::alarm);
    EXPECT_EQ(gate(0.5, 0.5), GateDecision::pass);
    EXPECT_EQ(gate(0.2, 0.5), GateDecision::pass);
}

TEST(Scaler, StandardizesTrainSplit) {
    const RowMatrix a = random_sequence(10, 4, 1) * 3.0;
    RowMatrix b = random_sequence(6, 4, 2);
    b.col(2).setConstant(7.0);
    const auto s = FeatureScaler::fit({&a, &b});
    RowMatrix all(16, 4);
    all << s.apply(a), s.apply(b);
    for (Eigen::Index c = 0; c < 4; ++c) EXPECT_NEAR(all.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(all.col(0).array().square().mean()), 1.0, 1e-12);
}

TEST(Split, StratifiedAndDeterministic) {
    const auto data = separable_fixture(50, 3, 1);
    const auto [tr, va] = stratified_split(data, 0.2, 7);
    EXPECT_EQ(tr.size() + va.size(), 50u);
    int pos = 0;
    for (auto i : va) pos += data[i].label;
    EXPECT_EQ(pos * 2, static_cast<int>(va.size()));
    EXPECT_EQ(stratified_split(data, 0.2, 7), std::make_pair(tr, va));
}

TEST(Training, SeparableReachesPerfectAuroc) {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.adam.learning_rate = 1e-2;
    const auto result = train(separable_fixture(200, 8, 3), cfg);
    ASSERT_EQ(result.history.size(), 5u);
    EXPECT_EQ(result.history.back().validation_auroc, 1.0);
    for (std::size_t e = 1; e < result.history.size(); ++e) {
        EXPECT_LE(result.history[e].train_loss, result.history[e - 1].train_loss + 1e-3);
    }
}

TEST(Training, ShuffledLabelsAreNull) {
    double sum = 0.0;
    const int seeds = 20;
    for (int seed = 0; seed < seeds; ++seed) {
        auto data = separable_fixture(120, 6, 100 + seed);
        std::mt19937_64 rng(seed);
        std::vector<int> labels;
        for (const auto& d : data) labels.push_back(d.label);
        std::shuffle(labels.begin(), labels.end(), rng);
        for (std::size_t i = 0; i < data.size(); ++i) data[i].label = labels[i];
        TrainConfig cfg;
        cfg.epochs = 5;
        cfg.hidden = 8;
        cfg.seed = static_cast<std::uint64_t>(seed);
        sum += train(data, cfg).history.back().validation_auroc;
    }
    const double mean = sum / seeds;
    EXPECT_GE(mean, 0.35);
    EXPECT_LE(mean, 0.65);
}

TEST(Training, ConfigValidation) {
    TrainConfig cfg;
    cfg.hidden = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.validation_fraction = 1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTrip) {
    for (auto kind : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
        HeadModel m{random_params(kind, 5, 22, 8), FeatureScaler::identity(22)};
        m.scaler.mean.setLinSpaced(22, -1.0, 1.0);
        m.scaler.scale.setLinSpaced(22, 0.5, 2.0);
        const auto path = temp_path("specgeo_head_" + std::string(to_string(kind)) + ".bin");
        save_head(path, m);
        const auto back = load_head(path);
        EXPECT_EQ(back.params.kind, kind);
        for (std::size_t i = 0; i < m.params.tensors.size(); ++i) EXPECT_EQ(back.params.tensors[i], m.params.tensors[i]);
        EXPECT_EQ(back.scaler.mean, m.scaler.mean);
        EXPECT_EQ(back.scaler.scale, m.scaler.scale);
        const RowMatrix x = random_sequence(6, 22, 1);
        EXPECT_EQ(back.probabilities(x), m.probabilities(x));
        std::filesystem::remove(path);
    }
}

TEST(Checkpoint, CorruptionIsDetected) {
    HeadModel m{random_params(CellKind::gru, 3, 22, 8), FeatureScaler::identity(22)};
    const std::string bytes = encode_head(m);
    EXPECT_THROW(decode_head(bytes.substr(0, bytes.size() - 3)), DataError);
    EXPECT_THROW(decode_head(bytes + "x"), DataError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_head(bad_magic), DataError);
    EXPECT_THROW(load_head(temp_path("specgeo_missing_head.bin")), DataError);
}

TEST(Runner, MatchesBatchProbabilities) {
    HeadModel m{random_params(CellKind::lstm, 6, 22, 3), FeatureScaler::identity(22)};
    m.scaler.mean.setConstant(0.3);
    m.scaler.scale.setConstant(1.7);
    const RowMatrix x = random_sequence(9, 22, 4);
    const auto expected = m.probabilities(x);
    HeadRunner runner(m);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double p = runner.step(std::span<const double>(x.row(t).data(), 22));
        EXPECT_NEAR(p, expected[static_cast<std::size_t>(t)], 1e-14);
    }
    EXPECT_EQ(runner.steps(), 9u);
    runner.reset();
    EXPECT_NEAR(runner.step(std::span<const double>(x.row(0).data(), 22)), expected[0], 1e-14);
}
