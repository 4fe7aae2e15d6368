#pragma once

// Recurrent anomaly head over descriptor series: linear input projection,
// one vanilla/GRU/LSTM cell, sigmoid output. Trained with exact BPTT, Adam
// and binary cross-entropy.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "specgeo/adam.hpp"
#include "specgeo/spectral_features.hpp"
#include "specgeo/stream_window.hpp"

namespace specgeo {

enum class CellKind : std::uint32_t { vanilla = 0, gru = 1, lstm = 2 };

std::string_view to_string(CellKind kind);
CellKind parse_cell_kind(std::string_view name);

/// Tensor names in registry (checkpoint and gradient) order for a cell kind.
/// Biases are column vectors; the output head is 1 x hidden plus a 1 x 1 bias.
const std::vector<std::string>& tensor_registry(CellKind kind);

/// Closed-form parameter count: (h in + h) + cell + (h + 1), with the cell
/// holding g gate blocks of (2 h^2 + h) for g = 1 (vanilla), 3 (GRU), 4 (LSTM).
std::size_t parameter_count(CellKind kind, std::size_t hidden, std::size_t input = kFeatureCount);

struct RecurrentHeadParams {
    CellKind kind = CellKind::gru;
    std::size_t hidden = 16;
    std::size_t input = kFeatureCount;
    std::vector<Eigen::MatrixXd> tensors;  // registry order

    /// All-zero parameters of the right shapes.
    static RecurrentHeadParams zeros(CellKind kind, std::size_t hidden, std::size_t input = kFeatureCount);
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    static RecurrentHeadParams initialize(CellKind kind, std::size_t hidden, std::uint64_t seed,
                                          std::size_t input = kFeatureCount);

    Eigen::MatrixXd& tensor(std::string_view name);
    const Eigen::MatrixXd& tensor(std::string_view name) const;
    std::size_t parameter_count() const;
    /// Throws std::invalid_argument when a tensor shape disagrees with the registry.
    void validate() const;
};

struct CellState {
    Eigen::VectorXd h;
    Eigen::VectorXd c;  // LSTM memory cell; empty for other kinds

    static CellState zeros(const RecurrentHeadParams& params);
};

/// One recurrence step on an already projected input.
CellState cell_step(const RecurrentHeadParams& params, const Eigen::VectorXd& projected,
                    const CellState& state);

/// T x input matrix view of a descriptor series.
RowMatrix series_matrix(const DescriptorSeries& series);

/// Per-step anomaly probabilities, starting from a zero state.
std::vector<double> head_forward(const RecurrentHeadParams& params, const RowMatrix& sequence);
std::vector<double> head_forward(const RecurrentHeadParams& params, const DescriptorSeries& series);

enum class LossReduction { final_step, mean_over_steps };

inline constexpr double kProbabilityClamp = 1e-7;

double bce(double prob, int label);
double bce_loss(std::span<const double> probs, int label,
                LossReduction reduction = LossReduction::final_step);

struct HeadGradients {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> grads;  // registry order
};

/// Exact gradient of bce_loss by backpropagation through time.
HeadGradients backward(const RecurrentHeadParams& params, const RowMatrix& sequence, int label,
                       LossReduction reduction = LossReduction::final_step);

void adam_step(RecurrentHeadParams& params, const std::vector<Eigen::MatrixXd>& grads,
               AdamState& state, const AdamConfig& config);

/// Per-slot z-scoring with statistics frozen from a training split.
struct FeatureScaler {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static FeatureScaler identity(std::size_t input);
    static FeatureScaler fit(const std::vector<const RowMatrix*>& sequences);
    RowMatrix apply(const RowMatrix& sequence) const;
};

/// Trained head plus the input standardization it expects.
struct HeadModel {
    RecurrentHeadParams params;
    FeatureScaler scaler;

    std::vector<double> probabilities(const RowMatrix& raw_sequence) const;
    double score(const RowMatrix& raw_sequence) const { return probabilities(raw_sequence).back(); }
};

/// Step-by-step scoring of one stream; reproduces HeadModel::probabilities.
class HeadRunner {
public:
    explicit HeadRunner(const HeadModel& model);

    /// Consumes one raw descriptor row, returns the probability at this step.
    double step(std::span<const double> raw_features);
    void reset();
    std::size_t steps() const noexcept { return steps_; }

private:
    const HeadModel* model_;
    CellState state_;
    std::size_t steps_ = 0;
};

struct LabeledSequence {
    RowMatrix features;  // T x input, raw descriptor values
    int label = 0;
};

struct TrainConfig {
    CellKind cell = CellKind::gru;
    std::size_t hidden = 16;
    AdamConfig adam{};
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    double gate_threshold = 0.5;
    double validation_fraction = 0.2;
    LossReduction reduction = LossReduction::final_step;
    bool standardize = true;

    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_auroc = 0.0;
};

struct TrainResult {
    HeadModel model;
    std::vector<EpochMetrics> history;
};

/// Stratified, seeded split into (train, validation) index lists.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<LabeledSequence>& dataset, double validation_fraction, std::uint64_t seed);

TrainResult train(const std::vector<LabeledSequence>& dataset, const TrainConfig& config);
TrainResult train(const std::vector<LabeledSequence>& train_set,
                  const std::vector<LabeledSequence>& validation_set, const TrainConfig& config);

/// Area under the ROC curve; ties between a positive and a negative count 1/2.
double auroc(std::span<const double> scores, std::span<const int> labels);

enum class GateDecision { pass, alarm };

/// Alarm iff prob > tau (strict).
GateDecision gate(double prob, double tau = 0.5);

inline constexpr std::uint32_t kHeadCheckpointVersion = 1;

std::string encode_head(const HeadModel& model);
HeadModel decode_head(std::string_view bytes);
void save_head(const std::filesystem::path& path, const HeadModel& model);
HeadModel load_head(const std::filesystem::path& path);

}  // namespace specgeo
