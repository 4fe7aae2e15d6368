#pragma once

// Small dense classifier used as the compression target: affine layers with
// tanh (or identity) between them and identity on the final logits.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "specgeo/adam.hpp"

namespace specgeo {

enum class Activation : std::uint32_t { tanh = 0, identity = 1 };

struct DenseLayer {
    Eigen::MatrixXd weight;  // d_out x d_in
    Eigen::VectorXd bias;    // d_out
};

/// Column-major sample matrix (d x n) with integer class labels.
struct Dataset {
    Eigen::MatrixXd x;
    std::vector<int> y;

    std::size_t size() const noexcept { return y.size(); }
    Dataset subset(const std::vector<std::size_t>& idx) const;
};

class DenseNet {
public:
    DenseNet() = default;
    /// widths = {d_in, h_1, ..., classes}; uniform(+-1/sqrt(fan_in)) weights, zero biases.
    DenseNet(const std::vector<std::size_t>& widths, std::uint64_t seed, Activation hidden = Activation::tanh);
    DenseNet(std::vector<DenseLayer> layers, Activation hidden);

    std::size_t layer_count() const noexcept { return layers_.size(); }
    std::size_t input_width() const;
    std::size_t output_width() const;
    std::vector<std::size_t> widths() const;
    Activation hidden_activation() const noexcept { return hidden_; }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
    std::vector<DenseLayer>& layers() noexcept { return layers_; }

    std::size_t parameter_count() const;

    /// Logits (classes x n) for inputs (d_in x n).
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    /// Output of `layer` after its nonlinearity, (d_layer x n).
    Eigen::MatrixXd layer_output(const Eigen::MatrixXd& x, std::size_t layer) const;
    std::vector<int> predict(const Eigen::MatrixXd& x) const;

    /// Throws std::invalid_argument on inconsistent shapes.
    void validate() const;

private:
    std::vector<DenseLayer> layers_;
    Activation hidden_ = Activation::tanh;
};

double accuracy(const DenseNet& net, const Dataset& data);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits, double temperature = 1.0);

/// alpha * CE(student, label) + (1 - alpha) * T^2 * KL(p_teacher^T || p_student^T).
double distill_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int label,
                    double alpha, double temperature);
double cross_entropy(const Eigen::VectorXd& logits, int label);

struct FitConfig {
    AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.0};
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

/// Mini-batch Adam on mean cross-entropy.
void fit_cross_entropy(DenseNet& net, const Dataset& data, const FitConfig& config);

/// Mini-batch Adam on mean distill_loss against a fixed teacher.
void fit_distill(DenseNet& student, const DenseNet& teacher, const Dataset& data, double alpha,
                 double temperature, const FitConfig& config);

/// Mean loss and gradients (registry order: W_0, b_0, W_1, b_1, ...) for a
/// batch, given dL/dlogits per sample. Exposed for gradient checks.
struct DenseGradients {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> grads;
};
DenseGradients dense_gradients(const DenseNet& net, const Dataset& batch, const DenseNet* teacher = nullptr,
                               double alpha = 1.0, double temperature = 1.0);

inline constexpr std::uint32_t kDenseCheckpointVersion = 1;

std::string encode_dense(const DenseNet& net);
DenseNet decode_dense(std::string_view bytes);
void save_dense(const std::filesystem::path& path, const DenseNet& net);
DenseNet load_dense(const std::filesystem::path& path);

}  // namespace specgeo
