#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace specgeo {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;  // decoupled: theta -= lr * wd * theta
};

/// First/second moment accumulators, shaped like the parameter list.
struct AdamState {
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update with decoupled weight decay. The state is
/// lazily shaped on the first call.
void adam_step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads,
               AdamState& state, const AdamConfig& config);

}  // namespace specgeo
