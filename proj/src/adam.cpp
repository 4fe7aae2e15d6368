#include "specgeo/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace specgeo {

void adam_step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads,
               AdamState& state, const AdamConfig& config) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter/gradient count mismatch");
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
            state.v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam: state does not match parameters");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Eigen::MatrixXd& p = *params[i];
        const Eigen::MatrixXd& g = grads[i];
        if (g.rows() != p.rows() || g.cols() != p.cols()) {
            throw std::invalid_argument("adam: gradient shape mismatch");
        }
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
        if (config.weight_decay != 0.0) p *= 1.0 - config.learning_rate * config.weight_decay;
        p.array() -= config.learning_rate * (state.m[i].array() / c1) /
                     ((state.v[i].array() / c2).sqrt() + config.epsilon);
    }
}

}  // namespace specgeo
