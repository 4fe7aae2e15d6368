#pragma once

// RMT-guided compression of a DenseNet: per hidden layer, fit the MP bulk to
// calibration activations, keep the outlier eigendirections as a fixed
// projection folded into the layer, then self-distill against the
// pre-reduction model.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "specgeo/dense_net.hpp"
#include "specgeo/rmt_laws.hpp"

namespace specgeo {

struct Spike {
    double theta = 0.0;       // population variance along the direction
    Eigen::VectorXd direction;  // unit vector
};

/// Population covariance sigma2 (I - sum u u^T) + sum theta u u^T.
struct SpikedModelSpec {
    std::size_t d = 0;
    std::size_t n = 0;
    double sigma2 = 1.0;
    std::vector<Spike> spikes;

    /// Throws std::invalid_argument on bad sizes, theta <= 0 or non-orthonormal directions.
    void validate() const;
};

/// n x d sample with rows drawn from N(0, Sigma).
Eigen::MatrixXd spiked_sample(const SpikedModelSpec& spec, std::uint64_t seed);

/// Spike of strength theta along a random direction (seeded), for convenience.
SpikedModelSpec single_spike_spec(std::size_t d, std::size_t n, double sigma2, double theta, std::uint64_t seed);

/// Eigenvalues of (1/n) X^T X, descending, as an EigenSpectrum of shape (n, d).
EigenSpectrum sample_spectrum(const Eigen::MatrixXd& x);

/// d x n post-nonlinearity activations of `layer` for every calibration column.
Eigen::MatrixXd collect_activations(const DenseNet& model, const Dataset& calib, std::size_t layer);

/// Indices into the descending spectrum with lambda_i > lambda_plus.
std::vector<std::size_t> select_outliers(const EigenSpectrum& spectrum, const MpParams& params);

/// Eigendecomposition of a symmetric matrix, eigenvalues descending, each
/// eigenvector sign-canonicalized (first nonzero component positive).
struct SymmetricEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;  // columns
};
SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& covariance);

/// k x d projection whose rows are the selected unit eigenvectors.
Eigen::MatrixXd causal_projection(const Eigen::MatrixXd& covariance, const std::vector<std::size_t>& outliers);
Eigen::MatrixXd causal_projection(const SymmetricEigen& eig, const std::vector<std::size_t>& outliers);

/// W <- P W, b <- P b on `layer`; W_next <- W_next P^T. The final layer cannot be projected.
DenseNet insert_projection(const DenseNet& model, std::size_t layer, const Eigen::MatrixXd& projection);

enum class StopReason { none, outlier_ratio, accuracy, target_met, completed };
std::string to_string(StopReason reason);

struct CompressionPlan {
    std::vector<std::size_t> layer_order;  // empty: all hidden layers, shallow to deep
    double tau = 0.45;
    double calibration_fraction = 0.1;
    double alpha = 0.7;
    double temperature = 1.0;
    double rho_min = 0.05;
    double epsilon_acc = 0.02;
    std::optional<std::size_t> param_target;
    double stability_ratio = 0.9;  // of the pre-compression validation accuracy
    std::size_t fit_bins = 64;
    FitConfig distill{{1e-3, 0.9, 0.999, 1e-8, 0.0}, 4, 64, 0};
    std::size_t max_extra_epochs = 4;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Stop iff k/d < rho_min, delta_val_acc < -epsilon_acc or params <= target;
/// the first firing criterion in that order is reported.
StopReason stopping_check(std::size_t k, std::size_t d, double delta_val_acc, std::size_t params,
                          const CompressionPlan& plan);

enum class StageStatus { applied, skipped_no_outliers, skipped_full_rank, rejected_outlier_ratio, rolled_back };
std::string to_string(StageStatus status);

struct StageRecord {
    std::size_t stage = 0;
    std::size_t layer = 0;
    std::size_t d = 0;
    std::size_t k = 0;
    std::size_t n_calib = 0;
    double q = 0.0;
    double sigma2_init = 0.0;
    double sigma2 = 0.0;
    double lambda_plus = 0.0;
    std::vector<double> kept_eigenvalues;
    double val_acc_before = 0.0;
    double val_acc_after = 0.0;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    double projection_orthonormality = 0.0;  // max |P P^T - I|
    StageStatus status = StageStatus::applied;
};

struct CompressionReport {
    std::vector<StageRecord> stages;
    StopReason stop_reason = StopReason::none;
    std::size_t params_initial = 0;
    std::size_t params_final = 0;
    double val_acc_initial = 0.0;
    double val_acc_final = 0.0;

    double reduction() const;
    /// One JSON object per stage, then a summary object, newline-terminated.
    std::string to_ndjson() const;
};

struct CompressionResult {
    DenseNet model;
    CompressionReport report;
};

CompressionResult rmtkd_schedule(const DenseNet& model, const Dataset& train, const Dataset& validation,
                                 const CompressionPlan& plan);

struct SweepPoint {
    double tau = 0.0;
    double reduction = 0.0;
    double accuracy = 0.0;
    std::size_t params = 0;
    CompressionReport report;
};

/// Reruns the schedule from the same model for every tau in `taus`, with the
/// template's other settings.
std::vector<SweepPoint> quantile_sweep(const DenseNet& model, const Dataset& train, const Dataset& validation,
                                       const Dataset& test, const std::vector<double>& taus,
                                       const CompressionPlan& plan_template);

/// Plan used by sweeps: no accuracy or ratio stop, so every layer is reduced.
CompressionPlan sweep_plan_template(CompressionPlan base = {});

}  // namespace specgeo
