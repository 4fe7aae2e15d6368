#include "specgeo/rmt_kd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "specgeo/errors.hpp"
#include "specgeo/spectral_features.hpp"

namespace specgeo {

void SpikedModelSpec::validate() const {
    if (d == 0 || n == 0) throw std::invalid_argument("spiked model needs d > 0 and n > 0");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("spiked model sigma2 must be positive");
    for (std::size_t i = 0; i < spikes.size(); ++i) {
        const auto& s = spikes[i];
        if (!(s.theta > 0.0)) throw std::invalid_argument("spike theta must be positive");
        if (s.direction.size() != static_cast<Eigen::Index>(d)) {
            throw std::invalid_argument("spike direction has the wrong length");
        }
        for (std::size_t j = 0; j <= i; ++j) {
            const double dot = s.direction.dot(spikes[j].direction);
            const double want = i == j ? 1.0 : 0.0;
            if (std::abs(dot - want) > 1e-8) {
                throw std::invalid_argument("spike directions are not orthonormal");
            }
        }
    }
}

Eigen::MatrixXd spiked_sample(const SpikedModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const auto n = static_cast<Eigen::Index>(spec.n);
    const auto d = static_cast<Eigen::Index>(spec.d);
    Eigen::MatrixXd z(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) z(i, j) = normal(rng);
    }
    const double sigma = std::sqrt(spec.sigma2);
    Eigen::MatrixXd x = sigma * z;
    // Sigma^{1/2} = sigma (I - sum u u^T) + sum sqrt(theta) u u^T
    for (const auto& s : spec.spikes) {
        const Eigen::VectorXd proj = z * s.direction;
        x.noalias() += (std::sqrt(s.theta) - sigma) * proj * s.direction.transpose();
    }
    return x;
}

SpikedModelSpec single_spike_spec(std::size_t d, std::size_t n, double sigma2, double theta, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
    std::normal_distribution<double> normal;
    Eigen::VectorXd u(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = normal(rng);
    u.normalize();
    return {d, n, sigma2, {Spike{theta, u}}};
}

EigenSpectrum sample_spectrum(const Eigen::MatrixXd& x) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    Eigen::MatrixXd gram = d <= n ? Eigen::MatrixXd(x.transpose() * x) : Eigen::MatrixXd(x * x.transpose());
    gram /= static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw DataError("eigensolver failed on sample covariance");
    const Eigen::VectorXd& ev = solver.eigenvalues();
    std::vector<double> values(ev.data(), ev.data() + ev.size());
    std::reverse(values.begin(), values.end());
    return make_spectrum(std::move(values), n, d);
}

Eigen::MatrixXd collect_activations(const DenseNet& model, const Dataset& calib, std::size_t layer) {
    return model.layer_output(calib.x, layer);
}

std::vector<std::size_t> select_outliers(const EigenSpectrum& spectrum, const MpParams& params) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        if (spectrum.values[i] > params.lambda_plus()) out.push_back(i);
    }
    return out;
}

SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& covariance) {
    if (covariance.rows() != covariance.cols() || covariance.rows() == 0) {
        throw std::invalid_argument("covariance must be square and non-empty");
    }
    if (!covariance.allFinite()) throw DataError("covariance has non-finite entries");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
    if (solver.info() != Eigen::Success) throw DataError("eigensolver failed");
    const auto d = covariance.rows();
    SymmetricEigen out{Eigen::VectorXd(d), Eigen::MatrixXd(d, d)};
    for (Eigen::Index i = 0; i < d; ++i) {
        out.values[i] = solver.eigenvalues()[d - 1 - i];
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - i);
        for (Eigen::Index j = 0; j < d; ++j) {
            if (std::abs(v[j]) > 1e-14) {
                if (v[j] < 0.0) v = -v;
                break;
            }
        }
        out.vectors.col(i) = v;
    }
    return out;
}

Eigen::MatrixXd causal_projection(const SymmetricEigen& eig, const std::vector<std::size_t>& outliers) {
    if (outliers.empty()) throw std::invalid_argument("causal projection needs at least one outlier");
    Eigen::MatrixXd p(static_cast<Eigen::Index>(outliers.size()), eig.vectors.rows());
    for (std::size_t r = 0; r < outliers.size(); ++r) {
        if (outliers[r] >= static_cast<std::size_t>(eig.vectors.cols())) {
            throw std::invalid_argument("outlier index out of range");
        }
        p.row(static_cast<Eigen::Index>(r)) = eig.vectors.col(static_cast<Eigen::Index>(outliers[r])).transpose();
    }
    return p;
}

Eigen::MatrixXd causal_projection(const Eigen::MatrixXd& covariance, const std::vector<std::size_t>& outliers) {
    if (outliers.empty()) throw std::invalid_argument("causal projection needs at least one outlier");
    return causal_projection(symmetric_eigen(covariance), outliers);
}

DenseNet insert_projection(const DenseNet& model, std::size_t layer, const Eigen::MatrixXd& projection) {
    if (layer + 1 >= model.layer_count()) {
        throw std::invalid_argument("layer " + std::to_string(layer) + " has no downstream layer to resize");
    }
    auto layers = model.layers();
    auto& cur = layers[layer];
    if (projection.cols() != cur.weight.rows() || projection.rows() == 0) {
        throw std::invalid_argument("projection is " + std::to_string(projection.rows()) + "x" +
                                    std::to_string(projection.cols()) + " but layer width is " +
                                    std::to_string(cur.weight.rows()));
    }
    cur.weight = projection * cur.weight;
    cur.bias = projection * cur.bias;
    layers[layer + 1].weight = layers[layer + 1].weight * projection.transpose();
    return DenseNet(std::move(layers), model.hidden_activation());
}

std::string to_string(StopReason reason) {
    switch (reason) {
        case StopReason::none: return "none";
        case StopReason::outlier_ratio: return "outlier-ratio";
        case StopReason::accuracy: return "accuracy";
        case StopReason::target_met: return "target met";
        case StopReason::completed: return "completed";
    }
    return "unknown";
}

std::string to_string(StageStatus status) {
    switch (status) {
        case StageStatus::applied: return "applied";
        case StageStatus::skipped_no_outliers: return "skipped-no-outliers";
        case StageStatus::skipped_full_rank: return "skipped-full-rank";
        case StageStatus::rejected_outlier_ratio: return "rejected-outlier-ratio";
        case StageStatus::rolled_back: return "rolled-back";
    }
    return "unknown";
}

void CompressionPlan::validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (!(rho_min > 0.0 && rho_min < 1.0)) throw std::invalid_argument("rho_min must lie in (0, 1)");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (!(calibration_fraction > 0.0 && calibration_fraction <= 1.0)) {
        throw std::invalid_argument("calibration_fraction must lie in (0, 1]");
    }
    if (!(epsilon_acc >= 0.0)) throw std::invalid_argument("epsilon_acc must be nonnegative");
    if (!(stability_ratio >= 0.0 && stability_ratio <= 1.0)) {
        throw std::invalid_argument("stability_ratio must lie in [0, 1]");
    }
    if (fit_bins < 16) throw std::invalid_argument("fit_bins must be at least 16");
    if (distill.batch_size == 0) throw std::invalid_argument("distill batch_size must be positive");
}

StopReason stopping_check(std::size_t k, std::size_t d, double delta_val_acc, std::size_t params,
                          const CompressionPlan& plan) {
    if (d == 0) throw std::invalid_argument("stopping_check needs d > 0");
    if (static_cast<double>(k) / static_cast<double>(d) < plan.rho_min) return StopReason::outlier_ratio;
    if (delta_val_acc < -plan.epsilon_acc) return StopReason::accuracy;
    if (plan.param_target && params <= *plan.param_target) return StopReason::target_met;
    return StopReason::none;
}

double CompressionReport::reduction() const {
    if (params_initial == 0) return 0.0;
    return 1.0 - static_cast<double>(params_final) / static_cast<double>(params_initial);
}

std::string CompressionReport::to_ndjson() const {
    std::string out;
    for (const auto& s : stages) {
        nlohmann::ordered_json j;
        j["record"] = "stage";
        j["stage"] = s.stage;
        j["layer"] = s.layer;
        j["status"] = to_string(s.status);
        j["d"] = s.d;
        j["k"] = s.k;
        j["n_calib"] = s.n_calib;
        j["q"] = s.q;
        j["sigma2_init"] = s.sigma2_init;
        j["sigma2"] = s.sigma2;
        j["lambda_plus"] = s.lambda_plus;
        j["kept_eigenvalues"] = s.kept_eigenvalues;
        j["val_acc_before"] = s.val_acc_before;
        j["val_acc_after"] = s.val_acc_after;
        j["params_before"] = s.params_before;
        j["params_after"] = s.params_after;
        j["projection_orthonormality"] = s.projection_orthonormality;
        out += j.dump() + "\n";
    }
    nlohmann::ordered_json summary;
    summary["record"] = "summary";
    summary["stop_reason"] = to_string(stop_reason);
    summary["stages"] = stages.size();
    summary["params_initial"] = params_initial;
    summary["params_final"] = params_final;
    summary["reduction"] = reduction();
    summary["val_acc_initial"] = val_acc_initial;
    summary["val_acc_final"] = val_acc_final;
    out += summary.dump() + "\n";
    return out;
}

CompressionResult rmtkd_schedule(const DenseNet& model, const Dataset& train, const Dataset& validation,
                                 const CompressionPlan& plan) {
    plan.validate();
    model.validate();
    if (train.size() == 0 || validation.size() == 0) throw DataError("compression needs train and validation data");

    std::vector<std::size_t> order = plan.layer_order;
    if (order.empty()) {
        for (std::size_t l = 0; l + 1 < model.layer_count(); ++l) order.push_back(l);
    }
    for (auto l : order) {
        if (l + 1 >= model.layer_count()) {
            throw std::invalid_argument("layer " + std::to_string(l) + " is not a hidden layer");
        }
    }

    std::vector<std::size_t> perm(train.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(plan.seed ^ 0xC0FFEEULL);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_calib = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(plan.calibration_fraction * static_cast<double>(train.size()))), 2,
        train.size());
    perm.resize(n_calib);
    std::sort(perm.begin(), perm.end());
    const Dataset calib = train.subset(perm);

    CompressionResult result{model, {}};
    auto& report = result.report;
    report.params_initial = model.parameter_count();
    report.val_acc_initial = accuracy(model, validation);
    const double stability = plan.stability_ratio * report.val_acc_initial;

    std::size_t stage_index = 0;
    for (auto layer : order) {
        DenseNet& current = result.model;
        const std::size_t params_now = current.parameter_count();
        if (plan.param_target && params_now <= *plan.param_target) {
            report.stop_reason = StopReason::target_met;
            break;
        }
        StageRecord rec;
        rec.stage = stage_index++;
        rec.layer = layer;
        rec.n_calib = n_calib;
        rec.params_before = params_now;
        rec.params_after = params_now;
        rec.val_acc_before = accuracy(current, validation);
        rec.val_acc_after = rec.val_acc_before;

        const Eigen::MatrixXd acts = collect_activations(current, calib, layer);
        rec.d = static_cast<std::size_t>(acts.rows());
        const Eigen::MatrixXd cov = acts * acts.transpose() / static_cast<double>(n_calib);
        const SymmetricEigen eig = symmetric_eigen(cov);
        const std::size_t m = std::min(rec.d, n_calib);
        std::vector<double> vals(eig.values.data(), eig.values.data() + m);
        const EigenSpectrum spec = make_spectrum(vals, n_calib, rec.d);
        rec.q = static_cast<double>(rec.d) / static_cast<double>(n_calib);
        rec.sigma2_init = robust_sigma2_init(spec, plan.tau);
        const MpParams mp = fit_sigma2(spec, rec.q, rec.sigma2_init, plan.fit_bins);
        rec.sigma2 = mp.sigma2();
        rec.lambda_plus = mp.lambda_plus();
        const auto outliers = select_outliers(spec, mp);
        rec.k = outliers.size();
        for (auto i : outliers) rec.kept_eigenvalues.push_back(spec.values[i]);

        if (rec.k == 0) {
            rec.status = StageStatus::skipped_no_outliers;
            report.stages.push_back(rec);
            continue;
        }
        if (rec.k == rec.d) {
            rec.status = StageStatus::skipped_full_rank;
            report.stages.push_back(rec);
            continue;
        }
        if (stopping_check(rec.k, rec.d, 0.0, params_now, plan) == StopReason::outlier_ratio) {
            rec.status = StageStatus::rejected_outlier_ratio;
            report.stages.push_back(rec);
            report.stop_reason = StopReason::outlier_ratio;
            break;
        }

        const Eigen::MatrixXd p = causal_projection(eig, outliers);
        rec.projection_orthonormality =
            (p * p.transpose() - Eigen::MatrixXd::Identity(p.rows(), p.rows())).cwiseAbs().maxCoeff();
        DenseNet student = insert_projection(current, layer, p);
        FitConfig fit = plan.distill;
        fit.seed = plan.distill.seed + 1000003ULL * (rec.stage + 1);
        fit_distill(student, current, train, plan.alpha, plan.temperature, fit);
        double acc = accuracy(student, validation);
        for (std::size_t extra = 0; extra < plan.max_extra_epochs && acc < stability; ++extra) {
            fit.epochs = 1;
            fit.seed += 7;
            fit_distill(student, current, train, plan.alpha, plan.temperature, fit);
            acc = accuracy(student, validation);
        }
        rec.val_acc_after = acc;
        rec.params_after = student.parameter_count();

        const StopReason reason =
            stopping_check(rec.k, rec.d, acc - report.val_acc_initial, rec.params_after, plan);
        if (reason == StopReason::accuracy) {
            rec.status = StageStatus::rolled_back;
            report.stages.push_back(rec);
            report.stop_reason = reason;
            break;
        }
        rec.status = StageStatus::applied;
        report.stages.push_back(rec);
        result.model = std::move(student);
        if (reason == StopReason::target_met) {
            report.stop_reason = reason;
            break;
        }
    }
    if (report.stop_reason == StopReason::none) report.stop_reason = StopReason::completed;
    report.params_final = result.model.parameter_count();
    report.val_acc_final = accuracy(result.model, validation);
    return result;
}

CompressionPlan sweep_plan_template(CompressionPlan base) {
    base.rho_min = 1e-9;
    base.epsilon_acc = std::numeric_limits<double>::max();
    base.stability_ratio = 0.0;
    base.param_target.reset();
    return base;
}

std::vector<SweepPoint> quantile_sweep(const DenseNet& model, const Dataset& train, const Dataset& validation,
                                       const Dataset& test, const std::vector<double>& taus,
                                       const CompressionPlan& plan_template) {
    std::vector<SweepPoint> out;
    for (double tau : taus) {
        if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("sweep tau must lie in [0, 1]");
        CompressionPlan plan = plan_template;
        plan.tau = tau;
        auto res = rmtkd_schedule(model, train, validation, plan);
        SweepPoint pt;
        pt.tau = tau;
        pt.reduction = res.report.reduction();
        pt.accuracy = accuracy(res.model, test.size() ? test : validation);
        pt.params = res.model.parameter_count();
        pt.report = std::move(res.report);
        out.push_back(std::move(pt));
    }
    return out;
}

}  // namespace specgeo
