#include "specgeo/recurrent_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "specgeo/errors.hpp"
#include "specgeo/formats.hpp"

namespace specgeo {

namespace {

// Registry layout: [in_W, in_b, gate blocks (W, U, b) ..., out_W, out_b].
constexpr std::size_t kInW = 0;
constexpr std::size_t kInB = 1;
constexpr std::size_t kFirstGate = 2;

std::size_t gate_count(CellKind kind) {
    switch (kind) {
        case CellKind::vanilla: return 1;
        case CellKind::gru: return 3;
        case CellKind::lstm: return 4;
    }
    throw std::invalid_argument("unknown cell kind");
}

std::size_t gate_w(std::size_t g) { return kFirstGate + 3 * g; }
std::size_t gate_u(std::size_t g) { return kFirstGate + 3 * g + 1; }
std::size_t gate_b(std::size_t g) { return kFirstGate + 3 * g + 2; }
std::size_t out_w(CellKind kind) { return kFirstGate + 3 * gate_count(kind); }
std::size_t out_b(CellKind kind) { return out_w(kind) + 1; }

// GRU gate blocks
constexpr std::size_t kReset = 0, kUpdate = 1, kCandidate = 2;
// LSTM gate blocks
constexpr std::size_t kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCellInput = 3;

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
    return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd tanh_vec(const Eigen::VectorXd& x) {
    return x.unaryExpr([](double v) { return std::tanh(v); });
}

struct StepCache {
    Eigen::VectorXd x;
    Eigen::VectorXd u;
    Eigen::VectorXd h_prev;
    Eigen::VectorXd c_prev;
    std::array<Eigen::VectorXd, 4> gates;
    Eigen::VectorXd reset_h;  // GRU: r * h_prev
    Eigen::VectorXd tanh_c;   // LSTM: tanh(c)
    Eigen::VectorXd h;
    double logit = 0.0;
    double prob = 0.0;
};

Eigen::VectorXd pre_activation(const RecurrentHeadParams& p, std::size_t g, const Eigen::VectorXd& u,
                               const Eigen::VectorXd& h) {
    return p.tensors[gate_w(g)] * u + p.tensors[gate_u(g)] * h + p.tensors[gate_b(g)].col(0);
}

CellState cell_forward(const RecurrentHeadParams& p, const Eigen::VectorXd& u, const CellState& s,
                       StepCache* cache) {
    CellState next;
    std::array<Eigen::VectorXd, 4> gates;
    Eigen::VectorXd reset_h;
    Eigen::VectorXd tanh_c;
    switch (p.kind) {
        case CellKind::vanilla: {
            gates[0] = tanh_vec(pre_activation(p, 0, u, s.h));
            next.h = gates[0];
            break;
        }
        case CellKind::gru: {
            gates[kReset] = sigmoid(pre_activation(p, kReset, u, s.h));
            gates[kUpdate] = sigmoid(pre_activation(p, kUpdate, u, s.h));
            reset_h = gates[kReset].cwiseProduct(s.h);
            gates[kCandidate] = tanh_vec(p.tensors[gate_w(kCandidate)] * u +
                                         p.tensors[gate_u(kCandidate)] * reset_h +
                                         p.tensors[gate_b(kCandidate)].col(0));
            next.h = (1.0 - gates[kUpdate].array()) * s.h.array() +
                     gates[kUpdate].array() * gates[kCandidate].array();
            break;
        }
        case CellKind::lstm: {
            gates[kInputGate] = sigmoid(pre_activation(p, kInputGate, u, s.h));
            gates[kForgetGate] = sigmoid(pre_activation(p, kForgetGate, u, s.h));
            gates[kOutputGate] = sigmoid(pre_activation(p, kOutputGate, u, s.h));
            gates[kCellInput] = tanh_vec(pre_activation(p, kCellInput, u, s.h));
            next.c = gates[kForgetGate].cwiseProduct(s.c) + gates[kInputGate].cwiseProduct(gates[kCellInput]);
            tanh_c = tanh_vec(next.c);
            next.h = gates[kOutputGate].cwiseProduct(tanh_c);
            break;
        }
    }
    if (cache) {
        cache->u = u;
        cache->h_prev = s.h;
        cache->c_prev = s.c;
        cache->gates = std::move(gates);
        cache->reset_h = std::move(reset_h);
        cache->tanh_c = std::move(tanh_c);
        cache->h = next.h;
    }
    return next;
}

void check_sequence(const RecurrentHeadParams& p, const RowMatrix& sequence) {
    if (sequence.rows() == 0) throw std::invalid_argument("recurrent head needs a non-empty series");
    if (static_cast<std::size_t>(sequence.cols()) != p.input) {
        throw std::invalid_argument("series width " + std::to_string(sequence.cols()) +
                                    " does not match head input " + std::to_string(p.input));
    }
}

std::vector<StepCache> forward_cached(const RecurrentHeadParams& p, const RowMatrix& sequence) {
    check_sequence(p, sequence);
    std::vector<StepCache> caches(static_cast<std::size_t>(sequence.rows()));
    CellState state = CellState::zeros(p);
    const Eigen::MatrixXd& w_out = p.tensors[out_w(p.kind)];
    const double b_out = p.tensors[out_b(p.kind)](0, 0);
    for (Eigen::Index t = 0; t < sequence.rows(); ++t) {
        auto& cache = caches[static_cast<std::size_t>(t)];
        cache.x = sequence.row(t).transpose();
        const Eigen::VectorXd u = p.tensors[kInW] * cache.x + p.tensors[kInB].col(0);
        state = cell_forward(p, u, state, &cache);
        cache.logit = w_out.row(0).dot(state.h) + b_out;
        cache.prob = sigmoid(cache.logit);
    }
    return caches;
}

// d loss / d logit for the clamped BCE; zero where the clamp is active.
double logit_gradient(double prob, int label) {
    if (prob <= kProbabilityClamp || prob >= 1.0 - kProbabilityClamp) return 0.0;
    return prob - static_cast<double>(label);
}

void write_tensor(ByteWriter& w, const Eigen::MatrixXd& m) {
    w.put_u32(static_cast<std::uint32_t>(m.rows()));
    w.put_u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) w.put_f64(m(r, c));
    }
}

Eigen::MatrixXd read_tensor(ByteReader& r) {
    const auto rows = r.get_u32("tensor rows");
    const auto cols = r.get_u32("tensor cols");
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.get_f64("tensor value");
    }
    return m;
}

}  // namespace

std::string_view to_string(CellKind kind) {
    switch (kind) {
        case CellKind::vanilla: return "vanilla";
        case CellKind::gru: return "gru";
        case CellKind::lstm: return "lstm";
    }
    return "unknown";
}

CellKind parse_cell_kind(std::string_view name) {
    if (name == "vanilla" || name == "rnn") return CellKind::vanilla;
    if (name == "gru") return CellKind::gru;
    if (name == "lstm") return CellKind::lstm;
    throw std::invalid_argument("unknown cell kind '" + std::string(name) + "'");
}

const std::vector<std::string>& tensor_registry(CellKind kind) {
    static const std::vector<std::string> vanilla = {"in_W", "in_b", "W_xh", "W_hh", "b_h", "out_W", "out_b"};
    static const std::vector<std::string> gru = {"in_W", "in_b", "W_r", "U_r", "b_r", "W_z", "U_z",
                                                 "b_z",  "W_h",  "U_h", "b_h", "out_W", "out_b"};
    static const std::vector<std::string> lstm = {"in_W", "in_b", "W_i", "U_i", "b_i", "W_f",
                                                  "U_f",  "b_f",  "W_o", "U_o", "b_o", "W_c",
                                                  "U_c",  "b_c",  "out_W", "out_b"};
    switch (kind) {
        case CellKind::vanilla: return vanilla;
        case CellKind::gru: return gru;
        case CellKind::lstm: return lstm;
    }
    throw std::invalid_argument("unknown cell kind");
}

std::size_t parameter_count(CellKind kind, std::size_t hidden, std::size_t input) {
    const std::size_t h = hidden;
    return (h * input + h) + gate_count(kind) * (2 * h * h + h) + (h + 1);
}

RecurrentHeadParams RecurrentHeadParams::zeros(CellKind kind, std::size_t hidden, std::size_t input) {
    if (hidden == 0 || input == 0) throw std::invalid_argument("head sizes must be positive");
    RecurrentHeadParams p;
    p.kind = kind;
    p.hidden = hidden;
    p.input = input;
    const auto h = static_cast<Eigen::Index>(hidden);
    p.tensors.push_back(Eigen::MatrixXd::Zero(h, static_cast<Eigen::Index>(input)));
    p.tensors.push_back(Eigen::MatrixXd::Zero(h, 1));
    for (std::size_t g = 0; g < gate_count(kind); ++g) {
        p.tensors.push_back(Eigen::MatrixXd::Zero(h, h));
        p.tensors.push_back(Eigen::MatrixXd::Zero(h, h));
        p.tensors.push_back(Eigen::MatrixXd::Zero(h, 1));
    }
    p.tensors.push_back(Eigen::MatrixXd::Zero(1, h));
    p.tensors.push_back(Eigen::MatrixXd::Zero(1, 1));
    return p;
}

RecurrentHeadParams RecurrentHeadParams::initialize(CellKind kind, std::size_t hidden, std::uint64_t seed,
                                                    std::size_t input) {
    auto p = zeros(kind, hidden, input);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Eigen::MatrixXd& m, double fan_in) {
        std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
        }
    };
    fill(p.tensors[kInW], static_cast<double>(input));
    for (std::size_t g = 0; g < gate_count(kind); ++g) {
        fill(p.tensors[gate_w(g)], static_cast<double>(hidden));
        fill(p.tensors[gate_u(g)], static_cast<double>(hidden));
    }
    fill(p.tensors[out_w(kind)], static_cast<double>(hidden));
    return p;
}

Eigen::MatrixXd& RecurrentHeadParams::tensor(std::string_view name) {
    return const_cast<Eigen::MatrixXd&>(std::as_const(*this).tensor(name));
}

const Eigen::MatrixXd& RecurrentHeadParams::tensor(std::string_view name) const {
    const auto& names = tensor_registry(kind);
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::invalid_argument("no tensor named '" + std::string(name) + "'");
    return tensors.at(static_cast<std::size_t>(std::distance(names.begin(), it)));
}

std::size_t RecurrentHeadParams::parameter_count() const {
    std::size_t total = 0;
    for (const auto& t : tensors) total += static_cast<std::size_t>(t.size());
    return total;
}

void RecurrentHeadParams::validate() const {
    const auto expected = zeros(kind, hidden, input);
    if (tensors.size() != expected.tensors.size()) {
        throw std::invalid_argument("head has " + std::to_string(tensors.size()) + " tensors, expected " +
                                    std::to_string(expected.tensors.size()));
    }
    const auto& names = tensor_registry(kind);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].rows() != expected.tensors[i].rows() || tensors[i].cols() != expected.tensors[i].cols()) {
            throw std::invalid_argument("tensor " + names[i] + " has the wrong shape");
        }
        if (!tensors[i].allFinite()) throw DataError("tensor " + names[i] + " has non-finite entries");
    }
}

CellState CellState::zeros(const RecurrentHeadParams& params) {
    CellState s;
    s.h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.hidden));
    if (params.kind == CellKind::lstm) s.c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.hidden));
    return s;
}

CellState cell_step(const RecurrentHeadParams& params, const Eigen::VectorXd& projected,
                    const CellState& state) {
    const auto h = static_cast<Eigen::Index>(params.hidden);
    if (projected.size() != h || state.h.size() != h ||
        (params.kind == CellKind::lstm && state.c.size() != h)) {
        throw std::invalid_argument("cell_step: input or state size does not match hidden size");
    }
    return cell_forward(params, projected, state, nullptr);
}

RowMatrix series_matrix(const DescriptorSeries& series) {
    RowMatrix m(static_cast<Eigen::Index>(series.size()), static_cast<Eigen::Index>(kFeatureCount));
    for (std::size_t t = 0; t < series.size(); ++t) {
        for (std::size_t j = 0; j < kFeatureCount; ++j) {
            m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = series.vectors[t].values[j];
        }
    }
    return m;
}

std::vector<double> head_forward(const RecurrentHeadParams& params, const RowMatrix& sequence) {
    const auto caches = forward_cached(params, sequence);
    std::vector<double> probs;
    probs.reserve(caches.size());
    for (const auto& c : caches) probs.push_back(c.prob);
    return probs;
}

std::vector<double> head_forward(const RecurrentHeadParams& params, const DescriptorSeries& series) {
    return head_forward(params, series_matrix(series));
}

double bce(double prob, int label) {
    const double p = std::clamp(prob, kProbabilityClamp, 1.0 - kProbabilityClamp);
    return label != 0 ? -std::log(p) : -std::log(1.0 - p);
}

double bce_loss(std::span<const double> probs, int label, LossReduction reduction) {
    if (probs.empty()) throw std::invalid_argument("bce_loss needs at least one probability");
    if (reduction == LossReduction::final_step) return bce(probs.back(), label);
    double total = 0.0;
    for (double p : probs) total += bce(p, label);
    return total / static_cast<double>(probs.size());
}

HeadGradients backward(const RecurrentHeadParams& p, const RowMatrix& sequence, int label,
                       LossReduction reduction) {
    const auto caches = forward_cached(p, sequence);
    const auto steps = caches.size();

    HeadGradients out;
    for (const auto& t : p.tensors) out.grads.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
    {
        std::vector<double> probs;
        for (const auto& c : caches) probs.push_back(c.prob);
        out.loss = bce_loss(probs, label, reduction);
    }

    auto& g = out.grads;
    const auto hidden = static_cast<Eigen::Index>(p.hidden);
    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(hidden);
    Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(hidden);
    const Eigen::MatrixXd& w_out = p.tensors[out_w(p.kind)];

    for (std::size_t ti = steps; ti-- > 0;) {
        const StepCache& c = caches[ti];
        double dlogit = 0.0;
        if (reduction == LossReduction::final_step) {
            if (ti + 1 == steps) dlogit = logit_gradient(c.prob, label);
        } else {
            dlogit = logit_gradient(c.prob, label) / static_cast<double>(steps);
        }
        g[out_w(p.kind)].row(0) += dlogit * c.h.transpose();
        g[out_b(p.kind)](0, 0) += dlogit;
        Eigen::VectorXd dh = dh_next + dlogit * w_out.row(0).transpose();

        Eigen::VectorXd du = Eigen::VectorXd::Zero(hidden);
        Eigen::VectorXd dh_prev = Eigen::VectorXd::Zero(hidden);
        auto accumulate_gate = [&](std::size_t gate, const Eigen::VectorXd& da, const Eigen::VectorXd& h_in) {
            g[gate_w(gate)] += da * c.u.transpose();
            g[gate_u(gate)] += da * h_in.transpose();
            g[gate_b(gate)].col(0) += da;
            du += p.tensors[gate_w(gate)].transpose() * da;
        };

        switch (p.kind) {
            case CellKind::vanilla: {
                const Eigen::VectorXd da = dh.array() * (1.0 - c.gates[0].array().square());
                accumulate_gate(0, da, c.h_prev);
                dh_prev = p.tensors[gate_u(0)].transpose() * da;
                break;
            }
            case CellKind::gru: {
                const auto& r = c.gates[kReset];
                const auto& z = c.gates[kUpdate];
                const auto& n = c.gates[kCandidate];
                const Eigen::VectorXd dn = dh.cwiseProduct(z);
                const Eigen::VectorXd dz = dh.cwiseProduct(n - c.h_prev);
                dh_prev = dh.array() * (1.0 - z.array());

                const Eigen::VectorXd da_n = dn.array() * (1.0 - n.array().square());
                accumulate_gate(kCandidate, da_n, c.reset_h);
                const Eigen::VectorXd d_reset_h = p.tensors[gate_u(kCandidate)].transpose() * da_n;
                const Eigen::VectorXd dr = d_reset_h.cwiseProduct(c.h_prev);
                dh_prev += d_reset_h.cwiseProduct(r);

                const Eigen::VectorXd da_z = dz.array() * z.array() * (1.0 - z.array());
                accumulate_gate(kUpdate, da_z, c.h_prev);
                dh_prev += p.tensors[gate_u(kUpdate)].transpose() * da_z;

                const Eigen::VectorXd da_r = dr.array() * r.array() * (1.0 - r.array());
                accumulate_gate(kReset, da_r, c.h_prev);
                dh_prev += p.tensors[gate_u(kReset)].transpose() * da_r;
                break;
            }
            case CellKind::lstm: {
                const auto& i = c.gates[kInputGate];
                const auto& f = c.gates[kForgetGate];
                const auto& o = c.gates[kOutputGate];
                const auto& cand = c.gates[kCellInput];
                const Eigen::VectorXd d_o = dh.cwiseProduct(c.tanh_c);
                const Eigen::VectorXd dc =
                    dc_next.array() + dh.array() * o.array() * (1.0 - c.tanh_c.array().square());
                const Eigen::VectorXd d_i = dc.cwiseProduct(cand);
                const Eigen::VectorXd d_f = dc.cwiseProduct(c.c_prev);
                const Eigen::VectorXd d_cand = dc.cwiseProduct(i);
                dc_next = dc.cwiseProduct(f);

                const Eigen::VectorXd da_i = d_i.array() * i.array() * (1.0 - i.array());
                const Eigen::VectorXd da_f = d_f.array() * f.array() * (1.0 - f.array());
                const Eigen::VectorXd da_o = d_o.array() * o.array() * (1.0 - o.array());
                const Eigen::VectorXd da_c = d_cand.array() * (1.0 - cand.array().square());
                accumulate_gate(kInputGate, da_i, c.h_prev);
                accumulate_gate(kForgetGate, da_f, c.h_prev);
                accumulate_gate(kOutputGate, da_o, c.h_prev);
                accumulate_gate(kCellInput, da_c, c.h_prev);
                dh_prev = p.tensors[gate_u(kInputGate)].transpose() * da_i +
                          p.tensors[gate_u(kForgetGate)].transpose() * da_f +
                          p.tensors[gate_u(kOutputGate)].transpose() * da_o +
                          p.tensors[gate_u(kCellInput)].transpose() * da_c;
                break;
            }
        }
        g[kInW] += du * c.x.transpose();
        g[kInB].col(0) += du;
        dh_next = dh_prev;
    }
    return out;
}

void adam_step(RecurrentHeadParams& params, const std::vector<Eigen::MatrixXd>& grads, AdamState& state,
               const AdamConfig& config) {
    std::vector<Eigen::MatrixXd*> ptrs;
    for (auto& t : params.tensors) ptrs.push_back(&t);
    adam_step(std::span<Eigen::MatrixXd* const>(ptrs), std::span<const Eigen::MatrixXd>(grads), state, config);
}

FeatureScaler FeatureScaler::identity(std::size_t input) {
    return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(input)),
            Eigen::VectorXd::Ones(static_cast<Eigen::Index>(input))};
}

FeatureScaler FeatureScaler::fit(const std::vector<const RowMatrix*>& sequences) {
    if (sequences.empty()) throw std::invalid_argument("cannot fit a scaler on no sequences");
    const auto width = sequences.front()->cols();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(width);
    Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(width);
    double rows = 0.0;
    for (const auto* s : sequences) {
        if (s->cols() != width) throw std::invalid_argument("scaler: sequences differ in width");
        sum += s->colwise().sum().transpose();
        rows += static_cast<double>(s->rows());
    }
    const Eigen::VectorXd mean = sum / rows;
    for (const auto* s : sequences) {
        sum_sq += (s->rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
    }
    Eigen::VectorXd scale = (sum_sq / rows).cwiseSqrt();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
        if (!(scale[i] > 1e-12)) scale[i] = 1.0;
    }
    return {mean, scale};
}

RowMatrix FeatureScaler::apply(const RowMatrix& sequence) const {
    if (sequence.cols() != mean.size()) throw std::invalid_argument("scaler: width mismatch");
    RowMatrix out = sequence.rowwise() - mean.transpose();
    out.array().rowwise() /= scale.transpose().array();
    return out;
}

std::vector<double> HeadModel::probabilities(const RowMatrix& raw_sequence) const {
    return head_forward(params, scaler.apply(raw_sequence));
}

HeadRunner::HeadRunner(const HeadModel& model) : model_(&model), state_(CellState::zeros(model.params)) {
    model.params.validate();
}

void HeadRunner::reset() {
    state_ = CellState::zeros(model_->params);
    steps_ = 0;
}

double HeadRunner::step(std::span<const double> raw_features) {
    const auto& p = model_->params;
    if (raw_features.size() != p.input) {
        throw std::invalid_argument("descriptor width " + std::to_string(raw_features.size()) +
                                    " does not match head input " + std::to_string(p.input));
    }
    const Eigen::Map<const Eigen::VectorXd> raw(raw_features.data(), static_cast<Eigen::Index>(raw_features.size()));
    const Eigen::VectorXd x = (raw - model_->scaler.mean).cwiseQuotient(model_->scaler.scale);
    const Eigen::VectorXd u = p.tensors[kInW] * x + p.tensors[kInB].col(0);
    state_ = cell_forward(p, u, state_, nullptr);
    ++steps_;
    return sigmoid(p.tensors[out_w(p.kind)].row(0).dot(state_.h) + p.tensors[out_b(p.kind)](0, 0));
}

void TrainConfig::validate() const {
    if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (adam.weight_decay < 0.0) throw std::invalid_argument("weight_decay must be nonnegative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw std::invalid_argument("adam betas must lie in [0, 1)");
    }
    if (!(adam.epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
    if (!(gate_threshold > 0.0 && gate_threshold < 1.0)) {
        throw std::invalid_argument("gate_threshold must lie in (0, 1)");
    }
    if (hidden == 0) throw std::invalid_argument("hidden size must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw std::invalid_argument("validation_fraction must lie in (0, 1)");
    }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<LabeledSequence>& dataset, double validation_fraction, std::uint64_t seed) {
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < dataset.size(); ++i) (dataset[i].label != 0 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw DataError("training needs both classes present");
    std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    for (auto* group : {&pos, &neg}) {
        auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(group->size())));
        if (group->size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, group->size() - 1);
        else n_val = 0;
        val_idx.insert(val_idx.end(), group->begin(), group->begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.insert(train_idx.end(), group->begin() + static_cast<std::ptrdiff_t>(n_val), group->end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    return {train_idx, val_idx};
}

TrainResult train(const std::vector<LabeledSequence>& dataset, const TrainConfig& config) {
    config.validate();
    const auto [train_idx, val_idx] = stratified_split(dataset, config.validation_fraction, config.seed);
    std::vector<LabeledSequence> train_set;
    std::vector<LabeledSequence> val_set;
    for (auto i : train_idx) train_set.push_back(dataset[i]);
    for (auto i : val_idx) val_set.push_back(dataset[i]);
    return train(train_set, val_set, config);
}

TrainResult train(const std::vector<LabeledSequence>& train_set,
                  const std::vector<LabeledSequence>& validation_set, const TrainConfig& config) {
    config.validate();
    const bool has_pos = std::any_of(train_set.begin(), train_set.end(), [](const auto& s) { return s.label != 0; });
    const bool has_neg = std::any_of(train_set.begin(), train_set.end(), [](const auto& s) { return s.label == 0; });
    if (!has_pos || !has_neg) throw DataError("training needs both classes present");
    const auto input = static_cast<std::size_t>(train_set.front().features.cols());

    TrainResult result;
    if (config.standardize) {
        std::vector<const RowMatrix*> seqs;
        for (const auto& s : train_set) seqs.push_back(&s.features);
        result.model.scaler = FeatureScaler::fit(seqs);
    } else {
        result.model.scaler = FeatureScaler::identity(input);
    }
    result.model.params = RecurrentHeadParams::initialize(config.cell, config.hidden, config.seed, input);

    std::vector<RowMatrix> train_x;
    std::vector<RowMatrix> val_x;
    for (const auto& s : train_set) train_x.push_back(result.model.scaler.apply(s.features));
    for (const auto& s : validation_set) val_x.push_back(result.model.scaler.apply(s.features));

    auto& params = result.model.params;
    AdamState adam;
    std::mt19937_64 rng(config.seed + 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    auto evaluate = [&](const std::vector<RowMatrix>& xs, const std::vector<LabeledSequence>& set,
                        double& loss, double& auc) {
        loss = 0.0;
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const auto probs = head_forward(params, xs[i]);
            loss += bce_loss(probs, set[i].label, config.reduction);
            scores.push_back(probs.back());
            labels.push_back(set[i].label);
        }
        loss /= std::max<double>(1.0, static_cast<double>(xs.size()));
        const bool both = std::count(labels.begin(), labels.end(), 0) > 0 &&
                          std::count(labels.begin(), labels.end(), 0) < static_cast<std::ptrdiff_t>(labels.size());
        auc = both ? auroc(scores, labels) : std::numeric_limits<double>::quiet_NaN();
    };

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<Eigen::MatrixXd> batch_grads;
            for (std::size_t k = start; k < stop; ++k) {
                const auto i = order[k];
                auto g = backward(params, train_x[i], train_set[i].label, config.reduction);
                if (batch_grads.empty()) {
                    batch_grads = std::move(g.grads);
                } else {
                    for (std::size_t j = 0; j < batch_grads.size(); ++j) batch_grads[j] += g.grads[j];
                }
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& bg : batch_grads) bg *= inv;
            adam_step(params, batch_grads, adam, config.adam);
        }
        EpochMetrics m;
        m.epoch = epoch;
        double unused = 0.0;
        evaluate(train_x, train_set, m.train_loss, unused);
        if (!validation_set.empty()) {
            evaluate(val_x, validation_set, m.validation_loss, m.validation_auroc);
        } else {
            m.validation_loss = std::numeric_limits<double>::quiet_NaN();
            m.validation_auroc = std::numeric_limits<double>::quiet_NaN();
        }
        result.history.push_back(m);
    }
    return result;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mid-ranks over tie groups; equivalent to counting positive/negative pairs
    // with ties scored 1/2.
    double rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]] != 0) {
                rank_sum += mid_rank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = scores.size() - positives;
    if (positives == 0 || negatives == 0) throw DataError("auroc needs both classes present");
    const double p = static_cast<double>(positives);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

GateDecision gate(double prob, double tau) { return prob > tau ? GateDecision::alarm : GateDecision::pass; }

std::string encode_head(const HeadModel& model) {
    model.params.validate();
    ByteWriter w;
    w.put_bytes("SPHD");
    w.put_u32(kHeadCheckpointVersion);
    w.put_u32(static_cast<std::uint32_t>(model.params.kind));
    w.put_u32(static_cast<std::uint32_t>(model.params.hidden));
    w.put_u32(static_cast<std::uint32_t>(model.params.input));
    w.put_u32(static_cast<std::uint32_t>(model.params.tensors.size()));
    for (const auto& t : model.params.tensors) write_tensor(w, t);
    write_tensor(w, model.scaler.mean);
    write_tensor(w, model.scaler.scale);
    return w.bytes();
}

HeadModel decode_head(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.get_bytes(4, "magic") != "SPHD") throw FormatError("bad head checkpoint magic", 0);
    const auto version = r.get_u32("version");
    if (version != kHeadCheckpointVersion) {
        throw FormatError("unsupported head checkpoint version " + std::to_string(version), 4);
    }
    const auto kind_at = r.offset();
    const auto kind = r.get_u32("cell kind");
    if (kind > static_cast<std::uint32_t>(CellKind::lstm)) throw FormatError("unknown cell kind", kind_at);
    HeadModel m;
    m.params.kind = static_cast<CellKind>(kind);
    m.params.hidden = r.get_u32("hidden size");
    m.params.input = r.get_u32("input size");
    const auto count_at = r.offset();
    const auto count = r.get_u32("tensor count");
    if (count != tensor_registry(m.params.kind).size()) {
        throw FormatError("tensor count does not match cell kind", count_at);
    }
    for (std::uint32_t i = 0; i < count; ++i) m.params.tensors.push_back(read_tensor(r));
    m.scaler.mean = read_tensor(r);
    m.scaler.scale = read_tensor(r);
    if (r.remaining() != 0) throw FormatError("trailing bytes after head checkpoint", r.offset());
    try {
        m.params.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("inconsistent head checkpoint: ") + e.what(), count_at);
    }
    if (m.scaler.mean.size() != static_cast<Eigen::Index>(m.params.input) ||
        m.scaler.scale.size() != static_cast<Eigen::Index>(m.params.input)) {
        throw FormatError("scaler size does not match head input", r.offset());
    }
    return m;
}

void save_head(const std::filesystem::path& path, const HeadModel& model) {
    write_file_bytes(path, encode_head(model));
}

HeadModel load_head(const std::filesystem::path& path) {
    try {
        return decode_head(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace specgeo
