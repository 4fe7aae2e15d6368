#include "specgeo/dense_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "specgeo/errors.hpp"
#include "specgeo/formats.hpp"

namespace specgeo {

namespace {

void apply_activation(Eigen::MatrixXd& z, Activation a) {
    if (a == Activation::tanh) z = z.array().tanh();
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits, double temperature) {
    Eigen::MatrixXd out = logits / temperature;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        auto col = out.col(j);
        col.array() -= col.maxCoeff();
        col = col.array().exp();
        col /= col.sum();
    }
    return out;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits, double temperature) {
    Eigen::VectorXd z = logits / temperature;
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    return z.array() - lse;
}

void check_label(int label, Eigen::Index classes) {
    if (label < 0 || label >= classes) {
        throw std::invalid_argument("label " + std::to_string(label) + " out of range for " +
                                    std::to_string(classes) + " classes");
    }
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.x.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
    out.y.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        out.x.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(idx[j]));
        out.y.push_back(y.at(idx[j]));
    }
    return out;
}

DenseNet::DenseNet(const std::vector<std::size_t>& widths, std::uint64_t seed, Activation hidden)
    : hidden_(hidden) {
    if (widths.size() < 2) throw std::invalid_argument("a dense net needs at least input and output widths");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(widths[l]);
        const auto out = static_cast<Eigen::Index>(widths[l + 1]);
        if (in == 0 || out == 0) throw std::invalid_argument("layer widths must be positive");
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
        }
        layers_.push_back(std::move(layer));
    }
}

DenseNet::DenseNet(std::vector<DenseLayer> layers, Activation hidden) : layers_(std::move(layers)), hidden_(hidden) {
    validate();
}

void DenseNet::validate() const {
    if (layers_.empty()) throw std::invalid_argument("dense net has no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.bias.size() != layer.weight.rows()) {
            throw std::invalid_argument("layer " + std::to_string(l) + ": bias length does not match weight rows");
        }
        if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
            throw std::invalid_argument("layer " + std::to_string(l) + ": input width " +
                                        std::to_string(layer.weight.cols()) + " does not match previous output " +
                                        std::to_string(layers_[l - 1].weight.rows()));
        }
    }
}

std::size_t DenseNet::input_width() const { return static_cast<std::size_t>(layers_.at(0).weight.cols()); }
std::size_t DenseNet::output_width() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }

std::vector<std::size_t> DenseNet::widths() const {
    std::vector<std::size_t> w{input_width()};
    for (const auto& l : layers_) w.push_back(static_cast<std::size_t>(l.weight.rows()));
    return w;
}

std::size_t DenseNet::parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return total;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& x) const {
    return layer_output(x, layers_.size() - 1);
}

Eigen::MatrixXd DenseNet::layer_output(const Eigen::MatrixXd& x, std::size_t layer) const {
    if (layer >= layers_.size()) {
        throw std::invalid_argument("layer index " + std::to_string(layer) + " out of range (" +
                                    std::to_string(layers_.size()) + " layers)");
    }
    if (static_cast<std::size_t>(x.rows()) != input_width()) {
        throw std::invalid_argument("input has " + std::to_string(x.rows()) + " rows, network expects " +
                                    std::to_string(input_width()));
    }
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l <= layer; ++l) {
        Eigen::MatrixXd z = layers_[l].weight * a;
        z.colwise() += layers_[l].bias;
        if (l + 1 < layers_.size()) apply_activation(z, hidden_);
        a = std::move(z);
    }
    return a;
}

std::vector<int> DenseNet::predict(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd logits = forward(x);
    std::vector<int> out(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        Eigen::Index arg = 0;
        logits.col(j).maxCoeff(&arg);
        out[static_cast<std::size_t>(j)] = static_cast<int>(arg);
    }
    return out;
}

double accuracy(const DenseNet& net, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("accuracy on an empty dataset");
    const auto pred = net.predict(data.x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.y[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    return softmax_columns(logits, temperature).col(0);
}

double cross_entropy(const Eigen::VectorXd& logits, int label) {
    check_label(label, logits.size());
    return -log_softmax(logits, 1.0)[label];
}

double distill_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int label,
                    double alpha, double temperature) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (student_logits.size() != teacher_logits.size()) {
        throw std::invalid_argument("student and teacher logits differ in length");
    }
    const double ce = cross_entropy(student_logits, label);
    if (alpha == 1.0) return ce;
    const Eigen::VectorXd log_t = log_softmax(teacher_logits, temperature);
    const Eigen::VectorXd log_s = log_softmax(student_logits, temperature);
    const double kl = std::max(0.0, (log_t.array().exp() * (log_t - log_s).array()).sum());
    return alpha * ce + (1.0 - alpha) * temperature * temperature * kl;
}

DenseGradients dense_gradients(const DenseNet& net, const Dataset& batch, const DenseNet* teacher, double alpha,
                               double temperature) {
    const auto& layers = net.layers();
    const auto n = static_cast<Eigen::Index>(batch.size());
    if (n == 0) throw std::invalid_argument("empty batch");
    std::vector<Eigen::MatrixXd> acts{batch.x};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Eigen::MatrixXd z = layers[l].weight * acts.back();
        z.colwise() += layers[l].bias;
        if (l + 1 < layers.size()) apply_activation(z, net.hidden_activation());
        acts.push_back(std::move(z));
    }
    const Eigen::MatrixXd& logits = acts.back();
    const auto classes = logits.rows();

    DenseGradients out;
    Eigen::MatrixXd dz = softmax_columns(logits, 1.0);
    for (Eigen::Index j = 0; j < n; ++j) {
        const int label = batch.y[static_cast<std::size_t>(j)];
        check_label(label, classes);
        dz(label, j) -= 1.0;
    }
    dz *= alpha;
    Eigen::MatrixXd teacher_logits;
    if (teacher) {
        teacher_logits = teacher->forward(batch.x);
        const Eigen::MatrixXd ps = softmax_columns(logits, temperature);
        const Eigen::MatrixXd pt = softmax_columns(teacher_logits, temperature);
        dz += (1.0 - alpha) * temperature * (ps - pt);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const int label = batch.y[static_cast<std::size_t>(j)];
        out.loss += teacher ? distill_loss(logits.col(j), teacher_logits.col(j), label, alpha, temperature)
                            : cross_entropy(logits.col(j), label);
    }
    out.loss /= static_cast<double>(n);
    dz /= static_cast<double>(n);

    out.grads.resize(2 * layers.size());
    for (std::size_t l = layers.size(); l-- > 0;) {
        out.grads[2 * l] = dz * acts[l].transpose();
        out.grads[2 * l + 1] = dz.rowwise().sum();
        if (l == 0) break;
        Eigen::MatrixXd da = layers[l].weight.transpose() * dz;
        if (net.hidden_activation() == Activation::tanh) {
            da.array() *= 1.0 - acts[l].array().square();
        }
        dz = std::move(da);
    }
    return out;
}

namespace {

void fit_impl(DenseNet& net, const Dataset& data, const DenseNet* teacher, double alpha, double temperature,
              const FitConfig& config) {
    if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (data.size() == 0) throw std::invalid_argument("cannot fit on an empty dataset");
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    AdamState state;
    auto& layers = net.layers();
    std::vector<Eigen::MatrixXd> params(2 * layers.size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            const Dataset batch = data.subset(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                                      order.begin() + static_cast<std::ptrdiff_t>(stop)));
            const auto g = dense_gradients(net, batch, teacher, alpha, temperature);
            for (std::size_t l = 0; l < layers.size(); ++l) {
                params[2 * l] = std::move(layers[l].weight);
                params[2 * l + 1] = std::move(layers[l].bias);
            }
            std::vector<Eigen::MatrixXd*> ptrs;
            for (auto& p : params) ptrs.push_back(&p);
            adam_step(std::span<Eigen::MatrixXd* const>(ptrs), std::span<const Eigen::MatrixXd>(g.grads), state,
                      config.adam);
            for (std::size_t l = 0; l < layers.size(); ++l) {
                layers[l].weight = std::move(params[2 * l]);
                layers[l].bias = params[2 * l + 1].col(0);
            }
        }
    }
}

}  // namespace

void fit_cross_entropy(DenseNet& net, const Dataset& data, const FitConfig& config) {
    fit_impl(net, data, nullptr, 1.0, 1.0, config);
}

void fit_distill(DenseNet& student, const DenseNet& teacher, const Dataset& data, double alpha, double temperature,
                 const FitConfig& config) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    fit_impl(student, data, &teacher, alpha, temperature, config);
}

std::string encode_dense(const DenseNet& net) {
    net.validate();
    ByteWriter w;
    w.put_bytes("SPKD");
    w.put_u32(kDenseCheckpointVersion);
    w.put_u32(static_cast<std::uint32_t>(net.hidden_activation()));
    w.put_u32(static_cast<std::uint32_t>(net.layer_count()));
    for (const auto& l : net.layers()) {
        w.put_u32(static_cast<std::uint32_t>(l.weight.rows()));
        w.put_u32(static_cast<std::uint32_t>(l.weight.cols()));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.put_f64(l.weight(r, c));
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.put_f64(l.bias[r]);
    }
    return w.bytes();
}

DenseNet decode_dense(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.get_bytes(4, "magic") != "SPKD") throw FormatError("bad dense checkpoint magic", 0);
    const auto version = r.get_u32("version");
    if (version != kDenseCheckpointVersion) {
        throw FormatError("unsupported dense checkpoint version " + std::to_string(version), 4);
    }
    const auto act_at = r.offset();
    const auto act = r.get_u32("activation");
    if (act > static_cast<std::uint32_t>(Activation::identity)) throw FormatError("unknown activation", act_at);
    const auto count = r.get_u32("layer count");
    std::vector<DenseLayer> layers;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto out = r.get_u32("layer rows");
        const auto in = r.get_u32("layer cols");
        DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
        for (std::uint32_t a = 0; a < out; ++a) {
            for (std::uint32_t b = 0; b < in; ++b) l.weight(a, b) = r.get_f64("weight");
        }
        for (std::uint32_t a = 0; a < out; ++a) l.bias[a] = r.get_f64("bias");
        layers.push_back(std::move(l));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after dense checkpoint", r.offset());
    try {
        return DenseNet(std::move(layers), static_cast<Activation>(act));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("inconsistent dense checkpoint: ") + e.what(), 12);
    }
}

void save_dense(const std::filesystem::path& path, const DenseNet& net) { write_file_bytes(path, encode_dense(net)); }

DenseNet load_dense(const std::filesystem::path& path) {
    try {
        return decode_dense(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace specgeo
