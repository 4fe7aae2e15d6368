// specgeo: spectral diagnostics, recurrent detection and RMT-guided compression.

#include <algorithm>
#include <charconv>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "specgeo/dense_net.hpp"
#include "specgeo/errors.hpp"
#include "specgeo/formats.hpp"
#include "specgeo/recurrent_head.hpp"
#include "specgeo/rmt_kd.hpp"
#include "specgeo/rmt_laws.hpp"
#include "specgeo/spectral_features.hpp"
#include "specgeo/stream_window.hpp"
#include "specgeo/synthetic.hpp"

namespace {

using namespace specgeo;
using json = nlohmann::ordered_json;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Line sink for "-" (stdout) or a file path.
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (path != "-") {
            file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
            if (!*file_) throw DataError("cannot open " + path + " for writing");
        }
        path_ = path;
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }
    void line(const json& j) {
        stream() << j.dump() << '\n';
        stream().flush();
        if (!stream()) throw DataError("write failed for " + path_);
    }

private:
    std::unique_ptr<std::ofstream> file_;
    std::string path_;
};

RowMatrix to_double(const RowMatrixF& m) { return m.cast<double>(); }

// ---------------------------------------------------------------- gen-synth

struct GenArgs {
    StreamSpec stream;
    std::uint64_t seed = 0;
    std::string out;
    std::string format = "container";
};

void add_gen(CLI::App& app, GenArgs& a) {
    auto* c = app.add_subcommand("gen-synth", "Write a synthetic activation stream");
    c->add_option("--steps", a.stream.steps, "Time steps T")->check(CLI::PositiveNumber);
    c->add_option("--width", a.stream.width, "Row width D")->check(CLI::PositiveNumber);
    c->add_flag("--structured", a.stream.structured, "Plant decaying spikes and set the structured header bit");
    c->add_option("--spikes", a.stream.spikes, "Spike count for structured streams");
    c->add_option("--ell-start", a.stream.ell_start, "Initial spike strength as a multiple of the noise variance");
    c->add_option("--sigma2", a.stream.sigma2, "Noise variance");
    c->add_option("--seed", a.seed, "Random seed");
    c->add_option("--format", a.format, "container (SPAC) or frames (length-prefixed)")
        ->check(CLI::IsMember({"container", "frames"}));
    c->add_option("--out", a.out, "Output path")->required();
}

int run_gen(const GenArgs& a) {
    const auto c = generate_stream(a.stream, a.seed);
    if (a.format == "container") {
        write_container(a.out, c);
    } else {
        std::string bytes;
        for (Eigen::Index t = 0; t < c.rows.rows(); ++t) {
            const RowMatrixF row = c.rows.row(t);
            bytes += encode_frame(std::span<const float>(row.data(), static_cast<std::size_t>(row.size())));
        }
        write_file_bytes(a.out, bytes);
    }
    return 0;
}

// ---------------------------------------------------------------- fit-mp

struct FitArgs {
    std::string in;
    double tau = 0.5;
    std::size_t bins = 64;
    std::string out = "-";
};

void add_fit(CLI::App& app, FitArgs& a) {
    auto* c = app.add_subcommand("fit-mp", "Fit the Marchenko-Pastur noise level to a whole activation file");
    c->add_option("--in", a.in, "Activation container")->required();
    c->add_option("--tau", a.tau, "Quantile used for the initial sigma2")->check(CLI::Range(0.0, 1.0));
    c->add_option("--bins", a.bins, "Histogram bins")->check(CLI::Range(16, 1 << 20));
    c->add_option("--out", a.out, "Output path, - for stdout");
}

int run_fit(const FitArgs& a) {
    const auto c = read_container(a.in);
    const ActivationWindow window(to_double(c.rows));
    const auto spec = eigenspectrum(window);
    const double q = static_cast<double>(window.width()) / static_cast<double>(window.n_steps());
    const double init = robust_sigma2_init(spec, a.tau);
    const auto mp = fit_sigma2(spec, q, init, a.bins);
    const auto outliers = select_outliers(spec, mp);
    json j;
    j["n"] = window.n_steps();
    j["d"] = window.width();
    j["q"] = q;
    j["sigma2_init"] = init;
    j["sigma2"] = mp.sigma2();
    j["lambda_minus"] = mp.lambda_minus();
    j["lambda_plus"] = mp.lambda_plus();
    j["lambda_1"] = spec.largest();
    j["tw_statistic"] = tw_standardize(spec.largest(), mp, window.n_steps());
    j["tw_tail"] = tw_tail_probability(tw_standardize(spec.largest(), mp, window.n_steps()));
    j["outliers"] = outliers.size();
    Sink(a.out).line(j);
    return 0;
}

// ---------------------------------------------------------------- analyze

struct WindowArgs {
    std::size_t window = 32;
    std::size_t stride = 1;
    std::size_t bins = 64;
    bool center = false;

    void add(CLI::App* c) {
        c->add_option("--window", window, "Window length N (steps)")->check(CLI::Range(2, 1 << 20));
        c->add_option("--stride", stride, "Steps between evaluations")->check(CLI::PositiveNumber);
        c->add_option("--bins", bins, "MP fit histogram bins")->check(CLI::Range(16, 1 << 20));
        c->add_flag("--center", center, "Mean-center each window before the covariance");
    }
    WindowConfig config() const {
        WindowConfig w;
        w.capacity = window;
        w.stride = stride;
        w.descriptor.fit_bins = bins;
        w.descriptor.center = center;
        return w;
    }
};

struct AnalyzeArgs {
    std::string in;
    WindowArgs window;
    std::string out = "-";
};

void add_analyze(CLI::App& app, AnalyzeArgs& a) {
    auto* c = app.add_subcommand("analyze", "Emit the 22-slot descriptor series of an activation file as NDJSON");
    c->add_option("--in", a.in, "Activation container")->required();
    a.window.add(c);
    c->add_option("--out", a.out, "Output path, - for stdout");
}

json descriptor_record(const FeatureVector& v) {
    json j;
    j["t"] = v.window_index;
    j["features"] = v.values;
    j["schema_version"] = kFeatureSchemaVersion;
    return j;
}

int run_analyze(const AnalyzeArgs& a) {
    const auto c = read_container(a.in);
    const auto series = descriptor_series(to_double(c.rows), a.window.config());
    Sink sink(a.out);
    for (const auto& v : series.vectors) sink.line(descriptor_record(v));
    return 0;
}

// ---------------------------------------------------------------- train-head

struct TrainArgs {
    std::vector<std::string> inputs;
    std::string fixture = "separable";
    std::size_t fixture_size = 0;
    std::string alarm_on = "structured";
    WindowArgs window;
    std::string cell = "gru";
    TrainConfig config;
    std::string loss = "final";
    bool no_standardize = false;
    std::string out;
    std::string metrics;
};

void add_train(CLI::App& app, TrainArgs& a) {
    auto* c = app.add_subcommand("train-head", "Train the recurrent detection head");
    c->add_option("--inputs", a.inputs, "Activation containers; the structured header bit is the label");
    c->add_option("--fixture", a.fixture, "Built-in dataset when no inputs are given")
        ->check(CLI::IsMember({"separable", "detection"}));
    c->add_option("--fixture-size", a.fixture_size, "Sequences in the built-in dataset (0: 200 separable, 400 detection)");
    c->add_option("--alarm-on", a.alarm_on, "Which class is the positive label for --inputs")
        ->check(CLI::IsMember({"structured", "noise"}));
    a.window.add(c);
    c->add_option("--cell", a.cell, "Recurrent cell")->check(CLI::IsMember({"vanilla", "gru", "lstm"}));
    c->add_option("--hidden", a.config.hidden, "Hidden size")->check(CLI::PositiveNumber);
    c->add_option("--lr", a.config.adam.learning_rate, "Adam learning rate");
    c->add_option("--weight-decay", a.config.adam.weight_decay, "Decoupled weight decay");
    c->add_option("--beta1", a.config.adam.beta1, "Adam beta1");
    c->add_option("--beta2", a.config.adam.beta2, "Adam beta2");
    c->add_option("--adam-eps", a.config.adam.epsilon, "Adam epsilon");
    c->add_option("--epochs", a.config.epochs, "Training epochs");
    c->add_option("--batch-size", a.config.batch_size, "Sequences per Adam step");
    c->add_option("--seed", a.config.seed, "Random seed (initialization, split, shuffling, fixture)");
    c->add_option("--tau", a.config.gate_threshold, "Gate threshold");
    c->add_option("--validation-fraction", a.config.validation_fraction, "Held-out fraction per class");
    c->add_option("--loss", a.loss, "BCE on the final step or mean over steps")
        ->check(CLI::IsMember({"final", "mean"}));
    c->add_flag("--no-standardize", a.no_standardize, "Disable per-slot z-scoring of inputs");
    c->add_option("--out", a.out, "Head checkpoint (SPHD)")->required();
    c->add_option("--metrics", a.metrics, "Per-epoch metrics NDJSON path, - for stdout");
}

int run_train(TrainArgs a) {
    a.config.cell = parse_cell_kind(a.cell);
    a.config.reduction = a.loss == "mean" ? LossReduction::mean_over_steps : LossReduction::final_step;
    a.config.standardize = !a.no_standardize;
    a.config.validate();

    std::vector<LabeledSequence> data;
    if (!a.inputs.empty()) {
        for (const auto& path : a.inputs) {
            const auto c = read_container(path);
            const auto series = descriptor_series(to_double(c.rows), a.window.config());
            if (series.empty()) throw DataError(path + ": stream shorter than the window");
            const bool positive = a.alarm_on == "structured" ? c.structured() : !c.structured();
            data.push_back({series_matrix(series), positive ? 1 : 0});
        }
    } else if (a.fixture == "separable") {
        data = separable_fixture(a.fixture_size ? a.fixture_size : 200, 8, a.config.seed);
    } else {
        DetectionFixtureSpec spec;
        if (a.fixture_size) spec.sequences = a.fixture_size;
        data = detection_fixture(spec, a.config.seed);
    }

    const auto result = train(data, a.config);
    save_head(a.out, result.model);
    if (!a.metrics.empty()) {
        Sink sink(a.metrics);
        for (const auto& m : result.history) {
            json j;
            j["epoch"] = m.epoch;
            j["train_loss"] = m.train_loss;
            j["validation_loss"] = m.validation_loss;
            j["validation_auroc"] = m.validation_auroc;
            sink.line(j);
        }
    }
    const double auc = result.history.empty() ? 0.0 : result.history.back().validation_auroc;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", auc);
    std::cerr << "final validation AUROC " << buf << '\n';
    if (a.metrics != "-") std::cout << "final validation AUROC " << buf << '\n';
    return 0;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
    std::string head;
    std::vector<std::string> inputs;
    WindowArgs window;
    double tau = 0.5;
    bool per_step = false;
    std::string out = "-";
};

void add_score(CLI::App& app, ScoreArgs& a) {
    auto* c = app.add_subcommand("score", "Score activation files with a trained head");
    c->add_option("--head", a.head, "Head checkpoint (SPHD)")->required();
    c->add_option("--in", a.inputs, "Activation containers")->required();
    a.window.add(c);
    c->add_option("--tau", a.tau, "Gate threshold")->check(CLI::Range(0.0, 1.0));
    c->add_flag("--per-step", a.per_step, "Include every window's probability");
    c->add_option("--out", a.out, "Output path, - for stdout");
}

int run_score(const ScoreArgs& a) {
    const auto model = load_head(a.head);
    Sink sink(a.out);
    for (const auto& path : a.inputs) {
        const auto c = read_container(path);
        const auto series = descriptor_series(to_double(c.rows), a.window.config());
        if (series.empty()) throw DataError(path + ": stream shorter than the window");
        const auto probs = model.probabilities(series_matrix(series));
        json j;
        j["input"] = path;
        j["windows"] = probs.size();
        j["probability"] = probs.back();
        j["alarm"] = gate(probs.back(), a.tau) == GateDecision::alarm;
        j["structured"] = c.structured();
        if (a.per_step) j["probabilities"] = probs;
        sink.line(j);
    }
    return 0;
}

// ---------------------------------------------------------------- monitor

class FdStreamBuf : public std::streambuf {
public:
    explicit FdStreamBuf(int fd) : fd_(fd) {}

protected:
    int_type underflow() override {
        const ssize_t n = ::read(fd_, buf_, sizeof buf_);
        if (n <= 0) return traits_type::eof();
        setg(buf_, buf_, buf_ + n);
        return traits_type::to_int_type(*gptr());
    }

private:
    int fd_;
    char buf_[1 << 16];
};

struct MonitorArgs {
    std::string head;
    std::string in = "-";
    int listen = 0;
    WindowArgs window;
    double tau = 0.5;
    bool emit_all = false;
    std::string out = "-";
};

void add_monitor(CLI::App& app, MonitorArgs& a) {
    auto* c = app.add_subcommand("monitor", "Score a live frame stream and emit NDJSON alarms");
    c->add_option("--head", a.head, "Head checkpoint (SPHD)")->required();
    c->add_option("--in", a.in, "Frame stream file, - for stdin");
    c->add_option("--listen", a.listen, "Accept one TCP connection on this localhost port instead of --in")
        ->check(CLI::Range(0, 65535));
    a.window.add(c);
    c->add_option("--tau", a.tau, "Gate threshold")->check(CLI::Range(0.0, 1.0));
    c->add_flag("--emit-all", a.emit_all, "Emit a score record for every evaluated window");
    c->add_option("--out", a.out, "Output path, - for stdout");
}

// Ordered hand-off between the ingestion and scoring stages.
class FrameQueue {
public:
    void push(std::vector<float> row) {
        {
            std::lock_guard lock(mu_);
            rows_.push_back(std::move(row));
        }
        cv_.notify_one();
    }
    void close(std::exception_ptr error = nullptr) {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
            error_ = error;
        }
        cv_.notify_one();
    }
    std::optional<std::vector<float>> pop() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !rows_.empty() || closed_; });
        if (!rows_.empty()) {
            auto row = std::move(rows_.front());
            rows_.pop_front();
            return row;
        }
        if (error_) std::rethrow_exception(error_);
        return std::nullopt;
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::vector<float>> rows_;
    bool closed_ = false;
    std::exception_ptr error_;
};

int accept_one(int port) {
    const int srv = ::socket(AF_INET, SOCK_STREAM, 0);
    if (srv < 0) throw DataError("cannot create socket");
    int yes = 1;
    ::setsockopt(srv, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(srv, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(srv, 1) != 0) {
        ::close(srv);
        throw DataError("cannot listen on port " + std::to_string(port));
    }
    std::cerr << "listening on 127.0.0.1:" << port << '\n';
    const int fd = ::accept(srv, nullptr, nullptr);
    ::close(srv);
    if (fd < 0) throw DataError("accept failed on port " + std::to_string(port));
    return fd;
}

int run_monitor(const MonitorArgs& a) {
    const auto model = load_head(a.head);
    HeadRunner runner(model);
    const auto cfg = a.window.config();
    Sink sink(a.out);

    std::unique_ptr<std::ifstream> file;
    std::unique_ptr<FdStreamBuf> fdbuf;
    std::unique_ptr<std::istream> fdstream;
    int fd = -1;
    std::istream* in = &std::cin;
    std::string source = "stdin";
    if (a.listen > 0) {
        fd = accept_one(a.listen);
        fdbuf = std::make_unique<FdStreamBuf>(fd);
        fdstream = std::make_unique<std::istream>(fdbuf.get());
        in = fdstream.get();
        source = "port " + std::to_string(a.listen);
    } else if (a.in != "-") {
        file = std::make_unique<std::ifstream>(a.in, std::ios::binary);
        if (!*file) throw DataError("cannot open " + a.in);
        in = file.get();
        source = a.in;
    }

    FrameQueue queue;
    std::thread reader([&] {
        try {
            FrameReader frames(*in);
            while (auto row = frames.next()) queue.push(std::move(*row));
            queue.close();
        } catch (const FormatError& e) {
            queue.close(std::make_exception_ptr(FormatError(source + ": " + e.what(), e.offset())));
        } catch (...) {
            queue.close(std::current_exception());
        }
    });

    std::size_t windows = 0;
    std::size_t alarms = 0;
    std::size_t step = 0;
    std::optional<SlidingBuffer> buffer;
    try {
        while (auto row = queue.pop()) {
            ++step;
            if (!buffer) buffer.emplace(cfg.capacity, row->size());
            if (row->size() != buffer->width()) {
                throw DataError("frame at step " + std::to_string(step) + " has width " +
                                std::to_string(row->size()) + ", expected " + std::to_string(buffer->width()));
            }
            buffer->push(std::span<const float>(*row));
            if (step < cfg.capacity || (step - cfg.capacity) % cfg.stride != 0) continue;
            auto v = descriptor_vector(*buffer->current_window(), cfg.descriptor);
            v.window_index = step;
            const double p = runner.step(v.values);
            ++windows;
            const bool alarm = gate(p, a.tau) == GateDecision::alarm;
            if (alarm) ++alarms;
            if (alarm || a.emit_all) {
                json j;
                j["record"] = alarm ? "alarm" : "score";
                j["window_index"] = step;
                j["probability"] = p;
                j["tau"] = a.tau;
                sink.line(j);
            }
        }
    } catch (...) {
        if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        reader.join();
        if (fd >= 0) ::close(fd);
        throw;
    }
    reader.join();
    if (fd >= 0) ::close(fd);
    std::cerr << "frames " << step << ", windows " << windows << ", alarms " << alarms << '\n';
    return 0;
}

// ---------------------------------------------------------------- compress / sweep

struct TaskArgs {
    MixtureSpec mixture;
    std::size_t hidden_width = 256;
    std::size_t depth = 3;
    std::size_t train_epochs = 20;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::string model;
    std::string save_pretrained;

    void add(CLI::App* c) {
        c->add_option("--classes", mixture.classes, "Mixture classes");
        c->add_option("--input-dim", mixture.dim, "Input dimension");
        c->add_option("--separation", mixture.separation, "Stddev of class means per coordinate");
        c->add_option("--n-train", mixture.n_train, "Training samples");
        c->add_option("--n-validation", mixture.n_validation, "Validation samples");
        c->add_option("--n-test", mixture.n_test, "Test samples");
        c->add_option("--hidden-width", hidden_width, "Hidden layer width")->check(CLI::PositiveNumber);
        c->add_option("--depth", depth, "Hidden layers")->check(CLI::PositiveNumber);
        c->add_option("--train-epochs", train_epochs, "Pre-training epochs");
        c->add_option("--train-batch-size", batch_size, "Pre-training batch size")->check(CLI::PositiveNumber);
        c->add_option("--train-lr", lr, "Pre-training learning rate");
        c->add_option("--seed", seed, "Random seed (data, initialization, calibration split)");
        c->add_option("--model", model, "Start from this SPKD checkpoint instead of pre-training");
        c->add_option("--save-pretrained", save_pretrained, "Write the pre-trained model (SPKD)");
    }
};

struct PlanArgs {
    CompressionPlan plan;
    std::string param_target;
    std::string layers;

    void add(CLI::App* c) {
        c->add_option("--tau", plan.tau, "sigma2 initialization quantile")->check(CLI::Range(0.0, 1.0));
        c->add_option("--calibration-fraction", plan.calibration_fraction, "Training fraction used for calibration");
        c->add_option("--alpha", plan.alpha, "Cross-entropy weight in the distillation loss");
        c->add_option("--temperature", plan.temperature, "Distillation temperature");
        c->add_option("--rho-min", plan.rho_min, "Stop when k/d falls below this");
        c->add_option("--eps-acc", plan.epsilon_acc, "Stop when validation accuracy drops by more than this");
        c->add_option("--param-target", param_target, "Stop once parameters <= target (count or 'current')");
        c->add_option("--stability-ratio", plan.stability_ratio,
                      "Extra distillation until accuracy reaches this fraction of the baseline");
        c->add_option("--distill-epochs", plan.distill.epochs, "Distillation epochs per stage");
        c->add_option("--distill-lr", plan.distill.adam.learning_rate, "Distillation learning rate");
        c->add_option("--max-extra-epochs", plan.max_extra_epochs, "Cap on extra distillation epochs per stage");
        c->add_option("--fit-bins", plan.fit_bins, "MP fit histogram bins");
        c->add_option("--layers", layers, "Comma-separated hidden layer order (default shallow to deep)");
    }
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& field) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(field + ": cannot parse '" + text + "'");
    return v;
}

struct Prepared {
    MixtureTask task;
    DenseNet model;
};

Prepared prepare(const TaskArgs& a) {
    Prepared p{gaussian_mixture(a.mixture, a.seed), {}};
    if (!a.model.empty()) {
        p.model = load_dense(a.model);
        if (p.model.input_width() != a.mixture.dim || p.model.output_width() != a.mixture.classes) {
            throw ConfigError("--model: checkpoint shape does not match --input-dim/--classes");
        }
    } else {
        std::vector<std::size_t> widths{a.mixture.dim};
        for (std::size_t i = 0; i < a.depth; ++i) widths.push_back(a.hidden_width);
        widths.push_back(a.mixture.classes);
        p.model = DenseNet(widths, a.seed);
        FitConfig fit;
        fit.epochs = a.train_epochs;
        fit.batch_size = a.batch_size;
        fit.adam.learning_rate = a.lr;
        fit.seed = a.seed;
        fit_cross_entropy(p.model, p.task.train, fit);
    }
    if (!a.save_pretrained.empty()) save_dense(a.save_pretrained, p.model);
    return p;
}

CompressionPlan resolve_plan(const PlanArgs& a, const DenseNet& model, std::uint64_t seed) {
    CompressionPlan plan = a.plan;
    plan.seed = seed;
    plan.distill.seed = seed;
    if (a.param_target == "current") {
        plan.param_target = model.parameter_count();
    } else if (!a.param_target.empty()) {
        plan.param_target = parse_number<std::size_t>(a.param_target, "--param-target");
    }
    for (const auto& l : split_list(a.layers)) plan.layer_order.push_back(parse_number<std::size_t>(l, "--layers"));
    plan.validate();
    return plan;
}

struct CompressArgs {
    TaskArgs task;
    PlanArgs plan;
    std::string report = "-";
    std::string save_model;
};

void add_compress(CLI::App& app, CompressArgs& a) {
    auto* c = app.add_subcommand("compress", "Run RMT-KD on the built-in Gaussian-mixture classifier");
    a.task.add(c);
    a.plan.add(c);
    c->add_option("--report", a.report, "Report NDJSON path, - for stdout");
    c->add_option("--save-model", a.save_model, "Write the compressed model (SPKD)");
}

int run_compress(const CompressArgs& a) {
    auto prep = prepare(a.task);
    const auto plan = resolve_plan(a.plan, prep.model, a.task.seed);
    const double test_before = accuracy(prep.model, prep.task.test);
    const auto result = rmtkd_schedule(prep.model, prep.task.train, prep.task.validation, plan);
    if (!a.save_model.empty()) save_dense(a.save_model, result.model);
    Sink sink(a.report);
    sink.stream() << result.report.to_ndjson();
    json j;
    j["record"] = "evaluation";
    j["test_acc_before"] = test_before;
    j["test_acc_after"] = accuracy(result.model, prep.task.test);
    j["model_params"] = result.model.parameter_count();
    j["widths"] = result.model.widths();
    sink.line(j);
    return 0;
}

struct SweepArgs {
    TaskArgs task;
    PlanArgs plan;
    std::string taus = "0,0.25,0.45,0.7,0.9";
    std::string out = "-";
};

void add_sweep(CLI::App& app, SweepArgs& a) {
    auto* c = app.add_subcommand("sweep-quantile", "Reduction and accuracy as a function of the sigma2 quantile");
    a.task.add(c);
    a.plan.add(c);
    c->add_option("--taus", a.taus, "Comma-separated quantiles");
    c->add_option("--out", a.out, "Output path, - for stdout");
}

int run_sweep(const SweepArgs& a) {
    auto prep = prepare(a.task);
    // Sweeps reduce every layer: no ratio, accuracy or target stop.
    const auto plan = sweep_plan_template(resolve_plan(a.plan, prep.model, a.task.seed));
    std::vector<double> taus;
    for (const auto& t : split_list(a.taus)) taus.push_back(parse_number<double>(t, "--taus"));
    const auto points = quantile_sweep(prep.model, prep.task.train, prep.task.validation, prep.task.test, taus, plan);
    Sink sink(a.out);
    for (const auto& p : points) {
        json j;
        j["record"] = "sweep";
        j["tau"] = p.tau;
        j["reduction"] = p.reduction;
        j["test_accuracy"] = p.accuracy;
        j["params"] = p.params;
        std::vector<std::size_t> ks;
        for (const auto& s : p.report.stages) ks.push_back(s.k);
        j["kept"] = ks;
        sink.line(j);
    }
    return 0;
}

// ---------------------------------------------------------------- config

// Flat key=value lines become --key=value right after the subcommand name, so
// flags given on the command line (parsed later) take precedence.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;

    std::size_t sub_at = 0;
    const CLI::App* sub = nullptr;
    for (std::size_t i = 1; i < args.size() && !sub; ++i) {
        for (const auto* s : app.get_subcommands([](const CLI::App*) { return true; })) {
            if (s->get_name() == args[i]) {
                sub = s;
                sub_at = i;
                break;
            }
        }
    }
    if (!sub) throw ConfigError("--config needs a subcommand");

    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::vector<std::string> injected;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        const auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!sub->get_option_no_throw("--" + key)) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "' for " +
                              sub->get_name());
        }
        injected.push_back("--" + key + "=" + value);
    }
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_at + 1), injected.begin(), injected.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral diagnostics for neural activations: RMT baselines, streaming descriptors, "
                 "recurrent detection and RMT-guided compression"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option("--config", "Flat key=value file applied before command-line flags");

    GenArgs gen;
    FitArgs fit;
    AnalyzeArgs analyze;
    TrainArgs train_args;
    ScoreArgs score;
    MonitorArgs monitor;
    CompressArgs compress;
    SweepArgs sweep;
    add_gen(app, gen);
    add_fit(app, fit);
    add_analyze(app, analyze);
    add_train(app, train_args);
    add_score(app, score);
    add_monitor(app, monitor);
    add_compress(app, compress);
    add_sweep(app, sweep);
    // list options keep every value
    for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
        for (const char* name : {"--inputs", "--in"}) {
            auto* opt = sub->get_option_no_throw(name);
            if (opt && opt->get_expected_max() > 1) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        }
    }

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(app, std::move(args));
        std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (app.got_subcommand("gen-synth")) return run_gen(gen);
        if (app.got_subcommand("fit-mp")) return run_fit(fit);
        if (app.got_subcommand("analyze")) return run_analyze(analyze);
        if (app.got_subcommand("train-head")) return run_train(train_args);
        if (app.got_subcommand("score")) return run_score(score);
        if (app.got_subcommand("monitor")) return run_monitor(monitor);
        if (app.got_subcommand("compress")) return run_compress(compress);
        if (app.got_subcommand("sweep-quantile")) return run_sweep(sweep);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
