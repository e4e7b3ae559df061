#include "vpgo/training.hpp"

#include "vpgo/config.hpp"
#include "vpgo/errors.hpp"
#include "hdf5_io.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace vpgo::training {

using model::LatentParams;
using model::VpGo;

std::string_view to_string(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(std::string_view name) {
    if (name == "constant") return LrSchedule::Constant;
    if (name == "cosine") return LrSchedule::Cosine;
    throw ConfigError("lr_schedule", "unknown schedule '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
    if (context < 1) throw ConfigError("context", "must be >= 1");
    if (horizon < 1) throw ConfigError("horizon", "must be >= 1");
    if (!(beta >= 0.0)) throw ConfigError("beta", "must be >= 0");
    if (!(beta_warmup >= 0.0 && beta_warmup <= 1.0)) throw ConfigError("beta_warmup", "must lie in [0, 1]");
    if (!(lr > 0.0)) throw ConfigError("lr", "must be > 0");
    if (!(lr_final >= 0.0 && lr_final <= 1.0)) throw ConfigError("lr_final", "must lie in [0, 1]");
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (steps < 0) throw ConfigError("steps", "must be >= 0");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip", "must be > 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 0");
}

double TrainConfig::beta_at(std::int64_t step) const {
    const auto warm = static_cast<std::int64_t>(std::ceil(beta_warmup * static_cast<double>(steps)));
    if (warm <= 0) return beta;
    return beta * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warm));
}

double TrainConfig::lr_at(std::int64_t step) const {
    if (lr_schedule == LrSchedule::Constant || steps <= 1) return lr;
    const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(steps - 1), 0.0, 1.0);
    return lr * (lr_final + (1.0 - lr_final) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// ---------------------------------------------------------------------------

torch::Tensor kl_elementwise(const torch::Tensor& mu_q, const torch::Tensor& sigma_q, const torch::Tensor& mu_p,
                             const torch::Tensor& sigma_p) {
    if (!mu_q.sizes().equals(sigma_q.sizes()) || !mu_q.sizes().equals(mu_p.sizes()) ||
        !mu_q.sizes().equals(sigma_p.sizes())) {
        throw ValidationError("KL arguments must share a shape");
    }
    {
        torch::NoGradGuard guard;
        if (!(sigma_q > 0).all().item<bool>() || !(sigma_p > 0).all().item<bool>()) {
            throw ValidationError("KL requires strictly positive sigma");
        }
    }
    const auto var_q = sigma_q * sigma_q;
    const auto var_p = sigma_p * sigma_p;
    const auto diff = mu_q - mu_p;
    return torch::log(sigma_p / sigma_q) + (var_q + diff * diff) / (2.0 * var_p) - 0.5;
}

torch::Tensor kl_diag_gaussian(const torch::Tensor& mu_q, const torch::Tensor& sigma_q, const torch::Tensor& mu_p,
                               const torch::Tensor& sigma_p) {
    return kl_elementwise(mu_q, sigma_q, mu_p, sigma_p).sum();
}

LossReport ElboTerms::report() const {
    LossReport r;
    r.recon_l1 = recon_l1.item<double>();
    r.kl = kl.item<double>();
    r.total = total.item<double>();
    r.beta = beta;
    const auto rs = recon_per_step.detach().to(torch::kDouble).contiguous();
    const auto ks = kl_per_step.detach().to(torch::kDouble).contiguous();
    r.recon_per_step.assign(rs.data_ptr<double>(), rs.data_ptr<double>() + rs.numel());
    r.kl_per_step.assign(ks.data_ptr<double>(), ks.data_ptr<double>() + ks.numel());
    return r;
}

ElboTerms elbo_loss(const torch::Tensor& predicted, const torch::Tensor& targets,
                    std::span<const LatentParams> posterior, std::span<const LatentParams> prior, double beta) {
    if (!predicted.sizes().equals(targets.sizes()) || predicted.dim() < 2) {
        throw ValidationError("predicted and target frames must share a (B, n, ...) shape");
    }
    const auto n = predicted.size(1);
    if (static_cast<std::int64_t>(posterior.size()) != n || static_cast<std::int64_t>(prior.size()) != n) {
        throw ValidationError("need one posterior and one prior per predicted step");
    }
    if (beta < 0.0) throw ValidationError("beta must be >= 0");
    const auto batch = static_cast<double>(predicted.size(0));

    ElboTerms t;
    t.beta = beta;
    const auto err = (predicted - targets).abs().flatten(2);  // (B, n, pixels)
    t.recon_per_step = err.mean(std::vector<std::int64_t>{0, 2});
    t.recon_l1 = err.mean();
    std::vector<torch::Tensor> kls;
    for (std::int64_t s = 0; s < n; ++s) {
        const auto& q = posterior[static_cast<std::size_t>(s)];
        const auto& p = prior[static_cast<std::size_t>(s)];
        kls.push_back(kl_diag_gaussian(q.mu, q.sigma, p.mu, p.sigma) / batch);
    }
    t.kl_per_step = torch::stack(kls);
    t.kl = t.kl_per_step.sum();
    t.total = t.recon_l1 + beta * t.kl;
    return t;
}

ElboTerms window_loss(VpGo& model, const data::WindowBatch& batch, double beta, const torch::Tensor& noise) {
    const auto c = batch.context;
    if (c < 1 || batch.horizon() < 1) throw ValidationError("window needs context >= 1 and horizon >= 1");
    auto out = model::teacher_forced(model, batch.frames, batch.actions, batch.states, noise);
    using torch::indexing::Slice;
    // predicted[:, i] is frame i + 1.
    const auto predicted = out.predicted.index({Slice(), Slice(c - 1)});
    const auto targets = batch.frames.index({Slice(), Slice(c)}).to(predicted.scalar_type());
    const std::span post(out.posterior);
    const std::span prior(out.prior);
    const auto first = static_cast<std::size_t>(c - 1);
    return elbo_loss(predicted, targets, post.subspan(first), prior.subspan(first), beta);
}

torch::Tensor training_noise(const VpGo& model, std::int64_t batch, std::int64_t length, std::uint64_t seed,
                             std::int64_t step) {
    const auto& cfg = model->config();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(
        model::derive_seed(seed, 2 * static_cast<std::uint64_t>(step)));
    const auto dtype = model->parameters().front().scalar_type();
    return torch::randn({length - 1, batch, cfg.latent_channels, cfg.feature_height(), cfg.feature_width()}, gen,
                        torch::TensorOptions().dtype(dtype));
}

data::WindowBatch sample_batch(const std::vector<data::Trajectory>& dataset, const TrainConfig& cfg,
                               std::int64_t step) {
    if (dataset.empty()) throw ValidationError("dataset is empty");
    std::mt19937_64 rng(model::derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(step) + 1));
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    std::vector<data::TrainingWindow> windows;
    windows.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
        windows.push_back(data::sample_window(dataset[pick(rng)], cfg.context, cfg.horizon, rng));
    }
    return data::make_batch(windows);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(VpGo model, TrainConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
    cfg_.validate();
    optimizer_ = std::make_unique<torch::optim::Adam>(model_->parameters(), torch::optim::AdamOptions(cfg_.lr));
}

LossReport Trainer::step(const data::WindowBatch& batch) {
    model_->train();
    for (auto& group : optimizer_->param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(cfg_.lr_at(step_));
    }
    const auto noise = training_noise(model_, batch.batch_size(), batch.length(), cfg_.seed, step_);
    optimizer_->zero_grad();
    auto terms = window_loss(model_, batch, cfg_.beta_at(step_), noise);
    auto report = terms.report();
    if (!std::isfinite(report.total)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step_) + " (recon " +
                             std::to_string(report.recon_l1) + ", kl " + std::to_string(report.kl) + ")");
    }
    terms.total.backward();
    if (cfg_.grad_clip) torch::nn::utils::clip_grad_norm_(model_->parameters(), *cfg_.grad_clip);
    optimizer_->step();
    ++step_;
    return report;
}

// ---------------------------------------------------------------------------

namespace {

std::string h5_path(const std::string& root, const std::string& dotted) {
    std::string out = root;
    out.reserve(root.size() + dotted.size() + 1);
    out += '/';
    for (char ch : dotted) out += ch == '.' ? '/' : ch;
    return out;
}

h5::Scalar scalar_of(const torch::Tensor& t) {
    switch (t.scalar_type()) {
        case torch::kFloat: return h5::Scalar::F32;
        case torch::kDouble: return h5::Scalar::F64;
        case torch::kLong: return h5::Scalar::I64;
        case torch::kByte: return h5::Scalar::U8;
        default: throw WriteError("unsupported tensor type " + std::string(c10::toString(t.scalar_type())));
    }
}

std::vector<std::uint64_t> dims_of(const torch::Tensor& t) {
    std::vector<std::uint64_t> d;
    for (auto s : t.sizes()) d.push_back(static_cast<std::uint64_t>(s));
    if (d.empty()) d.push_back(1);
    return d;
}

void write_tensor(h5::File& file, const std::string& name, const torch::Tensor& t) {
    const auto c = t.detach().contiguous();
    file.write(name, scalar_of(c), dims_of(c), c.data_ptr());
}

void read_tensor(const h5::File& file, const std::string& name, torch::Tensor& into) {
    if (!file.exists(name)) throw LoadError(file.path() + ": missing tensor " + name);
    const auto info = file.info(name);
    std::int64_t count = 1;
    for (auto d : info.dims) count *= static_cast<std::int64_t>(d);
    if (count != into.numel()) {
        throw LoadError(file.path() + ": " + name + " has " + std::to_string(count) + " elements, expected " +
                        std::to_string(into.numel()));
    }
    auto buffer = torch::empty(into.sizes(), into.options());
    file.read(name, scalar_of(buffer), buffer.data_ptr());
    torch::NoGradGuard guard;
    into.copy_(buffer);
}

torch::optim::AdamParamState* adam_state(torch::optim::Adam& opt, const torch::Tensor& p) {
    auto& states = opt.state();
    auto it = states.find(p.unsafeGetTensorImpl());
    if (it == states.end()) return nullptr;
    return static_cast<torch::optim::AdamParamState*>(it->second.get());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, VpGo& model, const TrainConfig& train, std::int64_t step,
                     torch::optim::Adam* optimizer) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    const auto tmp = path.string() + ".tmp";
    {
        h5::File file(tmp, h5::Mode::Truncate);
        file.set_attr("format_version", kCheckpointVersion);
        file.set_attr("step", step);
        file.set_attr("model_config", config::to_json(model->config()).dump());
        file.set_attr("train_config", config::to_json(train).dump());
        for (const auto& item : model->named_parameters()) write_tensor(file, h5_path("/params", item.key()), item.value());
        for (const auto& item : model->named_buffers()) write_tensor(file, h5_path("/buffers", item.key()), item.value());
        file.set_attr("has_optimizer", static_cast<std::int64_t>(optimizer != nullptr));
        if (optimizer) {
            for (const auto& item : model->named_parameters()) {
                const auto* s = adam_state(*optimizer, item.value());
                if (!s) continue;
                const auto base = h5_path("/optimizer", item.key());
                write_tensor(file, base + "/exp_avg", s->exp_avg());
                write_tensor(file, base + "/exp_avg_sq", s->exp_avg_sq());
                write_tensor(file, base + "/step", torch::tensor({s->step()}, torch::kLong));
            }
        }
        file.flush();
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw WriteError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint_header(const std::filesystem::path& path) {
    h5::File file(path.string(), h5::Mode::Read);
    const auto version = file.attr_int("format_version");
    if (!version) throw LoadError(path.string() + ": not a checkpoint (no format_version)");
    if (*version != kCheckpointVersion) {
        throw LoadError(path.string() + ": unsupported checkpoint version " + std::to_string(*version));
    }
    Checkpoint c;
    const auto model_json = file.attr_string("model_config");
    const auto train_json = file.attr_string("train_config");
    if (!model_json || !train_json) throw LoadError(path.string() + ": checkpoint lacks its configs");
    try {
        c.model_config = config::parse_model_config(config::Json::parse(*model_json));
        c.train_config = config::parse_train_config(config::Json::parse(*train_json));
    } catch (const config::Json::exception& e) {
        throw LoadError(path.string() + ": corrupt config attribute: " + e.what());
    }
    c.step = file.attr_int("step").value_or(0);
    c.has_optimizer = file.attr_int("has_optimizer").value_or(0) != 0;
    return c;
}

void load_parameters(const std::filesystem::path& path, VpGo& model) {
    const auto header = read_checkpoint_header(path);
    if (!(header.model_config == model->config())) {
        throw ConfigError("model", path.string() + ": checkpoint model config differs from the target model");
    }
    h5::File file(path.string(), h5::Mode::Read);
    for (auto& item : model->named_parameters()) read_tensor(file, h5_path("/params", item.key()), item.value());
    for (auto& item : model->named_buffers()) read_tensor(file, h5_path("/buffers", item.key()), item.value());
}

VpGo load_model(const std::filesystem::path& path) {
    auto model = model::build_model(read_checkpoint_header(path).model_config);
    load_parameters(path, model);
    return model;
}

void load_optimizer_state(const std::filesystem::path& path, VpGo& model, torch::optim::Adam& optimizer) {
    h5::File file(path.string(), h5::Mode::Read);
    auto& states = optimizer.state();
    for (const auto& item : model->named_parameters()) {
        const auto base = h5_path("/optimizer", item.key());
        if (!file.exists(base + "/exp_avg")) continue;
        const auto& p = item.value();
        auto s = std::make_unique<torch::optim::AdamParamState>();
        auto exp_avg = torch::zeros_like(p);
        auto exp_avg_sq = torch::zeros_like(p);
        auto step = torch::zeros({1}, torch::kLong);
        read_tensor(file, base + "/exp_avg", exp_avg);
        read_tensor(file, base + "/exp_avg_sq", exp_avg_sq);
        read_tensor(file, base + "/step", step);
        s->exp_avg(exp_avg);
        s->exp_avg_sq(exp_avg_sq);
        s->step(step.item<std::int64_t>());
        states[p.unsafeGetTensorImpl()] = std::move(s);
    }
}

std::uint64_t parameter_checksum(VpGo& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    auto add = [&](const std::string& name, const torch::Tensor& t) {
        mix(name.data(), name.size());
        const auto c = t.detach().contiguous();
        mix(c.data_ptr(), static_cast<std::size_t>(c.numel()) * c.element_size());
    };
    for (const auto& item : model->named_parameters()) add(item.key(), item.value());
    for (const auto& item : model->named_buffers()) add(item.key(), item.value());
    return h;
}

// ---------------------------------------------------------------------------

FitResult fit(VpGo& model, const std::vector<data::Trajectory>& dataset, const TrainConfig& cfg,
              const FitOptions& options) {
    cfg.validate();
    if (dataset.empty()) throw ValidationError("dataset is empty");
    if (options.resume && options.init) throw ConfigError("init_checkpoint", "cannot combine with resume");

    std::int64_t start = 0;
    if (options.init) load_parameters(*options.init, model);
    if (options.resume) {
        const auto header = read_checkpoint_header(*options.resume);
        if (!(header.train_config == cfg)) {
            throw ConfigError("train", "resume checkpoint was written with a different training config");
        }
        load_parameters(*options.resume, model);
        start = header.step;
    }

    Trainer trainer(model, cfg);
    trainer.set_step_count(start);
    if (options.resume) load_optimizer_state(*options.resume, model, trainer.optimizer());

    FitResult result;
    result.first_step = start;
    result.start_checksum = parameter_checksum(model);

    std::ofstream log;
    const bool writing = !options.out_dir.empty();
    if (writing) {
        std::filesystem::create_directories(options.out_dir);
        const auto csv = options.out_dir / "loss.csv";
        const bool append = options.resume && std::filesystem::exists(csv);
        log.open(csv, append ? std::ios::app : std::ios::trunc);
        if (!log) throw WriteError("cannot write " + csv.string());
        if (!append) log << "step,recon_l1,kl,total,beta,lr\n";
        log.precision(9);
    }

    for (std::int64_t s = start; s < cfg.steps; ++s) {
        const auto batch = sample_batch(dataset, cfg, s);
        auto report = trainer.step(batch);
        if (writing) {
            log << s << ',' << report.recon_l1 << ',' << report.kl << ',' << report.total << ',' << report.beta << ','
                << cfg.lr_at(s) << '\n';
        }
        if (options.on_step) options.on_step(s, report);
        result.history.push_back(std::move(report));
        if (writing && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.steps) {
            save_checkpoint(options.out_dir / ("checkpoint_" + std::to_string(s + 1) + ".h5"), model, cfg, s + 1,
                            &trainer.optimizer());
        }
    }
    result.last_step = std::max(start, cfg.steps);
    if (writing) {
        log.flush();
        result.checkpoint = options.out_dir / "checkpoint.h5";
        save_checkpoint(result.checkpoint, model, cfg, result.last_step, &trainer.optimizer());
    }
    return result;
}

}  // namespace vpgo::training
