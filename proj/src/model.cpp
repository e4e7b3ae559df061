#include "vpgo/model.hpp"

#include "vpgo/errors.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <bit>
#include <numeric>

namespace vpgo::model {

namespace nn = torch::nn;

std::string_view to_string(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::Vgg16Conv3_3: return "vgg16_conv3_3";
        case EncoderVariant::Vgg16Conv4_3: return "vgg16_conv4_3";
        case EncoderVariant::Vgg19Conv4_4: return "vgg19_conv4_4";
    }
    return "?";
}

EncoderVariant parse_encoder_variant(std::string_view name) {
    if (name == "vgg16_conv3_3") return EncoderVariant::Vgg16Conv3_3;
    if (name == "vgg16_conv4_3") return EncoderVariant::Vgg16Conv4_3;
    if (name == "vgg19_conv4_4") return EncoderVariant::Vgg19Conv4_4;
    throw ConfigError("encoder_variant", "unknown variant '" + std::string(name) + "'");
}

std::string_view to_string(Norm n) {
    switch (n) {
        case Norm::Batch: return "batch";
        case Norm::Group: return "group";
        case Norm::None: return "none";
    }
    return "?";
}

Norm parse_norm(std::string_view name) {
    if (name == "batch") return Norm::Batch;
    if (name == "group") return Norm::Group;
    if (name == "none") return Norm::None;
    throw ConfigError("norm", "unknown normalization '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
    auto positive = [](std::int64_t v, const char* key) {
        if (v < 1) throw ConfigError(key, "must be >= 1, got " + std::to_string(v));
    };
    positive(frame_height, "frame_height");
    positive(frame_width, "frame_width");
    positive(base_channels, "base_channels");
    positive(feature_channels, "feature_channels");
    positive(action_code_channels, "action_code_channels");
    positive(latent_channels, "latent_channels");
    positive(hidden_channels, "hidden_channels");
    positive(predictor_lstm_layers, "predictor_lstm_layers");
    positive(prior_lstm_layers, "prior_lstm_layers");
    positive(posterior_lstm_layers, "posterior_lstm_layers");
    positive(n_a, "n_a");
    if (use_state) positive(n_s, "n_s");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size", "must be a positive odd number");
    if (feature_stride < 1 || !std::has_single_bit(static_cast<std::uint64_t>(feature_stride))) {
        throw ConfigError("feature_stride", "must be a power of two");
    }
    if (frame_height % feature_stride != 0 || frame_width % feature_stride != 0) {
        throw ConfigError("feature_stride", "frame size " + std::to_string(frame_height) + "x" +
                                                std::to_string(frame_width) + " is not divisible by " +
                                                std::to_string(feature_stride));
    }
    if (!(laplace_scale > 0.0)) throw ConfigError("laplace_scale", "must be positive");
}

std::vector<VggStage> vgg_stages(EncoderVariant v, std::int64_t b) {
    switch (v) {
        case EncoderVariant::Vgg16Conv3_3: return {{b, 2}, {2 * b, 2}, {4 * b, 3}};
        case EncoderVariant::Vgg16Conv4_3: return {{b, 2}, {2 * b, 2}, {4 * b, 3}, {8 * b, 3}};
        case EncoderVariant::Vgg19Conv4_4: return {{b, 2}, {2 * b, 2}, {4 * b, 4}, {8 * b, 4}};
    }
    return {};
}

namespace {

constexpr double kLeakySlope = 0.2;

nn::AnyModule make_norm(Norm norm, std::int64_t channels) {
    switch (norm) {
        case Norm::Batch: return nn::AnyModule(nn::BatchNorm2d(channels));
        case Norm::Group: {
            const auto groups = std::gcd<std::int64_t>(channels, 8);
            return nn::AnyModule(nn::GroupNorm(nn::GroupNormOptions(groups, channels)));
        }
        case Norm::None: break;
    }
    return {};
}

nn::Conv2d make_conv(std::int64_t in, std::int64_t out, std::int64_t k) {
    nn::Conv2d conv(nn::Conv2dOptions(in, out, k).padding(k / 2));
    torch::NoGradGuard guard;
    nn::init::kaiming_normal_(conv->weight, kLeakySlope, torch::kFanIn, torch::kLeakyReLU);
    nn::init::zeros_(conv->bias);
    return conv;
}

int pool_count(std::int64_t stride) { return std::countr_zero(static_cast<std::uint64_t>(stride)); }

torch::Tensor leaky(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

torch::ScalarType dtype_of(VpGo& model) { return model->parameters().front().scalar_type(); }

void check_frames(const torch::Tensor& frames, const ModelConfig& cfg) {
    const bool ok = (frames.dim() == 3 || frames.dim() == 4) && frames.size(-1) == 3 &&
                    frames.size(-3) == cfg.frame_height && frames.size(-2) == cfg.frame_width;
    if (!ok) {
        throw ValidationError("expected frames of shape (N, " + std::to_string(cfg.frame_height) + ", " +
                              std::to_string(cfg.frame_width) + ", 3), got " + c10::str(frames.sizes()));
    }
}

void check_grid(const torch::Tensor& t, std::int64_t channels, const ModelConfig& cfg, const char* what) {
    const bool ok = t.dim() == 4 && t.size(1) == channels && t.size(2) == cfg.feature_height() &&
                    t.size(3) == cfg.feature_width();
    if (!ok) {
        throw ValidationError(std::string(what) + " must be (N, " + std::to_string(channels) + ", " +
                              std::to_string(cfg.feature_height()) + ", " + std::to_string(cfg.feature_width()) +
                              "), got " + c10::str(t.sizes()));
    }
}

std::vector<LstmState> zero_states(const nn::ModuleList& cells, std::int64_t batch, const ModelConfig& cfg,
                                   const torch::TensorOptions& opts) {
    std::vector<LstmState> out;
    for (const auto& m : *cells) {
        const auto hidden = m->as<ConvLstmCellImpl>()->hidden_channels();
        auto z = torch::zeros({batch, hidden, cfg.feature_height(), cfg.feature_width()}, opts);
        out.push_back({z, z});
    }
    return out;
}

torch::Tensor run_cells(nn::ModuleList& cells, torch::Tensor x, std::vector<LstmState>& state) {
    if (state.size() != cells->size()) throw ValidationError("uninitialized recurrence");
    for (std::size_t i = 0; i < cells->size(); ++i) {
        state[i] = cells[i]->as<ConvLstmCellImpl>()->forward(x, state[i]);
        x = state[i].h;
    }
    return x;
}

LatentNetworkImpl& network(VpGo& model, ParameterGroup g) {
    return g == ParameterGroup::Prior ? *model->prior : *model->posterior;
}

class EvalGuard {
public:
    explicit EvalGuard(VpGo& model) : model_(model), was_training_(model->is_training()) { model_->eval(); }
    ~EvalGuard() { model_->train(was_training_); }
    EvalGuard(const EvalGuard&) = delete;
    EvalGuard& operator=(const EvalGuard&) = delete;

private:
    VpGo& model_;
    bool was_training_;
};

}  // namespace

// ---------------------------------------------------------------------------

VggEncoderImpl::VggEncoderImpl(const ModelConfig& cfg) {
    const auto stages = vgg_stages(cfg.encoder_variant, cfg.base_channels);
    const int pools = pool_count(cfg.feature_stride);
    std::int64_t in = 3;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        for (int j = 0; j < stages[s].convs; ++j) {
            const std::string suffix = std::to_string(s + 1) + "_" + std::to_string(j + 1);
            Layer layer;
            layer.conv = register_module("conv" + suffix, make_conv(in, stages[s].channels, 3));
            layer.norm = make_norm(cfg.norm, stages[s].channels);
            if (!layer.norm.is_empty()) register_module("norm" + suffix, layer.norm.ptr());
            layer.pool_after = (j + 1 == stages[s].convs) && static_cast<int>(s) < pools;
            layers_.push_back(std::move(layer));
            in = stages[s].channels;
        }
    }
    extra_pools_ = std::max(0, pools - static_cast<int>(stages.size()));
    conv_out_channels_ = in;
    if (in != cfg.feature_channels) projection_ = register_module("projection", make_conv(in, cfg.feature_channels, 1));
}

torch::Tensor VggEncoderImpl::forward(const torch::Tensor& input) {
    auto x = input;
    for (auto& layer : layers_) {
        x = layer.conv->forward(x);
        if (!layer.norm.is_empty()) x = layer.norm.forward(x);
        x = leaky(x);
        if (layer.pool_after) x = torch::max_pool2d(x, 2);
    }
    for (int i = 0; i < extra_pools_; ++i) x = torch::max_pool2d(x, 2);
    if (!projection_.is_empty()) x = projection_->forward(x);
    return x;
}

VggDecoderImpl::VggDecoderImpl(const ModelConfig& cfg, std::int64_t in_channels) {
    const auto stages = vgg_stages(cfg.encoder_variant, cfg.base_channels);
    const int pools = pool_count(cfg.feature_stride);
    std::int64_t in = in_channels;
    if (in != stages.back().channels) {
        projection_ = register_module("projection", make_conv(in, stages.back().channels, 1));
        in = stages.back().channels;
    }
    extra_upsamples_ = std::max(0, pools - static_cast<int>(stages.size()));

    for (std::size_t s = stages.size(); s-- > 0;) {
        const std::int64_t next = s > 0 ? stages[s - 1].channels : 3;
        for (int j = 0; j < stages[s].convs; ++j) {
            const bool last = j + 1 == stages[s].convs;
            const std::int64_t out = last ? next : stages[s].channels;
            const std::string suffix = std::to_string(s + 1) + "_" + std::to_string(stages[s].convs - j);
            Layer layer;
            layer.conv = register_module("deconv" + suffix, make_conv(in, out, 3));
            layer.upsample_before = j == 0 && static_cast<int>(s) < pools;
            layer.activate = !(s == 0 && last);
            if (layer.activate) {
                layer.norm = make_norm(cfg.norm, out);
                if (!layer.norm.is_empty()) register_module("norm" + suffix, layer.norm.ptr());
            }
            layers_.push_back(std::move(layer));
            in = out;
        }
    }
}

torch::Tensor VggDecoderImpl::forward(const torch::Tensor& input) {
    namespace F = torch::nn::functional;
    auto up = [](const torch::Tensor& t) {
        return F::interpolate(t, F::InterpolateFuncOptions()
                                     .scale_factor(std::vector<double>{2.0, 2.0})
                                     .mode(torch::kNearest));
    };
    auto x = input;
    if (!projection_.is_empty()) x = leaky(projection_->forward(x));
    for (int i = 0; i < extra_upsamples_; ++i) x = up(x);
    for (auto& layer : layers_) {
        if (layer.upsample_before) x = up(x);
        x = layer.conv->forward(x);
        if (layer.activate) {
            if (!layer.norm.is_empty()) x = layer.norm.forward(x);
            x = leaky(x);
        }
    }
    return torch::sigmoid(x);
}

ActionEncoderImpl::ActionEncoderImpl(const ModelConfig& cfg)
    : channels_(cfg.action_code_channels), height_(cfg.feature_height()), width_(cfg.feature_width()) {
    dense = register_module("dense", nn::Linear(cfg.action_input_dim(), channels_ * height_ * width_));
}

torch::Tensor ActionEncoderImpl::forward(const torch::Tensor& action) {
    return dense->forward(action).view({-1, channels_, height_, width_});
}

ConvLstmCellImpl::ConvLstmCellImpl(std::int64_t in_channels, std::int64_t hidden_channels, std::int64_t kernel)
    : in_channels_(in_channels), hidden_(hidden_channels) {
    gates = register_module(
        "gates", nn::Conv2d(nn::Conv2dOptions(in_channels + hidden_channels, 4 * hidden_channels, kernel)
                                .padding(kernel / 2)));
}

LstmState ConvLstmCellImpl::forward(const torch::Tensor& x, const LstmState& state) {
    const auto g = gates->forward(torch::cat({x, state.h}, 1)).chunk(4, 1);
    const auto c = torch::sigmoid(g[1]) * state.c + torch::sigmoid(g[0]) * torch::tanh(g[3]);
    const auto h = torch::sigmoid(g[2]) * torch::tanh(c);
    return {h, c};
}

GaussianHeadImpl::GaussianHeadImpl(const ModelConfig& cfg)
    : latent_(cfg.latent_channels), height_(cfg.feature_height()), width_(cfg.feature_width()) {
    dense = register_module(
        "dense", nn::Linear(cfg.hidden_channels * height_ * width_, 2 * latent_ * height_ * width_));
}

std::pair<torch::Tensor, torch::Tensor> GaussianHeadImpl::forward(const torch::Tensor& h) {
    const auto out = dense->forward(h.flatten(1)).view({-1, 2 * latent_, height_, width_});
    auto parts = out.split(latent_, 1);
    return {parts[0], parts[1]};
}

LatentNetworkImpl::LatentNetworkImpl(const ModelConfig& cfg, int lstm_layers) {
    encoder = register_module("encoder", VggEncoder(cfg));
    action_encoder = register_module("action_encoder", ActionEncoder(cfg));
    std::int64_t in = cfg.feature_channels + cfg.action_code_channels;
    for (int i = 0; i < lstm_layers; ++i) {
        lstm->push_back(ConvLstmCell(in, cfg.hidden_channels, cfg.kernel_size));
        in = cfg.hidden_channels;
    }
    register_module("lstm", lstm);
    head = register_module("head", GaussianHead(cfg));
}

LatentParams LatentNetworkImpl::step(const torch::Tensor& features, const torch::Tensor& action_code,
                                     std::vector<LstmState>& state) {
    return params(recur(features, action_code, state));
}

torch::Tensor LatentNetworkImpl::recur(const torch::Tensor& features, const torch::Tensor& action_code,
                                       std::vector<LstmState>& state) {
    return run_cells(lstm, torch::cat({features, action_code}, 1), state);
}

LatentParams LatentNetworkImpl::params(const torch::Tensor& h) {
    auto [mu, raw_logvar] = head->forward(h);
    auto logvar = raw_logvar.clamp(-kLogVarBound, kLogVarBound);
    auto sigma = torch::exp(0.5 * logvar);
    return {mu, logvar, sigma};
}

PredictionNetworkImpl::PredictionNetworkImpl(const ModelConfig& cfg) {
    encoder = register_module("encoder", VggEncoder(cfg));
    action_encoder = register_module("action_encoder", ActionEncoder(cfg));
    std::int64_t in = cfg.feature_channels + cfg.action_code_channels + cfg.latent_channels;
    for (int i = 0; i < cfg.predictor_lstm_layers; ++i) {
        lstm->push_back(ConvLstmCell(in, cfg.hidden_channels, cfg.kernel_size));
        in = cfg.hidden_channels;
    }
    register_module("lstm", lstm);
    decoder = register_module("decoder", VggDecoder(cfg, cfg.hidden_channels));
}

std::int64_t PredictionNetworkImpl::trunk_input_channels() const {
    return (*lstm)[0]->as<ConvLstmCellImpl>()->in_channels();
}

torch::Tensor PredictionNetworkImpl::step(const torch::Tensor& features, const torch::Tensor& action_code,
                                          const torch::Tensor& z, std::vector<LstmState>& state) {
    return run_cells(lstm, torch::cat({features, action_code, z}, 1), state);
}

VpGoImpl::VpGoImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    prediction = register_module("prediction", PredictionNetwork(cfg_));
    posterior = register_module("posterior", LatentNetwork(cfg_, cfg_.posterior_lstm_layers));
    prior = register_module("prior", LatentNetwork(cfg_, cfg_.prior_lstm_layers));
}

RecurrentState VpGoImpl::initial_state(std::int64_t batch) const {
    const auto opts = torch::TensorOptions().dtype(parameters().front().scalar_type());
    RecurrentState s;
    s.predictor = zero_states(prediction->lstm, batch, cfg_, opts);
    s.prior = zero_states(prior->lstm, batch, cfg_, opts);
    s.posterior = zero_states(posterior->lstm, batch, cfg_, opts);
    return s;
}

std::vector<torch::Tensor> VpGoImpl::group_parameters(ParameterGroup g) const {
    switch (g) {
        case ParameterGroup::Prediction: return prediction->parameters();
        case ParameterGroup::Posterior: return posterior->parameters();
        case ParameterGroup::Prior: return prior->parameters();
    }
    return {};
}

std::int64_t VpGoImpl::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

VpGo build_model(const ModelConfig& cfg) {
    cfg.validate();
    torch::manual_seed(cfg.seed);
    return VpGo(cfg);
}

std::string_view group_name(ParameterGroup g) {
    switch (g) {
        case ParameterGroup::Prediction: return "prediction";
        case ParameterGroup::Posterior: return "posterior";
        case ParameterGroup::Prior: return "prior";
    }
    return "?";
}

std::optional<ParameterGroup> group_of(std::string_view name) {
    for (auto g : {ParameterGroup::Prediction, ParameterGroup::Posterior, ParameterGroup::Prior}) {
        const auto prefix = group_name(g);
        if (name.size() > prefix.size() && name.substr(0, prefix.size()) == prefix && name[prefix.size()] == '.') {
            return g;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

torch::Tensor to_channels_first(const torch::Tensor& frames) {
    if (frames.dim() == 3) return frames.permute({2, 0, 1}).unsqueeze(0);
    return frames.permute({0, 3, 1, 2});
}

torch::Tensor to_channels_last(const torch::Tensor& frames) { return frames.permute({0, 2, 3, 1}); }

torch::Tensor encode_frame(VpGo& model, const torch::Tensor& frame, ParameterGroup network_id) {
    check_frames(frame, model->config());
    const auto x = to_channels_first(frame).to(dtype_of(model));
    switch (network_id) {
        case ParameterGroup::Prediction: return model->prediction->encoder->forward(x);
        case ParameterGroup::Posterior: return model->posterior->encoder->forward(x);
        case ParameterGroup::Prior: return model->prior->encoder->forward(x);
    }
    return {};
}

torch::Tensor encode_action(VpGo& model, const torch::Tensor& action, const std::optional<torch::Tensor>& state,
                            ParameterGroup network_id) {
    const auto& cfg = model->config();
    auto a = action.dim() == 1 ? action.unsqueeze(0) : action;
    if (a.dim() != 2 || a.size(1) != cfg.n_a) {
        throw ValidationError("action must have " + std::to_string(cfg.n_a) + " components");
    }
    if (state.has_value() && !cfg.use_state) throw ValidationError("robot state given but use_state is off");
    if (!state.has_value() && cfg.use_state) throw ValidationError("use_state is on but no robot state given");
    if (state) {
        auto s = state->dim() == 1 ? state->unsqueeze(0) : *state;
        if (s.dim() != 2 || s.size(1) != cfg.n_s || s.size(0) != a.size(0)) {
            throw ValidationError("state must have " + std::to_string(cfg.n_s) + " components per action");
        }
        a = torch::cat({a, s}, 1);
    }
    a = a.to(dtype_of(model));
    switch (network_id) {
        case ParameterGroup::Prediction: return model->prediction->action_encoder->forward(a);
        case ParameterGroup::Posterior: return model->posterior->action_encoder->forward(a);
        case ParameterGroup::Prior: return model->prior->action_encoder->forward(a);
    }
    return {};
}

torch::Tensor sample_latent(const torch::Tensor& mu, const torch::Tensor& sigma, const torch::Tensor& noise) {
    if (!mu.sizes().equals(sigma.sizes()) || !mu.sizes().equals(noise.sizes())) {
        throw ValidationError("mu, sigma and noise must share a shape");
    }
    return mu + sigma * noise;
}

LatentParams prior_step(VpGo& model, const torch::Tensor& prev_features, const torch::Tensor& action_code,
                        RecurrentState& state) {
    if (!state.initialized()) throw ValidationError("uninitialized recurrence");
    const auto& cfg = model->config();
    check_grid(prev_features, cfg.feature_channels, cfg, "features");
    check_grid(action_code, cfg.action_code_channels, cfg, "action code");
    return network(model, ParameterGroup::Prior).step(prev_features, action_code, state.prior);
}

LatentParams posterior_step(VpGo& model, const torch::Tensor& current_features, const torch::Tensor& action_code,
                            RecurrentState& state) {
    if (!state.initialized()) throw ValidationError("uninitialized recurrence");
    const auto& cfg = model->config();
    check_grid(current_features, cfg.feature_channels, cfg, "features");
    check_grid(action_code, cfg.action_code_channels, cfg, "action code");
    return network(model, ParameterGroup::Posterior).step(current_features, action_code, state.posterior);
}

torch::Tensor predict_step(VpGo& model, const torch::Tensor& prev_features, const torch::Tensor& action_code,
                           const torch::Tensor& z, RecurrentState& state) {
    if (!state.initialized()) throw ValidationError("uninitialized recurrence");
    const auto& cfg = model->config();
    check_grid(prev_features, cfg.feature_channels, cfg, "features");
    check_grid(action_code, cfg.action_code_channels, cfg, "action code");
    check_grid(z, cfg.latent_channels, cfg, "z");
    const auto h = model->prediction->step(prev_features, action_code, z, state.predictor);
    return to_channels_last(model->prediction->decoder->forward(h));
}

// ---------------------------------------------------------------------------

namespace {

// (B, T-1, n_a) actions with the robot state at the source frame appended.
torch::Tensor action_inputs(const ModelConfig& cfg, const torch::Tensor& actions, const torch::Tensor& states) {
    if (!cfg.use_state) return actions;
    if (!states.defined()) throw ValidationError("use_state is on but the batch has no robot state");
    using torch::indexing::Slice;
    return torch::cat({actions, states.index({Slice(), Slice(0, actions.size(1))})}, 2);
}

}  // namespace

TeacherForcedOutput teacher_forced(VpGo& model, const torch::Tensor& frames, const torch::Tensor& actions,
                                   const torch::Tensor& states, const torch::Tensor& noise) {
    const auto& cfg = model->config();
    if (frames.dim() != 5) throw ValidationError("frames must be (B, T, H, W, 3)");
    const auto B = frames.size(0);
    const auto T = frames.size(1);
    if (T < 2) throw ValidationError("need at least 2 frames");
    check_frames(frames[0], cfg);
    if (actions.dim() != 3 || actions.size(0) != B || actions.size(1) != T - 1 || actions.size(2) != cfg.n_a) {
        throw ValidationError("actions must be (B, T-1, n_a), got " + c10::str(actions.sizes()));
    }
    const std::vector<std::int64_t> noise_shape{T - 1, B, cfg.latent_channels, cfg.feature_height(),
                                                cfg.feature_width()};
    if (!noise.sizes().equals(noise_shape)) {
        throw ValidationError("noise must be " + c10::str(c10::IntArrayRef(noise_shape)) + ", got " +
                              c10::str(noise.sizes()));
    }
    const auto dtype = dtype_of(model);
    using torch::indexing::Slice;

    const auto x = frames.to(dtype);
    const auto prev = to_channels_first(x.index({Slice(), Slice(0, T - 1)}).flatten(0, 1));
    const auto cur = to_channels_first(x.index({Slice(), Slice(1, T)}).flatten(0, 1));
    auto grid = [&](const torch::Tensor& t) { return t.view({B, T - 1, t.size(1), t.size(2), t.size(3)}); };

    const auto f_pred = grid(model->prediction->encoder->forward(prev));
    const auto f_prior = grid(model->prior->encoder->forward(prev));
    const auto f_post = grid(model->posterior->encoder->forward(cur));

    const auto a_in = action_inputs(cfg, actions.to(dtype), states.defined() ? states.to(dtype) : states)
                          .flatten(0, 1);
    const auto a_pred = grid(model->prediction->action_encoder->forward(a_in));
    const auto a_prior = grid(model->prior->action_encoder->forward(a_in));
    const auto a_post = grid(model->posterior->action_encoder->forward(a_in));

    auto state = model->initial_state(B);
    const auto eps = noise.to(dtype);

    std::vector<torch::Tensor> h_post;
    std::vector<torch::Tensor> h_prior;
    for (std::int64_t t = 0; t < T - 1; ++t) {
        h_post.push_back(model->posterior->recur(f_post.select(1, t), a_post.select(1, t), state.posterior));
        h_prior.push_back(model->prior->recur(f_prior.select(1, t), a_prior.select(1, t), state.prior));
    }
    // Heads run once over all steps as (T-1) * B maps.
    const auto q_all = model->posterior->params(torch::cat(h_post));
    const auto p_all = model->prior->params(torch::cat(h_prior));
    const auto z_all = sample_latent(q_all.mu, q_all.sigma, eps.flatten(0, 1)).chunk(T - 1);

    TeacherForcedOutput out;
    std::vector<torch::Tensor> hidden;
    for (std::int64_t t = 0; t < T - 1; ++t) {
        hidden.push_back(model->prediction->step(f_pred.select(1, t), a_pred.select(1, t), z_all[t], state.predictor));
        const auto rows = torch::indexing::Slice(t * B, (t + 1) * B);
        out.posterior.push_back({q_all.mu.index({rows}), q_all.logvar.index({rows}), q_all.sigma.index({rows})});
        out.prior.push_back({p_all.mu.index({rows}), p_all.logvar.index({rows}), p_all.sigma.index({rows})});
    }
    const auto decoded = model->prediction->decoder->forward(torch::stack(hidden, 1).flatten(0, 1));
    out.predicted = to_channels_last(decoded).reshape({B, T - 1, cfg.frame_height, cfg.frame_width, 3});
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

torch::Tensor rollout(VpGo& model, const RolloutRequest& req, const RolloutObserver& observer) {
    const auto& cfg = model->config();
    check_frames(req.context, cfg);
    if (req.context.dim() != 4) throw ValidationError("context must be (c, H, W, 3)");
    const auto c = req.context.size(0);
    if (c < 1) throw ValidationError("need at least one context frame");
    if (req.actions.dim() != 2 || req.actions.size(1) != cfg.n_a) throw ValidationError("actions must be (L, n_a)");
    const auto T = req.actions.size(0) + 1;
    const auto horizon = T - c;
    if (horizon < 1) throw ValidationError("len(actions) must equal c + horizon - 1 with horizon >= 1");
    if (req.n_samples < 1) throw ValidationError("n_samples must be >= 1");
    if (req.mode == RolloutMode::Posterior) {
        if (!req.targets.defined()) throw ValidationError("posterior rollout needs ground-truth targets");
        check_frames(req.targets, cfg);
        if (req.targets.size(0) != horizon) throw ValidationError("targets must cover the horizon");
    }
    if (cfg.use_state && (!req.states.defined() || req.states.size(0) < T - 1)) {
        throw ValidationError("use_state is on but the request has no robot state");
    }

    torch::NoGradGuard no_grad;
    EvalGuard eval(model);
    const auto dtype = dtype_of(model);
    const auto opts = torch::TensorOptions().dtype(dtype);
    using torch::indexing::Slice;

    const auto context = req.context.to(dtype);
    const auto targets = req.targets.defined() ? req.targets.to(dtype) : torch::Tensor();
    auto a_in = req.actions.to(dtype);
    if (cfg.use_state) a_in = torch::cat({a_in, req.states.index({Slice(0, T - 1)}).to(dtype)}, 1);

    auto out = torch::empty({req.n_samples, horizon, cfg.frame_height, cfg.frame_width, 3}, opts);
    const auto chunk = std::max<std::int64_t>(1, req.chunk);

    for (std::int64_t k0 = 0; k0 < req.n_samples; k0 += chunk) {
        const auto n = std::min(chunk, req.n_samples - k0);
        std::vector<torch::Tensor> noise_per_sample;
        for (std::int64_t k = k0; k < k0 + n; ++k) {
            auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(req.seed, static_cast<std::uint64_t>(k)));
            noise_per_sample.push_back(
                torch::randn({T - 1, cfg.latent_channels, cfg.feature_height(), cfg.feature_width()}, gen, opts));
        }
        const auto noise = torch::stack(noise_per_sample, 1);  // (T-1, n, ...)

        auto state = model->initial_state(n);
        torch::Tensor previous;
        for (std::int64_t t = 1; t < T; ++t) {
            const auto input = t - 1 < c ? context[t - 1].unsqueeze(0).expand({n, -1, -1, -1}) : previous;
            if (observer) observer(t, input);
            const auto x = to_channels_first(input.contiguous());
            const auto a = a_in[t - 1].unsqueeze(0).expand({n, -1}).contiguous();

            // Frame t is observed during context warm-up and, in posterior
            // mode, throughout; otherwise z comes from the prior.
            const bool observed = t < c || req.mode == RolloutMode::Posterior;
            auto p = model->prior->step(model->prior->encoder->forward(x), model->prior->action_encoder->forward(a),
                                        state.prior);
            torch::Tensor z;
            if (observed) {
                const auto truth = t < c ? context[t] : targets[t - c];
                const auto xt = to_channels_first(truth.unsqueeze(0).expand({n, -1, -1, -1}).contiguous());
                auto q = model->posterior->step(model->posterior->encoder->forward(xt),
                                                model->posterior->action_encoder->forward(a), state.posterior);
                z = sample_latent(q.mu, q.sigma, noise[t - 1]);
            } else {
                z = sample_latent(p.mu, p.sigma, noise[t - 1]);
            }
            const auto h = model->prediction->step(model->prediction->encoder->forward(x),
                                                   model->prediction->action_encoder->forward(a), z, state.predictor);
            previous = to_channels_last(model->prediction->decoder->forward(h));
            if (t >= c) out.index_put_({Slice(k0, k0 + n), t - c}, previous);
        }
    }
    return out;
}

}  // namespace vpgo::model
