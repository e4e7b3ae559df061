#pragma once

// Stochastic action-conditioned video prediction network with a learned prior.
//
// Three networks with disjoint parameters:
//   prediction (theta): frame encoder, action encoder, conv-LSTM stack, decoder
//   posterior  (phi):   frame encoder, action encoder, conv-LSTM, Gaussian head
//   prior      (psi):   frame encoder, action encoder, conv-LSTM, Gaussian head
//
// Frames cross the public API as (..., H, W, 3) tensors in [0, 1]; the
// networks run channels-first internally.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vpgo::model {

enum class EncoderVariant { Vgg16Conv3_3, Vgg16Conv4_3, Vgg19Conv4_4 };
enum class Norm { Batch, Group, None };

std::string_view to_string(EncoderVariant v);
EncoderVariant parse_encoder_variant(std::string_view name);
std::string_view to_string(Norm n);
Norm parse_norm(std::string_view name);

struct ModelConfig {
    EncoderVariant encoder_variant = EncoderVariant::Vgg19Conv4_4;
    std::int64_t frame_height = 48;
    std::int64_t frame_width = 64;
    std::int64_t feature_stride = 16;      // frame size / feature grid size
    std::int64_t base_channels = 64;       // VGG stage widths: base * {1, 2, 4, 8}
    std::int64_t feature_channels = 512;
    std::int64_t action_code_channels = 2;
    std::int64_t latent_channels = 16;
    std::int64_t hidden_channels = 512;    // conv-LSTM width
    std::int64_t kernel_size = 3;          // conv-LSTM kernel
    int predictor_lstm_layers = 2;
    int prior_lstm_layers = 1;
    int posterior_lstm_layers = 1;
    bool use_state = false;
    std::int64_t n_a = 4;
    std::int64_t n_s = 4;
    double laplace_scale = 1.0;
    Norm norm = Norm::Batch;
    std::uint64_t seed = 0;               // parameter initialization

    std::int64_t feature_height() const { return frame_height / feature_stride; }
    std::int64_t feature_width() const { return frame_width / feature_stride; }
    std::int64_t action_input_dim() const { return n_a + (use_state ? n_s : 0); }

    // Throws ConfigError naming the offending field.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// A VGG stage: `convs` 3x3 convolutions at `channels` width.
struct VggStage {
    std::int64_t channels;
    int convs;
};
std::vector<VggStage> vgg_stages(EncoderVariant v, std::int64_t base_channels);

// ---------------------------------------------------------------------------

class VggEncoderImpl : public torch::nn::Module {
public:
    explicit VggEncoderImpl(const ModelConfig& cfg);
    // (N, 3, H, W) -> (N, feature_channels, H / stride, W / stride)
    torch::Tensor forward(const torch::Tensor& x);

    std::int64_t conv_output_channels() const { return conv_out_channels_; }
    bool has_projection() const { return !projection_.is_empty(); }

private:
    struct Layer {
        torch::nn::Conv2d conv{nullptr};
        torch::nn::AnyModule norm;
        bool pool_after = false;
    };
    std::vector<Layer> layers_;
    int extra_pools_ = 0;
    std::int64_t conv_out_channels_ = 0;
    torch::nn::Conv2d projection_{nullptr};
};
TORCH_MODULE(VggEncoder);

class VggDecoderImpl : public torch::nn::Module {
public:
    VggDecoderImpl(const ModelConfig& cfg, std::int64_t in_channels);
    // (N, in_channels, h, w) -> (N, 3, H, W) in (0, 1)
    torch::Tensor forward(const torch::Tensor& x);

private:
    struct Layer {
        torch::nn::Conv2d conv{nullptr};
        torch::nn::AnyModule norm;
        bool upsample_before = false;
        bool activate = true;
    };
    torch::nn::Conv2d projection_{nullptr};
    int extra_upsamples_ = 0;
    std::vector<Layer> layers_;
};
TORCH_MODULE(VggDecoder);

// Dense map from the action (optionally concatenated with robot state) to a
// small spatial code that is stacked onto the frame features.
class ActionEncoderImpl : public torch::nn::Module {
public:
    explicit ActionEncoderImpl(const ModelConfig& cfg);
    // (N, n_a [+ n_s]) -> (N, action_code_channels, h, w)
    torch::Tensor forward(const torch::Tensor& action);

    torch::nn::Linear dense{nullptr};

private:
    std::int64_t channels_, height_, width_;
};
TORCH_MODULE(ActionEncoder);

struct LstmState {
    torch::Tensor h;
    torch::Tensor c;
};

class ConvLstmCellImpl : public torch::nn::Module {
public:
    ConvLstmCellImpl(std::int64_t in_channels, std::int64_t hidden_channels, std::int64_t kernel);
    LstmState forward(const torch::Tensor& x, const LstmState& state);

    std::int64_t in_channels() const { return in_channels_; }
    std::int64_t hidden_channels() const { return hidden_; }

    torch::nn::Conv2d gates{nullptr};

private:
    std::int64_t in_channels_, hidden_;
};
TORCH_MODULE(ConvLstmCell);

// Dense map from the LSTM output to (mu, log-variance) grids.
class GaussianHeadImpl : public torch::nn::Module {
public:
    explicit GaussianHeadImpl(const ModelConfig& cfg);
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& h);

    torch::nn::Linear dense{nullptr};

private:
    std::int64_t latent_, height_, width_;
};
TORCH_MODULE(GaussianHead);

// ---------------------------------------------------------------------------

// sigma = exp(logvar / 2), logvar clamped so sigma stays in [e^-10, e^10].
inline constexpr double kLogVarBound = 20.0;

struct LatentParams {
    torch::Tensor mu;
    torch::Tensor logvar;
    torch::Tensor sigma;
};

struct LatentSample {
    torch::Tensor mu;
    torch::Tensor sigma;
    torch::Tensor z;
};

class LatentNetworkImpl : public torch::nn::Module {
public:
    LatentNetworkImpl(const ModelConfig& cfg, int lstm_layers);
    LatentParams step(const torch::Tensor& features, const torch::Tensor& action_code,
                      std::vector<LstmState>& state);
    // step() split in two: the recurrence, then the head on any batch of
    // hidden maps.
    torch::Tensor recur(const torch::Tensor& features, const torch::Tensor& action_code,
                        std::vector<LstmState>& state);
    LatentParams params(const torch::Tensor& h);

    VggEncoder encoder{nullptr};
    ActionEncoder action_encoder{nullptr};
    torch::nn::ModuleList lstm;
    GaussianHead head{nullptr};
};
TORCH_MODULE(LatentNetwork);

class PredictionNetworkImpl : public torch::nn::Module {
public:
    explicit PredictionNetworkImpl(const ModelConfig& cfg);
    // Runs the conv-LSTM stack on [features | action code | z]; returns the
    // top hidden map (decode separately so decoding can be batched).
    torch::Tensor step(const torch::Tensor& features, const torch::Tensor& action_code, const torch::Tensor& z,
                       std::vector<LstmState>& state);

    std::int64_t trunk_input_channels() const;

    VggEncoder encoder{nullptr};
    ActionEncoder action_encoder{nullptr};
    torch::nn::ModuleList lstm;
    VggDecoder decoder{nullptr};
};
TORCH_MODULE(PredictionNetwork);

struct RecurrentState {
    std::vector<LstmState> predictor;
    std::vector<LstmState> prior;
    std::vector<LstmState> posterior;

    bool initialized() const { return !predictor.empty() && !prior.empty() && !posterior.empty(); }
};

enum class ParameterGroup { Prediction, Posterior, Prior };

class VpGoImpl : public torch::nn::Module {
public:
    explicit VpGoImpl(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    RecurrentState initial_state(std::int64_t batch) const;

    std::vector<torch::Tensor> group_parameters(ParameterGroup g) const;
    std::int64_t parameter_count() const;

    PredictionNetwork prediction{nullptr};
    LatentNetwork posterior{nullptr};
    LatentNetwork prior{nullptr};

private:
    ModelConfig cfg_;
};
TORCH_MODULE(VpGo);

// Builds with parameters drawn from cfg.seed (reseeds torch's global RNG).
VpGo build_model(const ModelConfig& cfg);

std::string_view group_name(ParameterGroup g);
// Group owning a hierarchical parameter name such as "prior.head.dense.weight".
std::optional<ParameterGroup> group_of(std::string_view parameter_name);

// ---------------------------------------------------------------------------
// Step-level operations. Frames are (H, W, 3) or (N, H, W, 3); feature maps,
// latents and action codes are channels-first (N, C, h, w).

torch::Tensor to_channels_first(const torch::Tensor& frames);
torch::Tensor to_channels_last(const torch::Tensor& frames);

torch::Tensor encode_frame(VpGo& model, const torch::Tensor& frame,
                           ParameterGroup network = ParameterGroup::Prediction);

// Without use_state, passing a state throws ValidationError; with use_state,
// omitting it does too.
torch::Tensor encode_action(VpGo& model, const torch::Tensor& action,
                            const std::optional<torch::Tensor>& state = std::nullopt,
                            ParameterGroup network = ParameterGroup::Prediction);

// z = mu + sigma * noise
torch::Tensor sample_latent(const torch::Tensor& mu, const torch::Tensor& sigma, const torch::Tensor& noise);

LatentParams prior_step(VpGo& model, const torch::Tensor& prev_features, const torch::Tensor& action_code,
                        RecurrentState& state);
LatentParams posterior_step(VpGo& model, const torch::Tensor& current_features, const torch::Tensor& action_code,
                            RecurrentState& state);
// Returns the predicted frame (N, H, W, 3).
torch::Tensor predict_step(VpGo& model, const torch::Tensor& prev_features, const torch::Tensor& action_code,
                           const torch::Tensor& z, RecurrentState& state);

// ---------------------------------------------------------------------------
// Sequence-level forward passes.

// Teacher-forced pass over a batch of windows, as used for training.
// frames (B, T, H, W, 3); actions (B, T-1, n_a); states (B, T, n_s) or
// undefined; noise (T-1, B, latent, h, w). Step t = 1..T-1 predicts frame t
// from ground-truth frame t-1 with z_t drawn from the posterior, which sees
// frame t. The prior runs alongside on frame t-1.
struct TeacherForcedOutput {
    torch::Tensor predicted;                 // (B, T-1, H, W, 3): frames 1..T-1
    std::vector<LatentParams> posterior;     // per step
    std::vector<LatentParams> prior;         // per step
};

TeacherForcedOutput teacher_forced(VpGo& model, const torch::Tensor& frames, const torch::Tensor& actions,
                                   const torch::Tensor& states, const torch::Tensor& noise);

enum class RolloutMode { Prior, Posterior };

struct RolloutRequest {
    torch::Tensor context;  // (c, H, W, 3)
    torch::Tensor actions;  // (c + horizon - 1, n_a)
    torch::Tensor states;   // (c + horizon, n_s) or undefined
    torch::Tensor targets;  // (horizon, H, W, 3); required in posterior mode
    RolloutMode mode = RolloutMode::Prior;
    std::int64_t n_samples = 1;
    std::uint64_t seed = 0;
    std::int64_t chunk = 32;  // samples per forward batch
};

// Records the frame handed to the prediction encoder at every step.
using RolloutObserver = std::function<void(std::int64_t step, const torch::Tensor& input_frames)>;

// Returns (n_samples, horizon, H, W, 3). While frame t is still a context
// frame, z_t comes from the posterior exactly as in training; afterwards from
// the prior (or, in posterior mode, from the posterior on the targets).
// Sample k draws its noise from a
// generator seeded by (seed, k) only, so the first n samples of a larger
// request equal a request for n samples. Runs with gradients disabled and
// the model in eval mode.
torch::Tensor rollout(VpGo& model, const RolloutRequest& request, const RolloutObserver& observer = {});

// Generator seeded from a base seed and a stream index (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace vpgo::model
