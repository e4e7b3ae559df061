#pragma once

// Variational objective (mean l1 reconstruction + beta * KL to the learned
// prior), the teacher-forced training loop and HDF5 checkpoints.

#include "vpgo/data.hpp"
#include "vpgo/model.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace vpgo::training {

enum class LrSchedule { Constant, Cosine };

std::string_view to_string(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view name);

struct TrainConfig {
    std::int64_t context = 2;
    std::int64_t horizon = 10;
    double beta = 1e-4;
    double beta_warmup = 0.1;       // fraction of `steps` over which beta ramps up linearly
    double lr = 1e-4;
    LrSchedule lr_schedule = LrSchedule::Constant;
    double lr_final = 0.0;         // cosine schedule: final lr as a fraction of lr
    std::int64_t batch_size = 8;
    std::int64_t steps = 2000;
    std::uint64_t seed = 0;
    std::optional<double> grad_clip;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only

    void validate() const;
    double beta_at(std::int64_t step) const;
    double lr_at(std::int64_t step) const;

    bool operator==(const TrainConfig&) const = default;
};

struct LossReport {
    double recon_l1 = 0.0;
    double kl = 0.0;
    double total = 0.0;
    double beta = 0.0;
    std::vector<double> recon_per_step;  // one entry per predicted target frame
    std::vector<double> kl_per_step;
};

// Elementwise KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)).
torch::Tensor kl_elementwise(const torch::Tensor& mu_q, const torch::Tensor& sigma_q, const torch::Tensor& mu_p,
                             const torch::Tensor& sigma_p);

// Summed over all elements. Throws ValidationError for non-positive sigma.
torch::Tensor kl_diag_gaussian(const torch::Tensor& mu_q, const torch::Tensor& sigma_q, const torch::Tensor& mu_p,
                               const torch::Tensor& sigma_p);

// Differentiable loss terms.
struct ElboTerms {
    torch::Tensor total;
    torch::Tensor recon_l1;
    torch::Tensor kl;
    torch::Tensor recon_per_step;  // (n)
    torch::Tensor kl_per_step;     // (n)
    double beta = 0.0;

    LossReport report() const;
};

// predicted/targets: (B, n, H, W, 3); posterior/prior: n per-step params.
// recon_l1 is the mean absolute error over every pixel of every step; kl is
// the sum over steps of the per-example KL (summed over latent elements),
// averaged over the batch.
ElboTerms elbo_loss(const torch::Tensor& predicted, const torch::Tensor& targets,
                    std::span<const model::LatentParams> posterior, std::span<const model::LatentParams> prior,
                    double beta);

// Teacher-forced pass over a window batch, scored on frames c..T-1.
ElboTerms window_loss(model::VpGo& model, const data::WindowBatch& batch, double beta, const torch::Tensor& noise);

// Standard normal noise (T-1, B, latent, h, w) for a training step.
torch::Tensor training_noise(const model::VpGo& model, std::int64_t batch, std::int64_t length, std::uint64_t seed,
                             std::int64_t step);

// Window batch for a training step. Depends only on (dataset, cfg.seed, step).
data::WindowBatch sample_batch(const std::vector<data::Trajectory>& dataset, const TrainConfig& cfg,
                               std::int64_t step);

class Trainer {
public:
    Trainer(model::VpGo model, TrainConfig cfg);

    // One Adam update. Randomness is derived from (cfg.seed, step_count()).
    // Throws NumericalError on a non-finite loss.
    LossReport step(const data::WindowBatch& batch);

    std::int64_t step_count() const { return step_; }
    void set_step_count(std::int64_t step) { step_ = step; }

    model::VpGo& model() { return model_; }
    torch::optim::Adam& optimizer() { return *optimizer_; }
    const TrainConfig& config() const { return cfg_; }

private:
    model::VpGo model_;
    TrainConfig cfg_;
    std::unique_ptr<torch::optim::Adam> optimizer_;
    std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: parameters and buffers under /params and /buffers keyed by
// hierarchical name, optional Adam moments under /optimizer, model and train
// configs as JSON attributes, plus format_version and step.

inline constexpr std::int64_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, model::VpGo& model, const TrainConfig& train,
                     std::int64_t step, torch::optim::Adam* optimizer = nullptr);

struct Checkpoint {
    model::ModelConfig model_config;
    TrainConfig train_config;
    std::int64_t step = 0;
    bool has_optimizer = false;
};

Checkpoint read_checkpoint_header(const std::filesystem::path& path);

// Builds a model from the stored config and loads its tensors.
model::VpGo load_model(const std::filesystem::path& path);

// Loads tensors into an existing model; its config must equal the stored one.
void load_parameters(const std::filesystem::path& path, model::VpGo& model);

void load_optimizer_state(const std::filesystem::path& path, model::VpGo& model, torch::optim::Adam& optimizer);

// FNV-1a over parameter and buffer names and bytes.
std::uint64_t parameter_checksum(model::VpGo& model);

// ---------------------------------------------------------------------------

struct FitOptions {
    std::filesystem::path out_dir;                  // empty: write nothing
    std::optional<std::filesystem::path> resume;    // continue a run from its checkpoint
    std::optional<std::filesystem::path> init;      // donor parameters; fresh optimizer, step 0
    std::function<void(std::int64_t step, const LossReport&)> on_step;
};

struct FitResult {
    std::int64_t first_step = 0;
    std::int64_t last_step = 0;                     // exclusive
    std::vector<LossReport> history;
    std::optional<std::uint64_t> start_checksum;    // parameters before the first update
    std::filesystem::path checkpoint;               // final checkpoint, when out_dir is set
};

// Runs steps [start, cfg.steps). Writes out_dir/loss.csv and
// out_dir/checkpoint.h5 (plus checkpoint_<step>.h5 every checkpoint_every).
FitResult fit(model::VpGo& model, const std::vector<data::Trajectory>& dataset, const TrainConfig& cfg,
              const FitOptions& options = {});

}  // namespace vpgo::training
