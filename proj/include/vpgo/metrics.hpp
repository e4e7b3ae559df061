#pragma once

// Image and video quality metrics. Images are (H, W, 3) or batched
// (N, H, W, 3) tensors in [0, 1]; clips are (N, T, H, W, 3).

#include <Eigen/Dense>
#include <torch/types.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

namespace vpgo::metrics {

inline constexpr double kPsnrCap = 100.0;

double psnr(const torch::Tensor& x, const torch::Tensor& y, double max_val = 1.0, double cap = kPsnrCap);
// Per image of a (N, H, W, 3) batch, as float64 (N).
torch::Tensor psnr_batch(const torch::Tensor& x, const torch::Tensor& y, double max_val = 1.0,
                         double cap = kPsnrCap);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

// Mean local SSIM over channels and valid window positions.
double ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opts = {});
torch::Tensor ssim_batch(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opts = {});

// ---------------------------------------------------------------------------
// Feature extractors.

class ImageFeatureExtractor {
public:
    virtual ~ImageFeatureExtractor() = default;
    // (N, H, W, 3) -> one (N, C_l, h_l, w_l) float64 map per layer.
    virtual std::vector<torch::Tensor> layers(const torch::Tensor& images) const = 0;
    virtual std::vector<double> default_layer_weights() const = 0;
};

class VideoFeatureExtractor {
public:
    virtual ~VideoFeatureExtractor() = default;
    // (N, T, H, W, 3) -> (N, D) float64
    virtual torch::Tensor features(const torch::Tensor& clips) const = 0;
    virtual std::int64_t dim() const = 0;
};

// Linear patch embeddings: layer l maps each non-overlapping p_l x p_l patch
// to C_l channels with a fixed matrix (C_l, 3 * p_l * p_l), patch vectors
// flattened in (dy, dx, channel) order.
class RandomProjectionImageFeatures : public ImageFeatureExtractor {
public:
    struct Layer {
        std::int64_t patch;
        torch::Tensor weight;  // (C, 3 * patch * patch) float64
    };

    // Patch sizes {4, 8, 16} with {16, 32, 64} channels, N(0, 1/fan_in) weights.
    RandomProjectionImageFeatures(std::uint64_t seed, std::int64_t height = 48, std::int64_t width = 64);
    RandomProjectionImageFeatures(std::vector<Layer> layers, std::int64_t height, std::int64_t width);

    std::vector<torch::Tensor> layers(const torch::Tensor& images) const override;
    std::vector<double> default_layer_weights() const override;
    const std::vector<Layer>& projection() const { return layers_; }

    void save(const std::filesystem::path& path) const;
    static RandomProjectionImageFeatures load(const std::filesystem::path& path);

private:
    std::vector<Layer> layers_;
    std::int64_t height_, width_;
};

// Each frame is average-pooled by `pool`, the clip is flattened and mapped
// through a fixed (D, T * 3 * H/pool * W/pool) matrix.
class RandomProjectionVideoFeatures : public VideoFeatureExtractor {
public:
    RandomProjectionVideoFeatures(std::uint64_t seed, std::int64_t frames, std::int64_t dim = 64,
                                  std::int64_t height = 48, std::int64_t width = 64, std::int64_t pool = 4);

    torch::Tensor features(const torch::Tensor& clips) const override;
    std::int64_t dim() const override { return weight_.size(0); }
    const torch::Tensor& weight() const { return weight_; }

private:
    std::int64_t frames_, height_, width_, pool_;
    torch::Tensor weight_;
};

inline constexpr double kLpipsEps = 1e-10;

// sum_l w_l * mean_{h,w} || n(f_l(x)) - n(f_l(y)) ||^2 with n() the unit
// normalization along channels (eps-guarded).
double lpips_distance(const torch::Tensor& x, const torch::Tensor& y, const ImageFeatureExtractor& fe,
                      const std::vector<double>& layer_weights = {});
torch::Tensor lpips_batch(const torch::Tensor& x, const torch::Tensor& y, const ImageFeatureExtractor& fe,
                          const std::vector<double>& layer_weights = {});

// ---------------------------------------------------------------------------

// ||mu1 - mu2||^2 + tr(cov1) + tr(cov2) - 2 tr((cov1^1/2 cov2 cov1^1/2)^1/2).
// Eigenvalues in [-1e-8 * scale, 0) are clipped to zero; below that the
// covariance is rejected as not PSD.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2);

struct GaussianMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // maximum likelihood (divides by count), so replicated sets keep their moments
    std::int64_t count = 0;
};

// Merges per-batch moments (Chan et al.) in order, batch by batch.
class MomentAccumulator {
public:
    explicit MomentAccumulator(std::int64_t dim);
    // rows of `features` whose mask entry is false are ignored
    void add(const Eigen::MatrixXd& features, const std::vector<bool>& mask);
    void add(const Eigen::MatrixXd& features);
    GaussianMoments finish() const;

private:
    std::int64_t n_ = 0;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd m2_;
};

inline constexpr std::int64_t kFvdBatch = 256;

// Runs the extractor on batches of exactly batch_size clips; the final
// partial batch is zero-padded and the padding rows are dropped.
Eigen::MatrixXd extract_video_features(const torch::Tensor& clips, const VideoFeatureExtractor& fe,
                                       std::int64_t batch_size = kFvdBatch);

// Moments accumulated over consecutive row blocks of batch_size.
GaussianMoments batched_moments(const Eigen::MatrixXd& features, std::int64_t batch_size = kFvdBatch);

double fvd_from_features(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated,
                         std::int64_t batch_size = kFvdBatch);

// Needs >= 2 clips per side.
double fvd(const torch::Tensor& real_clips, const torch::Tensor& generated_clips, const VideoFeatureExtractor& fe,
           std::int64_t batch_size = kFvdBatch);

}  // namespace vpgo::metrics
