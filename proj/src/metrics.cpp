#include "vpgo/metrics.hpp"

#include "vpgo/errors.hpp"
#include "hdf5_io.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cmath>

namespace vpgo::metrics {

namespace {

void check_pair(const torch::Tensor& x, const torch::Tensor& y) {
    if (!x.sizes().equals(y.sizes())) {
        throw ValidationError("metric inputs differ in shape: " + c10::str(x.sizes()) + " vs " + c10::str(y.sizes()));
    }
}

torch::Tensor as_image_batch(const torch::Tensor& t) {
    if (t.dim() == 3) return t.unsqueeze(0);
    if (t.dim() != 4 || t.size(3) != 3) throw ValidationError("expected (N, H, W, 3) images, got " + c10::str(t.sizes()));
    return t;
}

torch::Tensor gaussian_window(int size, double sigma) {
    auto g = torch::arange(size, torch::kDouble) - (size - 1) / 2.0;
    g = torch::exp(-(g * g) / (2.0 * sigma * sigma));
    return g / g.sum();
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
    const auto c = t.to(torch::kDouble).contiguous();
    return Eigen::Map<const RowMatrix>(c.data_ptr<double>(), c.size(0), c.size(1));
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& a, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    if (eig.info() != Eigen::Success) throw NumericalError(std::string("eigendecomposition failed for ") + what);
    Eigen::VectorXd lambda = eig.eigenvalues();
    const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
    if (lambda.minCoeff() < -1e-8 * scale) throw ValidationError(std::string(what) + " is not positive semi-definite");
    lambda = lambda.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

void check_covariance(const Eigen::MatrixXd& cov, Eigen::Index dim, const char* what) {
    if (cov.rows() != cov.cols()) throw ValidationError(std::string(what) + " is not square");
    if (cov.rows() != dim) throw ValidationError(std::string(what) + " does not match the mean dimension");
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
        throw ValidationError(std::string(what) + " is not symmetric");
    }
}

}  // namespace

torch::Tensor psnr_batch(const torch::Tensor& x, const torch::Tensor& y, double max_val, double cap) {
    check_pair(x, y);
    if (x.dim() < 1 || x.numel() == 0) throw ValidationError("psnr needs non-empty inputs");
    const auto d = (x.to(torch::kDouble) - y.to(torch::kDouble)).flatten(1);
    const auto mse = (d * d).mean(1);
    auto out = 10.0 * torch::log10((max_val * max_val) / mse);
    return torch::where(mse > 0, out.clamp_max(cap), torch::full_like(out, cap));
}

double psnr(const torch::Tensor& x, const torch::Tensor& y, double max_val, double cap) {
    check_pair(x, y);
    return psnr_batch(x.reshape({1, -1}), y.reshape({1, -1}), max_val, cap).item<double>();
}

torch::Tensor ssim_batch(const torch::Tensor& x_in, const torch::Tensor& y_in, const SsimOptions& o) {
    check_pair(x_in, y_in);
    const auto x4 = as_image_batch(x_in);
    const auto y4 = as_image_batch(y_in);
    const auto n = x4.size(0);
    const auto h = x4.size(1);
    const auto w = x4.size(2);
    if (h < o.window || w < o.window) throw ValidationError("image is smaller than the SSIM window");

    auto planes = [&](const torch::Tensor& t) { return t.to(torch::kDouble).permute({0, 3, 1, 2}).reshape({n * 3, 1, h, w}); };
    const auto x = planes(x4);
    const auto y = planes(y4);
    const auto g = gaussian_window(o.window, o.sigma);
    const auto gv = g.view({1, 1, o.window, 1});
    const auto gh = g.view({1, 1, 1, o.window});
    auto filt = [&](const torch::Tensor& t) { return torch::conv2d(torch::conv2d(t, gv), gh); };

    const double c1 = std::pow(o.k1 * o.dynamic_range, 2);
    const double c2 = std::pow(o.k2 * o.dynamic_range, 2);
    const auto mx = filt(x);
    const auto my = filt(y);
    const auto sxx = filt(x * x) - mx * mx;
    const auto syy = filt(y * y) - my * my;
    const auto sxy = filt(x * y) - mx * my;
    const auto map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.reshape({n, -1}).mean(1);
}

double ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opts) {
    if (x.dim() != 3) throw ValidationError("ssim expects a single (H, W, 3) image; use ssim_batch");
    return ssim_batch(x, y, opts).item<double>();
}

// ---------------------------------------------------------------------------

RandomProjectionImageFeatures::RandomProjectionImageFeatures(std::uint64_t seed, std::int64_t height,
                                                             std::int64_t width)
    : height_(height), width_(width) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const std::int64_t patches[] = {4, 8, 16};
    const std::int64_t channels[] = {16, 32, 64};
    for (int i = 0; i < 3; ++i) {
        const auto fan_in = 3 * patches[i] * patches[i];
        auto weight = torch::randn({channels[i], fan_in}, gen, torch::kDouble) / std::sqrt(static_cast<double>(fan_in));
        layers_.push_back({patches[i], weight});
    }
}

RandomProjectionImageFeatures::RandomProjectionImageFeatures(std::vector<Layer> layers, std::int64_t height,
                                                             std::int64_t width)
    : layers_(std::move(layers)), height_(height), width_(width) {
    for (const auto& l : layers_) {
        if (l.patch < 1 || height % l.patch != 0 || width % l.patch != 0) {
            throw ValidationError("patch size " + std::to_string(l.patch) + " does not tile the image");
        }
        if (l.weight.dim() != 2 || l.weight.size(1) != 3 * l.patch * l.patch) {
            throw ValidationError("projection weight must be (C, 3 * patch^2)");
        }
    }
}

std::vector<torch::Tensor> RandomProjectionImageFeatures::layers(const torch::Tensor& images) const {
    const auto x = as_image_batch(images).to(torch::kDouble);
    if (x.size(1) != height_ || x.size(2) != width_) {
        throw ValidationError("feature extractor expects " + std::to_string(height_) + "x" + std::to_string(width_) +
                              " images, got " + c10::str(images.sizes()));
    }
    const auto n = x.size(0);
    std::vector<torch::Tensor> out;
    for (const auto& l : layers_) {
        const auto p = l.patch;
        const auto h = height_ / p;
        const auto w = width_ / p;
        const auto patches = x.reshape({n, h, p, w, p, 3}).permute({0, 1, 3, 2, 4, 5}).reshape({n, h, w, 3 * p * p});
        out.push_back(torch::matmul(patches, l.weight.to(torch::kDouble).t()).permute({0, 3, 1, 2}));
    }
    return out;
}

std::vector<double> RandomProjectionImageFeatures::default_layer_weights() const {
    return std::vector<double>(layers_.size(), 1.0);
}

void RandomProjectionImageFeatures::save(const std::filesystem::path& path) const {
    h5::File file(path.string(), h5::Mode::Truncate);
    file.set_attr("height", height_);
    file.set_attr("width", width_);
    file.set_attr("layers", static_cast<std::int64_t>(layers_.size()));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto wt = layers_[i].weight.to(torch::kDouble).contiguous();
        file.set_attr("patch_" + std::to_string(i), layers_[i].patch);
        file.write("/weight_" + std::to_string(i), h5::Scalar::F64,
                   {static_cast<std::uint64_t>(wt.size(0)), static_cast<std::uint64_t>(wt.size(1))}, wt.data_ptr());
    }
}

RandomProjectionImageFeatures RandomProjectionImageFeatures::load(const std::filesystem::path& path) {
    h5::File file(path.string(), h5::Mode::Read);
    const auto height = file.attr_int("height");
    const auto width = file.attr_int("width");
    const auto count = file.attr_int("layers");
    if (!height || !width || !count) throw LoadError(path.string() + ": not a feature extractor file");
    std::vector<Layer> layers;
    for (std::int64_t i = 0; i < *count; ++i) {
        const auto patch = file.attr_int("patch_" + std::to_string(i));
        const auto name = "/weight_" + std::to_string(i);
        if (!patch || !file.exists(name)) throw LoadError(path.string() + ": missing layer " + std::to_string(i));
        const auto info = file.info(name);
        if (info.dims.size() != 2) throw LoadError(path.string() + ": " + name + " must be 2-D");
        auto wt = torch::empty({static_cast<std::int64_t>(info.dims[0]), static_cast<std::int64_t>(info.dims[1])},
                               torch::kDouble);
        file.read(name, h5::Scalar::F64, wt.data_ptr());
        layers.push_back({*patch, wt});
    }
    return RandomProjectionImageFeatures(std::move(layers), *height, *width);
}

RandomProjectionVideoFeatures::RandomProjectionVideoFeatures(std::uint64_t seed, std::int64_t frames,
                                                             std::int64_t dim, std::int64_t height,
                                                             std::int64_t width, std::int64_t pool)
    : frames_(frames), height_(height), width_(width), pool_(pool) {
    if (frames < 1 || dim < 1 || pool < 1 || height % pool != 0 || width % pool != 0) {
        throw ValidationError("invalid video feature extractor geometry");
    }
    const auto fan_in = frames * 3 * (height / pool) * (width / pool);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    weight_ = torch::randn({dim, fan_in}, gen, torch::kDouble) / std::sqrt(static_cast<double>(fan_in));
}

torch::Tensor RandomProjectionVideoFeatures::features(const torch::Tensor& clips) const {
    if (clips.dim() != 5 || clips.size(1) != frames_ || clips.size(2) != height_ || clips.size(3) != width_ ||
        clips.size(4) != 3) {
        throw ValidationError("video extractor expects (N, " + std::to_string(frames_) + ", " +
                              std::to_string(height_) + ", " + std::to_string(width_) + ", 3) clips, got " +
                              c10::str(clips.sizes()));
    }
    const auto n = clips.size(0);
    auto x = clips.to(torch::kDouble).reshape({n * frames_, height_, width_, 3}).permute({0, 3, 1, 2});
    x = torch::avg_pool2d(x, pool_);
    return torch::matmul(x.reshape({n, -1}), weight_.t());
}

// ---------------------------------------------------------------------------

torch::Tensor lpips_batch(const torch::Tensor& x, const torch::Tensor& y, const ImageFeatureExtractor& fe,
                          const std::vector<double>& layer_weights) {
    check_pair(x, y);
    const auto fx = fe.layers(x);
    const auto fy = fe.layers(y);
    const auto weights = layer_weights.empty() ? fe.default_layer_weights() : layer_weights;
    if (weights.size() != fx.size()) throw ValidationError("need one LPIPS weight per extractor layer");
    auto normalize = [](const torch::Tensor& f) {
        return f / (f.pow(2).sum(1, true).sqrt() + kLpipsEps);
    };
    auto total = torch::zeros({fx.front().size(0)}, torch::kDouble);
    for (std::size_t l = 0; l < fx.size(); ++l) {
        const auto d = (normalize(fx[l]) - normalize(fy[l])).pow(2).sum(1);  // (N, h, w)
        total = total + weights[l] * d.flatten(1).mean(1);
    }
    return total;
}

double lpips_distance(const torch::Tensor& x, const torch::Tensor& y, const ImageFeatureExtractor& fe,
                      const std::vector<double>& layer_weights) {
    return lpips_batch(x, y, fe, layer_weights).sum().item<double>();
}

// ---------------------------------------------------------------------------

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2) {
    if (mu1.size() != mu2.size() || mu1.size() == 0) throw ValidationError("means differ in dimension");
    check_covariance(cov1, mu1.size(), "cov1");
    check_covariance(cov2, mu1.size(), "cov2");
    const Eigen::MatrixXd s1 = sqrt_psd(cov1, "cov1");
    sqrt_psd(cov2, "cov2");  // PSD check
    Eigen::MatrixXd m = s1 * cov2 * s1;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in frechet_distance");
    const Eigen::VectorXd lambda = eig.eigenvalues();
    const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
    if (lambda.minCoeff() < -1e-8 * scale) throw NumericalError("covariance product has a negative eigenvalue");
    const double tr_sqrt = lambda.cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d);
}

MomentAccumulator::MomentAccumulator(std::int64_t dim)
    : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

void MomentAccumulator::add(const Eigen::MatrixXd& features, const std::vector<bool>& mask) {
    if (features.cols() != mean_.size()) throw ValidationError("feature dimension mismatch");
    if (static_cast<Eigen::Index>(mask.size()) != features.rows()) throw ValidationError("mask length mismatch");
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) rows.push_back(i);
    }
    if (rows.empty()) return;
    const Eigen::MatrixXd kept = features(rows, Eigen::placeholders::all);
    const auto nb = static_cast<double>(kept.rows());
    const Eigen::VectorXd mb = kept.colwise().mean().transpose();
    const Eigen::MatrixXd centered = kept.rowwise() - mb.transpose();
    const Eigen::MatrixXd m2b = centered.transpose() * centered;
    const auto na = static_cast<double>(n_);
    const double total = na + nb;
    const Eigen::VectorXd delta = mb - mean_;
    mean_ += delta * (nb / total);
    m2_ += m2b + delta * delta.transpose() * (na * nb / total);
    n_ += static_cast<std::int64_t>(kept.rows());
}

void MomentAccumulator::add(const Eigen::MatrixXd& features) {
    add(features, std::vector<bool>(static_cast<std::size_t>(features.rows()), true));
}

GaussianMoments MomentAccumulator::finish() const {
    if (n_ < 2) throw ValidationError("need at least 2 samples to estimate a covariance");
    GaussianMoments g;
    g.mean = mean_;
    g.cov = m2_ / static_cast<double>(n_);
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    g.count = n_;
    return g;
}

Eigen::MatrixXd extract_video_features(const torch::Tensor& clips, const VideoFeatureExtractor& fe,
                                       std::int64_t batch_size) {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (clips.dim() != 5) throw ValidationError("clips must be (N, T, H, W, 3)");
    const auto n = clips.size(0);
    Eigen::MatrixXd out(n, fe.dim());
    using torch::indexing::Slice;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const auto count = std::min(batch_size, n - start);
        auto batch = clips.index({Slice(start, start + count)}).to(torch::kDouble);
        if (count < batch_size) {
            auto shape = batch.sizes().vec();
            shape[0] = batch_size - count;
            batch = torch::cat({batch, torch::zeros(shape, batch.options())});
        }
        const auto feats = to_eigen(fe.features(batch));
        out.middleRows(start, count) = feats.topRows(count);
    }
    return out;
}

GaussianMoments batched_moments(const Eigen::MatrixXd& features, std::int64_t batch_size) {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    MomentAccumulator acc(features.cols());
    for (Eigen::Index start = 0; start < features.rows(); start += batch_size) {
        const auto count = std::min<Eigen::Index>(batch_size, features.rows() - start);
        acc.add(features.middleRows(start, count));
    }
    return acc.finish();
}

double fvd_from_features(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated, std::int64_t batch_size) {
    if (real.rows() < 2 || generated.rows() < 2) throw ValidationError("FVD needs at least 2 clips per side");
    const auto a = batched_moments(real, batch_size);
    const auto b = batched_moments(generated, batch_size);
    return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

double fvd(const torch::Tensor& real_clips, const torch::Tensor& generated_clips, const VideoFeatureExtractor& fe,
           std::int64_t batch_size) {
    if (real_clips.dim() != 5 || generated_clips.dim() != 5) throw ValidationError("clips must be (N, T, H, W, 3)");
    if (real_clips.size(0) < 2 || generated_clips.size(0) < 2) {
        throw ValidationError("FVD needs at least 2 clips per side");
    }
    return fvd_from_features(extract_video_features(real_clips, fe, batch_size),
                             extract_video_features(generated_clips, fe, batch_size), batch_size);
}

}  // namespace vpgo::metrics
