#pragma once

// Best-of-N / average-of-N scoring of sampled rollouts, FVD over all samples,
// per-stage breakdowns and report serialization.

#include "vpgo/data.hpp"
#include "vpgo/metrics.hpp"
#include "vpgo/model.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vpgo::eval {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

enum class Metric { Psnr = 0, Ssim = 1, Lpips = 2 };
inline constexpr std::array<Metric, 3> kMetrics{Metric::Psnr, Metric::Ssim, Metric::Lpips};
std::string_view to_string(Metric m);
bool higher_is_better(Metric m);

struct EvalConfig {
    std::int64_t context = 2;
    std::int64_t horizon = 10;
    std::int64_t n_samples = 100;
    std::int64_t fvd_batch = metrics::kFvdBatch;
    std::int64_t window_offset = 0;   // each test trajectory contributes the window at this offset
    std::uint64_t seed = 0;
    std::uint64_t feature_seed = 0;   // random-projection extractors
    std::int64_t fvd_groups = 10;     // FVD stderr: samples split by index into min(n_samples, fvd_groups) groups
    std::int64_t chunk = 32;

    void validate() const;
};

Json to_json(const EvalConfig& cfg);

// Produces n sampled futures (n, horizon, H, W, 3) in [0, 1] for a window.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual torch::Tensor sample(const data::TrainingWindow& window, std::int64_t n_samples,
                                 std::uint64_t seed) const = 0;
};

// Prior-mode rollouts of a trained model.
class ModelPredictor : public Predictor {
public:
    explicit ModelPredictor(model::VpGo model, std::int64_t chunk = 32);
    torch::Tensor sample(const data::TrainingWindow& window, std::int64_t n_samples, std::uint64_t seed) const override;

private:
    mutable model::VpGo model_;
    std::int64_t chunk_;
};

// Returns the ground truth for every sample.
class OraclePredictor : public Predictor {
public:
    torch::Tensor sample(const data::TrainingWindow& window, std::int64_t n_samples, std::uint64_t seed) const override;
};

struct Summary {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::int64_t count = 0;
};

Summary summarize(const std::vector<double>& values);

struct MetricScores {
    Summary best;
    Summary average;
};

// Scores of one test example.
struct ExampleScores {
    // per metric: score of each sample (mean over its predicted frames)
    std::array<std::vector<double>, 3> per_sample;
    std::array<double, 3> best{};
    std::array<double, 3> average{};
};

struct StageRow {
    std::string name;  // Approaching, Grasping, Moving, Average, FinalGoal
    bool empty = true;
    std::array<MetricScores, 3> metrics{};
};

struct TimestepRow {
    std::int64_t t = 0;  // 1-based index into the horizon
    std::array<double, 3> best{};
    std::array<double, 3> average{};
};

struct MetricReport {
    EvalConfig protocol;
    std::int64_t examples = 0;
    std::array<MetricScores, 3> metrics{};
    double fvd = 0.0;             // all samples against all real clips
    double fvd_stderr = 0.0;      // across sample-index groups
    std::vector<double> fvd_groups;
    std::vector<ExampleScores> per_example;
    std::vector<StageRow> stages;  // empty when the test set is unlabeled
    std::vector<TimestepRow> per_timestep;

    const MetricScores& operator[](Metric m) const { return metrics[static_cast<std::size_t>(m)]; }
};

struct Extractors {
    std::shared_ptr<const metrics::ImageFeatureExtractor> image;
    std::shared_ptr<const metrics::VideoFeatureExtractor> video;
};

// Random-projection stand-ins seeded from cfg.feature_seed.
Extractors default_extractors(const EvalConfig& cfg);

MetricReport evaluate_protocol(const Predictor& predictor, const std::vector<data::Trajectory>& testset,
                               const EvalConfig& cfg, const Extractors& extractors);
MetricReport evaluate_protocol(const Predictor& predictor, const std::vector<data::Trajectory>& testset,
                               const EvalConfig& cfg);

// Throws ValidationError if any trajectory lacks stage labels.
std::vector<StageRow> stage_metrics(const Predictor& predictor, const std::vector<data::Trajectory>& testset,
                                    const EvalConfig& cfg);

Json to_json(const MetricReport& report);
void write_report(const MetricReport& report, const std::filesystem::path& path);
// t,<metric>_best,<metric>_average,... one row per horizon step
void write_timestep_table(const MetricReport& report, const std::filesystem::path& path);

}  // namespace vpgo::eval
