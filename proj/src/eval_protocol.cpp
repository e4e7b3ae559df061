#include "vpgo/eval_protocol.hpp"

#include "vpgo/errors.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

namespace vpgo::eval {

std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::Psnr: return "psnr";
        case Metric::Ssim: return "ssim";
        case Metric::Lpips: return "lpips";
    }
    return "?";
}

bool higher_is_better(Metric m) { return m != Metric::Lpips; }

void EvalConfig::validate() const {
    if (context < 1) throw ConfigError("context", "must be >= 1");
    if (horizon < 1) throw ConfigError("horizon", "must be >= 1");
    if (n_samples < 1) throw ConfigError("n_samples", "must be >= 1");
    if (fvd_batch < 1) throw ConfigError("fvd_batch", "must be >= 1");
    if (window_offset < 0) throw ConfigError("window_offset", "must be >= 0");
    if (fvd_groups < 1) throw ConfigError("fvd_groups", "must be >= 1");
    if (chunk < 1) throw ConfigError("chunk", "must be >= 1");
}

Json to_json(const EvalConfig& c) {
    return Json{{"context", c.context},         {"horizon", c.horizon},   {"n_samples", c.n_samples},
                {"fvd_batch", c.fvd_batch},     {"window_offset", c.window_offset},
                {"seed", c.seed},               {"feature_seed", c.feature_seed},
                {"fvd_groups", c.fvd_groups},   {"chunk", c.chunk}};
}

ModelPredictor::ModelPredictor(model::VpGo model, std::int64_t chunk) : model_(std::move(model)), chunk_(chunk) {}

torch::Tensor ModelPredictor::sample(const data::TrainingWindow& w, std::int64_t n, std::uint64_t seed) const {
    model::RolloutRequest req;
    req.context = w.context;
    req.actions = w.actions;
    if (model_->config().use_state) req.states = w.states;
    req.mode = model::RolloutMode::Prior;
    req.n_samples = n;
    req.seed = seed;
    req.chunk = chunk_;
    return model::rollout(model_, req);
}

torch::Tensor OraclePredictor::sample(const data::TrainingWindow& w, std::int64_t n, std::uint64_t) const {
    return w.targets.unsqueeze(0).expand({n, -1, -1, -1, -1}).contiguous();
}

Summary summarize(const std::vector<double>& v) {
    Summary s;
    s.count = static_cast<std::int64_t>(v.size());
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    }
    return s;
}

Extractors default_extractors(const EvalConfig& cfg) {
    return {std::make_shared<metrics::RandomProjectionImageFeatures>(cfg.feature_seed),
            std::make_shared<metrics::RandomProjectionVideoFeatures>(
                model::derive_seed(cfg.feature_seed, 1), cfg.horizon)};
}

namespace {

// Per-frame scores of every sample of one example.
struct ExampleFrames {
    std::array<torch::Tensor, 3> scores;  // (n, horizon) float64 per metric
    std::vector<data::Stage> stages;
};

using SampleSink = std::function<void(const data::TrainingWindow&, const torch::Tensor& samples)>;

std::vector<ExampleFrames> score_examples(const Predictor& predictor, const std::vector<data::Trajectory>& testset,
                                          const EvalConfig& cfg, const metrics::ImageFeatureExtractor& image_fe,
                                          const SampleSink& sink) {
    if (testset.empty()) throw ValidationError("test set is empty");
    std::vector<ExampleFrames> out;
    out.reserve(testset.size());
    for (std::size_t i = 0; i < testset.size(); ++i) {
        const auto w = data::sample_window(testset[i], cfg.context, cfg.horizon, cfg.window_offset);
        const auto samples = predictor.sample(w, cfg.n_samples, model::derive_seed(cfg.seed, i));
        const std::vector<std::int64_t> expected{cfg.n_samples, cfg.horizon, w.targets.size(1), w.targets.size(2), 3};
        if (!samples.sizes().equals(expected)) {
            throw ValidationError("predictor returned " + c10::str(samples.sizes()) + ", expected " +
                                  c10::str(c10::IntArrayRef(expected)));
        }
        const auto n = cfg.n_samples;
        const auto h = cfg.horizon;
        const auto pred = samples.to(torch::kDouble).reshape({n * h, w.targets.size(1), w.targets.size(2), 3});
        const auto truth = w.targets.to(torch::kDouble).unsqueeze(0).expand({n, -1, -1, -1, -1}).reshape(pred.sizes());
        ExampleFrames ef;
        ef.scores[0] = metrics::psnr_batch(pred, truth).view({n, h});
        ef.scores[1] = metrics::ssim_batch(pred, truth).view({n, h});
        ef.scores[2] = metrics::lpips_batch(pred, truth, image_fe).view({n, h});
        ef.stages = w.target_stages;
        if (sink) sink(w, samples);
        out.push_back(std::move(ef));
    }
    return out;
}

std::vector<double> to_vector(const torch::Tensor& t) {
    const auto c = t.to(torch::kDouble).contiguous();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// Best and average over samples of per-sample scores (n).
std::pair<double, double> best_and_average(Metric m, const torch::Tensor& per_sample) {
    const double best = higher_is_better(m) ? per_sample.max().item<double>() : per_sample.min().item<double>();
    return {best, per_sample.mean().item<double>()};
}

std::vector<StageRow> stage_rows(const std::vector<ExampleFrames>& frames) {
    using data::Stage;
    const std::array<Stage, 3> stages{Stage::Approaching, Stage::Grasping, Stage::Moving};
    std::vector<StageRow> rows;

    // [stage][metric] -> per-example best / average
    std::array<std::array<std::vector<double>, 3>, 3> best{}, avg{};
    std::array<std::vector<double>, 3> mean_best{}, mean_avg{}, final_best{}, final_avg{};

    for (const auto& ef : frames) {
        std::array<double, 3> sum_best{}, sum_avg{};
        int present = 0;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            std::vector<std::int64_t> idx;
            for (std::size_t t = 0; t < ef.stages.size(); ++t) {
                if (ef.stages[t] == stages[s]) idx.push_back(static_cast<std::int64_t>(t));
            }
            if (idx.empty()) continue;
            ++present;
            const auto index = torch::tensor(idx, torch::kLong);
            for (auto m : kMetrics) {
                const auto mi = static_cast<std::size_t>(m);
                const auto [b, a] = best_and_average(m, ef.scores[mi].index_select(1, index).mean(1));
                best[s][mi].push_back(b);
                avg[s][mi].push_back(a);
                sum_best[mi] += b;
                sum_avg[mi] += a;
            }
        }
        for (auto m : kMetrics) {
            const auto mi = static_cast<std::size_t>(m);
            if (present > 0) {
                mean_best[mi].push_back(sum_best[mi] / present);
                mean_avg[mi].push_back(sum_avg[mi] / present);
            }
            const auto [b, a] = best_and_average(m, ef.scores[mi].select(1, -1));
            final_best[mi].push_back(b);
            final_avg[mi].push_back(a);
        }
    }

    auto make_row = [](std::string name, const std::array<std::vector<double>, 3>& b,
                       const std::array<std::vector<double>, 3>& a) {
        StageRow row;
        row.name = std::move(name);
        row.empty = b[0].empty();
        for (std::size_t mi = 0; mi < 3; ++mi) row.metrics[mi] = {summarize(b[mi]), summarize(a[mi])};
        return row;
    };
    for (std::size_t s = 0; s < stages.size(); ++s) {
        std::string name(data::to_string(stages[s]));
        rows.push_back(make_row(name, best[s], avg[s]));
    }
    rows.push_back(make_row("Average", mean_best, mean_avg));
    rows.push_back(make_row("FinalGoal", final_best, final_avg));
    return rows;
}

bool all_labeled(const std::vector<data::Trajectory>& testset) {
    return std::all_of(testset.begin(), testset.end(), [](const auto& t) { return t.has_stage_labels(); });
}

// Feeds clips to a video extractor in batches of exactly batch_size.
class FeatureBatcher {
public:
    FeatureBatcher(const metrics::VideoFeatureExtractor& fe, std::int64_t batch) : fe_(fe), batch_(batch) {}

    void push(const torch::Tensor& clips) {
        for (std::int64_t i = 0; i < clips.size(0); ++i) {
            pending_.push_back(clips[i].to(torch::kFloat));
            if (static_cast<std::int64_t>(pending_.size()) == batch_) run();
        }
    }

    torch::Tensor finish() {
        if (!pending_.empty()) run();
        if (rows_.empty()) return torch::zeros({0, fe_.dim()}, torch::kDouble);
        return torch::cat(rows_);
    }

private:
    void run() {
        const auto n = static_cast<std::int64_t>(pending_.size());
        auto x = torch::stack(pending_);
        if (n < batch_) {
            auto shape = x.sizes().vec();
            shape[0] = batch_ - n;
            x = torch::cat({x, torch::zeros(shape, x.options())});
        }
        rows_.push_back(fe_.features(x).narrow(0, 0, n).to(torch::kDouble));
        pending_.clear();
    }

    const metrics::VideoFeatureExtractor& fe_;
    std::int64_t batch_;
    std::vector<torch::Tensor> pending_;
    std::vector<torch::Tensor> rows_;
};

Eigen::MatrixXd eigen_rows(const torch::Tensor& t) {
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto c = t.contiguous();
    return Eigen::Map<const RowMatrix>(c.data_ptr<double>(), c.size(0), c.size(1));
}

}  // namespace

MetricReport evaluate_protocol(const Predictor& predictor, const std::vector<data::Trajectory>& testset,
                               const EvalConfig& cfg, const Extractors& ex) {
    cfg.validate();
    if (!ex.image || !ex.video) throw ValidationError("evaluation needs image and video feature extractors");
    FeatureBatcher real(*ex.video, cfg.fvd_batch);
    FeatureBatcher generated(*ex.video, cfg.fvd_batch);
    const auto frames = score_examples(predictor, testset, cfg, *ex.image,
                                       [&](const data::TrainingWindow& w, const torch::Tensor& samples) {
                                           real.push(w.targets.unsqueeze(0));
                                           generated.push(samples);
                                       });

    MetricReport r;
    r.protocol = cfg;
    r.examples = static_cast<std::int64_t>(frames.size());

    std::array<std::vector<double>, 3> best{}, avg{};
    const auto h = cfg.horizon;
    std::vector<std::array<double, 3>> t_best(static_cast<std::size_t>(h)), t_avg(static_cast<std::size_t>(h));
    for (const auto& ef : frames) {
        ExampleScores es;
        for (auto m : kMetrics) {
            const auto mi = static_cast<std::size_t>(m);
            const auto per_sample = ef.scores[mi].mean(1);
            const auto [b, a] = best_and_average(m, per_sample);
            es.per_sample[mi] = to_vector(per_sample);
            es.best[mi] = b;
            es.average[mi] = a;
            best[mi].push_back(b);
            avg[mi].push_back(a);
            const auto winner = higher_is_better(m) ? per_sample.argmax().item<std::int64_t>()
                                                    : per_sample.argmin().item<std::int64_t>();
            const auto tb = to_vector(ef.scores[mi][winner]);
            const auto ta = to_vector(ef.scores[mi].mean(0));
            for (std::int64_t t = 0; t < h; ++t) {
                t_best[static_cast<std::size_t>(t)][mi] += tb[static_cast<std::size_t>(t)];
                t_avg[static_cast<std::size_t>(t)][mi] += ta[static_cast<std::size_t>(t)];
            }
        }
        r.per_example.push_back(std::move(es));
    }
    for (auto m : kMetrics) {
        const auto mi = static_cast<std::size_t>(m);
        r.metrics[mi] = {summarize(best[mi]), summarize(avg[mi])};
    }
    const auto count = static_cast<double>(frames.size());
    for (std::int64_t t = 0; t < h; ++t) {
        TimestepRow row;
        row.t = t + 1;
        for (std::size_t mi = 0; mi < 3; ++mi) {
            row.best[mi] = t_best[static_cast<std::size_t>(t)][mi] / count;
            row.average[mi] = t_avg[static_cast<std::size_t>(t)][mi] / count;
        }
        r.per_timestep.push_back(row);
    }

    const auto real_feats = eigen_rows(real.finish());
    const auto gen_feats = eigen_rows(generated.finish());
    if (real_feats.rows() < 2) throw ValidationError("FVD needs at least 2 test examples");
    r.fvd = metrics::fvd_from_features(real_feats, gen_feats, cfg.fvd_batch);
    const auto groups = std::min(cfg.n_samples, cfg.fvd_groups);
    if (groups > 1) {
        for (std::int64_t g = 0; g < groups; ++g) {
            std::vector<Eigen::Index> rows;
            for (Eigen::Index i = 0; i < gen_feats.rows(); ++i) {
                if ((i % cfg.n_samples) % groups == g) rows.push_back(i);
            }
            const Eigen::MatrixXd subset = gen_feats(rows, Eigen::placeholders::all);
            r.fvd_groups.push_back(metrics::fvd_from_features(real_feats, subset, cfg.fvd_batch));
        }
        r.fvd_stderr = summarize(r.fvd_groups).stderr_;
    }

    if (all_labeled(testset)) r.stages = stage_rows(frames);
    return r;
}

MetricReport evaluate_protocol(const Predictor& predictor, const std::vector<data::Trajectory>& testset,
                               const EvalConfig& cfg) {
    return evaluate_protocol(predictor, testset, cfg, default_extractors(cfg));
}

std::vector<StageRow> stage_metrics(const Predictor& predictor, const std::vector<data::Trajectory>& testset,
                                    const EvalConfig& cfg) {
    cfg.validate();
    if (!all_labeled(testset)) throw ValidationError("stage metrics need stage labels on every trajectory");
    const auto ex = default_extractors(cfg);
    return stage_rows(score_examples(predictor, testset, cfg, *ex.image, {}));
}

// ---------------------------------------------------------------------------

namespace {

Json summary_json(const Summary& s) { return Json{{"mean", s.mean}, {"stderr", s.stderr_}, {"count", s.count}}; }

Json scores_json(const std::array<MetricScores, 3>& scores) {
    Json j = Json::object();
    for (auto m : kMetrics) {
        const auto& s = scores[static_cast<std::size_t>(m)];
        j[std::string(to_string(m))] = Json{{"best", summary_json(s.best)}, {"average", summary_json(s.average)}};
    }
    return j;
}

}  // namespace

Json to_json(const MetricReport& r) {
    Json j;
    j["schema_version"] = kReportSchemaVersion;
    j["protocol"] = to_json(r.protocol);
    j["examples"] = r.examples;
    j["ssim_display_scale"] = 100;
    j["metrics"] = scores_json(r.metrics);
    j["fvd"] = Json{{"value", r.fvd}, {"stderr", r.fvd_stderr}, {"groups", r.fvd_groups}};
    Json stages = Json::array();
    for (const auto& row : r.stages) {
        stages.push_back(Json{{"name", row.name}, {"empty", row.empty}, {"metrics", scores_json(row.metrics)}});
    }
    j["stages"] = stages;
    Json steps = Json::array();
    for (const auto& row : r.per_timestep) {
        Json s{{"t", row.t}};
        for (auto m : kMetrics) {
            const auto mi = static_cast<std::size_t>(m);
            s[std::string(to_string(m))] = Json{{"best", row.best[mi]}, {"average", row.average[mi]}};
        }
        steps.push_back(s);
    }
    j["per_timestep"] = steps;
    Json examples = Json::array();
    for (const auto& e : r.per_example) {
        Json x = Json::object();
        for (auto m : kMetrics) {
            const auto mi = static_cast<std::size_t>(m);
            x[std::string(to_string(m))] = Json{{"best", e.best[mi]}, {"average", e.average[mi]}};
        }
        examples.push_back(x);
    }
    j["per_example"] = examples;
    return j;
}

void write_report(const MetricReport& report, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw WriteError("cannot write report " + path.string());
    out << to_json(report).dump(2) << '\n';
    if (!out) throw WriteError("failed writing report " + path.string());
}

void write_timestep_table(const MetricReport& report, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw WriteError("cannot write table " + path.string());
    out << "t";
    for (auto m : kMetrics) out << ',' << to_string(m) << "_best," << to_string(m) << "_average";
    out << '\n';
    out.precision(10);
    for (const auto& row : report.per_timestep) {
        out << row.t;
        for (std::size_t mi = 0; mi < 3; ++mi) out << ',' << row.best[mi] << ',' << row.average[mi];
        out << '\n';
    }
}

}  // namespace vpgo::eval
