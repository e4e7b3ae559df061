// vpgo: data generation, training, evaluation, prediction and action
// decomposition from the command line.

#include "vpgo/action_hierarchy.hpp"
#include "vpgo/config.hpp"
#include "vpgo/data.hpp"
#include "vpgo/errors.hpp"
#include "vpgo/eval_protocol.hpp"
#include "vpgo/model.hpp"
#include "vpgo/training.hpp"

#include <CLI11.hpp>

#include <torch/torch.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifndef VPGO_VERSION
#define VPGO_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using vpgo::config::Json;

namespace {

struct Manifest {
    Json j;

    Manifest(const std::string& command, int argc, char** argv) {
        j["command"] = command;
        j["argv"] = std::vector<std::string>(argv, argv + argc);
        j["version"] = VPGO_VERSION;
        j["torch"] = TORCH_VERSION;
    }

    void write(const fs::path& path) const {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path);
        if (!out) throw vpgo::WriteError("cannot write manifest " + path.string());
        out << j.dump(2) << '\n';
    }
};

std::string default_data_root() {
    const char* env = std::getenv("VPGO_DATA_ROOT");
    return env ? env : "";
}

Eigen::Vector3d parse_point(const std::string& text, const std::string& flag) {
    std::stringstream ss(text);
    std::vector<double> v;
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw vpgo::ConfigError(flag, "expected x,y,z but got '" + text + "'");
        }
    }
    if (v.size() != 3) throw vpgo::ConfigError(flag, "expected 3 comma-separated numbers, got '" + text + "'");
    return {v[0], v[1], v[2]};
}

fs::path require_dir(const std::string& dir, const std::string& flag) {
    if (dir.empty()) throw vpgo::ConfigError(flag, "no directory given and VPGO_DATA_ROOT is unset");
    if (!fs::is_directory(dir)) throw vpgo::ConfigError(flag, "not a directory: " + dir);
    return dir;
}

std::string vec_str(const Eigen::VectorXd& v) {
    std::ostringstream os;
    os << std::setprecision(6) << '(';
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    os << ')';
    return os.str();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::uint64_t seed = 0;
    int n_traj = 16;
    int frames = 12;
    double grasp_success_prob = 1.0;
    std::string out_dir;
    std::string format = "pandagrasp";
    bool fixed_layout = false;
    double max_step = 0.05;
};

int run_gen_data(const GenDataArgs& a, Manifest& manifest) {
    if (a.out_dir.empty()) throw vpgo::ConfigError("--out-dir", "required");
    vpgo::data::SceneConfig scene;
    scene.grasp_success_prob = a.grasp_success_prob;
    scene.fixed_layout = a.fixed_layout;
    scene.max_step = a.max_step;
    scene.validate();
    const auto format = vpgo::data::parse_format(a.format);

    manifest.j["config"] = Json{{"seed", a.seed},
                                {"n_traj", a.n_traj},
                                {"frames", a.frames},
                                {"grasp_success_prob", a.grasp_success_prob},
                                {"format", a.format},
                                {"fixed_layout", a.fixed_layout},
                                {"max_step", a.max_step}};
    manifest.j["seed"] = a.seed;
    manifest.j["outputs"] = Json{{"out_dir", a.out_dir}};
    manifest.write(fs::path(a.out_dir) / "manifest.json");

    const auto trajectories = vpgo::data::generate_synthetic(a.seed, a.n_traj, a.frames, scene);
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        std::ostringstream name;
        name << "traj_" << std::setw(5) << std::setfill('0') << i << ".h5";
        vpgo::data::export_trajectory(trajectories[i], fs::path(a.out_dir) / name.str(), format);
    }
    std::cout << "wrote " << trajectories.size() << " trajectories to " << a.out_dir << '\n';
    return 0;
}

struct TrainArgs {
    std::string config;
    std::string data_dir = default_data_root();
    std::string init_checkpoint;
    std::string resume;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> steps;
};

int run_train(const TrainArgs& a, Manifest& manifest) {
    if (a.out_dir.empty()) throw vpgo::ConfigError("--out-dir", "required");
    auto cfg = a.config.empty() ? vpgo::config::ExperimentConfig{} : vpgo::config::load_experiment_config(a.config);
    if (a.seed) {
        cfg.model.seed = *a.seed;
        cfg.train.seed = *a.seed;
    }
    if (a.steps) cfg.train.steps = *a.steps;
    cfg.train.validate();
    const auto data_dir = require_dir(a.data_dir, "--data-dir");

    vpgo::training::FitOptions options;
    options.out_dir = a.out_dir;
    if (!a.init_checkpoint.empty()) {
        // Fine-tuning keeps the donor architecture.
        cfg.model = vpgo::training::read_checkpoint_header(a.init_checkpoint).model_config;
        options.init = a.init_checkpoint;
    }
    if (!a.resume.empty()) options.resume = a.resume;

    manifest.j["config"] = vpgo::config::to_json(cfg);
    manifest.j["seed"] = cfg.train.seed;
    manifest.j["inputs"] = Json{{"data_dir", data_dir.string()},
                                {"init_checkpoint", a.init_checkpoint},
                                {"resume", a.resume}};
    manifest.j["outputs"] = Json{{"checkpoint", (fs::path(a.out_dir) / "checkpoint.h5").string()},
                                 {"loss_log", (fs::path(a.out_dir) / "loss.csv").string()}};
    manifest.write(fs::path(a.out_dir) / "manifest.json");
    {
        std::ofstream out(fs::path(a.out_dir) / "config.json");
        out << vpgo::config::to_json(cfg).dump(2) << '\n';
    }

    const auto dataset = vpgo::data::load_directory(data_dir);
    if (dataset.empty()) throw vpgo::ValidationError("no trajectories in " + data_dir.string());

    auto model = vpgo::model::build_model(cfg.model);
    const auto start = std::chrono::steady_clock::now();
    const auto every = std::max<std::int64_t>(1, cfg.train.steps / 20);
    options.on_step = [&](std::int64_t step, const vpgo::training::LossReport& r) {
        if ((step + 1) % every == 0 || step + 1 == cfg.train.steps) {
            const std::chrono::duration<double> t = std::chrono::steady_clock::now() - start;
            std::cout << "step " << step + 1 << "/" << cfg.train.steps << " recon_l1 " << r.recon_l1 << " kl "
                      << r.kl << " total " << r.total << " (" << std::fixed << std::setprecision(1) << t.count()
                      << " s)" << std::defaultfloat << std::setprecision(6) << std::endl;
        }
    };
    const auto result = vpgo::training::fit(model, dataset, cfg.train, options);
    std::cout << "checkpoint " << result.checkpoint.string() << " (start checksum " << std::hex
              << result.start_checksum.value_or(0) << std::dec << ")\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data_dir = default_data_root();
    std::int64_t n_samples = 100;
    std::uint64_t seed = 0;
    std::string report_out;
    std::string table_out;
    std::int64_t context = 2;
    std::int64_t horizon = 10;
};

int run_eval(const EvalArgs& a, Manifest& manifest) {
    if (a.checkpoint.empty()) throw vpgo::ConfigError("--checkpoint", "required");
    if (a.report_out.empty()) throw vpgo::ConfigError("--report-out", "required");
    vpgo::eval::EvalConfig cfg;
    cfg.n_samples = a.n_samples;
    cfg.seed = a.seed;
    cfg.context = a.context;
    cfg.horizon = a.horizon;
    cfg.validate();
    const auto data_dir = require_dir(a.data_dir, "--data-dir");
    const fs::path report(a.report_out);
    const fs::path table = a.table_out.empty() ? fs::path(report).replace_extension(".timesteps.csv") : fs::path(a.table_out);

    manifest.j["config"] = vpgo::eval::to_json(cfg);
    manifest.j["seed"] = cfg.seed;
    manifest.j["inputs"] = Json{{"checkpoint", a.checkpoint}, {"data_dir", data_dir.string()}};
    manifest.j["outputs"] = Json{{"report", report.string()}, {"timestep_table", table.string()}};
    manifest.write(fs::path(report).replace_extension(".manifest.json"));

    vpgo::eval::ModelPredictor predictor(vpgo::training::load_model(a.checkpoint), cfg.chunk);
    const auto testset = vpgo::data::load_directory(data_dir);
    const auto r = vpgo::eval::evaluate_protocol(predictor, testset, cfg);
    vpgo::eval::write_report(r, report);
    vpgo::eval::write_timestep_table(r, table);
    for (auto m : vpgo::eval::kMetrics) {
        const auto& s = r[m];
        std::cout << vpgo::eval::to_string(m) << " best " << s.best.mean << " +- " << s.best.stderr_ << "  average "
                  << s.average.mean << " +- " << s.average.stderr_ << '\n';
    }
    std::cout << "fvd " << r.fvd << " +- " << r.fvd_stderr << '\n';
    return 0;
}

struct PredictArgs {
    std::string checkpoint;
    std::string trajectory;
    std::int64_t n_samples = 1;
    std::uint64_t seed = 0;
    std::int64_t context = 2;
    std::int64_t horizon = 10;
    std::int64_t offset = 0;
    std::string out_dir;
};

int run_predict(const PredictArgs& a, Manifest& manifest) {
    if (a.checkpoint.empty()) throw vpgo::ConfigError("--checkpoint", "required");
    if (a.trajectory.empty()) throw vpgo::ConfigError("--trajectory", "required");
    if (a.out_dir.empty()) throw vpgo::ConfigError("--out-dir", "required");
    if (a.n_samples < 1) throw vpgo::ConfigError("--n-samples", "must be >= 1");

    manifest.j["config"] = Json{{"n_samples", a.n_samples}, {"context", a.context}, {"horizon", a.horizon},
                                {"offset", a.offset}};
    manifest.j["seed"] = a.seed;
    manifest.j["inputs"] = Json{{"checkpoint", a.checkpoint}, {"trajectory", a.trajectory}};
    manifest.j["outputs"] = Json{{"out_dir", a.out_dir}};
    manifest.write(fs::path(a.out_dir) / "manifest.json");

    auto model = vpgo::training::load_model(a.checkpoint);
    const auto source = vpgo::data::load_trajectory(a.trajectory);
    const auto w = vpgo::data::sample_window(source, a.context, a.horizon, a.offset);
    vpgo::model::RolloutRequest req;
    req.context = w.context;
    req.actions = w.actions;
    if (model->config().use_state) req.states = w.states;
    req.n_samples = a.n_samples;
    req.seed = a.seed;
    const auto samples = vpgo::model::rollout(model, req);

    for (std::int64_t k = 0; k < a.n_samples; ++k) {
        vpgo::data::Trajectory t;
        const auto frames = torch::cat({w.context, samples[k]});
        t.frames = (frames * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
        t.actions = w.actions.to(torch::kFloat).contiguous();
        if (w.states.defined()) t.states = w.states.to(torch::kFloat).contiguous();
        t.meta = source.meta;
        t.meta.source_id = source.meta.source_id + "/prediction_" + std::to_string(k);
        t.meta.stage_labels.clear();
        std::ostringstream name;
        name << "sample_" << std::setw(4) << std::setfill('0') << k << ".h5";
        vpgo::data::export_trajectory(t, fs::path(a.out_dir) / name.str(), vpgo::data::Format::PandaGrasp);
    }
    std::cout << "wrote " << a.n_samples << " predicted trajectories to " << a.out_dir << '\n';
    return 0;
}

struct DecomposeArgs {
    std::string grasp, drop;
    double top = 0.25;
    double max_step = 0.05;
    std::string manifest;
};

int run_decompose(const DecomposeArgs& a, Manifest& manifest) {
    using namespace vpgo::actions;
    SemanticGrasp g{parse_point(a.grasp, "--grasp"), parse_point(a.drop, "--drop"), a.top};
    DiscretizeOptions opts;
    opts.max_step = a.max_step;
    if (!a.manifest.empty()) {
        manifest.j["config"] = Json{{"grasp", a.grasp}, {"drop", a.drop}, {"top", a.top}, {"max_step", a.max_step}};
        manifest.write(a.manifest);
    }
    const auto elements = decompose_semantic(g);
    double gripper = kGripperOpen;
    for (const auto& e : elements) {
        const auto moves = discretize_element(e, opts, gripper);
        std::cout << to_string(e.kind) << ' ' << vec_str(e.start) << " -> " << vec_str(e.end) << " gripper "
                  << to_string(e.gripper_command) << ", " << moves.size() << " movement(s)\n";
        for (const auto& m : moves) std::cout << "  delta " << vec_str(m.delta) << " gripper " << m.gripper << '\n';
        if (!moves.empty()) gripper = moves.back().gripper;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VP-GO stochastic action-conditioned video prediction"};
    app.require_subcommand(1);
    app.set_version_flag("--version", VPGO_VERSION);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate seeded synthetic grasp trajectories");
    gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
    gen_cmd->add_option("--n-traj", gen.n_traj, "Number of trajectories")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--frames", gen.frames, "Frames per trajectory")->check(CLI::Range(2, 100000));
    gen_cmd->add_option("--grasp-success-prob", gen.grasp_success_prob, "Probability a grasp holds")
        ->check(CLI::Range(0.0, 1.0));
    gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->required();
    gen_cmd->add_option("--format", gen.format, "pandagrasp or robonet_hdf5");
    gen_cmd->add_flag("--fixed-layout", gen.fixed_layout, "Same blocks and grasp plan in every trajectory");
    gen_cmd->add_option("--max-step", gen.max_step, "Largest movement length in meters");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train or fine-tune a model");
    train_cmd->add_option("--config", train.config, "Experiment config (JSON)");
    train_cmd->add_option("--data-dir", train.data_dir, "Training trajectories (default $VPGO_DATA_ROOT)");
    train_cmd->add_option("--init-checkpoint", train.init_checkpoint, "Start from these parameters");
    train_cmd->add_option("--resume", train.resume, "Continue the run saved in this checkpoint");
    train_cmd->add_option("--out-dir", train.out_dir, "Output directory")->required();
    train_cmd->add_option("--seed", train.seed, "Overrides model and training seeds");
    train_cmd->add_option("--steps", train.steps, "Overrides train.steps");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint with the sampling protocol");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
    eval_cmd->add_option("--data-dir", ev.data_dir, "Test trajectories (default $VPGO_DATA_ROOT)");
    eval_cmd->add_option("--n-samples", ev.n_samples, "Rollouts per example");
    eval_cmd->add_option("--seed", ev.seed, "Sampling seed");
    eval_cmd->add_option("--report-out", ev.report_out, "Report path (JSON)")->required();
    eval_cmd->add_option("--table-out", ev.table_out, "Per-timestep table (CSV)");
    eval_cmd->add_option("--context", ev.context, "Context frames");
    eval_cmd->add_option("--horizon", ev.horizon, "Predicted frames");

    PredictArgs pred;
    auto* pred_cmd = app.add_subcommand("predict", "Sample futures for one trajectory");
    pred_cmd->add_option("--checkpoint", pred.checkpoint, "Model checkpoint")->required();
    pred_cmd->add_option("--trajectory", pred.trajectory, "Trajectory file")->required();
    pred_cmd->add_option("--n-samples", pred.n_samples, "Number of futures");
    pred_cmd->add_option("--seed", pred.seed, "Sampling seed");
    pred_cmd->add_option("--context", pred.context, "Context frames");
    pred_cmd->add_option("--horizon", pred.horizon, "Predicted frames");
    pred_cmd->add_option("--offset", pred.offset, "Window start frame");
    pred_cmd->add_option("--out-dir", pred.out_dir, "Output directory")->required();

    DecomposeArgs dec;
    auto* dec_cmd = app.add_subcommand("decompose", "Print the element actions and movements of a grasp");
    dec_cmd->add_option("--grasp", dec.grasp, "Grasp point x,y,z")->required();
    dec_cmd->add_option("--drop", dec.drop, "Drop point x,y,z")->required();
    dec_cmd->add_option("--top", dec.top, "Hover height");
    dec_cmd->add_option("--max-step", dec.max_step, "Largest movement length");
    dec_cmd->add_option("--manifest", dec.manifest, "Write a run manifest here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        torch::set_num_threads(1);
        if (gen_cmd->parsed()) {
            Manifest m("gen-data", argc, argv);
            return run_gen_data(gen, m);
        }
        if (train_cmd->parsed()) {
            Manifest m("train", argc, argv);
            return run_train(train, m);
        }
        if (eval_cmd->parsed()) {
            Manifest m("eval", argc, argv);
            return run_eval(ev, m);
        }
        if (pred_cmd->parsed()) {
            Manifest m("predict", argc, argv);
            return run_predict(pred, m);
        }
        Manifest m("decompose", argc, argv);
        return run_decompose(dec, m);
    } catch (const vpgo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const vpgo::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
