#include "vpgo/data.hpp"

#include "hdf5_io.hpp"
#include "vpgo/errors.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>

namespace vpgo::data {

namespace fs = std::filesystem;

namespace {

struct Layout {
    const char* frames;
    const char* actions;
    const char* states;
};

// RoboNet-style containers nest the camera stream and the policy; PandaGrasp
// keeps everything at the root.
constexpr Layout kRoboNet{"/env/cam0_video/frames", "/policy/actions", "/env/state"};
constexpr Layout kPandaGrasp{"/frames", "/actions", "/states"};

const Layout& layout_of(Format f) { return f == Format::RoboNetHdf5 ? kRoboNet : kPandaGrasp; }

std::vector<std::uint64_t> dims_of(const torch::Tensor& t) {
    return {t.sizes().begin(), t.sizes().end()};
}

torch::Tensor read_float_matrix(const h5::File& file, const std::string& name) {
    const auto info = file.info(name);
    if (info.dims.size() != 2) throw LoadError(file.path() + ": " + name + " must be 2-D");
    auto t = torch::empty({static_cast<std::int64_t>(info.dims[0]), static_cast<std::int64_t>(info.dims[1])},
                          torch::kFloat32);
    file.read(name, h5::Scalar::F32, t.data_ptr<float>());
    return t;
}

torch::Tensor resize_frames(const torch::Tensor& frames) {
    if (frames.size(1) == kFrameHeight && frames.size(2) == kFrameWidth) return frames;
    namespace F = torch::nn::functional;
    auto x = frames.permute({0, 3, 1, 2}).to(torch::kFloat32);
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{kFrameHeight, kFrameWidth})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    return x.round().clamp(0, 255).to(torch::kUInt8).permute({0, 2, 3, 1}).contiguous();
}

std::int64_t pixel_round(double v) { return static_cast<std::int64_t>(std::lround(v)); }

}  // namespace

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::None: return "None";
        case Stage::Approaching: return "Approaching";
        case Stage::Grasping: return "Grasping";
        case Stage::Moving: return "Moving";
    }
    return "None";
}

Stage stage_of(actions::ElementKind kind) {
    using actions::ElementKind;
    switch (kind) {
        case ElementKind::ApproachTop: return Stage::Approaching;
        case ElementKind::DescendAndClose:
        case ElementKind::Lift: return Stage::Grasping;
        case ElementKind::Transport:
        case ElementKind::OpenAndDrop: return Stage::Moving;
    }
    return Stage::None;
}

void validate(const Trajectory& t) {
    if (!t.frames.defined() || t.frames.dim() != 4 || t.frames.size(3) != kFrameChannels) {
        throw ValidationError("frames must be (T, H, W, 3)");
    }
    if (t.frames.scalar_type() != torch::kUInt8) throw ValidationError("frames must be 8-bit");
    const auto T = t.frames.size(0);
    if (T < 2) throw ValidationError("trajectory needs at least 2 frames, got " + std::to_string(T));
    if (!t.actions.defined() || t.actions.dim() != 2) throw ValidationError("actions must be (T-1, n_a)");
    if (t.actions.size(0) != T - 1) {
        throw ValidationError("length mismatch: " + std::to_string(t.actions.size(0)) + " actions for " +
                              std::to_string(T) + " frames");
    }
    if (!torch::isfinite(t.actions).all().item<bool>()) throw ValidationError("actions contain non-finite values");
    if (t.states.defined()) {
        if (t.states.dim() != 2 || t.states.size(0) != T) throw ValidationError("states must be (T, n_s)");
        if (!torch::isfinite(t.states).all().item<bool>()) throw ValidationError("states contain non-finite values");
    }
    if (!t.meta.stage_labels.empty() && static_cast<std::int64_t>(t.meta.stage_labels.size()) != T) {
        throw ValidationError("stage labels must cover every frame");
    }
}

Format parse_format(std::string_view name) {
    if (name == "robonet_hdf5" || name == "robonet") return Format::RoboNetHdf5;
    if (name == "pandagrasp") return Format::PandaGrasp;
    throw ValidationError("unknown trajectory format '" + std::string(name) + "'");
}

std::string_view to_string(Format format) {
    return format == Format::RoboNetHdf5 ? "robonet_hdf5" : "pandagrasp";
}

Format detect_format(const fs::path& path) {
    h5::File file(path.string(), h5::Mode::Read);
    if (file.exists(kPandaGrasp.frames)) return Format::PandaGrasp;
    if (file.exists(kRoboNet.frames)) return Format::RoboNetHdf5;
    throw LoadError(path.string() + ": no frames dataset in either known layout");
}

Trajectory load_trajectory(const fs::path& path, Format format) {
    h5::File file(path.string(), h5::Mode::Read);
    const Layout& names = layout_of(format);

    const auto finfo = file.info(names.frames);
    if (finfo.dims.size() != 4 || finfo.dims[3] != 3) {
        throw LoadError(path.string() + ": frames must be (T, H, W, 3)");
    }
    if (finfo.type != h5::Scalar::U8) throw LoadError(path.string() + ": frames must be 8-bit");
    std::vector<std::int64_t> fdims(finfo.dims.begin(), finfo.dims.end());
    auto frames = torch::empty(fdims, torch::kUInt8);
    file.read(names.frames, h5::Scalar::U8, frames.data_ptr<std::uint8_t>());

    Trajectory t;
    t.frames = resize_frames(frames);
    t.actions = read_float_matrix(file, names.actions);
    if (file.exists(names.states)) t.states = read_float_matrix(file, names.states);

    t.meta.source_id = file.attr_string("source_id").value_or(path.stem().string());
    t.meta.robot = file.attr_string("robot").value_or("");
    t.meta.camera_id = file.attr_string("camera").value_or("");
    if (auto labels = file.attr_bytes("stage_labels")) {
        for (auto b : *labels) {
            if (b > static_cast<std::uint8_t>(Stage::Moving)) throw LoadError(path.string() + ": bad stage label");
            t.meta.stage_labels.push_back(static_cast<Stage>(b));
        }
    }

    try {
        validate(t);
    } catch (const ValidationError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    return t;
}

Trajectory load_trajectory(const fs::path& path) { return load_trajectory(path, detect_format(path)); }

void export_trajectory(const Trajectory& t, const fs::path& path, Format format) {
    validate(t);
    if (t.frames.size(1) != kFrameHeight || t.frames.size(2) != kFrameWidth) {
        throw ValidationError("export expects 48x64 frames");
    }
    const Layout& names = layout_of(format);

    h5::File file(path.string(), h5::Mode::Truncate);
    const auto frames = t.frames.contiguous();
    file.write(names.frames, h5::Scalar::U8, dims_of(frames), frames.data_ptr<std::uint8_t>());
    const auto actions = t.actions.to(torch::kFloat32).contiguous();
    file.write(names.actions, h5::Scalar::F32, dims_of(actions), actions.data_ptr<float>());
    if (t.states.defined()) {
        const auto states = t.states.to(torch::kFloat32).contiguous();
        file.write(names.states, h5::Scalar::F32, dims_of(states), states.data_ptr<float>());
    }
    file.set_attr("format_version", kFormatVersion);
    file.set_attr("source_id", t.meta.source_id);
    file.set_attr("robot", t.meta.robot);
    file.set_attr("camera", t.meta.camera_id);
    std::vector<std::uint8_t> labels;
    for (auto s : t.meta.stage_labels) labels.push_back(static_cast<std::uint8_t>(s));
    file.set_attr("stage_labels", labels);
    file.flush();
}

std::vector<Trajectory> load_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw LoadError(dir.string() + ": not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".h5") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Trajectory> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(load_trajectory(f));
    return out;
}

TrainingWindow sample_window(const Trajectory& t, std::int64_t context, std::int64_t horizon,
                             std::int64_t offset) {
    if (context < 1) throw ValidationError("context length must be >= 1");
    if (horizon < 1) throw ValidationError("horizon must be >= 1");
    const auto span = context + horizon;
    if (offset < 0 || offset + span > t.length()) {
        throw RangeError("window [" + std::to_string(offset) + ", " + std::to_string(offset + span) +
                         ") exceeds trajectory of " + std::to_string(t.length()) + " frames");
    }
    using torch::indexing::Slice;
    const auto frames = t.frames.index({Slice(offset, offset + span)}).to(torch::kFloat32).div(255.0);

    TrainingWindow w;
    w.context = frames.index({Slice(0, context)}).contiguous();
    w.targets = frames.index({Slice(context, span)}).contiguous();
    w.actions = t.actions.index({Slice(offset, offset + span - 1)}).to(torch::kFloat32).contiguous();
    if (t.has_states()) w.states = t.states.index({Slice(offset, offset + span)}).to(torch::kFloat32).contiguous();
    if (t.has_stage_labels()) {
        w.target_stages.assign(t.meta.stage_labels.begin() + offset + context,
                               t.meta.stage_labels.begin() + offset + span);
    }
    return w;
}

TrainingWindow sample_window(const Trajectory& t, std::int64_t context, std::int64_t horizon,
                             std::mt19937_64& rng) {
    const auto last = t.length() - context - horizon;
    if (last < 0) {
        throw RangeError("window of " + std::to_string(context + horizon) + " frames exceeds trajectory of " +
                         std::to_string(t.length()));
    }
    std::uniform_int_distribution<std::int64_t> pick(0, last);
    return sample_window(t, context, horizon, pick(rng));
}

WindowBatch make_batch(const std::vector<TrainingWindow>& windows) {
    if (windows.empty()) throw ValidationError("empty batch");
    WindowBatch b;
    b.context = windows.front().context_length();
    std::vector<torch::Tensor> frames, acts, states;
    const bool with_states = windows.front().states.defined();
    for (const auto& w : windows) {
        if (w.context_length() != b.context || w.horizon() != windows.front().horizon()) {
            throw ValidationError("windows in a batch must share context and horizon");
        }
        if (w.states.defined() != with_states) throw ValidationError("windows disagree on robot state");
        frames.push_back(torch::cat({w.context, w.targets}, 0));
        acts.push_back(w.actions);
        if (with_states) states.push_back(w.states);
    }
    b.frames = torch::stack(frames);
    b.actions = torch::stack(acts);
    if (with_states) b.states = torch::stack(states);
    return b;
}

// ---------------------------------------------------------------------------

void SceneConfig::validate() const {
    auto bad = [](const std::string& what) { throw ValidationError("scene config: " + what); };
    if (n_blocks < 1) bad("n_blocks must be >= 1");
    if (block_half_size < 1) bad("block_half_size must be >= 1");
    if (!(pixels_per_meter > 0.0)) bad("pixels_per_meter must be positive");
    if (!(workspace_half_x > 0.0) || !(workspace_half_y > 0.0)) bad("workspace must have positive extent");
    if (pixels_per_meter * workspace_half_x + block_half_size >= kFrameWidth / 2.0 ||
        pixels_per_meter * workspace_half_y + block_half_size >= kFrameHeight / 2.0) {
        bad("workspace does not fit in the frame");
    }
    if (!(top_height > grasp_height)) bad("top_height must exceed grasp_height");
    if (!(max_step > 0.0)) bad("max_step must be positive");
    if (!(grasp_success_prob >= 0.0 && grasp_success_prob <= 1.0)) bad("grasp_success_prob must be in [0,1]");
    if (dof < 3) bad("dof must be >= 3");
}

int to_col(double x, const SceneConfig& c) {
    return static_cast<int>(kFrameWidth / 2 + pixel_round(c.pixels_per_meter * x));
}
int to_row(double y, const SceneConfig& c) {
    return static_cast<int>(kFrameHeight / 2 + pixel_round(c.pixels_per_meter * y));
}
double to_x(int col, const SceneConfig& c) { return (col - kFrameWidth / 2) / c.pixels_per_meter; }
double to_y(int row, const SceneConfig& c) { return (row - kFrameHeight / 2) / c.pixels_per_meter; }

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette = {{
    {220, 50, 40}, {40, 170, 60}, {40, 80, 220}, {230, 200, 40}, {200, 60, 200}, {40, 200, 210},
}};
constexpr std::uint8_t kFloor = 115;
constexpr std::uint8_t kWall = 77;
constexpr int kWallWidth = 2;
constexpr std::uint8_t kMarkerOpen = 255;
constexpr std::uint8_t kMarkerClosed = 0;

void fill_square(std::uint8_t* img, int row, int col, int half, const std::array<std::uint8_t, 3>& rgb) {
    for (int r = std::max(0, row - half); r <= std::min<int>(kFrameHeight - 1, row + half); ++r) {
        for (int c = std::max(0, col - half); c <= std::min<int>(kFrameWidth - 1, col + half); ++c) {
            auto* px = img + (r * kFrameWidth + c) * 3;
            px[0] = rgb[0];
            px[1] = rgb[1];
            px[2] = rgb[2];
        }
    }
}

}  // namespace

SceneSimulator::SceneSimulator(SceneConfig config, SceneLayout layout, std::uint64_t seed)
    : config_(std::move(config)), layout_(std::move(layout)), rng_(seed), position_(layout_.gripper_start) {
    config_.validate();
    marker_row_ = to_row(position_.y(), config_);
    marker_col_ = to_col(position_.x(), config_);
}

int SceneSimulator::marker_half_size() const {
    // Higher gripper, larger marker: the only cue for vertical motion.
    const double rel = std::clamp(position_.z() / config_.top_height, 0.0, 1.0);
    return 1 + static_cast<int>(std::lround(2.0 * rel));
}

bool SceneSimulator::step(const actions::Movement& m) {
    if (m.delta.size() < 3 || !m.delta.allFinite() || !std::isfinite(m.gripper)) {
        throw ValidationError("movement must have >= 3 finite components");
    }
    const int dcol = static_cast<int>(pixel_round(config_.pixels_per_meter * m.delta(0)));
    const int drow = static_cast<int>(pixel_round(config_.pixels_per_meter * m.delta(1)));
    position_ += m.delta.head<3>();
    marker_col_ += dcol;
    marker_row_ += drow;
    if (held_) {
        layout_.blocks[*held_].col += dcol;
        layout_.blocks[*held_].row += drow;
    }

    const bool closing = gripper_ < 0.5 && m.gripper >= 0.5;
    const bool opening = gripper_ >= 0.5 && m.gripper < 0.5;
    gripper_ = m.gripper;
    if (opening) held_.reset();

    bool grasped = false;
    if (closing) {
        // One draw per close event keeps the random stream aligned across
        // trajectories that share a plan.
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double draw = u(rng_);
        if (position_.z() <= config_.grasp_height + 1e-6) {
            const int h = config_.block_half_size;
            for (std::size_t i = layout_.blocks.size(); i-- > 0;) {
                const auto& b = layout_.blocks[i];
                if (std::abs(b.row - marker_row_) <= h && std::abs(b.col - marker_col_) <= h) {
                    if (draw < config_.grasp_success_prob) {
                        held_ = i;
                        grasped = true;
                    }
                    break;
                }
            }
        }
    }
    return grasped;
}

torch::Tensor SceneSimulator::render() const {
    auto img = torch::full({kFrameHeight, kFrameWidth, 3}, kWall, torch::kUInt8);
    auto* p = img.data_ptr<std::uint8_t>();
    for (int r = kWallWidth; r < kFrameHeight - kWallWidth; ++r) {
        for (int c = kWallWidth; c < kFrameWidth - kWallWidth; ++c) {
            auto* px = p + (r * kFrameWidth + c) * 3;
            px[0] = px[1] = px[2] = kFloor;
        }
    }
    for (std::size_t i = 0; i < layout_.blocks.size(); ++i) {
        if (held_ && *held_ == i) continue;
        const auto& b = layout_.blocks[i];
        fill_square(p, b.row, b.col, config_.block_half_size, b.color);
    }
    if (held_) {
        const auto& b = layout_.blocks[*held_];
        fill_square(p, b.row, b.col, config_.block_half_size, b.color);
    }
    const std::uint8_t shade = gripper_ >= 0.5 ? kMarkerClosed : kMarkerOpen;
    fill_square(p, marker_row_, marker_col_, marker_half_size(), {shade, shade, shade});
    return img;
}

SceneLayout random_layout(const SceneConfig& config, std::mt19937_64& rng) {
    config.validate();
    const int max_col = static_cast<int>(std::floor(config.pixels_per_meter * config.workspace_half_x));
    const int max_row = static_cast<int>(std::floor(config.pixels_per_meter * config.workspace_half_y));
    std::uniform_int_distribution<int> col(-max_col, max_col);
    std::uniform_int_distribution<int> row(-max_row, max_row);
    const int gap = 2 * config.block_half_size + 2;

    SceneLayout layout;
    std::vector<std::size_t> colors(kPalette.size());
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = i;
    std::shuffle(colors.begin(), colors.end(), rng);

    for (int i = 0; i < config.n_blocks; ++i) {
        Block b;
        for (int attempt = 0; attempt < 200; ++attempt) {
            b.row = static_cast<int>(kFrameHeight / 2) + row(rng);
            b.col = static_cast<int>(kFrameWidth / 2) + col(rng);
            const bool clear = std::none_of(layout.blocks.begin(), layout.blocks.end(), [&](const Block& o) {
                return std::abs(o.row - b.row) < gap && std::abs(o.col - b.col) < gap;
            });
            if (clear) break;
        }
        b.color = kPalette[colors[static_cast<std::size_t>(i) % colors.size()]];
        layout.blocks.push_back(b);
    }
    std::uniform_real_distribution<double> ux(-config.workspace_half_x, config.workspace_half_x);
    std::uniform_real_distribution<double> uy(-config.workspace_half_y, config.workspace_half_y);
    layout.gripper_start = Eigen::Vector3d(ux(rng), uy(rng), config.top_height);
    return layout;
}

namespace {

struct PlannedMovement {
    actions::Movement movement;
    Stage stage;
};

// Grasp targets come from the initial layout, so trajectories sharing a plan
// execute identical actions whatever the grasp outcomes are.
std::vector<PlannedMovement> plan_movements(const SceneConfig& config, SceneLayout& layout, int count,
                                            std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, layout.blocks.size() - 1);
    std::uniform_real_distribution<double> ux(-config.workspace_half_x, config.workspace_half_x);
    std::uniform_real_distribution<double> uy(-config.workspace_half_y, config.workspace_half_y);
    const actions::DiscretizeOptions opts{config.max_step, config.dof};

    std::vector<PlannedMovement> out;
    Eigen::Vector3d pos = layout.gripper_start;
    double gripper = actions::kGripperOpen;
    bool first = true;
    while (static_cast<int>(out.size()) < count) {
        const auto& target = layout.blocks[pick(rng)];
        actions::SemanticGrasp g;
        g.grasp_point = Eigen::Vector3d(to_x(target.col, config), to_y(target.row, config), config.grasp_height);
        g.drop_point = Eigen::Vector3d(ux(rng), uy(rng), config.grasp_height);
        g.top_height = config.top_height;
        if (first && config.start_above_grasp) {
            pos = Eigen::Vector3d(g.grasp_point.x(), g.grasp_point.y(), config.top_height);
            layout.gripper_start = pos;
        }
        first = false;
        for (const auto& e : actions::decompose_semantic(g, pos)) {
            for (auto& m : actions::discretize_element(e, opts, gripper)) {
                gripper = m.gripper;
                out.push_back({std::move(m), stage_of(e.kind)});
            }
            pos = e.end;
        }
    }
    out.resize(static_cast<std::size_t>(count));
    return out;
}

}  // namespace

std::vector<Trajectory> generate_synthetic(std::uint64_t seed, int n_traj, int frames, const SceneConfig& config) {
    config.validate();
    if (n_traj < 1) throw ValidationError("n_traj must be >= 1");
    if (frames < 2) throw ValidationError("frames must be >= 2");

    std::mt19937_64 shared_rng(seed);
    SceneLayout shared_layout;
    std::vector<PlannedMovement> shared_plan;
    if (config.fixed_layout) {
        shared_layout = random_layout(config, shared_rng);
        shared_plan = plan_movements(config, shared_layout, frames - 1, shared_rng);
    }

    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(n_traj));
    for (int i = 0; i < n_traj; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        SceneLayout layout = shared_layout;
        std::vector<PlannedMovement> plan = shared_plan;
        if (!config.fixed_layout) {
            layout = random_layout(config, rng);
            plan = plan_movements(config, layout, frames - 1, rng);
        }

        SceneSimulator sim(config, layout, rng());
        const int n_a = config.dof + 1;
        Trajectory t;
        t.frames = torch::empty({frames, kFrameHeight, kFrameWidth, 3}, torch::kUInt8);
        t.actions = torch::empty({frames - 1, n_a}, torch::kFloat32);
        if (config.with_states) t.states = torch::empty({frames, 4}, torch::kFloat32);

        auto record_state = [&](int f) {
            if (!config.with_states) return;
            auto s = t.states[f];
            s[0] = static_cast<float>(sim.position().x());
            s[1] = static_cast<float>(sim.position().y());
            s[2] = static_cast<float>(sim.position().z());
            s[3] = static_cast<float>(sim.gripper());
        };

        t.frames[0].copy_(sim.render());
        record_state(0);
        t.meta.stage_labels.push_back(plan.front().stage);
        for (int f = 1; f < frames; ++f) {
            const auto& pm = plan[static_cast<std::size_t>(f - 1)];
            const auto a = actions::to_action_vector(pm.movement);
            for (int k = 0; k < n_a; ++k) t.actions[f - 1][k] = static_cast<float>(a(k));
            sim.step(pm.movement);
            t.frames[f].copy_(sim.render());
            record_state(f);
            t.meta.stage_labels.push_back(pm.stage);
        }
        t.meta.source_id = "synthetic-" + std::to_string(seed) + "-" + std::to_string(i);
        t.meta.robot = "synthetic";
        t.meta.camera_id = "top";
        validate(t);
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace vpgo::data
