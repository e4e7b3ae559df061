#pragma once

// Trajectory records, on-disk containers, training windows and the seeded
// synthetic scene generator.

#include "vpgo/action_hierarchy.hpp"

#include <torch/types.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace vpgo::data {

inline constexpr std::int64_t kFrameHeight = 48;
inline constexpr std::int64_t kFrameWidth = 64;
inline constexpr std::int64_t kFrameChannels = 3;
inline constexpr std::int64_t kFormatVersion = 1;

enum class Stage : std::uint8_t { None = 0, Approaching = 1, Grasping = 2, Moving = 3 };

std::string_view to_string(Stage stage);
Stage stage_of(actions::ElementKind kind);

struct TrajectoryMeta {
    std::string source_id;
    std::string robot;
    std::string camera_id;
    std::vector<Stage> stage_labels;  // empty, or one per frame
};

// frames: uint8 (T, H, W, 3); actions: float32 (T-1, n_a);
// states: float32 (T, n_s) or undefined.
struct Trajectory {
    torch::Tensor frames;
    torch::Tensor actions;
    torch::Tensor states;
    TrajectoryMeta meta;

    std::int64_t length() const { return frames.defined() ? frames.size(0) : 0; }
    std::int64_t action_dim() const { return actions.size(1); }
    bool has_states() const { return states.defined(); }
    std::int64_t state_dim() const { return has_states() ? states.size(1) : 0; }
    bool has_stage_labels() const { return !meta.stage_labels.empty(); }
};

// Throws ValidationError naming the first violated invariant.
void validate(const Trajectory& trajectory);

enum class Format { RoboNetHdf5, PandaGrasp };

Format parse_format(std::string_view name);
std::string_view to_string(Format format);

// Identifies the container layout from the datasets present in the file.
Format detect_format(const std::filesystem::path& path);

// Frames of any size are bilinearly resized to 48x64.
Trajectory load_trajectory(const std::filesystem::path& path, Format format);
Trajectory load_trajectory(const std::filesystem::path& path);

// Rejects invariant-violating trajectories. Output bytes depend only on the
// content and kFormatVersion.
void export_trajectory(const Trajectory& trajectory, const std::filesystem::path& path, Format format);

// Every *.h5 file in `dir`, sorted by file name.
std::vector<Trajectory> load_directory(const std::filesystem::path& dir);

// context: (c, H, W, 3) float in [0,1]; targets: (horizon, H, W, 3);
// actions: (c + horizon - 1, n_a) where actions[i] maps frame i to i+1;
// states: (c + horizon, n_s) or undefined.
struct TrainingWindow {
    torch::Tensor context;
    torch::Tensor targets;
    torch::Tensor actions;
    torch::Tensor states;
    std::vector<Stage> target_stages;  // empty when the trajectory is unlabeled

    std::int64_t context_length() const { return context.size(0); }
    std::int64_t horizon() const { return targets.size(0); }
};

TrainingWindow sample_window(const Trajectory& trajectory, std::int64_t context, std::int64_t horizon,
                             std::int64_t offset);
TrainingWindow sample_window(const Trajectory& trajectory, std::int64_t context, std::int64_t horizon,
                             std::mt19937_64& rng);

// Stacked windows. frames: (B, c + horizon, H, W, 3) float in [0,1].
struct WindowBatch {
    torch::Tensor frames;
    torch::Tensor actions;
    torch::Tensor states;
    std::int64_t context = 0;

    std::int64_t batch_size() const { return frames.size(0); }
    std::int64_t length() const { return frames.size(1); }
    std::int64_t horizon() const { return length() - context; }
};

WindowBatch make_batch(const std::vector<TrainingWindow>& windows);

// ---------------------------------------------------------------------------
// Synthetic desk-scale scenes: flat-shaded top-down view of colored blocks in
// a box, with a square gripper marker. Image columns follow +x and rows +y,
// both scaled by pixels_per_meter around the image center.

struct SceneConfig {
    int n_blocks = 3;
    int block_half_size = 3;            // pixels; blocks are (2h+1)^2 squares
    double pixels_per_meter = 100.0;
    double workspace_half_x = 0.25;     // meters
    double workspace_half_y = 0.17;
    double top_height = 0.25;
    double grasp_height = 0.02;
    double max_step = 0.05;
    double grasp_success_prob = 1.0;
    bool fixed_layout = false;          // same blocks and grasps in every trajectory
    bool start_above_grasp = false;     // zero-length approach for the first grasp
    bool with_states = true;
    int dof = 3;

    void validate() const;
};

struct Block {
    int row = 0;
    int col = 0;
    std::array<std::uint8_t, 3> color{};
};

struct SceneLayout {
    std::vector<Block> blocks;
    Eigen::Vector3d gripper_start = Eigen::Vector3d::Zero();  // meters
};

// Pixel/state bookkeeping for one episode. Marker pixel position accumulates
// round(pixels_per_meter * delta) per movement, so consecutive frames differ
// by exactly that displacement.
class SceneSimulator {
public:
    SceneSimulator(SceneConfig config, SceneLayout layout, std::uint64_t seed);

    // Applies one movement; returns true if this movement closed the gripper
    // on a block and the grasp succeeded.
    bool step(const actions::Movement& movement);

    // uint8 (H, W, 3)
    torch::Tensor render() const;

    int marker_row() const { return marker_row_; }
    int marker_col() const { return marker_col_; }
    const Eigen::Vector3d& position() const { return position_; }
    double gripper() const { return gripper_; }
    const std::vector<Block>& blocks() const { return layout_.blocks; }
    std::optional<std::size_t> held_block() const { return held_; }
    int marker_half_size() const;

private:
    SceneConfig config_;
    SceneLayout layout_;
    std::mt19937_64 rng_;
    Eigen::Vector3d position_;
    int marker_row_ = 0;
    int marker_col_ = 0;
    double gripper_ = actions::kGripperOpen;
    std::optional<std::size_t> held_;
};

// World <-> pixel mapping used by the renderer (marker start position).
int to_col(double x, const SceneConfig& config);
int to_row(double y, const SceneConfig& config);
double to_x(int col, const SceneConfig& config);
double to_y(int row, const SceneConfig& config);

SceneLayout random_layout(const SceneConfig& config, std::mt19937_64& rng);

// Grasp episodes (decompose_semantic + discretize) are chained until T-1
// movements exist; the last episode is truncated. Stage labels are recorded
// per frame, frame t > 0 carrying the stage of the movement that produced it.
std::vector<Trajectory> generate_synthetic(std::uint64_t seed, int n_traj, int frames,
                                           const SceneConfig& config);

}  // namespace vpgo::data
