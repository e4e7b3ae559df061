#pragma once

// Semantic grasp -> element actions -> elementary end-effector movements.
//
// A semantic grasp ("pick the object at A, drop it at B") is split into the
// five element actions of a pick-and-place, and each element is split into
// bounded end-effector displacements that have the same layout as the
// low-level actions the prediction model is trained on.

#include <Eigen/Core>

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace vpgo::actions {

struct SemanticGrasp {
    Eigen::Vector3d grasp_point = Eigen::Vector3d::Zero();  // meters, workspace frame
    Eigen::Vector3d drop_point = Eigen::Vector3d::Zero();   // meters
    double top_height = 0.0;                                // hover plane z, meters
};

enum class ElementKind { ApproachTop, DescendAndClose, Lift, Transport, OpenAndDrop };

inline constexpr std::array<ElementKind, 5> kElementOrder = {
    ElementKind::ApproachTop, ElementKind::DescendAndClose, ElementKind::Lift,
    ElementKind::Transport, ElementKind::OpenAndDrop};

enum class GripperCommand { Open, Close, Hold };

struct ElementAction {
    ElementKind kind = ElementKind::ApproachTop;
    Eigen::Vector3d start = Eigen::Vector3d::Zero();
    Eigen::Vector3d end = Eigen::Vector3d::Zero();
    GripperCommand gripper_command = GripperCommand::Hold;
};

inline constexpr double kGripperOpen = 0.0;
inline constexpr double kGripperClosed = 1.0;

// One elementary movement. `delta` holds one displacement per end-effector
// degree of freedom: (dx, dy, dz) followed by optional rotation DOFs, which
// the grasp decomposition always leaves at zero. `gripper` is the absolute
// gripper state for this step (0 open, 1 closed).
struct Movement {
    Eigen::VectorXd delta;
    double gripper = kGripperOpen;
};

struct DiscretizeOptions {
    double max_step = 0.05;  // meters per movement
    int dof = 3;             // >= 3; entries past z are rotation DOFs
};

std::string_view to_string(ElementKind kind);
std::string_view to_string(GripperCommand cmd);

// Throws ValidationError on non-finite values or when the hover plane is not
// strictly above both the grasp and the drop point.
void validate(const SemanticGrasp& grasp);

// Five chained elements. The approach starts at `from`; the overload
// without it starts directly above the grasp point (zero-length approach).
std::vector<ElementAction> decompose_semantic(const SemanticGrasp& grasp,
                                              const Eigen::Vector3d& from);
std::vector<ElementAction> decompose_semantic(const SemanticGrasp& grasp);

// Equal-length steps of length/ceil(length/max_step). A zero-length element
// yields a single zero movement so that gripper events are never dropped.
// `gripper_before` is the gripper state when the element starts; Close/Open
// change it on the final movement only.
std::vector<Movement> discretize_element(const ElementAction& element,
                                         const DiscretizeOptions& options,
                                         double gripper_before = kGripperOpen);

// Discretizes a chain of elements, threading the gripper state through.
std::vector<Movement> discretize_elements(std::span<const ElementAction> elements,
                                          const DiscretizeOptions& options,
                                          double gripper_before = kGripperOpen);

// Componentwise sum of deltas; an empty list gives the zero vector of `dof`.
Eigen::VectorXd net_displacement(std::span<const Movement> movements, int dof = 3);

// Flat action vector in the model's layout: (delta..., gripper).
Eigen::VectorXd to_action_vector(const Movement& movement);

}  // namespace vpgo::actions
