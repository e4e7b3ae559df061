#include "vpgo/action_hierarchy.hpp"

#include "vpgo/errors.hpp"

#include <cmath>
#include <string>

namespace vpgo::actions {

namespace {

bool finite(const Eigen::Vector3d& v) { return v.allFinite(); }

double apply_command(GripperCommand cmd, double before) {
    switch (cmd) {
        case GripperCommand::Open: return kGripperOpen;
        case GripperCommand::Close: return kGripperClosed;
        case GripperCommand::Hold: return before;
    }
    return before;
}

}  // namespace

std::string_view to_string(ElementKind kind) {
    switch (kind) {
        case ElementKind::ApproachTop: return "ApproachTop";
        case ElementKind::DescendAndClose: return "DescendAndClose";
        case ElementKind::Lift: return "Lift";
        case ElementKind::Transport: return "Transport";
        case ElementKind::OpenAndDrop: return "OpenAndDrop";
    }
    return "?";
}

std::string_view to_string(GripperCommand cmd) {
    switch (cmd) {
        case GripperCommand::Open: return "Open";
        case GripperCommand::Close: return "Close";
        case GripperCommand::Hold: return "Hold";
    }
    return "?";
}

void validate(const SemanticGrasp& grasp) {
    if (!finite(grasp.grasp_point) || !finite(grasp.drop_point) || !std::isfinite(grasp.top_height)) {
        throw ValidationError("semantic grasp has non-finite coordinates");
    }
    if (!(grasp.top_height > grasp.grasp_point.z()) || !(grasp.top_height > grasp.drop_point.z())) {
        throw ValidationError("top_height must lie strictly above grasp and drop points");
    }
}

std::vector<ElementAction> decompose_semantic(const SemanticGrasp& grasp,
                                              const Eigen::Vector3d& from) {
    validate(grasp);
    if (!finite(from)) throw ValidationError("approach start is non-finite");

    const Eigen::Vector3d above_grasp(grasp.grasp_point.x(), grasp.grasp_point.y(), grasp.top_height);
    const Eigen::Vector3d above_drop(grasp.drop_point.x(), grasp.drop_point.y(), grasp.top_height);

    return {
        {ElementKind::ApproachTop, from, above_grasp, GripperCommand::Hold},
        {ElementKind::DescendAndClose, above_grasp, grasp.grasp_point, GripperCommand::Close},
        {ElementKind::Lift, grasp.grasp_point, above_grasp, GripperCommand::Hold},
        {ElementKind::Transport, above_grasp, above_drop, GripperCommand::Hold},
        {ElementKind::OpenAndDrop, above_drop, above_drop, GripperCommand::Open},
    };
}

std::vector<ElementAction> decompose_semantic(const SemanticGrasp& grasp) {
    return decompose_semantic(
        grasp, Eigen::Vector3d(grasp.grasp_point.x(), grasp.grasp_point.y(), grasp.top_height));
}

std::vector<Movement> discretize_element(const ElementAction& element,
                                         const DiscretizeOptions& options,
                                         double gripper_before) {
    if (!(options.max_step > 0.0) || !std::isfinite(options.max_step)) {
        throw ValidationError("max_step must be positive, got " + std::to_string(options.max_step));
    }
    if (options.dof < 3) throw ValidationError("movement layout needs at least 3 DOFs");
    if (!finite(element.start) || !finite(element.end)) {
        throw ValidationError("element endpoints are non-finite");
    }

    const Eigen::Vector3d span = element.end - element.start;
    const double length = span.norm();

    long steps = 1;
    if (length > 0.0) {
        steps = static_cast<long>(std::ceil(length / options.max_step));
        // ceil() of a quotient that is an exact multiple up to rounding can
        // overshoot by one.
        if (steps > 1 && length / static_cast<double>(steps - 1) <= options.max_step) --steps;
        steps = std::max(steps, 1L);
    }

    const Eigen::Vector3d step = span / static_cast<double>(steps);
    const double after = apply_command(element.gripper_command, gripper_before);

    std::vector<Movement> out;
    out.reserve(static_cast<std::size_t>(steps));
    Eigen::Vector3d emitted = Eigen::Vector3d::Zero();
    for (long i = 0; i < steps; ++i) {
        Movement m;
        m.delta = Eigen::VectorXd::Zero(options.dof);
        // The last step absorbs the rounding remainder so the sum is exact.
        const Eigen::Vector3d d = (i + 1 == steps) ? Eigen::Vector3d(span - emitted) : step;
        m.delta.head<3>() = d;
        emitted += d;
        m.gripper = (i + 1 == steps) ? after : gripper_before;
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<Movement> discretize_elements(std::span<const ElementAction> elements,
                                          const DiscretizeOptions& options,
                                          double gripper_before) {
    std::vector<Movement> out;
    double gripper = gripper_before;
    for (const auto& e : elements) {
        auto ms = discretize_element(e, options, gripper);
        gripper = ms.back().gripper;
        out.insert(out.end(), std::make_move_iterator(ms.begin()), std::make_move_iterator(ms.end()));
    }
    return out;
}

Eigen::VectorXd net_displacement(std::span<const Movement> movements, int dof) {
    if (!movements.empty()) dof = static_cast<int>(movements.front().delta.size());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dof);
    for (const auto& m : movements) sum += m.delta;
    return sum;
}

Eigen::VectorXd to_action_vector(const Movement& movement) {
    Eigen::VectorXd a(movement.delta.size() + 1);
    a.head(movement.delta.size()) = movement.delta;
    a(movement.delta.size()) = movement.gripper;
    return a;
}

}  // namespace vpgo::actions
