#include "vpgo/action_hierarchy.hpp"
#include "vpgo/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace vpgo::actions;

namespace {

SemanticGrasp example_grasp() {
    return {Eigen::Vector3d(0.3, 0.1, 0.02), Eigen::Vector3d(-0.2, 0.15, 0.02), 0.25};
}

void expect_vec(const Eigen::Vector3d& got, double x, double y, double z) {
    EXPECT_NEAR(got.x(), x, 1e-12);
    EXPECT_NEAR(got.y(), y, 1e-12);
    EXPECT_NEAR(got.z(), z, 1e-12);
}

}  // namespace

TEST(DecomposeSemantic, ExampleGraspGivesFivePhases) {
    const auto e = decompose_semantic(example_grasp());
    ASSERT_EQ(e.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(e[i].kind, kElementOrder[i]);
    expect_vec(e[0].end, 0.3, 0.1, 0.25);
    expect_vec(e[1].end, 0.3, 0.1, 0.02);
    expect_vec(e[2].end, 0.3, 0.1, 0.25);
    expect_vec(e[3].end, -0.2, 0.15, 0.25);
    expect_vec(e[4].start, -0.2, 0.15, 0.25);
    expect_vec(e[4].end, -0.2, 0.15, 0.25);
    EXPECT_EQ(e[1].gripper_command, GripperCommand::Close);
    EXPECT_EQ(e[4].gripper_command, GripperCommand::Open);
    EXPECT_EQ(e[0].gripper_command, GripperCommand::Hold);
    EXPECT_EQ(e[2].gripper_command, GripperCommand::Hold);
    EXPECT_EQ(e[3].gripper_command, GripperCommand::Hold);
}

TEST(DecomposeSemantic, ApproachStartsFromGivenPoint) {
    const Eigen::Vector3d from(0.0, 0.0, 0.1);
    const auto e = decompose_semantic(example_grasp(), from);
    expect_vec(e[0].start, 0.0, 0.0, 0.1);
    expect_vec(e[0].end, 0.3, 0.1, 0.25);
}

TEST(DecomposeSemantic, SamePointStillEmitsTransport) {
    auto g = example_grasp();
    g.drop_point = g.grasp_point;
    const auto e = decompose_semantic(g);
    ASSERT_EQ(e.size(), 5u);
    EXPECT_EQ(e[3].kind, ElementKind::Transport);
    EXPECT_NEAR((e[3].end - e[3].start).head<2>().norm(), 0.0, 1e-15);
}

TEST(DecomposeSemantic, RejectsInvalidInput) {
    auto g = example_grasp();
    g.top_height = 0.01;
    EXPECT_THROW(decompose_semantic(g), vpgo::ValidationError);
    g = example_grasp();
    g.grasp_point.x() = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(decompose_semantic(g), vpgo::ValidationError);
    g = example_grasp();
    g.drop_point.z() = 0.25;
    EXPECT_THROW(decompose_semantic(g), vpgo::ValidationError);
    g = example_grasp();
    g.top_height = std::numeric_limits<double>::infinity();
    EXPECT_THROW(decompose_semantic(g), vpgo::ValidationError);
}

TEST(DiscretizeElement, StraightDescentFiveSteps) {
    const auto e = decompose_semantic(example_grasp());
    const auto m = discretize_element(e[1], {0.05, 3});
    ASSERT_EQ(m.size(), 5u);
    double dz = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        dz += m[i].delta.z();
        EXPECT_LE(m[i].delta.norm(), 0.05 + 1e-12);
        EXPECT_FLOAT_EQ(m[i].delta.z(), -0.046);
        EXPECT_EQ(m[i].gripper, i + 1 == m.size() ? kGripperClosed : kGripperOpen);
    }
    EXPECT_NEAR(dz, -0.23, 1e-9);
    EXPECT_NEAR(net_displacement(m).z(), -0.23, 1e-12);
}

TEST(DiscretizeElement, ZeroLengthGivesSingleZeroMovementWithCommand) {
    const auto e = decompose_semantic(example_grasp());
    const auto m = discretize_element(e[4], {0.05, 3}, kGripperClosed);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].delta.norm(), 0.0);
    EXPECT_EQ(m[0].gripper, kGripperOpen);
}

TEST(DiscretizeElement, HoldKeepsGripperState) {
    const auto e = decompose_semantic(example_grasp());
    for (const auto& mv : discretize_element(e[3], {0.05, 3}, kGripperClosed)) EXPECT_EQ(mv.gripper, kGripperClosed);
}

TEST(DiscretizeElement, RejectsNonPositiveStep) {
    const auto e = decompose_semantic(example_grasp());
    EXPECT_THROW(discretize_element(e[1], {0.0, 3}), vpgo::ValidationError);
    EXPECT_THROW(discretize_element(e[1], {-1.0, 3}), vpgo::ValidationError);
    EXPECT_THROW(discretize_element(e[1], {0.05, 2}), vpgo::ValidationError);
}

TEST(DiscretizeElement, RotationDofsStayZero) {
    const auto e = decompose_semantic(example_grasp());
    const auto m = discretize_element(e[3], {0.05, 6});
    for (const auto& mv : m) {
        ASSERT_EQ(mv.delta.size(), 6);
        EXPECT_EQ(mv.delta.tail<3>().norm(), 0.0);
    }
    EXPECT_EQ(to_action_vector(m.front()).size(), 7);
}

TEST(NetDisplacement, EmptyAndCancelling) {
    EXPECT_EQ(net_displacement({}, 3), Eigen::Vector3d::Zero());
    std::vector<Movement> ms{{Eigen::Vector3d(0.1, 0, 0), 0.0}, {Eigen::Vector3d(-0.1, 0, 0), 0.0}};
    EXPECT_EQ(net_displacement(ms), Eigen::Vector3d::Zero());
}

TEST(DiscretizeElements, RandomGraspsRoundTrip) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> xy(-0.3, 0.3), z(0.0, 0.1), top(0.11, 0.4), step(0.005, 0.2);
    for (int i = 0; i < 200; ++i) {
        SemanticGrasp g{{xy(rng), xy(rng), z(rng)}, {xy(rng), xy(rng), z(rng)}, top(rng)};
        const Eigen::Vector3d from(xy(rng), xy(rng), top(rng));
        const auto elements = decompose_semantic(g, from);
        const DiscretizeOptions opts{step(rng), 3};
        const auto moves = discretize_elements(elements, opts);
        const Eigen::Vector3d expect = elements.back().end - elements.front().start;
        EXPECT_LT((net_displacement(moves) - expect).cwiseAbs().maxCoeff(), 1e-9);
        for (const auto& m : moves) EXPECT_LE(m.delta.norm(), opts.max_step * (1 + 1e-12));
    }
}
