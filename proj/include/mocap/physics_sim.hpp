#pragma once

#include <optional>
#include <vector>

#include "mocap/math.hpp"
#include "mocap/motion_clip.hpp"
#include "mocap/skeleton.hpp"

namespace mocap {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct PDParams {
    std::vector<double> kp;            // N*m/rad, per joint (root entry unused)
    std::vector<double> kd;            // N*m*s/rad
    std::vector<double> torque_limit;  // N*m
};

struct ContactParams {
    double friction = 0.9;            // Coulomb mu
    double stiffness = 15000.0;       // N/m, normal penalty spring
    double damping = 100.0;           // N*s/m, normal
    double ground_height = 0.0;       // m
    double tangent_stiffness = 8000;  // N/m, stiction anchor spring
    double tangent_damping = 60.0;    // N*s/m
    double ball_restitution = 0.6;    // ground-bounce target for the ball
};

struct SimConfig {
    Vec3 gravity = Vec3(0, 0, -kGravity);
    double sim_dt = 1.0 / 120.0;
    int control_substeps = 4;  // control rate = sim rate / substeps
    ContactParams contacts;
    bool stable_pd = false;  // velocity-extrapolated PD error
    bool self_collision = true;
    bool character_collision = true;
    bool fixed_base = false;  // weld character roots to the world (test rigs)
};

struct CharacterSimState {
    Vec3 root_position = Vec3::Zero();
    Quat root_rotation = Quat::Identity();
    Vec3 root_lin_vel = Vec3::Zero();  // world, m/s
    Vec3 root_ang_vel = Vec3::Zero();  // world, rad/s
    std::vector<Quat> joint_rotations;  // local
    std::vector<Vec3> joint_ang_vel;    // child frame, rad/s
};

struct BallState {
    Vec3 position = Vec3::Zero();
    Quat rotation = Quat::Identity();
    Vec3 lin_vel = Vec3::Zero();
    Vec3 ang_vel = Vec3::Zero();
};

// Stiction anchor for a persistent ground contact point.
struct ContactAnchor {
    int character = 0;
    int joint = 0;
    int slot = 0;  // contact point slot within the body
    Vec3 anchor = Vec3::Zero();
};

struct SimState {
    std::vector<CharacterSimState> characters;
    std::optional<BallState> ball;
    std::vector<ContactAnchor> anchors;
};

struct ContactInfo {
    int character = -1;  // -1 for the ball
    int joint = 0;
    Vec3 point = Vec3::Zero();
    double normal_force = 0.0;
    Vec3 tangent_force = Vec3::Zero();
};

struct StepInfo {
    std::vector<ContactInfo> contacts;
    std::vector<std::vector<Vec3>> applied_torques;   // last substep, per character/joint
    std::vector<std::vector<double>> joint_power;     // mean |tau . omega| over substeps
};

// External stabilizing wrench target for a character root (used by the gait
// harness when generating reference motion).
struct RootTarget {
    Vec3 position = Vec3::Zero();
    Quat rotation = Quat::Identity();
    Vec3 lin_vel = Vec3::Zero();
    Vec3 ang_vel = Vec3::Zero();
    double kp_pos = 0.0, kd_pos = 0.0;
    double kp_rot = 0.0, kd_rot = 0.0;
};

class SimUnstableError : public std::runtime_error {
public:
    SimUnstableError(const std::string& msg, SimState last)
        : std::runtime_error(msg), last_state(std::move(last)) {}
    SimState last_state;
};

// Reduced-coordinate articulated rigid-body world: PD joint actuation,
// articulated-body forward dynamics, semi-implicit Euler, penalty ground
// contacts with a Coulomb friction cone, optional free ball.
class SimWorld {
public:
    SimWorld(std::vector<Skeleton> skeletons, SimConfig config,
             std::vector<PDParams> pd_params, std::optional<BodyShape> ball = {});

    int character_count() const { return static_cast<int>(skeletons_.size()); }
    const Skeleton& skeleton(int c) const { return skeletons_[c]; }
    const SimConfig& config() const { return config_; }
    const PDParams& pd_params(int c) const { return pd_params_[c]; }
    bool has_ball() const { return ball_shape_.has_value(); }
    const BodyShape& ball_shape() const { return *ball_shape_; }
    double character_mass(int c) const { return character_mass_[c]; }
    double body_mass(int c, int j) const;
    Vec3 body_inertia_diag(int c, int j) const;

    // World at rest in the skeleton rest pose.
    SimState initial_state() const;

    // One integration substep of sim_dt. Joint targets are local rotations,
    // one per joint per character, held as the PD setpoint. Throws
    // SimUnstableError (carrying the input state) on NaN/Inf.
    SimState step(const SimState& state,
                  const std::vector<std::vector<Quat>>& joint_targets, double dt,
                  const std::vector<RootTarget>* harness = nullptr,
                  StepInfo* info = nullptr) const;

    // ---- helpers shared with tests and the RL environment ----
    Frame state_to_frame(const SimState& state, int character) const;
    Vec3 total_linear_momentum(const SimState& state) const;
    // Kinetic + gravitational + ground-spring energy.
    double mechanical_energy(const SimState& state) const;

private:
    struct BodyNode {
        int parent = -1;
        JointType type = JointType::Spherical;
        Vec3 axis = Vec3::UnitX();
        Vec3 offset = Vec3::Zero();
        double mass = 1.0;
        Vec3 com = Vec3::Zero();   // body frame
        Mat3 inertia_com = Mat3::Identity();
        Mat6 spatial_inertia = Mat6::Identity();
        BodyShape shape;
    };

    struct CollidablePair {
        int char_a, joint_a, char_b, joint_b;  // char == -1 encodes the ball
    };

    void build_character(const Skeleton& sk);
    void build_pairs();

    std::vector<Skeleton> skeletons_;
    SimConfig config_;
    std::vector<PDParams> pd_params_;
    std::optional<BodyShape> ball_shape_;
    double ball_mass_ = 0.45;
    Mat3 ball_inertia_ = Mat3::Identity();

    std::vector<std::vector<BodyNode>> bodies_;  // per character
    std::vector<double> character_mass_;
    std::vector<CollidablePair> pairs_;
};

SimWorld build_world(std::vector<Skeleton> skeletons, SimConfig config,
                     std::vector<PDParams> pd_params,
                     std::optional<BodyShape> ball = {});

// Hybrid PD setpoint: residual composed onto SLERP(q_t, q_ref_next, alpha).
Quat pd_target(const Quat& q_t, const Quat& q_ref_next, double alpha, const Quat& residual);

// State matching the given frames exactly; velocities by finite difference
// against next_frames at the clip frame rate (angular via quaternion log).
SimState reset_to_pose(const SimWorld& world, const std::vector<Frame>& frames,
                       const std::vector<Frame>& next_frames, double fps,
                       const std::optional<BallState>& ball = {});

// Shape inertia about its own center, uniform density (diagonal, shape frame).
Vec3 shape_inertia_diagonal(const BodyShape& shape);

}  // namespace mocap
