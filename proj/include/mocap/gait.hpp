#pragma once

#include "mocap/motion_clip.hpp"
#include "mocap/physics_sim.hpp"

namespace mocap {

struct GaitParams {
    double cycle_time = 0.9;    // s, two steps
    double speed = 0.55;        // m/s forward (+x)
    double hip_swing = 0.40;    // rad
    double knee_lift = 0.75;    // rad
    double arm_swing = 0.25;    // rad
    double root_height = 0.94;  // m
    double root_bob = 0.015;    // m, at step frequency
    double warmup = 0.8;        // s of amplitude ramp-in before recording
};

// Joint PD targets and root reference for the scripted walk at time t.
std::vector<Quat> gait_targets(const Skeleton& skeleton, const GaitParams& gait, double t);
RootTarget gait_root_target(const GaitParams& gait, double t, const Vec3& start_offset);

// Simulates the scripted gait under a root-stabilizing harness and records
// the resulting states as a clip. Output is physically consistent (contacts,
// friction) and serves as the clean reference asset for tests and demos.
MotionClip generate_walk_clip(double seconds = 3.0, double fps = 30.0,
                              int characters = 1, double lateral_spacing = 0.8,
                              const GaitParams& gait = {});

}  // namespace mocap
