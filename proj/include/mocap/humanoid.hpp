#pragma once

#include "mocap/physics_sim.hpp"
#include "mocap/skeleton.hpp"

namespace mocap {

// Default test rig: 15 joints / 15 bodies (pelvis root; spine, head; per
// side shoulder/elbow/hand and hip/knee/foot), ~60 kg, capsule limbs with
// box torso and feet, standing rest pose with foot soles on z = 0.
Skeleton default_humanoid();

// Two-tier gains: 300 N*m/rad proximal (spine, shoulders, hips, knees),
// 100 distal (head, elbows, hands, feet); kd = kp/10.
PDParams default_pd_params(const Skeleton& skeleton);

}  // namespace mocap
