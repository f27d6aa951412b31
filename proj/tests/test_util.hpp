#pragma once

#include <random>
#include <vector>

#include "mocap/motion_clip.hpp"
#include "mocap/skeleton.hpp"

namespace mocap::testutil {

inline Quat random_unit_quat(std::mt19937& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Quat q(g(rng), g(rng), g(rng), g(rng));
    q.normalize();
    return q;
}

inline Vec3 random_vec3(std::mt19937& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    return Vec3(u(rng), u(rng), u(rng));
}

// Vertical chain: joint k sits at offset (0,0,1) from its parent, small
// sphere bodies, all spherical joints.
inline Skeleton make_chain_skeleton(int joints) {
    Skeleton sk;
    sk.name = "chain";
    for (int i = 0; i < joints; ++i) {
        JointSpec j;
        j.name = "j" + std::to_string(i);
        j.parent = i - 1;
        j.local_offset = i == 0 ? Vec3::Zero() : Vec3(0, 0, 1);
        j.type = JointType::Spherical;
        j.shape.kind = ShapeKind::Sphere;
        j.shape.dims = {0.1};
        j.shape.mass = 1.0;
        j.torque_limit = 100.0;
        sk.joints.push_back(j);
    }
    return sk;
}

inline Frame identity_frame(const Skeleton& sk) {
    Frame f;
    f.joint_rotations.assign(sk.joint_count(), Quat::Identity());
    return f;
}

inline MotionClip make_minimal_clip(int joints = 3, int frames = 2, double fps = 30.0) {
    MotionClip clip;
    clip.skeleton = make_chain_skeleton(joints);
    clip.fps = fps;
    std::vector<Frame> stream;
    for (int t = 0; t < frames; ++t) {
        Frame f = identity_frame(clip.skeleton);
        f.root_position = Vec3(0, 0, 1.0 + 0.1 * t);
        stream.push_back(f);
    }
    clip.characters.push_back(stream);
    return clip;
}

}  // namespace mocap::testutil
