#pragma once

#include <string>
#include <vector>

#include "mocap/math.hpp"
#include "mocap/skeleton.hpp"

namespace mocap {

struct Frame {
    Vec3 root_position = Vec3::Zero();
    Quat root_rotation = Quat::Identity();
    std::vector<Quat> joint_rotations;  // local, one per joint (root entry unused)
};

struct ObjectTrack {
    BodyShape shape;
    std::vector<Vec3> positions;
    std::vector<Quat> rotations;
};

// Skeletal motion data at a fixed frame rate. Multi-character clips hold one
// frame stream per character on a shared timeline. Immutable after load by
// convention; mutating operations return new clips.
struct MotionClip {
    Skeleton skeleton;
    double fps = 30.0;
    std::vector<std::vector<Frame>> characters;  // [character][frame]
    std::vector<ObjectTrack> objects;

    int character_count() const { return static_cast<int>(characters.size()); }
    int frame_count() const {
        return characters.empty() ? 0 : static_cast<int>(characters[0].size());
    }
    double duration() const { return (frame_count() - 1) / fps; }

    void validate() const;
};

struct KeyframeEdit {
    int frame_index = 0;
    int character = 0;
    Frame pose;
    int blend_window = 0;
};

struct FKResult {
    std::vector<Vec3> joint_positions;       // world, per joint
    std::vector<Isometry> joint_transforms;  // world, per joint
    std::vector<Isometry> body_transforms;   // joint transform * shape local_pose
};

// ---- Clip I/O (JSON schema, see README) ----

MotionClip load_clip(const std::string& path);
MotionClip clip_from_json_text(const std::string& text);
std::string clip_to_json_text(const MotionClip& clip);
void save_clip(const MotionClip& clip, const std::string& path);

std::vector<KeyframeEdit> load_keyframe_edits(const std::string& path,
                                              const MotionClip& clip);

// ---- Pose operations ----

// Linear root interpolation, SLERP rotations between bracketing frames.
Frame sample_pose(const MotionClip& clip, double time, int character = 0);

FKResult forward_kinematics(const Skeleton& skeleton, const Frame& frame);

// Replaces the pose at each edit's frame exactly and blends linearly toward
// the original over blend_window frames on each side. Edits with overlapping
// blend windows are rejected.
MotionClip apply_keyframes(const MotionClip& clip,
                           const std::vector<KeyframeEdit>& edits);

}  // namespace mocap
