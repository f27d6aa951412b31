#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "mocap/errors.hpp"
#include "mocap/motion_clip.hpp"
#include "test_util.hpp"

using namespace mocap;
using namespace mocap::testutil;

namespace {

Quat axis_angle(const Vec3& axis, double deg) {
    return Quat(Eigen::AngleAxisd(deg * M_PI / 180.0, axis.normalized()));
}

// Independent FK oracle: explicit 4x4 matrix stack walked root-to-joint for
// every joint separately.
Eigen::Matrix4d matrix_stack_fk(const Skeleton& sk, const Frame& f, int joint) {
    std::vector<int> path;
    for (int j = joint; j >= 0; j = sk.joints[j].parent) path.push_back(j);
    Eigen::Matrix4d world = Eigen::Matrix4d::Identity();
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
        const int j = *it;
        Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
        if (j == 0) {
            local.block<3, 3>(0, 0) = f.root_rotation.toRotationMatrix();
            local.block<3, 1>(0, 3) = f.root_position;
        } else {
            local.block<3, 3>(0, 0) = f.joint_rotations[j].toRotationMatrix();
            local.block<3, 1>(0, 3) = sk.joints[j].local_offset;
        }
        world = world * local;
    }
    return world;
}

}  // namespace

TEST_CASE("slerp boundaries and closed forms") {
    const Quat q0 = Quat::Identity();
    const Quat q1 = axis_angle(Vec3::UnitX(), 90.0);

    CHECK(slerp(q0, q1, 0.0).angularDistance(q0) < 1e-12);
    CHECK(slerp(q0, q1, 1.0).angularDistance(q1) < 1e-12);

    const Quat mid = slerp(q0, q1, 0.5);
    const Quat expected = axis_angle(Vec3::UnitX(), 45.0);
    CHECK(mid.angularDistance(expected) < 1e-12);
}

TEST_CASE("slerp properties on random inputs") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const Quat a = random_unit_quat(rng);
        const Quat b = random_unit_quat(rng);
        const double alpha = u(rng);
        const Quat s = slerp(a, b, alpha);
        CHECK(std::abs(s.norm() - 1.0) < 1e-12);
        CHECK(slerp(a, a, alpha).angularDistance(a) < 1e-12);
    }
    // Antipodal inputs take the short way round.
    const Quat q = axis_angle(Vec3::UnitZ(), 10.0);
    Quat qneg = q;
    qneg.coeffs() = -qneg.coeffs();
    CHECK(slerp(q, qneg, 0.5).angularDistance(q) < 1e-9);
}

TEST_CASE("clip json round trip and validation errors") {
    MotionClip clip = make_minimal_clip(3, 6);
    clip.characters[0][3].joint_rotations[1] = axis_angle(Vec3(1, 2, 3), 40.0);
    clip.validate();

    const std::string text = clip_to_json_text(clip);
    const MotionClip back = clip_from_json_text(text);
    CHECK(back.frame_count() == 6);
    CHECK(back.skeleton.joint_count() == 3);
    for (int t = 0; t < 6; ++t) {
        CHECK((back.characters[0][t].root_position - clip.characters[0][t].root_position)
                  .norm() < 1e-12);
        for (int j = 0; j < 3; ++j)
            CHECK(back.characters[0][t].joint_rotations[j].angularDistance(
                      clip.characters[0][t].joint_rotations[j]) < 1e-12);
    }

    SUBCASE("non-unit quaternion names the frame") {
        MotionClip bad = make_minimal_clip(3, 6);
        bad.characters[0][5].joint_rotations[2].coeffs() *= 0.9;
        try {
            clip_from_json_text(clip_to_json_text(bad));
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("frame 5") != std::string::npos);
        }
    }

    SUBCASE("unequal character stream lengths rejected") {
        MotionClip bad = make_minimal_clip(3, 4);
        bad.characters.push_back(bad.characters[0]);
        bad.characters[1].pop_back();
        CHECK_THROWS_AS(clip_from_json_text(clip_to_json_text(bad)), ValidationError);
    }

    SUBCASE("single frame clip rejected") {
        MotionClip bad = make_minimal_clip(3, 2);
        bad.characters[0].pop_back();
        CHECK_THROWS_AS(bad.validate(), ValidationError);
    }

    SUBCASE("malformed json is a parse error") {
        CHECK_THROWS_AS(clip_from_json_text("{not json"), ParseError);
    }
}

TEST_CASE("load_clip from file") {
    MotionClip clip = make_minimal_clip(3, 2);
    const std::string path = "test_clip_tmp.json";
    save_clip(clip, path);
    const MotionClip back = load_clip(path);
    CHECK(back.frame_count() == 2);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_clip("does_not_exist.json"), ParseError);
}

TEST_CASE("sample_pose interpolation") {
    MotionClip clip = make_minimal_clip(3, 4, 30.0);
    clip.characters[0][1].root_position = Vec3(0, 0, 1.0);
    clip.characters[0][2].root_position = Vec3(0, 0, 1.2);
    clip.characters[0][2].joint_rotations[1] = axis_angle(Vec3::UnitY(), 90.0);

    SUBCASE("integer frame times reproduce stored frames") {
        for (int t = 0; t < 4; ++t) {
            const Frame f = sample_pose(clip, t / clip.fps);
            CHECK(f.root_position == clip.characters[0][t].root_position);
            for (int j = 0; j < 3; ++j)
                CHECK(f.joint_rotations[j].angularDistance(
                          clip.characters[0][t].joint_rotations[j]) < 1e-12);
        }
    }

    SUBCASE("midway root height is the linear midpoint") {
        const Frame f = sample_pose(clip, 1.5 / clip.fps);
        CHECK(f.root_position.z() == doctest::Approx(1.1).epsilon(1e-12));
    }

    SUBCASE("midway rotation is the half-angle rotation") {
        const Frame f = sample_pose(clip, 1.5 / clip.fps);
        CHECK(f.joint_rotations[1].angularDistance(axis_angle(Vec3::UnitY(), 45.0)) < 1e-12);
    }

    SUBCASE("out of range time rejected") {
        CHECK_THROWS_AS(sample_pose(clip, -0.01), ValidationError);
        CHECK_THROWS_AS(sample_pose(clip, 5.0), ValidationError);
    }
}

TEST_CASE("forward kinematics") {
    Skeleton sk = make_chain_skeleton(4);

    SUBCASE("identity chain stacks joints vertically") {
        Frame f = identity_frame(sk);
        f.root_position = Vec3(1, 2, 3);
        const FKResult fk = forward_kinematics(sk, f);
        for (int k = 0; k < 4; ++k)
            CHECK((fk.joint_positions[k] - Vec3(1, 2, 3.0 + k)).norm() < 1e-12);
    }

    SUBCASE("root rotation rigidly moves the whole chain") {
        Frame f = identity_frame(sk);
        f.joint_rotations[1] = axis_angle(Vec3::UnitX(), 30.0);
        const FKResult base = forward_kinematics(sk, f);

        Frame rotated = f;
        const Quat r = axis_angle(Vec3::UnitZ(), 90.0);
        rotated.root_rotation = r * f.root_rotation;
        const FKResult rot = forward_kinematics(sk, rotated);
        for (int k = 0; k < 4; ++k) {
            const Vec3 expected = r * base.joint_positions[k];
            CHECK((rot.joint_positions[k] - expected).norm() < 1e-9);
        }
    }

    SUBCASE("random poses match the matrix-stack oracle") {
        std::mt19937 rng(11);
        for (int trial = 0; trial < 50; ++trial) {
            Frame f;
            f.root_position = random_vec3(rng, 2.0);
            f.root_rotation = random_unit_quat(rng);
            for (int j = 0; j < 4; ++j) f.joint_rotations.push_back(random_unit_quat(rng));
            const FKResult fk = forward_kinematics(sk, f);
            for (int j = 0; j < 4; ++j) {
                const Eigen::Matrix4d oracle = matrix_stack_fk(sk, f, j);
                CHECK((fk.joint_positions[j] - oracle.block<3, 1>(0, 3)).norm() < 1e-9);
                CHECK((fk.joint_transforms[j].linear() - oracle.block<3, 3>(0, 0)).norm() <
                      1e-9);
            }
        }
    }
}

TEST_CASE("apply_keyframes") {
    MotionClip clip = make_minimal_clip(3, 12);

    SUBCASE("zero window only replaces the keyframed frame") {
        KeyframeEdit e;
        e.frame_index = 5;
        e.pose = clip.characters[0][5];
        e.pose.root_position = Vec3(9, 9, 9);
        const MotionClip out = apply_keyframes(clip, {e});
        CHECK(out.characters[0][5].root_position == Vec3(9, 9, 9));
        CHECK(out.characters[0][4].root_position == clip.characters[0][4].root_position);
        CHECK(out.characters[0][6].root_position == clip.characters[0][6].root_position);
    }

    SUBCASE("identity edit leaves the clip unchanged") {
        KeyframeEdit e;
        e.frame_index = 5;
        e.pose = clip.characters[0][5];
        e.blend_window = 4;
        const MotionClip out = apply_keyframes(clip, {e});
        for (int t = 0; t < clip.frame_count(); ++t) {
            CHECK((out.characters[0][t].root_position -
                   clip.characters[0][t].root_position).norm() < 1e-12);
            for (int j = 0; j < 3; ++j)
                CHECK(out.characters[0][t].joint_rotations[j].angularDistance(
                          clip.characters[0][t].joint_rotations[j]) < 1e-12);
        }
    }

    SUBCASE("linear ramp: one frame from keyframe at window 2 blends halfway") {
        KeyframeEdit e;
        e.frame_index = 5;
        e.pose = clip.characters[0][5];
        e.pose.joint_rotations[1] = axis_angle(Vec3::UnitX(), 40.0);
        e.blend_window = 2;
        const MotionClip out = apply_keyframes(clip, {e});
        CHECK(out.characters[0][4].joint_rotations[1].angularDistance(
                  axis_angle(Vec3::UnitX(), 20.0)) < 1e-12);
        CHECK(out.characters[0][6].joint_rotations[1].angularDistance(
                  axis_angle(Vec3::UnitX(), 20.0)) < 1e-12);
        // Window edge is untouched.
        CHECK(out.characters[0][3].joint_rotations[1].angularDistance(Quat::Identity()) <
              1e-12);
        CHECK(out.characters[0][7].joint_rotations[1].angularDistance(Quat::Identity()) <
              1e-12);
    }

    SUBCASE("overlapping windows rejected") {
        KeyframeEdit e1, e2;
        e1.frame_index = 4;
        e1.blend_window = 2;
        e1.pose = clip.characters[0][4];
        e2.frame_index = 7;
        e2.blend_window = 2;
        e2.pose = clip.characters[0][7];
        CHECK_THROWS_AS(apply_keyframes(clip, {e1, e2}), ValidationError);
        e2.frame_index = 8;
        e2.blend_window = 1;
        CHECK_NOTHROW(apply_keyframes(clip, {e1, e2}));
    }

    SUBCASE("out of range keyframe rejected") {
        KeyframeEdit e;
        e.frame_index = 40;
        e.pose = clip.characters[0][0];
        CHECK_THROWS_AS(apply_keyframes(clip, {e}), ValidationError);
    }
}
