#include "mocap/gait.hpp"

#include <cmath>

#include "mocap/errors.hpp"
#include "mocap/humanoid.hpp"

namespace mocap {

namespace {

Quat pitch(double angle) { return Quat(Eigen::AngleAxisd(angle, Vec3::UnitY())); }

}  // namespace

std::vector<Quat> gait_targets(const Skeleton& skeleton, const GaitParams& gait, double t) {
    const double ramp = gait.warmup > 0.0 ? std::min(1.0, std::max(0.0, t / gait.warmup)) : 1.0;
    const double phase = 2.0 * M_PI * t / gait.cycle_time;

    std::vector<Quat> targets(skeleton.joint_count(), Quat::Identity());
    auto set = [&](const std::string& name, const Quat& q) {
        const int idx = skeleton.find_joint(name);
        if (idx >= 0) targets[idx] = q;
    };

    for (int side = 0; side < 2; ++side) {
        const double leg_phase = phase + (side == 0 ? 0.0 : M_PI);
        const std::string p = side == 0 ? "l_" : "r_";

        // Negative pitch about +y swings the leg forward (+x).
        const double hip = -gait.hip_swing * ramp * std::sin(leg_phase);
        const double swing = std::max(0.0, std::sin(leg_phase + 0.45));
        const double knee = ramp * (0.08 + gait.knee_lift * swing * swing);
        const double ankle = -(hip + knee) * 0.9;  // keep the sole near level

        set(p + "hip", pitch(hip));
        set(p + "knee", pitch(knee));
        set(p + "foot", pitch(ankle));

        // Arms counter-swing against the same-side leg.
        set(p + "shoulder", pitch(gait.arm_swing * ramp * std::sin(leg_phase)));
        set(p + "elbow", pitch(-0.25 * ramp));
    }
    return targets;
}

RootTarget gait_root_target(const GaitParams& gait, double t, const Vec3& start_offset) {
    const double ramp = gait.warmup > 0.0 ? std::min(1.0, std::max(0.0, t / gait.warmup)) : 1.0;
    const double phase = 2.0 * M_PI * t / gait.cycle_time;

    RootTarget rt;
    // Forward progress integrates the ramped speed.
    const double travelled =
        t <= gait.warmup ? 0.5 * gait.speed * t * t / std::max(gait.warmup, 1e-9)
                         : gait.speed * (t - 0.5 * gait.warmup);
    rt.position = start_offset +
                  Vec3(travelled, 0.0, gait.root_height + gait.root_bob * ramp *
                                           std::sin(2.0 * phase));
    rt.lin_vel = Vec3(gait.speed * ramp, 0.0, 0.0);
    rt.rotation = Quat::Identity();
    rt.ang_vel = Vec3::Zero();
    rt.kp_pos = 5000.0;
    rt.kd_pos = 600.0;
    rt.kp_rot = 800.0;
    rt.kd_rot = 120.0;
    return rt;
}

MotionClip generate_walk_clip(double seconds, double fps, int characters,
                              double lateral_spacing, const GaitParams& gait) {
    if (characters < 1) throw ValidationError("need at least one character");
    const Skeleton humanoid = default_humanoid();

    SimConfig config;
    std::vector<Skeleton> skeletons(characters, humanoid);
    std::vector<PDParams> pds(characters, default_pd_params(humanoid));
    SimWorld world(skeletons, config, pds);

    std::vector<Vec3> offsets(characters);
    for (int c = 0; c < characters; ++c) {
        const double y = (c - 0.5 * (characters - 1)) * lateral_spacing;
        offsets[c] = Vec3(0.0, y, 0.0);
    }

    SimState state = world.initial_state();
    for (int c = 0; c < characters; ++c)
        state.characters[c].root_position = offsets[c] + Vec3(0, 0, gait.root_height + 0.01);

    const int substeps = config.control_substeps;
    const double dt = config.sim_dt;
    const int settle_steps = static_cast<int>(std::round((gait.warmup + 0.4) * fps));
    const int record_steps = static_cast<int>(std::round(seconds * fps));

    MotionClip clip;
    clip.skeleton = humanoid;
    clip.fps = fps;
    clip.characters.assign(characters, {});

    Vec3 record_origin = Vec3::Zero();
    double t = 0.0;
    for (int step = 0; step < settle_steps + record_steps; ++step) {
        std::vector<std::vector<Quat>> targets(characters);
        std::vector<RootTarget> harness(characters);
        for (int c = 0; c < characters; ++c) {
            targets[c] = gait_targets(humanoid, gait, t);
            harness[c] = gait_root_target(gait, t, offsets[c]);
        }
        for (int s = 0; s < substeps; ++s) state = world.step(state, targets, dt, &harness);
        t += 1.0 / fps;

        if (step == settle_steps)
            record_origin = Vec3(state.characters[0].root_position.x(), 0.0, 0.0);
        if (step >= settle_steps) {
            for (int c = 0; c < characters; ++c) {
                Frame f = world.state_to_frame(state, c);
                f.root_position -= record_origin;
                clip.characters[c].push_back(std::move(f));
            }
        }
    }
    clip.validate();
    return clip;
}

}  // namespace mocap
