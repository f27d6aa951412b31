#pragma once

#include <array>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mocap/math.hpp"
#include "mocap/motion_clip.hpp"
#include "mocap/skeleton.hpp"

namespace mocap {

struct ConvexInstance {
    BodyShape shape;
    Isometry world_pose = Isometry::Identity();
};

// Support vertex on the Minkowski difference A - B, with the contributing
// points on each core shape.
struct SupportVertex {
    Vec3 w = Vec3::Zero();  // point_a - point_b
    Vec3 a = Vec3::Zero();
    Vec3 b = Vec3::Zero();
};

struct Simplex {
    std::array<SupportVertex, 4> v;
    int count = 0;
};

struct GjkDisjoint {
    double distance = 0.0;  // surface-to-surface distance
    Vec3 point_a = Vec3::Zero();
    Vec3 point_b = Vec3::Zero();
};

// Shapes overlap. Carries everything EPA needs: the terminating core simplex
// and, when only the margins overlap (cores still separated), the exact core
// witness pair from which the penetration is known in closed form.
struct GjkIntersecting {
    Simplex simplex;
    bool cores_intersect = false;  // origin enclosed by the core difference
    double core_distance = 0.0;    // core-to-core distance (0 if cores intersect)
    Vec3 core_point_a = Vec3::Zero();
    Vec3 core_point_b = Vec3::Zero();
};

using GjkResult = std::variant<GjkDisjoint, GjkIntersecting>;

struct PenetrationResult {
    std::pair<int, int> pair{-1, -1};  // flat body indices within the scene
    double depth = 0.0;                // meters, >= 0
    Vec3 direction = Vec3::UnitZ();    // minimum-translation direction from A out of B
    Vec3 witness_point = Vec3::Zero();
};

struct FramePenetration {
    double rho = 0.0;        // max depth over all pairs
    double rho_self = 0.0;   // max over intra-character pairs
    double rho_inter = 0.0;  // max over cross-character pairs
    std::vector<PenetrationResult> results;
};

struct PenetrationSeries {
    std::vector<double> rho;
    std::vector<double> rho_self;
    std::vector<double> rho_inter;
    std::vector<std::vector<PenetrationResult>> per_pair;
    std::vector<int> peaks;  // strict local maxima above the report threshold

    double max_rho() const;
    double mean_rho() const;
    int frames_above(double threshold) const;
};

// ---- Narrowphase ----

// Distance query on convex shapes. Distances for disjoint pairs are exact to
// tolerance (sphere/capsule cores are points/segments, so in practice machine
// precision). Throws ConvergenceError after 64 iterations.
GjkResult gjk_query(const ConvexInstance& a, const ConvexInstance& b);

// Minimum translation depth + direction for an overlapping pair. Requires the
// GjkIntersecting seed from gjk_query. Polytope expansion terminates when the
// bound gap drops below 1e-6 m; throws ConvergenceError after 128 iterations.
PenetrationResult epa_penetration(const ConvexInstance& a, const ConvexInstance& b,
                                  const GjkIntersecting& seed);

// Convenience: distance if disjoint, -depth if penetrating.
double signed_distance(const ConvexInstance& a, const ConvexInstance& b);

// ---- Per-frame / per-clip statistics ----

using PairSet = std::set<std::pair<int, int>>;

// Adjacent parent-child body pairs, expressed as flat scene indices, for all
// characters. These touch structurally at the joints and are excluded from
// self-penetration by default.
PairSet default_exclusions(const std::vector<const Skeleton*>& skeletons);

FramePenetration frame_penetration(
    const std::vector<std::pair<const Skeleton*, const Frame*>>& posed,
    const PairSet& exclusions);

PenetrationSeries clip_penetration_series(const MotionClip& clip,
                                          double report_threshold = 0.01);

// CSV export: one row per intersecting pair per frame, plus a summary row
// when a frame has no intersections.
std::string penetration_series_csv(const PenetrationSeries& series);

}  // namespace mocap
