#include "mocap/collision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mocap/errors.hpp"

namespace mocap {

namespace {

// GJK/EPA run on shape "cores" (sphere -> point, capsule -> segment,
// box -> box) and the swept radius is applied afterwards. Cores are
// polytopal, so GJK terminates exactly and shallow contacts between
// round shapes come out in closed form.

double core_margin(const BodyShape& s) {
    switch (s.kind) {
        case ShapeKind::Sphere: return s.radius();
        case ShapeKind::Capsule: return s.radius();
        case ShapeKind::Box: return 0.0;
    }
    return 0.0;
}

Vec3 core_support(const BodyShape& s, const Isometry& pose, const Vec3& world_dir) {
    const Vec3 d = pose.linear().transpose() * world_dir;  // into shape frame
    Vec3 local = Vec3::Zero();
    switch (s.kind) {
        case ShapeKind::Sphere:
            break;
        case ShapeKind::Capsule:
            local.z() = (d.z() >= 0.0) ? s.half_height() : -s.half_height();
            break;
        case ShapeKind::Box: {
            const Vec3 h = s.half_extents();
            local = Vec3(d.x() >= 0.0 ? h.x() : -h.x(),
                         d.y() >= 0.0 ? h.y() : -h.y(),
                         d.z() >= 0.0 ? h.z() : -h.z());
            break;
        }
    }
    return pose * local;
}

SupportVertex minkowski_support(const ConvexInstance& a, const ConvexInstance& b,
                                const Vec3& dir) {
    SupportVertex v;
    v.a = core_support(a.shape, a.world_pose, dir);
    v.b = core_support(b.shape, b.world_pose, -dir);
    v.w = v.a - v.b;
    return v;
}

// ---- Closest point on a simplex to the origin ----
//
// Reduces the simplex to the minimal face supporting the closest point and
// writes barycentric weights (aligned with the reduced vertices). Returns
// true when the origin is contained (tetrahedron case only).

struct SimplexClosest {
    Vec3 point = Vec3::Zero();
    std::array<double, 4> weights{};
    bool contains_origin = false;
};

SimplexClosest closest_on_segment(Simplex& s) {
    const Vec3 a = s.v[0].w, b = s.v[1].w;
    const Vec3 ab = b - a;
    const double denom = ab.squaredNorm();
    SimplexClosest out;
    if (denom < 1e-30) {
        s.count = 1;
        out.point = a;
        out.weights[0] = 1.0;
        return out;
    }
    double t = -a.dot(ab) / denom;
    if (t <= 0.0) {
        s.count = 1;
        out.point = a;
        out.weights[0] = 1.0;
    } else if (t >= 1.0) {
        s.v[0] = s.v[1];
        s.count = 1;
        out.point = b;
        out.weights[0] = 1.0;
    } else {
        s.count = 2;
        out.point = a + t * ab;
        out.weights[0] = 1.0 - t;
        out.weights[1] = t;
    }
    return out;
}

SimplexClosest closest_on_triangle(Simplex& s) {
    const Vec3 a = s.v[0].w, b = s.v[1].w, c = s.v[2].w;
    const Vec3 ab = b - a, ac = c - a;
    SimplexClosest out;

    const Vec3 ap = -a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) {  // vertex a
        s.count = 1;
        out.point = a;
        out.weights[0] = 1.0;
        return out;
    }
    const Vec3 bp = -b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) {  // vertex b
        s.v[0] = s.v[1];
        s.count = 1;
        out.point = b;
        out.weights[0] = 1.0;
        return out;
    }
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {  // edge ab
        const double t = d1 / (d1 - d3);
        s.count = 2;
        out.point = a + t * ab;
        out.weights[0] = 1.0 - t;
        out.weights[1] = t;
        return out;
    }
    const Vec3 cp = -c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) {  // vertex c
        s.v[0] = s.v[2];
        s.count = 1;
        out.point = c;
        out.weights[0] = 1.0;
        return out;
    }
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {  // edge ac
        const double t = d2 / (d2 - d6);
        s.v[1] = s.v[2];
        s.count = 2;
        out.point = a + t * ac;
        out.weights[0] = 1.0 - t;
        out.weights[1] = t;
        return out;
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {  // edge bc
        const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        s.v[0] = s.v[1];
        s.v[1] = s.v[2];
        s.count = 2;
        out.point = b + t * (c - b);
        out.weights[0] = 1.0 - t;
        out.weights[1] = t;
        return out;
    }
    // interior
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    s.count = 3;
    out.point = a + v * ab + w * ac;
    out.weights[0] = 1.0 - v - w;
    out.weights[1] = v;
    out.weights[2] = w;
    return out;
}

SimplexClosest closest_on_tetrahedron(Simplex& s) {
    const Vec3 a = s.v[0].w, b = s.v[1].w, c = s.v[2].w, d = s.v[3].w;

    auto outside_plane = [](const Vec3& p, const Vec3& q, const Vec3& r,
                            const Vec3& opposite) -> int {
        const Vec3 n = (q - p).cross(r - p);
        const double signp = n.dot(-p);
        const double signd = n.dot(opposite - p);
        if (std::abs(signd) < 1e-18) return -1;  // degenerate tetrahedron
        return (signp * signd < 0.0) ? 1 : 0;
    };

    const int out_abc = outside_plane(a, b, c, d);
    const int out_acd = outside_plane(a, c, d, b);
    const int out_adb = outside_plane(a, d, b, c);
    const int out_bdc = outside_plane(b, d, c, a);

    const bool degenerate = out_abc < 0 || out_acd < 0 || out_adb < 0 || out_bdc < 0;
    if (!degenerate && !out_abc && !out_acd && !out_adb && !out_bdc) {
        SimplexClosest out;
        out.contains_origin = true;
        return out;
    }

    // Origin outside (or tetrahedron degenerate): best face wins.
    SimplexClosest best;
    double best_dist = std::numeric_limits<double>::infinity();
    Simplex best_simplex;
    const std::array<std::array<int, 3>, 4> faces = {{{0, 1, 2}, {0, 2, 3}, {0, 3, 1}, {1, 3, 2}}};
    const std::array<int, 4> tested = {out_abc, out_acd, out_adb, out_bdc};
    for (int f = 0; f < 4; ++f) {
        if (!degenerate && tested[f] == 0) continue;
        Simplex sub;
        sub.count = 3;
        for (int k = 0; k < 3; ++k) sub.v[k] = s.v[faces[f][k]];
        SimplexClosest res = closest_on_triangle(sub);
        const double dist = res.point.squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = res;
            best_simplex = sub;
        }
    }
    s = best_simplex;
    return best;
}

SimplexClosest nearest_simplex(Simplex& s) {
    switch (s.count) {
        case 1: {
            SimplexClosest out;
            out.point = s.v[0].w;
            out.weights[0] = 1.0;
            return out;
        }
        case 2: return closest_on_segment(s);
        case 3: return closest_on_triangle(s);
        case 4: return closest_on_tetrahedron(s);
        default: {
            SimplexClosest out;
            out.contains_origin = true;
            return out;
        }
    }
}

struct CoreQuery {
    bool intersect = false;
    double distance = 0.0;
    Vec3 point_a = Vec3::Zero();
    Vec3 point_b = Vec3::Zero();
    Simplex simplex;
};

constexpr int kGjkMaxIterations = 64;
constexpr int kEpaMaxIterations = 128;
constexpr double kEpaTolerance = 1e-6;

CoreQuery gjk_core(const ConvexInstance& a, const ConvexInstance& b) {
    CoreQuery out;
    Vec3 v = a.world_pose.translation() - b.world_pose.translation();
    if (v.squaredNorm() < 1e-24) v = Vec3::UnitX();

    Simplex s;
    SupportVertex first = minkowski_support(a, b, -v);
    s.v[0] = first;
    s.count = 1;
    v = first.w;
    std::array<double, 4> weights = {1.0, 0.0, 0.0, 0.0};

    double dist = v.norm();
    for (int iter = 0; iter < kGjkMaxIterations; ++iter) {
        if (dist < 1e-12) {  // origin on the simplex: cores touch
            out.intersect = true;
            out.simplex = s;
            return out;
        }
        const SupportVertex w = minkowski_support(a, b, -v);

        // No further progress toward the origin: v is the closest point.
        const double progress = dist * dist - v.dot(w.w);
        if (progress <= 1e-13 * std::max(1.0, dist * dist)) break;

        bool duplicate = false;
        for (int i = 0; i < s.count; ++i) {
            if ((w.w - s.v[i].w).squaredNorm() < 1e-24) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) break;

        const Simplex s_before = s;
        s.v[s.count++] = w;
        SimplexClosest res = nearest_simplex(s);
        if (res.contains_origin) {
            out.intersect = true;
            out.simplex = s;
            return out;
        }
        const double new_dist = res.point.norm();
        if (new_dist >= dist - 1e-16) {  // stalled; keep the previous witness
            s = s_before;
            break;
        }
        v = res.point;
        weights = res.weights;
        dist = new_dist;
        if (iter == kGjkMaxIterations - 1)
            throw ConvergenceError("gjk did not converge after 64 iterations", dist);
    }

    out.distance = dist;
    out.point_a = Vec3::Zero();
    out.point_b = Vec3::Zero();
    for (int i = 0; i < s.count; ++i) {
        out.point_a += weights[i] * s.v[i].a;
        out.point_b += weights[i] * s.v[i].b;
    }
    out.simplex = s;
    return out;
}

// ---- EPA ----

struct EpaFace {
    int i0, i1, i2;
    Vec3 normal;     // outward unit normal
    double distance;  // plane distance from the origin
    bool alive = true;
};

struct EpaResult {
    double depth = 0.0;  // core penetration depth
    Vec3 direction = Vec3::UnitZ();
    Vec3 point_a = Vec3::Zero();
    Vec3 point_b = Vec3::Zero();
};

// Orientation fixed against a known interior point (initial tetrahedron only).
bool make_face(const std::vector<SupportVertex>& verts, int i0, int i1, int i2,
               const Vec3& interior, EpaFace& face) {
    const Vec3 p0 = verts[i0].w;
    Vec3 n = (verts[i1].w - p0).cross(verts[i2].w - p0);
    const double len = n.norm();
    if (len < 1e-14) return false;
    n /= len;
    if (n.dot(p0 - interior) < 0.0) {
        n = -n;
        std::swap(i1, i2);
    }
    face.i0 = i0;
    face.i1 = i1;
    face.i2 = i2;
    face.normal = n;
    face.distance = n.dot(p0);
    face.alive = true;
    return true;
}

// Orientation trusted from the winding order (horizon fan faces inherit the
// outward winding of the faces they replace).
bool make_face_winding(const std::vector<SupportVertex>& verts, int i0, int i1, int i2,
                       EpaFace& face) {
    const Vec3 p0 = verts[i0].w;
    Vec3 n = (verts[i1].w - p0).cross(verts[i2].w - p0);
    const double len = n.norm();
    if (len < 1e-14) return false;
    n /= len;
    face.i0 = i0;
    face.i1 = i1;
    face.i2 = i2;
    face.normal = n;
    face.distance = n.dot(p0);
    face.alive = true;
    return true;
}

// Builds an initial polytope around the origin from the GJK simplex,
// inflating degenerate simplices with extra supports. Returns false when the
// Minkowski difference itself is flat (no 3D polytope exists); `flat_normal`
// then carries the plane normal.
bool build_initial_polytope(const ConvexInstance& a, const ConvexInstance& b,
                            const Simplex& seed, std::vector<SupportVertex>& verts,
                            std::vector<EpaFace>& faces, Vec3& flat_normal) {
    verts.clear();
    for (int i = 0; i < seed.count; ++i) verts.push_back(seed.v[i]);

    auto try_add = [&](const Vec3& dir) {
        const SupportVertex sv = minkowski_support(a, b, dir);
        for (const SupportVertex& existing : verts)
            if ((existing.w - sv.w).squaredNorm() < 1e-22) return;
        verts.push_back(sv);
    };

    if (verts.size() < 4) {
        if (verts.size() == 2) {
            // Perpendicular fan around the segment.
            const Vec3 axis = (verts[1].w - verts[0].w).normalized();
            Vec3 u = axis.unitOrthogonal();
            const Vec3 w = axis.cross(u);
            try_add(u);
            try_add(-0.5 * u + 0.866025403784439 * w);
            try_add(-0.5 * u - 0.866025403784439 * w);
        } else if (verts.size() == 3) {
            const Vec3 n =
                (verts[1].w - verts[0].w).cross(verts[2].w - verts[0].w).normalized();
            try_add(n);
            try_add(-n);
        } else {
            const std::array<Vec3, 6> dirs = {Vec3(1, 0, 0),  Vec3(-1, 0, 0), Vec3(0, 1, 0),
                                              Vec3(0, -1, 0), Vec3(0, 0, 1),  Vec3(0, 0, -1)};
            for (const Vec3& d : dirs) try_add(d);
        }
    }

    // Greedy max-volume tetrahedron over the gathered vertices.
    const int n = static_cast<int>(verts.size());
    int best_i = 0, best_j = 1;
    double best = -1.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = (verts[i].w - verts[j].w).squaredNorm();
            if (d > best) {
                best = d;
                best_i = i;
                best_j = j;
            }
        }
    if (best < 1e-22) return false;  // all points coincide

    const Vec3 p0 = verts[best_i].w, p1 = verts[best_j].w;
    int best_k = -1;
    best = 1e-26;
    for (int k = 0; k < n; ++k) {
        if (k == best_i || k == best_j) continue;
        const double area = (p1 - p0).cross(verts[k].w - p0).squaredNorm();
        if (area > best) {
            best = area;
            best_k = k;
        }
    }
    if (best_k < 0) {  // collinear set
        flat_normal = (p1 - p0).unitOrthogonal();
        return false;
    }
    const Vec3 p2 = verts[best_k].w;
    const Vec3 plane_n = (p1 - p0).cross(p2 - p0).normalized();
    int best_l = -1;
    best = 1e-14;
    for (int l = 0; l < n; ++l) {
        if (l == best_i || l == best_j || l == best_k) continue;
        const double vol = std::abs(plane_n.dot(verts[l].w - p0));
        if (vol > best) {
            best = vol;
            best_l = l;
        }
    }
    if (best_l < 0) {
        // One more attempt straight off the plane before declaring flatness.
        try_add(plane_n);
        try_add(-plane_n);
        for (int l = n; l < static_cast<int>(verts.size()); ++l) {
            const double vol = std::abs(plane_n.dot(verts[l].w - p0));
            if (vol > best) {
                best = vol;
                best_l = l;
            }
        }
        if (best_l < 0) {
            flat_normal = plane_n;
            return false;
        }
    }

    const std::array<int, 4> tet = {best_i, best_j, best_k, best_l};
    const Vec3 interior = 0.25 * (verts[tet[0]].w + verts[tet[1]].w + verts[tet[2]].w +
                                  verts[tet[3]].w);
    faces.clear();
    const std::array<std::array<int, 3>, 4> tris = {
        {{tet[0], tet[1], tet[2]}, {tet[0], tet[1], tet[3]}, {tet[0], tet[2], tet[3]},
         {tet[1], tet[2], tet[3]}}};
    for (const auto& t : tris) {
        EpaFace f;
        if (make_face(verts, t[0], t[1], t[2], interior, f)) faces.push_back(f);
    }
    return faces.size() == 4;
}

EpaResult epa_core(const ConvexInstance& a, const ConvexInstance& b, const Simplex& seed) {
    std::vector<SupportVertex> verts;
    std::vector<EpaFace> faces;
    Vec3 flat_normal = Vec3::UnitZ();
    if (!build_initial_polytope(a, b, seed, verts, faces, flat_normal)) {
        // Flat Minkowski difference: zero core depth out of the plane.
        EpaResult out;
        out.depth = 0.0;
        out.direction = flat_normal;
        if (!verts.empty()) {
            out.point_a = verts[0].a;
            out.point_b = verts[0].b;
        }
        return out;
    }

    auto face_result = [&verts](const EpaFace& face) {
        EpaResult out;
        out.depth = std::max(face.distance, 0.0);
        out.direction = face.normal;
        // Witnesses from the barycentric projection of the origin onto the face.
        Simplex tri;
        tri.count = 3;
        tri.v[0] = verts[face.i0];
        tri.v[1] = verts[face.i1];
        tri.v[2] = verts[face.i2];
        SimplexClosest res = closest_on_triangle(tri);
        out.point_a = Vec3::Zero();
        out.point_b = Vec3::Zero();
        for (int i = 0; i < tri.count; ++i) {
            out.point_a += res.weights[i] * tri.v[i].a;
            out.point_b += res.weights[i] * tri.v[i].b;
        }
        return out;
    };

    double lower = 0.0, upper = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < kEpaMaxIterations; ++iter) {
        // Nearest face to the origin.
        int nearest = -1;
        double d_min = std::numeric_limits<double>::infinity();
        for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
            if (!faces[f].alive) continue;
            if (faces[f].distance < d_min) {
                d_min = faces[f].distance;
                nearest = f;
            }
        }
        if (nearest < 0) break;
        const EpaFace face = faces[nearest];
        lower = std::max(lower, std::max(d_min, 0.0));

        const SupportVertex w = minkowski_support(a, b, face.normal);
        const double support_dist = w.w.dot(face.normal);
        upper = std::min(upper, support_dist);

        if (support_dist - d_min < kEpaTolerance) return face_result(face);

        // Expand: remove faces visible from w; fan new faces over the horizon.
        // Horizon edges keep the winding of the faces they belonged to, so the
        // fan inherits outward orientation.
        const int wi = static_cast<int>(verts.size());
        verts.push_back(w);
        std::vector<std::pair<int, int>> horizon;
        auto toggle = [&horizon](int u, int v) {
            for (auto it = horizon.begin(); it != horizon.end(); ++it) {
                if (it->first == v && it->second == u) {
                    horizon.erase(it);
                    return;
                }
            }
            horizon.emplace_back(u, v);
        };
        bool removed_any = false;
        for (EpaFace& f : faces) {
            if (!f.alive) continue;
            if (f.normal.dot(w.w - verts[f.i0].w) > 1e-12) {
                f.alive = false;
                removed_any = true;
                toggle(f.i0, f.i1);
                toggle(f.i1, f.i2);
                toggle(f.i2, f.i0);
            }
        }
        if (!removed_any || horizon.empty()) return face_result(face);
        bool fan_ok = true;
        for (const auto& [u, v] : horizon) {
            EpaFace f;
            if (!make_face_winding(verts, u, v, wi, f)) {
                fan_ok = false;
                break;
            }
            faces.push_back(f);
        }
        // A degenerate fan triangle means the support point is essentially on
        // the hull already; the current nearest face is the answer.
        if (!fan_ok) return face_result(face);
    }
    throw ConvergenceError(
        "epa did not converge after 128 iterations (bounds " + std::to_string(lower) +
            " / " + std::to_string(upper) + ")",
        lower);
}

// ---- Broadphase ----

struct Aabb {
    Vec3 lo, hi;
    bool overlaps(const Aabb& o) const {
        return (lo.array() <= o.hi.array()).all() && (o.lo.array() <= hi.array()).all();
    }
};

Aabb shape_aabb(const BodyShape& s, const Isometry& pose, double margin) {
    Aabb box;
    switch (s.kind) {
        case ShapeKind::Sphere: {
            const Vec3 c = pose.translation();
            const double r = s.radius() + margin;
            box.lo = c - Vec3::Constant(r);
            box.hi = c + Vec3::Constant(r);
            break;
        }
        case ShapeKind::Capsule: {
            const Vec3 e0 = pose * Vec3(0, 0, s.half_height());
            const Vec3 e1 = pose * Vec3(0, 0, -s.half_height());
            const double r = s.radius() + margin;
            box.lo = e0.cwiseMin(e1) - Vec3::Constant(r);
            box.hi = e0.cwiseMax(e1) + Vec3::Constant(r);
            break;
        }
        case ShapeKind::Box: {
            const Vec3 c = pose.translation();
            const Vec3 ext = pose.linear().cwiseAbs() * s.half_extents();
            box.lo = c - ext - Vec3::Constant(margin);
            box.hi = c + ext + Vec3::Constant(margin);
            break;
        }
    }
    return box;
}

constexpr double kBroadphaseMargin = 0.01;  // 1 cm

}  // namespace

GjkResult gjk_query(const ConvexInstance& a, const ConvexInstance& b) {
    const double margin = core_margin(a.shape) + core_margin(b.shape);
    const CoreQuery core = gjk_core(a, b);

    if (!core.intersect && core.distance > margin) {
        GjkDisjoint out;
        out.distance = core.distance - margin;
        const Vec3 axis = (core.point_a - core.point_b) / core.distance;
        out.point_a = core.point_a - core_margin(a.shape) * axis;
        out.point_b = core.point_b + core_margin(b.shape) * axis;
        return out;
    }

    GjkIntersecting out;
    out.simplex = core.simplex;
    out.cores_intersect = core.intersect;
    out.core_distance = core.intersect ? 0.0 : core.distance;
    out.core_point_a = core.point_a;
    out.core_point_b = core.point_b;
    return out;
}

PenetrationResult epa_penetration(const ConvexInstance& a, const ConvexInstance& b,
                                  const GjkIntersecting& seed) {
    const double ra = core_margin(a.shape);
    const double rb = core_margin(b.shape);
    PenetrationResult out;

    if (!seed.cores_intersect && seed.core_distance > 1e-12) {
        // Only the swept radii overlap; the core witness pair gives the
        // minimum translation exactly.
        const Vec3 axis = (seed.core_point_a - seed.core_point_b) / seed.core_distance;
        out.depth = (ra + rb) - seed.core_distance;
        out.direction = axis;
        const Vec3 surf_a = seed.core_point_a - ra * axis;
        const Vec3 surf_b = seed.core_point_b + rb * axis;
        out.witness_point = 0.5 * (surf_a + surf_b);
        return out;
    }

    const EpaResult res = epa_core(a, b, seed.simplex);
    // Core EPA yields the nearest boundary point v of the core difference;
    // separating translation for A is -v, and margins dilate depth by ra+rb.
    out.depth = res.depth + ra + rb;
    out.direction = -res.direction;
    const Vec3 surf_a = res.point_a - ra * out.direction;
    const Vec3 surf_b = res.point_b + rb * out.direction;
    out.witness_point = 0.5 * (surf_a + surf_b);
    return out;
}

double signed_distance(const ConvexInstance& a, const ConvexInstance& b) {
    const GjkResult res = gjk_query(a, b);
    if (const auto* d = std::get_if<GjkDisjoint>(&res)) return d->distance;
    return -epa_penetration(a, b, std::get<GjkIntersecting>(res)).depth;
}

double PenetrationSeries::max_rho() const {
    double m = 0.0;
    for (double r : rho) m = std::max(m, r);
    return m;
}

double PenetrationSeries::mean_rho() const {
    if (rho.empty()) return 0.0;
    double s = 0.0;
    for (double r : rho) s += r;
    return s / rho.size();
}

int PenetrationSeries::frames_above(double threshold) const {
    int n = 0;
    for (double r : rho)
        if (r > threshold) ++n;
    return n;
}

PairSet default_exclusions(const std::vector<const Skeleton*>& skeletons) {
    PairSet excl;
    int offset = 0;
    for (const Skeleton* sk : skeletons) {
        for (int j = 1; j < sk->joint_count(); ++j) {
            const int p = sk->joints[j].parent;
            excl.emplace(offset + std::min(p, j), offset + std::max(p, j));
        }
        offset += sk->joint_count();
    }
    return excl;
}

FramePenetration frame_penetration(
    const std::vector<std::pair<const Skeleton*, const Frame*>>& posed,
    const PairSet& exclusions) {
    struct Body {
        int character;
        int joint;
        ConvexInstance instance;
        Aabb aabb;
    };
    std::vector<Body> bodies;
    for (size_t c = 0; c < posed.size(); ++c) {
        const Skeleton& sk = *posed[c].first;
        const FKResult fk = forward_kinematics(sk, *posed[c].second);
        for (int j = 0; j < sk.joint_count(); ++j) {
            Body body;
            body.character = static_cast<int>(c);
            body.joint = j;
            body.instance.shape = sk.joints[j].shape;
            body.instance.world_pose = fk.body_transforms[j];
            body.aabb = shape_aabb(body.instance.shape, body.instance.world_pose,
                                   kBroadphaseMargin);
            bodies.push_back(std::move(body));
        }
    }

    FramePenetration out;
    const int n = static_cast<int>(bodies.size());
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const Body& A = bodies[i];
            const Body& B = bodies[j];
            const bool same_char = A.character == B.character;
            if (same_char && exclusions.count({i, j})) continue;
            if (same_char && A.instance.shape.collision_group != 0 &&
                A.instance.shape.collision_group == B.instance.shape.collision_group)
                continue;
            if (!A.aabb.overlaps(B.aabb)) continue;

            try {
                const GjkResult res = gjk_query(A.instance, B.instance);
                if (const auto* hit = std::get_if<GjkIntersecting>(&res)) {
                    PenetrationResult pr = epa_penetration(A.instance, B.instance, *hit);
                    pr.pair = {i, j};
                    out.rho = std::max(out.rho, pr.depth);
                    if (same_char)
                        out.rho_self = std::max(out.rho_self, pr.depth);
                    else
                        out.rho_inter = std::max(out.rho_inter, pr.depth);
                    out.results.push_back(std::move(pr));
                }
            } catch (const ConvergenceError& e) {
                throw ConvergenceError("body pair (" + std::to_string(i) + ", " +
                                           std::to_string(j) + "): " + e.what(),
                                       e.best_bound);
            }
        }
    }
    return out;
}

PenetrationSeries clip_penetration_series(const MotionClip& clip, double report_threshold) {
    std::vector<const Skeleton*> skels(clip.character_count(), &clip.skeleton);
    const PairSet excl = default_exclusions(skels);

    PenetrationSeries series;
    const int n = clip.frame_count();
    series.rho.reserve(n);
    for (int t = 0; t < n; ++t) {
        std::vector<std::pair<const Skeleton*, const Frame*>> posed;
        posed.reserve(clip.character_count());
        for (int c = 0; c < clip.character_count(); ++c)
            posed.emplace_back(&clip.skeleton, &clip.characters[c][t]);
        try {
            FramePenetration fp = frame_penetration(posed, excl);
            series.rho.push_back(fp.rho);
            series.rho_self.push_back(fp.rho_self);
            series.rho_inter.push_back(fp.rho_inter);
            series.per_pair.push_back(std::move(fp.results));
        } catch (const ConvergenceError& e) {
            throw ConvergenceError("frame " + std::to_string(t) + ": " + e.what(),
                                   e.best_bound);
        }
    }
    for (int t = 1; t + 1 < n; ++t) {
        if (series.rho[t] > report_threshold && series.rho[t] > series.rho[t - 1] &&
            series.rho[t] > series.rho[t + 1])
            series.peaks.push_back(t);
    }
    return series;
}

std::string penetration_series_csv(const PenetrationSeries& series) {
    std::string csv = "frame,rho,pair_a,pair_b,depth,dir_x,dir_y,dir_z\n";
    char buf[256];
    for (size_t t = 0; t < series.rho.size(); ++t) {
        if (series.per_pair[t].empty()) {
            std::snprintf(buf, sizeof(buf), "%zu,%.9g,,,,,,\n", t, series.rho[t]);
            csv += buf;
            continue;
        }
        for (const PenetrationResult& pr : series.per_pair[t]) {
            std::snprintf(buf, sizeof(buf), "%zu,%.9g,%d,%d,%.9g,%.9g,%.9g,%.9g\n", t,
                          series.rho[t], pr.pair.first, pr.pair.second, pr.depth,
                          pr.direction.x(), pr.direction.y(), pr.direction.z());
            csv += buf;
        }
    }
    return csv;
}

}  // namespace mocap
