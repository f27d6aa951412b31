#include "mocap/physics_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mocap/collision.hpp"
#include "mocap/errors.hpp"

namespace mocap {

namespace {

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

// Plucker motion transform from frame A to frame B, where B's origin sits at
// r (A coords) and E rotates A coords into B coords.
Mat6 motion_transform(const Mat3& E, const Vec3& r) {
    Mat6 X = Mat6::Zero();
    X.topLeftCorner<3, 3>() = E;
    X.bottomLeftCorner<3, 3>() = -E * skew(r);
    X.bottomRightCorner<3, 3>() = E;
    return X;
}

// Motion-vector cross product matrix (v x).
Mat6 crm(const Vec6& v) {
    Mat6 m = Mat6::Zero();
    const Mat3 w = skew(v.head<3>());
    m.topLeftCorner<3, 3>() = w;
    m.bottomLeftCorner<3, 3>() = skew(v.tail<3>());
    m.bottomRightCorner<3, 3>() = w;
    return m;
}

// Force-vector cross product matrix (v x*).
Mat6 crf(const Vec6& v) { return -crm(v).transpose(); }

Vec6 spatial(const Vec3& ang, const Vec3& lin) {
    Vec6 v;
    v << ang, lin;
    return v;
}

struct BodyFrame {
    Mat3 rot;       // world
    Vec3 origin;    // world
    Vec3 omega;     // world angular velocity
    Vec3 vel;       // world velocity of the body origin point
};

double solve_damping_ratio(double restitution) {
    const double L = std::log(1.0 / std::max(restitution, 1e-4));
    return L / std::sqrt(M_PI * M_PI + L * L);
}

}  // namespace

Vec3 shape_inertia_diagonal(const BodyShape& shape) {
    const double m = shape.mass;
    switch (shape.kind) {
        case ShapeKind::Sphere: {
            const double r = shape.radius();
            return Vec3::Constant(0.4 * m * r * r);
        }
        case ShapeKind::Capsule: {
            // Cylinder of length 2h plus two hemispherical caps, uniform density.
            const double r = shape.radius(), h = shape.half_height();
            const double vol_cyl = M_PI * r * r * 2.0 * h;
            const double vol_cap = (4.0 / 3.0) * M_PI * r * r * r;
            const double density = m / (vol_cyl + vol_cap);
            const double mc = density * vol_cyl;
            const double mh = 0.5 * density * vol_cap;  // one hemisphere
            const double L = 2.0 * h;
            const double ixx = mc * (3 * r * r + L * L) / 12.0 +
                               2.0 * mh * (0.4 * r * r + h * h + 0.75 * h * r);
            const double izz = 0.5 * mc * r * r + 2.0 * mh * 0.4 * r * r;
            return Vec3(ixx, ixx, izz);
        }
        case ShapeKind::Box: {
            const Vec3 h = shape.half_extents();
            return Vec3(m * (h.y() * h.y() + h.z() * h.z()) / 3.0,
                        m * (h.x() * h.x() + h.z() * h.z()) / 3.0,
                        m * (h.x() * h.x() + h.y() * h.y()) / 3.0);
        }
    }
    return Vec3::Ones();
}

Quat pd_target(const Quat& q_t, const Quat& q_ref_next, double alpha, const Quat& residual) {
    Quat base = slerp(q_t, q_ref_next, alpha);
    Quat out = residual * base;
    out.normalize();
    return out;
}

SimWorld::SimWorld(std::vector<Skeleton> skeletons, SimConfig config,
                   std::vector<PDParams> pd_params, std::optional<BodyShape> ball)
    : skeletons_(std::move(skeletons)), config_(config), pd_params_(std::move(pd_params)),
      ball_shape_(std::move(ball)) {
    if (skeletons_.empty()) throw ValidationError("sim world needs at least one character");
    if (pd_params_.size() != skeletons_.size())
        throw ValidationError("one PDParams per character required");
    if (!(config_.sim_dt > 0.0)) throw ValidationError("sim_dt must be > 0");
    if (config_.control_substeps < 1)
        throw ValidationError("control rate must divide sim rate");
    for (size_t c = 0; c < skeletons_.size(); ++c) {
        skeletons_[c].validate();
        const int n = skeletons_[c].joint_count();
        if (static_cast<int>(pd_params_[c].kp.size()) != n ||
            static_cast<int>(pd_params_[c].kd.size()) != n ||
            static_cast<int>(pd_params_[c].torque_limit.size()) != n)
            throw ValidationError("PDParams arrays must match joint count");
        build_character(skeletons_[c]);
    }
    if (ball_shape_) {
        if (ball_shape_->kind != ShapeKind::Sphere)
            throw ValidationError("ball object must be a sphere");
        ball_mass_ = ball_shape_->mass;
        ball_inertia_ = shape_inertia_diagonal(*ball_shape_).asDiagonal();
    }
    build_pairs();
}

void SimWorld::build_character(const Skeleton& sk) {
    std::vector<BodyNode> nodes;
    double total = 0.0;
    for (int i = 0; i < sk.joint_count(); ++i) {
        const JointSpec& spec = sk.joints[i];
        BodyNode node;
        node.parent = spec.parent;
        node.type = spec.type;
        node.axis = spec.axis.normalized();
        node.offset = spec.local_offset;
        node.shape = spec.shape;
        node.mass = spec.shape.mass;
        total += node.mass;

        const Mat3 R = spec.shape.local_pose.linear();
        node.com = spec.shape.local_pose.translation();
        node.inertia_com = R * shape_inertia_diagonal(spec.shape).asDiagonal() * R.transpose();
        if (node.inertia_com.determinant() <= 0.0)
            throw ValidationError("joint '" + spec.name + "': singular body inertia");

        const Mat3 cx = skew(node.com);
        node.spatial_inertia = Mat6::Zero();
        node.spatial_inertia.topLeftCorner<3, 3>() =
            node.inertia_com + node.mass * cx * cx.transpose();
        node.spatial_inertia.topRightCorner<3, 3>() = node.mass * cx;
        node.spatial_inertia.bottomLeftCorner<3, 3>() = node.mass * cx.transpose();
        node.spatial_inertia.bottomRightCorner<3, 3>() = node.mass * Mat3::Identity();
        nodes.push_back(std::move(node));
    }
    bodies_.push_back(std::move(nodes));
    character_mass_.push_back(total);
}

double SimWorld::body_mass(int c, int j) const { return bodies_[c][j].mass; }

Vec3 SimWorld::body_inertia_diag(int c, int j) const {
    return bodies_[c][j].inertia_com.diagonal();
}

void SimWorld::build_pairs() {
    pairs_.clear();
    const int nc = character_count();
    for (int c = 0; c < nc; ++c) {
        if (!config_.self_collision) break;
        const auto& sk = skeletons_[c];
        for (int i = 0; i < sk.joint_count(); ++i) {
            for (int j = i + 1; j < sk.joint_count(); ++j) {
                if (sk.joints[j].parent == i || sk.joints[i].parent == j) continue;
                const int ga = sk.joints[i].shape.collision_group;
                const int gb = sk.joints[j].shape.collision_group;
                if (ga != 0 && ga == gb) continue;
                pairs_.push_back({c, i, c, j});
            }
        }
    }
    if (config_.character_collision) {
        for (int a = 0; a < nc; ++a)
            for (int b = a + 1; b < nc; ++b)
                for (int i = 0; i < skeletons_[a].joint_count(); ++i)
                    for (int j = 0; j < skeletons_[b].joint_count(); ++j)
                        pairs_.push_back({a, i, b, j});
    }
    if (ball_shape_) {
        for (int c = 0; c < nc; ++c)
            for (int j = 0; j < skeletons_[c].joint_count(); ++j)
                pairs_.push_back({c, j, -1, 0});
    }
}

SimState SimWorld::initial_state() const {
    SimState state;
    for (int c = 0; c < character_count(); ++c) {
        CharacterSimState cs;
        cs.joint_rotations.assign(skeletons_[c].joint_count(), Quat::Identity());
        cs.joint_ang_vel.assign(skeletons_[c].joint_count(), Vec3::Zero());
        state.characters.push_back(std::move(cs));
    }
    if (ball_shape_) state.ball = BallState{};
    return state;
}

Frame SimWorld::state_to_frame(const SimState& state, int character) const {
    const CharacterSimState& cs = state.characters.at(character);
    Frame f;
    f.root_position = cs.root_position;
    f.root_rotation = cs.root_rotation;
    f.joint_rotations = cs.joint_rotations;
    return f;
}

SimState SimWorld::step(const SimState& state,
                        const std::vector<std::vector<Quat>>& joint_targets, double dt,
                        const std::vector<RootTarget>* harness, StepInfo* info) const {
    const int nc = character_count();
    if (static_cast<int>(state.characters.size()) != nc)
        throw ValidationError("state character count mismatch");
    if (static_cast<int>(joint_targets.size()) != nc)
        throw ValidationError("joint target count mismatch");

    const ContactParams& cp = config_.contacts;

    // ---- world kinematics (poses and velocities per body) ----
    std::vector<std::vector<BodyFrame>> frames(nc);
    for (int c = 0; c < nc; ++c) {
        const auto& nodes = bodies_[c];
        const CharacterSimState& cs = state.characters[c];
        frames[c].resize(nodes.size());
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].parent < 0) {
                frames[c][i].rot = cs.root_rotation.toRotationMatrix();
                frames[c][i].origin = cs.root_position;
                frames[c][i].omega = config_.fixed_base ? Vec3::Zero() : cs.root_ang_vel;
                frames[c][i].vel = config_.fixed_base ? Vec3::Zero() : cs.root_lin_vel;
            } else {
                const BodyFrame& p = frames[c][nodes[i].parent];
                BodyFrame& f = frames[c][i];
                f.origin = p.origin + p.rot * nodes[i].offset;
                f.rot = p.rot * cs.joint_rotations[i].toRotationMatrix();
                Vec3 omega_joint = cs.joint_ang_vel[i];
                if (nodes[i].type == JointType::Revolute)
                    omega_joint = nodes[i].axis * nodes[i].axis.dot(omega_joint);
                else if (nodes[i].type == JointType::Fixed)
                    omega_joint.setZero();
                f.omega = p.omega + f.rot * omega_joint;
                f.vel = p.vel + p.omega.cross(f.origin - p.origin);
            }
        }
    }

    // ---- external forces (world frame, applied at body origins) ----
    struct Wrench {
        Vec3 force = Vec3::Zero();
        Vec3 torque = Vec3::Zero();  // about the body origin
    };
    std::vector<std::vector<Wrench>> ext(nc);
    for (int c = 0; c < nc; ++c) ext[c].resize(bodies_[c].size());
    Wrench ball_ext;

    auto apply_force = [&](int c, int j, const Vec3& point, const Vec3& force) {
        if (c < 0) {
            ball_ext.force += force;
            ball_ext.torque += (point - state.ball->position).cross(force);
        } else {
            ext[c][j].force += force;
            ext[c][j].torque += (point - frames[c][j].origin).cross(force);
        }
    };

    // gravity
    for (int c = 0; c < nc; ++c)
        for (size_t j = 0; j < bodies_[c].size(); ++j) {
            const Vec3 com_w = frames[c][j].origin + frames[c][j].rot * bodies_[c][j].com;
            apply_force(c, static_cast<int>(j), com_w, bodies_[c][j].mass * config_.gravity);
        }
    if (state.ball) ball_ext.force += ball_mass_ * config_.gravity;

    // root harness (gait generation only)
    if (harness) {
        for (int c = 0; c < nc && c < static_cast<int>(harness->size()); ++c) {
            const RootTarget& rt = (*harness)[c];
            const CharacterSimState& cs = state.characters[c];
            const Vec3 f = rt.kp_pos * (rt.position - cs.root_position) +
                           rt.kd_pos * (rt.lin_vel - cs.root_lin_vel);
            const Vec3 rot_err = quat_log(rt.rotation * cs.root_rotation.inverse());
            const Vec3 tq = rt.kp_rot * rot_err + rt.kd_rot * (rt.ang_vel - cs.root_ang_vel);
            ext[c][0].force += f;
            ext[c][0].torque += tq;
        }
    }

    // ---- ground contacts with stiction anchors ----
    std::map<std::tuple<int, int, int>, Vec3> old_anchors;
    for (const ContactAnchor& a : state.anchors)
        old_anchors[{a.character, a.joint, a.slot}] = a.anchor;
    std::vector<ContactAnchor> new_anchors;
    if (info) info->contacts.clear();

    auto point_velocity = [&](int c, int j, const Vec3& p) -> Vec3 {
        if (c < 0)
            return state.ball->lin_vel + state.ball->ang_vel.cross(p - state.ball->position);
        const BodyFrame& f = frames[c][j];
        return f.vel + f.omega.cross(p - f.origin);
    };

    auto ground_contact = [&](int c, int j, int slot, const Vec3& p, double k_n, double c_n) {
        const double depth = cp.ground_height - p.z();
        if (depth <= 0.0) return;
        const Vec3 v = point_velocity(c, j, p);
        const double fn = std::max(0.0, k_n * depth - c_n * v.z());

        Vec3 ft = Vec3::Zero();
        if (fn > 0.0) {
            if (c >= 0) {
                // Anchored stiction spring, clamped to the friction cone.
                Vec3 anchor(p.x(), p.y(), 0.0);
                const auto it = old_anchors.find({c, j, slot});
                if (it != old_anchors.end()) anchor = it->second;
                Vec3 stretch(p.x() - anchor.x(), p.y() - anchor.y(), 0.0);
                ft = -cp.tangent_stiffness * stretch -
                     cp.tangent_damping * Vec3(v.x(), v.y(), 0.0);
                const double max_ft = cp.friction * fn;
                if (ft.norm() > max_ft) {
                    ft = max_ft * ft.normalized();
                    anchor = Vec3(p.x(), p.y(), 0.0) + ft / cp.tangent_stiffness;
                }
                new_anchors.push_back({c, j, slot, anchor});
            } else {
                ft = -cp.tangent_damping * Vec3(v.x(), v.y(), 0.0);
                const double max_ft = cp.friction * fn;
                if (ft.norm() > max_ft) ft = max_ft * ft.normalized();
            }
        }
        const Vec3 force = Vec3(0, 0, fn) + ft;
        apply_force(c, j, p, force);
        if (info) info->contacts.push_back({c, j, p, fn, ft});
    };

    for (int c = 0; c < nc; ++c) {
        for (size_t j = 0; j < bodies_[c].size(); ++j) {
            const BodyShape& s = bodies_[c][j].shape;
            const BodyFrame& f = frames[c][j];
            const Isometry pose = [&] {
                Isometry iso = Isometry::Identity();
                iso.linear() = f.rot;
                iso.translation() = f.origin;
                return Isometry(iso * s.local_pose);
            }();
            switch (s.kind) {
                case ShapeKind::Sphere:
                    ground_contact(c, j, 0, pose.translation() - Vec3(0, 0, s.radius()),
                                   cp.stiffness, cp.damping);
                    break;
                case ShapeKind::Capsule: {
                    const Vec3 e0 = pose * Vec3(0, 0, s.half_height());
                    const Vec3 e1 = pose * Vec3(0, 0, -s.half_height());
                    ground_contact(c, j, 0, e0 - Vec3(0, 0, s.radius()), cp.stiffness,
                                   cp.damping);
                    ground_contact(c, j, 1, e1 - Vec3(0, 0, s.radius()), cp.stiffness,
                                   cp.damping);
                    break;
                }
                case ShapeKind::Box: {
                    const Vec3 h = s.half_extents();
                    int slot = 0;
                    for (int sx : {-1, 1})
                        for (int sy : {-1, 1})
                            for (int sz : {-1, 1}) {
                                const Vec3 corner =
                                    pose * Vec3(sx * h.x(), sy * h.y(), sz * h.z());
                                // Quarter stiffness per corner keeps the total
                                // comparable to single-point contacts.
                                ground_contact(c, j, slot++, corner, 0.25 * cp.stiffness,
                                               0.25 * cp.damping);
                            }
                    break;
                }
            }
        }
    }
    if (state.ball) {
        const double ball_c =
            2.0 * solve_damping_ratio(cp.ball_restitution) *
            std::sqrt(cp.stiffness * ball_mass_);
        ground_contact(-1, 0, 0, state.ball->position - Vec3(0, 0, ball_shape_->radius()),
                       cp.stiffness, ball_c);
    }

    // ---- body-body penalty contacts ----
    for (const CollidablePair& pair : pairs_) {
        ConvexInstance ia, ib;
        if (pair.char_a >= 0) {
            ia.shape = bodies_[pair.char_a][pair.joint_a].shape;
            Isometry iso = Isometry::Identity();
            iso.linear() = frames[pair.char_a][pair.joint_a].rot;
            iso.translation() = frames[pair.char_a][pair.joint_a].origin;
            ia.world_pose = iso * ia.shape.local_pose;
        }
        if (pair.char_b >= 0) {
            ib.shape = bodies_[pair.char_b][pair.joint_b].shape;
            Isometry iso = Isometry::Identity();
            iso.linear() = frames[pair.char_b][pair.joint_b].rot;
            iso.translation() = frames[pair.char_b][pair.joint_b].origin;
            ib.world_pose = iso * ib.shape.local_pose;
        } else {
            ib.shape = *ball_shape_;
            ib.world_pose.setIdentity();
            ib.world_pose.linear() = state.ball->rotation.toRotationMatrix();
            ib.world_pose.translation() = state.ball->position;
        }

        // Cheap sphere-bound rejection before GJK.
        const double reach_a = ia.shape.dims[0] + (ia.shape.dims.size() > 1 ? ia.shape.dims[1] : 0.0) +
                               (ia.shape.dims.size() > 2 ? ia.shape.dims[2] : 0.0);
        const double reach_b = ib.shape.dims[0] + (ib.shape.dims.size() > 1 ? ib.shape.dims[1] : 0.0) +
                               (ib.shape.dims.size() > 2 ? ib.shape.dims[2] : 0.0);
        if ((ia.world_pose.translation() - ib.world_pose.translation()).norm() >
            reach_a + reach_b)
            continue;

        PenetrationResult pr;
        try {
            const GjkResult res = gjk_query(ia, ib);
            const auto* hit = std::get_if<GjkIntersecting>(&res);
            if (!hit) continue;
            pr = epa_penetration(ia, ib, *hit);
        } catch (const ConvergenceError&) {
            continue;  // degenerate overlap this substep; skip the pair once
        }

        const Vec3 va = point_velocity(pair.char_a, pair.joint_a, pr.witness_point);
        const Vec3 vb = point_velocity(pair.char_b, pair.joint_b, pr.witness_point);
        const Vec3 v_rel = va - vb;
        const double sep_rate = v_rel.dot(pr.direction);
        const double fn = std::max(0.0, cp.stiffness * pr.depth - cp.damping * sep_rate);
        if (fn <= 0.0) continue;
        Vec3 vt = v_rel - sep_rate * pr.direction;
        Vec3 ft = -cp.tangent_damping * vt;
        const double max_ft = cp.friction * fn;
        if (ft.norm() > max_ft) ft = max_ft * ft.normalized();
        const Vec3 force = fn * pr.direction + ft;
        apply_force(pair.char_a, pair.joint_a, pr.witness_point, force);
        apply_force(pair.char_b, pair.joint_b, pr.witness_point, -force);
    }

    // ---- PD torques ----
    if (info) {
        info->applied_torques.assign(nc, {});
        info->joint_power.assign(nc, {});
    }
    std::vector<std::vector<Vec3>> torques(nc);
    for (int c = 0; c < nc; ++c) {
        const auto& nodes = bodies_[c];
        const CharacterSimState& cs = state.characters[c];
        const PDParams& pd = pd_params_[c];
        torques[c].assign(nodes.size(), Vec3::Zero());
        if (info) info->joint_power[c].assign(nodes.size(), 0.0);
        for (size_t j = 1; j < nodes.size(); ++j) {
            if (nodes[j].type == JointType::Fixed) continue;
            Quat q = cs.joint_rotations[j];
            if (config_.stable_pd)
                q = q * quat_exp(cs.joint_ang_vel[j] * dt);
            const Quat& target = joint_targets[c].at(j);
            Vec3 err = quat_log(q.inverse() * target);
            Vec3 tau;
            if (nodes[j].type == JointType::Revolute) {
                const double scalar = pd.kp[j] * err.dot(nodes[j].axis) -
                                      pd.kd[j] * cs.joint_ang_vel[j].dot(nodes[j].axis);
                tau = nodes[j].axis *
                      std::clamp(scalar, -pd.torque_limit[j], pd.torque_limit[j]);
            } else {
                tau = pd.kp[j] * err - pd.kd[j] * cs.joint_ang_vel[j];
                const double n = tau.norm();
                if (n > pd.torque_limit[j]) tau *= pd.torque_limit[j] / n;
            }
            torques[c][j] = tau;
            if (info) {
                info->joint_power[c][j] = std::abs(tau.dot(cs.joint_ang_vel[j]));
            }
        }
        if (info) info->applied_torques[c] = torques[c];
    }

    // ---- articulated-body forward dynamics per character ----
    SimState out = state;
    out.anchors = std::move(new_anchors);

    for (int c = 0; c < nc; ++c) {
        const auto& nodes = bodies_[c];
        const CharacterSimState& cs = state.characters[c];
        const int n = static_cast<int>(nodes.size());

        std::vector<Mat6> X_up(n);
        std::vector<Vec6> v(n), c_bias(n), pA(n);
        std::vector<Mat6> IA(n);
        std::vector<Eigen::Matrix<double, 6, 3>> S(n), U(n);
        std::vector<int> dof(n);
        std::vector<Mat3> Dinv(n);
        std::vector<Vec3> u(n);

        // Pass 1: velocities, bias forces, external forces into body coords.
        for (int i = 0; i < n; ++i) {
            const BodyNode& node = nodes[i];
            Vec6 vJ = Vec6::Zero();
            if (i == 0) {
                const Mat3 E = cs.root_rotation.toRotationMatrix().transpose();
                X_up[i] = motion_transform(E, Vec3::Zero());  // world at root origin
                if (config_.fixed_base) {
                    v[i] = Vec6::Zero();
                    dof[i] = 0;
                } else {
                    v[i] = spatial(E * cs.root_ang_vel, E * cs.root_lin_vel);
                    dof[i] = 6;
                }
                c_bias[i] = Vec6::Zero();
            } else {
                const Mat3 E = cs.joint_rotations[i].toRotationMatrix().transpose();
                X_up[i] = motion_transform(E, node.offset);
                switch (node.type) {
                    case JointType::Spherical: {
                        dof[i] = 3;
                        S[i] = Eigen::Matrix<double, 6, 3>::Zero();
                        S[i].topLeftCorner<3, 3>() = Mat3::Identity();
                        vJ = spatial(cs.joint_ang_vel[i], Vec3::Zero());
                        break;
                    }
                    case JointType::Revolute: {
                        dof[i] = 1;
                        S[i] = Eigen::Matrix<double, 6, 3>::Zero();
                        S[i].block<3, 1>(0, 0) = node.axis;
                        vJ = spatial(node.axis * node.axis.dot(cs.joint_ang_vel[i]),
                                     Vec3::Zero());
                        break;
                    }
                    case JointType::Fixed:
                        dof[i] = 0;
                        break;
                }
                v[i] = X_up[i] * v[node.parent] + vJ;
                c_bias[i] = crm(v[i]) * vJ;
            }

            IA[i] = node.spatial_inertia;
            // External wrench (world, about body origin) into body coords.
            const Mat3 Rt = frames[c][i].rot.transpose();
            const Vec6 f_ext = spatial(Rt * ext[c][i].torque, Rt * ext[c][i].force);
            pA[i] = crf(v[i]) * (node.spatial_inertia * v[i]) - f_ext;
        }

        // Pass 2: articulated inertia recursion.
        for (int i = n - 1; i >= 1; --i) {
            const BodyNode& node = nodes[i];
            const int d = dof[i];
            if (d > 0) {
                const auto Sd = S[i].leftCols(d);
                U[i].leftCols(d) = IA[i] * Sd;
                Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
                D.topLeftCorner(d, d) = Sd.transpose() * U[i].leftCols(d);
                Dinv[i] = Eigen::Matrix3d::Identity();
                Dinv[i].topLeftCorner(d, d) =
                    D.topLeftCorner(d, d).inverse();
                Vec3 tau_vec = Vec3::Zero();
                if (node.type == JointType::Spherical)
                    tau_vec = torques[c][i];
                else if (node.type == JointType::Revolute)
                    tau_vec.x() = torques[c][i].dot(node.axis);
                u[i].head(d) = tau_vec.head(d) - Sd.transpose() * pA[i];

                const Mat6 Ia =
                    IA[i] - U[i].leftCols(d) * Dinv[i].topLeftCorner(d, d) *
                                U[i].leftCols(d).transpose();
                const Vec6 pa = pA[i] + Ia * c_bias[i] +
                                U[i].leftCols(d) * Dinv[i].topLeftCorner(d, d) * u[i].head(d);
                IA[node.parent] += X_up[i].transpose() * Ia * X_up[i];
                pA[node.parent] += X_up[i].transpose() * pa;
            } else {
                const Mat6 Ia = IA[i];
                const Vec6 pa = pA[i] + Ia * c_bias[i];
                IA[node.parent] += X_up[i].transpose() * Ia * X_up[i];
                pA[node.parent] += X_up[i].transpose() * pa;
            }
        }

        // Pass 3: accelerations.
        std::vector<Vec6> a(n);
        if (config_.fixed_base)
            a[0] = Vec6::Zero();
        else
            a[0] = -IA[0].ldlt().solve(pA[0]);

        std::vector<Vec3> qdd(n, Vec3::Zero());
        for (int i = 1; i < n; ++i) {
            const Vec6 a_par = X_up[i] * a[nodes[i].parent] + c_bias[i];
            const int d = dof[i];
            if (d > 0) {
                qdd[i].head(d) = Dinv[i].topLeftCorner(d, d) *
                                 (u[i].head(d) - U[i].leftCols(d).transpose() * a_par);
                a[i] = a_par + S[i].leftCols(d) * qdd[i].head(d);
            } else {
                a[i] = a_par;
            }
        }

        // ---- semi-implicit Euler ----
        CharacterSimState& ns = out.characters[c];
        if (!config_.fixed_base) {
            const Mat3 R = cs.root_rotation.toRotationMatrix();
            Vec6 v0 = spatial(R.transpose() * cs.root_ang_vel, R.transpose() * cs.root_lin_vel);
            v0 += dt * a[0];
            const Vec3 omega_body = v0.head<3>();
            ns.root_ang_vel = R * omega_body;
            ns.root_lin_vel = R * v0.tail<3>();
            ns.root_rotation = cs.root_rotation * quat_exp(omega_body * dt);
            ns.root_rotation.normalize();
            ns.root_position = cs.root_position + dt * ns.root_lin_vel;
        }
        for (int i = 1; i < n; ++i) {
            const BodyNode& node = nodes[i];
            if (node.type == JointType::Fixed) continue;
            Vec3 w = cs.joint_ang_vel[i];
            if (node.type == JointType::Revolute) {
                const double wd = node.axis.dot(w) + dt * qdd[i].x();
                w = node.axis * wd;
            } else {
                w += dt * qdd[i];
            }
            ns.joint_ang_vel[i] = w;
            ns.joint_rotations[i] = cs.joint_rotations[i] * quat_exp(w * dt);
            ns.joint_rotations[i].normalize();
        }
    }

    // ---- ball integration (free rigid sphere) ----
    if (state.ball) {
        BallState nb = *state.ball;
        nb.lin_vel = state.ball->lin_vel + dt * (ball_ext.force / ball_mass_);
        nb.ang_vel = state.ball->ang_vel +
                     dt * ball_inertia_.inverse() *
                         (ball_ext.torque -
                          state.ball->ang_vel.cross(ball_inertia_ * state.ball->ang_vel));
        nb.position = state.ball->position + dt * nb.lin_vel;
        nb.rotation = quat_exp(nb.ang_vel * dt) * state.ball->rotation;
        nb.rotation.normalize();
        out.ball = nb;
    }

    // ---- stability check ----
    bool ok = true;
    for (const CharacterSimState& cs : out.characters) {
        ok = ok && finite(cs.root_position) && finite(cs.root_rotation) &&
             finite(cs.root_lin_vel) && finite(cs.root_ang_vel);
        for (const Quat& q : cs.joint_rotations) ok = ok && finite(q);
        for (const Vec3& w : cs.joint_ang_vel) ok = ok && finite(w);
    }
    if (out.ball)
        ok = ok && finite(out.ball->position) && finite(out.ball->lin_vel);
    if (!ok) throw SimUnstableError("simulation diverged (NaN/Inf in state)", state);

    return out;
}

Vec3 SimWorld::total_linear_momentum(const SimState& state) const {
    Vec3 p = Vec3::Zero();
    for (int c = 0; c < character_count(); ++c) {
        const auto& nodes = bodies_[c];
        const CharacterSimState& cs = state.characters[c];
        // Recompute world kinematics for COM velocities.
        std::vector<BodyFrame> frames(nodes.size());
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].parent < 0) {
                frames[i] = {cs.root_rotation.toRotationMatrix(), cs.root_position,
                             cs.root_ang_vel, cs.root_lin_vel};
            } else {
                const BodyFrame& par = frames[nodes[i].parent];
                BodyFrame& f = frames[i];
                f.origin = par.origin + par.rot * nodes[i].offset;
                f.rot = par.rot * cs.joint_rotations[i].toRotationMatrix();
                Vec3 wj = cs.joint_ang_vel[i];
                if (nodes[i].type == JointType::Revolute)
                    wj = nodes[i].axis * nodes[i].axis.dot(wj);
                f.omega = par.omega + f.rot * wj;
                f.vel = par.vel + par.omega.cross(f.origin - par.origin);
            }
            const Vec3 com_w = frames[i].origin + frames[i].rot * nodes[i].com;
            const Vec3 v_com = frames[i].vel + frames[i].omega.cross(com_w - frames[i].origin);
            p += nodes[i].mass * v_com;
        }
    }
    return p;
}

double SimWorld::mechanical_energy(const SimState& state) const {
    double e = 0.0;
    const ContactParams& cp = config_.contacts;
    std::map<std::tuple<int, int, int>, Vec3> anchors;
    for (const ContactAnchor& a : state.anchors)
        anchors[{a.character, a.joint, a.slot}] = a.anchor;

    for (int c = 0; c < character_count(); ++c) {
        const auto& nodes = bodies_[c];
        const CharacterSimState& cs = state.characters[c];
        std::vector<BodyFrame> frames(nodes.size());
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].parent < 0) {
                frames[i] = {cs.root_rotation.toRotationMatrix(), cs.root_position,
                             config_.fixed_base ? Vec3::Zero() : cs.root_ang_vel,
                             config_.fixed_base ? Vec3::Zero() : cs.root_lin_vel};
            } else {
                const BodyFrame& par = frames[nodes[i].parent];
                BodyFrame& f = frames[i];
                f.origin = par.origin + par.rot * nodes[i].offset;
                f.rot = par.rot * cs.joint_rotations[i].toRotationMatrix();
                Vec3 wj = cs.joint_ang_vel[i];
                if (nodes[i].type == JointType::Revolute)
                    wj = nodes[i].axis * nodes[i].axis.dot(wj);
                f.omega = par.omega + f.rot * wj;
                f.vel = par.vel + par.omega.cross(f.origin - par.origin);
            }
            const BodyFrame& f = frames[i];
            const Vec3 com_w = f.origin + f.rot * nodes[i].com;
            const Vec3 v_com = f.vel + f.omega.cross(com_w - f.origin);
            const Mat3 I_w = f.rot * nodes[i].inertia_com * f.rot.transpose();
            e += 0.5 * nodes[i].mass * v_com.squaredNorm() +
                 0.5 * f.omega.dot(I_w * f.omega);
            e -= nodes[i].mass * config_.gravity.dot(com_w);

            // Ground-spring potential for penetrating contact points.
            const BodyShape& s = nodes[i].shape;
            Isometry pose = Isometry::Identity();
            pose.linear() = f.rot;
            pose.translation() = f.origin;
            pose = pose * s.local_pose;
            auto spring = [&](int slot, const Vec3& p, double k_n) {
                const double depth = cp.ground_height - p.z();
                if (depth > 0.0) e += 0.5 * k_n * depth * depth;
                const auto it = anchors.find({c, static_cast<int>(i), slot});
                if (it != anchors.end()) {
                    const Vec3 stretch(p.x() - it->second.x(), p.y() - it->second.y(), 0.0);
                    e += 0.5 * cp.tangent_stiffness * stretch.squaredNorm();
                }
            };
            switch (s.kind) {
                case ShapeKind::Sphere:
                    spring(0, pose.translation() - Vec3(0, 0, s.radius()), cp.stiffness);
                    break;
                case ShapeKind::Capsule:
                    spring(0, pose * Vec3(0, 0, s.half_height()) - Vec3(0, 0, s.radius()),
                           cp.stiffness);
                    spring(1, pose * Vec3(0, 0, -s.half_height()) - Vec3(0, 0, s.radius()),
                           cp.stiffness);
                    break;
                case ShapeKind::Box: {
                    const Vec3 h = s.half_extents();
                    int slot = 0;
                    for (int sx : {-1, 1})
                        for (int sy : {-1, 1})
                            for (int sz : {-1, 1})
                                spring(slot++, pose * Vec3(sx * h.x(), sy * h.y(), sz * h.z()),
                                       0.25 * cp.stiffness);
                    break;
                }
            }
        }
    }
    if (state.ball) {
        e += 0.5 * ball_mass_ * state.ball->lin_vel.squaredNorm() +
             0.5 * state.ball->ang_vel.dot(ball_inertia_ * state.ball->ang_vel);
        e -= ball_mass_ * config_.gravity.dot(state.ball->position);
        const double depth =
            cp.ground_height - (state.ball->position.z() - ball_shape_->radius());
        if (depth > 0.0) e += 0.5 * cp.stiffness * depth * depth;
    }
    return e;
}

SimWorld build_world(std::vector<Skeleton> skeletons, SimConfig config,
                     std::vector<PDParams> pd_params, std::optional<BodyShape> ball) {
    return SimWorld(std::move(skeletons), config, std::move(pd_params), std::move(ball));
}

SimState reset_to_pose(const SimWorld& world, const std::vector<Frame>& frames,
                       const std::vector<Frame>& next_frames, double fps,
                       const std::optional<BallState>& ball) {
    if (static_cast<int>(frames.size()) != world.character_count())
        throw ValidationError("reset_to_pose: one frame per character required");
    SimState state = world.initial_state();
    for (int c = 0; c < world.character_count(); ++c) {
        CharacterSimState& cs = state.characters[c];
        const Frame& f = frames[c];
        const Frame& g = next_frames[c];
        cs.root_position = f.root_position;
        cs.root_rotation = f.root_rotation;
        cs.root_lin_vel = (g.root_position - f.root_position) * fps;
        cs.root_ang_vel = quat_log(g.root_rotation * f.root_rotation.inverse()) * fps;
        cs.joint_rotations = f.joint_rotations;
        for (size_t j = 1; j < cs.joint_rotations.size(); ++j)
            cs.joint_ang_vel[j] =
                quat_log(f.joint_rotations[j].inverse() * g.joint_rotations[j]) * fps;
    }
    if (ball) state.ball = *ball;
    return state;
}

}  // namespace mocap
