#include "mocap/humanoid.hpp"

namespace mocap {

namespace {

JointSpec make_joint(const std::string& name, int parent, const Vec3& offset,
                     ShapeKind kind, std::vector<double> dims, double mass,
                     const Vec3& shape_pos, double torque_limit) {
    JointSpec j;
    j.name = name;
    j.parent = parent;
    j.local_offset = offset;
    j.type = JointType::Spherical;
    j.shape.kind = kind;
    j.shape.dims = std::move(dims);
    j.shape.mass = mass;
    j.shape.local_pose = Isometry::Identity();
    j.shape.local_pose.translation() = shape_pos;
    j.torque_limit = torque_limit;
    return j;
}

}  // namespace

Skeleton default_humanoid() {
    Skeleton sk;
    sk.name = "humanoid15";
    auto add = [&sk](JointSpec j) {
        sk.joints.push_back(std::move(j));
        return static_cast<int>(sk.joints.size()) - 1;
    };

    const int pelvis = add(make_joint("pelvis", -1, Vec3(0, 0, 0.95), ShapeKind::Box,
                                      {0.10, 0.14, 0.09}, 10.0, Vec3::Zero(), 250));
    const int spine = add(make_joint("spine", pelvis, Vec3(0, 0, 0.18), ShapeKind::Box,
                                     {0.10, 0.13, 0.14}, 14.0, Vec3(0, 0, 0.02), 250));
    add(make_joint("head", spine, Vec3(0, 0, 0.25), ShapeKind::Capsule, {0.08, 0.03}, 4.5,
                   Vec3(0, 0, 0.07), 80));

    for (int side = 0; side < 2; ++side) {
        const double s = side == 0 ? 1.0 : -1.0;
        const std::string p = side == 0 ? "l_" : "r_";
        const int shoulder =
            add(make_joint(p + "shoulder", spine, Vec3(0, s * 0.22, 0.10), ShapeKind::Capsule,
                           {0.045, 0.11}, 2.2, Vec3(0, 0, -0.14), 250));
        const int elbow =
            add(make_joint(p + "elbow", shoulder, Vec3(0, 0, -0.28), ShapeKind::Capsule,
                           {0.04, 0.085}, 1.5, Vec3(0, 0, -0.105), 80));
        add(make_joint(p + "hand", elbow, Vec3(0, 0, -0.25), ShapeKind::Capsule, {0.04, 0.04},
                       0.5, Vec3(0, 0, -0.05), 80));
    }
    for (int side = 0; side < 2; ++side) {
        const double s = side == 0 ? 1.0 : -1.0;
        const std::string p = side == 0 ? "l_" : "r_";
        const int hip =
            add(make_joint(p + "hip", pelvis, Vec3(0, s * 0.09, -0.06), ShapeKind::Capsule,
                           {0.07, 0.17}, 7.0, Vec3(0, 0, -0.21), 250));
        const int knee = add(make_joint(p + "knee", hip, Vec3(0, 0, -0.42), ShapeKind::Capsule,
                                        {0.05, 0.16}, 3.5, Vec3(0, 0, -0.20), 250));
        const int foot = add(make_joint(p + "foot", knee, Vec3(0, 0, -0.40), ShapeKind::Box,
                                        {0.11, 0.05, 0.035}, 1.2, Vec3(0.06, 0, -0.035), 80));
        sk.joints[foot].is_foot = true;
    }
    sk.validate();
    return sk;
}

PDParams default_pd_params(const Skeleton& skeleton) {
    PDParams pd;
    const int n = skeleton.joint_count();
    pd.kp.assign(n, 100.0);
    pd.kd.assign(n, 10.0);
    pd.torque_limit.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const std::string& name = skeleton.joints[i].name;
        const bool proximal = name == "spine" || name.find("shoulder") != std::string::npos ||
                              name.find("hip") != std::string::npos ||
                              name.find("knee") != std::string::npos;
        pd.kp[i] = proximal ? 300.0 : 100.0;
        pd.kd[i] = pd.kp[i] / 10.0;
        pd.torque_limit[i] = skeleton.joints[i].torque_limit;
    }
    return pd;
}

}  // namespace mocap
