#include "mocap/skeleton.hpp"

#include <cmath>

#include "mocap/errors.hpp"

namespace mocap {

namespace {

int expected_dim_count(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Sphere: return 1;
        case ShapeKind::Capsule: return 2;
        case ShapeKind::Box: return 3;
    }
    return 0;
}

}  // namespace

int Skeleton::find_joint(const std::string& joint_name) const {
    for (int i = 0; i < joint_count(); ++i) {
        if (joints[i].name == joint_name) return i;
    }
    return -1;
}

std::vector<int> Skeleton::foot_joints() const {
    std::vector<int> out;
    for (int i = 0; i < joint_count(); ++i) {
        if (joints[i].is_foot) out.push_back(i);
    }
    return out;
}

void Skeleton::validate() const {
    if (joints.empty()) throw ValidationError("skeleton '" + name + "' has no joints");
    for (int i = 0; i < joint_count(); ++i) {
        const JointSpec& j = joints[i];
        const std::string where = "joint '" + j.name + "' (index " + std::to_string(i) + ")";
        if (i == 0) {
            if (j.parent != -1)
                throw ValidationError(where + ": root joint must have parent = null");
        } else {
            if (j.parent < 0 || j.parent >= i)
                throw ValidationError(where + ": parent index " + std::to_string(j.parent) +
                                      " must be smaller than the joint's own index");
        }
        if (!finite(j.local_offset))
            throw ValidationError(where + ": local_offset is not finite");
        if (j.type == JointType::Revolute && std::abs(j.axis.norm() - 1.0) > 1e-6)
            throw ValidationError(where + ": revolute axis must be unit length");
        if (j.type == JointType::Fixed) {
            if (j.torque_limit != 0.0)
                throw ValidationError(where + ": fixed joints must have torque_limit = 0");
        } else if (i > 0 && j.torque_limit <= 0.0) {
            throw ValidationError(where + ": actuated joints need torque_limit > 0");
        }

        const BodyShape& s = j.shape;
        if (static_cast<int>(s.dims.size()) != expected_dim_count(s.kind))
            throw ValidationError(where + ": shape has wrong number of dimensions");
        for (double d : s.dims) {
            if (!(d > 0.0) || !std::isfinite(d))
                throw ValidationError(where + ": shape dimensions must be strictly positive");
        }
        if (!(s.mass > 0.0) || !std::isfinite(s.mass))
            throw ValidationError(where + ": shape mass must be strictly positive");
    }
}

}  // namespace mocap
