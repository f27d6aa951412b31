#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mocap/math.hpp"

namespace mocap {

enum class ShapeKind { Sphere, Capsule, Box };
enum class JointType { Spherical, Revolute, Fixed };

// Convex collision proxy attached to a joint. Dimensions by kind:
//   Sphere:  dims = {radius}
//   Capsule: dims = {radius, half_height}   (segment along local Z)
//   Box:     dims = {hx, hy, hz}            (half extents)
struct BodyShape {
    ShapeKind kind = ShapeKind::Sphere;
    std::vector<double> dims = {0.1};
    double mass = 1.0;
    Isometry local_pose = Isometry::Identity();  // joint frame -> shape frame
    int collision_group = 0;

    double radius() const { return dims.at(0); }
    double half_height() const { return dims.at(1); }
    Vec3 half_extents() const { return Vec3(dims.at(0), dims.at(1), dims.at(2)); }
};

struct JointSpec {
    std::string name;
    int parent = -1;                 // -1 for the root
    Vec3 local_offset = Vec3::Zero();
    JointType type = JointType::Spherical;
    Vec3 axis = Vec3::UnitX();       // revolute only, unit length
    BodyShape shape;
    double torque_limit = 100.0;     // N*m, 0 for fixed joints
    bool is_foot = false;
};

class Skeleton {
public:
    std::string name;
    std::vector<JointSpec> joints;

    int root_index() const { return 0; }
    int joint_count() const { return static_cast<int>(joints.size()); }
    int find_joint(const std::string& joint_name) const;

    std::vector<int> foot_joints() const;

    // Throws ValidationError on tree violations, non-positive shape
    // dimensions/masses, or non-unit revolute axes.
    void validate() const;
};

}  // namespace mocap
