#include "mocap/motion_clip.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mocap/errors.hpp"

namespace mocap {

namespace {

using Json = nlohmann::ordered_json;

std::string frame_field(int character, int frame, const std::string& field) {
    std::ostringstream os;
    os << "character " << character << ", frame " << frame << ", field '" << field << "'";
    return os.str();
}

Vec3 parse_vec3(const Json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 3)
        throw ParseError(what + ": expected an array of 3 numbers");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

// Scalar-first (w,x,y,z) in files.
Quat parse_quat(const Json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 4)
        throw ParseError(what + ": expected an array of 4 numbers");
    return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

Json dump_vec3(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
Json dump_quat(const Quat& q) { return Json::array({q.w(), q.x(), q.y(), q.z()}); }

ShapeKind parse_kind(const std::string& s) {
    if (s == "sphere") return ShapeKind::Sphere;
    if (s == "capsule") return ShapeKind::Capsule;
    if (s == "box") return ShapeKind::Box;
    throw ParseError("unknown shape kind '" + s + "'");
}

std::string kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Sphere: return "sphere";
        case ShapeKind::Capsule: return "capsule";
        case ShapeKind::Box: return "box";
    }
    return "?";
}

JointType parse_joint_type(const std::string& s) {
    if (s == "spherical") return JointType::Spherical;
    if (s == "revolute") return JointType::Revolute;
    if (s == "fixed") return JointType::Fixed;
    throw ParseError("unknown joint type '" + s + "'");
}

std::string joint_type_name(JointType t) {
    switch (t) {
        case JointType::Spherical: return "spherical";
        case JointType::Revolute: return "revolute";
        case JointType::Fixed: return "fixed";
    }
    return "?";
}

BodyShape parse_shape(const Json& j, const std::string& what) {
    BodyShape s;
    s.kind = parse_kind(j.at("kind").get<std::string>());
    s.dims.clear();
    for (const auto& d : j.at("dims")) s.dims.push_back(d.get<double>());
    s.mass = j.at("mass").get<double>();
    Vec3 pos = parse_vec3(j.at("local_pos"), what + ".local_pos");
    Quat rot = parse_quat(j.at("local_rot"), what + ".local_rot");
    if (!is_unit(rot))
        throw ValidationError(what + ".local_rot: quaternion is not unit length");
    s.local_pose = Isometry::Identity();
    s.local_pose.linear() = rot.toRotationMatrix();
    s.local_pose.translation() = pos;
    if (j.contains("collision_group")) s.collision_group = j.at("collision_group").get<int>();
    return s;
}

Json dump_shape(const BodyShape& s) {
    Json j;
    j["kind"] = kind_name(s.kind);
    j["dims"] = s.dims;
    j["mass"] = s.mass;
    j["local_pos"] = dump_vec3(s.local_pose.translation());
    j["local_rot"] = dump_quat(Quat(s.local_pose.linear()));
    j["collision_group"] = s.collision_group;
    return j;
}

Frame parse_frame(const Json& j, int character, int frame, int joint_count) {
    Frame f;
    f.root_position = parse_vec3(j.at("root_pos"), frame_field(character, frame, "root_pos"));
    f.root_rotation = parse_quat(j.at("root_rot"), frame_field(character, frame, "root_rot"));
    const Json& joints = j.at("joints");
    if (static_cast<int>(joints.size()) != joint_count)
        throw ValidationError(frame_field(character, frame, "joints") + ": expected " +
                              std::to_string(joint_count) + " rotations, got " +
                              std::to_string(joints.size()));
    f.joint_rotations.reserve(joints.size());
    for (size_t k = 0; k < joints.size(); ++k) {
        f.joint_rotations.push_back(
            parse_quat(joints[k], frame_field(character, frame, "joints[" + std::to_string(k) + "]")));
    }
    return f;
}

void check_frame_quats(const Frame& f, int character, int frame) {
    if (!is_unit(f.root_rotation))
        throw ValidationError(frame_field(character, frame, "root_rot") +
                              ": quaternion is not unit length (|q| = " +
                              std::to_string(f.root_rotation.norm()) + ")");
    for (size_t k = 0; k < f.joint_rotations.size(); ++k) {
        if (!is_unit(f.joint_rotations[k]))
            throw ValidationError(frame_field(character, frame, "joints[" + std::to_string(k) + "]") +
                                  ": quaternion is not unit length (|q| = " +
                                  std::to_string(f.joint_rotations[k].norm()) + ")");
    }
    if (!finite(f.root_position))
        throw ValidationError(frame_field(character, frame, "root_pos") + ": not finite");
}

Frame blend_frames(const Frame& a, const Frame& b, double w) {
    Frame out;
    out.root_position = (1.0 - w) * a.root_position + w * b.root_position;
    out.root_rotation = slerp(a.root_rotation, b.root_rotation, w);
    out.joint_rotations.resize(a.joint_rotations.size());
    for (size_t j = 0; j < a.joint_rotations.size(); ++j)
        out.joint_rotations[j] = slerp(a.joint_rotations[j], b.joint_rotations[j], w);
    return out;
}

}  // namespace

void MotionClip::validate() const {
    skeleton.validate();
    if (!(fps > 0.0)) throw ValidationError("fps must be > 0");
    if (characters.empty()) throw ValidationError("clip has no characters");
    const int n = static_cast<int>(characters[0].size());
    if (n < 2) throw ValidationError("clip must have at least 2 frames, got " + std::to_string(n));
    for (int c = 0; c < character_count(); ++c) {
        if (static_cast<int>(characters[c].size()) != n)
            throw ValidationError("character " + std::to_string(c) + " has " +
                                  std::to_string(characters[c].size()) +
                                  " frames but character 0 has " + std::to_string(n));
        for (int t = 0; t < n; ++t) {
            const Frame& f = characters[c][t];
            if (static_cast<int>(f.joint_rotations.size()) != skeleton.joint_count())
                throw ValidationError(frame_field(c, t, "joints") + ": wrong joint count");
            check_frame_quats(f, c, t);
        }
    }
    for (size_t o = 0; o < objects.size(); ++o) {
        if (static_cast<int>(objects[o].positions.size()) != n ||
            static_cast<int>(objects[o].rotations.size()) != n)
            throw ValidationError("object " + std::to_string(o) +
                                  " track length does not match clip frame count");
    }
}

MotionClip clip_from_json_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("clip JSON parse failed: ") + e.what());
    }

    try {
        MotionClip clip;
        const int version = j.at("version").get<int>();
        if (version != 1)
            throw ParseError("unsupported clip version " + std::to_string(version));
        clip.fps = j.at("fps").get<double>();

        const Json& sk = j.at("skeleton");
        clip.skeleton.name = sk.value("name", "");
        for (const auto& jj : sk.at("joints")) {
            JointSpec spec;
            spec.name = jj.at("name").get<std::string>();
            spec.parent = jj.at("parent").is_null() ? -1 : jj.at("parent").get<int>();
            spec.local_offset = parse_vec3(jj.at("offset"), "joint '" + spec.name + "' offset");
            spec.type = parse_joint_type(jj.at("type").get<std::string>());
            if (jj.contains("axis"))
                spec.axis = parse_vec3(jj.at("axis"), "joint '" + spec.name + "' axis");
            spec.shape = parse_shape(jj.at("shape"), "joint '" + spec.name + "' shape");
            spec.torque_limit = jj.at("torque_limit").get<double>();
            spec.is_foot = jj.value("is_foot", false);
            clip.skeleton.joints.push_back(std::move(spec));
        }

        for (const auto& jc : j.at("characters")) {
            std::vector<Frame> frames;
            int c = static_cast<int>(clip.characters.size());
            int t = 0;
            for (const auto& jf : jc.at("frames"))
                frames.push_back(parse_frame(jf, c, t++, clip.skeleton.joint_count()));
            clip.characters.push_back(std::move(frames));
        }

        if (j.contains("objects")) {
            for (const auto& jo : j.at("objects")) {
                ObjectTrack track;
                track.shape = parse_shape(jo.at("shape"), "object shape");
                for (const auto& jp : jo.at("track")) {
                    track.positions.push_back(parse_vec3(jp.at("pos"), "object track pos"));
                    track.rotations.push_back(parse_quat(jp.at("rot"), "object track rot"));
                }
                clip.objects.push_back(std::move(track));
            }
        }

        clip.validate();
        return clip;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("clip JSON structure invalid: ") + e.what());
    }
}

MotionClip load_clip(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open clip file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return clip_from_json_text(ss.str());
}

std::string clip_to_json_text(const MotionClip& clip) {
    Json j;
    j["version"] = 1;
    j["fps"] = clip.fps;

    Json sk;
    sk["name"] = clip.skeleton.name;
    Json joints = Json::array();
    for (const JointSpec& spec : clip.skeleton.joints) {
        Json jj;
        jj["name"] = spec.name;
        if (spec.parent < 0)
            jj["parent"] = nullptr;
        else
            jj["parent"] = spec.parent;
        jj["offset"] = dump_vec3(spec.local_offset);
        jj["type"] = joint_type_name(spec.type);
        if (spec.type == JointType::Revolute) jj["axis"] = dump_vec3(spec.axis);
        jj["shape"] = dump_shape(spec.shape);
        jj["torque_limit"] = spec.torque_limit;
        jj["is_foot"] = spec.is_foot;
        joints.push_back(std::move(jj));
    }
    sk["joints"] = std::move(joints);
    j["skeleton"] = std::move(sk);

    Json chars = Json::array();
    for (const auto& stream : clip.characters) {
        Json frames = Json::array();
        for (const Frame& f : stream) {
            Json jf;
            jf["root_pos"] = dump_vec3(f.root_position);
            jf["root_rot"] = dump_quat(f.root_rotation);
            Json jr = Json::array();
            for (const Quat& q : f.joint_rotations) jr.push_back(dump_quat(q));
            jf["joints"] = std::move(jr);
            frames.push_back(std::move(jf));
        }
        Json jc;
        jc["frames"] = std::move(frames);
        chars.push_back(std::move(jc));
    }
    j["characters"] = std::move(chars);

    if (!clip.objects.empty()) {
        Json objs = Json::array();
        for (const ObjectTrack& track : clip.objects) {
            Json jo;
            jo["shape"] = dump_shape(track.shape);
            Json jt = Json::array();
            for (size_t t = 0; t < track.positions.size(); ++t) {
                Json jp;
                jp["pos"] = dump_vec3(track.positions[t]);
                jp["rot"] = dump_quat(track.rotations[t]);
                jt.push_back(std::move(jp));
            }
            jo["track"] = std::move(jt);
            objs.push_back(std::move(jo));
        }
        j["objects"] = std::move(objs);
    }
    return j.dump(2) + "\n";
}

void save_clip(const MotionClip& clip, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << clip_to_json_text(clip);
}

std::vector<KeyframeEdit> load_keyframe_edits(const std::string& path,
                                              const MotionClip& clip) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open keyframe file '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("keyframe JSON parse failed: ") + e.what());
    }
    std::vector<KeyframeEdit> edits;
    try {
        for (const auto& je : j.at("edits")) {
            KeyframeEdit e;
            e.frame_index = je.at("frame").get<int>();
            e.character = je.value("character", 0);
            e.blend_window = je.value("blend_window", 0);
            e.pose = parse_frame(je.at("pose"), e.character, e.frame_index,
                                 clip.skeleton.joint_count());
            check_frame_quats(e.pose, e.character, e.frame_index);
            edits.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("keyframe JSON structure invalid: ") + e.what());
    }
    return edits;
}

Frame sample_pose(const MotionClip& clip, double time, int character) {
    const int n = clip.frame_count();
    const double max_time = (n - 1) / clip.fps;
    if (time < 0.0 || time > max_time + 1e-9)
        throw ValidationError("sample time " + std::to_string(time) + " outside [0, " +
                              std::to_string(max_time) + "]");
    double pos = time * clip.fps;
    double nearest = std::round(pos);
    if (std::abs(pos - nearest) < 1e-9) pos = nearest;  // snap to exact frames
    int i0 = static_cast<int>(std::floor(pos));
    i0 = std::max(0, std::min(i0, n - 1));
    const double u = pos - i0;
    const std::vector<Frame>& frames = clip.characters.at(character);
    if (u == 0.0) return frames[i0];
    const int i1 = std::min(i0 + 1, n - 1);
    return blend_frames(frames[i0], frames[i1], u);
}

FKResult forward_kinematics(const Skeleton& skeleton, const Frame& frame) {
    const int n = skeleton.joint_count();
    if (static_cast<int>(frame.joint_rotations.size()) != n)
        throw ValidationError("frame joint count does not match skeleton");
    FKResult out;
    out.joint_transforms.resize(n);
    out.joint_positions.resize(n);
    out.body_transforms.resize(n);
    for (int i = 0; i < n; ++i) {
        const JointSpec& spec = skeleton.joints[i];
        Isometry local = Isometry::Identity();
        if (i == 0) {
            local.linear() = frame.root_rotation.toRotationMatrix();
            local.translation() = frame.root_position;
            out.joint_transforms[i] = local;
        } else {
            local.linear() = frame.joint_rotations[i].toRotationMatrix();
            local.translation() = spec.local_offset;
            out.joint_transforms[i] = out.joint_transforms[spec.parent] * local;
        }
        out.joint_positions[i] = out.joint_transforms[i].translation();
        out.body_transforms[i] = out.joint_transforms[i] * spec.shape.local_pose;
    }
    return out;
}

MotionClip apply_keyframes(const MotionClip& clip,
                           const std::vector<KeyframeEdit>& edits) {
    const int n = clip.frame_count();
    for (const KeyframeEdit& e : edits) {
        if (e.frame_index < 0 || e.frame_index >= n)
            throw ValidationError("keyframe at frame " + std::to_string(e.frame_index) +
                                  " outside clip range [0, " + std::to_string(n - 1) + "]");
        if (e.blend_window < 0 || e.blend_window >= n)
            throw ValidationError("blend_window " + std::to_string(e.blend_window) +
                                  " must be in [0, clip length)");
        if (e.character < 0 || e.character >= clip.character_count())
            throw ValidationError("keyframe character index " + std::to_string(e.character) +
                                  " out of range");
        if (static_cast<int>(e.pose.joint_rotations.size()) != clip.skeleton.joint_count())
            throw ValidationError("keyframe pose at frame " + std::to_string(e.frame_index) +
                                  " has wrong joint count");
    }
    // Overlapping windows on the same character are rejected rather than composed.
    for (size_t a = 0; a < edits.size(); ++a) {
        for (size_t b = a + 1; b < edits.size(); ++b) {
            if (edits[a].character != edits[b].character) continue;
            const int lo_a = edits[a].frame_index - edits[a].blend_window;
            const int hi_a = edits[a].frame_index + edits[a].blend_window;
            const int lo_b = edits[b].frame_index - edits[b].blend_window;
            const int hi_b = edits[b].frame_index + edits[b].blend_window;
            if (lo_a <= hi_b && lo_b <= hi_a)
                throw ValidationError("keyframe edits at frames " +
                                      std::to_string(edits[a].frame_index) + " and " +
                                      std::to_string(edits[b].frame_index) +
                                      " have overlapping blend windows");
        }
    }

    MotionClip out = clip;
    for (const KeyframeEdit& e : edits) {
        std::vector<Frame>& frames = out.characters[e.character];
        const Frame original = clip.characters[e.character][e.frame_index];
        frames[e.frame_index] = e.pose;

        // The keyframe's delta relative to the original pose, feathered onto
        // neighbours with a linear weight ramp (0 at the window edge). An
        // identity edit therefore leaves the whole clip unchanged.
        const Vec3 delta_pos = e.pose.root_position - original.root_position;
        const Quat delta_root = e.pose.root_rotation * original.root_rotation.inverse();
        std::vector<Quat> delta_joints(original.joint_rotations.size());
        for (size_t j = 0; j < delta_joints.size(); ++j)
            delta_joints[j] = e.pose.joint_rotations[j] * original.joint_rotations[j].inverse();

        const int w = e.blend_window;
        for (int d = 1; d < w; ++d) {
            const double weight = 1.0 - static_cast<double>(d) / w;
            for (int side : {-1, 1}) {
                const int t = e.frame_index + side * d;
                if (t < 0 || t >= n) continue;
                const Frame& base = clip.characters[e.character][t];
                Frame edited = base;
                edited.root_position = base.root_position + delta_pos;
                edited.root_rotation = delta_root * base.root_rotation;
                for (size_t j = 0; j < delta_joints.size(); ++j)
                    edited.joint_rotations[j] = delta_joints[j] * base.joint_rotations[j];
                frames[t] = blend_frames(base, edited, weight);
            }
        }
    }
    return out;
}

}  // namespace mocap
