#pragma once

// Triangle meshes with a uv chart, rigid scene instances, OBJ-subset I/O and
// the move/copy/remove scene edits.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ntex/errors.hpp"

namespace ntex {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Corner {
  std::uint32_t position = 0;
  std::uint32_t uv = 0;
  std::uint32_t normal = 0;

  friend bool operator==(const Corner&, const Corner&) = default;
};

using Triangle = std::array<Corner, 3>;

struct Mesh {
  std::vector<Vec3> positions;
  std::vector<Vec2> uvs;
  std::vector<Vec3> normals;
  std::vector<Triangle> triangles;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const {
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      for (const auto& c : triangles[t]) {
        if (c.position >= positions.size() || c.uv >= uvs.size() || c.normal >= normals.size()) {
          throw ConfigError("mesh: triangle " + std::to_string(t) + " has an out-of-range index");
        }
      }
    }
    for (std::size_t i = 0; i < uvs.size(); ++i) {
      const auto& uv = uvs[i];
      if (!(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0)) {
        throw ConfigError("mesh: uv " + std::to_string(i) + " outside [0,1]^2");
      }
    }
    for (std::size_t i = 0; i < normals.size(); ++i) {
      if (std::abs(normals[i].norm() - 1.0) > 1e-6) {
        throw ConfigError("mesh: normal " + std::to_string(i) + " is not unit length");
      }
    }
  }

  friend bool operator==(const Mesh&, const Mesh&) = default;
};

// ---------------------------------------------------------------------------
// Parametric objects.

enum class MeshKind { sphere, torus, vase_profile };

inline const char* to_string(MeshKind kind) {
  switch (kind) {
    case MeshKind::sphere: return "sphere";
    case MeshKind::torus: return "torus";
    case MeshKind::vase_profile: return "vase_profile";
  }
  return "?";
}

inline MeshKind parse_mesh_kind(const std::string& name) {
  if (name == "sphere") return MeshKind::sphere;
  if (name == "torus") return MeshKind::torus;
  if (name == "vase_profile" || name == "vase") return MeshKind::vase_profile;
  throw ConfigError("unknown mesh kind '" + name + "'");
}

namespace detail {

// (n+1)x(n+1) grid over (s, t) in [0,1]^2 with uv = (s, t). Seams duplicate
// vertices. outward_st selects the winding for which (ds x dt) points outward.
template <typename Surface>
Mesh grid_mesh(int n, bool outward_st, Surface&& surface) {
  Mesh mesh;
  const auto stride = static_cast<std::uint32_t>(n + 1);
  mesh.positions.reserve(stride * stride);
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const double s = static_cast<double>(i) / n;
      const double t = static_cast<double>(j) / n;
      auto [p, normal] = surface(s, t);
      mesh.positions.push_back(p);
      mesh.normals.push_back(normal.normalized());
      mesh.uvs.emplace_back(s, t);
    }
  }
  auto corner = [&](int i, int j) {
    const auto k = static_cast<std::uint32_t>(j) * stride + static_cast<std::uint32_t>(i);
    return Corner{k, k, k};
  };
  mesh.triangles.reserve(static_cast<std::size_t>(2 * n * n));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Corner a = corner(i, j), b = corner(i + 1, j), c = corner(i + 1, j + 1), d = corner(i, j + 1);
      if (outward_st) {
        mesh.triangles.push_back({a, b, c});
        mesh.triangles.push_back({a, c, d});
      } else {
        mesh.triangles.push_back({a, d, c});
        mesh.triangles.push_back({a, c, b});
      }
    }
  }
  return mesh;
}

}  // namespace detail

/// Unit sphere, torus (R = 1, r = 0.4) or a vase-like surface of revolution,
/// each with analytic normals and a single uv chart covering [0,1]^2.
inline Mesh generate_parametric_mesh(MeshKind kind, int tessellation) {
  if (tessellation < 3) {
    throw ConfigError("tessellation must be >= 3, got " + std::to_string(tessellation));
  }
  constexpr double pi = std::numbers::pi;
  switch (kind) {
    case MeshKind::sphere:
      // s: azimuth, t: polar angle from +z.
      return detail::grid_mesh(tessellation, false, [&](double s, double t) {
        const double phi = 2.0 * pi * s, theta = pi * t;
        Vec3 p(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
        return std::pair{p, p};
      });
    case MeshKind::torus:
      return detail::grid_mesh(tessellation, true, [&](double s, double t) {
        constexpr double major = 1.0, minor = 0.4;
        const double phi = 2.0 * pi * s, psi = 2.0 * pi * t;
        Vec3 n(std::cos(psi) * std::cos(phi), std::cos(psi) * std::sin(phi), std::sin(psi));
        Vec3 p = Vec3(major * std::cos(phi), major * std::sin(phi), 0.0) + minor * n;
        return std::pair{p, n};
      });
    case MeshKind::vase_profile:
      // radius(t) = sin(pi t) (0.6 + 0.25 cos(3 pi t)), height(t) = 1.2 cos(pi t).
      return detail::grid_mesh(tessellation, false, [&](double s, double t) {
        constexpr double h = 1.2;
        const double phi = 2.0 * pi * s;
        const double shape = 0.6 + 0.25 * std::cos(3.0 * pi * t);
        const double r = std::sin(pi * t) * shape;
        const double dr = pi * std::cos(pi * t) * shape - 0.75 * pi * std::sin(pi * t) * std::sin(3.0 * pi * t);
        const double radial = h * pi * std::sin(pi * t);
        Vec3 p(r * std::cos(phi), r * std::sin(phi), h * std::cos(pi * t));
        Vec3 n(radial * std::cos(phi), radial * std::sin(phi), dr);
        return std::pair{p, n};
      });
  }
  throw ConfigError("unknown mesh kind");
}

// ---------------------------------------------------------------------------
// OBJ subset: v, vt, vn, f with v/vt/vn corners.

namespace detail {

inline std::uint32_t resolve_obj_index(const std::string& token, std::size_t count,
                                       std::size_t line, const char* what) {
  long value = 0;
  try {
    std::size_t used = 0;
    value = std::stol(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
  } catch (const std::exception&) {
    throw ParseError(std::string("malformed ") + what + " index '" + token + "'", line);
  }
  const long resolved = value < 0 ? static_cast<long>(count) + value : value - 1;
  if (value == 0 || resolved < 0 || resolved >= static_cast<long>(count)) {
    throw ParseError(std::string(what) + " index " + token + " out of range (have " +
                         std::to_string(count) + ")",
                     line);
  }
  return static_cast<std::uint32_t>(resolved);
}

}  // namespace detail

inline Mesh load_mesh(std::istream& in) {
  Mesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v" || tag == "vn") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw ParseError("expected 3 coordinates", line_no);
      if (tag == "v") {
        mesh.positions.push_back(p);
      } else {
        if (std::abs(p.norm() - 1.0) > 1e-6) p.normalize();
        mesh.normals.push_back(p);
      }
    } else if (tag == "vt") {
      Vec2 uv;
      if (!(ls >> uv.x() >> uv.y())) throw ParseError("expected 2 texture coordinates", line_no);
      if (!(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0)) {
        throw ParseError("texture coordinate outside [0,1]^2", line_no);
      }
      mesh.uvs.push_back(uv);
    } else if (tag == "f") {
      std::vector<Corner> corners;
      std::string token;
      while (ls >> token) {
        std::array<std::string, 3> parts;
        std::size_t field = 0;
        for (char ch : token) {
          if (ch == '/') {
            if (++field > 2) throw ParseError("malformed face corner '" + token + "'", line_no);
          } else {
            parts[field] += ch;
          }
        }
        if (parts[1].empty()) {
          throw MissingUvError("face corner '" + token + "' has no texture coordinate", line_no);
        }
        if (parts[2].empty()) {
          throw ParseError("face corner '" + token + "' has no normal", line_no);
        }
        corners.push_back(Corner{
            detail::resolve_obj_index(parts[0], mesh.positions.size(), line_no, "position"),
            detail::resolve_obj_index(parts[1], mesh.uvs.size(), line_no, "texture coordinate"),
            detail::resolve_obj_index(parts[2], mesh.normals.size(), line_no, "normal")});
      }
      if (corners.size() < 3) throw ParseError("face needs at least 3 corners", line_no);
      for (std::size_t k = 1; k + 1 < corners.size(); ++k) {
        mesh.triangles.push_back({corners[0], corners[k], corners[k + 1]});
      }
    }
    // Other records (o, g, s, usemtl, ...) are ignored.
  }
  return mesh;
}

inline void write_mesh(const Mesh& mesh, std::ostream& out) {
  char buf[128];
  for (const auto& p : mesh.positions) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out << buf;
  }
  for (const auto& uv : mesh.uvs) {
    std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", uv.x(), uv.y());
    out << buf;
  }
  for (const auto& n : mesh.normals) {
    std::snprintf(buf, sizeof buf, "vn %.17g %.17g %.17g\n", n.x(), n.y(), n.z());
    out << buf;
  }
  for (const auto& tri : mesh.triangles) {
    out << 'f';
    for (const auto& c : tri) out << ' ' << c.position + 1 << '/' << c.uv + 1 << '/' << c.normal + 1;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Scenes.

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply_point(const Vec3& p) const { return rotation * p + translation; }
  // Inverse-transpose of an orthonormal rotation is the rotation itself.
  Vec3 apply_normal(const Vec3& n) const { return rotation * n; }

  /// (*this) after other: x -> this(other(x)).
  RigidTransform compose(const RigidTransform& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
  RigidTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  static RigidTransform from_axis_angle(const Vec3& axis, double radians, const Vec3& translation = Vec3::Zero()) {
    const Vec3 unit = axis.normalized();
    return {Eigen::AngleAxisd(radians, unit).toRotationMatrix(), translation};
  }

  bool is_rigid(double tol = 1e-6) const {
    return (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }

  friend bool operator==(const RigidTransform& a, const RigidTransform& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

struct SceneInstance {
  std::shared_ptr<const Mesh> mesh;
  RigidTransform transform;
  int texture_id = 0;

  friend bool operator==(const SceneInstance& a, const SceneInstance& b) {
    return a.mesh == b.mesh && a.transform == b.transform && a.texture_id == b.texture_id;
  }
};

struct Scene {
  std::vector<SceneInstance> instances;

  static Scene single(std::shared_ptr<const Mesh> mesh, int texture_id = 0) {
    return Scene{{SceneInstance{std::move(mesh), RigidTransform{}, texture_id}}};
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct TranslateEdit {
  std::size_t id;
  Vec3 offset;
};
/// Rotates an instance about the axis through its own origin.
struct RotateEdit {
  std::size_t id;
  Vec3 axis;
  double radians;
};
/// Appends a copy of an instance whose transform is `transform` applied after the source's.
struct DuplicateEdit {
  std::size_t id;
  RigidTransform transform;
};
struct RemoveEdit {
  std::size_t id;
};

using SceneEdit = std::variant<TranslateEdit, RotateEdit, DuplicateEdit, RemoveEdit>;

inline Scene apply_edit(const Scene& scene, const SceneEdit& edit) {
  const std::size_t id = std::visit([](const auto& e) { return e.id; }, edit);
  if (id >= scene.instances.size()) {
    throw EditError("edit references instance " + std::to_string(id) + " but scene has " +
                    std::to_string(scene.instances.size()));
  }
  Scene out = scene;
  auto& target = out.instances[id];
  std::visit(
      [&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, TranslateEdit>) {
          target.transform.translation += e.offset;
        } else if constexpr (std::is_same_v<E, RotateEdit>) {
          if (e.axis.norm() == 0.0) throw EditError("rotate: zero axis");
          target.transform.rotation =
              Eigen::AngleAxisd(e.radians, e.axis.normalized()).toRotationMatrix() * target.transform.rotation;
        } else if constexpr (std::is_same_v<E, DuplicateEdit>) {
          if (!e.transform.is_rigid()) throw EditError("duplicate: transform is not rigid");
          SceneInstance copy = scene.instances[e.id];
          copy.transform = e.transform.compose(copy.transform);
          out.instances.push_back(std::move(copy));
        } else {
          out.instances.erase(out.instances.begin() + static_cast<std::ptrdiff_t>(e.id));
        }
      },
      edit);
  return out;
}

/// Line-oriented edit script, angles in degrees:
///   translate <id> <dx> <dy> <dz>
///   rotate <id> <ax> <ay> <az> <degrees>
///   duplicate <id> [<dx> <dy> <dz> [<ax> <ay> <az> <degrees>]]
///   remove <id>
inline std::vector<SceneEdit> parse_edit_script(std::istream& in) {
  std::vector<SceneEdit> edits;
  std::string line;
  std::size_t line_no = 0;
  constexpr double deg = std::numbers::pi / 180.0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string verb;
    if (!(ls >> verb) || verb[0] == '#') continue;
    long id = -1;
    if (!(ls >> id) || id < 0) throw ParseError("expected a non-negative instance id", line_no);
    const auto uid = static_cast<std::size_t>(id);
    if (verb == "translate") {
      Vec3 d;
      if (!(ls >> d.x() >> d.y() >> d.z())) throw ParseError("translate needs 3 components", line_no);
      edits.emplace_back(TranslateEdit{uid, d});
    } else if (verb == "rotate") {
      Vec3 axis;
      double angle = 0;
      if (!(ls >> axis.x() >> axis.y() >> axis.z() >> angle)) {
        throw ParseError("rotate needs axis and angle", line_no);
      }
      edits.emplace_back(RotateEdit{uid, axis, angle * deg});
    } else if (verb == "duplicate") {
      RigidTransform t;
      Vec3 d;
      if (ls >> d.x()) {
        if (!(ls >> d.y() >> d.z())) throw ParseError("duplicate offset needs 3 components", line_no);
        t.translation = d;
        Vec3 axis;
        double angle = 0;
        if (ls >> axis.x()) {
          if (!(ls >> axis.y() >> axis.z() >> angle)) throw ParseError("duplicate rotation incomplete", line_no);
          t.rotation = Eigen::AngleAxisd(angle * deg, axis.normalized()).toRotationMatrix();
        }
      }
      edits.emplace_back(DuplicateEdit{uid, t});
    } else if (verb == "remove") {
      edits.emplace_back(RemoveEdit{uid});
    } else {
      throw ParseError("unknown edit '" + verb + "'", line_no);
    }
  }
  return edits;
}

}  // namespace ntex
