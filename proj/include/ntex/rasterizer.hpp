#pragma once

// Pinhole camera and z-buffered triangle rasterization into a G-buffer of
// per-pixel uv, object id, view direction and depth.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <vector>

#include "ntex/binary_io.hpp"
#include "ntex/geometry.hpp"

namespace ntex {

inline constexpr double kNearPlane = 1e-4;
inline constexpr double kDepthTieTolerance = 1e-9;

/// Pinhole camera. Camera space is x right, y down, z forward; pixel centers
/// sit at (x + 0.5, y + 0.5).
struct Camera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  RigidTransform pose;  // world -> camera

  Vec3 center() const { return pose.inverse().translation; }
  /// World-space direction of the camera's +z axis.
  Vec3 forward() const { return pose.rotation.row(2).transpose(); }

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
    if (!pose.is_rigid()) throw ConfigError("camera pose is not a rigid transform");
  }

  /// Roll-free camera at `eye` looking at `target` with world +z as up.
  static Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double fov_deg) {
    const Vec3 f = (target - eye).normalized();
    Vec3 right = f.cross(Vec3::UnitZ());
    if (right.norm() < 1e-9) right = f.cross(Vec3::UnitY());
    right.normalize();
    const Vec3 down = f.cross(right);
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.pose.rotation.row(0) = right.transpose();
    cam.pose.rotation.row(1) = down.transpose();
    cam.pose.rotation.row(2) = f.transpose();
    cam.pose.translation = -(cam.pose.rotation * eye);
    return cam;
  }

  /// Same view at `factor` times the resolution.
  Camera scaled(int factor) const {
    Camera c = *this;
    c.fx *= factor;
    c.fy *= factor;
    c.cx *= factor;
    c.cy *= factor;
    c.width *= factor;
    c.height *= factor;
    return c;
  }
};

/// Unit vector from a world-space surface point toward the camera center.
inline Vec3 view_direction(const Vec3& surface_point, const Camera& camera) {
  return (camera.center() - surface_point).normalized();
}

/// Visible surface at one pixel; barycentrics are perspective-correct weights
/// of the original triangle's corners.
struct Fragment {
  int instance = -1;
  int triangle = -1;
  double depth = 0.0;
  std::array<double, 3> bary{};

  bool covered() const { return instance >= 0; }
};

struct FragmentBuffer {
  int width = 0, height = 0;
  std::vector<Fragment> pixels;
};

struct SurfacePoint {
  Vec3 position;  // world
  Vec3 normal;    // world, unit
  Vec2 uv;
};

inline SurfacePoint surface_at(const Scene& scene, const Fragment& frag) {
  const auto& inst = scene.instances.at(static_cast<std::size_t>(frag.instance));
  const auto& tri = inst.mesh->triangles.at(static_cast<std::size_t>(frag.triangle));
  SurfacePoint s{Vec3::Zero(), Vec3::Zero(), Vec2::Zero()};
  for (int k = 0; k < 3; ++k) {
    s.position += frag.bary[k] * inst.mesh->positions[tri[k].position];
    s.normal += frag.bary[k] * inst.mesh->normals[tri[k].normal];
    s.uv += frag.bary[k] * inst.mesh->uvs[tri[k].uv];
  }
  s.position = inst.transform.apply_point(s.position);
  s.normal = inst.transform.apply_normal(s.normal).normalized();
  s.uv = s.uv.cwiseMax(0.0).cwiseMin(1.0);
  return s;
}

namespace detail {

struct ClipVertex {
  Vec3 p;  // camera space
  std::array<double, 3> bary;
};

// Sutherland-Hodgman against z >= near.
inline std::vector<ClipVertex> clip_near(const std::array<ClipVertex, 3>& tri) {
  std::vector<ClipVertex> out;
  for (int i = 0; i < 3; ++i) {
    const auto& a = tri[i];
    const auto& b = tri[(i + 1) % 3];
    const bool a_in = a.p.z() >= kNearPlane, b_in = b.p.z() >= kNearPlane;
    if (a_in) out.push_back(a);
    if (a_in != b_in) {
      const double t = (kNearPlane - a.p.z()) / (b.p.z() - a.p.z());
      ClipVertex v;
      v.p = a.p + t * (b.p - a.p);
      v.p.z() = kNearPlane;
      for (int k = 0; k < 3; ++k) v.bary[k] = a.bary[k] + t * (b.bary[k] - a.bary[k]);
      out.push_back(v);
    }
  }
  return out;
}

inline double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

inline void raster_triangle(const std::array<ClipVertex, 3>& v, const Camera& cam, int instance,
                            int triangle, FragmentBuffer& buf) {
  std::array<double, 3> sx{}, sy{};
  for (int k = 0; k < 3; ++k) {
    sx[k] = cam.fx * v[k].p.x() / v[k].p.z() + cam.cx;
    sy[k] = cam.fy * v[k].p.y() / v[k].p.z() + cam.cy;
  }
  const double area = edge(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2]);
  if (area == 0.0 || !std::isfinite(area)) return;

  const auto [min_x, max_x] = std::minmax({sx[0], sx[1], sx[2]});
  const auto [min_y, max_y] = std::minmax({sy[0], sy[1], sy[2]});
  const int x0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
  const int x1 = std::min(buf.width - 1, static_cast<int>(std::ceil(max_x - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
  const int y1 = std::min(buf.height - 1, static_cast<int>(std::ceil(max_y - 0.5)));

  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double l0 = edge(sx[1], sy[1], sx[2], sy[2], px, py) / area;
      const double l1 = edge(sx[2], sy[2], sx[0], sy[0], px, py) / area;
      const double l2 = edge(sx[0], sy[0], sx[1], sy[1], px, py) / area;
      if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
      const double q0 = l0 / v[0].p.z(), q1 = l1 / v[1].p.z(), q2 = l2 / v[2].p.z();
      const double qs = q0 + q1 + q2;
      const double depth = 1.0 / qs;
      auto& frag = buf.pixels[static_cast<std::size_t>(y) * buf.width + x];
      if (frag.covered()) {
        const bool nearer = depth < frag.depth - kDepthTieTolerance;
        const bool tie_wins = std::abs(depth - frag.depth) <= kDepthTieTolerance && instance < frag.instance;
        if (!nearer && !tie_wins) continue;
      }
      frag.instance = instance;
      frag.triangle = triangle;
      frag.depth = depth;
      const double b[3] = {q0 / qs, q1 / qs, q2 / qs};
      for (int k = 0; k < 3; ++k) {
        frag.bary[k] = b[0] * v[0].bary[k] + b[1] * v[1].bary[k] + b[2] * v[2].bary[k];
      }
    }
  }
}

}  // namespace detail

/// Nearest visible triangle per pixel center. Back faces and geometry behind
/// the near plane produce no fragments; depth ties within 1e-9 go to the
/// lower instance index.
inline FragmentBuffer rasterize_fragments(const Scene& scene, const Camera& camera) {
  camera.validate();
  FragmentBuffer buf;
  buf.width = camera.width;
  buf.height = camera.height;
  buf.pixels.assign(static_cast<std::size_t>(camera.width) * camera.height, Fragment{});

  for (std::size_t ii = 0; ii < scene.instances.size(); ++ii) {
    const auto& inst = scene.instances[ii];
    const RigidTransform to_camera = camera.pose.compose(inst.transform);
    std::vector<Vec3> cam_pos;
    cam_pos.reserve(inst.mesh->positions.size());
    for (const auto& p : inst.mesh->positions) cam_pos.push_back(to_camera.apply_point(p));

    for (std::size_t t = 0; t < inst.mesh->triangles.size(); ++t) {
      const auto& tri = inst.mesh->triangles[t];
      const Vec3& p0 = cam_pos[tri[0].position];
      const Vec3& p1 = cam_pos[tri[1].position];
      const Vec3& p2 = cam_pos[tri[2].position];
      if (p0.z() < kNearPlane && p1.z() < kNearPlane && p2.z() < kNearPlane) continue;
      // Camera at origin: front-facing iff the normal points back toward it.
      if (!((p1 - p0).cross(p2 - p0).dot(p0) < 0.0)) continue;

      const std::array<detail::ClipVertex, 3> corners{{{p0, {1, 0, 0}}, {p1, {0, 1, 0}}, {p2, {0, 0, 1}}}};
      const int inst_idx = static_cast<int>(ii), tri_idx = static_cast<int>(t);
      if (p0.z() >= kNearPlane && p1.z() >= kNearPlane && p2.z() >= kNearPlane) {
        detail::raster_triangle(corners, camera, inst_idx, tri_idx, buf);
        continue;
      }
      const auto poly = detail::clip_near(corners);
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        detail::raster_triangle({poly[0], poly[k], poly[k + 1]}, camera, inst_idx, tri_idx, buf);
      }
    }
  }
  return buf;
}

/// Per-pixel attributes the neural renderer consumes. Background pixels have
/// object_id 0, uv (0,0), view_dir (0,0,0) and depth 0.
struct GBuffer {
  int width = 0, height = 0;
  std::vector<float> uv;        // 2 per pixel
  std::vector<float> view_dir;  // 3 per pixel, world frame
  std::vector<float> depth;
  std::vector<std::uint16_t> object_id;

  static GBuffer empty(int width, int height) {
    GBuffer g;
    g.width = width;
    g.height = height;
    const auto n = static_cast<std::size_t>(width) * height;
    g.uv.assign(2 * n, 0.0f);
    g.view_dir.assign(3 * n, 0.0f);
    g.depth.assign(n, 0.0f);
    g.object_id.assign(n, 0);
    return g;
  }

  std::size_t pixel_count() const { return object_id.size(); }
  bool mask(std::size_t pixel) const { return object_id[pixel] != 0; }
  std::size_t covered_count() const {
    return static_cast<std::size_t>(std::count_if(object_id.begin(), object_id.end(),
                                                  [](std::uint16_t id) { return id != 0; }));
  }

  friend bool operator==(const GBuffer&, const GBuffer&) = default;
};

inline GBuffer gbuffer_from_fragments(const Scene& scene, const Camera& camera, const FragmentBuffer& frags) {
  GBuffer g = GBuffer::empty(frags.width, frags.height);
  for (std::size_t i = 0; i < frags.pixels.size(); ++i) {
    const auto& f = frags.pixels[i];
    if (!f.covered()) continue;
    if (f.instance + 1 > 0xFFFF) throw ConfigError("too many scene instances for a 16-bit object id");
    const SurfacePoint s = surface_at(scene, f);
    const Vec3 dir = view_direction(s.position, camera);
    g.uv[2 * i] = static_cast<float>(s.uv.x());
    g.uv[2 * i + 1] = static_cast<float>(s.uv.y());
    for (int k = 0; k < 3; ++k) g.view_dir[3 * i + k] = static_cast<float>(dir[k]);
    g.depth[i] = static_cast<float>(f.depth);
    g.object_id[i] = static_cast<std::uint16_t>(f.instance + 1);
  }
  return g;
}

inline GBuffer rasterize(const Scene& scene, const Camera& camera) {
  return gbuffer_from_fragments(scene, camera, rasterize_fragments(scene, camera));
}

// ---------------------------------------------------------------------------
// Binary format: "NTGB", u32 version, u32 width, u32 height, u32 float
// channels (6), u32 id bytes (2), then one record per pixel in row-major
// order: f32 u, v, view_x, view_y, view_z, depth followed by u16 object_id.

inline constexpr std::uint32_t kGBufferVersion = 1;

inline void save_gbuffer(const GBuffer& g, std::ostream& out) {
  io::write_magic(out, "NTGB");
  io::write_pod<std::uint32_t>(out, kGBufferVersion);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(g.width));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(g.height));
  io::write_pod<std::uint32_t>(out, 6);
  io::write_pod<std::uint32_t>(out, 2);
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    const float rec[6] = {g.uv[2 * i], g.uv[2 * i + 1], g.view_dir[3 * i], g.view_dir[3 * i + 1],
                          g.view_dir[3 * i + 2], g.depth[i]};
    io::write_array<float>(out, rec);
    io::write_pod<std::uint16_t>(out, g.object_id[i]);
  }
  if (!out) throw IoError("failed to write G-buffer");
}

inline GBuffer load_gbuffer(std::istream& in) {
  io::expect_magic(in, "NTGB");
  const auto version = io::read_pod<std::uint32_t>(in, "version");
  if (version != kGBufferVersion) throw FormatError("unsupported G-buffer version " + std::to_string(version));
  const auto width = io::read_pod<std::uint32_t>(in, "width");
  const auto height = io::read_pod<std::uint32_t>(in, "height");
  const auto float_channels = io::read_pod<std::uint32_t>(in, "channel layout");
  const auto id_bytes = io::read_pod<std::uint32_t>(in, "channel layout");
  if (float_channels != 6 || id_bytes != 2) throw FormatError("unsupported G-buffer channel layout");
  if (width == 0 || height == 0 || width > (1u << 15) || height > (1u << 15)) {
    throw FormatError("implausible G-buffer size " + std::to_string(width) + "x" + std::to_string(height));
  }
  GBuffer g = GBuffer::empty(static_cast<int>(width), static_cast<int>(height));
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    float rec[6];
    io::read_array<float>(in, rec, "G-buffer body");
    g.uv[2 * i] = rec[0];
    g.uv[2 * i + 1] = rec[1];
    for (int k = 0; k < 3; ++k) g.view_dir[3 * i + k] = rec[2 + k];
    g.depth[i] = rec[5];
    g.object_id[i] = io::read_pod<std::uint16_t>(in, "G-buffer body");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("G-buffer stream is longer than its header declares");
  }
  return g;
}

}  // namespace ntex
