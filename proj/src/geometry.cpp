#include "gpose/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <utility>

namespace gpose {
namespace {

using Face = std::array<int, 3>;

void base_icosahedron(std::vector<Eigen::Vector3d>& verts, std::vector<Face>& faces) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  verts = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
           {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},  {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : verts) v.normalize();
  faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
           {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
           {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
}

int midpoint(int a, int b, std::vector<Eigen::Vector3d>& verts, std::map<std::pair<int, int>, int>& cache) {
  const auto key = std::minmax(a, b);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  verts.push_back((verts[a] + verts[b]).normalized());
  const int id = static_cast<int>(verts.size()) - 1;
  cache.emplace(key, id);
  return id;
}

double rounded(double v) { return std::round(v * 1e9) / 1e9; }

}  // namespace

ViewpointSet icosphere_viewpoints(int subdivisions) {
  if (subdivisions < 0 || subdivisions > 4)
    throw Error(ErrorCode::kInvalidArgument, "subdivision level must be in [0, 4]");

  std::vector<Eigen::Vector3d> verts;
  std::vector<Face> faces;
  base_icosahedron(verts, faces);

  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> cache;
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const int ab = midpoint(f[0], f[1], verts, cache);
      const int bc = midpoint(f[1], f[2], verts, cache);
      const int ca = midpoint(f[2], f[0], verts, cache);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }

  std::sort(verts.begin(), verts.end(), [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    for (int i = 0; i < 3; ++i) {
      const double ra = rounded(a[i]), rb = rounded(b[i]);
      if (ra != rb) return ra < rb;
    }
    return false;
  });

  ViewpointSet out;
  out.reserve(verts.size());
  for (const auto& v : verts) out.push_back({v, viewpoint_to_rotation<double>(v)});
  return out;
}

}  // namespace gpose
