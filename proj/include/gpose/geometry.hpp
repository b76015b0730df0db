#pragma once

// Viewpoint sampling, rotation / 2D similarity algebra and the chain that
// turns (out-of-plane rotation, template->query similarity) into a 6D pose.
//
// Conventions: camera frame is x right, y down, z forward. Rotations map
// object coordinates into camera coordinates (p_cam = R p_obj + t). 2D
// homogeneous points are column vectors; all matrices are row-major in
// serialized form.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "gpose/error.hpp"

namespace gpose {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

/// Object-to-camera rotation; orthonormal with det +1.
template <typename Scalar>
using Rotation3 = Mat3<Scalar>;

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_angle(Scalar a) {
  Scalar r = std::atan2(std::sin(a), std::cos(a));
  if (r <= -std::numbers::pi_v<Scalar>) r += 2 * std::numbers::pi_v<Scalar>;
  return r;
}

template <typename Derived>
bool is_rotation(const Eigen::MatrixBase<Derived>& r, double tol = 1e-9) {
  using Scalar = typename Derived::Scalar;
  const Mat3<Scalar> m = r;
  return (m * m.transpose() - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(m.determinant() - Scalar(1)) <= tol;
}

/// Rotation about the camera optical axis by alpha.
template <typename Scalar>
Rotation3<Scalar> inplane_rotation(Scalar alpha) {
  const Scalar c = std::cos(alpha), s = std::sin(alpha);
  Rotation3<Scalar> r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

/// 2D similarity transform
///
///   [ s cos a   -s sin a   tx ]
///   [ s sin a    s cos a   ty ]
///   [    0          0       1 ]
///
/// Used for the template->query map, the crop transforms of both images and
/// their composition.
template <typename Scalar>
struct Affine2 {
  Scalar s = 1;
  Scalar alpha = 0;
  Vec2<Scalar> t = Vec2<Scalar>::Zero();

  Affine2() = default;
  Affine2(Scalar scale, Scalar angle, const Vec2<Scalar>& translation)
      : s(scale), alpha(normalize_angle(angle)), t(translation) {}

  static Affine2 identity() { return Affine2(); }

  Mat3<Scalar> matrix() const {
    const Scalar c = std::cos(alpha), sn = std::sin(alpha);
    Mat3<Scalar> m;
    m << s * c, -s * sn, t.x(), s * sn, s * c, t.y(), 0, 0, 1;
    return m;
  }

  /// Re-expresses a similarity matrix as (s, alpha, t). The scale is the norm
  /// of the first column.
  template <typename Derived>
  static Affine2 from_matrix(const Eigen::MatrixBase<Derived>& m) {
    const Scalar a = m(0, 0), b = m(1, 0);
    const Scalar scale = std::hypot(a, b);
    if (!(scale > 0)) throw Error(ErrorCode::kDegenerateTransform, "similarity with zero scale");
    return Affine2(scale, std::atan2(b, a), Vec2<Scalar>(m(0, 2), m(1, 2)));
  }

  Vec2<Scalar> apply(const Vec2<Scalar>& p) const {
    const Scalar c = std::cos(alpha), sn = std::sin(alpha);
    return Vec2<Scalar>(s * (c * p.x() - sn * p.y()) + t.x(), s * (sn * p.x() + c * p.y()) + t.y());
  }

  Affine2 inverse() const {
    if (!(s > 0)) throw Error(ErrorCode::kDegenerateTransform, "non-positive scale");
    const Scalar inv_s = 1 / s;
    const Scalar c = std::cos(-alpha), sn = std::sin(-alpha);
    const Vec2<Scalar> ti(-inv_s * (c * t.x() - sn * t.y()), -inv_s * (sn * t.x() + c * t.y()));
    return Affine2(inv_s, -alpha, ti);
  }

  Affine2 operator*(const Affine2& rhs) const { return from_matrix(matrix() * rhs.matrix()); }
};

template <typename Scalar>
struct CameraIntrinsics {
  Scalar fx = 1, fy = 1, cx = 0, cy = 0;

  Mat3<Scalar> matrix() const {
    Mat3<Scalar> k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
  /// Focal length used by the depth-from-scale relation.
  Scalar focal() const { return fx; }

  Vec2<Scalar> project(const Vec3<Scalar>& p) const {
    return Vec2<Scalar>(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
  }
  Vec3<Scalar> backproject(const Vec2<Scalar>& uv, Scalar depth) const {
    return Vec3<Scalar>((uv.x() - cx) / fx * depth, (uv.y() - cy) / fy * depth, depth);
  }
  void validate() const {
    if (!(fx > 0 && fy > 0)) throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  }
};

template <typename Scalar>
struct Pose6D {
  Rotation3<Scalar> rotation = Rotation3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();  // mm

  Vec3<Scalar> transform(const Vec3<Scalar>& p) const { return rotation * p + translation; }
};

struct Viewpoint {
  Eigen::Vector3d direction;  // unit vector from object center toward the camera
  Rotation3<double> rotation;
};
using ViewpointSet = std::vector<Viewpoint>;

/// Vertices of an icosahedron subdivided `subdivisions` times (0..4), on the
/// unit sphere, sorted lexicographically, each with its look-at rotation.
ViewpointSet icosphere_viewpoints(int subdivisions);

/// Expected icosphere vertex count, 10 * 4^n + 2.
constexpr int icosphere_vertex_count(int subdivisions) { return 10 * (1 << (2 * subdivisions)) + 2; }

/// Look-at rotation for a camera placed along `direction` and looking at the
/// origin: camera z-axis = -direction. The image "up" follows world +z, or
/// world +x when |direction . z| > 0.999.
template <typename Scalar>
Rotation3<Scalar> viewpoint_to_rotation(const Vec3<Scalar>& direction) {
  const Scalar n = direction.norm();
  if (!(n > 0)) throw Error(ErrorCode::kInvalidArgument, "zero viewpoint direction");
  if (std::abs(n - 1) > Scalar(1e-9)) throw Error(ErrorCode::kInvalidArgument, "viewpoint direction is not unit norm");
  const Vec3<Scalar> z = -direction / n;
  const Vec3<Scalar> up = std::abs(z.z()) > Scalar(0.999) ? Vec3<Scalar>::UnitX() : Vec3<Scalar>::UnitZ();
  const Vec3<Scalar> x = z.cross(up).normalized();
  const Vec3<Scalar> y = z.cross(x);
  Rotation3<Scalar> r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return r;
}

/// R = R_alpha * R_ae.
template <typename Scalar>
Rotation3<Scalar> compose_rotation(Scalar alpha, const Rotation3<Scalar>& r_ae) {
  return inplane_rotation(alpha) * r_ae;
}

/// Map from original template pixels to original query pixels.
///
/// `m_template` and `m_query` take original pixels to processed (224x224)
/// pixels and `m_tq` takes processed template pixels to processed query
/// pixels, so with column vectors the chain is M_Q^-1 * M_tq * M_T.
template <typename Scalar>
Affine2<Scalar> compose_template_to_query(const Affine2<Scalar>& m_template, const Affine2<Scalar>& m_tq,
                                          const Affine2<Scalar>& m_query) {
  const Mat3<Scalar> m = m_query.inverse().matrix() * m_tq.matrix() * m_template.matrix();
  return Affine2<Scalar>::from_matrix(m);
}

template <typename Scalar>
Scalar similarity_scale(const Affine2<Scalar>& m) {
  const Mat3<Scalar> mm = m.matrix();
  return std::hypot(mm(0, 0), mm(1, 0));
}

/// t_z(query) = t_z(template) / scale(M_TQ) * f_Q / f_T.
template <typename Scalar>
Scalar recover_translation_z(Scalar tz_template, const Affine2<Scalar>& m_tq_full, Scalar f_template,
                             Scalar f_query) {
  const Scalar scale = similarity_scale(m_tq_full);
  if (!(scale > 0)) throw Error(ErrorCode::kDegenerateTransform, "non-positive template-to-query scale");
  if (!(tz_template > 0)) throw Error(ErrorCode::kInvalidArgument, "template depth must be positive");
  if (!(f_template > 0 && f_query > 0)) throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  return tz_template * (Scalar(1) / scale) * (f_query / f_template);
}

/// Full 6D pose from the retrieved template rotation, the in-plane angle and
/// the original-template -> original-query similarity.
template <typename Scalar>
Pose6D<Scalar> recover_pose(const Rotation3<Scalar>& r_ae, Scalar alpha, const Affine2<Scalar>& m_tq_full,
                            const Vec2<Scalar>& template_center, Scalar tz_template,
                            const CameraIntrinsics<Scalar>& k_template, const CameraIntrinsics<Scalar>& k_query) {
  k_template.validate();
  k_query.validate();
  Pose6D<Scalar> pose;
  pose.rotation = compose_rotation(alpha, r_ae);
  const Vec2<Scalar> c_query = m_tq_full.apply(template_center);
  const Scalar tz = recover_translation_z(tz_template, m_tq_full, k_template.focal(), k_query.focal());
  const Vec3<Scalar> ray((c_query.x() - k_query.cx) / k_query.fx, (c_query.y() - k_query.cy) / k_query.fy, 1);
  pose.translation = tz * ray;
  return pose;
}

/// Similarity from two 2D-2D correspondences: scale from the length ratio,
/// angle from atan2(cross, dot) of the difference vectors, translation
/// averaged over both points.
template <typename Scalar>
Affine2<Scalar> kabsch2d(const Vec2<Scalar>& p_t1, const Vec2<Scalar>& p_t2, const Vec2<Scalar>& p_q1,
                         const Vec2<Scalar>& p_q2) {
  const Vec2<Scalar> dt = p_t2 - p_t1;
  const Vec2<Scalar> dq = p_q2 - p_q1;
  const Scalar nt = dt.norm(), nq = dq.norm();
  if (!(nt > 0) || !(nq > 0))
    throw Error(ErrorCode::kDegenerateCorrespondence, "coincident points in a correspondence pair");
  const Scalar s = nq / nt;
  const Scalar dot = dt.dot(dq);
  const Scalar cross = dt.x() * dq.y() - dt.y() * dq.x();
  const Scalar alpha = std::atan2(cross, dot);
  const Scalar c = std::cos(alpha), sn = std::sin(alpha);
  auto rotate = [&](const Vec2<Scalar>& p) { return Vec2<Scalar>(c * p.x() - sn * p.y(), sn * p.x() + c * p.y()); };
  const Vec2<Scalar> t = Scalar(0.5) * ((p_q1 - s * rotate(p_t1)) + (p_q2 - s * rotate(p_t2)));
  return Affine2<Scalar>(s, alpha, t);
}

using Affine2d = Affine2<double>;
using Intrinsicsd = CameraIntrinsics<double>;
using Pose6Dd = Pose6D<double>;
using Rotation3d = Rotation3<double>;

}  // namespace gpose
