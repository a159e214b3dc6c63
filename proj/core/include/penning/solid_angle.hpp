#pragma once

// Signed solid angle of an axis-aligned rectangle lying in the y = 0 plane,
// with analytic gradient and Hessian with respect to the field point.
//
// For a rectangle (x1, x2) x (z1, z2) seen from r = (x, y, z):
//   Omega = sum_corners s_ij atan(a_i b_j / (y R_ij)),  a_i = x_i - x, b_j = z_j - z,
//   R_ij = sqrt(a_i^2 + b_j^2 + y^2),  s = +1 on (x2, z2), (x1, z1) and -1 otherwise.
// Omega is positive above the plane, odd in y and harmonic away from the rectangle.
// A unit-potential electrode in a grounded plane has potential Omega / (2 pi);
// a uniform double layer of density D has potential D Omega / (4 pi eps0).

#include "penning/trap.hpp"

namespace penning {

struct Rect {
  double x1 = 0.0;
  double x2 = 0.0;
  double z1 = 0.0;
  double z2 = 0.0;

  double width() const { return x2 - x1; }
  double length() const { return z2 - z1; }
  double area() const { return width() * length(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_z() const { return 0.5 * (z1 + z2); }
  bool valid() const { return x1 < x2 && z1 < z2; }
  /// Closed containment test in the plane.
  bool contains(double x, double z) const { return x >= x1 && x <= x2 && z >= z1 && z <= z2; }
  bool overlaps(const Rect& other) const;
};

struct SolidAngle {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();
};

/// Throws std::invalid_argument if r lies in the plane on the closed rectangle.
SolidAngle rect_solid_angle(const Rect& rect, const Vec3& r);

/// Value only.
double rect_solid_angle_value(const Rect& rect, const Vec3& r);

}  // namespace penning
