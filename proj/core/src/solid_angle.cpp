#include "penning/solid_angle.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace penning {
namespace {

// Derivatives of F(a, b, h) = atan(a b / (h R)) with R = sqrt(a^2 + b^2 + h^2).
struct CornerTerm {
  double f = 0.0;
  double fa = 0.0, fb = 0.0, fh = 0.0;
  double faa = 0.0, fbb = 0.0, fhh = 0.0;
  double fab = 0.0, fah = 0.0, fbh = 0.0;
};

CornerTerm corner_term(double a, double b, double h) {
  const double a2 = a * a;
  const double b2 = b * b;
  const double h2 = h * h;
  const double r2 = a2 + b2 + h2;
  const double r = std::sqrt(r2);
  const double r3 = r2 * r;
  const double p = a2 + h2;
  const double q = b2 + h2;

  CornerTerm t;
  t.f = std::atan(a * b / (h * r));
  t.fa = b * h / (p * r);
  t.fb = a * h / (q * r);
  t.fh = -a * b * (r2 + h2) / (p * q * r);

  t.faa = -a * b * h * (2.0 * r2 + p) / (p * p * r3);
  t.fbb = -a * b * h * (2.0 * r2 + q) / (q * q * r3);
  t.fab = h / r3;
  t.fah = b * (p * r2 - 2.0 * h2 * r2 - h2 * p) / (p * p * r3);
  t.fbh = a * (q * r2 - 2.0 * h2 * r2 - h2 * q) / (q * q * r3);
  t.fhh = -a * b * h / (p * q * r) * (4.0 - (r2 + h2) * (2.0 / p + 2.0 / q + 1.0 / r2));
  return t;
}

double effective_height(const Rect& rect, const Vec3& r) {
  double h = r.y();
  if (h == 0.0) {
    if (rect.contains(r.x(), r.z())) {
      throw std::invalid_argument("field point lies on the rectangle surface");
    }
    // Potential and field are continuous through the plane off the rectangle.
    h = 1e-12 * std::max(rect.width(), rect.length());
  }
  return h;
}

}  // namespace

bool Rect::overlaps(const Rect& o) const {
  return x1 < o.x2 && o.x1 < x2 && z1 < o.z2 && o.z1 < z2;
}

SolidAngle rect_solid_angle(const Rect& rect, const Vec3& r) {
  const double h = effective_height(rect, r);
  const std::array<double, 2> as{rect.x1 - r.x(), rect.x2 - r.x()};
  const std::array<double, 2> bs{rect.z1 - r.z(), rect.z2 - r.z()};

  SolidAngle out;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double s = (i == j) ? 1.0 : -1.0;
      const CornerTerm t = corner_term(as[i], bs[j], h);
      out.value += s * t.f;
      // d/dx = -d/da, d/dz = -d/db, d/dy = d/dh.
      out.gradient += s * Vec3(-t.fa, t.fh, -t.fb);
      out.hessian(0, 0) += s * t.faa;
      out.hessian(1, 1) += s * t.fhh;
      out.hessian(2, 2) += s * t.fbb;
      out.hessian(0, 1) += -s * t.fah;
      out.hessian(0, 2) += s * t.fab;
      out.hessian(1, 2) += -s * t.fbh;
    }
  }
  out.hessian(1, 0) = out.hessian(0, 1);
  out.hessian(2, 0) = out.hessian(0, 2);
  out.hessian(2, 1) = out.hessian(1, 2);
  return out;
}

double rect_solid_angle_value(const Rect& rect, const Vec3& r) {
  const double h = effective_height(rect, r);
  const std::array<double, 2> as{rect.x1 - r.x(), rect.x2 - r.x()};
  const std::array<double, 2> bs{rect.z1 - r.z(), rect.z2 - r.z()};
  double value = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double a = as[i];
      const double b = bs[j];
      const double rr = std::sqrt(a * a + b * b + h * h);
      value += ((i == j) ? 1.0 : -1.0) * std::atan(a * b / (h * rr));
    }
  }
  return value;
}

}  // namespace penning
