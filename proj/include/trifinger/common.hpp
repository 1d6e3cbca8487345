#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <string>

namespace trifinger {

using Vec3 = Eigen::Vector3d;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kStandardGravity = 9.81;
inline constexpr int kNumFingers = 3;

// Errors raised by the library. Each kind named in the contracts gets its own
// type so callers can catch exactly what they handle.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TRIFINGER_DEFINE_ERROR(Name)         \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

TRIFINGER_DEFINE_ERROR(SingularSystem);
TRIFINGER_DEFINE_ERROR(NumericalBlowup);
TRIFINGER_DEFINE_ERROR(InvalidPose);
TRIFINGER_DEFINE_ERROR(CubeTilted);
TRIFINGER_DEFINE_ERROR(DegenerateGrasp);
TRIFINGER_DEFINE_ERROR(SamplingExhausted);
TRIFINGER_DEFINE_ERROR(PlanningFailed);
TRIFINGER_DEFINE_ERROR(IllConditioned);
TRIFINGER_DEFINE_ERROR(IoError);
TRIFINGER_DEFINE_ERROR(EmptyCell);
TRIFINGER_DEFINE_ERROR(ConfigError);

#undef TRIFINGER_DEFINE_ERROR

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Vec3 transform(const Vec3& p_local) const { return position + orientation * p_local; }
  Vec3 rotate(const Vec3& v_local) const { return orientation * v_local; }
  Vec3 inverse_transform(const Vec3& p_world) const {
    return orientation.conjugate() * (p_world - position);
  }
};

inline Vec3 finger_block(const Vec9& v, int finger) { return v.segment<3>(3 * finger); }

inline void set_finger_block(Vec9& v, int finger, const Vec3& value) {
  v.segment<3>(3 * finger) = value;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

inline Mat3 rot_z(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
}

// Angle of the relative rotation between two orientations, in [0, pi].
inline double rotation_angle_between(const Quat& a, const Quat& b) {
  const Quat rel = b * a.conjugate();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

// Relative rotation goal * actual^-1 as (unit axis, angle in [0, pi]).
// The axis is zero when the angle vanishes.
inline std::pair<Vec3, double> rotation_error_axis_angle(const Quat& actual, const Quat& goal) {
  Quat rel = goal * actual.conjugate();
  if (rel.w() < 0.0) rel.coeffs() = -rel.coeffs();
  const double s = rel.vec().norm();
  const double angle = 2.0 * std::atan2(s, rel.w());
  if (s < 1e-15) return {Vec3::Zero(), 0.0};
  return {rel.vec() / s, angle};
}

inline double yaw_of(const Quat& q) {
  const Vec3 x = q * Vec3::UnitX();
  return std::atan2(x.y(), x.x());
}

inline bool all_finite(const Vec9& v) { return v.allFinite(); }

inline double clamp_abs(double value, double limit) {
  return value > limit ? limit : (value < -limit ? -limit : value);
}

inline Vec9 clamp_torque(const Vec9& tau, double tau_max) {
  Vec9 out;
  for (int k = 0; k < 9; ++k) out[k] = clamp_abs(tau[k], tau_max);
  return out;
}

// SplitMix64 step; used to derive independent per-episode and per-window seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(a ^ mix_seed(b + 0x632be59bd9b4e019ULL));
}

}  // namespace trifinger
