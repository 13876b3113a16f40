#include "evpupil/tracking.hpp"

#include "evpupil/errors.hpp"

namespace evpupil {

std::pair<KalmanState, std::optional<Center>> kalman_step(const KalmanState& state, std::int64_t t_us,
                                                          const std::optional<Center>& observation) {
  KalmanState next = state;
  if (!state.initialized) {
    if (!observation) return {next, std::nullopt};
    next.state << observation->x, observation->y, 0.0, 0.0;
    next.covariance = Eigen::Vector4d(state.params.initial_position_var, state.params.initial_position_var,
                                      state.params.initial_velocity_var, state.params.initial_velocity_var)
                          .asDiagonal();
    next.last_t = t_us;
    next.initialized = true;
    return {next, Center{observation->x, observation->y}};
  }
  if (t_us < state.last_t) throw ArgumentError("kalman_step: time moved backwards");

  const double dt = static_cast<double>(t_us - state.last_t) / 1000.0;
  Eigen::Matrix4d F = Eigen::Matrix4d::Identity();
  F(0, 2) = dt;
  F(1, 3) = dt;
  const double q = state.params.process_noise;
  const double q11 = q * dt * dt * dt / 3.0, q12 = q * dt * dt / 2.0, q22 = q * dt;
  Eigen::Matrix4d Q = Eigen::Matrix4d::Zero();
  Q(0, 0) = Q(1, 1) = q11;
  Q(0, 2) = Q(2, 0) = Q(1, 3) = Q(3, 1) = q12;
  Q(2, 2) = Q(3, 3) = q22;

  next.state = F * state.state;
  next.covariance = F * state.covariance * F.transpose() + Q;
  next.last_t = t_us;

  if (observation) {
    Eigen::Matrix<double, 2, 4> H = Eigen::Matrix<double, 2, 4>::Zero();
    H(0, 0) = 1.0;
    H(1, 1) = 1.0;
    const Eigen::Matrix2d R = Eigen::Matrix2d::Identity() * state.params.measurement_noise;
    const Eigen::Vector2d z(observation->x, observation->y);
    const Eigen::Vector2d innovation = z - H * next.state;
    const Eigen::Matrix2d S = H * next.covariance * H.transpose() + R;
    const Eigen::Matrix<double, 4, 2> K = next.covariance * H.transpose() * S.inverse();
    next.state += K * innovation;
    // Joseph form keeps the covariance symmetric PSD.
    const Eigen::Matrix4d I_KH = Eigen::Matrix4d::Identity() - K * H;
    next.covariance = I_KH * next.covariance * I_KH.transpose() + K * R * K.transpose();
  }
  next.covariance = 0.5 * (next.covariance + next.covariance.transpose()).eval();
  return {next, Center{next.state(0), next.state(1)}};
}

}  // namespace evpupil
