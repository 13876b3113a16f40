#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include <Eigen/Dense>

#include "evpupil/config.hpp"

namespace evpupil {

struct Center {
  double x = 0;
  double y = 0;
};

struct KalmanParams {
  double process_noise = 0.01;      // white-acceleration spectral density, px^2/ms^3
  double measurement_noise = 1.0;   // px^2 per axis
  double initial_position_var = 10.0;
  double initial_velocity_var = 1.0;

  static KalmanParams from_config(const PipelineConfig& config) {
    KalmanParams p;
    p.process_noise = config.kalman_process_noise;
    p.measurement_noise = config.kalman_measurement_noise;
    return p;
  }
};

/// Constant-velocity state (cx, cy, vx, vy) in px and px/ms.
struct KalmanState {
  Eigen::Vector4d state = Eigen::Vector4d::Zero();
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Identity();
  std::int64_t last_t = 0;
  bool initialized = false;
  KalmanParams params;

  explicit KalmanState(KalmanParams p = {}) : params(p) {}
};

/// One filter step at time `t_us`. Without an observation the step is
/// predict-only. The first observation initializes the state. Returns the
/// posterior center, or nothing while the filter is still uninitialized.
std::pair<KalmanState, std::optional<Center>> kalman_step(const KalmanState& state, std::int64_t t_us,
                                                          const std::optional<Center>& observation);

}  // namespace evpupil
