// Copyright 2026 The amend Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Scenario difficulty from the open-loop error of a constant-velocity Kalman
// filter, and the nested Top-alpha% splits built from it.

#ifndef AMEND_DIFFICULTY_HPP_
#define AMEND_DIFFICULTY_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amend/common.hpp"
#include "amend/data.hpp"

namespace amend
{

struct KalmanParams
{
  double dt = 0.4;
  double q = 0.1;  // white-acceleration process noise intensity
  double r = 0.1;  // position observation noise variance
};

/// Constant-velocity filter over (x, y, vx, vy).
class KalmanFilter
{
public:
  using Vector4 = Eigen::Vector4d;
  using Matrix4 = Eigen::Matrix4d;

  KalmanFilter(const KalmanParams & params, Point2 position, Point2 velocity)
  : params_(params)
  {
    const double dt = params.dt;
    transition_ = Matrix4::Identity();
    transition_(0, 2) = dt;
    transition_(1, 3) = dt;

    const double q = params.q;
    process_noise_ = Matrix4::Zero();
    for (int axis = 0; axis < 2; ++axis) {
      process_noise_(axis, axis) = q * std::pow(dt, 4) / 4.0;
      process_noise_(axis, axis + 2) = q * std::pow(dt, 3) / 2.0;
      process_noise_(axis + 2, axis) = q * std::pow(dt, 3) / 2.0;
      process_noise_(axis + 2, axis + 2) = q * dt * dt;
    }
    state_ << position.x, position.y, velocity.x, velocity.y;
    covariance_ = Matrix4::Identity();
  }

  void predict()
  {
    state_ = transition_ * state_;
    covariance_ = transition_ * covariance_ * transition_.transpose() + process_noise_;
    symmetrize();
  }

  // Joseph-form update keeps the covariance symmetric positive semi-definite.
  void update(Point2 z)
  {
    Eigen::Matrix<double, 2, 4> h = Eigen::Matrix<double, 2, 4>::Zero();
    h(0, 0) = 1.0;
    h(1, 1) = 1.0;
    const Eigen::Matrix2d r = params_.r * Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d s = h * covariance_ * h.transpose() + r;
    const Eigen::Matrix<double, 4, 2> gain = covariance_ * h.transpose() * s.inverse();
    const Eigen::Vector2d innovation = Eigen::Vector2d(z.x, z.y) - h * state_;
    state_ += gain * innovation;
    const Matrix4 a = Matrix4::Identity() - gain * h;
    covariance_ = a * covariance_ * a.transpose() + gain * r * gain.transpose();
    symmetrize();
  }

  Point2 position() const { return {state_(0), state_(1)}; }
  const Vector4 & state() const { return state_; }
  const Matrix4 & covariance() const { return covariance_; }

private:
  void symmetrize() { covariance_ = 0.5 * (covariance_ + covariance_.transpose()).eval(); }

  KalmanParams params_;
  Matrix4 transition_;
  Matrix4 process_noise_;
  Vector4 state_;
  Matrix4 covariance_;
};

/// Filters the history (initialized from its first two points) and forecasts
/// `horizon` steps open-loop. The optional callback sees the filter after
/// every step.
template <typename OnStep>
Trajectory kalman_forecast(const Trajectory & history, int horizon, const KalmanParams & params,
                           OnStep && on_step)
{
  if (history.size() < 2) {
    throw Error("kalman_forecast needs at least two history points");
  }
  const Point2 velocity = (1.0 / params.dt) * (history[1] - history[0]);
  KalmanFilter filter(params, history[1], velocity);
  on_step(filter);
  for (std::size_t t = 2; t < history.size(); ++t) {
    filter.predict();
    on_step(filter);
    filter.update(history[t]);
    on_step(filter);
  }
  Trajectory forecast;
  forecast.reserve(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon; ++t) {
    filter.predict();
    on_step(filter);
    forecast.push_back(filter.position());
  }
  return forecast;
}

inline Trajectory kalman_forecast(const Trajectory & history, int horizon,
                                  const KalmanParams & params)
{
  return kalman_forecast(history, horizon, params, [](const KalmanFilter &) {});
}

struct DifficultyScore
{
  std::int64_t sample_id = 0;
  double score = 0.0;
};

/// ADE + FDE of the open-loop Kalman forecast against the raw future (meters).
inline DifficultyScore kalman_score(const TrajectorySample & sample, const KalmanParams & params)
{
  if (sample.ego_future.empty()) {
    throw Error("kalman_score needs a ground-truth future");
  }
  const Trajectory forecast =
      kalman_forecast(sample.ego_history, static_cast<int>(sample.ego_future.size()), params);
  double ade = 0.0;
  for (std::size_t t = 0; t < forecast.size(); ++t) {
    ade += distance(forecast[t], sample.ego_future[t]);
  }
  ade /= static_cast<double>(forecast.size());
  const double fde = distance(forecast.back(), sample.ego_future.back());
  return {sample.sample_id, ade + fde};
}

inline std::vector<DifficultyScore> kalman_scores(const std::vector<TrajectorySample> & samples,
                                                  const KalmanParams & params)
{
  std::vector<DifficultyScore> out;
  out.reserve(samples.size());
  for (const auto & s : samples) {
    out.push_back(kalman_score(s, params));
  }
  return out;
}

/// The ceil(alpha/100 * n) highest-scoring ids, ties to the lower id.
inline std::set<std::int64_t> top_percent_split(const std::vector<DifficultyScore> & scores,
                                                double alpha_percent)
{
  if (scores.empty()) {
    throw Error("top_percent_split: empty score list");
  }
  if (!(alpha_percent > 0.0) || alpha_percent > 100.0) {
    throw ConfigError("top_percent_split: alpha must lie in (0, 100]");
  }
  std::vector<DifficultyScore> sorted = scores;
  std::sort(sorted.begin(), sorted.end(), [](const DifficultyScore & a, const DifficultyScore & b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sample_id < b.sample_id;
  });
  const double exact = alpha_percent * static_cast<double>(scores.size()) / 100.0;
  const auto count = std::min(sorted.size(), static_cast<std::size_t>(std::ceil(exact - 1e-9)));
  std::set<std::int64_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.insert(sorted[i].sample_id);
  }
  return out;
}

inline void write_scores(std::ostream & out, const std::vector<DifficultyScore> & scores)
{
  out.precision(17);
  for (const auto & s : scores) {
    out << s.sample_id << '\t' << s.score << '\n';
  }
}

inline std::vector<DifficultyScore> read_scores(std::istream & in)
{
  std::vector<DifficultyScore> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    DifficultyScore s;
    if (fields.size() != 2 || !detail::parse_integral(fields[0], s.sample_id) ||
        !detail::parse_double(fields[1], s.score)) {
      throw ParseError("expected sample_id<TAB>score", line_no);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace amend

#endif  // AMEND_DIFFICULTY_HPP_
