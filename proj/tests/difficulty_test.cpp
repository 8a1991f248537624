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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include <Eigen/Eigenvalues>

#include "amend/difficulty.hpp"

namespace amend
{
namespace
{

constexpr int kHist = 8;
constexpr int kPred = 12;
constexpr double kDt = 0.4;

TrajectorySample from_positions(const std::function<Point2(double)> & pos, std::int64_t id = 0)
{
  TrajectorySample s;
  s.sample_id = id;
  for (int t = 0; t < kHist; ++t) s.ego_history.push_back(pos(t * kDt));
  for (int t = kHist; t < kHist + kPred; ++t) s.ego_future.push_back(pos(t * kDt));
  return s;
}

// Per-axis position/velocity filter written with scalars, for comparison.
struct AxisFilter
{
  double x, v;
  double pxx = 1.0, pxv = 0.0, pvv = 1.0;
  double dt, q, r;

  void predict()
  {
    x += dt * v;
    const double nxx = pxx + 2.0 * dt * pxv + dt * dt * pvv + q * std::pow(dt, 4) / 4.0;
    const double nxv = pxv + dt * pvv + q * std::pow(dt, 3) / 2.0;
    const double nvv = pvv + q * dt * dt;
    pxx = nxx;
    pxv = nxv;
    pvv = nvv;
  }

  void update(double z)
  {
    const double s = pxx + r;
    const double kx = pxx / s;
    const double kv = pxv / s;
    const double innov = z - x;
    x += kx * innov;
    v += kv * innov;
    const double nxx = (1.0 - kx) * pxx;
    const double nxv = (1.0 - kx) * pxv;
    const double nvv = pvv - kv * pxv;
    pxx = nxx;
    pxv = nxv;
    pvv = nvv;
  }
};

double reference_score(const TrajectorySample & s, const KalmanParams & p)
{
  const auto & h = s.ego_history;
  AxisFilter fx{h[1].x, (h[1].x - h[0].x) / p.dt};
  AxisFilter fy{h[1].y, (h[1].y - h[0].y) / p.dt};
  for (AxisFilter * f : {&fx, &fy}) {
    f->dt = p.dt;
    f->q = p.q;
    f->r = p.r;
  }
  for (std::size_t t = 2; t < h.size(); ++t) {
    fx.predict();
    fy.predict();
    fx.update(h[t].x);
    fy.update(h[t].y);
  }
  double ade = 0.0;
  double fde = 0.0;
  for (std::size_t t = 0; t < s.ego_future.size(); ++t) {
    fx.predict();
    fy.predict();
    const double d = std::hypot(fx.x - s.ego_future[t].x, fy.x - s.ego_future[t].y);
    ade += d;
    fde = d;
  }
  return ade / static_cast<double>(s.ego_future.size()) + fde;
}

TEST(KalmanScore, ConstantVelocityIsExact)
{
  const auto s = from_positions([](double t) { return Point2{3.0 + 1.5 * t, -2.0 + 0.7 * t}; });
  EXPECT_LT(kalman_score(s, KalmanParams{}).score, 1e-9);
}

TEST(KalmanScore, StationaryIsExact)
{
  const auto s = from_positions([](double) { return Point2{12.0, -4.0}; });
  EXPECT_LT(kalman_score(s, KalmanParams{}).score, 1e-9);
}

TEST(KalmanScore, ConstantAccelerationMatchesScalarReference)
{
  const auto s = from_positions([](double t) { return Point2{0.5 * t, 2.0 * t + 0.5 * t * t}; }, 9);
  for (const KalmanParams p : {KalmanParams{}, KalmanParams{kDt, 1.0, 0.01}, KalmanParams{kDt, 0.01, 2.0}}) {
    const double ours = kalman_score(s, p).score;
    const double ref = reference_score(s, p);
    ASSERT_GT(ref, 0.1);
    EXPECT_LT(std::fabs(ours - ref) / ref, 1e-9);
  }
  EXPECT_EQ(kalman_score(s, KalmanParams{}).sample_id, 9);
}

TEST(KalmanScore, RandomSamplesMatchScalarReference)
{
  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    TrajectorySample s;
    for (int t = 0; t < kHist; ++t) s.ego_history.push_back({5.0 * rng.normal(), 5.0 * rng.normal()});
    for (int t = 0; t < kPred; ++t) s.ego_future.push_back({5.0 * rng.normal(), 5.0 * rng.normal()});
    const double ref = reference_score(s, KalmanParams{});
    EXPECT_NEAR(kalman_score(s, KalmanParams{}).score, ref, 1e-9 * ref);
  }
}

TEST(KalmanScore, RequiresFutureAndHistory)
{
  TrajectorySample s = from_positions([](double t) { return Point2{t, t}; });
  s.ego_future.clear();
  EXPECT_THROW(kalman_score(s, KalmanParams{}), Error);
  EXPECT_THROW(kalman_forecast({{0.0, 0.0}}, 3, KalmanParams{}), Error);
}

TEST(KalmanFilter, CovarianceStaysSymmetricPsd)
{
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Trajectory h;
    for (int t = 0; t < kHist; ++t) h.push_back({10.0 * rng.normal(), 10.0 * rng.normal()});
    const KalmanParams p{kDt, rng.uniform(1e-3, 5.0), rng.uniform(1e-3, 5.0)};
    double min_eig = 1.0;
    double asym = 0.0;
    kalman_forecast(h, kPred, p, [&](const KalmanFilter & f) {
      const auto & c = f.covariance();
      asym = std::max(asym, (c - c.transpose()).cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(c);
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    });
    EXPECT_GE(min_eig, -1e-12);
    EXPECT_EQ(asym, 0.0);
  }
}

TEST(KalmanScore, MedianGrowsWithNoise)
{
  double previous = -1.0;
  for (const double sigma : {0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
    std::vector<double> scores;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      auto s = from_positions([](double t) { return Point2{1.0 + 2.0 * t, 0.5 - 1.0 * t}; });
      for (auto * traj : {&s.ego_history, &s.ego_future}) {
        for (auto & p : *traj) p = p + Point2{sigma * rng.normal(), sigma * rng.normal()};
      }
      scores.push_back(kalman_score(s, KalmanParams{}).score);
    }
    std::nth_element(scores.begin(), scores.begin() + 50, scores.end());
    EXPECT_GE(scores[50], previous) << "sigma " << sigma;
    previous = scores[50];
  }
}

std::vector<DifficultyScore> make_scores(const std::vector<double> & values)
{
  std::vector<DifficultyScore> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back({static_cast<std::int64_t>(i), values[i]});
  }
  return out;
}

TEST(TopPercent, ThreeLargestOfHundred)
{
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = (i * 37) % 100;
  const auto split = top_percent_split(make_scores(v), 3);
  std::set<std::int64_t> expected;
  for (int i = 0; i < 100; ++i) {
    if (v[static_cast<std::size_t>(i)] >= 97) expected.insert(i);
  }
  EXPECT_EQ(split, expected);
}

TEST(TopPercent, TiesGoToLowerId)
{
  auto scores = make_scores(std::vector<double>(100, 2.5));
  std::reverse(scores.begin(), scores.end());
  EXPECT_EQ(top_percent_split(scores, 1), (std::set<std::int64_t>{0}));
  EXPECT_EQ(top_percent_split(scores, 3), (std::set<std::int64_t>{0, 1, 2}));
}

TEST(TopPercent, CountRoundsUp)
{
  const auto scores = make_scores({1, 2, 3, 4, 5, 6, 7});
  EXPECT_EQ(top_percent_split(scores, 1).size(), 1u);
  EXPECT_EQ(top_percent_split(scores, 50).size(), 4u);
  EXPECT_EQ(top_percent_split(scores, 100).size(), 7u);
  EXPECT_EQ(top_percent_split(make_scores(std::vector<double>(300, 1.0)), 1).size(), 3u);
}

TEST(TopPercent, MatchesSortOracleAndNests)
{
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(400);
    std::vector<DifficultyScore> scores;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse values so ties are common.
      scores.push_back({static_cast<std::int64_t>(rng.index(100000)), std::floor(rng.uniform(0, 20))});
    }
    std::set<std::int64_t> prev;
    for (const double a : {1.0, 3.0, 5.0, 37.5, 100.0}) {
      // Oracle: rank every entry by (score desc, id asc) with a plain scan.
      std::set<std::int64_t> oracle;
      const auto need = static_cast<std::size_t>(std::ceil(a * static_cast<double>(n) / 100.0 - 1e-9));
      std::vector<bool> taken(n, false);
      for (std::size_t pick = 0; pick < need; ++pick) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (taken[i]) continue;
          if (best == n || scores[i].score > scores[best].score ||
              (scores[i].score == scores[best].score && scores[i].sample_id < scores[best].sample_id)) {
            best = i;
          }
        }
        taken[best] = true;
        oracle.insert(scores[best].sample_id);
      }
      const auto split = top_percent_split(scores, a);
      EXPECT_EQ(split, oracle);
      EXPECT_TRUE(std::includes(split.begin(), split.end(), prev.begin(), prev.end()));
      prev = split;
    }
  }
}

TEST(TopPercent, RejectsBadInput)
{
  EXPECT_THROW(top_percent_split({}, 5), Error);
  EXPECT_THROW(top_percent_split(make_scores({1.0}), 0), ConfigError);
  EXPECT_THROW(top_percent_split(make_scores({1.0}), 100.5), ConfigError);
}

TEST(ScoresFile, RoundTripsExactly)
{
  const std::vector<DifficultyScore> scores{{4, 0.1}, {-2, 1.0 / 3.0}, {99, 1e-300}};
  std::stringstream ss;
  write_scores(ss, scores);
  const auto back = read_scores(ss);
  ASSERT_EQ(back.size(), scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    EXPECT_EQ(back[i].sample_id, scores[i].sample_id);
    EXPECT_EQ(back[i].score, scores[i].score);
  }
  std::stringstream bad("1\t2.0\n3\tabc\n");
  try {
    read_scores(bad);
    FAIL();
  } catch (const ParseError & e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

}  // namespace
}  // namespace amend
