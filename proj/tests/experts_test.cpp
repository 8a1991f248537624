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
#include <numeric>
#include <vector>

#include "amend/experts.hpp"
#include "amend/metrics.hpp"
#include "test_support.hpp"

namespace amend
{
namespace
{

TEST(WeightedLoss, HandEvaluatedExample)
{
  const std::vector<double> losses{1.0, 3.0, 5.0};
  const std::vector<int> clusters{2, 2, 0};
  EXPECT_DOUBLE_EQ(weighted_batch_loss(losses, clusters, 2, 1.0), 8.0 / 3.0);
}

TEST(WeightedLoss, AlphaZeroIsPlainMean)
{
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> losses;
    std::vector<int> clusters;
    for (std::size_t i = 0; i < 1 + rng.index(40); ++i) {
      losses.push_back(rng.uniform(0, 10));
      clusters.push_back(static_cast<int>(rng.index(3)));
    }
    const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    EXPECT_NEAR(weighted_batch_loss(losses, clusters, static_cast<int>(rng.index(3)), 0.0), mean, 1e-12);
  }
}

TEST(WeightedLoss, AlphaOneDropsOutOfCluster)
{
  const std::vector<double> a{1.0, 2.0, 100.0};
  const std::vector<double> b{1.0, 2.0, -7.0};
  const std::vector<int> clusters{0, 0, 1};
  EXPECT_EQ(weighted_batch_loss(a, clusters, 0, 1.0), weighted_batch_loss(b, clusters, 0, 1.0));
}

TEST(WeightedLoss, WeightBookkeeping)
{
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + rng.index(64);
    std::vector<int> clusters;
    for (std::size_t i = 0; i < B; ++i) clusters.push_back(static_cast<int>(rng.index(4)));
    // Dyadic alphas keep every sum exact.
    const double alpha = static_cast<double>(rng.index(9)) / 8.0;
    const int c = static_cast<int>(rng.index(4));
    const auto w = expert_weights(clusters, c, alpha);
    const auto in = static_cast<double>(std::count(clusters.begin(), clusters.end(), c));
    const double out = static_cast<double>(B) - in;
    EXPECT_EQ(std::accumulate(w.begin(), w.end(), 0.0), static_cast<double>(B) + alpha * (in - out));
  }
}

TEST(WeightedLoss, ModelOverloadMatchesPerSampleLosses)
{
  Rng rng(3);
  const NetConfig c;
  const TrajectoryModel m = init_model(c, 5);
  std::vector<CanonicalSample> batch;
  std::vector<double> losses;
  const std::vector<int> clusters{0, 1, 1, 2};
  for (int i = 0; i < 4; ++i) {
    batch.push_back(testing::random_canonical(rng, c, i));
    losses.push_back(ewta_loss(predict(batch.back(), m, c.k_max), batch.back().sample.ego_future, 3));
  }
  EXPECT_EQ(weighted_batch_loss(batch, m, 1, clusters, 0.3, 3),
            weighted_batch_loss(losses, clusters, 1, 0.3));
}

TEST(WeightedLoss, RejectsBadInput)
{
  const std::vector<double> losses{1.0, 2.0};
  const std::vector<int> one{0};
  EXPECT_THROW(weighted_batch_loss(losses, one, 0, 0.5), ConfigError);
  const std::vector<int> two{0, 1};
  EXPECT_THROW(weighted_batch_loss(losses, two, 0, 1.5), ConfigError);
  EXPECT_THROW(weighted_batch_loss(losses, two, 0, -0.1), ConfigError);
}

struct Fixture
{
  std::vector<CanonicalSample> train;
  std::vector<CanonicalSample> val;
  ClusterModel clusters;
  std::vector<int> val_clusters;
};

// Endpoint clustering keeps these tests independent of a trained encoder.
Fixture make_fixture(int n, std::uint64_t seed)
{
  const auto raw = synthesize_dataset(testing::three_mode_spec(n), seed);
  const std::size_t n_train = raw.size() * 4 / 5;
  const std::vector<TrajectorySample> raw_train(raw.begin(), raw.begin() + static_cast<long>(n_train));
  const std::vector<TrajectorySample> raw_val(raw.begin() + static_cast<long>(n_train), raw.end());
  const auto norm = fit_normalization(raw_train);
  Fixture f;
  f.train = canonicalize_all(raw_train, norm);
  f.val = canonicalize_all(raw_val, norm);
  std::vector<std::int64_t> ids;
  for (const auto & s : f.train) ids.push_back(s.sample.sample_id);
  f.clusters = fit_kmeans(endpoint_basis(f.train), 3, seed, {}, ids);
  f.clusters.basis = ClusterBasis::kEndpoint;
  for (const auto & p : endpoint_basis(f.val)) f.val_clusters.push_back(assign(p, f.clusters));
  return f;
}

TEST(TrainExperts, AlphaZeroSharedSeedMatchesBaselineBitwise)
{
  const auto f = make_fixture(300, 1);
  TrainOptions o;
  o.epochs = 4;
  NetConfig c;
  c.k_max = 5;
  const auto base = train(f.train, f.val, c, o, 42);
  const auto ens = train_experts(f.train, f.val, f.val_clusters, f.clusters, c, o, {0.0, true}, 42);
  ASSERT_EQ(ens.ensemble.C(), 3);
  for (const auto & e : ens.ensemble.experts) {
    EXPECT_TRUE(e.params == base.model.params);
  }
  const auto independent = train_experts(f.train, f.val, f.val_clusters, f.clusters, c, o, {0.0, false}, 42);
  EXPECT_TRUE(independent.ensemble.experts[0].params == base.model.params);
  EXPECT_FALSE(independent.ensemble.experts[1].params == base.model.params);
}

TEST(TrainExperts, RequiresAssignmentsForEveryTrainingSample)
{
  auto f = make_fixture(100, 2);
  f.clusters.assignment.erase(f.clusters.assignment.begin());
  EXPECT_THROW(train_experts(f.train, f.val, f.val_clusters, f.clusters, NetConfig{}, TrainOptions{},
                             {}, 1),
               Error);
  f.val_clusters.pop_back();
  EXPECT_THROW(train_experts(f.train, f.val, f.val_clusters, f.clusters, NetConfig{}, TrainOptions{},
                             {}, 1),
               ConfigError);
}

// Mean minFDE of `model` over the validation samples of cluster `c`.
double in_cluster_fde(const TrajectoryModel & model, const Fixture & f, int c)
{
  double total = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < f.val.size(); ++i) {
    if (f.val_clusters[i] != c) continue;
    total += min_fde(predict(f.val[i], model, model.config.k_max), f.val[i].sample.ego_future);
    ++n;
  }
  return total / n;
}

TEST(TrainExperts, ExpertsSpecializeOnTheirCluster)
{
  const auto f = make_fixture(1500, 7);
  TrainOptions o;
  o.epochs = 40;
  const auto ens = train_experts(f.train, f.val, f.val_clusters, f.clusters, NetConfig{}, o, {0.8, false}, 3);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> fde;
    for (const auto & e : ens.ensemble.experts) fde.push_back(in_cluster_fde(e, f, c));
    EXPECT_EQ(std::min_element(fde.begin(), fde.end()) - fde.begin(), c)
        << "cluster " << c << ": " << fde[0] << " " << fde[1] << " " << fde[2];
  }
}

TEST(TrainExperts, LargerAlphaDoesNotHurtInClusterFde)
{
  const auto f = make_fixture(800, 9);
  TrainOptions o;
  o.epochs = 25;
  NetConfig c;
  for (int cluster = 0; cluster < 3; ++cluster) {
    std::vector<double> low;
    std::vector<double> high;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (const double alpha : {0.0, 0.8}) {
        const auto w = expert_weights(training_clusters(f.train, f.clusters), cluster, alpha);
        const auto vw = expert_weights(f.val_clusters, cluster, alpha);
        const auto r = train(f.train, f.val, c, o, seed, w, vw);
        (alpha == 0.0 ? low : high).push_back(in_cluster_fde(r.model, f, cluster));
      }
    }
    std::nth_element(low.begin(), low.begin() + 2, low.end());
    std::nth_element(high.begin(), high.begin() + 2, high.end());
    EXPECT_LE(high[2], low[2]) << "cluster " << cluster;
  }
}

}  // namespace
}  // namespace amend
