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

#ifndef AMEND_EVALUATION_HPP_
#define AMEND_EVALUATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "amend/common.hpp"
#include "amend/difficulty.hpp"
#include "amend/metrics.hpp"
#include "amend/routing.hpp"

namespace amend
{

struct SampleError
{
  std::int64_t sample_id = 0;
  double min_ade = 0.0;  // meters
  double min_fde = 0.0;
  std::string policy;
};

/// Empirical value at risk: the smallest error e with P(E >= e) <= 1 - alpha,
/// or the maximum error when none qualifies.
inline double var_alpha(std::span<const double> errors, double alpha)
{
  if (errors.empty()) {
    throw Error("var_alpha: empty error list");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("var_alpha: alpha must lie in (0, 1)");
  }
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  // Largest admissible tail count, with a guard against 1 - alpha rounding low.
  const auto max_tail = static_cast<std::size_t>(
      std::floor((1.0 - alpha) * static_cast<double>(n) + 1e-9));
  for (std::size_t j = 0; j < n; ++j) {
    if (j > 0 && sorted[j] == sorted[j - 1]) continue;
    if (n - j <= max_tail) return sorted[j];
  }
  return sorted.back();
}

/// Half-away-from-zero rounding at the given number of decimals.
inline double round_to(double value, int decimals)
{
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

inline std::pair<double, double> relative_metrics(double split_ade, double split_fde,
                                                  double all_ade, double all_fde)
{
  if (!(all_ade > 0.0) || !(all_fde > 0.0)) {
    throw NumericError("relative_metrics: All-split errors must be positive");
  }
  return {split_ade / all_ade, split_fde / all_fde};
}

/// Fraction of samples whose selected expert is rank 1 on ADE, and on FDE.
inline std::pair<double, double> routing_accuracy(const std::map<std::int64_t, int> & selections,
                                                  std::span<const ExpertRanking> rankings)
{
  if (selections.size() != rankings.size()) {
    throw ConfigError("routing_accuracy: selections and rankings cover different samples");
  }
  if (rankings.empty()) {
    throw Error("routing_accuracy: no samples");
  }
  std::size_t hit_ade = 0;
  std::size_t hit_fde = 0;
  for (const auto & r : rankings) {
    const auto it = selections.find(r.sample_id);
    if (it == selections.end()) {
      throw ConfigError("routing_accuracy: no selection for sample " + std::to_string(r.sample_id));
    }
    const auto c = static_cast<std::size_t>(it->second);
    if (c >= r.rank_ade.size()) {
      throw ConfigError("routing_accuracy: selected expert outside [0, C)");
    }
    hit_ade += r.rank_ade[c] == 1 ? 1 : 0;
    hit_fde += r.rank_fde[c] == 1 ? 1 : 0;
  }
  const auto n = static_cast<double>(rankings.size());
  return {static_cast<double>(hit_ade) / n, static_cast<double>(hit_fde) / n};
}

// ---------------------------------------------------------------------------
// Reports

struct SplitSpec
{
  std::string name;
  std::set<std::int64_t> ids;
  bool all = false;  // every sample, ignoring `ids`
};

/// Top1%, Top3%, Top5% by difficulty, then All.
inline std::vector<SplitSpec> difficulty_splits(const std::vector<DifficultyScore> & scores)
{
  std::vector<SplitSpec> out;
  for (const int pct : {1, 3, 5}) {
    out.push_back({"Top" + std::to_string(pct) + "%", top_percent_split(scores, pct), false});
  }
  out.push_back({"All", {}, true});
  return out;
}

struct SplitStats
{
  std::string name;
  double ade = 0.0;
  double fde = 0.0;
  double rel_ade = 0.0;
  double rel_fde = 0.0;
  std::size_t n = 0;
};

struct RoutingStats
{
  std::string policy;
  double acc_ade = 0.0;
  double acc_fde = 0.0;
};

struct EvalReport
{
  std::vector<SplitStats> splits;
  double var_level = 0.97;
  double var_ade = 0.0;
  double var_fde = 0.0;
  std::vector<RoutingStats> routing;
  std::string config_fingerprint;
};

inline EvalReport build_report(std::span<const SampleError> errors,
                               const std::vector<SplitSpec> & splits,
                               std::vector<RoutingStats> routing, double var_level,
                               const std::string & fingerprint)
{
  if (errors.empty()) {
    throw Error("build_report: no sample errors");
  }
  EvalReport report;
  report.var_level = var_level;
  report.routing = std::move(routing);
  report.config_fingerprint = fingerprint;

  std::vector<double> ades;
  std::vector<double> fdes;
  double all_ade = 0.0;
  double all_fde = 0.0;
  for (const auto & e : errors) {
    if (!std::isfinite(e.min_ade) || !std::isfinite(e.min_fde) || e.min_ade < 0.0 ||
        e.min_fde < 0.0) {
      throw NumericError("sample " + std::to_string(e.sample_id) + " has an invalid error");
    }
    ades.push_back(e.min_ade);
    fdes.push_back(e.min_fde);
    all_ade += e.min_ade;
    all_fde += e.min_fde;
  }
  all_ade /= static_cast<double>(errors.size());
  all_fde /= static_cast<double>(errors.size());
  report.var_ade = var_alpha(ades, var_level);
  report.var_fde = var_alpha(fdes, var_level);

  for (const auto & split : splits) {
    SplitStats s;
    s.name = split.name;
    for (const auto & e : errors) {
      if (split.all || split.ids.count(e.sample_id)) {
        s.ade += e.min_ade;
        s.fde += e.min_fde;
        ++s.n;
      }
    }
    if (s.n > 0) {
      s.ade /= static_cast<double>(s.n);
      s.fde /= static_cast<double>(s.n);
    }
    if (all_ade > 0.0 && all_fde > 0.0) {
      std::tie(s.rel_ade, s.rel_fde) = relative_metrics(s.ade, s.fde, all_ade, all_fde);
    }
    report.splits.push_back(s);
  }
  return report;
}

inline nlohmann::json report_to_json(const EvalReport & r)
{
  nlohmann::json splits = nlohmann::json::object();
  for (const auto & s : r.splits) {
    splits[s.name] = {{"ade", s.ade},         {"fde", s.fde}, {"rel_ade", s.rel_ade},
                      {"rel_fde", s.rel_fde}, {"n", s.n}};
  }
  nlohmann::json routing = nlohmann::json::object();
  for (const auto & p : r.routing) {
    routing[p.policy] = {{"acc_ade", p.acc_ade}, {"acc_fde", p.acc_fde}};
  }
  return {{"splits", splits},
          {"var", {{"alpha", r.var_level}, {"ade", r.var_ade}, {"fde", r.var_fde}}},
          {"routing", routing},
          {"config_fingerprint", r.config_fingerprint}};
}

/// Fixed-width table: 2 decimals for errors, 1 for relative columns.
inline std::string report_to_text(const EvalReport & r)
{
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %8s %8s\n", "split", "minADE", "minFDE",
                "relADE", "relFDE", "n");
  out << line;
  for (const auto & s : r.splits) {
    std::snprintf(line, sizeof line, "%-8s %8.2f %8.2f %8.1f %8.1f %8zu\n", s.name.c_str(), s.ade,
                  s.fde, round_to(s.rel_ade, 1), round_to(s.rel_fde, 1), s.n);
    out << line;
  }
  std::snprintf(line, sizeof line, "VaR_%.2f  ADE %.2f  FDE %.2f\n", r.var_level, r.var_ade,
                r.var_fde);
  out << line;
  for (const auto & p : r.routing) {
    std::snprintf(line, sizeof line, "routing %-8s acc_ade %.2f  acc_fde %.2f\n", p.policy.c_str(),
                  p.acc_ade, p.acc_fde);
    out << line;
  }
  out << "fingerprint " << r.config_fingerprint << '\n';
  return out.str();
}

/// Per-sample error distribution for external plotting.
inline void write_errors_csv(std::ostream & out, std::span<const SampleError> errors)
{
  out << "sample_id,policy,min_ade,min_fde\n";
  char buf[96];
  for (const auto & e : errors) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", e.min_ade, e.min_fde);
    out << e.sample_id << ',' << e.policy << buf;
  }
}

}  // namespace amend

#endif  // AMEND_EVALUATION_HPP_
