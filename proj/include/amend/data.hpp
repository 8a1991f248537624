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

// Trajectory ingestion, windowing, per-sample canonicalization and the
// synthetic long-tail generator.

#ifndef AMEND_DATA_HPP_
#define AMEND_DATA_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "amend/common.hpp"

namespace amend
{

/// One agent's contiguous observations. Frame ids increase by a constant stride.
struct RawTrack
{
  std::string scene;
  std::int64_t agent_id = 0;
  std::vector<std::int64_t> frame_ids;
  Trajectory positions;
};

struct NeighborHistory
{
  std::int64_t agent_id = 0;
  Trajectory positions;            // t_hist entries; invalid steps hold (0, 0)
  std::vector<std::uint8_t> valid;  // per-step mask, valid.back() is always 1
};

struct SampleSource
{
  std::string scene;
  std::int64_t agent_id = 0;
  std::int64_t frame_id = 0;
};

/// One prediction instance. `label` is the generating mode for synthetic
/// data (-1 otherwise); it exists for test oracles and never reaches a model.
struct TrajectorySample
{
  std::int64_t sample_id = 0;
  SampleSource source;
  Trajectory ego_history;  // oldest first, back() is t = 0
  Trajectory ego_future;   // t = 1 .. t_pred
  std::vector<NeighborHistory> neighbors;
  int label = -1;
};

struct NormalizationParams
{
  double scale = 1.0;
};

/// Rigid transform plus isotropic scale mapping world coordinates to the
/// canonical frame: p' = R(angle) (p - translation) / scale.
struct CanonicalTransform
{
  double angle = 0.0;
  Point2 translation;
  double scale = 1.0;

  Point2 forward(Point2 p) const
  {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const Point2 d = p - translation;
    return {(c * d.x - s * d.y) / scale, (s * d.x + c * d.y) / scale};
  }

  Point2 inverse(Point2 q) const
  {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const Point2 d = scale * q;
    return Point2{c * d.x + s * d.y, -s * d.x + c * d.y} + translation;
  }
};

struct CanonicalSample
{
  TrajectorySample sample;  // coordinates in the canonical frame
  CanonicalTransform transform;
};

// ---------------------------------------------------------------------------
// Ingestion

namespace detail
{

inline bool parse_double(std::string_view token, double & out)
{
  const char * begin = token.data();
  const char * end = token.data() + token.size();
  if (!token.empty() && *begin == '+') {
    ++begin;
  }
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

inline bool parse_integral(std::string_view token, std::int64_t & out)
{
  double value = 0.0;
  if (!parse_double(token, value) || value != std::floor(value) ||
      std::fabs(value) > 9.0e15) {
    return false;
  }
  out = static_cast<std::int64_t>(value);
  return true;
}

inline std::vector<std::string_view> split_fields(std::string_view line)
{
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == '\t' || line[i] == ' ' || line[i] == '\r')) {
      ++i;
    }
    const std::size_t start = i;
    while (i < line.size() && line[i] != '\t' && line[i] != ' ' && line[i] != '\r') {
      ++i;
    }
    if (i > start) {
      fields.push_back(line.substr(start, i - start));
    }
  }
  return fields;
}

}  // namespace detail

/// Parses `frame_id<TAB>agent_id<TAB>x<TAB>y` lines (spaces are tolerated as
/// separators). Tracks are split wherever consecutive frames differ by
/// anything other than `stride`.
inline std::vector<RawTrack> load_dataset(std::istream & in, std::int64_t stride,
                                          const std::string & scene = "scene")
{
  if (stride <= 0) {
    throw ConfigError("stride must be positive");
  }
  std::map<std::int64_t, std::map<std::int64_t, Point2>> by_agent;
  std::string line;
  std::size_t line_no = 0;
  std::size_t observations = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) {
      continue;
    }
    if (fields.size() != 4) {
      throw ParseError("expected 4 fields, found " + std::to_string(fields.size()), line_no);
    }
    std::int64_t frame = 0;
    std::int64_t agent = 0;
    Point2 p;
    if (!detail::parse_integral(fields[0], frame)) {
      throw ParseError("invalid frame id '" + std::string(fields[0]) + "'", line_no);
    }
    if (!detail::parse_integral(fields[1], agent)) {
      throw ParseError("invalid agent id '" + std::string(fields[1]) + "'", line_no);
    }
    if (!detail::parse_double(fields[2], p.x) || !detail::parse_double(fields[3], p.y)) {
      throw ParseError("invalid coordinate", line_no);
    }
    if (!by_agent[agent].emplace(frame, p).second) {
      throw ParseError("duplicate observation for agent " + std::to_string(agent), line_no);
    }
    ++observations;
  }
  if (observations == 0) {
    throw Error("empty dataset: no observations");
  }

  std::vector<RawTrack> tracks;
  for (const auto & [agent, frames] : by_agent) {
    RawTrack current{scene, agent, {}, {}};
    for (const auto & [frame, position] : frames) {
      if (!current.frame_ids.empty() && frame - current.frame_ids.back() != stride) {
        tracks.push_back(std::move(current));
        current = RawTrack{scene, agent, {}, {}};
      }
      current.frame_ids.push_back(frame);
      current.positions.push_back(position);
    }
    tracks.push_back(std::move(current));
  }
  return tracks;
}

inline std::vector<RawTrack> load_dataset(const std::filesystem::path & path, std::int64_t stride)
{
  std::ifstream in(path);
  if (!in) {
    throw MissingArtifactError("cannot open trajectory file " + path.string());
  }
  return load_dataset(in, stride, path.stem().string());
}

/// Sliding-window extraction. Every other agent present at the anchor frame
/// becomes a neighbor; its history steps missing from the data are masked.
inline std::vector<TrajectorySample> window_samples(const std::vector<RawTrack> & tracks,
                                                    int t_hist, int t_pred)
{
  if (t_hist < 2 || t_pred < 1) {
    throw ConfigError("window_samples requires t_hist >= 2 and t_pred >= 1");
  }
  // (scene, frame) -> agent -> position
  std::map<std::pair<std::string, std::int64_t>, std::map<std::int64_t, Point2>> frames;
  for (const auto & track : tracks) {
    for (std::size_t i = 0; i < track.frame_ids.size(); ++i) {
      frames[{track.scene, track.frame_ids[i]}][track.agent_id] = track.positions[i];
    }
  }

  std::vector<TrajectorySample> samples;
  const std::size_t window = static_cast<std::size_t>(t_hist + t_pred);
  for (const auto & track : tracks) {
    if (track.positions.size() < window) {
      continue;
    }
    for (std::size_t start = 0; start + window <= track.positions.size(); ++start) {
      const std::size_t anchor = start + static_cast<std::size_t>(t_hist) - 1;
      TrajectorySample s;
      s.sample_id = static_cast<std::int64_t>(samples.size());
      s.source = {track.scene, track.agent_id, track.frame_ids[anchor]};
      s.ego_history.assign(track.positions.begin() + static_cast<std::ptrdiff_t>(start),
                           track.positions.begin() + static_cast<std::ptrdiff_t>(anchor) + 1);
      s.ego_future.assign(track.positions.begin() + static_cast<std::ptrdiff_t>(anchor) + 1,
                          track.positions.begin() + static_cast<std::ptrdiff_t>(start + window));

      const auto & present = frames.at({track.scene, track.frame_ids[anchor]});
      for (const auto & [other, unused] : present) {
        if (other == track.agent_id) {
          continue;
        }
        NeighborHistory n;
        n.agent_id = other;
        for (std::size_t h = start; h <= anchor; ++h) {
          const auto & at_frame = frames.at({track.scene, track.frame_ids[h]});
          if (const auto pos = at_frame.find(other); pos != at_frame.end()) {
            n.positions.push_back(pos->second);
            n.valid.push_back(1);
          } else {
            n.positions.push_back({});
            n.valid.push_back(0);
          }
        }
        s.neighbors.push_back(std::move(n));
      }
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Normalization

/// Population standard deviation of every ego displacement component (both
/// axes pooled, history and future) over the training samples.
inline NormalizationParams fit_normalization(const std::vector<TrajectorySample> & train)
{
  if (train.empty()) {
    throw Error("fit_normalization: empty training set");
  }
  // Welford accumulation.
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t count = 0;
  const auto push = [&](double value) {
    ++count;
    const double delta = value - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (value - mean);
  };
  for (const auto & s : train) {
    Trajectory full = s.ego_history;
    full.insert(full.end(), s.ego_future.begin(), s.ego_future.end());
    for (std::size_t t = 1; t < full.size(); ++t) {
      const Point2 d = full[t] - full[t - 1];
      push(d.x);
      push(d.y);
    }
  }
  const double scale = count == 0 ? 0.0 : std::sqrt(m2 / static_cast<double>(count));
  if (!(scale > 1e-12)) {
    throw NumericError("degenerate normalization scale: ego displacements have zero variance");
  }
  return {scale};
}

/// Heading from the most recent non-negligible history displacement; angle 0
/// when the ego is stationary over the whole history.
inline double canonical_angle(const Trajectory & history)
{
  for (std::size_t t = history.size(); t > 1; --t) {
    const Point2 d = history[t - 1] - history[t - 2];
    if (d.norm() >= 1e-9) {
      return M_PI / 2.0 - std::atan2(d.y, d.x);
    }
  }
  return 0.0;
}

inline CanonicalSample canonicalize(const TrajectorySample & sample,
                                    const NormalizationParams & params)
{
  if (sample.ego_history.empty()) {
    throw Error("canonicalize: empty ego history");
  }
  CanonicalSample out;
  out.transform.translation = sample.ego_history.back();
  out.transform.angle = canonical_angle(sample.ego_history);
  out.transform.scale = params.scale;

  out.sample = sample;
  const auto map = [&](Trajectory & traj) {
    for (auto & p : traj) {
      p = out.transform.forward(p);
    }
  };
  map(out.sample.ego_history);
  map(out.sample.ego_future);
  for (auto & n : out.sample.neighbors) {
    for (std::size_t t = 0; t < n.positions.size(); ++t) {
      if (n.valid[t]) {
        n.positions[t] = out.transform.forward(n.positions[t]);
      }
    }
  }
  return out;
}

/// Recovers the world-frame sample from its canonical form.
inline TrajectorySample decanonicalize(const CanonicalSample & canonical)
{
  TrajectorySample out = canonical.sample;
  const auto map = [&](Trajectory & traj) {
    for (auto & p : traj) {
      p = canonical.transform.inverse(p);
    }
  };
  map(out.ego_history);
  map(out.ego_future);
  for (auto & n : out.neighbors) {
    for (std::size_t t = 0; t < n.positions.size(); ++t) {
      if (n.valid[t]) {
        n.positions[t] = canonical.transform.inverse(n.positions[t]);
      }
    }
  }
  return out;
}

inline std::vector<CanonicalSample> canonicalize_all(const std::vector<TrajectorySample> & samples,
                                                     const NormalizationParams & params)
{
  std::vector<CanonicalSample> out;
  out.reserve(samples.size());
  for (const auto & s : samples) {
    out.push_back(canonicalize(s, params));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic long-tailed data

struct SynthMode
{
  std::string name;
  double weight = 1.0;
  double speed_min = 1.0;  // m/s
  double speed_max = 1.0;
  double turn_rate = 0.0;  // rad/s, constant over the whole window
};

struct SynthSpec
{
  std::vector<SynthMode> modes;
  double noise_sigma = 0.0;  // m, i.i.d. on every position
  int n_samples = 1000;
  std::uint64_t seed = 0;
  int t_hist = 8;
  int t_pred = 12;
  double dt = 0.4;
};

inline void validate(const SynthSpec & spec)
{
  if (spec.modes.empty()) {
    throw ConfigError("synth spec needs at least one mode");
  }
  double total = 0.0;
  for (const auto & m : spec.modes) {
    if (m.weight < 0.0) {
      throw ConfigError("synth mode '" + m.name + "' has negative weight");
    }
    if (m.speed_min < 0.0 || m.speed_max < m.speed_min) {
      throw ConfigError("synth mode '" + m.name + "' has an invalid speed_range");
    }
    total += m.weight;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw ConfigError("synth mode weights must sum to 1 (got " + std::to_string(total) + ")");
  }
  if (spec.noise_sigma < 0.0 || spec.n_samples < 0 || spec.t_hist < 2 || spec.t_pred < 1 ||
      !(spec.dt > 0.0)) {
    throw ConfigError("invalid synth spec parameters");
  }
}

/// Constant speed, constant turn-rate agents with random pose. A pure
/// function of (spec, seed).
inline std::vector<TrajectorySample> synthesize_dataset(const SynthSpec & spec, std::uint64_t seed)
{
  validate(spec);
  Rng rng(seed);
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto & m : spec.modes) {
    acc += m.weight;
    cdf.push_back(acc);
  }

  const int steps = spec.t_hist + spec.t_pred;
  std::vector<TrajectorySample> out;
  out.reserve(static_cast<std::size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) {
    const double u = rng.uniform() * acc;
    int mode = 0;
    while (mode + 1 < static_cast<int>(cdf.size()) && u >= cdf[static_cast<std::size_t>(mode)]) {
      ++mode;
    }
    const SynthMode & m = spec.modes[static_cast<std::size_t>(mode)];
    const double speed = rng.uniform(m.speed_min, m.speed_max);
    double heading = rng.uniform(0.0, 2.0 * M_PI);
    Point2 p{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)};

    Trajectory clean;
    clean.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
      clean.push_back(p);
      p = p + Point2{speed * spec.dt * std::cos(heading), speed * spec.dt * std::sin(heading)};
      heading += m.turn_rate * spec.dt;
    }
    if (spec.noise_sigma > 0.0) {
      for (auto & q : clean) {
        const double nx = rng.normal();
        const double ny = rng.normal();
        q = q + Point2{spec.noise_sigma * nx, spec.noise_sigma * ny};
      }
    }

    TrajectorySample s;
    s.sample_id = i;
    s.source = {"synthetic", i, spec.t_hist - 1};
    s.label = mode;
    s.ego_history.assign(clean.begin(), clean.begin() + spec.t_hist);
    s.ego_future.assign(clean.begin() + spec.t_hist, clean.end());
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json & j, const Point2 & p) { j = nlohmann::json::array({p.x, p.y}); }

inline void from_json(const nlohmann::json & j, Point2 & p)
{
  p.x = j.at(0).get<double>();
  p.y = j.at(1).get<double>();
}

inline void to_json(nlohmann::json & j, const NeighborHistory & n)
{
  j = {{"agent_id", n.agent_id}, {"positions", n.positions}, {"valid", n.valid}};
}

inline void from_json(const nlohmann::json & j, NeighborHistory & n)
{
  j.at("agent_id").get_to(n.agent_id);
  j.at("positions").get_to(n.positions);
  j.at("valid").get_to(n.valid);
}

inline void to_json(nlohmann::json & j, const TrajectorySample & s)
{
  j = {{"sample_id", s.sample_id},
       {"scene", s.source.scene},
       {"agent_id", s.source.agent_id},
       {"frame_id", s.source.frame_id},
       {"label", s.label},
       {"history", s.ego_history},
       {"future", s.ego_future},
       {"neighbors", s.neighbors}};
}

inline void from_json(const nlohmann::json & j, TrajectorySample & s)
{
  j.at("sample_id").get_to(s.sample_id);
  j.at("scene").get_to(s.source.scene);
  j.at("agent_id").get_to(s.source.agent_id);
  j.at("frame_id").get_to(s.source.frame_id);
  s.label = j.value("label", -1);
  j.at("history").get_to(s.ego_history);
  j.at("future").get_to(s.ego_future);
  j.at("neighbors").get_to(s.neighbors);
}

inline SynthSpec synth_spec_from_json(const nlohmann::json & j)
{
  SynthSpec spec;
  try {
    for (const auto & m : j.at("modes")) {
      SynthMode mode;
      mode.name = m.value("name", std::string{});
      mode.weight = m.at("weight").get<double>();
      const auto & range = m.at("speed_range");
      mode.speed_min = range.at(0).get<double>();
      mode.speed_max = range.at(1).get<double>();
      mode.turn_rate = m.value("turn_rate", 0.0);
      spec.modes.push_back(mode);
    }
    spec.noise_sigma = j.value("noise_sigma", 0.0);
    spec.n_samples = j.value("n_samples", 1000);
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.t_hist = j.value("t_hist", 8);
    spec.t_pred = j.value("t_pred", 12);
    spec.dt = j.value("dt", 0.4);
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError(std::string("malformed synth spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

inline nlohmann::json to_json(const SynthSpec & spec)
{
  nlohmann::json modes = nlohmann::json::array();
  for (const auto & m : spec.modes) {
    modes.push_back({{"name", m.name},
                     {"weight", m.weight},
                     {"speed_range", {m.speed_min, m.speed_max}},
                     {"turn_rate", m.turn_rate}});
  }
  return {{"modes", modes},       {"noise_sigma", spec.noise_sigma}, {"n_samples", spec.n_samples},
          {"seed", spec.seed},    {"t_hist", spec.t_hist},           {"t_pred", spec.t_pred},
          {"dt", spec.dt}};
}

}  // namespace amend

#endif  // AMEND_DATA_HPP_
