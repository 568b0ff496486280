#pragma once

// Multi-pedestrian scenes: ETH/UCY text ingestion, sliding-window
// extraction, a synthetic branching-scene generator with known labels, and
// a line-based scene container.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "npsn/common.hpp"

namespace npsn::scene {

/// T_obs + T_pred positions in meters; frames are 0.4 s apart.
using Trajectory = std::array<Vec2, kSeqLen>;

inline constexpr int kUnknownBranch = -1;

struct Scene {
  std::vector<Trajectory> trajectories;
  long frame_origin = 0;
  std::string source;
  std::vector<int> branch_labels;  // one per trajectory; kUnknownBranch for real data

  std::size_t size() const { return trajectories.size(); }
};

struct RawTrack {
  long pedestrian_id = 0;
  std::vector<long> frames;
  std::vector<Vec2> positions;
};

namespace detail {
inline long parse_integral(const std::string& token, std::size_t line_no, const std::string& name) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || !std::isfinite(v) || v != std::floor(v))
    throw ParseError(name + ":" + std::to_string(line_no) + ": expected an integer id, got '" + token + "'");
  return static_cast<long>(v);
}

inline double parse_real(const std::string& token, std::size_t line_no, const std::string& name) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || !std::isfinite(v))
    throw ParseError(name + ":" + std::to_string(line_no) + ": expected a number, got '" + token + "'");
  return v;
}
}  // namespace detail

/// Parses "frame_id pedestrian_id x y" lines (any whitespace). Blank lines
/// are skipped. Tracks come back ordered by pedestrian id.
inline std::vector<RawTrack> parse_ethucy(std::istream& in, const std::string& name = "<stream>") {
  std::map<long, RawTrack> by_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (tokens.size() != 4)
      throw ParseError(name + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                       std::to_string(tokens.size()));
    const long frame = detail::parse_integral(tokens[0], line_no, name);
    const long ped = detail::parse_integral(tokens[1], line_no, name);
    const Vec2 pos{detail::parse_real(tokens[2], line_no, name), detail::parse_real(tokens[3], line_no, name)};
    auto& track = by_id[ped];
    track.pedestrian_id = ped;
    if (!track.frames.empty() && frame <= track.frames.back())
      throw DataError(name + ":" + std::to_string(line_no) + ": frame " + std::to_string(frame) +
                      " for pedestrian " + std::to_string(ped) + " does not increase");
    track.frames.push_back(frame);
    track.positions.push_back(pos);
  }
  std::vector<RawTrack> tracks;
  tracks.reserve(by_id.size());
  for (auto& [id, t] : by_id) tracks.push_back(std::move(t));
  return tracks;
}

inline std::vector<RawTrack> load_ethucy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_ethucy(in, path);
}

/// Writes tracks as tab-separated "frame ped x y" lines sorted by frame,
/// with round-trip precision.
inline void write_ethucy(const std::vector<RawTrack>& tracks, std::ostream& out) {
  std::vector<std::tuple<long, long, Vec2>> rows;
  for (const auto& t : tracks)
    for (std::size_t i = 0; i < t.frames.size(); ++i) rows.emplace_back(t.frames[i], t.pedestrian_id, t.positions[i]);
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  out << std::setprecision(17);
  for (const auto& [frame, ped, p] : rows) out << frame << '\t' << ped << '\t' << p.x << '\t' << p.y << '\n';
}

/// Windows of 20 consecutive frames (consecutive entries of the sorted set
/// of frame ids seen in the data, so datasets sampled every 10 raw frames
/// work unchanged), advanced by `stride`. Only pedestrians observed at every
/// frame of a window join that window's scene; windows with none are dropped.
inline std::vector<Scene> extract_scenes(const std::vector<RawTrack>& tracks, std::size_t stride = 1,
                                         const std::string& source = "") {
  require(stride >= 1, "stride must be at least 1");
  std::set<long> frame_set;
  for (const auto& t : tracks) frame_set.insert(t.frames.begin(), t.frames.end());
  const std::vector<long> frames(frame_set.begin(), frame_set.end());

  std::vector<Scene> scenes;
  if (frames.size() < kSeqLen) return scenes;
  for (std::size_t start = 0; start + kSeqLen <= frames.size(); start += stride) {
    Scene sc;
    sc.frame_origin = frames[start];
    sc.source = source;
    for (const auto& t : tracks) {
      auto it = std::lower_bound(t.frames.begin(), t.frames.end(), frames[start]);
      const auto offset = static_cast<std::size_t>(it - t.frames.begin());
      if (offset + kSeqLen > t.frames.size()) continue;
      bool full = true;
      for (std::size_t k = 0; k < kSeqLen; ++k) {
        if (t.frames[offset + k] != frames[start + k]) {
          full = false;
          break;
        }
      }
      if (!full) continue;
      Trajectory traj;
      for (std::size_t k = 0; k < kSeqLen; ++k) traj[k] = t.positions[offset + k];
      sc.trajectories.push_back(traj);
      sc.branch_labels.push_back(kUnknownBranch);
    }
    if (!sc.trajectories.empty()) scenes.push_back(std::move(sc));
  }
  return scenes;
}

/// Lays scenes out back to back (scene k occupies frames 20k .. 20k+19) with
/// fresh pedestrian ids, so extract_scenes(.., stride 1) recovers them.
inline std::vector<RawTrack> scenes_to_tracks(const std::vector<Scene>& scenes) {
  std::vector<RawTrack> tracks;
  long next_id = 1;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    for (const auto& traj : scenes[k].trajectories) {
      RawTrack t;
      t.pedestrian_id = next_id++;
      for (std::size_t f = 0; f < kSeqLen; ++f) {
        t.frames.push_back(static_cast<long>(k * kSeqLen + f));
        t.positions.push_back(traj[f]);
      }
      tracks.push_back(std::move(t));
    }
  }
  return tracks;
}

enum class Branch : int { straight = 0, left = 1, right = 2 };

struct SynthSpec {
  std::size_t n_scenes = 100;
  std::vector<double> branch_probabilities{0.34, 0.33, 0.33};  // straight, left, right
  double speed = 0.4;         // meters per frame
  double noise_sigma = 0.05;  // meters
  bool interaction = false;   // crossing pairs instead of independent walkers
  std::size_t max_pedestrians = 3;
  std::uint64_t seed = 0;
};

namespace detail {
template <class Engine>
double standard_normal(Engine& engine) {
  // Box-Muller on two fresh uniforms; avoids library-specific std::normal_distribution.
  const double u1 = 1.0 - uniform01(engine);
  const double u2 = uniform01(engine);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class Engine>
int draw_branch(const std::vector<double>& probs, Engine& engine) {
  const double u = uniform01(engine);
  double acc = 0.0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    acc += probs[b];
    if (u < acc) return static_cast<int>(b);
  }
  return static_cast<int>(probs.size() - 1);
}

inline Trajectory walk(Vec2 start, double heading, double speed, int branch) {
  Trajectory t;
  for (std::size_t f = 0; f < kObsLen; ++f)
    t[f] = start + (static_cast<double>(f) * speed) * Vec2{std::cos(heading), std::sin(heading)};
  const double turn = branch == static_cast<int>(Branch::left)    ? 1.0
                      : branch == static_cast<int>(Branch::right) ? -1.0
                                                                  : 0.0;
  for (std::size_t k = 1; k <= kPredLen; ++k) {
    const std::size_t f = kObsLen - 1 + k;
    if (turn == 0.0) {
      t[f] = start + (static_cast<double>(f) * speed) * Vec2{std::cos(heading), std::sin(heading)};
    } else {
      const double h = heading + turn * (std::numbers::pi / 2.0) * static_cast<double>(k) / kPredLen;
      t[f] = t[f - 1] + speed * Vec2{std::cos(h), std::sin(h)};
    }
  }
  return t;
}
}  // namespace detail

/// Straight walking for the 8 observed frames, then straight or a gradual
/// +-90 degree turn over the 12 predicted frames, plus IID Gaussian jitter.
/// Labels: 0 straight, 1 left, 2 right.
inline std::vector<Scene> synth_generate(const SynthSpec& spec) {
  require(!spec.branch_probabilities.empty(), "synth needs at least one branch probability");
  require(spec.branch_probabilities.size() <= 3, "synth supports at most 3 branches (straight, left, right)");
  double total = 0.0;
  for (double p : spec.branch_probabilities) {
    require(p >= 0.0, "branch probabilities must be non-negative");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-9, "branch probabilities must sum to 1");
  require(spec.noise_sigma >= 0.0, "noise_sigma must be non-negative");
  require(spec.speed >= 0.0, "speed must be non-negative");
  require(spec.max_pedestrians >= 1, "max_pedestrians must be at least 1");

  std::mt19937_64 engine(spec.seed);
  std::vector<Scene> scenes;
  scenes.reserve(spec.n_scenes);
  for (std::size_t k = 0; k < spec.n_scenes; ++k) {
    Scene sc;
    sc.frame_origin = static_cast<long>(k * kSeqLen);
    sc.source = "synth";
    const std::size_t peds = 1 + static_cast<std::size_t>(engine() % spec.max_pedestrians);
    Vec2 prev_start;
    double prev_heading = 0.0;
    for (std::size_t p = 0; p < peds; ++p) {
      double heading = 2.0 * std::numbers::pi * uniform01(engine);
      Vec2 start{10.0 * uniform01(engine) - 5.0, 10.0 * uniform01(engine) - 5.0};
      if (spec.interaction && p % 2 == 1) {
        // Cross the previous walker's straight-line path two frames after observation ends.
        heading = prev_heading + std::numbers::pi / 2.0;
        const double meet_frames = static_cast<double>(kObsLen + 1);
        const Vec2 meet = prev_start + (meet_frames * spec.speed) * Vec2{std::cos(prev_heading), std::sin(prev_heading)};
        start = meet - (meet_frames * spec.speed) * Vec2{std::cos(heading), std::sin(heading)};
      }
      prev_start = start;
      prev_heading = heading;
      const int branch = detail::draw_branch(spec.branch_probabilities, engine);
      Trajectory t = detail::walk(start, heading, spec.speed, branch);
      if (spec.noise_sigma > 0.0) {
        for (auto& pos : t) {
          pos.x += spec.noise_sigma * detail::standard_normal(engine);
          pos.y += spec.noise_sigma * detail::standard_normal(engine);
        }
      }
      sc.trajectories.push_back(t);
      sc.branch_labels.push_back(branch);
    }
    scenes.push_back(std::move(sc));
  }
  return scenes;
}

// Scene container, one record per line group:
//   npsn-scenes 1 <scene count>
//   scene <frame_origin> <L> <source or ->
//   <label> x0 y0 x1 y1 ... x19 y19          (L lines)
// Numbers are written with 17 significant digits, so load(save(s)) == s.
inline constexpr int kSceneFormatVersion = 1;

inline void save_scenes(const std::vector<Scene>& scenes, std::ostream& out) {
  out << "npsn-scenes " << kSceneFormatVersion << ' ' << scenes.size() << '\n';
  out << std::setprecision(17);
  for (const auto& sc : scenes) {
    out << "scene " << sc.frame_origin << ' ' << sc.trajectories.size() << ' '
        << (sc.source.empty() ? "-" : sc.source) << '\n';
    for (std::size_t i = 0; i < sc.trajectories.size(); ++i) {
      out << (i < sc.branch_labels.size() ? sc.branch_labels[i] : kUnknownBranch);
      for (const auto& p : sc.trajectories[i]) out << ' ' << p.x << ' ' << p.y;
      out << '\n';
    }
  }
}

inline void save_scenes(const std::vector<Scene>& scenes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  save_scenes(scenes, out);
  if (!out) throw Error("failed writing " + path);
}

inline std::vector<Scene> load_scenes(std::istream& in, const std::string& name = "<stream>") {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != "npsn-scenes")
    throw ParseError(name + ": not an npsn scene file");
  if (version != kSceneFormatVersion)
    throw ParseError(name + ": unsupported scene format version " + std::to_string(version));
  std::vector<Scene> scenes(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::string tag;
    std::size_t peds = 0;
    auto& sc = scenes[k];
    if (!(in >> tag >> sc.frame_origin >> peds >> sc.source) || tag != "scene")
      throw ParseError(name + ": malformed header for scene " + std::to_string(k));
    if (sc.source == "-") sc.source.clear();
    sc.trajectories.resize(peds);
    sc.branch_labels.resize(peds);
    for (std::size_t i = 0; i < peds; ++i) {
      if (!(in >> sc.branch_labels[i])) throw ParseError(name + ": truncated scene " + std::to_string(k));
      for (auto& p : sc.trajectories[i])
        if (!(in >> p.x >> p.y)) throw ParseError(name + ": truncated scene " + std::to_string(k));
    }
  }
  return scenes;
}

inline std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return load_scenes(in, path);
}

/// Flat CSV for inspection: scene,pedestrian,frame,x,y,label.
inline void export_csv(const std::vector<Scene>& scenes, std::ostream& out) {
  out << "scene,pedestrian,frame,x,y,label\n" << std::setprecision(17);
  for (std::size_t k = 0; k < scenes.size(); ++k)
    for (std::size_t i = 0; i < scenes[k].trajectories.size(); ++i)
      for (std::size_t f = 0; f < kSeqLen; ++f) {
        const auto& p = scenes[k].trajectories[i][f];
        out << k << ',' << i << ',' << f << ',' << p.x << ',' << p.y << ','
            << (i < scenes[k].branch_labels.size() ? scenes[k].branch_labels[i] : kUnknownBranch) << '\n';
      }
}

}  // namespace npsn::scene
