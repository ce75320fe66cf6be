#include "trajcl/trajdata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajcl/rng.hpp"

namespace trajcl {

using json = nlohmann::json;

const std::array<const char*, kNumContextFeatures>& context_feature_names() {
  static const std::array<const char*, kNumContextFeatures> names = {
      "signals",     "crossing",   "junction",   "parking",  "fuel",    "bus",
      "railway",     "airport",    "forest",     "park",     "retail",  "residential",
      "commercial",  "industrial", "trunk",      "primary",  "secondary", "tertiary",
      "footway",     "link",       "cycleway",   "motorway", "service", "steps"};
  return names;
}

Mbr compute_mbr(const std::vector<RawTrajectory>& raws) {
  Mbr m{1e9, 1e9, -1e9, -1e9};
  for (const auto& r : raws)
    for (const auto& p : r.points) {
      m.lon_min = std::min(m.lon_min, p.lon);
      m.lat_min = std::min(m.lat_min, p.lat);
      m.lon_max = std::max(m.lon_max, p.lon);
      m.lat_max = std::max(m.lat_max, p.lat);
    }
  return m;
}

Mbr compute_mbr(const std::vector<TrajInstance>& instances) {
  Mbr m{1e9, 1e9, -1e9, -1e9};
  for (const auto& r : instances)
    for (const auto& p : r.points) {
      m.lon_min = std::min(m.lon_min, p.lon);
      m.lat_min = std::min(m.lat_min, p.lat);
      m.lon_max = std::max(m.lon_max, p.lon);
      m.lat_max = std::max(m.lat_max, p.lat);
    }
  return m;
}

double haversine_m(double lon1, double lat1, double lon2, double lat2) {
  const double rad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * rad;
  const double dlon = (lon2 - lon1) * rad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * rad) * std::cos(lat2 * rad) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

Cell Grid::cell_of(double lon, double lat) const {
  const double dx_m = (lon - mbr.lon_min) * m_per_deg_lon;
  const double dy_m = (lat - mbr.lat_min) * m_per_deg_lat;
  int col = static_cast<int>(std::floor(dx_m / cell_size_m));
  int row = static_cast<int>(std::floor(dy_m / cell_size_m));
  Cell c;
  c.clamped = row < 0 || row >= rows || col < 0 || col >= cols;
  c.row = std::clamp(row, 0, rows - 1);
  c.col = std::clamp(col, 0, cols - 1);
  return c;
}

Grid build_grid(const Mbr& mbr, double cell_size_m) {
  if (!(cell_size_m > 0)) throw std::invalid_argument("build_grid: cell size must be positive");
  if (!(mbr.lon_max > mbr.lon_min) || !(mbr.lat_max > mbr.lat_min))
    throw std::invalid_argument("build_grid: degenerate MBR");
  Grid g;
  g.mbr = mbr;
  g.cell_size_m = cell_size_m;
  const double lat_c = 0.5 * (mbr.lat_min + mbr.lat_max);
  const double rad = std::numbers::pi / 180.0;
  g.m_per_deg_lat = kEarthRadiusM * rad;
  g.m_per_deg_lon = kEarthRadiusM * rad * std::cos(lat_c * rad);
  const double width_m = (mbr.lon_max - mbr.lon_min) * g.m_per_deg_lon;
  const double height_m = (mbr.lat_max - mbr.lat_min) * g.m_per_deg_lat;
  // the 1e-9 slack keeps exact-multiple extents from picking up a spurious
  // row/col through round-off
  g.cols = std::max(1, static_cast<int>(std::ceil(width_m / cell_size_m - 1e-9)));
  g.rows = std::max(1, static_cast<int>(std::ceil(height_m / cell_size_m - 1e-9)));
  return g;
}

void PartitionConfig::validate() const {
  if (!(0 < n_min && n_min <= n_max))
    throw std::invalid_argument("partition config: need 0 < N_min <= N_max");
  if (!(0 < m_min_minutes && m_min_minutes <= m_max_minutes))
    throw std::invalid_argument("partition config: need 0 < M_min <= M_max");
}

std::vector<TrajPoint> downsample_evenly(const std::vector<TrajPoint>& pts, int target) {
  const int64_t n = static_cast<int64_t>(pts.size());
  if (n <= target) return pts;
  std::vector<TrajPoint> out;
  out.reserve(static_cast<size_t>(target));
  if (target == 1) {
    out.push_back(pts.front());
    return out;
  }
  for (int64_t i = 0; i < target; ++i) {
    const int64_t idx = std::llround(static_cast<double>(i) * static_cast<double>(n - 1) /
                                     static_cast<double>(target - 1));
    out.push_back(pts[static_cast<size_t>(idx)]);
  }
  return out;
}

namespace {

bool strictly_increasing_time(const std::vector<TrajPoint>& pts) {
  for (size_t i = 1; i < pts.size(); ++i)
    if (pts[i].t <= pts[i - 1].t) return false;
  return true;
}

bool coords_in_range(const std::vector<TrajPoint>& pts) {
  for (const auto& p : pts)
    if (p.lon < -180 || p.lon > 180 || p.lat < -90 || p.lat > 90) return false;
  return true;
}

/// Point-count filter of Algorithm 1's segment loop.
void filter_and_emit(std::vector<TrajPoint> pts, const std::string& id, int label,
                     const PartitionConfig& cfg, std::vector<TrajInstance>& out,
                     PartitionStats& st) {
  const int n = static_cast<int>(pts.size());
  if (n < cfg.n_min) {
    ++st.dropped_below_n_min;
    return;
  }
  if (n > cfg.n_max) {
    pts = downsample_evenly(pts, cfg.n_max);
    ++st.downsampled;
  }
  TrajInstance inst;
  inst.id = id;
  inst.label = label;
  inst.points = std::move(pts);
  out.push_back(std::move(inst));
  ++st.kept;
}

}  // namespace

std::vector<TrajInstance> partition(const std::vector<RawTrajectory>& raws,
                                    const PartitionConfig& cfg, PartitionStats* stats) {
  cfg.validate();
  PartitionStats local;
  PartitionStats& st = stats ? *stats : local;
  std::vector<TrajInstance> out;
  for (const auto& raw : raws) {
    if (raw.points.empty()) {
      ++st.rejected;
      st.diagnostics.push_back("trajectory " + raw.id + ": no points");
      continue;
    }
    if (!strictly_increasing_time(raw.points)) {
      ++st.rejected;
      st.diagnostics.push_back("trajectory " + raw.id + ": non-monotone timestamps");
      continue;
    }
    if (!coords_in_range(raw.points)) {
      ++st.rejected;
      st.diagnostics.push_back("trajectory " + raw.id + ": coordinates out of WGS84 range");
      continue;
    }
    const double duration_min =
        static_cast<double>(raw.points.back().t - raw.points.front().t) / 60.0;
    if (duration_min > cfg.m_max_minutes) {
      const double window_s = cfg.m_max_minutes * 60.0;
      const int64_t t0 = raw.points.front().t;
      std::vector<std::vector<TrajPoint>> segments;
      for (const auto& p : raw.points) {
        const auto seg = static_cast<size_t>(std::floor(static_cast<double>(p.t - t0) / window_s));
        if (seg >= segments.size()) segments.resize(seg + 1);
        segments[seg].push_back(p);
      }
      for (size_t j = 0; j < segments.size(); ++j) {
        if (segments[j].empty()) continue;
        filter_and_emit(std::move(segments[j]), raw.id + "#" + std::to_string(j), raw.label, cfg,
                        out, st);
      }
    } else if (duration_min > cfg.m_min_minutes) {
      filter_and_emit(raw.points, raw.id, raw.label, cfg, out, st);
    } else {
      ++st.dropped_short_duration;
    }
  }
  return out;
}

void assign_context(TrajInstance& inst, const Grid& grid, const FeatureTable& table,
                    AssignStats* stats) {
  inst.context.clear();
  inst.context.reserve(inst.points.size());
  for (const auto& p : inst.points) {
    const Cell c = grid.cell_of(p.lon, p.lat);
    if (stats) {
      ++stats->points_assigned;
      if (c.clamped) ++stats->clamped_points;
    }
    inst.context.push_back(table.lookup(grid.cell_index(c.row, c.col)));
  }
  inst.has_context = true;
}

void assign_context(std::vector<TrajInstance>& instances, const Grid& grid,
                    const FeatureTable& table, AssignStats* stats) {
  for (auto& inst : instances) assign_context(inst, grid, table, stats);
}

FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "coords") return FeatureMode::kCoords;
  if (s == "kinematics") return FeatureMode::kKinematics;
  if (s == "coords+kinematics") return FeatureMode::kCoordsKinematics;
  throw std::invalid_argument("unknown feature mode: " + s);
}

std::string to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::kCoords: return "coords";
    case FeatureMode::kKinematics: return "kinematics";
    case FeatureMode::kCoordsKinematics: return "coords+kinematics";
  }
  return "?";
}

int feature_dim(FeatureMode m) { return m == FeatureMode::kCoordsKinematics ? 5 : 3; }

namespace {

double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
  while (a <= -std::numbers::pi) a += 2 * std::numbers::pi;
  return a;
}

struct Kinematics {
  std::vector<double> speed;     // m/s, speed[0] copied from speed[1]
  std::vector<double> dheading;  // wrapped heading change, first two are 0
  std::vector<double> dt;        // seconds, dt[0] = 0
};

Kinematics point_kinematics(const TrajInstance& inst) {
  const size_t n = inst.points.size();
  Kinematics k;
  k.speed.assign(n, 0.0);
  k.dheading.assign(n, 0.0);
  k.dt.assign(n, 0.0);
  if (n < 2) return k;
  const double rad = std::numbers::pi / 180.0;
  const double m_per_deg_lat = kEarthRadiusM * rad;
  const double m_per_deg_lon = m_per_deg_lat * std::cos(inst.points.front().lat * rad);
  std::vector<double> heading(n, 0.0);
  for (size_t i = 1; i < n; ++i) {
    const auto& a = inst.points[i - 1];
    const auto& b = inst.points[i];
    const double dx = (b.lon - a.lon) * m_per_deg_lon;
    const double dy = (b.lat - a.lat) * m_per_deg_lat;
    const double dt = static_cast<double>(b.t - a.t);
    k.dt[i] = dt;
    k.speed[i] = std::sqrt(dx * dx + dy * dy) / dt;
    heading[i] = std::atan2(dy, dx);
  }
  k.speed[0] = k.speed[1];
  for (size_t i = 2; i < n; ++i) k.dheading[i] = wrap_angle(heading[i] - heading[i - 1]);
  return k;
}

}  // namespace

std::vector<double> raw_traj_channels(const TrajInstance& inst, FeatureMode mode) {
  const size_t n = inst.points.size();
  const int f = feature_dim(mode);
  std::vector<double> out(n * static_cast<size_t>(f), 0.0);
  const Kinematics k = point_kinematics(inst);
  for (size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * static_cast<size_t>(f);
    switch (mode) {
      case FeatureMode::kCoords:
        row[0] = inst.points[i].lon;
        row[1] = inst.points[i].lat;
        row[2] = k.dt[i];
        break;
      case FeatureMode::kKinematics:
        row[0] = std::log1p(k.speed[i]);
        row[1] = k.dheading[i];
        row[2] = k.dt[i];
        break;
      case FeatureMode::kCoordsKinematics:
        row[0] = inst.points[i].lon;
        row[1] = inst.points[i].lat;
        row[2] = k.dt[i];
        row[3] = std::log1p(k.speed[i]);
        row[4] = k.dheading[i];
        break;
    }
  }
  return out;
}

namespace {

std::vector<const char*> traj_channel_names(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kCoords: return {"lon", "lat", "dt"};
    case FeatureMode::kKinematics: return {"log1p_speed", "dheading", "dt"};
    case FeatureMode::kCoordsKinematics:
      return {"lon", "lat", "dt", "log1p_speed", "dheading"};
  }
  return {};
}

}  // namespace

NormStats fit_normalization(const std::vector<TrajInstance>& train, const FeatureConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("fit_normalization: empty training set");
  NormStats stats;
  stats.cfg = cfg;
  const int f = feature_dim(cfg.mode);
  const auto names = traj_channel_names(cfg.mode);
  stats.traj.resize(static_cast<size_t>(f));
  for (int c = 0; c < f; ++c) stats.traj[static_cast<size_t>(c)].name = names[static_cast<size_t>(c)];
  stats.env.resize(kNumContextFeatures);
  for (int c = 0; c < kNumContextFeatures; ++c) {
    stats.env[static_cast<size_t>(c)].name = context_feature_names()[static_cast<size_t>(c)];
    stats.env[static_cast<size_t>(c)].log1p = true;
  }

  // two-pass mean/variance over all points of the training split
  std::vector<double> tsum(static_cast<size_t>(f), 0.0), tsq(static_cast<size_t>(f), 0.0);
  std::vector<double> esum(kNumContextFeatures, 0.0), esq(kNumContextFeatures, 0.0);
  int64_t total = 0;
  for (const auto& inst : train) {
    if (!inst.has_context)
      throw std::invalid_argument("fit_normalization: instance " + inst.id +
                                  " has no geospatial context (run assign first)");
    const auto raw = raw_traj_channels(inst, cfg.mode);
    const int64_t n = static_cast<int64_t>(inst.points.size());
    total += n;
    for (int64_t i = 0; i < n; ++i) {
      for (int c = 0; c < f; ++c) tsum[static_cast<size_t>(c)] += raw[i * f + c];
      for (int c = 0; c < kNumContextFeatures; ++c) {
        if (inst.context[static_cast<size_t>(i)][static_cast<size_t>(c)] < 0)
          throw std::invalid_argument("fit_normalization: negative context count in " + inst.id);
        esum[static_cast<size_t>(c)] +=
            std::log1p(inst.context[static_cast<size_t>(i)][static_cast<size_t>(c)]);
      }
    }
  }
  for (int c = 0; c < f; ++c) stats.traj[static_cast<size_t>(c)].mean = tsum[static_cast<size_t>(c)] / static_cast<double>(total);
  for (int c = 0; c < kNumContextFeatures; ++c)
    stats.env[static_cast<size_t>(c)].mean = esum[static_cast<size_t>(c)] / static_cast<double>(total);
  for (const auto& inst : train) {
    const auto raw = raw_traj_channels(inst, cfg.mode);
    const int64_t n = static_cast<int64_t>(inst.points.size());
    for (int64_t i = 0; i < n; ++i) {
      for (int c = 0; c < f; ++c) {
        const double d = raw[i * f + c] - stats.traj[static_cast<size_t>(c)].mean;
        tsq[static_cast<size_t>(c)] += d * d;
      }
      for (int c = 0; c < kNumContextFeatures; ++c) {
        const double d =
            std::log1p(inst.context[static_cast<size_t>(i)][static_cast<size_t>(c)]) -
            stats.env[static_cast<size_t>(c)].mean;
        esq[static_cast<size_t>(c)] += d * d;
      }
    }
  }
  auto finish = [&](ChannelStats& ch, double sq) {
    const double var = sq / static_cast<double>(total);
    if (var < 1e-24) {
      ch.stdev = 1.0;
      ++stats.zero_variance_channels;
    } else {
      ch.stdev = std::sqrt(var);
    }
  };
  for (int c = 0; c < f; ++c) finish(stats.traj[static_cast<size_t>(c)], tsq[static_cast<size_t>(c)]);
  for (int c = 0; c < kNumContextFeatures; ++c) finish(stats.env[static_cast<size_t>(c)], esq[static_cast<size_t>(c)]);
  return stats;
}

void apply_normalization(TrajInstance& inst, const NormStats& stats) {
  if (inst.normalized) return;  // idempotent: stored stats already applied
  if (!inst.has_context)
    throw std::invalid_argument("apply_normalization: instance " + inst.id +
                                " has no geospatial context");
  const int f = feature_dim(stats.cfg.mode);
  const size_t n = inst.points.size();
  const auto raw = raw_traj_channels(inst, stats.cfg.mode);
  inst.feat_dim = f;
  inst.feat_traj.assign(n * static_cast<size_t>(f), 0.0);
  inst.feat_env.assign(n * kNumContextFeatures, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < f; ++c) {
      const auto& ch = stats.traj[static_cast<size_t>(c)];
      inst.feat_traj[i * static_cast<size_t>(f) + static_cast<size_t>(c)] =
          (raw[i * static_cast<size_t>(f) + static_cast<size_t>(c)] - ch.mean) / ch.stdev;
    }
    for (int c = 0; c < kNumContextFeatures; ++c) {
      const auto& ch = stats.env[static_cast<size_t>(c)];
      inst.feat_env[i * kNumContextFeatures + static_cast<size_t>(c)] =
          (std::log1p(inst.context[i][static_cast<size_t>(c)]) - ch.mean) / ch.stdev;
    }
  }
  inst.normalized = true;
}

void apply_normalization(std::vector<TrajInstance>& instances, const NormStats& stats) {
  for (auto& inst : instances) apply_normalization(inst, stats);
}

namespace {

json channel_to_json(const ChannelStats& c) {
  return json{{"name", c.name}, {"log1p", c.log1p}, {"mean", c.mean}, {"stdev", c.stdev}};
}

ChannelStats channel_from_json(const json& j) {
  ChannelStats c;
  c.name = j.at("name").get<std::string>();
  c.log1p = j.at("log1p").get<bool>();
  c.mean = j.at("mean").get<double>();
  c.stdev = j.at("stdev").get<double>();
  return c;
}

}  // namespace

std::string NormStats::to_json() const {
  json j;
  j["feature_mode"] = trajcl::to_string(cfg.mode);
  j["zero_variance_channels"] = zero_variance_channels;
  j["traj"] = json::array();
  for (const auto& c : traj) j["traj"].push_back(channel_to_json(c));
  j["env"] = json::array();
  for (const auto& c : env) j["env"].push_back(channel_to_json(c));
  return j.dump();
}

NormStats NormStats::from_json(const std::string& text) {
  const json j = json::parse(text);
  NormStats s;
  s.cfg.mode = feature_mode_from_string(j.at("feature_mode").get<std::string>());
  s.zero_variance_channels = j.at("zero_variance_channels").get<int>();
  for (const auto& c : j.at("traj")) s.traj.push_back(channel_from_json(c));
  for (const auto& c : j.at("env")) s.env.push_back(channel_from_json(c));
  return s;
}

DatasetSplits split_dataset(std::vector<TrajInstance> instances, std::array<int, 3> ratios,
                            uint64_t seed) {
  if (instances.size() < 3)
    throw std::invalid_argument("split_dataset: need at least 3 instances");
  if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0)
    throw std::invalid_argument("split_dataset: ratios must be positive");
  const int64_t n = static_cast<int64_t>(instances.size());
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  auto rng = make_rng({seed, 0x511u});
  std::shuffle(idx.begin(), idx.end(), rng);

  const double rsum = ratios[0] + ratios[1] + ratios[2];
  std::array<int64_t, 3> counts{};
  std::array<double, 3> frac{};
  int64_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * ratios[static_cast<size_t>(k)] / rsum;
    counts[static_cast<size_t>(k)] = static_cast<int64_t>(std::floor(exact));
    frac[static_cast<size_t>(k)] = exact - std::floor(exact);
    assigned += counts[static_cast<size_t>(k)];
  }
  while (assigned < n) {  // largest remainder
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (frac[static_cast<size_t>(k)] > frac[static_cast<size_t>(best)]) best = k;
    ++counts[static_cast<size_t>(best)];
    frac[static_cast<size_t>(best)] = -1;
    ++assigned;
  }

  DatasetSplits out;
  out.seed = seed;
  int64_t pos = 0;
  for (int64_t i = 0; i < counts[0]; ++i) out.train.push_back(instances[static_cast<size_t>(idx[static_cast<size_t>(pos++)])]);
  for (int64_t i = 0; i < counts[1]; ++i) out.val.push_back(instances[static_cast<size_t>(idx[static_cast<size_t>(pos++)])]);
  for (int64_t i = 0; i < counts[2]; ++i) out.test.push_back(instances[static_cast<size_t>(idx[static_cast<size_t>(pos++)])]);
  return out;
}

namespace {

std::vector<size_t> sample_sorted(const std::vector<size_t>& pool, size_t take,
                                  std::mt19937_64& rng) {
  std::vector<size_t> shuffled = pool;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.resize(take);
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

}  // namespace

std::vector<TrajInstance> make_fewshot(const std::vector<TrajInstance>& train, double ratio,
                                       uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("make_fewshot: ratio must be in (0, 1]");
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < train.size(); ++i) by_class[train[i].label].push_back(i);

  // largest-remainder quotas, at least one instance per class
  const auto target_total =
      static_cast<int64_t>(std::llround(ratio * static_cast<double>(train.size())));
  std::map<int, int64_t> quota;
  std::vector<std::pair<double, int>> rema;
  int64_t assigned = 0;
  for (const auto& [label, idxs] : by_class) {
    const double exact = ratio * static_cast<double>(idxs.size());
    int64_t q = static_cast<int64_t>(std::floor(exact));
    rema.push_back({exact - std::floor(exact), label});
    quota[label] = q;
    assigned += q;
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  for (const auto& [fr, label] : rema) {
    if (assigned >= target_total) break;
    ++quota[label];
    ++assigned;
  }
  for (auto& [label, q] : quota) {
    q = std::max<int64_t>(q, 1);
    q = std::min<int64_t>(q, static_cast<int64_t>(by_class[label].size()));
  }

  std::vector<size_t> selected;
  for (const auto& [label, idxs] : by_class) {
    auto rng = make_rng({seed, 0xf3u, static_cast<uint64_t>(label)});
    auto pick = sample_sorted(idxs, static_cast<size_t>(quota[label]), rng);
    selected.insert(selected.end(), pick.begin(), pick.end());
  }
  std::sort(selected.begin(), selected.end());
  std::vector<TrajInstance> out;
  out.reserve(selected.size());
  for (size_t i : selected) out.push_back(train[i]);
  return out;
}

std::vector<TrajInstance> make_imbalanced(const std::vector<TrajInstance>& train, int class_a,
                                          int class_b, int ratio_a, int ratio_b,
                                          int64_t total_budget, uint64_t seed) {
  if (ratio_a <= 0 || ratio_b <= 0)
    throw std::invalid_argument("make_imbalanced: ratios must be positive");
  if (total_budget <= 0) throw std::invalid_argument("make_imbalanced: budget must be positive");
  std::vector<size_t> pool_a, pool_b;
  for (size_t i = 0; i < train.size(); ++i) {
    if (train[i].label == class_a) pool_a.push_back(i);
    if (train[i].label == class_b) pool_b.push_back(i);
  }
  if (pool_a.empty() || pool_b.empty())
    throw std::invalid_argument("make_imbalanced: both classes must be present");
  const int64_t n_a = std::llround(static_cast<double>(total_budget) *
                                   static_cast<double>(ratio_a) /
                                   static_cast<double>(ratio_a + ratio_b));
  const int64_t n_b = total_budget - n_a;
  if (n_a > static_cast<int64_t>(pool_a.size()))
    throw std::invalid_argument("make_imbalanced: class " + std::to_string(class_a) +
                                " has only " + std::to_string(pool_a.size()) +
                                " instances, need " + std::to_string(n_a));
  if (n_b > static_cast<int64_t>(pool_b.size()))
    throw std::invalid_argument("make_imbalanced: class " + std::to_string(class_b) +
                                " has only " + std::to_string(pool_b.size()) +
                                " instances, need " + std::to_string(n_b));
  auto rng_a = make_rng({seed, 0xabu, static_cast<uint64_t>(class_a)});
  auto rng_b = make_rng({seed, 0xabu, static_cast<uint64_t>(class_b)});
  auto sel_a = sample_sorted(pool_a, static_cast<size_t>(n_a), rng_a);
  auto sel_b = sample_sorted(pool_b, static_cast<size_t>(n_b), rng_b);
  std::vector<size_t> selected;
  selected.insert(selected.end(), sel_a.begin(), sel_a.end());
  selected.insert(selected.end(), sel_b.begin(), sel_b.end());
  std::sort(selected.begin(), selected.end());
  std::vector<TrajInstance> out;
  out.reserve(selected.size());
  for (size_t i : selected) out.push_back(train[i]);
  return out;
}

}  // namespace trajcl
