#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace trajcl {

constexpr int kNumContextFeatures = 24;

/// Fixed geospatial feature order shared by feature tables, archives and the
/// synthetic generator.
const std::array<const char*, kNumContextFeatures>& context_feature_names();

struct TrajPoint {
  double lon = 0;  // degrees WGS84
  double lat = 0;  // degrees WGS84
  int64_t t = 0;   // seconds since epoch, strictly increasing within a trajectory
};

struct RawTrajectory {
  std::string id;
  int label = 0;
  std::vector<TrajPoint> points;
};

using ContextRow = std::array<double, kNumContextFeatures>;

/// One partitioned trajectory instance. `context` rows parallel `points`;
/// `feat_*` are filled by apply_normalization.
struct TrajInstance {
  std::string id;
  int label = 0;
  std::vector<TrajPoint> points;
  std::vector<ContextRow> context;
  bool has_context = false;

  std::vector<double> feat_traj;  // n x feat_dim, row-major
  std::vector<double> feat_env;   // n x 24, row-major
  int feat_dim = 0;
  bool normalized = false;

  size_t n() const { return points.size(); }
};

struct Mbr {
  double lon_min = 0, lat_min = 0, lon_max = 0, lat_max = 0;
  bool contains(double lon, double lat) const {
    return lon >= lon_min && lon <= lon_max && lat >= lat_min && lat <= lat_max;
  }
};

Mbr compute_mbr(const std::vector<RawTrajectory>& raws);
Mbr compute_mbr(const std::vector<TrajInstance>& instances);

constexpr double kEarthRadiusM = 6371000.0;

/// Great-circle distance in meters; used as the independent check for the
/// local equirectangular projection.
double haversine_m(double lon1, double lat1, double lon2, double lat2);

struct Cell {
  int row = 0, col = 0;
  bool clamped = false;
};

/// MBR-anchored square-cell index under a local equirectangular projection
/// fixed at the MBR center latitude.
struct Grid {
  Mbr mbr;
  double cell_size_m = 200.0;
  int rows = 0, cols = 0;
  double m_per_deg_lon = 0, m_per_deg_lat = 0;

  Cell cell_of(double lon, double lat) const;
  int64_t cell_index(int row, int col) const { return static_cast<int64_t>(row) * cols + col; }
  int64_t n_cells() const { return static_cast<int64_t>(rows) * cols; }
};

Grid build_grid(const Mbr& mbr, double cell_size_m = 200.0);

/// Sparse cell -> 24 count features map; missing cells read as zeros.
struct FeatureTable {
  std::unordered_map<int64_t, ContextRow> cells;

  ContextRow lookup(int64_t cell_index) const {
    auto it = cells.find(cell_index);
    if (it != cells.end()) return it->second;
    ContextRow zero{};
    return zero;
  }
};

struct PartitionConfig {
  int n_min = 20;
  int n_max = 50;
  double m_min_minutes = 2.0;
  double m_max_minutes = 10.0;

  void validate() const;
};

struct PartitionStats {
  int64_t kept = 0;
  int64_t dropped_below_n_min = 0;
  int64_t dropped_short_duration = 0;
  int64_t downsampled = 0;
  int64_t rejected = 0;
  std::vector<std::string> diagnostics;
};

/// Appendix-pipeline partitioning: trajectories longer than M_max minutes are
/// cut into M_max-minute segments (the remainder kept and filtered like any
/// segment); whole trajectories pass through when duration exceeds M_min.
/// Segments are then point-count filtered: fewer than N_min points drops the
/// segment, more than N_max downsamples to exactly N_max evenly spaced points
/// with both endpoints retained.
std::vector<TrajInstance> partition(const std::vector<RawTrajectory>& raws,
                                    const PartitionConfig& cfg, PartitionStats* stats = nullptr);

std::vector<TrajPoint> downsample_evenly(const std::vector<TrajPoint>& pts, int target);

struct AssignStats {
  int64_t points_assigned = 0;
  int64_t clamped_points = 0;  // outside-MBR points snapped to a boundary cell
};

/// context[i] = table[cell(points[i])]; unknown cells resolve to zeros.
void assign_context(TrajInstance& inst, const Grid& grid, const FeatureTable& table,
                    AssignStats* stats = nullptr);
void assign_context(std::vector<TrajInstance>& instances, const Grid& grid,
                    const FeatureTable& table, AssignStats* stats = nullptr);

enum class FeatureMode {
  kCoords,            // [lon_z, lat_z, dt_z]
  kKinematics,        // [log1p(speed)_z, dheading_z, dt_z]
  kCoordsKinematics,  // [lon_z, lat_z, dt_z, log1p(speed)_z, dheading_z]
};

FeatureMode feature_mode_from_string(const std::string& s);
std::string to_string(FeatureMode m);
int feature_dim(FeatureMode m);

struct FeatureConfig {
  FeatureMode mode = FeatureMode::kCoords;
};

struct ChannelStats {
  std::string name;
  bool log1p = false;
  double mean = 0.0;
  double stdev = 1.0;  // replaced by 1 when the raw variance is zero
};

/// Fitted normalization statistics (train split only). Serializable so a
/// checkpoint can reproduce the exact transform at inference time.
struct NormStats {
  FeatureConfig cfg;
  std::vector<ChannelStats> traj;
  std::vector<ChannelStats> env;
  int zero_variance_channels = 0;

  std::string to_json() const;
  static NormStats from_json(const std::string& text);
};

/// Raw (pre z-score) per-point channels for an instance under a mode;
/// exposed for oracle tests.
std::vector<double> raw_traj_channels(const TrajInstance& inst, FeatureMode mode);

NormStats fit_normalization(const std::vector<TrajInstance>& train, const FeatureConfig& cfg);
void apply_normalization(TrajInstance& inst, const NormStats& stats);
void apply_normalization(std::vector<TrajInstance>& instances, const NormStats& stats);

struct DatasetSplits {
  std::vector<TrajInstance> train, val, test;
  uint64_t seed = 0;
};

/// Seeded shuffle then largest-remainder apportionment across the ratio.
DatasetSplits split_dataset(std::vector<TrajInstance> instances, std::array<int, 3> ratios,
                            uint64_t seed);

/// Stratified-by-label subsample of about ratio*|train| (at least one
/// instance per class); original relative order is preserved.
std::vector<TrajInstance> make_fewshot(const std::vector<TrajInstance>& train, double ratio,
                                       uint64_t seed);

/// Two-class rebalance: exactly `total_budget` instances split between
/// `class_a` and `class_b` in ratio_a:ratio_b; other classes are excluded.
std::vector<TrajInstance> make_imbalanced(const std::vector<TrajInstance>& train, int class_a,
                                          int class_b, int ratio_a, int ratio_b,
                                          int64_t total_budget, uint64_t seed);

}  // namespace trajcl
