#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trajcl/trajdata.hpp"

namespace trajcl {

struct ModeKinematics {
  std::string name;
  double base_speed_mps = 10.0;
  double sigma_log = 0.5;  // log-space spread of the moving-speed distribution
};

struct ZoneEffect {
  std::string name;
  double speed_factor = 1.0;
  double stop_prob = 0.05;
};

struct WorldOptions {
  int n_modes = 2;
  double center_lon = 116.35;
  double center_lat = 39.95;
  double mbr_width_km = 50.0;    // square MBR edge
  double start_width_km = 10.0;  // central start region edge
  double cell_size_m = 200.0;
  double dt_seconds = 10.0;
  int n_points_min = 20;
  int n_points_max = 50;
  double heading_sigma = 0.35;    // per-step heading drift, mode-independent
  double stop_mu_log = -1.897;    // log(0.15 m/s): near-standstill speeds
  double stop_sigma_log = 0.8;
  int context_count_max = 12;     // zone embedding draws counts in [0, max]
  std::vector<ModeKinematics> modes;      // defaults used when empty
  std::vector<ZoneEffect> zone_presets;   // cycled across zones when empty
};

/// Fully-resolved generative world: gridded geography, contiguous Voronoi
/// zones, per-mode kinematics, per-zone speed modulation and stop behaviour,
/// a fixed zone -> 24-feature context embedding, and the train-time
/// zone/mode coupling strength.
struct SynthWorld {
  uint64_t seed = 0;
  int k_zones = 2;
  double spurious_rate = 0.0;
  WorldOptions opt;

  Grid grid;
  Mbr start_region;
  std::vector<std::pair<double, double>> zone_centers_m;  // (y, x) meters from MBR corner
  std::vector<int> zone_of_cell;                          // rows*cols entries
  std::vector<ModeKinematics> modes;
  std::vector<ZoneEffect> zones;
  std::vector<ContextRow> zone_context;  // k_zones rows of non-negative integers

  int zone_at_cell(int row, int col) const {
    return zone_of_cell[static_cast<size_t>(grid.cell_index(row, col))];
  }
  int zone_at(double lon, double lat) const {
    const Cell c = grid.cell_of(lon, lat);
    return zone_at_cell(c.row, c.col);
  }
  int preferred_mode(int zone) const { return zone % static_cast<int>(modes.size()); }

  /// Materializes the cell -> context mapping in the real pipeline's schema.
  FeatureTable feature_table() const;

  std::string to_json() const;
  static SynthWorld from_json(const std::string& text);
};

SynthWorld gen_world(uint64_t seed, int k_zones, double spurious_rate,
                     const WorldOptions& opt = {});

enum class Regime { kTrainCorrelated, kTestShifted };

Regime regime_from_string(const std::string& s);
std::string to_string(Regime r);

/// Deterministic given (world, regime, seed); per-instance streams derive
/// from (seed, index). Instances come with context already assigned through
/// the world's feature table.
std::vector<TrajInstance> gen_dataset(const SynthWorld& world, int n_instances, Regime regime,
                                      uint64_t seed);

/// Interventional (uniform mode prior) posterior over modes given the
/// trajectory's step speeds and the known zone-conditional speed mixture.
/// This is the exact Bayes classifier for the shifted regime.
std::vector<double> bayes_oracle(const SynthWorld& world, const TrajInstance& inst);

int bayes_oracle_argmax(const SynthWorld& world, const TrajInstance& inst);

double bayes_oracle_accuracy(const SynthWorld& world, const std::vector<TrajInstance>& insts);

/// Plug-in mutual information (nats) between two discrete label sequences.
double empirical_mutual_information(const std::vector<int>& a, const std::vector<int>& b);

int start_zone(const SynthWorld& world, const TrajInstance& inst);

}  // namespace trajcl
