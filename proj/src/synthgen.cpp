#include "trajcl/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajcl/rng.hpp"

namespace trajcl {

using json = nlohmann::json;

namespace {

std::vector<ModeKinematics> default_modes(int n_modes) {
  // car-in-congestion (13.0 * 0.5) collides exactly with motorcycle-on-open-road
  // (6.5), so the ambiguous speed band is resolvable only through context
  std::vector<ModeKinematics> presets = {
      {"car", 13.0, 0.55}, {"motorcycle", 6.5, 0.55}, {"bus", 3.4, 0.50}, {"walk", 1.3, 0.40}};
  std::vector<ModeKinematics> out;
  for (int i = 0; i < n_modes; ++i)
    out.push_back(presets[static_cast<size_t>(i) % presets.size()]);
  return out;
}

std::vector<ZoneEffect> default_zone_presets() {
  // stop probability is uniform across zones so stop frequency carries no
  // zone information; zones modulate speed only
  return {{"open", 1.0, 0.10}, {"congested", 0.5, 0.10}, {"park", 0.68, 0.10}};
}

}  // namespace

FeatureTable SynthWorld::feature_table() const {
  FeatureTable table;
  table.cells.reserve(static_cast<size_t>(grid.n_cells()));
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c)
      table.cells[grid.cell_index(r, c)] =
          zone_context[static_cast<size_t>(zone_at_cell(r, c))];
  return table;
}

SynthWorld gen_world(uint64_t seed, int k_zones, double spurious_rate, const WorldOptions& opt) {
  if (k_zones < 2) throw std::invalid_argument("gen_world: need at least 2 zones");
  if (spurious_rate < 0.0 || spurious_rate > 1.0)
    throw std::invalid_argument("gen_world: spurious_rate must be in [0,1]");
  SynthWorld w;
  w.seed = seed;
  w.k_zones = k_zones;
  w.spurious_rate = spurious_rate;
  w.opt = opt;

  const double half_w_deg_lat = opt.mbr_width_km * 500.0 /
                                (kEarthRadiusM * std::numbers::pi / 180.0);
  const double m_per_deg_lat = kEarthRadiusM * std::numbers::pi / 180.0;
  const double m_per_deg_lon =
      m_per_deg_lat * std::cos(opt.center_lat * std::numbers::pi / 180.0);
  const double half_w_deg_lon = opt.mbr_width_km * 500.0 / m_per_deg_lon;
  Mbr mbr{opt.center_lon - half_w_deg_lon, opt.center_lat - half_w_deg_lat,
          opt.center_lon + half_w_deg_lon, opt.center_lat + half_w_deg_lat};
  w.grid = build_grid(mbr, opt.cell_size_m);

  const double start_half_lon = opt.start_width_km * 500.0 / w.grid.m_per_deg_lon;
  const double start_half_lat = opt.start_width_km * 500.0 / w.grid.m_per_deg_lat;
  w.start_region = {opt.center_lon - start_half_lon, opt.center_lat - start_half_lat,
                    opt.center_lon + start_half_lon, opt.center_lat + start_half_lat};

  w.modes = opt.modes.empty() ? default_modes(opt.n_modes) : opt.modes;
  const auto presets = opt.zone_presets.empty() ? default_zone_presets() : opt.zone_presets;
  for (int z = 0; z < k_zones; ++z)
    w.zones.push_back(presets[static_cast<size_t>(z) % presets.size()]);

  auto rng = make_rng({seed, 0x90d1u});
  // zone centers inside the start region so every zone is reachable from it
  const Cell lo = w.grid.cell_of(w.start_region.lon_min, w.start_region.lat_min);
  const Cell hi = w.grid.cell_of(w.start_region.lon_max, w.start_region.lat_max);
  std::uniform_int_distribution<int> row_d(lo.row, hi.row), col_d(lo.col, hi.col);
  std::set<std::pair<int, int>> used;
  for (int z = 0; z < k_zones; ++z) {
    int r = 0, c = 0;
    do {
      r = row_d(rng);
      c = col_d(rng);
    } while (used.count({r, c}));
    used.insert({r, c});
    w.zone_centers_m.push_back({(r + 0.5) * w.grid.cell_size_m, (c + 0.5) * w.grid.cell_size_m});
  }

  w.zone_of_cell.resize(static_cast<size_t>(w.grid.n_cells()));
  for (int r = 0; r < w.grid.rows; ++r)
    for (int c = 0; c < w.grid.cols; ++c) {
      const double y = (r + 0.5) * w.grid.cell_size_m;
      const double x = (c + 0.5) * w.grid.cell_size_m;
      int best = 0;
      double best_d = 1e300;
      for (int z = 0; z < k_zones; ++z) {
        const double dy = y - w.zone_centers_m[static_cast<size_t>(z)].first;
        const double dx = x - w.zone_centers_m[static_cast<size_t>(z)].second;
        const double d2 = dy * dy + dx * dx;
        if (d2 < best_d) {
          best_d = d2;
          best = z;
        }
      }
      w.zone_of_cell[static_cast<size_t>(w.grid.cell_index(r, c))] = best;
    }

  // fixed random non-negative integer embedding of zones into feature space
  std::uniform_int_distribution<int> count_d(0, opt.context_count_max);
  for (int z = 0; z < k_zones; ++z) {
    ContextRow row{};
    for (int f = 0; f < kNumContextFeatures; ++f) row[static_cast<size_t>(f)] = count_d(rng);
    w.zone_context.push_back(row);
  }
  return w;
}

Regime regime_from_string(const std::string& s) {
  if (s == "train-correlated") return Regime::kTrainCorrelated;
  if (s == "test-shifted") return Regime::kTestShifted;
  throw std::invalid_argument("unknown regime: " + s);
}

std::string to_string(Regime r) {
  return r == Regime::kTrainCorrelated ? "train-correlated" : "test-shifted";
}

std::vector<TrajInstance> gen_dataset(const SynthWorld& world, int n_instances, Regime regime,
                                      uint64_t seed) {
  if (n_instances <= 0) throw std::invalid_argument("gen_dataset: n_instances must be positive");
  const auto& opt = world.opt;
  const int n_modes = static_cast<int>(world.modes.size());
  const FeatureTable table = world.feature_table();
  const Cell lo = world.grid.cell_of(world.start_region.lon_min, world.start_region.lat_min);
  const Cell hi = world.grid.cell_of(world.start_region.lon_max, world.start_region.lat_max);
  constexpr int64_t kEpoch = 1'600'000'000;

  std::vector<TrajInstance> out;
  out.reserve(static_cast<size_t>(n_instances));
  for (int idx = 0; idx < n_instances; ++idx) {
    auto rng = make_rng({world.seed, static_cast<uint64_t>(regime == Regime::kTestShifted),
                         seed, static_cast<uint64_t>(idx)});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::uniform_int_distribution<int> row_d(lo.row, hi.row), col_d(lo.col, hi.col);
    const int row = row_d(rng), col = col_d(rng);
    const double lon0 = world.grid.mbr.lon_min +
                        ((col + unif(rng)) * world.grid.cell_size_m) / world.grid.m_per_deg_lon;
    const double lat0 = world.grid.mbr.lat_min +
                        ((row + unif(rng)) * world.grid.cell_size_m) / world.grid.m_per_deg_lat;
    const int zone0 = world.zone_at_cell(row, col);

    int mode;
    std::uniform_int_distribution<int> mode_d(0, n_modes - 1);
    if (regime == Regime::kTrainCorrelated && unif(rng) < world.spurious_rate)
      mode = world.preferred_mode(zone0);
    else
      mode = mode_d(rng);

    std::uniform_int_distribution<int> np_d(opt.n_points_min, opt.n_points_max);
    const int n_points = np_d(rng);
    double heading = (unif(rng) * 2.0 - 1.0) * std::numbers::pi;

    TrajInstance inst;
    inst.id = "synth-" + to_string(regime) + "-" + std::to_string(idx);
    inst.label = mode;
    inst.points.push_back({lon0, lat0, kEpoch});
    const auto& mk = world.modes[static_cast<size_t>(mode)];
    for (int i = 1; i < n_points; ++i) {
      const auto& prev = inst.points.back();
      const Cell c = world.grid.cell_of(prev.lon, prev.lat);
      const auto& ze = world.zones[static_cast<size_t>(world.zone_at_cell(c.row, c.col))];
      double speed;
      if (unif(rng) < ze.stop_prob) {
        speed = std::exp(opt.stop_mu_log + opt.stop_sigma_log * gauss(rng));
      } else {
        speed = std::exp(std::log(mk.base_speed_mps * ze.speed_factor) +
                         mk.sigma_log * gauss(rng));
      }
      heading += opt.heading_sigma * gauss(rng);
      const double step_m = speed * opt.dt_seconds;
      inst.points.push_back(
          {prev.lon + step_m * std::cos(heading) / world.grid.m_per_deg_lon,
           prev.lat + step_m * std::sin(heading) / world.grid.m_per_deg_lat,
           prev.t + static_cast<int64_t>(opt.dt_seconds)});
    }
    assign_context(inst, world.grid, table);
    out.push_back(std::move(inst));
  }
  return out;
}

namespace {

double lognormal_pdf(double x, double mu, double sigma) {
  if (x <= 0) return 0.0;
  const double z = (std::log(x) - mu) / sigma;
  return std::exp(-0.5 * z * z) / (x * sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

std::vector<double> bayes_oracle(const SynthWorld& world, const TrajInstance& inst) {
  const int n_modes = static_cast<int>(world.modes.size());
  std::vector<double> loglik(static_cast<size_t>(n_modes), 0.0);
  for (size_t i = 1; i < inst.points.size(); ++i) {
    const auto& a = inst.points[i - 1];
    const auto& b = inst.points[i];
    const double dx = (b.lon - a.lon) * world.grid.m_per_deg_lon;
    const double dy = (b.lat - a.lat) * world.grid.m_per_deg_lat;
    const double dt = static_cast<double>(b.t - a.t);
    const double speed = std::sqrt(dx * dx + dy * dy) / dt;
    const Cell c = world.grid.cell_of(a.lon, a.lat);
    const auto& ze = world.zones[static_cast<size_t>(world.zone_at_cell(c.row, c.col))];
    const double stop_part =
        ze.stop_prob * lognormal_pdf(speed, world.opt.stop_mu_log, world.opt.stop_sigma_log);
    for (int m = 0; m < n_modes; ++m) {
      const auto& mk = world.modes[static_cast<size_t>(m)];
      const double go_part =
          (1.0 - ze.stop_prob) *
          lognormal_pdf(speed, std::log(mk.base_speed_mps * ze.speed_factor), mk.sigma_log);
      loglik[static_cast<size_t>(m)] += std::log(std::max(1e-300, stop_part + go_part));
    }
  }
  // uniform interventional mode prior
  const double mx = *std::max_element(loglik.begin(), loglik.end());
  double denom = 0;
  std::vector<double> post(static_cast<size_t>(n_modes));
  for (int m = 0; m < n_modes; ++m) {
    post[static_cast<size_t>(m)] = std::exp(loglik[static_cast<size_t>(m)] - mx);
    denom += post[static_cast<size_t>(m)];
  }
  for (auto& p : post) p /= denom;
  return post;
}

int bayes_oracle_argmax(const SynthWorld& world, const TrajInstance& inst) {
  const auto post = bayes_oracle(world, inst);
  return static_cast<int>(std::max_element(post.begin(), post.end()) - post.begin());
}

double bayes_oracle_accuracy(const SynthWorld& world, const std::vector<TrajInstance>& insts) {
  if (insts.empty()) return 0.0;
  int64_t correct = 0;
  for (const auto& inst : insts)
    if (bayes_oracle_argmax(world, inst) == inst.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(insts.size());
}

double empirical_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("empirical_mutual_information: size mismatch");
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
    pab[{a[i], b[i]}] += 1.0 / n;
  }
  double mi = 0;
  for (const auto& [key, pxy] : pab) mi += pxy * std::log(pxy / (pa[key.first] * pb[key.second]));
  return mi;
}

int start_zone(const SynthWorld& world, const TrajInstance& inst) {
  return world.zone_at(inst.points.front().lon, inst.points.front().lat);
}

std::string SynthWorld::to_json() const {
  json j;
  j["seed"] = seed;
  j["k_zones"] = k_zones;
  j["spurious_rate"] = spurious_rate;
  json o;
  o["n_modes"] = opt.n_modes;
  o["center_lon"] = opt.center_lon;
  o["center_lat"] = opt.center_lat;
  o["mbr_width_km"] = opt.mbr_width_km;
  o["start_width_km"] = opt.start_width_km;
  o["cell_size_m"] = opt.cell_size_m;
  o["dt_seconds"] = opt.dt_seconds;
  o["n_points_min"] = opt.n_points_min;
  o["n_points_max"] = opt.n_points_max;
  o["heading_sigma"] = opt.heading_sigma;
  o["stop_mu_log"] = opt.stop_mu_log;
  o["stop_sigma_log"] = opt.stop_sigma_log;
  o["context_count_max"] = opt.context_count_max;
  j["options"] = std::move(o);
  j["modes"] = json::array();
  for (const auto& m : modes)
    j["modes"].push_back({{"name", m.name},
                          {"base_speed_mps", m.base_speed_mps},
                          {"sigma_log", m.sigma_log}});
  j["zones"] = json::array();
  for (const auto& z : zones)
    j["zones"].push_back(
        {{"name", z.name}, {"speed_factor", z.speed_factor}, {"stop_prob", z.stop_prob}});
  j["zone_centers_m"] = json::array();
  for (const auto& [y, x] : zone_centers_m) j["zone_centers_m"].push_back({y, x});
  j["zone_context"] = json::array();
  for (const auto& row : zone_context) {
    json r = json::array();
    for (double x : row) r.push_back(x);
    j["zone_context"].push_back(std::move(r));
  }
  return j.dump(2);
}

SynthWorld SynthWorld::from_json(const std::string& text) {
  const json j = json::parse(text);
  WorldOptions opt;
  const json& o = j.at("options");
  opt.n_modes = o.at("n_modes").get<int>();
  opt.center_lon = o.at("center_lon").get<double>();
  opt.center_lat = o.at("center_lat").get<double>();
  opt.mbr_width_km = o.at("mbr_width_km").get<double>();
  opt.start_width_km = o.at("start_width_km").get<double>();
  opt.cell_size_m = o.at("cell_size_m").get<double>();
  opt.dt_seconds = o.at("dt_seconds").get<double>();
  opt.n_points_min = o.at("n_points_min").get<int>();
  opt.n_points_max = o.at("n_points_max").get<int>();
  opt.heading_sigma = o.at("heading_sigma").get<double>();
  opt.stop_mu_log = o.at("stop_mu_log").get<double>();
  opt.stop_sigma_log = o.at("stop_sigma_log").get<double>();
  opt.context_count_max = o.at("context_count_max").get<int>();
  for (const auto& m : j.at("modes"))
    opt.modes.push_back({m.at("name").get<std::string>(), m.at("base_speed_mps").get<double>(),
                         m.at("sigma_log").get<double>()});
  for (const auto& z : j.at("zones"))
    opt.zone_presets.push_back({z.at("name").get<std::string>(),
                                z.at("speed_factor").get<double>(),
                                z.at("stop_prob").get<double>()});

  SynthWorld w = gen_world(j.at("seed").get<uint64_t>(), j.at("k_zones").get<int>(),
                           j.at("spurious_rate").get<double>(), opt);
  // the seeded reconstruction must agree with the stored draw
  const json centers = j.at("zone_centers_m");
  for (size_t z = 0; z < w.zone_centers_m.size(); ++z) {
    if (std::abs(w.zone_centers_m[z].first - centers[z][0].get<double>()) > 1e-9 ||
        std::abs(w.zone_centers_m[z].second - centers[z][1].get<double>()) > 1e-9)
      throw std::runtime_error("world config: zone centers do not match the seeded draw");
  }
  return w;
}

}  // namespace trajcl
