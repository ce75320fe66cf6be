#include "trajcl/archive.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajcl/fsio.hpp"

namespace trajcl {

using json = nlohmann::json;

std::string instances_to_jsonl(const std::vector<TrajInstance>& instances) {
  std::ostringstream os;
  for (const auto& inst : instances) {
    json j;
    j["id"] = inst.id;
    j["label"] = inst.label;
    json pts = json::array();
    for (const auto& p : inst.points) pts.push_back(json::array({p.lon, p.lat, p.t}));
    j["points"] = std::move(pts);
    if (inst.has_context) {
      json ctx = json::array();
      for (const auto& row : inst.context) {
        json r = json::array();
        for (double x : row) r.push_back(x);
        ctx.push_back(std::move(r));
      }
      j["context"] = std::move(ctx);
    }
    os << j.dump() << "\n";
  }
  return os.str();
}

std::vector<TrajInstance> instances_from_jsonl(const std::string& text) {
  std::vector<TrajInstance> out;
  std::istringstream is(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("instance archive line " + std::to_string(lineno) + ": " +
                               e.what());
    }
    TrajInstance inst;
    inst.id = j.at("id").get<std::string>();
    inst.label = j.at("label").get<int>();
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 3)
        throw std::runtime_error("instance archive line " + std::to_string(lineno) +
                                 ": malformed point");
      inst.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<int64_t>()});
    }
    if (j.contains("context")) {
      for (const auto& row : j.at("context")) {
        if (!row.is_array() || row.size() != kNumContextFeatures)
          throw std::runtime_error("instance archive line " + std::to_string(lineno) +
                                   ": context row must have " +
                                   std::to_string(kNumContextFeatures) + " entries");
        ContextRow r{};
        for (int c = 0; c < kNumContextFeatures; ++c) r[static_cast<size_t>(c)] = row[static_cast<size_t>(c)].get<double>();
        inst.context.push_back(r);
      }
      inst.has_context = true;
      if (inst.context.size() != inst.points.size())
        throw std::runtime_error("instance archive line " + std::to_string(lineno) +
                                 ": context rows != points");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

void write_instances(const std::string& path, const std::vector<TrajInstance>& instances) {
  atomic_write_file(path, instances_to_jsonl(instances));
}

std::vector<TrajInstance> read_instances(const std::string& path) {
  return instances_from_jsonl(read_file(path));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, size_t lineno, const char* what) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("csv line " + std::to_string(lineno) + ": bad " + what + " '" + s +
                             "'");
  }
}

int64_t parse_int(const std::string& s, size_t lineno, const char* what) {
  int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("csv line " + std::to_string(lineno) + ": bad " + what + " '" + s +
                             "'");
  return v;
}

/// Shortest round-trip decimal for a double.
std::string format_double(double v) {
  char buf[32];
  snprintf(buf, sizeof buf, "%.17g", v);
  double parsed = 0;
  sscanf(buf, "%lf", &parsed);
  if (parsed == v) {
    // try shorter representations
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[32];
      snprintf(shorter, sizeof shorter, "%.*g", prec, v);
      sscanf(shorter, "%lf", &parsed);
      if (parsed == v) return shorter;
    }
  }
  return buf;
}

}  // namespace

std::vector<RawTrajectory> read_raw_csv(const std::string& path) {
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() != 5 || header[0] != "traj_id" || header[1] != "lon" || header[2] != "lat" ||
      header[3] != "t" || header[4] != "label")
    throw std::runtime_error(path + ": expected header traj_id,lon,lat,t,label");
  std::vector<RawTrajectory> out;
  std::unordered_map<std::string, size_t> index;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5)
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected 5 fields, got " +
                               std::to_string(fields.size()));
    const std::string& id = fields[0];
    TrajPoint p;
    p.lon = parse_double(fields[1], lineno, "lon");
    p.lat = parse_double(fields[2], lineno, "lat");
    p.t = parse_int(fields[3], lineno, "t");
    const int label = static_cast<int>(parse_int(fields[4], lineno, "label"));
    auto it = index.find(id);
    if (it == index.end()) {
      index[id] = out.size();
      out.push_back({id, label, {p}});
    } else {
      RawTrajectory& r = out[it->second];
      if (r.label != label)
        throw std::runtime_error("csv line " + std::to_string(lineno) + ": trajectory " + id +
                                 " changes label");
      r.points.push_back(p);
    }
  }
  return out;
}

void write_raw_csv(const std::string& path, const std::vector<RawTrajectory>& raws) {
  std::ostringstream os;
  os << "traj_id,lon,lat,t,label\n";
  for (const auto& r : raws)
    for (const auto& p : r.points)
      os << r.id << ',' << format_double(p.lon) << ',' << format_double(p.lat) << ',' << p.t
         << ',' << r.label << "\n";
  atomic_write_file(path, os.str());
}

FeatureTable read_feature_csv(const std::string& path, const Grid& grid) {
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() != 2 + kNumContextFeatures || header[0] != "row" || header[1] != "col")
    throw std::runtime_error(path + ": expected header row,col,<24 feature names>");
  for (int c = 0; c < kNumContextFeatures; ++c)
    if (header[static_cast<size_t>(c) + 2] != context_feature_names()[static_cast<size_t>(c)])
      throw std::runtime_error(path + ": feature column " + std::to_string(c + 3) + " is '" +
                               header[static_cast<size_t>(c) + 2] + "', expected '" +
                               context_feature_names()[static_cast<size_t>(c)] + "'");
  FeatureTable table;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2 + kNumContextFeatures)
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected " +
                               std::to_string(2 + kNumContextFeatures) + " fields");
    const int64_t row = parse_int(fields[0], lineno, "row");
    const int64_t col = parse_int(fields[1], lineno, "col");
    if (row < 0 || row >= grid.rows || col < 0 || col >= grid.cols)
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": cell (" +
                               std::to_string(row) + "," + std::to_string(col) +
                               ") outside the grid");
    ContextRow r{};
    for (int c = 0; c < kNumContextFeatures; ++c) {
      r[static_cast<size_t>(c)] = parse_double(fields[static_cast<size_t>(c) + 2], lineno, "count");
      if (r[static_cast<size_t>(c)] < 0)
        throw std::runtime_error("csv line " + std::to_string(lineno) + ": negative count");
    }
    table.cells[grid.cell_index(static_cast<int>(row), static_cast<int>(col))] = r;
  }
  return table;
}

void write_feature_csv(const std::string& path, const FeatureTable& table, const Grid& grid) {
  std::ostringstream os;
  os << "row,col";
  for (const char* name : context_feature_names()) os << ',' << name;
  os << "\n";
  std::vector<int64_t> keys;
  keys.reserve(table.cells.size());
  for (const auto& [k, _] : table.cells) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (int64_t k : keys) {
    os << (k / grid.cols) << ',' << (k % grid.cols);
    for (double x : table.cells.at(k)) os << ',' << format_double(x);
    os << "\n";
  }
  atomic_write_file(path, os.str());
}

std::string grid_bundle_to_json(const Grid& grid, const FeatureTable& table) {
  json j;
  j["mbr"] = {grid.mbr.lon_min, grid.mbr.lat_min, grid.mbr.lon_max, grid.mbr.lat_max};
  j["cell_size_m"] = grid.cell_size_m;
  j["rows"] = grid.rows;
  j["cols"] = grid.cols;
  j["m_per_deg_lon"] = grid.m_per_deg_lon;
  j["m_per_deg_lat"] = grid.m_per_deg_lat;
  j["feature_names"] = json::array();
  for (const char* name : context_feature_names()) j["feature_names"].push_back(name);
  json cells = json::object();
  std::vector<int64_t> keys;
  keys.reserve(table.cells.size());
  for (const auto& [k, _] : table.cells) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (int64_t k : keys) {
    json row = json::array();
    for (double x : table.cells.at(k)) row.push_back(x);
    cells[std::to_string(k)] = std::move(row);
  }
  j["cells"] = std::move(cells);
  return j.dump();
}

void write_grid_bundle(const std::string& path, const Grid& grid, const FeatureTable& table) {
  atomic_write_file(path, grid_bundle_to_json(grid, table));
}

void read_grid_bundle(const std::string& path, Grid& grid, FeatureTable& table) {
  const json j = json::parse(read_file(path));
  grid.mbr = {j.at("mbr")[0].get<double>(), j.at("mbr")[1].get<double>(),
              j.at("mbr")[2].get<double>(), j.at("mbr")[3].get<double>()};
  grid.cell_size_m = j.at("cell_size_m").get<double>();
  grid.rows = j.at("rows").get<int>();
  grid.cols = j.at("cols").get<int>();
  grid.m_per_deg_lon = j.at("m_per_deg_lon").get<double>();
  grid.m_per_deg_lat = j.at("m_per_deg_lat").get<double>();
  table.cells.clear();
  for (const auto& [key, row] : j.at("cells").items()) {
    ContextRow r{};
    for (int c = 0; c < kNumContextFeatures; ++c) r[static_cast<size_t>(c)] = row[static_cast<size_t>(c)].get<double>();
    table.cells[std::stoll(key)] = r;
  }
}

}  // namespace trajcl
