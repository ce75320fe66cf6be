#pragma once

#include <string>
#include <vector>

#include "trajcl/trajdata.hpp"

namespace trajcl {

/// Line-delimited instance archive: one JSON record per instance with id,
/// label, points as [lon, lat, t] triplets and optional context rows.
/// Numbers round-trip bit-exactly (shortest-repr doubles, integer seconds).
std::string instances_to_jsonl(const std::vector<TrajInstance>& instances);
std::vector<TrajInstance> instances_from_jsonl(const std::string& text);
void write_instances(const std::string& path, const std::vector<TrajInstance>& instances);
std::vector<TrajInstance> read_instances(const std::string& path);

/// Raw trajectory CSV: header `traj_id,lon,lat,t,label`, one row per point,
/// points grouped by traj_id in file order.
std::vector<RawTrajectory> read_raw_csv(const std::string& path);
void write_raw_csv(const std::string& path, const std::vector<RawTrajectory>& raws);

/// Feature table CSV: header `row,col,<24 feature names>`.
FeatureTable read_feature_csv(const std::string& path, const Grid& grid);
void write_feature_csv(const std::string& path, const FeatureTable& table, const Grid& grid);

/// Grid bundle: grid geometry plus its feature table in one JSON document.
std::string grid_bundle_to_json(const Grid& grid, const FeatureTable& table);
void write_grid_bundle(const std::string& path, const Grid& grid, const FeatureTable& table);
void read_grid_bundle(const std::string& path, Grid& grid, FeatureTable& table);

}  // namespace trajcl
