#pragma once

#include <string>
#include <vector>

#include "trajcl/checkpoint.hpp"
#include "trajcl/trajdata.hpp"

namespace trajcl {

/// GeoJSON FeatureCollection with one Point feature per trajectory point.
/// Coordinates are [lon, lat]; properties carry traj_id, label, the
/// eval-mode prototype id and the confounding-mask value.
std::string alignment_geojson(const Checkpoint& ck,
                              const std::vector<TrajInstance>& instances);

void write_alignment_geojson(const std::string& path, const Checkpoint& ck,
                             const std::vector<TrajInstance>& instances);

}  // namespace trajcl
