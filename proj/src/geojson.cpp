#include "trajcl/geojson.hpp"

#include <nlohmann/json.hpp>

#include "trajcl/fsio.hpp"
#include "trajcl/trainer.hpp"

namespace trajcl {

using json = nlohmann::json;

std::string alignment_geojson(const Checkpoint& ck,
                              const std::vector<TrajInstance>& instances) {
  const auto alignments = alignment_with_checkpoint(ck, instances);
  json features = json::array();
  for (size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const auto& pa = alignments[i];
    for (size_t p = 0; p < inst.points.size(); ++p) {
      json f;
      f["type"] = "Feature";
      f["geometry"] = {{"type", "Point"},
                       {"coordinates", {inst.points[p].lon, inst.points[p].lat}}};
      f["properties"] = {{"traj_id", inst.id},
                         {"label", inst.label},
                         {"prototype_id", pa.proto_ids[p]},
                         {"m_alpha", pa.mask_values[p]}};
      features.push_back(std::move(f));
    }
  }
  json fc;
  fc["type"] = "FeatureCollection";
  fc["features"] = std::move(features);
  return fc.dump();
}

void write_alignment_geojson(const std::string& path, const Checkpoint& ck,
                             const std::vector<TrajInstance>& instances) {
  atomic_write_file(path, alignment_geojson(ck, instances));
}

}  // namespace trajcl
