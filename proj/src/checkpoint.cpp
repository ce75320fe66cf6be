#include "trajcl/checkpoint.hpp"

#include "trajcl/fsio.hpp"

namespace trajcl {

void Checkpoint::save(const std::string& path) const { atomic_write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace trajcl
