#pragma once

// Checkpoint container:
//   "AUXG" | u32 version | u32 count | count x entry
//   entry = u32 name_len | name (UTF-8) | u32 rank | rank x u64 extent | f32 payload
// All integers and floats are little-endian. Optimizer accumulators are
// stored next to their parameter under "<name>.acc".

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxgen/tensor.hpp"

namespace auxgen {

inline constexpr char kCheckpointMagic[4] = {'A', 'U', 'X', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Writes to a temporary sibling and renames, so a crash never leaves a torn file.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name);

}  // namespace auxgen
