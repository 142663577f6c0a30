#include "auxgen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace auxgen {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw CheckpointError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic, 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
      if (shape_size(a.shape) != a.values.size()) {
        throw CheckpointError("array " + a.name + " has inconsistent shape");
      }
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
      os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
      for (auto e : a.shape) put<std::uint64_t>(os, e);
      os.write(reinterpret_cast<const char*>(a.values.data()),
               static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    }
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + " is not an AUXG checkpoint");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is);
  std::vector<NamedArray> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto len = get<std::uint32_t>(is);
    a.name.resize(len);
    if (!is.read(a.name.data(), len)) throw CheckpointError("truncated checkpoint name");
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(get<std::uint64_t>(is));
    a.values.resize(shape_size(a.shape));
    if (!is.read(reinterpret_cast<char*>(a.values.data()),
                 static_cast<std::streamsize>(a.values.size() * sizeof(float)))) {
      throw CheckpointError("truncated payload for " + a.name);
    }
    out.push_back(std::move(a));
  }
  return out;
}

const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

}  // namespace auxgen
