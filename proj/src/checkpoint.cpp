#include "mis/checkpoint.hpp"

#include <cstring>

#include "mis/io.hpp"
#include "mis/rng.hpp"

namespace mis {

namespace {

template <typename T>
constexpr std::uint32_t dtype_code() {
  return sizeof(T) == 4 ? 0u : 1u;
}

std::uint64_t checksum(const std::uint8_t* data, std::size_t n) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(data), n));
}

struct Header {
  std::uint32_t dtype;
  std::string config;
  std::uint64_t step;
};

std::vector<std::uint8_t> read_verified(const std::filesystem::path& path) {
  auto bytes = read_bytes(path);
  if (bytes.size() < 8 + 8 || std::memcmp(bytes.data(), "MISC", 4) != 0)
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version) +
                      " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != checksum(bytes.data(), bytes.size() - 8))
    throw FormatError(path.string() + ": checkpoint checksum mismatch");
  bytes.resize(bytes.size() - 8);
  return bytes;
}

Header read_header(ByteReader& r) {
  r.seek(8);
  Header h;
  h.dtype = r.u32();
  h.config = r.str();
  h.step = r.u64();
  return h;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& store, const std::string& config) {
  ByteWriter data;
  ByteWriter w;
  w.raw("MISC", 4);
  w.u32(kCheckpointVersion);
  w.u32(dtype_code<T>());
  w.str(config);
  w.u64(store.step());
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, tensor] : store.params()) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u64(data.size());
    auto it = store.moments().find(name);
    const bool has = it != store.moments().end();
    w.u32(has ? 1 : 0);
    data.raw(tensor.data().data(), tensor.numel() * sizeof(T));
    if (has) {
      data.raw(it->second.first.data(), tensor.numel() * sizeof(T));
      data.raw(it->second.second.data(), tensor.numel() * sizeof(T));
    }
  }
  w.u64(data.size());
  w.raw(data.bytes().data(), data.size());
  w.u64(checksum(w.bytes().data(), w.size()));
  write_bytes(path, w.bytes());
}

template <typename T>
std::string load_checkpoint(const std::filesystem::path& path, ParameterStore<T>& store) {
  const auto bytes = read_verified(path);
  const std::string what = path.string();
  ByteReader r(bytes, what);
  const Header h = read_header(r);
  if (h.dtype != dtype_code<T>())
    throw FormatError(what + ": checkpoint dtype " + std::to_string(h.dtype) + " does not match the model");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
    bool moments;
  };
  const auto count = r.u32();
  if (count != store.size())
    throw FormatError(what + ": checkpoint has " + std::to_string(count) + " parameters, model has " +
                      std::to_string(store.size()));
  std::vector<Entry> table(count);
  for (auto& e : table) {
    e.name = r.str();
    e.shape.resize(r.u32());
    for (auto& d : e.shape) d = r.u32();
    e.offset = r.u64();
    e.moments = r.u32() != 0;
    if (!store.contains(e.name)) throw FormatError(what + ": unknown parameter " + e.name);
    if (store.get(e.name).shape() != e.shape)
      throw FormatError(what + ": parameter " + e.name + " has shape " + to_string(e.shape) + ", model expects " +
                        to_string(store.get(e.name).shape()));
  }
  const auto data_size = r.u64();
  const std::size_t base = r.offset();
  if (bytes.size() - base != data_size) throw FormatError(what + ": checkpoint data section has the wrong size");

  std::map<std::string, typename ParameterStore<T>::Moments> moments;
  for (const auto& e : table) {
    const std::size_t n = numel(e.shape);
    const std::size_t need = n * sizeof(T) * (e.moments ? 3 : 1);
    if (e.offset > data_size || data_size - e.offset < need)
      throw FormatError(what + ": parameter " + e.name + " lies outside the data section");
    r.seek(base + e.offset);
    r.raw(store.get(e.name).mutable_data().data(), n * sizeof(T));
    if (e.moments) {
      auto& m = moments[e.name];
      m.first.resize(n);
      m.second.resize(n);
      r.raw(m.first.data(), n * sizeof(T));
      r.raw(m.second.data(), n * sizeof(T));
    }
  }
  store.moments() = std::move(moments);
  store.set_step(h.step);
  return h.config;
}

std::string read_checkpoint_config(const std::filesystem::path& path) {
  const auto bytes = read_verified(path);
  ByteReader r(bytes, path.string());
  return read_header(r).config;
}

template void save_checkpoint(const std::filesystem::path&, const ParameterStore<float>&, const std::string&);
template void save_checkpoint(const std::filesystem::path&, const ParameterStore<double>&, const std::string&);
template std::string load_checkpoint(const std::filesystem::path&, ParameterStore<float>&);
template std::string load_checkpoint(const std::filesystem::path&, ParameterStore<double>&);

}  // namespace mis
