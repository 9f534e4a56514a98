#include "spdconv/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace spdconv {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw DataError("truncated checkpoint: " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void put_f32(std::ofstream& f, const float* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    unsigned char b[4] = {static_cast<unsigned char>(bits),
                          static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16),
                          static_cast<unsigned char>(bits >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointTensor>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(f, static_cast<std::uint32_t>(t.name.size()));
    f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.dims.size()));
    std::size_t numel = 1;
    for (auto d : t.dims) {
      put_u32(f, d);
      numel *= d;
    }
    if (numel != t.data.size())
      throw DataError("checkpoint tensor '" + t.name +
                      "': payload does not match dims");
    put_f32(f, t.data.data(), t.data.size());
  }
  if (!f) throw DataError("write failure on checkpoint: " + path);
}

std::vector<CheckpointTensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("bad checkpoint magic (not an SPDC file): " + path);
  std::uint32_t version = get_u32(f, path);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + ": " + path);
  std::uint32_t count = get_u32(f, path);
  std::vector<CheckpointTensor> tensors(count);
  for (auto& t : tensors) {
    std::uint32_t name_len = get_u32(f, path);
    t.name.resize(name_len);
    f.read(t.name.data(), name_len);
    std::uint32_t rank = get_u32(f, path);
    t.dims.resize(rank);
    std::size_t numel = 1;
    for (auto& d : t.dims) {
      d = get_u32(f, path);
      numel *= d;
    }
    t.data.resize(numel);
    for (auto& v : t.data) {
      std::uint32_t bits = get_u32(f, path);
      std::memcpy(&v, &bits, 4);
    }
  }
  return tensors;
}

std::vector<CheckpointTensor> snapshot_state(CompiledNet<float>& net) {
  std::vector<CheckpointTensor> out;
  for (const auto& st : net.named_state()) {
    CheckpointTensor t;
    t.name = st.name;
    for (int d : st.logical_dims) t.dims.push_back(std::uint32_t(d));
    t.data = st.tensor->values();
    out.push_back(std::move(t));
  }
  return out;
}

void restore_state(CompiledNet<float>& net,
                   const std::vector<CheckpointTensor>& tensors) {
  auto state = net.named_state();
  if (tensors.size() != state.size())
    throw DataError("checkpoint holds " + std::to_string(tensors.size()) +
                    " tensors but the graph expects " +
                    std::to_string(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& got = tensors[i];
    auto& want = state[i];
    if (got.name != want.name)
      throw DataError("checkpoint tensor " + std::to_string(i) + " is '" +
                      got.name + "' but the graph expects '" + want.name +
                      "'");
    std::vector<std::uint32_t> want_dims;
    for (int d : want.logical_dims) want_dims.push_back(std::uint32_t(d));
    if (got.dims != want_dims || got.data.size() != want.tensor->numel())
      throw DataError("checkpoint tensor '" + got.name +
                      "' has mismatched shape");
    want.tensor->values() = got.data;
  }
}

}  // namespace spdconv
