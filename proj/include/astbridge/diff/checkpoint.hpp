#pragma once

// Binary parameter checkpoint:
//   "GMNCKPT1"
//   repeated until EOF:
//     u32 name length, name bytes, u32 rank, u64 extents[rank],
//     float32 payload (little-endian, product(extents) values)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "astbridge/diff/adam.hpp"
#include "astbridge/error.hpp"

namespace astbridge::diff {

inline constexpr std::string_view kCheckpointMagic = "GMNCKPT1";

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class U>
U get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw FormatError("checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return static_cast<U>(v);
}

inline void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32(std::string_view in, std::size_t& pos) {
  return std::bit_cast<float>(get_le<std::uint32_t>(in, pos));
}

}  // namespace detail

template <class Real>
std::string serialize_checkpoint(const ParameterSet<Real>& params) {
  std::string out(kCheckpointMagic);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& name = params.names[p];
    const auto& t = params.tensors[p];
    detail::put_le(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_le(out, static_cast<std::uint64_t>(e));
    for (Real v : t.data()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

template <class Real>
ParameterSet<Real> deserialize_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  ParameterSet<Real> params;
  std::size_t pos = kCheckpointMagic.size();
  while (pos < bytes.size()) {
    const auto len = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw FormatError("checkpoint truncated in a name");
    std::string name(bytes.substr(pos, len));
    pos += len;
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    std::vector<std::size_t> shape;
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(bytes, pos)));
      count *= shape.back();
    }
    std::vector<Real> data(count);
    for (auto& v : data) v = static_cast<Real>(detail::get_f32(bytes, pos));
    params.add(std::move(name), Tensor<Real>(std::move(shape), std::move(data)));
  }
  return params;
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<Real>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class Real>
ParameterSet<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint<Real>(ss.str());
}

}  // namespace astbridge::diff
