#include "milpf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "milpf/error.hpp"

namespace milpf {

namespace {

constexpr char kMagic[8] = {'M', 'I', 'L', 'P', 'F', '0', '0', '1'};
constexpr std::size_t kHeaderBytes = 8 + 6 * 4;

template <class U>
U byteswap_if_big(U u) {
  if constexpr (std::endian::native == std::endian::little) return u;
  U r = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) r = (r << 8) | ((u >> (8 * i)) & 0xffu);
  return r;
}

void put_u32(std::vector<char>& out, std::uint32_t v) {
  v = byteswap_if_big(v);
  const char* b = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), b, b + 4);
}

void put_f64(std::vector<char>& out, double d) {
  std::uint64_t u = byteswap_if_big(std::bit_cast<std::uint64_t>(d));
  const char* b = reinterpret_cast<const char*>(&u);
  out.insert(out.end(), b, b + 8);
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return byteswap_if_big(v);
}

double get_f64(const char* p) {
  std::uint64_t u;
  std::memcpy(&u, p, 8);
  return std::bit_cast<double>(byteswap_if_big(u));
}

}  // namespace

void save_checkpoint(const HeadParams& p, const std::filesystem::path& path) {
  std::vector<char> buf(kMagic, kMagic + 8);
  for (std::size_t v : {p.d, p.h1, p.h2}) put_u32(buf, static_cast<std::uint32_t>(v));
  put_u32(buf, static_cast<std::uint32_t>(p.global.kind));
  put_u32(buf, static_cast<std::uint32_t>(p.local.kind));
  put_u32(buf, static_cast<std::uint32_t>(p.mode));
  p.for_each_tensor([&](const char*, std::span<const double> t) {
    for (double x : t) put_f64(buf, x);
  });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

HeadParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw DataError(path.string() + ": not a MILPF001 checkpoint (bad magic)");
  const char* h = buf.data() + 8;
  const auto kind = [](std::uint32_t k) {
    if (k > 3) throw DataError("checkpoint: invalid aggregator code " + std::to_string(k));
    return static_cast<AggKind>(k);
  };
  AggConfig cfg{kind(get_u32(h + 12)), kind(get_u32(h + 16)), get_u32(h + 4), get_u32(h + 8)};
  const auto mode = get_u32(h + 20);
  if (mode > 2) throw DataError("checkpoint: invalid inference mode " + std::to_string(mode));
  HeadParams p;
  try {
    p = HeadParams::zeros(cfg, get_u32(h));
  } catch (const ConfigError& e) {
    throw DataError("checkpoint: " + std::string(e.what()));
  }
  p.mode = static_cast<InferenceMode>(mode);
  const std::size_t expected = kHeaderBytes + 8 * p.count();
  if (buf.size() != expected)
    throw DataError("checkpoint " + path.string() + ": expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(buf.size()));
  const char* cur = buf.data() + kHeaderBytes;
  p.for_each_tensor([&](const char*, std::span<double> t) {
    for (double& x : t) {
      x = get_f64(cur);
      cur += 8;
    }
  });
  return p;
}

}  // namespace milpf
