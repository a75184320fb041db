#include "cnode/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace cnode::diffcore {

namespace {

constexpr char kMagic[6] = {'C', 'N', 'O', 'D', 'E', '\0'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw CheckpointError("checkpoint truncated");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_checkpoint(const std::string& path, const ParamVector& params,
                     std::uint64_t model_hash) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u16(out, kVersion);
  put_u64(out, model_hash);
  const auto parts = params.split();
  put_u32(out, static_cast<std::uint32_t>(parts.size()));
  for (const auto& [name, vals] : parts) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    put_u64(out, static_cast<std::uint64_t>(vals.size()));
  }
  for (const auto& [name, vals] : parts) {
    (void)name;
    for (Index i = 0; i < vals.size(); ++i) put_f64(out, vals[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("write failed for '" + path + "'");
}

ParamVector load_checkpoint(const std::string& path, std::uint64_t model_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};
  const std::string magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("bad magic in '" + path + "'");
  }
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t hash = r.u64();
  if (hash != model_hash) {
    throw CheckpointError("model hash mismatch in '" + path +
                          "': checkpoint was written for a different model");
  }
  const std::uint32_t nseg = r.u32();
  std::vector<std::pair<std::string, Index>> table;
  table.reserve(nseg);
  for (std::uint32_t i = 0; i < nseg; ++i) {
    const std::uint16_t len = r.u16();
    std::string name = r.bytes(len);
    table.emplace_back(std::move(name), static_cast<Index>(r.u64()));
  }
  std::vector<std::pair<std::string, Vec>> parts;
  parts.reserve(nseg);
  for (auto& [name, count] : table) {
    Vec v(count);
    for (Index i = 0; i < count; ++i) v[i] = r.f64();
    if (!v.allFinite()) {
      throw CheckpointError("non-finite values in segment '" + name + "'");
    }
    parts.emplace_back(std::move(name), std::move(v));
  }
  if (r.pos != buf.size()) throw CheckpointError("trailing bytes in '" + path + "'");
  return ParamVector::from_segments(parts);
}

}  // namespace cnode::diffcore
