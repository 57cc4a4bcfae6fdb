#include "s3mot/weights.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "s3mot/errors.hpp"

namespace s3mot {

namespace {

constexpr char kMagic[4] = {'S', '3', 'M', 'W'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoFailure("weight file truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoFailure("weight file truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

const Tensor& WeightMap::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IoFailure("weight entry missing: " + name);
  return it->second;
}

void WeightMap::merge(const WeightMap& other) {
  for (const auto& [name, t] : other.entries_) entries_[name] = t;
}

void WeightMap::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoFailure("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i)
      write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    for (std::size_t i = 0; i < t.size(); ++i) write_f64(os, t.at(i));
  }
  if (!os) throw IoFailure("write failed: " + path);
}

WeightMap WeightMap::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot open for reading: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoFailure("bad magic in: " + path);
  const std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw IoFailure("unsupported weight file version " + std::to_string(version));
  const std::uint32_t count = read_u32(is);
  WeightMap out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoFailure("weight file truncated");
    const std::uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = read_u32(is);
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = read_f64(is);
    out.put(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace s3mot
