#pragma once

#include <map>
#include <string>

#include "s3mot/tensor.hpp"

namespace s3mot {

// Flat little-endian weight container. Layout: magic "S3MW", version u32,
// count u32, then per entry: name-length u32, utf-8 name, rank u32,
// dims u32 x rank, f64 payload. Round-trips bit-exactly.
class WeightMap {
 public:
  static constexpr std::uint32_t kVersion = 1;

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Tensor& at(const std::string& name) const;
  void put(const std::string& name, Tensor t) { entries_[name] = std::move(t); }
  std::size_t size() const { return entries_.size(); }

  const std::map<std::string, Tensor>& entries() const { return entries_; }

  // Overwrites `other`'s entries into this map.
  void merge(const WeightMap& other);

  void save(const std::string& path) const;
  static WeightMap load(const std::string& path);

 private:
  std::map<std::string, Tensor> entries_;
};

}  // namespace s3mot
