#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cull {

/// Incremental 64-bit FNV-1a. Used for content keys and tamper checks, not security.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes);
  Fnv1a& update(std::uint64_t value);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace cull
