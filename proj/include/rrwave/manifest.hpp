#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace rrwave {

inline constexpr const char* kToolVersion = "1.0.0";

// Reproducibility sidecar emitted next to every output artifact: the fully
// resolved configuration, input digests and seed are enough to replay the
// run bit-identically.
struct RunManifest {
  std::string subcommand;
  std::string config_json;  // resolved flags, defaults materialized
  std::vector<std::pair<std::string, uint32_t>> input_digests;
  uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string timestamp;  // ISO-8601 UTC, filled by write()

  void add_input(const std::string& path);
  std::string to_json() const;
  void write(const std::string& path);
};

uint32_t crc32_of_file(const std::string& path);

}  // namespace rrwave
