#include "rrwave/manifest.hpp"

#include <ctime>

#include "json.hpp"
#include "rrwave/binio.hpp"
#include "rrwave/crc32.hpp"

namespace rrwave {

using nlohmann::json;

uint32_t crc32_of_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return Crc32::of(bytes.data(), bytes.size());
}

void RunManifest::add_input(const std::string& path) {
  input_digests.emplace_back(path, crc32_of_file(path));
}

std::string RunManifest::to_json() const {
  json digests = json::object();
  for (const auto& [path, crc] : input_digests) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "%08x", crc);
    digests[path] = hex;
  }
  const json j = {{"subcommand", subcommand},
                  {"tool_version", tool_version},
                  {"format_versions", {{"checkpoint", 1}, {"windows", 1}, {"report", 1}}},
                  {"seed", seed},
                  {"config", config_json.empty() ? json::object() : json::parse(config_json)},
                  {"input_digests", digests},
                  {"timestamp", timestamp}};
  return j.dump(2);
}

void RunManifest::write(const std::string& path) {
  if (timestamp.empty()) {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    timestamp = buf;
  }
  write_file_atomic(path, to_json());
}

}  // namespace rrwave
