#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ihmm {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr std::uint32_t kSchemaVersion = 1;

// Provenance record written once per output directory as manifest.json.
struct RunManifest {
  std::string command;                 // argv joined with spaces
  std::string code_version = kCodeVersion;
  std::uint32_t schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  std::string config_digest = "0";     // fnv1a of the config file bytes
  std::string data_digest = "0";       // fnv1a of the data file bytes
  std::string started_at;              // ISO 8601 UTC
  std::string finished_at;
  std::vector<std::pair<std::string, std::uint64_t>> outputs;  // name, bytes
};

std::uint64_t fnv1a_file(const std::string& path);
std::string fnv1a_hex(std::uint64_t h);
std::string iso8601_now();

void write_manifest(const RunManifest& m, const std::string& out_dir);
RunManifest read_manifest(const std::string& out_dir);

// Records name + on-disk byte size for every named file, in the given order.
void inventory_outputs(RunManifest& m, const std::string& out_dir,
                       const std::vector<std::string>& names);

}  // namespace ihmm
