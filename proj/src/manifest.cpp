#include "ihmm/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "ihmm/errors.hpp"

namespace ihmm {

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_io("FileOpenFailed", "cannot read " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string fnv1a_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void inventory_outputs(RunManifest& m, const std::string& out_dir,
                       const std::vector<std::string>& names) {
  m.outputs.clear();
  for (const std::string& name : names) {
    const std::string path = out_dir + "/" + name;
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(path, ec);
    if (ec) throw_io("FileOpenFailed", "missing output " + path);
    m.outputs.emplace_back(name, static_cast<std::uint64_t>(bytes));
  }
}

void write_manifest(const RunManifest& m, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j;
  j["command"] = m.command;
  j["code_version"] = m.code_version;
  j["schema_version"] = m.schema_version;
  j["seed"] = m.seed;
  j["config_digest"] = m.config_digest;
  j["data_digest"] = m.data_digest;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["outputs"] = nlohmann::json::array();
  for (const auto& [name, bytes] : m.outputs) {
    j["outputs"].push_back({{"name", name}, {"bytes", bytes}});
  }
  const std::string path = out_dir + "/manifest.json";
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("FileOpenFailed", "cannot write " + path);
  os << j.dump(2) << '\n';
  if (!os) throw_io("FileWriteFailed", "short write to " + path);
}

RunManifest read_manifest(const std::string& out_dir) {
  const std::string path = out_dir + "/manifest.json";
  std::ifstream is(path);
  if (!is) throw_io("FileOpenFailed", "cannot read " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_io("ManifestParseFailed", std::string("bad manifest json: ") + e.what());
  }
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.schema_version = j.at("schema_version").get<std::uint32_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.data_digest = j.at("data_digest").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    for (const auto& o : j.at("outputs")) {
      m.outputs.emplace_back(o.at("name").get<std::string>(),
                             o.at("bytes").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw_io("ManifestParseFailed", std::string("missing manifest field: ") + e.what());
  }
  return m;
}

}  // namespace ihmm
