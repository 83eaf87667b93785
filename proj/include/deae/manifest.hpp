#pragma once

#include <cstdio>
#include <ctime>
#include <string>
#include <utility>
#include <vector>

#include "deae/json_util.hpp"
#include "deae/rng.hpp"
#include "deae/version.hpp"

namespace deae {

inline std::string iso8601_utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string file_digest_hex(const std::string& path) {
  const std::string content = read_file(path);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(content)));
  return buf;
}

// Record of one CLI run: written with status "running" before any work starts
// (atomically, so a crash never leaves a half-written manifest) and finalized
// after the run completes or fails.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  Json config = Json::object();
  std::uint64_t seed = 0;
  std::string status = "running";
  std::string error;
  std::string started_at;
  std::string finished_at;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, content digest
  std::vector<std::string> outputs;

  void add_input(const std::string& path) { inputs.emplace_back(path, file_digest_hex(path)); }
  void record_output(const std::string& path) { outputs.push_back(path); }

  Json to_json() const {
    Json j;
    j["version"] = kVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    Json ins = Json::array();
    for (const auto& [path, digest] : inputs)
      ins.push_back(Json{{"path", path}, {"digest", digest}});
    j["inputs"] = std::move(ins);
    j["outputs"] = outputs;
    return j;
  }

  // Atomic write: the file either holds the previous manifest or the new one.
  void write(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    write_file(tmp, to_json().dump(2) + "\n");
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw ComputeError("cannot move manifest into place: " + path);
  }
};

}  // namespace deae
