#ifndef AIPO_MANIFEST_HPP
#define AIPO_MANIFEST_HPP

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "aipo/common.hpp"

// Run manifests: every CLI command records its config snapshot, seed,
// input/output paths, FNV-1a 64 checksums of the artifacts it wrote, and
// wall-clock duration. The manifest is written atomically (tmp + rename),
// last, so its presence certifies a completed run.

namespace aipo {

inline std::uint64_t checksum_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot checksum: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  return h;
}

inline std::string checksum_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

struct RunManifest {
  std::string command;
  nlohmann::json config_snapshot;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> checksums;  // output path -> fnv1a64 hex
  double duration_seconds = 0.0;

  void add_output(const std::string& path) {
    outputs.push_back(path);
    checksums[path] = checksum_hex(checksum_file(path));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config_snapshot;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["checksums"] = checksums;
    j["duration_seconds"] = duration_seconds;
    return j;
  }
};

inline void write_manifest(const std::string& path, const RunManifest& m) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + tmp);
    out << m.to_json().dump(2) << '\n';
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace aipo

#endif  // AIPO_MANIFEST_HPP
