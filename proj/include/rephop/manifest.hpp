#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rephop/common.hpp"
#include "rephop/rng.hpp"

namespace rephop {

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline std::string file_hash_hex(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return "missing";
  std::stringstream ss;
  ss << is.rdbuf();
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(ss.str())));
  return buf;
}

// Reproducibility record written next to every run's outputs: started before
// the work, finalized with the end timestamp and status afterwards.
class RunManifest {
 public:
  RunManifest(std::string subcommand, std::vector<std::string> args,
              std::uint64_t seed, std::string path)
      : path_(std::move(path)) {
    doc_["version"] = kVersionTag;
    doc_["subcommand"] = std::move(subcommand);
    doc_["arguments"] = std::move(args);
    doc_["seed"] = seed;
    doc_["started"] = iso_timestamp();
    doc_["status"] = "running";
    doc_["input_hashes"] = nlohmann::json::object();
  }

  void add_input(const std::string& label, const std::string& file_path) {
    doc_["input_hashes"][label] = file_hash_hex(file_path);
  }

  void write() const {
    std::filesystem::path p(path_);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path_);
    if (!os) throw DataError("cannot write run manifest: " + path_);
    os << doc_.dump(2) << "\n";
  }

  void finalize(bool ok) {
    doc_["finished"] = iso_timestamp();
    doc_["status"] = ok ? "ok" : "failed";
    write();
  }

 private:
  std::string path_;
  nlohmann::json doc_;
};

}  // namespace rephop
