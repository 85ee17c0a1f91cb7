#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vvad/error.hpp"

namespace vvad {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename Json>
void write_jsonl(const std::string& path, const std::vector<Json>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  for (const auto& r : rows) os << r.dump() << '\n';
}

inline json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

template <typename Json>
void write_json(const std::string& path, const Json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << j.dump(2) << '\n';
}

inline void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms
     << 'Z';
  return os.str();
}

/// Line-oriented run log with ISO-8601 UTC timestamps.
class RunLog {
public:
  RunLog() = default;
  explicit RunLog(const std::string& path, bool echo = false) : echo_(echo) {
    ensure_parent_dir(path);
    os_.open(path, std::ios::app);
    if (!os_) throw IoError("cannot open log " + path);
  }

  void info(const std::string& msg) { write("INFO", msg); }
  void error(const std::string& msg) { write("ERROR", msg); }

private:
  void write(const char* level, const std::string& msg) {
    std::lock_guard lock(mu_);
    const std::string line = iso8601_now() + " " + level + " " + msg + "\n";
    if (os_.is_open()) os_ << line << std::flush;
    if (echo_) std::fputs(line.c_str(), stderr);
  }

  std::ofstream os_;
  bool echo_ = false;
  std::mutex mu_;
};

}  // namespace vvad
