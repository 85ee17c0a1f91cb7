#pragma once

// Audio voice-activity decisions: segment types, coverage of a time interval,
// a built-in energy detector, and ingestion of externally computed segments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vvad/error.hpp"

namespace vvad {

struct AudioVadSegment {
  double start_s = 0.0;
  double end_s = 0.0;
  bool speech = false;
  bool operator==(const AudioVadSegment&) const = default;
};

struct AudioWindow {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Anything that turns a recording into speech segments. The energy detector
/// below is one; an external VAD read from a segment file is another.
using VadProvider = std::function<std::vector<AudioVadSegment>(std::span<const AudioWindow>)>;

struct EnergyVadConfig {
  double threshold_db = 12.0;
  int hangover_windows = 5;
  double window_s = 0.030;
  /// Upper bound on the noise-floor estimate, in dBFS. A recording that is
  /// loud throughout (10th percentile above this) is measured against it.
  double noise_floor_cap_db = -50.0;
};

inline void validate_segments(std::span<const AudioVadSegment> segments) {
  double prev_end = -1.0;
  for (const auto& s : segments) {
    if (!(s.start_s >= 0.0) || !(s.start_s < s.end_s))
      throw ValidationError("VAD segment must satisfy 0 <= start_s < end_s");
    if (s.start_s < prev_end) throw ValidationError("VAD segments must be sorted and disjoint");
    prev_end = s.end_s;
  }
}

/// Fraction of [start_s, end_s) covered by speech segments. Overlapping or
/// subdivided speech segments count once.
inline double coverage(std::span<const AudioVadSegment> segments, double start_s, double end_s) {
  if (!(start_s < end_s)) throw ValidationError("coverage needs start_s < end_s");
  std::vector<std::pair<double, double>> spans;
  for (const auto& s : segments) {
    if (!s.speech) continue;
    const double a = std::max(s.start_s, start_s);
    const double b = std::min(s.end_s, end_s);
    if (a < b) spans.emplace_back(a, b);
  }
  std::sort(spans.begin(), spans.end());
  double covered = 0.0, cur_a = 0.0, cur_b = -1.0;
  bool open = false;
  for (const auto& [a, b] : spans) {
    if (open && a <= cur_b) {
      cur_b = std::max(cur_b, b);
      continue;
    }
    if (open) covered += cur_b - cur_a;
    cur_a = a;
    cur_b = b;
    open = true;
  }
  if (open) covered += cur_b - cur_a;
  return std::clamp(covered / (end_s - start_s), 0.0, 1.0);
}

inline double rms_db(std::span<const double> samples) {
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  const double rms = std::sqrt(acc / static_cast<double>(std::max<std::size_t>(samples.size(), 1)));
  return 20.0 * std::log10(std::max(rms, 1e-10));  // -200 dB floor for digital silence
}

/// Collapses per-window speech flags into maximal same-state segments.
inline std::vector<AudioVadSegment> merge_windows(const std::vector<bool>& speech,
                                                  double window_s) {
  std::vector<AudioVadSegment> out;
  for (std::size_t i = 0; i < speech.size(); ++i) {
    const double a = static_cast<double>(i) * window_s;
    const double b = static_cast<double>(i + 1) * window_s;
    if (!out.empty() && out.back().speech == speech[i]) out.back().end_s = b;
    else out.push_back({a, b, speech[i]});
  }
  return out;
}

/// Energy-threshold detector. A window is speech when its RMS level exceeds the
/// recording's noise floor (10th-percentile window level, capped at
/// `noise_floor_cap_db`) by more than `threshold_db`; speech is held for
/// `hangover_windows` windows after the last loud one.
inline std::vector<AudioVadSegment> energy_vad(std::span<const AudioWindow> windows,
                                               double threshold_db, int hangover_windows,
                                               double noise_floor_cap_db = -50.0) {
  if (windows.empty()) throw EmptyAudio("no audio windows");
  const std::size_t len = windows.front().samples.size();
  const double rate = windows.front().sample_rate;
  if (len == 0 || !(rate > 0.0)) throw EmptyAudio("empty audio window");
  for (const auto& w : windows)
    if (w.samples.size() != len || w.sample_rate != rate)
      throw ValidationError("audio windows must be uniform in length and rate");
  if (hangover_windows < 0) throw ValidationError("hangover_windows must be >= 0");

  std::vector<double> level(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) level[i] = rms_db(windows[i].samples);

  std::vector<double> sorted = level;
  const std::size_t k = static_cast<std::size_t>(0.1 * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double floor_db = std::min(sorted[k], noise_floor_cap_db);

  std::vector<bool> speech(windows.size(), false);
  int hold = -1;  // windows of hangover left; -1 means no loud window seen yet
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (level[i] - floor_db > threshold_db) {
      speech[i] = true;
      hold = hangover_windows;
    } else if (hold > 0) {
      speech[i] = true;
      --hold;
    }
  }
  return merge_windows(speech, static_cast<double>(len) / rate);
}

inline std::vector<AudioVadSegment> energy_vad(std::span<const AudioWindow> windows,
                                               const EnergyVadConfig& cfg = {}) {
  return energy_vad(windows, cfg.threshold_db, cfg.hangover_windows, cfg.noise_floor_cap_db);
}

/// Splits a mono signal into consecutive windows of `window_s`; a trailing
/// partial window is dropped.
inline std::vector<AudioWindow> split_windows(std::span<const double> samples, double sample_rate,
                                              double window_s) {
  const auto len = static_cast<std::size_t>(std::lround(window_s * sample_rate));
  if (len == 0) throw ValidationError("window shorter than one sample");
  std::vector<AudioWindow> out;
  for (std::size_t off = 0; off + len <= samples.size(); off += len)
    out.push_back({std::vector<double>(samples.begin() + off, samples.begin() + off + len),
                   sample_rate});
  return out;
}

// ---------------------------------------------------------------------------
// PCM WAV

struct PcmAudio {
  std::vector<double> samples;  // mono, [-1, 1]
  double sample_rate = 0.0;
};

/// Reads an uncompressed PCM WAV (8/16/24/32-bit integer or 32-bit float);
/// channels are averaged to mono.
inline PcmAudio read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), {});
  auto u32 = [&](std::size_t o) {
    return static_cast<std::uint32_t>(buf[o]) | (static_cast<std::uint32_t>(buf[o + 1]) << 8) |
           (static_cast<std::uint32_t>(buf[o + 2]) << 16) |
           (static_cast<std::uint32_t>(buf[o + 3]) << 24);
  };
  auto u16 = [&](std::size_t o) {
    return static_cast<std::uint16_t>(buf[o] | (buf[o + 1] << 8));
  };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  for (std::size_t o = 12; o + 8 <= buf.size();) {
    const std::uint32_t size = u32(o + 4);
    if (std::memcmp(buf.data() + o, "fmt ", 4) == 0 && o + 24 <= buf.size()) {
      format = u16(o + 8);
      channels = u16(o + 10);
      rate = u32(o + 12);
      bits = u16(o + 22);
    } else if (std::memcmp(buf.data() + o, "data", 4) == 0) {
      data_off = o + 8;
      data_len = std::min<std::size_t>(size, buf.size() - data_off);
    }
    o += 8 + size + (size & 1u);
  }
  if (channels == 0 || rate == 0 || data_off == 0) throw FormatError(path + ": missing fmt/data");
  const bool is_float = format == 3 && bits == 32;
  if (format != 1 && !is_float) throw FormatError(path + ": only uncompressed PCM is supported");
  if (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32)
    throw FormatError(path + ": unsupported bit depth");

  const std::size_t bytes = bits / 8;
  const std::size_t frames = data_len / (bytes * channels);
  PcmAudio out;
  out.sample_rate = rate;
  out.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t o = data_off + (f * channels + c) * bytes;
      double v = 0.0;
      if (is_float) {
        float x;
        const std::uint32_t raw = u32(o);
        std::memcpy(&x, &raw, 4);
        v = x;
      } else if (bits == 8) {
        v = (static_cast<int>(buf[o]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(u16(o)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t x = buf[o] | (buf[o + 1] << 8) | (buf[o + 2] << 16);
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(u32(o)) / 2147483648.0;
      }
      acc += v;
    }
    out.samples[f] = acc / channels;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment files: JSON lines {"start_s":..,"end_s":..,"speech":..}. An optional
// "video_id" key scopes a line to one video.

inline nlohmann::ordered_json to_json(const AudioVadSegment& s) {
  nlohmann::ordered_json j;
  j["start_s"] = s.start_s;
  j["end_s"] = s.end_s;
  j["speech"] = s.speech;
  return j;
}

inline AudioVadSegment segment_from_json(const nlohmann::json& j) {
  try {
    return {j.at("start_s").get<double>(), j.at("end_s").get<double>(), j.at("speech").get<bool>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad VAD segment: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const EnergyVadConfig& c) {
  return {{"threshold_db", c.threshold_db},
          {"hangover_windows", c.hangover_windows},
          {"window_s", c.window_s},
          {"noise_floor_cap_db", c.noise_floor_cap_db}};
}

inline EnergyVadConfig energy_vad_config_from_json(const nlohmann::json& j, EnergyVadConfig c = {}) {
  c.threshold_db = j.value("threshold_db", c.threshold_db);
  c.hangover_windows = j.value("hangover_windows", c.hangover_windows);
  c.window_s = j.value("window_s", c.window_s);
  c.noise_floor_cap_db = j.value("noise_floor_cap_db", c.noise_floor_cap_db);
  if (!(c.window_s > 0.0)) throw ValidationError("window_s must be positive");
  if (c.hangover_windows < 0) throw ValidationError("hangover_windows must be >= 0");
  return c;
}

}  // namespace vvad
