#pragma once

// Single-file model archive:
//
//   bytes 0-7    magic "VVADCKPT"
//   bytes 8-11   uint32 format version (1)
//   bytes 12-15  uint32 reserved (0)
//   bytes 16-23  uint64 header length N
//   N bytes      JSON header: {"arch", "model_config", "train_config",
//                "history", "seed", "tensors": [{"name", "rows", "cols",
//                "dtype", "offset"}], ...}
//   rest         tensor payload, column-major, little endian; offsets are
//                relative to the payload start
//
// Backbone weight files use the same layout with only "tensors" required.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vvad/error.hpp"
#include "vvad/io.hpp"
#include "vvad/nn.hpp"

namespace vvad {

inline constexpr char kCheckpointMagic[8] = {'V', 'V', 'A', 'D', 'C', 'K', 'P', 'T'};

struct Archive {
  ordered_json header;
  std::map<std::string, nn::Mat<double>> tensors;
};

template <typename T>
void write_archive(const std::string& path, ordered_json header,
                   const std::vector<nn::Tensor<T>*>& tensors) {
  const char* dtype = sizeof(T) == 4 ? "float32" : "float64";
  ordered_json table = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto* t : tensors) {
    table.push_back({{"name", t->name},
                     {"rows", t->value.rows()},
                     {"cols", t->value.cols()},
                     {"dtype", dtype},
                     {"offset", offset}});
    offset += static_cast<std::uint64_t>(t->value.size()) * sizeof(T);
  }
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  const std::uint32_t version = 1, reserved = 0;
  const std::uint64_t len = text.size();
  os.write(kCheckpointMagic, 8);
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&reserved), 4);
  os.write(reinterpret_cast<const char*>(&len), 8);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* t : tensors)
    os.write(reinterpret_cast<const char*>(t->value.data()),
             static_cast<std::streamsize>(t->value.size() * sizeof(T)));
  if (!os) throw IoError("short write to " + path);
}

inline Archive read_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[8];
  std::uint32_t version = 0, reserved = 0;
  std::uint64_t len = 0;
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError(path + ": not a vvad checkpoint");
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&reserved), 4);
  is.read(reinterpret_cast<char*>(&len), 8);
  if (!is || version != 1) throw FormatError(path + ": unsupported checkpoint version");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError(path + ": short header");

  Archive a;
  try {
    a.header = ordered_json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  const std::streamoff payload = is.tellg();
  for (const auto& entry : a.header.at("tensors")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto dtype = entry.at("dtype").get<std::string>();
    is.seekg(payload + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    nn::Mat<double> m(rows, cols);
    if (dtype == "float32") {
      std::vector<float> buf(static_cast<std::size_t>(rows * cols));
      is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
      for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = buf[i];
    } else if (dtype == "float64") {
      is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
    } else {
      throw FormatError(path + ": unknown dtype " + dtype);
    }
    if (!is) throw FormatError(path + ": truncated tensor " + entry.at("name").get<std::string>());
    a.tensors[entry.at("name").get<std::string>()] = std::move(m);
  }
  return a;
}

/// Copies archive tensors into matching model tensors. Every listed model
/// tensor must be present with the same shape.
template <typename T>
void assign_tensors(const Archive& a, const std::vector<nn::Tensor<T>*>& tensors,
                    const std::string& what) {
  for (auto* t : tensors) {
    auto it = a.tensors.find(t->name);
    if (it == a.tensors.end()) throw FormatError(what + ": missing tensor " + t->name);
    if (it->second.rows() != t->value.rows() || it->second.cols() != t->value.cols())
      throw ShapeMismatch(what + ": tensor " + t->name + " has the wrong shape");
    t->value = it->second.template cast<T>();
  }
}

}  // namespace vvad
