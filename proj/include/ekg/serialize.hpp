#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ekg/mapping.hpp"
#include "ekg/tensor.hpp"

namespace ekg {

// Tensor format "EKGT": magic, u8 dtype (0 = f32, 1 = f64), u8 rank,
// u64 extents, then raw little-endian values.
template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::string& path);

// Checkpoint format "EKGC": magic, u32-length config text (key=value
// lines, sorted), u32 section count, then (u32 name length, name, EKGT
// tensor) per section.
template <typename T>
void save_checkpoint(const std::string& path,
                     const std::map<std::string, std::string>& config,
                     const std::vector<ParamEntry<T>>& entries);

struct CheckpointHeader {
  std::map<std::string, std::string> config;
};

// Reads the config block only (cheap geometry check before a full load).
CheckpointHeader read_checkpoint_header(const std::string& path);

// Loads every section into the matching entry; missing, extra or
// shape-mismatched sections fail loudly.
template <typename T>
CheckpointHeader load_checkpoint(const std::string& path,
                                 std::vector<ParamEntry<T>>& entries);

}  // namespace ekg
