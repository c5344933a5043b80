#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fdb/tensor.hpp"

namespace fdb {

// Self-describing tensor container used for checkpoints and loss-network
// weights:
//
//   bytes 0..7   magic "FDBARC01"
//   bytes 8..15  little-endian uint64 header length L
//   next L bytes UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}
//   remainder    float32 little-endian payload; offsets count floats
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  bool has(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;
  void put(std::string name, Tensor<float> value);
};

void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

}  // namespace fdb
