#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rcqa/numerics.hpp"

namespace rcqa {

// Self-describing model container.
//
// Layout:
//   bytes 0..7    magic "RCQACKPT"
//   bytes 8..15   header length H, unsigned 64-bit little-endian
//   next H bytes  UTF-8 JSON header:
//                   {"format": "rcqa-checkpoint", "version": 1,
//                    "kind": str, "config": {...},
//                    "arrays": [{"name": str, "rows": int, "cols": int,
//                                "offset": int}, ...]}
//                 offsets count doubles from the start of the payload
//   remainder     payload: IEEE-754 binary64 values, little-endian,
//                 arrays back to back in header order
//
// Round trips are bit-exact.
struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, Dense2>> arrays;

  const Dense2& array(std::string_view name) const;
  bool has_array(std::string_view name) const;
};

inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Whole-file helpers shared by the checkpoint and report writers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace rcqa
