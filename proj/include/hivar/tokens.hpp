#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hivar/schedule.hpp"

namespace hivar {

// Per-level index grids plus the schedule that shaped them. The unit
// exchanged between tokenizer, transformer, and decoder.
struct TokenSequence {
  ScaleSchedule schedule;
  std::vector<std::vector<std::int32_t>> levels;  // level l: rho_l * rho_l indices, row-major

  std::int64_t total() const;
  std::vector<std::int32_t> flat() const;

  // Indices of the contiguous position range owned by 1-based level l within
  // the flattened sequence.
  std::pair<std::int64_t, std::int64_t> level_span(std::int64_t l) const;

  void validate(std::int64_t vocab) const;

  bool operator==(const TokenSequence& o) const {
    return schedule == o.schedule && levels == o.levels;
  }
};

// Token container, format "HVTK": magic, u32 version, u32 L, u32 rho[L],
// u32 N, f64 scales[N], u32 boundaries[N], LEB128 varint index stream in
// level order (row-major within a level). Little-endian, lossless.
std::vector<std::uint8_t> serialize_tokens(const TokenSequence& tokens);
TokenSequence deserialize_tokens(const std::vector<std::uint8_t>& bytes);

void write_tokens(const std::string& path, const TokenSequence& tokens);
TokenSequence read_tokens(const std::string& path);

}  // namespace hivar
