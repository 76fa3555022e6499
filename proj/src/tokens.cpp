#include "hivar/tokens.hpp"

#include "hivar/binio.hpp"

namespace hivar {

namespace {
constexpr char kMagic[4] = {'H', 'V', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::int64_t TokenSequence::total() const {
  std::int64_t t = 0;
  for (const auto& l : levels) t += static_cast<std::int64_t>(l.size());
  return t;
}

std::vector<std::int32_t> TokenSequence::flat() const {
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(total()));
  for (const auto& l : levels) out.insert(out.end(), l.begin(), l.end());
  return out;
}

std::pair<std::int64_t, std::int64_t> TokenSequence::level_span(std::int64_t l) const {
  std::int64_t begin = 0;
  for (std::int64_t i = 0; i + 1 < l; ++i) begin += static_cast<std::int64_t>(levels[i].size());
  return {begin, begin + static_cast<std::int64_t>(levels[l - 1].size())};
}

void TokenSequence::validate(std::int64_t vocab) const {
  if (static_cast<std::int64_t>(levels.size()) != schedule.levels())
    throw Error("token sequence: " + std::to_string(levels.size()) + " level grids for " +
                std::to_string(schedule.levels()) + " schedule levels");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::int64_t rho = schedule.resolutions[i];
    if (static_cast<std::int64_t>(levels[i].size()) != rho * rho)
      throw Error("token sequence: level " + std::to_string(i + 1) + " grid size mismatch");
    for (auto idx : levels[i])
      if (idx < 0 || idx >= vocab)
        throw Error("token sequence: index " + std::to_string(idx) + " out of vocabulary " +
                    std::to_string(vocab));
  }
}

std::vector<std::uint8_t> serialize_tokens(const TokenSequence& tokens) {
  ByteWriter w;
  w.write_magic(kMagic);
  w.write_u32(kVersion);
  w.write_u32(static_cast<std::uint32_t>(tokens.schedule.levels()));
  for (auto r : tokens.schedule.resolutions) w.write_u32(static_cast<std::uint32_t>(r));
  w.write_u32(static_cast<std::uint32_t>(tokens.schedule.num_scales()));
  for (double s : tokens.schedule.scales) w.write_f64(s);
  for (auto b : tokens.schedule.boundaries) w.write_u32(static_cast<std::uint32_t>(b));
  for (const auto& level : tokens.levels)
    for (auto idx : level) w.write_varint32(static_cast<std::uint32_t>(idx));
  return w.bytes();
}

TokenSequence deserialize_tokens(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic(kMagic);
  std::uint32_t version = r.read_u32();
  if (version != kVersion)
    throw ParseError("unsupported HVTK version " + std::to_string(version), r.pos() - 4);
  std::uint32_t levels = r.read_u32();
  if (levels == 0 || levels > 64) throw ParseError("implausible level count", r.pos() - 4);
  std::vector<std::int64_t> rho(levels);
  for (auto& v : rho) v = r.read_u32();
  std::uint32_t n = r.read_u32();
  if (n == 0 || n > levels) throw ParseError("implausible scale count", r.pos() - 4);
  std::vector<double> scales(n);
  for (auto& v : scales) v = r.read_f64();
  std::vector<std::int64_t> stored_bounds(n);
  for (auto& v : stored_bounds) v = r.read_u32();

  TokenSequence out;
  out.schedule = ScaleSchedule::make(rho, scales);
  if (out.schedule.boundaries != stored_bounds)
    throw ParseError("stored partition boundaries disagree with the schedule", r.pos());
  out.levels.resize(levels);
  for (std::uint32_t l = 0; l < levels; ++l) {
    std::int64_t count = rho[l] * rho[l];
    out.levels[l].resize(static_cast<std::size_t>(count));
    for (auto& idx : out.levels[l]) idx = static_cast<std::int32_t>(r.read_varint32());
  }
  if (!r.at_end()) throw ParseError("trailing bytes after token stream", r.pos());
  return out;
}

void write_tokens(const std::string& path, const TokenSequence& tokens) {
  write_file_bytes(path, serialize_tokens(tokens));
}

TokenSequence read_tokens(const std::string& path) {
  return deserialize_tokens(read_file_bytes(path));
}

}  // namespace hivar
