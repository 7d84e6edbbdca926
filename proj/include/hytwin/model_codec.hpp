#pragma once

#include <string>
#include <string_view>

#include "hytwin/seq2seq.hpp"

namespace hytwin::surrogate {

inline constexpr int model_format_version = 1;

/// JSON model document. Matrices are flattened row-major per gate and
/// doubles use shortest round-trip decimals, so load(save(m)) == m.
[[nodiscard]] std::string save_model(const Seq2SeqModel& model);

/// Throws MODEL_MALFORMED on syntax, version, shape or checksum failures.
[[nodiscard]] Seq2SeqModel load_model(std::string_view text);

void save_model_file(const std::string& path, const Seq2SeqModel& model);
[[nodiscard]] Seq2SeqModel load_model_file(const std::string& path);

/// FNV-1a 64 over the raw bytes of every parameter, in Seq2SeqParams order.
[[nodiscard]] std::uint64_t parameter_checksum(const Seq2SeqParams& params);

}  // namespace hytwin::surrogate
