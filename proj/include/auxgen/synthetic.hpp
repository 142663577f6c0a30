#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "auxgen/corpus.hpp"

namespace auxgen::synth {

enum class Kind {
  /// Short question-answer exchanges whose answers copy keywords from the
  /// context; every response is determined by its context.
  qa,
  /// Four fixed-shape utterances: an order marker followed by one word from each
  /// of three disjoint word classes, so both utterance and word order are
  /// recoverable from content.
  ordered,
  /// Contexts of 4-6 utterances where the answer copies a pet's name from an
  /// earlier, randomly placed utterance. Names come from a pool of 2000 and
  /// also appear as distractor friends, so most are rare as answers.
  copy,
};

std::string_view kind_name(Kind kind);
std::optional<Kind> parse_kind(std::string_view name);

/// `count` windowed instances, reproducible from `seed`.
std::vector<corpus::TextDialogue> generate(Kind kind, std::size_t count, std::uint64_t seed);

/// Writes {"context": [...], "response": "..."} lines.
void write_jsonl(const std::filesystem::path& path, const std::vector<corpus::TextDialogue>& data);

}  // namespace auxgen::synth
