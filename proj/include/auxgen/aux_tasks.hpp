#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "auxgen/model.hpp"

namespace auxgen {

enum class Task { wor = 0, uor = 1, mwr = 2, mur = 3 };
inline constexpr std::array<Task, 4> kAllTasks{Task::wor, Task::uor, Task::mwr, Task::mur};
std::string_view task_name(Task task);
/// Parses "wor", "uor", "mwr" or "mur"; nullopt otherwise.
std::optional<Task> parse_task(std::string_view name);

/// A context after corruption for one recovery task.
struct CorruptedContext {
  Task task = Task::wor;
  std::vector<std::vector<int>> utterances;
  /// Flattened over context tokens: original token at supervised positions, -1 elsewhere.
  std::vector<int> targets;
  /// Corrupted utterance for wor/mur; unset for mwr.
  std::optional<std::size_t> utterance;
  /// Encoder mask over the flattened context.
  AttentionMask mask;

  std::size_t supervised() const;
};

/// Shuffles one uniformly chosen utterance of length >= 2 with a non-identity
/// permutation. The mask is block-diagonal by utterance. nullopt when no
/// utterance qualifies.
std::optional<CorruptedContext> corrupt_word_order(const std::vector<std::vector<int>>& context,
                                                   std::uint64_t seed);

/// Replaces every token with [MASK] independently with probability `rate`,
/// forcing one uniformly chosen position when none was drawn. Zero mask.
std::optional<CorruptedContext> corrupt_masked_words(const std::vector<std::vector<int>>& context,
                                                     double rate, std::uint64_t seed);

/// Masks every token of one uniformly chosen utterance. nullopt for contexts
/// with fewer than two utterances.
std::optional<CorruptedContext> corrupt_masked_utterance(
    const std::vector<std::vector<int>>& context, std::uint64_t seed);

struct RecoveryStats {
  std::size_t instances = 0;
  std::size_t tokens = 0;
  std::size_t correct = 0;  // argmax hits at supervised positions
};

/// Mean NLL of softmax(W_s E) at the supervised positions of each instance,
/// then mean over instances. Undefined tensor when `items` is empty.
template <typename T>
Tensor<T> recovery_loss(Graph<T>& g, const GenerationModel<T>& model,
                        std::span<const CorruptedContext> items, RecoveryStats* stats = nullptr);

/// Word order recovery loss; every item must come from corrupt_word_order.
template <typename T>
Tensor<T> wor_loss(Graph<T>& g, const GenerationModel<T>& model,
                   std::span<const CorruptedContext> items, RecoveryStats* stats = nullptr);

/// Masked word / masked utterance recovery loss over [MASK] positions.
template <typename T>
Tensor<T> mask_recovery_loss(Graph<T>& g, const GenerationModel<T>& model,
                             std::span<const CorruptedContext> items, RecoveryStats* stats = nullptr);

}  // namespace auxgen
