#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace auxgen::corpus {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kMask = 4;
inline constexpr std::array<std::string_view, 5> kReservedTokens{"[PAD]", "[UNK]", "[BOS]",
                                                                 "[EOS]", "[MASK]"};

inline constexpr std::size_t kDefaultWindow = 11;
inline constexpr std::size_t kDefaultMaxUtteranceLength = 25;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSONL record: a conversation whose final turn is "response".
struct RawDialogue {
  std::vector<std::string> persona;
  std::vector<std::string> context;
  std::string response;
  std::size_t line = 0;
};

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<RawDialogue> dialogues;
  std::vector<LineError> errors;
  std::vector<std::string> warnings;
};

/// Reads {"context": [...], "response": "...", "persona": [...]?} lines.
/// Blank lines are ignored. Throws CorpusError when more than
/// `max_bad_fraction` of the non-blank lines are malformed.
LoadResult load_jsonl(const std::filesystem::path& path, double max_bad_fraction = 0.01);
LoadResult parse_jsonl(std::istream& in, double max_bad_fraction = 0.01);

/// Lowercases, splits on whitespace and detaches punctuation into its own tokens.
std::vector<std::string> tokenize(std::string_view text);

/// A windowed instance in token strings.
struct TextDialogue {
  std::vector<std::vector<std::string>> context;
  std::vector<std::string> response;
};

struct WindowStats {
  std::size_t conversations = 0;
  std::size_t instances = 0;
  std::size_t dropped_single_turn = 0;
};

/// Every turn from the second on becomes a response, with up to window-1
/// preceding turns as its context. Utterances and responses keep their first
/// `max_utt_len` tokens. Persona lines are prepended as context turns and are
/// never used as responses.
std::vector<TextDialogue> window_and_truncate(const std::vector<RawDialogue>& dialogues,
                                              std::size_t window = kDefaultWindow,
                                              std::size_t max_utt_len = kDefaultMaxUtteranceLength,
                                              WindowStats* stats = nullptr);

class Vocabulary {
 public:
  Vocabulary();

  /// Frequency-ranked vocabulary capped at `cap` entries including the five
  /// reserved tokens; ties are broken lexicographically.
  static Vocabulary build(const std::vector<TextDialogue>& dialogues, std::size_t cap);
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  /// Space-joined tokens; reserved markers are written out verbatim.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// (U, R): context utterances and a response terminated by [EOS].
struct Dialogue {
  std::vector<std::vector<int>> context;
  std::vector<int> response;
};

Dialogue encode(const TextDialogue& dialogue, const Vocabulary& vocab);
std::vector<Dialogue> encode_all(const std::vector<TextDialogue>& dialogues, const Vocabulary& vocab);

/// Prepared-instance file: one JSON object per line, {"context": [[ids]...], "response": [ids]}.
void save_instances(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);
std::vector<Dialogue> load_instances(const std::filesystem::path& path);

/// Padded batch over the flattened sequence W = (w_1..w_m, w_{m+1}..w_{m+t}).
/// The response part is [BOS] r_1 .. r_{k}; its targets are r_1 .. r_k [EOS].
/// Per-token arrays are [rows x width]; padding uses token [PAD] and -1 indices.
struct Batch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> segments;    // context utterance j -> j+1, response -> n+1
  std::vector<int> utterances;  // context utterance index, -1 for response and padding
  std::vector<int> targets;     // next-token target on response positions, -1 elsewhere
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> context_lengths;  // m per row
  std::vector<std::size_t> utterance_counts;

  std::size_t index(std::size_t r, std::size_t i) const { return r * width + i; }
  bool is_pad(std::size_t r, std::size_t i) const { return i >= lengths[r]; }
  std::size_t response_length(std::size_t r) const { return lengths[r] - context_lengths[r]; }
  std::size_t max_response_length() const;
};

/// A row to pack: a context and an optional response (context-only rows have t = 0).
struct SequenceView {
  const std::vector<std::vector<int>>* context = nullptr;
  const std::vector<int>* response = nullptr;
};

/// Throws ContractError when a row needs a position >= max_positions.
Batch pack(std::span<const SequenceView> rows, std::size_t max_positions);
Batch make_batch(std::span<const Dialogue> dialogues, std::span<const std::size_t> indices,
                 std::size_t max_positions);

/// Deterministic mini-batch order: data epoch e is a seed-derived permutation of
/// the dataset cut into consecutive batches. `indices(step)` is stateless in the
/// sense that it only depends on (seed, step), which makes resuming exact.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  std::vector<std::size_t> indices(std::size_t step);

 private:
  std::size_t size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t batches_per_epoch_;
  std::optional<std::size_t> cached_epoch_;
  std::vector<std::size_t> order_;
};

/// Sequential iterator over seed-shuffled batches.
class BatchIterator {
 public:
  BatchIterator(const std::vector<Dialogue>& dialogues, std::size_t batch_size, std::uint64_t seed,
                std::size_t max_positions);
  Batch next();
  std::size_t step() const { return step_; }

 private:
  const std::vector<Dialogue>* dialogues_;
  BatchSampler sampler_;
  std::size_t max_positions_;
  std::size_t step_ = 0;
};

BatchIterator make_batches(const std::vector<Dialogue>& dialogues, std::size_t batch_size,
                           std::uint64_t seed, std::size_t max_positions);

}  // namespace auxgen::corpus
