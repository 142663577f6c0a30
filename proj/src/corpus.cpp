#include "auxgen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "auxgen/rng.hpp"
#include "auxgen/tensor.hpp"

namespace auxgen::corpus {

using nlohmann::json;

LoadResult load_jsonl(const std::filesystem::path& path, double max_bad_fraction) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  return parse_jsonl(in, max_bad_fraction);
}

LoadResult parse_jsonl(std::istream& in, double max_bad_fraction) {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  std::size_t non_blank = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    ++non_blank;
    try {
      const auto obj = json::parse(line);
      if (!obj.is_object()) throw CorpusError("line is not a JSON object");
      if (!obj.contains("context") || !obj["context"].is_array()) {
        throw CorpusError("missing array field \"context\"");
      }
      if (!obj.contains("response") || !obj["response"].is_string()) {
        throw CorpusError("missing string field \"response\"");
      }
      RawDialogue d;
      d.line = line_no;
      for (const auto& u : obj["context"]) {
        if (!u.is_string()) throw CorpusError("\"context\" entries must be strings");
        d.context.push_back(u.get<std::string>());
      }
      if (obj.contains("persona")) {
        if (!obj["persona"].is_array()) throw CorpusError("\"persona\" must be an array");
        for (const auto& u : obj["persona"]) {
          if (!u.is_string()) throw CorpusError("\"persona\" entries must be strings");
          d.persona.push_back(u.get<std::string>());
        }
      }
      d.response = obj["response"].get<std::string>();
      result.dialogues.push_back(std::move(d));
    } catch (const json::exception& e) {
      result.errors.push_back({line_no, e.what()});
    } catch (const CorpusError& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }
  if (non_blank == 0) result.warnings.push_back("empty corpus");
  if (non_blank > 0 &&
      static_cast<double>(result.errors.size()) > max_bad_fraction * static_cast<double>(non_blank)) {
    std::ostringstream os;
    os << result.errors.size() << " of " << non_blank << " lines malformed (first at line "
       << result.errors.front().line << ": " << result.errors.front().message << ")";
    throw CorpusError(os.str());
  }
  return result;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c == '\'' || c == '_' || c >= 0x80) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

std::vector<TextDialogue> window_and_truncate(const std::vector<RawDialogue>& dialogues,
                                              std::size_t window, std::size_t max_utt_len,
                                              WindowStats* stats) {
  if (window < 2) throw ContractError("window must be at least 2");
  WindowStats local;
  std::vector<TextDialogue> out;
  auto truncated = [&](const std::string& text) {
    auto toks = tokenize(text);
    if (toks.size() > max_utt_len) toks.resize(max_utt_len);
    return toks;
  };
  for (const auto& d : dialogues) {
    ++local.conversations;
    std::vector<std::vector<std::string>> persona, turns;
    for (const auto& p : d.persona)
      if (auto t = truncated(p); !t.empty()) persona.push_back(std::move(t));
    for (const auto& u : d.context)
      if (auto t = truncated(u); !t.empty()) turns.push_back(std::move(t));
    if (auto r = truncated(d.response); !r.empty()) turns.push_back(std::move(r));
    if (turns.size() < 2 && persona.empty()) {
      ++local.dropped_single_turn;
      continue;
    }
    std::vector<std::vector<std::string>> full = persona;
    full.insert(full.end(), turns.begin(), turns.end());
    const std::size_t first_response = std::max<std::size_t>(1, persona.size());
    for (std::size_t i = first_response; i < full.size(); ++i) {
      TextDialogue inst;
      const std::size_t begin = i > window - 1 ? i - (window - 1) : 0;
      inst.context.assign(full.begin() + static_cast<std::ptrdiff_t>(begin),
                          full.begin() + static_cast<std::ptrdiff_t>(i));
      inst.response = full[i];
      out.push_back(std::move(inst));
      ++local.instances;
    }
  }
  if (stats) *stats = local;
  return out;
}

Vocabulary::Vocabulary() {
  for (auto t : kReservedTokens) {
    index_.emplace(std::string(t), static_cast<int>(tokens_.size()));
    tokens_.emplace_back(t);
  }
}

Vocabulary Vocabulary::build(const std::vector<TextDialogue>& dialogues, std::size_t cap) {
  if (dialogues.empty()) throw CorpusError("cannot build a vocabulary from an empty corpus");
  if (cap < kReservedTokens.size()) throw ContractError("vocabulary cap below reserved size");
  std::map<std::string, std::size_t> freq;
  for (const auto& d : dialogues) {
    for (const auto& u : d.context)
      for (const auto& t : u) ++freq[t];
    for (const auto& t : d.response) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : ranked) {
    if (v.size() >= cap) break;
    if (v.contains(tok)) continue;
    v.index_.emplace(tok, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReservedTokens.size()) throw CorpusError("vocabulary lacks reserved tokens");
  for (std::size_t i = 0; i < kReservedTokens.size(); ++i) {
    if (tokens[i] != kReservedTokens[i]) {
      throw CorpusError("vocabulary line " + std::to_string(i + 1) + " must be " +
                        std::string(kReservedTokens[i]));
    }
  }
  Vocabulary v;
  for (std::size_t i = kReservedTokens.size(); i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<int>(v.tokens_.size())).second) {
      throw CorpusError("duplicate vocabulary token: " + tokens[i]);
    }
    v.tokens_.push_back(std::move(tokens[i]));
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

Dialogue encode(const TextDialogue& dialogue, const Vocabulary& vocab) {
  Dialogue d;
  for (const auto& u : dialogue.context) d.context.push_back(vocab.encode(u));
  d.response = vocab.encode(dialogue.response);
  d.response.push_back(kEos);
  return d;
}

std::vector<Dialogue> encode_all(const std::vector<TextDialogue>& dialogues, const Vocabulary& vocab) {
  std::vector<Dialogue> out;
  out.reserve(dialogues.size());
  for (const auto& d : dialogues) out.push_back(encode(d, vocab));
  return out;
}

void save_instances(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& d : dialogues) out << json{{"context", d.context}, {"response", d.response}}.dump() << '\n';
}

std::vector<Dialogue> load_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::vector<Dialogue> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto obj = json::parse(line);
      Dialogue d;
      d.context = obj.at("context").get<std::vector<std::vector<int>>>();
      d.response = obj.at("response").get<std::vector<int>>();
      if (d.context.empty() || d.response.empty() || d.response.back() != kEos) {
        throw CorpusError("instance needs a context and an [EOS]-terminated response");
      }
      out.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::size_t Batch::max_response_length() const {
  std::size_t t = 0;
  for (std::size_t r = 0; r < rows; ++r) t = std::max(t, response_length(r));
  return t;
}

Batch pack(std::span<const SequenceView> rows, std::size_t max_positions) {
  Batch b;
  b.rows = rows.size();
  for (const auto& row : rows) {
    std::size_t m = 0;
    for (const auto& u : *row.context) m += u.size();
    const std::size_t t = row.response ? row.response->size() : 0;
    if (m + t > max_positions) {
      throw ContractError("sequence of " + std::to_string(m + t) + " tokens exceeds " +
                          std::to_string(max_positions) + " positions");
    }
    b.width = std::max(b.width, m + t);
    b.context_lengths.push_back(m);
    b.lengths.push_back(m + t);
    b.utterance_counts.push_back(row.context->size());
  }
  const auto cells = b.rows * b.width;
  b.tokens.assign(cells, kPad);
  b.positions.assign(cells, -1);
  b.segments.assign(cells, -1);
  b.utterances.assign(cells, -1);
  b.targets.assign(cells, -1);
  for (std::size_t r = 0; r < b.rows; ++r) {
    std::size_t i = 0;
    const auto& ctx = *rows[r].context;
    for (std::size_t u = 0; u < ctx.size(); ++u) {
      for (const int tok : ctx[u]) {
        const auto k = b.index(r, i);
        b.tokens[k] = tok;
        b.positions[k] = static_cast<int>(i);
        b.segments[k] = static_cast<int>(u + 1);
        b.utterances[k] = static_cast<int>(u);
        ++i;
      }
    }
    if (rows[r].response) {
      const auto& resp = *rows[r].response;
      const int seg = static_cast<int>(ctx.size() + 1);
      for (std::size_t l = 0; l < resp.size(); ++l) {
        const auto k = b.index(r, i);
        b.tokens[k] = l == 0 ? kBos : resp[l - 1];
        b.positions[k] = static_cast<int>(i);
        b.segments[k] = seg;
        b.targets[k] = resp[l];
        ++i;
      }
    }
  }
  return b;
}

Batch make_batch(std::span<const Dialogue> dialogues, std::span<const std::size_t> indices,
                 std::size_t max_positions) {
  std::vector<SequenceView> views;
  views.reserve(indices.size());
  for (const auto i : indices) views.push_back({&dialogues[i].context, &dialogues[i].response});
  return pack(views, max_positions);
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (dataset_size == 0) throw CorpusError("empty corpus: nothing to batch");
  if (batch_size == 0) throw ContractError("batch size must be positive");
  batches_per_epoch_ = (size_ + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchSampler::indices(std::size_t step) {
  const std::size_t epoch = step / batches_per_epoch_;
  const std::size_t k = step % batches_per_epoch_;
  if (cached_epoch_ != epoch) {
    auto rng = Rng::derive(seed_, Stream::batches, {epoch});
    order_ = rng.permutation(size_);
    cached_epoch_ = epoch;
  }
  const auto begin = k * batch_size_;
  const auto end = std::min(size_, begin + batch_size_);
  return {order_.begin() + static_cast<std::ptrdiff_t>(begin),
          order_.begin() + static_cast<std::ptrdiff_t>(end)};
}

BatchIterator::BatchIterator(const std::vector<Dialogue>& dialogues, std::size_t batch_size,
                             std::uint64_t seed, std::size_t max_positions)
    : dialogues_(&dialogues), sampler_(dialogues.size(), batch_size, seed),
      max_positions_(max_positions) {}

Batch BatchIterator::next() {
  const auto idx = sampler_.indices(step_++);
  return make_batch(*dialogues_, idx, max_positions_);
}

BatchIterator make_batches(const std::vector<Dialogue>& dialogues, std::size_t batch_size,
                           std::uint64_t seed, std::size_t max_positions) {
  return BatchIterator(dialogues, batch_size, seed, max_positions);
}

}  // namespace auxgen::corpus
