#include "auxgen/synthetic.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

#include "auxgen/rng.hpp"

namespace auxgen::synth {

namespace {

using Words = std::vector<std::string>;

// Pronounceable two-syllable pseudo-words; `salt` separates word classes.
Words pseudo_words(std::size_t count, std::size_t salt) {
  static constexpr std::string_view consonants = "bdgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  Words out;
  const auto syllables = consonants.size() * vowels.size();
  for (std::size_t i = 0; out.size() < count; ++i) {
    const auto k = i * 7 + salt * 131;
    const auto s1 = k % syllables, s2 = (k / syllables + salt) % syllables;
    std::string w;
    w += consonants[s1 / vowels.size()];
    w += vowels[s1 % vowels.size()];
    w += consonants[s2 / vowels.size()];
    w += vowels[s2 % vowels.size()];
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  }
  return out;
}

const std::string& pick(const Words& words, Rng& rng) { return words[rng.below(words.size())]; }

Words split(std::string_view text) { return corpus::tokenize(text); }

Words join(std::initializer_list<std::string_view> parts) {
  Words out;
  for (auto p : parts) {
    auto w = split(p);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

corpus::TextDialogue make_qa(Rng& rng) {
  static const Words names = pseudo_words(24, 1);
  static const Words places = {"paris", "lima", "oslo", "cairo", "delhi", "tokyo", "quito", "rome",
                               "seoul", "dakar", "perth", "kyiv"};
  static const Words foods = {"pizza", "rice", "soup", "bread", "tea", "coffee", "salad", "cake",
                              "pasta", "fish", "apples", "cheese"};
  static const Words pets = {"cat", "dog", "bird", "horse", "rabbit", "turtle"};
  const auto& n = pick(names, rng);
  const auto& p = pick(places, rng);
  const auto& f = pick(foods, rng);
  const auto& a = pick(pets, rng);
  corpus::TextDialogue d;
  switch (rng.below(4)) {
    case 0:
      d.context = {join({"hi , i am", n, "and i live in", p, "."}), join({"do you like", f, "?"})};
      d.response = join({"yes ,", n, "from", p, "likes", f, "."});
      break;
    case 1:
      d.context = {join({"hello , my", a, "is called", n, "."}), join({"it sleeps in", p, "."}),
                   join({"where does", n, "sleep ?"})};
      d.response = join({"my", a, n, "sleeps in", p, "."});
      break;
    case 2:
      d.context = {join({n, "and i eat", f, "in", p, "."}), join({"what do you eat ?"})};
      d.response = join({"in", p, "we eat", f, "with", n, "."});
      break;
    default:
      d.context = {join({"i met", n, "today ."}), join({"does", n, "have a", a, "?"}),
                   join({"no , but", n, "wants one from", p, "."})};
      d.response = join({"then", n, "should get a", a, "in", p, "."});
      break;
  }
  return d;
}

corpus::TextDialogue make_ordered(Rng& rng) {
  static const Words markers = {"first", "second", "third", "fourth"};
  static const Words subjects = pseudo_words(12, 2);
  static const Words verbs = {"eats", "sees", "finds", "paints", "holds", "likes", "calls", "moves",
                              "reads", "sells", "takes", "wants"};
  static const Words objects = {"stones", "lamps", "boats", "trees", "coins", "maps", "keys", "cups",
                                "books", "hats", "shoes", "rings"};
  corpus::TextDialogue d;
  Words first_subjects;
  for (std::size_t k = 0; k < markers.size(); ++k) {
    const auto& s = pick(subjects, rng);
    first_subjects.push_back(s);
    d.context.push_back({markers[k], s, pick(verbs, rng), pick(objects, rng)});
  }
  d.response = {"then", first_subjects[0], "and", first_subjects[3], "left"};
  return d;
}

corpus::TextDialogue make_copy(Rng& rng) {
  // A large name pool keeps most names rare as response targets while they
  // still recur as distractors in other contexts.
  static const Words names = pseudo_words(2000, 3);
  static const Words pets = {"cat", "dog", "bird", "horse", "rabbit", "turtle", "parrot", "goat"};
  static const Words places = {"park", "beach", "market", "library", "station", "garden", "harbor",
                               "museum"};
  static const Words moods = {"happy", "tired", "busy", "calm"};
  const auto& name = pick(names, rng);
  const auto& pet = pick(pets, rng);

  std::vector<Words> body{join({"my", pet, "is named", name, "."}),
                          join({name, "loves to play outside ."})};
  const auto friends = 1 + rng.below(2);
  for (std::size_t i = 0; i < friends; ++i)
    body.push_back(join({"my friend", pick(names, rng), "lives near the", pick(places, rng), "."}));
  if (rng.bernoulli(0.5)) body.push_back(join({"today i feel", pick(moods, rng), "."}));
  rng.shuffle(body.begin(), body.end());
  corpus::TextDialogue d;
  d.context = std::move(body);
  d.context.push_back(join({"what is the name of your", pet, "?"}));
  d.response = join({"my", pet, "is called", name, "."});
  return d;
}

}  // namespace

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::qa: return "qa";
    case Kind::ordered: return "ordered";
    case Kind::copy: return "copy";
  }
  return "?";
}

std::optional<Kind> parse_kind(std::string_view name) {
  for (const auto k : {Kind::qa, Kind::ordered, Kind::copy})
    if (kind_name(k) == name) return k;
  return std::nullopt;
}

std::vector<corpus::TextDialogue> generate(Kind kind, std::size_t count, std::uint64_t seed) {
  auto rng = Rng::derive(seed, Stream::synthetic, {static_cast<std::uint64_t>(kind)});
  std::vector<corpus::TextDialogue> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (kind) {
      case Kind::qa: out.push_back(make_qa(rng)); break;
      case Kind::ordered: out.push_back(make_ordered(rng)); break;
      case Kind::copy: out.push_back(make_copy(rng)); break;
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<corpus::TextDialogue>& data) {
  std::ofstream out(path);
  if (!out) throw corpus::CorpusError("cannot write " + path.string());
  auto text = [](const Words& words) {
    std::string s;
    for (const auto& w : words) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    return s;
  };
  for (const auto& d : data) {
    nlohmann::json obj;
    obj["context"] = nlohmann::json::array();
    for (const auto& u : d.context) obj["context"].push_back(text(u));
    obj["response"] = text(d.response);
    out << obj.dump() << '\n';
  }
}

}  // namespace auxgen::synth
