#include "auxgen/aux_tasks.hpp"

#include <algorithm>

namespace auxgen {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::wor: return "wor";
    case Task::uor: return "uor";
    case Task::mwr: return "mwr";
    case Task::mur: return "mur";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view name) {
  for (const auto t : kAllTasks)
    if (task_name(t) == name) return t;
  return std::nullopt;
}

std::size_t CorruptedContext::supervised() const {
  return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(),
                                                [](int t) { return t >= 0; }));
}

namespace {

std::vector<int> utterance_index(const std::vector<std::vector<int>>& context) {
  std::vector<int> out;
  for (std::size_t u = 0; u < context.size(); ++u) out.insert(out.end(), context[u].size(), static_cast<int>(u));
  return out;
}

std::size_t offset_of(const std::vector<std::vector<int>>& context, std::size_t utterance) {
  std::size_t off = 0;
  for (std::size_t u = 0; u < utterance; ++u) off += context[u].size();
  return off;
}

}  // namespace

std::optional<CorruptedContext> corrupt_word_order(const std::vector<std::vector<int>>& context,
                                                   std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t u = 0; u < context.size(); ++u)
    if (context[u].size() >= 2) eligible.push_back(u);
  if (eligible.empty()) return std::nullopt;

  Rng rng(seed);
  const auto chosen = eligible[rng.below(eligible.size())];
  const auto& original = context[chosen];
  const auto perm = rng.non_identity_permutation(original.size());

  CorruptedContext out;
  out.task = Task::wor;
  out.utterances = context;
  out.utterance = chosen;
  auto& shuffled = out.utterances[chosen];
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = original[perm[i]];

  const auto total = offset_of(context, context.size());
  out.targets.assign(total, -1);
  const auto base = offset_of(context, chosen);
  for (std::size_t i = 0; i < original.size(); ++i) out.targets[base + i] = original[i];
  const auto utt = utterance_index(context);
  out.mask = word_order_mask(utt);
  return out;
}

std::optional<CorruptedContext> corrupt_masked_words(const std::vector<std::vector<int>>& context,
                                                     double rate, std::uint64_t seed) {
  const auto total = offset_of(context, context.size());
  if (total == 0) return std::nullopt;
  Rng rng(seed);
  std::vector<bool> masked(total);
  bool any = false;
  for (std::size_t i = 0; i < total; ++i) {
    masked[i] = rng.bernoulli(rate);
    any = any || masked[i];
  }
  if (!any) masked[rng.below(total)] = true;

  CorruptedContext out;
  out.task = Task::mwr;
  out.utterances = context;
  out.targets.assign(total, -1);
  std::size_t i = 0;
  for (auto& u : out.utterances)
    for (auto& tok : u) {
      if (masked[i]) {
        out.targets[i] = tok;
        tok = corpus::kMask;
      }
      ++i;
    }
  out.mask = AttentionMask::open(total, total);
  return out;
}

std::optional<CorruptedContext> corrupt_masked_utterance(
    const std::vector<std::vector<int>>& context, std::uint64_t seed) {
  if (context.size() < 2) return std::nullopt;
  Rng rng(seed);
  const auto chosen = rng.below(context.size());
  if (context[chosen].empty()) return std::nullopt;

  CorruptedContext out;
  out.task = Task::mur;
  out.utterances = context;
  out.utterance = chosen;
  const auto total = offset_of(context, context.size());
  out.targets.assign(total, -1);
  const auto base = offset_of(context, chosen);
  for (std::size_t i = 0; i < context[chosen].size(); ++i) {
    out.targets[base + i] = context[chosen][i];
    out.utterances[chosen][i] = corpus::kMask;
  }
  out.mask = AttentionMask::open(total, total);
  return out;
}

template <typename T>
Tensor<T> recovery_loss(Graph<T>& g, const GenerationModel<T>& model,
                        std::span<const CorruptedContext> items, RecoveryStats* stats) {
  if (items.empty()) return {};
  std::vector<corpus::SequenceView> views;
  views.reserve(items.size());
  for (const auto& item : items) {
    if (item.supervised() == 0) throw ContractError("recovery loss needs a supervised position");
    views.push_back({&item.utterances, nullptr});
  }
  const auto batch = corpus::pack(views, model.config().max_positions);
  auto mask = BatchedMask::closed(batch.rows, batch.width, batch.width);
  for (std::size_t r = 0; r < batch.rows; ++r) mask.place(r, items[r].mask);
  const auto encoded = model.encode(g, batch, mask);

  std::vector<int> rows, targets;
  std::vector<T> weights;
  const T inv_rows = T(1) / static_cast<T>(items.size());
  for (std::size_t r = 0; r < items.size(); ++r) {
    const T w = inv_rows / static_cast<T>(items[r].supervised());
    for (std::size_t i = 0; i < items[r].targets.size(); ++i) {
      if (items[r].targets[i] < 0) continue;
      rows.push_back(static_cast<int>(batch.index(r, i)));
      targets.push_back(items[r].targets[i]);
      weights.push_back(w);
    }
  }
  const auto logits = model.project_vocab(g, ops::gather_rows(g, encoded, std::span<const int>(rows)));
  auto loss = ops::cross_entropy(g, logits, std::span<const int>(targets), std::span<const T>(weights));
  if (stats) {
    stats->instances += items.size();
    stats->tokens += targets.size();
    const auto v = logits.cols();
    const auto data = logits.data();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto row = data.subspan(i * v, v);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == targets[i]) ++stats->correct;
    }
  }
  return loss;
}

template <typename T>
Tensor<T> wor_loss(Graph<T>& g, const GenerationModel<T>& model,
                   std::span<const CorruptedContext> items, RecoveryStats* stats) {
  for (const auto& item : items)
    if (item.task != Task::wor) throw ContractError("wor_loss given a non-wor instance");
  return recovery_loss(g, model, items, stats);
}

template <typename T>
Tensor<T> mask_recovery_loss(Graph<T>& g, const GenerationModel<T>& model,
                             std::span<const CorruptedContext> items, RecoveryStats* stats) {
  for (const auto& item : items) {
    if (item.task != Task::mwr && item.task != Task::mur) {
      throw ContractError("mask_recovery_loss given a wor/uor instance");
    }
  }
  return recovery_loss(g, model, items, stats);
}

#define AUXGEN_INSTANTIATE(T)                                                                      \
  template Tensor<T> recovery_loss(Graph<T>&, const GenerationModel<T>&,                           \
                                   std::span<const CorruptedContext>, RecoveryStats*);             \
  template Tensor<T> wor_loss(Graph<T>&, const GenerationModel<T>&,                                \
                              std::span<const CorruptedContext>, RecoveryStats*);                  \
  template Tensor<T> mask_recovery_loss(Graph<T>&, const GenerationModel<T>&,                      \
                                        std::span<const CorruptedContext>, RecoveryStats*);
AUXGEN_INSTANTIATE(float)
AUXGEN_INSTANTIATE(double)
#undef AUXGEN_INSTANTIATE

}  // namespace auxgen
