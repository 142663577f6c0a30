#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "auxgen/experiments.hpp"
#include "auxgen/synthetic.hpp"

using namespace auxgen;
namespace fs = std::filesystem;

namespace {

Splits tiny_splits() {
  const auto text = synth::generate(synth::Kind::qa, 40, 9);
  Splits s;
  s.vocab = corpus::Vocabulary::build(text, 200);
  const auto all = corpus::encode_all(text, s.vocab);
  s.train.assign(all.begin(), all.begin() + 28);
  s.valid.assign(all.begin() + 28, all.begin() + 34);
  s.test.assign(all.begin() + 34, all.end());
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.batch_size = 4;
  c.max_steps = 14;
  c.aux_epochs = 2;
  c.max_positions = 80;
  c.max_utterances = 4;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("auxgen_exp_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("ablation variants cover the full model, each task removed and no tasks") {
  const auto v = table3_variants();
  REQUIRE(v.size() == 6);
  CHECK(v[0].name == "full");
  CHECK(v[0].tasks.enabled == TaskToggles{}.enabled);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK_FALSE(v[i + 1].tasks[kAllTasks[i]]);
    std::size_t on = 0;
    for (Task t : kAllTasks) on += v[i + 1].tasks[t];
    CHECK(on == 3);
  }
  CHECK_FALSE(v[5].tasks.any());
  CHECK(variant_slug(v[0]) == "full");
  CHECK(variant_slug(v[1]) == "no-wor");
  CHECK(variant_slug(v[5]) == "no-aux");
}

TEST_CASE("leaving out every task is the plain MLE configuration") {
  const auto v = leave_out_variant(parse_task_list("wor,uor,mwr,mur"));
  CHECK_FALSE(v.tasks.any());
  CHECK(v.name == "-all");
  const auto two = leave_out_variant(parse_task_list("wor,mur"));
  CHECK(two.name == "-wor-mur");
  CHECK(two.tasks[Task::uor]);
  CHECK(two.tasks[Task::mwr]);
  CHECK_FALSE(two.tasks[Task::wor]);

  const auto s = tiny_splits();
  auto c = tiny_config();
  const auto dir = scratch("leaveout");
  RunOptions o;
  run_variant(c, v, s, dir / "ablate", o);
  auto plain = c;
  plain.tasks = TaskToggles::none();
  ModelBundle<float> m(model_config(plain, s.vocab.size()), plain.max_utterances, false, plain.seed);
  TrainOptions to;
  to.out_dir = dir / "plain";
  train(plain, m, s.train, s.valid, to);
  CHECK(read_file(dir / "ablate" / "train_log.csv") == read_file(dir / "plain" / "train_log.csv"));
  CHECK(read_file(dir / "ablate" / "config.txt") == format_config(plain));
  fs::remove_all(dir);
}

TEST_CASE("ablate and depth sweep write one row per run") {
  const auto s = tiny_splits();
  const auto c = tiny_config();
  const auto dir = scratch("runs");
  RunOptions o;
  o.eval.max_len = 8;
  const auto rows = ablate(c, s, {table3_variants()[0], table3_variants()[5]}, dir, o);
  REQUIRE(rows.size() == 2);
  CHECK(fs::exists(dir / "full" / "best.ckpt"));
  CHECK(fs::exists(dir / "no-aux" / "metrics.csv"));
  for (const auto& r : rows) {
    CHECK(r.report.examples == s.test.size());
    CHECK(r.report.ppl > 1.0);
    CHECK(r.training.steps == c.max_steps);
  }
  std::istringstream csv(format_ablation_csv(rows));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 3);

  const auto sweep = depth_sweep(c, s, {1, 2}, dir / "sweep", o);
  REQUIRE(sweep.size() == 4);
  CHECK(sweep[0].encoder_layers == 1);
  CHECK_FALSE(sweep[0].variant.tasks.any());
  CHECK(sweep[3].encoder_layers == 2);
  CHECK(sweep[3].variant.tasks.any());
  CHECK(fs::exists(dir / "sweep" / "layers2-full" / "best.ckpt"));
  // Deeper encoders carry more generation parameters.
  CHECK(sweep[2].report.params.generation_only > sweep[0].report.params.generation_only);
  fs::remove_all(dir);
}

TEST_CASE("prepared splits round trip and predictions serialize as JSON lines") {
  const auto s = tiny_splits();
  const auto dir = scratch("splits");
  save_splits(dir, s);
  const auto back = load_splits(dir);
  CHECK(back.vocab.tokens() == s.vocab.tokens());
  REQUIRE(back.train.size() == s.train.size());
  CHECK(back.train[3].context == s.train[3].context);
  CHECK(back.test.back().response == s.test.back().response);
  fs::remove_all(dir);

  const Prediction p{{"hi there", "how are you ?"}, "fine \"thanks\"", "fine"};
  const auto j = nlohmann::json::parse(format_prediction_jsonl(p));
  CHECK(j["context"].size() == 2);
  CHECK(j["reference"] == "fine \"thanks\"");
  CHECK(j["candidate"] == "fine");
}
