#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "tripletqa/errors.hpp"
#include "tripletqa/hash.hpp"
#include "tripletqa/synthetic.hpp"
#include "tripletqa/trainer.hpp"

using namespace tqa;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

TrainConfig toy(AdaptationMode mode = AdaptationMode::adapters) {
  TrainConfig c;
  c.backbone.layers = 1;
  c.backbone.heads = 2;
  c.backbone.dim = 16;
  c.backbone.max_positions = 128;
  c.backbone.adapter_tokens = mode == AdaptationMode::lora ? 0 : 4;
  c.backbone.lora_rank = mode == AdaptationMode::lora ? 2 : 0;
  c.mode = mode;
  c.optimizer.lr = 1e-2;
  c.batch_size = 3;
  c.max_len = 128;
  c.seed = 9;
  return c;
}

std::vector<TripletExample> corpus(std::size_t n = 6) { return synthetic_corpus({n, 3, 1, false}); }

std::string backbone_fingerprint(const Transformer& m) {
  std::vector<double> frozen;
  for (const auto& t : m.layout().tensors()) {
    if (t.group != ParamGroup::backbone) continue;
    frozen.insert(frozen.end(), m.parameters().begin() + static_cast<std::ptrdiff_t>(t.offset),
                  m.parameters().begin() + static_cast<std::ptrdiff_t>(t.offset + t.size()));
  }
  return hash_doubles(frozen);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "tqa_trainer_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainOutputs outputs_in(const fs::path& dir) { return {dir / "log.jsonl", dir / "last.ckpt", dir / "best.ckpt"}; }

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged but reports a loss") {
  auto data = corpus();
  auto config = toy();
  config.optimizer.lr = 0.0;
  auto tok = build_tokenizer(data, config.templates);
  auto state = init_state(config, tok);
  auto inst = prepare_instances(data[0], tok, state.config);
  auto before = hash_doubles(state.model.parameters());
  auto r = train_step(state, {&inst}, tok);
  CHECK(hash_doubles(state.model.parameters()) == before);
  CHECK(r.loss.l_total > 0.0);
  CHECK(std::isfinite(r.loss.l_total));
  CHECK(state.step == 1);
}

TEST_CASE("two steps on one example lower its total loss") {
  auto data = corpus();
  for (auto mode : {AdaptationMode::adapters, AdaptationMode::lora, AdaptationMode::full}) {
    CAPTURE(to_string(mode));
    auto config = toy(mode);
    config.optimizer.lr = 5e-3;
    auto tok = build_tokenizer(data, config.templates);
    auto state = init_state(config, tok);
    auto inst = prepare_instances(data[0], tok, state.config);
    auto total = [&] {
      return triplet_total(example_loss(state.model, inst, state.config, tok).components,
                           state.config.effective_weights())
          .l_total;
    };
    const double l0 = total();
    train_step(state, {&inst}, tok);
    const double l1 = total();
    train_step(state, {&inst}, tok);
    const double l2 = total();
    CHECK(l1 < l0);
    CHECK(l2 < l1);
  }
}

TEST_CASE("frozen backbone weights do not move in adapter and lora modes") {
  auto data = corpus();
  for (auto mode : {AdaptationMode::adapters, AdaptationMode::lora}) {
    auto config = toy(mode);
    auto tok = build_tokenizer(data, config.templates);
    auto state = init_state(config, tok);
    std::vector<ExampleInstances> inst;
    for (const auto& ex : data) inst.push_back(prepare_instances(ex, tok, state.config));
    const auto frozen = backbone_fingerprint(state.model);
    const auto all = hash_doubles(state.model.parameters());
    for (int s = 0; s < 10; ++s) train_step(state, {&inst[s % inst.size()], &inst[(s + 1) % inst.size()]}, tok);
    CHECK(backbone_fingerprint(state.model) == frozen);
    CHECK(hash_doubles(state.model.parameters()) != all);
  }
}

TEST_CASE("disabled objectives are not rendered and not logged") {
  auto data = corpus();
  std::set<std::string> hashes;
  std::map<Ablation, std::size_t> instances;
  for (auto a : {Ablation::none, Ablation::no_question_restoration, Ablation::no_evidence_generation, Ablation::no_kl}) {
    auto config = toy();
    config.ablation = a;
    hashes.insert(config.hash());
    auto tok = build_tokenizer(data, config.templates);
    auto state = init_state(config, tok);
    auto inst = prepare_instances(data[0], tok, state.config);
    auto r = train_step(state, {&inst}, tok);
    instances[a] = r.instances;
    auto rec = json::parse(step_record(1, 0, r));
    CHECK(rec.contains("l_seq"));
    CHECK(rec.contains("l_eaq") == (a != Ablation::no_question_restoration));
    CHECK(rec.contains("l_qae") == (a != Ablation::no_evidence_generation));
    CHECK(rec.contains("l_kl") == (a != Ablation::no_kl));
  }
  CHECK(hashes.size() == 4);
  CHECK(instances[Ablation::none] == 4);
  CHECK(instances[Ablation::no_question_restoration] == 3);
  CHECK(instances[Ablation::no_evidence_generation] == 3);
  CHECK(instances[Ablation::no_kl] == 3);
}

TEST_CASE("examples without evidence skip the evidence tasks") {
  Document d{"d", {"alice lives in paris ."}};
  auto ex = make_example("e", d, "where does alice live ?", {}, {"paris"}, AnswerType::extractive);
  auto config = toy();
  auto tok = build_tokenizer({ex}, config.templates);
  auto inst = prepare_instances(ex, tok, config);
  CHECK(!inst.qae);
  CHECK(!inst.eaq);
  CHECK(inst.plain);
  CHECK(inst.count() == 2);
}

TEST_CASE("non-finite loss aborts with a dump of the instance") {
  auto data = corpus();
  auto config = toy();
  auto tok = build_tokenizer(data, config.templates);
  auto state = init_state(config, tok);
  const auto& head = state.model.layout().find("lm_head");
  state.model.parameters()[head.offset] = std::nan("");
  auto inst = prepare_instances(data[0], tok, state.config);
  try {
    train_step(state, {&inst}, tok);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    auto dump = json::parse(e.dump());
    CHECK(dump.contains("task"));
    CHECK(dump.contains("token_ids"));
    CHECK(std::string(e.what()).find(data[0].id) != std::string::npos);
  }
}

TEST_CASE("config json round trip and hash scope") {
  auto c = toy(AdaptationMode::lora);
  c.kl.direction = KlDirection::symmetric;
  c.templates.set_eaq_include_document(true);
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  auto longer = c;
  longer.epochs = 10;
  longer.max_steps = 77;
  CHECK(longer.hash() == c.hash());
  auto other = c;
  other.seed = c.seed + 1;
  CHECK(other.hash() != c.hash());
  auto lr = c;
  lr.optimizer.lr = 0.5;
  CHECK(lr.hash() != c.hash());
}

TEST_CASE("epoch order is a seeded permutation") {
  auto a = epoch_order(3, 0, 10);
  auto b = epoch_order(3, 0, 10);
  auto c = epoch_order(3, 1, 10);
  CHECK(a == b);
  CHECK(a != c);
  std::set<std::size_t> seen(a.begin(), a.end());
  CHECK(seen.size() == 10);
  CHECK(*seen.rbegin() == 9);
}

TEST_CASE("checkpoints round trip the full state") {
  auto data = corpus();
  auto config = toy();
  auto tok = build_tokenizer(data, config.templates);
  auto state = init_state(config, tok);
  auto inst = prepare_instances(data[1], tok, state.config);
  train_step(state, {&inst}, tok);
  auto dir = scratch("roundtrip");
  save_state(dir / "s.ckpt", state);
  auto loaded = load_state(dir / "s.ckpt");
  CHECK(loaded.step == state.step);
  CHECK(loaded.vocab == state.vocab);
  CHECK(loaded.optimizer.t == state.optimizer.t);
  CHECK(hash_doubles(loaded.model.parameters()) == hash_doubles(state.model.parameters()));
  CHECK(loaded.config.hash() == state.config.hash());
  auto r1 = train_step(state, {&inst}, tok);
  auto r2 = train_step(loaded, {&inst}, tok);
  CHECK(r1.loss.l_total == r2.loss.l_total);
  CHECK(hash_doubles(loaded.model.parameters()) == hash_doubles(state.model.parameters()));
}

TEST_CASE("training logs are deterministic and resumable") {
  auto data = corpus();
  auto config = toy();
  config.max_steps = 8;

  auto a = scratch("run_a");
  auto b = scratch("run_b");
  train(config, data, {}, outputs_in(a));
  train(config, data, {}, outputs_in(b));
  CHECK(slurp(a / "log.jsonl") == slurp(b / "log.jsonl"));
  CHECK(slurp(a / "last.ckpt") == slurp(b / "last.ckpt"));

  auto part = scratch("run_part");
  auto first = config;
  first.max_steps = 3;
  train(first, data, {}, outputs_in(part));
  train(config, data, {}, outputs_in(part), part / "last.ckpt");
  CHECK(slurp(part / "log.jsonl") == slurp(a / "log.jsonl"));
  CHECK(slurp(part / "last.ckpt") == slurp(a / "last.ckpt"));

  auto mismatched = config;
  mismatched.seed += 1;
  CHECK_THROWS_AS(train(mismatched, data, {}, outputs_in(scratch("bad")), part / "last.ckpt"), ConfigError);
}

TEST_CASE("epoch records carry means and select the best checkpoint") {
  auto data = corpus();
  auto config = toy();
  config.epochs = 3;
  auto dir = scratch("epochs");
  auto dev = synthetic_corpus({3, 3, 2, false});
  auto summary = train(config, data, dev, outputs_in(dir));
  CHECK(summary.steps == 6);
  std::ifstream log(dir / "log.jsonl");
  std::string line;
  int epochs = 0, steps = 0;
  double best = 1e300;
  while (std::getline(log, line)) {
    auto j = json::parse(line);
    if (j["type"] == "step") {
      ++steps;
      continue;
    }
    ++epochs;
    CHECK(j["dev_source"] == "dev");
    const double dev_l = j["dev_l_seq"];
    CHECK(j["best"] == (dev_l < best));
    best = std::min(best, dev_l);
  }
  CHECK(steps == 6);
  CHECK(epochs == 3);
  REQUIRE(summary.best_dev);
  CHECK(*summary.best_dev == best);
  CHECK(fs::exists(dir / "best.ckpt"));
  auto restored = load_state(dir / "best.ckpt");
  CHECK(restored.step == summary.best_step);
}

TEST_CASE("train rejects an empty corpus") {
  CHECK_THROWS_AS(train(toy(), {}, {}, outputs_in(scratch("empty"))), DataError);
}
