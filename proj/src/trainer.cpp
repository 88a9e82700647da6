#include "tripletqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "tripletqa/checkpoint.hpp"
#include "tripletqa/errors.hpp"
#include "tripletqa/hash.hpp"

namespace tqa {

using nlohmann::json;

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_question_restoration: return "no_question_restoration";
    case Ablation::no_evidence_generation: return "no_evidence_generation";
    case Ablation::no_kl: return "no_kl";
  }
  return "none";
}

Ablation ablation_from_string(std::string_view s) {
  if (s == "none" || s == "full") return Ablation::none;
  if (s == "no_question_restoration") return Ablation::no_question_restoration;
  if (s == "no_evidence_generation") return Ablation::no_evidence_generation;
  if (s == "no_kl") return Ablation::no_kl;
  throw ConfigError("unknown ablation '" + std::string(s) + "'");
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  switch (ablation) {
    case Ablation::none: break;
    case Ablation::no_question_restoration: w.use_eaq = false; break;
    case Ablation::no_evidence_generation: w.use_qae = false; break;
    case Ablation::no_kl: w.use_kl = false; break;
  }
  return w;
}

void TrainConfig::validate() const {
  weights.validate();
  if (!(optimizer.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (mode == AdaptationMode::adapters && backbone.adapter_tokens == 0) {
    throw ConfigError("adapters mode needs adapter_tokens > 0");
  }
  if (mode == AdaptationMode::lora && backbone.lora_rank == 0) throw ConfigError("lora mode needs lora_rank > 0");
}

namespace {

std::string targets_string(const LoraTargets& t) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ",";
    s += name;
  };
  add(t.q, "q");
  add(t.k, "k");
  add(t.v, "v");
  add(t.o, "o");
  return s;
}

LoraTargets targets_from_string(const std::string& s) {
  LoraTargets t{false, false, false, false};
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    std::string part = s.substr(start, end - start);
    if (part == "q") t.q = true;
    else if (part == "k") t.k = true;
    else if (part == "v") t.v = true;
    else if (part == "o") t.o = true;
    else if (!part.empty()) throw ConfigError("unknown lora target '" + part + "'");
    start = end + 1;
  }
  return t;
}

json config_json(const TrainConfig& c) {
  json j;
  const auto& b = c.backbone;
  j["backbone"] = {{"layers", b.layers},
                   {"heads", b.heads},
                   {"dim", b.dim},
                   {"vocab", b.vocab},
                   {"max_positions", b.max_positions},
                   {"adapter_tokens", b.adapter_tokens},
                   {"lora_rank", b.lora_rank},
                   {"lora_alpha", b.lora_alpha},
                   {"lora_targets", targets_string(b.lora_targets)}};
  j["mode"] = std::string(to_string(c.mode));
  const auto& w = c.weights;
  j["weights"] = {{"qae", w.qae}, {"qea", w.qea}, {"eaq", w.eaq}, {"kl", w.kl},
                  {"use_qae", w.use_qae}, {"use_eaq", w.use_eaq}, {"use_kl", w.use_kl}};
  j["kl"] = {{"direction", std::string(to_string(c.kl.direction))}, {"teacher_stopgrad", c.kl.teacher_stopgrad}};
  const auto& o = c.optimizer;
  j["optimizer"] = {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps},
                    {"weight_decay", o.weight_decay}, {"clip_norm", o.clip_norm}};
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["max_len"] = c.max_len;
  j["seed"] = c.seed;
  j["ablation"] = std::string(to_string(c.ablation));
  json t;
  for (Task task : {Task::qae, Task::qea, Task::eaq, Task::qa_plain}) {
    t[std::string(to_string(task))] = c.templates.get(task).instruction;
  }
  t["eaq_include_document"] = c.templates.eaq_include_document();
  j["templates"] = t;
  return j;
}

std::optional<double> opt_mean(double sum, std::size_t n) {
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

void check_finite(double v, const char* what, const RenderedInstance& inst, const std::string& id,
                  const Tokenizer& tok) {
  if (std::isfinite(v)) return;
  throw TrainingError(std::string("non-finite ") + what + " on record " + id, debug_dump(inst, tok));
}

std::vector<std::uint8_t> wanted_tensors(const Transformer& model, AdaptationMode mode) {
  std::vector<std::uint8_t> want;
  for (const auto& t : model.layout().tensors()) want.push_back(model.layout().trainable(t, mode) ? 1 : 0);
  return want;
}

void scale_into(Matrix& dst, const Matrix& src, double s) {
  if (dst.rows != src.rows || dst.cols != src.cols) dst = Matrix(src.rows, src.cols);
  for (std::size_t i = 0; i < src.data.size(); ++i) dst.data[i] += s * src.data[i];
}

}  // namespace

std::string TrainConfig::to_json() const { return config_json(*this).dump(); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  const auto& b = j.at("backbone");
  c.backbone.layers = b.at("layers");
  c.backbone.heads = b.at("heads");
  c.backbone.dim = b.at("dim");
  c.backbone.vocab = b.at("vocab");
  c.backbone.max_positions = b.at("max_positions");
  c.backbone.adapter_tokens = b.at("adapter_tokens");
  c.backbone.lora_rank = b.at("lora_rank");
  c.backbone.lora_alpha = b.at("lora_alpha");
  c.backbone.lora_targets = targets_from_string(b.at("lora_targets").get<std::string>());
  c.mode = adaptation_mode_from_string(j.at("mode").get<std::string>());
  const auto& w = j.at("weights");
  c.weights = {w.at("qae"), w.at("qea"), w.at("eaq"), w.at("kl"), w.at("use_qae"), w.at("use_eaq"), w.at("use_kl")};
  c.kl.direction = kl_direction_from_string(j.at("kl").at("direction").get<std::string>());
  c.kl.teacher_stopgrad = j.at("kl").at("teacher_stopgrad");
  const auto& o = j.at("optimizer");
  c.optimizer = {o.at("lr"), o.at("beta1"), o.at("beta2"), o.at("eps"), o.at("weight_decay"), o.at("clip_norm")};
  c.batch_size = j.at("batch_size");
  c.epochs = j.at("epochs");
  c.max_steps = j.at("max_steps");
  c.max_len = j.at("max_len");
  c.seed = j.at("seed");
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  const auto& t = j.at("templates");
  for (Task task : {Task::qae, Task::qea, Task::eaq, Task::qa_plain}) {
    c.templates.set_instruction(task, t.at(std::string(to_string(task))).get<std::string>());
  }
  c.templates.set_eaq_include_document(t.at("eaq_include_document"));
  return c;
}

std::string TrainConfig::hash() const {
  json j = config_json(*this);
  j.erase("epochs");
  j.erase("max_steps");
  j["backbone"].erase("vocab");
  return fnv1a_hex(j.dump());
}

AdamW::AdamW(std::size_t n, OptimizerConfig cfg) : m(n, 0.0), v(n, 0.0), config(cfg) {}

void AdamW::step(std::vector<double>& params, const std::vector<double>& grads,
                 const std::vector<std::uint8_t>& mask) {
  ++t;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask[i]) continue;
    const double g = grads[i];
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    params[i] -= config.lr * (mhat / (std::sqrt(vhat) + config.eps) + config.weight_decay * params[i]);
  }
}

ExampleInstances prepare_instances(const TripletExample& ex, const Tokenizer& tok, const TrainConfig& config) {
  const auto w = config.effective_weights();
  ExampleInstances out;
  out.id = ex.id;
  if (w.use_kl) {
    auto pair = build_pair_for_bridging(ex, tok, config.max_len, config.templates);
    out.qea = std::move(pair.with_evidence);
    out.plain = std::move(pair.plain);
    out.aligned_rows = std::move(pair.aligned_rows);
  } else {
    out.qea = render(Task::qea, ex, tok, config.max_len, config.templates);
  }
  const bool has_evidence = !ex.evidence_indices.empty();
  if (w.use_qae && has_evidence) out.qae = render(Task::qae, ex, tok, config.max_len, config.templates);
  if (w.use_eaq && has_evidence) out.eaq = render(Task::eaq, ex, tok, config.max_len, config.templates);
  return out;
}

ExampleLoss example_loss(const Transformer& model, const ExampleInstances& inst, const TrainConfig& config,
                         const Tokenizer& tok, std::vector<double>* grad, const std::vector<std::uint8_t>& want,
                         const GradientScales& scales) {
  const auto w = config.effective_weights();
  ExampleLoss out;
  out.instances = inst.count();

  Transformer::Activations a_qea, a_plain, a_qae, a_eaq;
  Matrix g_seq, g_kl_plain, g_kl_ev, g_qae, g_eaq;
  Matrix* gp = grad ? &g_seq : nullptr;

  auto f_qea = model.forward_train(inst.qea.token_ids, a_qea);
  out.components.seq = sequence_nll(f_qea.logits, inst.qea.token_ids, inst.qea.loss_mask, gp);
  check_finite(out.components.seq, "answer loss", inst.qea, inst.id, tok);

  ForwardOutput f_plain;
  if (inst.plain) {
    f_plain = model.forward_train(inst.plain->token_ids, a_plain);
    out.components.kl = kl_bridging(f_plain.logits, f_qea.logits, inst.aligned_rows, config.kl,
                                    grad ? &g_kl_plain : nullptr, grad ? &g_kl_ev : nullptr);
    check_finite(*out.components.kl, "bridging loss", *inst.plain, inst.id, tok);
  }
  if (inst.qae) {
    auto f = model.forward_train(inst.qae->token_ids, a_qae);
    out.components.qae = sequence_nll(f.logits, inst.qae->token_ids, inst.qae->loss_mask, grad ? &g_qae : nullptr);
    check_finite(*out.components.qae, "evidence loss", *inst.qae, inst.id, tok);
  }
  if (inst.eaq) {
    auto f = model.forward_train(inst.eaq->token_ids, a_eaq);
    out.components.eaq = sequence_nll(f.logits, inst.eaq->token_ids, inst.eaq->loss_mask, grad ? &g_eaq : nullptr);
    check_finite(*out.components.eaq, "restoration loss", *inst.eaq, inst.id, tok);
  }
  if (!grad) return out;

  Matrix d_qea;
  scale_into(d_qea, g_seq, w.qea * scales.seq);
  if (inst.plain && g_kl_ev.rows) scale_into(d_qea, g_kl_ev, w.qea * w.kl * scales.kl);
  model.backward(a_qea, d_qea, *grad, want);
  if (inst.plain && w.qea * w.kl != 0.0) {
    Matrix d;
    scale_into(d, g_kl_plain, w.qea * w.kl * scales.kl);
    model.backward(a_plain, d, *grad, want);
  }
  if (inst.qae && w.qae != 0.0) {
    Matrix d;
    scale_into(d, g_qae, w.qae * scales.qae);
    model.backward(a_qae, d, *grad, want);
  }
  if (inst.eaq && w.eaq != 0.0) {
    Matrix d;
    scale_into(d, g_eaq, w.eaq * scales.eaq);
    model.backward(a_eaq, d, *grad, want);
  }
  return out;
}

WordTokenizer build_tokenizer(const std::vector<TripletExample>& corpus, const TemplateSet& templates) {
  std::vector<std::string> texts = {"\n[Document] [Question] [Evidence] [Answer] , ."};
  for (Task t : {Task::qae, Task::qea, Task::eaq, Task::qa_plain}) texts.push_back(templates.get(t).instruction);
  for (const auto& ex : corpus) {
    for (const auto& s : ex.document.sentences) texts.push_back(s);
    texts.push_back(ex.question);
    for (const auto& a : ex.answers) texts.push_back(a);
  }
  return WordTokenizer::build(texts);
}

TrainState init_state(const TrainConfig& config, const WordTokenizer& tok) {
  config.validate();
  TrainConfig c = config;
  c.backbone.vocab = tok.vocab_size();
  if (c.mode != AdaptationMode::lora) c.backbone.lora_rank = 0;
  Transformer model(c.backbone, c.seed);
  AdamW opt(model.parameters().size(), c.optimizer);
  return TrainState{c, tok.tokens(), std::move(model), std::move(opt), 0, {}, std::nullopt, 0};
}

StepResult train_step(TrainState& state, const std::vector<const ExampleInstances*>& batch, const Tokenizer& tok) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  const auto& config = state.config;
  const auto w = config.effective_weights();
  auto& model = state.model;

  std::size_t n_qae = 0, n_kl = 0, n_eaq = 0;
  for (const auto* ex : batch) {
    n_qae += ex->qae.has_value();
    n_kl += ex->plain.has_value();
    n_eaq += ex->eaq.has_value();
  }
  GradientScales scales;
  scales.seq = 1.0 / static_cast<double>(batch.size());
  scales.qae = n_qae ? 1.0 / static_cast<double>(n_qae) : 0.0;
  scales.kl = n_kl ? 1.0 / static_cast<double>(n_kl) : 0.0;
  scales.eaq = n_eaq ? 1.0 / static_cast<double>(n_eaq) : 0.0;

  const auto want = wanted_tensors(model, config.mode);
  const auto mask = model.layout().trainable_mask(config.mode);
  std::vector<double> grad(model.parameters().size(), 0.0);

  double s_qae = 0, s_seq = 0, s_kl = 0, s_eaq = 0;
  StepResult r;
  for (const auto* ex : batch) {
    auto el = example_loss(model, *ex, config, tok, &grad, want, scales);
    r.instances += el.instances;
    s_seq += el.components.seq;
    if (el.components.qae) s_qae += *el.components.qae;
    if (el.components.kl) s_kl += *el.components.kl;
    if (el.components.eaq) s_eaq += *el.components.eaq;
  }
  LossComponents mean;
  mean.seq = s_seq / static_cast<double>(batch.size());
  if (w.use_qae) mean.qae = opt_mean(s_qae, n_qae).value_or(0.0);
  if (w.use_kl) mean.kl = opt_mean(s_kl, n_kl).value_or(0.0);
  if (w.use_eaq) mean.eaq = opt_mean(s_eaq, n_eaq).value_or(0.0);
  r.loss = triplet_total(mean, w);

  double sq = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (mask[i]) sq += grad[i] * grad[i];
  }
  r.grad_norm = std::sqrt(sq);
  if (!std::isfinite(r.grad_norm)) {
    throw TrainingError("non-finite gradient at step " + std::to_string(state.step), debug_dump(batch.front()->qea, tok));
  }
  if (config.optimizer.clip_norm > 0.0 && r.grad_norm > config.optimizer.clip_norm) {
    const double s = config.optimizer.clip_norm / r.grad_norm;
    for (double& g : grad) g *= s;
  }
  state.optimizer.step(model.parameters(), grad, mask);
  ++state.step;
  return r;
}

std::string step_record(std::uint64_t step, std::uint64_t epoch, const StepResult& r) {
  json j;
  j["type"] = "step";
  j["step"] = step;
  j["epoch"] = epoch;
  if (r.loss.l_qae) j["l_qae"] = *r.loss.l_qae;
  j["l_seq"] = r.loss.l_seq;
  if (r.loss.l_kl) j["l_kl"] = *r.loss.l_kl;
  if (r.loss.l_eaq) j["l_eaq"] = *r.loss.l_eaq;
  j["l_total"] = r.loss.l_total;
  j["instances"] = r.instances;
  return j.dump();
}

std::uint64_t planned_steps(const TrainConfig& config, std::size_t n) {
  if (config.max_steps > 0) return config.max_steps;
  const std::uint64_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  return per_epoch * config.epochs;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

double mean_l_seq(const Transformer& model, const Tokenizer& tok, const TrainConfig& config,
                  const std::vector<TripletExample>& corpus) {
  if (corpus.empty()) throw DataError("mean_l_seq: empty corpus");
  double s = 0.0;
  for (const auto& ex : corpus) {
    auto inst = render(Task::qea, ex, tok, config.max_len, config.templates);
    auto f = model.forward(inst.token_ids);
    s += sequence_nll(f.logits, inst.token_ids, inst.loss_mask);
  }
  return s / static_cast<double>(corpus.size());
}

void save_state(const std::filesystem::path& path, const TrainState& state) {
  json meta;
  meta["config"] = json::parse(state.config.to_json());
  meta["config_hash"] = state.config.hash();
  meta["vocab"] = state.vocab;
  meta["step"] = state.step;
  meta["adam_t"] = state.optimizer.t;
  const auto& a = state.epoch_acc;
  meta["epoch_acc"] = {{"qae", a.qae}, {"seq", a.seq}, {"kl", a.kl}, {"eaq", a.eaq}, {"total", a.total},
                       {"steps", a.steps}};
  meta["best_dev"] = state.best_dev ? json(*state.best_dev) : json(nullptr);
  meta["best_step"] = state.best_step;
  CheckpointFile f;
  f.metadata = meta.dump();
  const auto& params = state.model.parameters();
  for (const auto& t : state.model.layout().tensors()) {
    f.arrays.push_back({"param/" + t.name, std::vector<double>(params.begin() + static_cast<std::ptrdiff_t>(t.offset),
                                                               params.begin() + static_cast<std::ptrdiff_t>(t.offset + t.size()))});
  }
  f.arrays.push_back({"adam.m", state.optimizer.m});
  f.arrays.push_back({"adam.v", state.optimizer.v});
  write_checkpoint_file(path, f);
}

TrainState load_state(const std::filesystem::path& path) {
  auto f = read_checkpoint_file(path);
  json meta;
  try {
    meta = json::parse(f.metadata);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  auto config = TrainConfig::from_json(meta.at("config").dump());
  ParameterLayout layout(config.backbone);
  std::vector<double> params(layout.total());
  for (const auto& t : layout.tensors()) {
    const auto& arr = f.array("param/" + t.name);
    if (arr.values.size() != t.size()) throw DataError(path.string() + ": wrong size for " + t.name);
    std::copy(arr.values.begin(), arr.values.end(), params.begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
  Transformer model(config.backbone, std::move(params));
  AdamW opt(model.parameters().size(), config.optimizer);
  opt.m = f.array("adam.m").values;
  opt.v = f.array("adam.v").values;
  opt.t = meta.at("adam_t");
  if (opt.m.size() != model.parameters().size() || opt.v.size() != model.parameters().size()) {
    throw DataError(path.string() + ": optimizer state size mismatch");
  }
  EpochAccumulator acc;
  const auto& ja = meta.at("epoch_acc");
  acc.qae = ja.at("qae");
  acc.seq = ja.at("seq");
  acc.kl = ja.at("kl");
  acc.eaq = ja.at("eaq");
  acc.total = ja.at("total");
  acc.steps = ja.at("steps");
  std::optional<double> best;
  if (!meta.at("best_dev").is_null()) best = meta.at("best_dev").get<double>();
  return TrainState{config,
                    meta.at("vocab").get<std::vector<std::string>>(),
                    std::move(model),
                    std::move(opt),
                    meta.at("step").get<std::uint64_t>(),
                    acc,
                    best,
                    meta.at("best_step").get<std::uint64_t>()};
}

TrainSummary train(const TrainConfig& config, const std::vector<TripletExample>& corpus,
                   const std::vector<TripletExample>& dev, const TrainOutputs& outputs,
                   const std::optional<std::filesystem::path>& resume) {
  if (corpus.empty()) throw DataError("train: empty corpus");
  config.validate();
  std::optional<TrainState> state;
  std::optional<WordTokenizer> tok;
  if (resume) {
    state.emplace(load_state(*resume));
    if (state->config.hash() != config.hash()) {
      throw ConfigError("checkpoint config hash " + state->config.hash() + " does not match run config " + config.hash());
    }
    // Run length may differ from the interrupted run.
    state->config.epochs = config.epochs;
    state->config.max_steps = config.max_steps;
    tok.emplace(WordTokenizer::from_tokens(state->vocab));
  } else {
    tok.emplace(build_tokenizer(corpus, config.templates));
    state.emplace(init_state(config, *tok));
  }
  auto& st = *state;
  const auto w = st.config.effective_weights();

  std::vector<ExampleInstances> instances;
  instances.reserve(corpus.size());
  for (const auto& ex : corpus) instances.push_back(prepare_instances(ex, *tok, st.config));

  const std::size_t n = corpus.size();
  const std::uint64_t per_epoch = (n + st.config.batch_size - 1) / st.config.batch_size;
  const std::uint64_t total = planned_steps(st.config, n);

  std::ofstream log(outputs.log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + outputs.log_path.string());

  TrainSummary summary;
  std::vector<std::size_t> order;
  std::uint64_t order_epoch = ~std::uint64_t{0};
  while (st.step < total) {
    const std::uint64_t epoch = st.step / per_epoch;
    const std::uint64_t b = st.step % per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(st.config.seed, epoch, n);
      order_epoch = epoch;
    }
    std::vector<const ExampleInstances*> batch;
    for (std::size_t i = b * st.config.batch_size; i < std::min<std::size_t>(n, (b + 1) * st.config.batch_size); ++i) {
      batch.push_back(&instances[order[i]]);
    }
    auto r = train_step(st, batch, *tok);
    log << step_record(st.step, epoch, r) << '\n';

    auto& acc = st.epoch_acc;
    acc.seq += r.loss.l_seq;
    acc.total += r.loss.l_total;
    if (r.loss.l_qae) acc.qae += *r.loss.l_qae;
    if (r.loss.l_kl) acc.kl += *r.loss.l_kl;
    if (r.loss.l_eaq) acc.eaq += *r.loss.l_eaq;
    ++acc.steps;

    if (b + 1 == per_epoch) {
      const double steps = static_cast<double>(acc.steps);
      json rec;
      rec["type"] = "epoch";
      rec["epoch"] = epoch;
      rec["step"] = st.step;
      if (w.use_qae) rec["l_qae"] = acc.qae / steps;
      rec["l_seq"] = acc.seq / steps;
      if (w.use_kl) rec["l_kl"] = acc.kl / steps;
      if (w.use_eaq) rec["l_eaq"] = acc.eaq / steps;
      rec["l_total"] = acc.total / steps;
      const double dev_l_seq = dev.empty() ? acc.seq / steps : mean_l_seq(st.model, *tok, st.config, dev);
      rec["dev_l_seq"] = dev_l_seq;
      rec["dev_source"] = dev.empty() ? "train" : "dev";
      const bool best = !st.best_dev || dev_l_seq < *st.best_dev;
      rec["best"] = best;
      summary.final_epoch_l_seq = acc.seq / steps;
      acc = EpochAccumulator{};
      if (best) {
        st.best_dev = dev_l_seq;
        st.best_step = st.step;
        save_state(outputs.best_checkpoint, st);
      }
      log << rec.dump() << '\n';
    }
  }
  log.flush();
  save_state(outputs.last_checkpoint, st);
  if (!st.best_dev) save_state(outputs.best_checkpoint, st);
  summary.steps = st.step;
  summary.best_dev = st.best_dev;
  summary.best_step = st.best_step;
  return summary;
}

}  // namespace tqa
