#include "tripletqa/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "tripletqa/analysis.hpp"
#include "tripletqa/config.hpp"
#include "tripletqa/corpus.hpp"
#include "tripletqa/evaluator.hpp"
#include "tripletqa/hash.hpp"
#include "tripletqa/synthetic.hpp"
#include "tripletqa/trainer.hpp"

namespace tqa {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage:
    case ErrorCategory::config: return 2;
    case ErrorCategory::io: return 3;
    case ErrorCategory::data: return 4;
    case ErrorCategory::training: return 5;
    case ErrorCategory::internal: return 1;
  }
  return 1;
}

namespace {

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects the run manifest while a command executes.
struct Run {
  std::string command;
  std::vector<std::string> args;
  std::optional<fs::path> manifest_path;
  json inputs = json::object();
  json outputs = json::object();
  json extra = json::object();
  std::string config_hash;
  std::optional<std::uint64_t> seed;
  std::string started_at = utc_now();

  void input(const std::string& name, const fs::path& p) {
    inputs[name] = {{"path", p.string()}, {"checksum", fs::exists(p) ? file_checksum(p) : ""}};
  }
  void output(const std::string& name, const fs::path& p) { outputs[name] = p.string(); }

  void write(const std::string& status, const std::string& error_text) {
    if (!manifest_path) return;
    json m;
    m["command"] = command;
    m["args"] = args;
    m["config_hash"] = config_hash;
    m["seed"] = seed ? json(*seed) : json(nullptr);
    m["inputs"] = inputs;
    json outs = json::object();
    json sums = json::object();
    for (auto& [name, p] : outputs.items()) {
      fs::path path = p.get<std::string>();
      outs[name] = path.string();
      if (fs::is_regular_file(path)) sums[name] = file_checksum(path);
    }
    m["outputs"] = outs;
    m["checksums"] = sums;
    m["started_at"] = started_at;
    m["finished_at"] = utc_now();
    m["status"] = status;
    if (!error_text.empty()) m["error"] = error_text;
    if (!extra.empty()) m["details"] = extra;
    std::ofstream f(*manifest_path, std::ios::trunc);
    if (f) f << m.dump(2) << '\n';
  }
};

fs::path resolve_out(const std::string& given, const std::string& command) {
  if (!given.empty()) return given;
  const char* root = std::getenv(kCacheDirEnv);
  if (!root || !*root) throw UsageError("--out is required when " + std::string(kCacheDirEnv) + " is unset");
  return fs::path(root) / command;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw IoError("no such file: " + p.string());
}

struct Loaded {
  TrainState state;
  WordTokenizer tok;
};

Loaded load_checkpoint(const fs::path& path) {
  require_file(path);
  auto state = load_state(path);
  auto tok = WordTokenizer::from_tokens(state.vocab);
  return Loaded{std::move(state), std::move(tok)};
}

std::vector<TripletExample> load_data(const fs::path& path) {
  require_file(path);
  return read_canonical(path);
}

json stats_json(const CorpusStats& s, const LoadResult* lr) {
  auto summary = [](const Summary& x) { return json{{"mean", x.mean}, {"q1", x.q1}, {"median", x.median}, {"q3", x.q3}}; };
  json j;
  j["examples"] = s.example_count;
  j["doc_length"] = summary(s.doc_length);
  j["sentence_count"] = summary(s.sentence_count);
  j["missing_evidence"] = s.missing_evidence;
  j["length_groups"] = s.length_groups;
  j["sentence_groups"] = s.sentence_groups;
  if (lr) {
    j["skipped_no_answer"] = lr->skipped_no_answer;
    j["rejected"] = json::array();
    for (const auto& r : lr->rejected) j["rejected"].push_back({{"record", r.record_id}, {"reason", r.reason}});
  }
  return j;
}

// ---- prepare-data

struct PrepareOpts {
  std::string format, input, out;
  bool join_answers = false;
  int evidence_base = 0;
  std::size_t examples = 20, sentences = 4;
  std::uint64_t seed = 0;
  bool answer_in_question = false;
};

void run_prepare(const PrepareOpts& o, Run& run, std::ostream& out) {
  fs::path dst = resolve_out(o.out, "prepare-data");
  if (fs::is_directory(dst)) dst /= "corpus.jsonl";
  run.manifest_path = dst.string() + ".manifest.json";
  if (dst.has_parent_path()) ensure_dir(dst.parent_path());

  LoadResult lr;
  if (o.format == "synthetic") {
    SyntheticOptions so;
    so.examples = o.examples;
    so.sentences = o.sentences;
    so.seed = o.seed;
    so.answer_in_question = o.answer_in_question;
    lr.examples = synthetic_corpus(so);
    run.seed = o.seed;
  } else {
    if (o.input.empty()) throw UsageError("--input is required for format " + o.format);
    require_file(o.input);
    run.input("input", o.input);
    if (o.format == "multirc") {
      MultircOptions mo;
      mo.join_answers = o.join_answers;
      mo.evidence_base = o.evidence_base;
      lr = load_multirc(o.input, mo);
    } else if (o.format == "qasper") {
      lr = load_qasper(o.input);
    } else if (o.format == "canonical") {
      lr.examples = read_canonical(o.input);
    } else {
      throw UsageError("unknown format '" + o.format + "'");
    }
  }
  write_canonical(dst, lr.examples);
  run.output("corpus", dst);
  fs::path stats = dst.string() + ".stats.json";
  if (!lr.examples.empty()) {
    write_text(stats, stats_json(compute_stats(lr.examples), &lr).dump(2) + "\n");
    run.output("stats", stats);
  }
  run.extra["examples"] = lr.examples.size();
  run.extra["rejected"] = lr.rejected.size();
  run.extra["skipped_no_answer"] = lr.skipped_no_answer;
  out << "wrote " << lr.examples.size() << " examples to " << dst.string() << " (rejected " << lr.rejected.size()
      << ", skipped without answer " << lr.skipped_no_answer << ")\n";
}

// ---- train

struct TrainOpts {
  std::string config, data, dev, out, resume;
  std::vector<std::string> sets;
  std::map<std::string, std::string> shortcuts;
};

ConfigMap resolve_config(const std::string& file, const std::vector<std::string>& sets,
                         const std::map<std::string, std::string>& shortcuts) {
  auto cfg = ConfigMap::defaults();
  if (!file.empty()) {
    require_file(file);
    cfg.load_file(file);
  }
  for (const auto& s : sets) cfg.set_assignment(s, ConfigSource::cli);
  for (const auto& [k, v] : shortcuts) cfg.set(k, v, ConfigSource::cli);
  return cfg;
}

void run_train(const TrainOpts& o, Run& run, std::ostream& out) {
  fs::path dir = resolve_out(o.out, "train");
  ensure_dir(dir);
  run.manifest_path = dir / "manifest.json";
  auto cfg = resolve_config(o.config, o.sets, o.shortcuts);
  if (!o.config.empty()) run.input("config", o.config);
  auto config = cfg.to_train_config();
  run.config_hash = config.hash();
  run.seed = config.seed;
  write_text(dir / "config.txt", cfg.provenance());
  run.output("config", dir / "config.txt");
  out << cfg.provenance();

  run.input("data", o.data);
  auto corpus = load_data(o.data);
  std::vector<TripletExample> dev;
  if (!o.dev.empty()) {
    run.input("dev", o.dev);
    dev = load_data(o.dev);
  }
  std::optional<fs::path> resume;
  if (!o.resume.empty()) {
    require_file(o.resume);
    run.input("resume", o.resume);
    resume = o.resume;
  }
  TrainOutputs outputs{dir / "train_log.jsonl", dir / "last.ckpt", dir / "best.ckpt"};
  try {
    auto summary = train(config, corpus, dev, outputs, resume);
    run.extra["steps"] = summary.steps;
    run.extra["best_step"] = summary.best_step;
    run.extra["best_dev_l_seq"] = summary.best_dev ? json(*summary.best_dev) : json(nullptr);
    out << "trained " << summary.steps << " steps; final epoch l_seq " << summary.final_epoch_l_seq << "\n";
  } catch (const TrainingError& e) {
    write_text(dir / "failure_dump.json", e.dump() + "\n");
    run.output("failure_dump", dir / "failure_dump.json");
    run.output("log", outputs.log_path);
    throw;
  }
  run.output("log", outputs.log_path);
  run.output("last_checkpoint", outputs.last_checkpoint);
  run.output("best_checkpoint", outputs.best_checkpoint);
}

// ---- evaluate

struct EvalOpts {
  std::string checkpoint, data, out, tasks = "qa";
  bool with_evidence = false;
  std::size_t max_len = 0, max_new = 0;
};

void run_evaluate(const EvalOpts& o, Run& run, std::ostream& out) {
  fs::path dir = resolve_out(o.out, "evaluate");
  ensure_dir(dir);
  run.manifest_path = dir / "manifest.json";
  EvalOptions opts;
  opts.tasks = parse_eval_tasks(o.tasks);
  opts.with_evidence = o.with_evidence;
  run.input("checkpoint", o.checkpoint);
  run.input("data", o.data);
  auto [state, tok] = load_checkpoint(o.checkpoint);
  auto corpus = load_data(o.data);
  opts.max_len = o.max_len ? o.max_len : state.config.max_len;
  if (o.max_new) opts.max_answer_tokens = opts.max_evidence_tokens = opts.max_question_tokens = o.max_new;
  run.config_hash = state.config.hash();
  run.seed = state.config.seed;

  auto report = evaluate(state.model, tok, corpus, state.config.templates, opts);
  report.config_hash = run.config_hash;
  write_predictions(dir / "predictions.jsonl", report.predictions);
  write_records(dir / "records.jsonl", report.records);
  write_text(dir / "report.json", report.to_json() + "\n");
  run.output("predictions", dir / "predictions.jsonl");
  run.output("records", dir / "records.jsonl");
  run.output("report", dir / "report.json");
  for (const auto& r : report.records) {
    for (const auto& e : r.errors) out << "generation failure on " << r.id << ": " << e << "\n";
  }
  out << report.to_json() << "\n";
}

// ---- analyze

struct AnalyzeOpts {
  std::string kind, records, checkpoint, data, out, key = "doc_length";
  std::size_t bins = 50, max_len = 0, max_new = 32;
};

void run_analyze(const AnalyzeOpts& o, Run& run, std::ostream& out) {
  fs::path dir = resolve_out(o.out, "analyze");
  ensure_dir(dir);
  run.manifest_path = dir / "manifest.json";
  run.extra["kind"] = o.kind;
  std::string report, tsv;
  if (o.kind == "groups" || o.kind == "correlation") {
    if (o.records.empty()) throw UsageError("--records is required for --kind " + o.kind);
    require_file(o.records);
    run.input("records", o.records);
    auto records = read_records(o.records);
    if (o.kind == "groups") {
      auto r = grouped_f1(records, group_key_from_string(o.key));
      report = r.to_json();
      tsv = r.to_tsv();
    } else {
      auto r = correlation(records, o.bins);
      report = r.to_json();
      tsv = r.to_tsv();
    }
  } else if (o.kind == "hallucination" || o.kind == "attention") {
    if (o.checkpoint.empty() || o.data.empty()) throw UsageError("--checkpoint and --data are required for --kind " + o.kind);
    run.input("checkpoint", o.checkpoint);
    run.input("data", o.data);
    auto [state, tok] = load_checkpoint(o.checkpoint);
    auto corpus = load_data(o.data);
    run.config_hash = state.config.hash();
    run.seed = state.config.seed;
    const std::size_t max_len = o.max_len ? o.max_len : state.config.max_len;
    if (o.kind == "hallucination") {
      auto r = hallucination_probe(state.model, tok, corpus, state.config.templates, max_len, o.max_new);
      report = r.to_json();
      tsv = r.to_tsv();
    } else {
      auto r = attention_stats(state.model, tok, corpus, state.config.templates, max_len);
      report = r.to_json();
      tsv = r.to_tsv();
    }
  } else {
    throw UsageError("unknown analysis kind '" + o.kind + "'");
  }
  write_text(dir / "report.json", report + "\n");
  write_text(dir / "data.tsv", tsv);
  run.output("report", dir / "report.json");
  run.output("data", dir / "data.tsv");
  out << report << "\n";
}

// ---- generate

struct GenerateOpts {
  std::string checkpoint, data, out, task = "qa", id;
  std::size_t max_len = 0, max_new = 32;
};

void run_generate(const GenerateOpts& o, Run& run, std::ostream& out) {
  fs::path dst = resolve_out(o.out, "generate");
  if (fs::is_directory(dst)) dst /= "predictions.jsonl";
  if (dst.has_parent_path()) ensure_dir(dst.parent_path());
  run.manifest_path = dst.string() + ".manifest.json";
  run.input("checkpoint", o.checkpoint);
  run.input("data", o.data);
  auto [state, tok] = load_checkpoint(o.checkpoint);
  auto corpus = load_data(o.data);
  run.config_hash = state.config.hash();
  run.seed = state.config.seed;
  const auto task = eval_task_from_string(o.task);
  const std::size_t max_len = o.max_len ? o.max_len : state.config.max_len;
  const auto& templates = state.config.templates;

  std::vector<Prediction> preds;
  for (const auto& ex : corpus) {
    if (!o.id.empty() && ex.id != o.id) continue;
    auto c = slot_contents(ex);
    Task t = Task::qa_plain;
    switch (task) {
      case EvalTask::qa: c.evidence.clear(); c.answer.clear(); t = Task::qa_plain; break;
      case EvalTask::evidence: c.evidence.clear(); t = Task::qae; break;
      case EvalTask::qea: c.answer.clear(); t = Task::qea; break;
      case EvalTask::restore: c.question.clear(); t = Task::eaq; break;
    }
    auto text = generate_text(state.model, tok, t, c, templates, max_len, o.max_new);
    preds.push_back({ex.id, o.task, text, normalize_answer(text)});
    out << ex.id << "\t" << text << "\n";
  }
  if (!o.id.empty() && preds.empty()) throw DataError("no example with id '" + o.id + "'");
  write_predictions(dst, preds);
  run.output("predictions", dst);
}

// ---- sweep

struct SweepOpts {
  std::string grid = "0.1,0.3,0.5,0.7,1.0", config, data, dev, out;
  std::vector<std::string> sets;
  bool execute = false;
};

void run_sweep(const SweepOpts& o, Run& run, std::ostream& out) {
  fs::path dir = resolve_out(o.out, "sweep");
  ensure_dir(dir);
  run.manifest_path = dir / "manifest.json";
  auto base = resolve_config(o.config, o.sets, {});
  if (!o.config.empty()) run.input("config", o.config);
  auto grid = alpha_grid(parse_number_list(o.grid));
  run.config_hash = base.to_train_config().hash();
  run.seed = base.to_train_config().seed;
  if (o.execute) {
    if (o.data.empty()) throw UsageError("--run needs --data");
    run.input("data", o.data);
  }
  std::vector<TripletExample> corpus, dev;
  if (o.execute) corpus = load_data(o.data);
  if (o.execute && !o.dev.empty()) dev = load_data(o.dev);

  std::ofstream listing(dir / "sweep.jsonl", std::ios::trunc);
  if (!listing) throw IoError("cannot write " + (dir / "sweep.jsonl").string());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto cfg = base;
    auto num = [](double x) {
      std::ostringstream s;
      s.precision(17);
      s << x;
      return s.str();
    };
    cfg.set("alpha_qae", num(grid[i][0]), ConfigSource::cli);
    cfg.set("alpha_qea", num(grid[i][1]), ConfigSource::cli);
    cfg.set("alpha_eaq", num(grid[i][2]), ConfigSource::cli);
    auto tc = cfg.to_train_config();
    json rec{{"index", i}, {"alpha_qae", grid[i][0]}, {"alpha_qea", grid[i][1]}, {"alpha_eaq", grid[i][2]},
             {"config_hash", tc.hash()}};
    if (o.execute) {
      char name[16];
      std::snprintf(name, sizeof name, "run-%03zu", i);
      fs::path rd = dir / name;
      ensure_dir(rd);
      write_text(rd / "config.txt", cfg.provenance());
      auto summary = train(tc, corpus, dev, {rd / "train_log.jsonl", rd / "last.ckpt", rd / "best.ckpt"});
      rec["best_dev_l_seq"] = summary.best_dev ? json(*summary.best_dev) : json(nullptr);
      rec["dir"] = rd.string();
    }
    listing << rec.dump() << '\n';
  }
  listing.close();
  run.output("listing", dir / "sweep.jsonl");
  run.extra["configurations"] = grid.size();
  out << grid.size() << " configurations enumerated\n";
}

void add_train_shortcuts(CLI::App* cmd, std::map<std::string, std::string>& shortcuts) {
  const std::vector<std::pair<std::string, std::string>> flags = {
      {"--seed", "seed"},       {"--lr", "lr"},
      {"--epochs", "epochs"},   {"--max-steps", "max_steps"},
      {"--mode", "mode"},       {"--ablation", "ablation"},
      {"--batch-size", "batch_size"}};
  for (const auto& [flag, key] : flags) {
    cmd->add_option_function<std::string>(
        flag, [&shortcuts, key = key](const std::string& v) { shortcuts[key] = v; }, "config key " + key);
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Triplet generation training and evaluation toolkit", "tripletqa"};
  app.require_subcommand(1);

  PrepareOpts prep;
  auto* c_prep = app.add_subcommand("prepare-data", "convert a dataset to canonical records");
  c_prep->add_option("--format", prep.format, "multirc | qasper | canonical | synthetic")->required();
  c_prep->add_option("--input", prep.input, "source file");
  c_prep->add_option("--out", prep.out, "output file (.jsonl)");
  c_prep->add_flag("--join-answers", prep.join_answers, "multirc: one example per question with all answers");
  c_prep->add_option("--evidence-base", prep.evidence_base, "multirc: index base of sentences_used");
  c_prep->add_option("--examples", prep.examples, "synthetic: number of examples");
  c_prep->add_option("--sentences", prep.sentences, "synthetic: sentences per document");
  c_prep->add_option("--seed", prep.seed, "synthetic: seed");
  c_prep->add_flag("--answer-in-question", prep.answer_in_question, "synthetic: repeat the answer in the question");

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "train on canonical records");
  c_train->add_option("--config", tr.config, "key = value config file");
  c_train->add_option("--data", tr.data, "training records")->required();
  c_train->add_option("--dev", tr.dev, "dev records for checkpoint selection");
  c_train->add_option("--out", tr.out, "output directory");
  c_train->add_option("--set", tr.sets, "override key=value (repeatable)");
  c_train->add_option("--resume", tr.resume, "checkpoint to resume from");
  add_train_shortcuts(c_train, tr.shortcuts);

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("evaluate", "score a checkpoint");
  c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  c_eval->add_option("--data", ev.data, "records to evaluate")->required();
  c_eval->add_option("--tasks", ev.tasks, "comma list of qa, evidence, qea, restore");
  c_eval->add_flag("--with-evidence", ev.with_evidence, "answer through generated evidence");
  c_eval->add_option("--max-len", ev.max_len, "context limit (default: training max_len)");
  c_eval->add_option("--max-new", ev.max_new, "generation limit per task");
  c_eval->add_option("--out", ev.out, "output directory");

  AnalyzeOpts an;
  auto* c_an = app.add_subcommand("analyze", "grouping, correlation, hallucination and attention analyses");
  c_an->add_option("--kind", an.kind, "groups | correlation | hallucination | attention")->required();
  c_an->add_option("--records", an.records, "records.jsonl from evaluate");
  c_an->add_option("--key", an.key, "groups: doc_length | sentence_count");
  c_an->add_option("--bins", an.bins, "correlation: bin count");
  c_an->add_option("--checkpoint", an.checkpoint, "checkpoint file");
  c_an->add_option("--data", an.data, "records");
  c_an->add_option("--max-len", an.max_len, "context limit");
  c_an->add_option("--max-new", an.max_new, "hallucination: generation limit");
  c_an->add_option("--out", an.out, "output directory");

  GenerateOpts gen;
  auto* c_gen = app.add_subcommand("generate", "greedy generation for one task");
  c_gen->add_option("--checkpoint", gen.checkpoint, "checkpoint file")->required();
  c_gen->add_option("--data", gen.data, "records")->required();
  c_gen->add_option("--task", gen.task, "qa | evidence | qea | restore");
  c_gen->add_option("--id", gen.id, "only this example");
  c_gen->add_option("--max-len", gen.max_len, "context limit");
  c_gen->add_option("--max-new", gen.max_new, "generation limit");
  c_gen->add_option("--out", gen.out, "predictions file (.jsonl)");

  SweepOpts sw;
  auto* c_sweep = app.add_subcommand("sweep", "enumerate (and optionally train) loss-weight grids");
  c_sweep->add_option("--grid", sw.grid, "comma list of weight values");
  c_sweep->add_option("--config", sw.config, "base config file");
  c_sweep->add_option("--set", sw.sets, "override key=value (repeatable)");
  c_sweep->add_option("--data", sw.data, "training records (with --run)");
  c_sweep->add_option("--dev", sw.dev, "dev records (with --run)");
  c_sweep->add_flag("--run", sw.execute, "train every configuration");
  c_sweep->add_option("--out", sw.out, "output directory");

  Run run;
  run.args = args;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: category=usage message=" << e.what() << "\n" << app.help();
    return exit_code(ErrorCategory::usage);
  }

  try {
    if (c_prep->parsed()) {
      run.command = "prepare-data";
      run_prepare(prep, run, out);
    } else if (c_train->parsed()) {
      run.command = "train";
      run_train(tr, run, out);
    } else if (c_eval->parsed()) {
      run.command = "evaluate";
      run_evaluate(ev, run, out);
    } else if (c_an->parsed()) {
      run.command = "analyze";
      run_analyze(an, run, out);
    } else if (c_gen->parsed()) {
      run.command = "generate";
      run_generate(gen, run, out);
    } else if (c_sweep->parsed()) {
      run.command = "sweep";
      run_sweep(sw, run, out);
    }
    run.write("ok", "");
    return 0;
  } catch (const Error& e) {
    err << "error: category=" << category_name(e.category()) << " message=" << e.what() << "\n";
    run.write("error", e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error: category=internal message=" << e.what() << "\n";
    run.write("error", e.what());
    return exit_code(ErrorCategory::internal);
  }
}

}  // namespace tqa
