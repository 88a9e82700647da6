#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "tripletqa/cli.hpp"

using namespace tqa;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "tqa_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

const std::string cfg = std::string(TQA_TEST_DATA) + "/toy.cfg";

}  // namespace

TEST_CASE("usage errors") {
  auto none = run({});
  CHECK(none.code == 2);
  CHECK(none.err.find("category=usage") != std::string::npos);
  CHECK(none.err.find("prepare-data") != std::string::npos);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"train", "--data", "x.jsonl", "--bogus"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("missing inputs are io errors") {
  auto dir = scratch("missing");
  auto r = run({"train", "--data", (dir / "nope.jsonl").string(), "--out", (dir / "run").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("category=io") != std::string::npos);
  auto m = read_json(dir / "run" / "manifest.json");
  CHECK(m["status"] == "error");
}

TEST_CASE("config errors exit with the usage class") {
  auto dir = scratch("badcfg");
  auto data = dir / "toy.jsonl";
  REQUIRE(run({"prepare-data", "--format", "synthetic", "--examples", "4", "--out", data.string()}).code == 0);
  auto r = run({"train", "--data", data.string(), "--set", "nonsense=1", "--out", (dir / "run").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("category=config") != std::string::npos);
}

TEST_CASE("end-to-end pipeline writes artifacts and manifests") {
  auto dir = scratch("e2e");
  auto data = dir / "toy.jsonl";
  auto prep = run({"prepare-data", "--format", "synthetic", "--examples", "8", "--seed", "2", "--out", data.string()});
  REQUIRE(prep.code == 0);
  CHECK(fs::exists(data));
  CHECK(fs::exists(data.string() + ".stats.json"));
  CHECK(read_json(data.string() + ".manifest.json")["command"] == "prepare-data");

  auto train_dir = dir / "train";
  auto tr = run({"train", "--config", cfg, "--data", data.string(), "--out", train_dir.string(), "--set", "epochs=3",
                 "--seed", "5"});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  for (const char* f : {"train_log.jsonl", "last.ckpt", "best.ckpt", "config.txt", "manifest.json"}) {
    CHECK(fs::exists(train_dir / f));
  }
  auto provenance = slurp(train_dir / "config.txt");
  CHECK(provenance.find("epochs = 3  # cli") != std::string::npos);
  CHECK(provenance.find("seed = 5  # cli") != std::string::npos);
  CHECK(provenance.find("lr = 0.01  # file") != std::string::npos);
  CHECK(provenance.find("alpha_qae = 0.3  # default") != std::string::npos);
  auto manifest = read_json(train_dir / "manifest.json");
  CHECK(manifest["status"] == "ok");
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(manifest["checksums"].contains("log"));
  CHECK(manifest["inputs"]["data"]["checksum"].get<std::string>().size() == 16);

  auto ckpt = (train_dir / "last.ckpt").string();
  auto eval_dir = dir / "eval";
  auto ev = run({"evaluate", "--checkpoint", ckpt, "--data", data.string(), "--tasks", "qa,evidence,qea,restore",
                 "--max-new", "6", "--out", eval_dir.string()});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  auto report = read_json(eval_dir / "report.json");
  CHECK(report["config_hash"] == manifest["config_hash"]);
  CHECK(report["examples"] == 8);
  CHECK(fs::exists(eval_dir / "predictions.jsonl"));

  auto records = (eval_dir / "records.jsonl").string();
  auto groups = run({"analyze", "--kind", "groups", "--records", records, "--out", (dir / "groups").string()});
  CHECK(groups.code == 0);
  CHECK(read_json(dir / "groups" / "report.json")["groups"].size() == 4);
  auto corr = run({"analyze", "--kind", "correlation", "--records", records, "--out", (dir / "corr").string()});
  CHECK(corr.code == 0);
  CHECK(read_json(dir / "corr" / "report.json")["reduced"] == true);
  auto hal = run({"analyze", "--kind", "hallucination", "--checkpoint", ckpt, "--data", data.string(), "--max-new",
                  "4", "--out", (dir / "hal").string()});
  CHECK(hal.code == 0);
  auto att = run({"analyze", "--kind", "attention", "--checkpoint", ckpt, "--data", data.string(), "--out",
                  (dir / "att").string()});
  CHECK(att.code == 0);
  CHECK(read_json(dir / "att" / "report.json")["layers"].size() == 1);
  CHECK(fs::exists(dir / "att" / "data.tsv"));
  CHECK(run({"analyze", "--kind", "nope", "--out", (dir / "x").string()}).code == 2);

  auto gen = run({"generate", "--checkpoint", ckpt, "--data", data.string(), "--id", "syn-0-q0", "--max-new", "4",
                  "--out", (dir / "gen.jsonl").string()});
  CHECK(gen.code == 0);
  CHECK(fs::exists(dir / "gen.jsonl.manifest.json"));
  CHECK(run({"generate", "--checkpoint", ckpt, "--data", data.string(), "--id", "missing", "--out",
             (dir / "gen2.jsonl").string()})
            .code == 4);
}

TEST_CASE("identical runs give byte-identical logs and reports") {
  auto dir = scratch("determinism");
  auto data = dir / "toy.jsonl";
  REQUIRE(run({"prepare-data", "--format", "synthetic", "--examples", "6", "--out", data.string()}).code == 0);
  for (const char* name : {"a", "b"}) {
    auto out = dir / name;
    REQUIRE(run({"train", "--config", cfg, "--data", data.string(), "--out", out.string()}).code == 0);
    REQUIRE(run({"evaluate", "--checkpoint", (out / "last.ckpt").string(), "--data", data.string(), "--max-new", "4",
                 "--out", (out / "eval").string()})
                .code == 0);
  }
  CHECK(slurp(dir / "a" / "train_log.jsonl") == slurp(dir / "b" / "train_log.jsonl"));
  CHECK(slurp(dir / "a" / "eval" / "report.json") == slurp(dir / "b" / "eval" / "report.json"));
  CHECK(slurp(dir / "a" / "eval" / "predictions.jsonl") == slurp(dir / "b" / "eval" / "predictions.jsonl"));
}

TEST_CASE("sweep enumerates the weight grid") {
  auto dir = scratch("sweep");
  auto r = run({"sweep", "--grid", "0.1,0.3,0.5,0.7,1.0", "--out", dir.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("125 configurations") != std::string::npos);
  std::ifstream in(dir / "sweep.jsonl");
  std::string line;
  std::set<std::string> hashes;
  int n = 0;
  while (std::getline(in, line)) {
    hashes.insert(json::parse(line)["config_hash"].get<std::string>());
    ++n;
  }
  CHECK(n == 125);
  CHECK(hashes.size() == 125);
}

TEST_CASE("cache directory is the default output root") {
  auto dir = scratch("cache");
  setenv(kCacheDirEnv, dir.string().c_str(), 1);
  auto r = run({"sweep", "--grid", "0.5"});
  unsetenv(kCacheDirEnv);
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "sweep" / "sweep.jsonl"));
  CHECK(run({"sweep", "--grid", "0.5"}).code == 2);
}
