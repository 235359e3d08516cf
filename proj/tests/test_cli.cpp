#include "common.hpp"

#include "segalign/cli.hpp"
#include "segalign/config.hpp"
#include "segalign/corpus.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iterator>

using namespace segalign;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Runs the built tool with stderr captured; returns the exit status.
int run(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(SEGALIGN_CLI_PATH) + " --log-level warn " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string gen_json() {
  auto j = nlohmann::json::parse(gen_config_to_json(testing::tiny_corpus()));
  return j.dump();
}

}  // namespace

TEST_CASE("gen-synth is deterministic") {
  auto dir = testing::temp_dir("cli_gen");
  write(dir / "gen.json", gen_json());
  REQUIRE(run("--seed 5 gen-synth --out " + (dir / "a").string() + " --config " + (dir / "gen.json").string(), dir / "e1") == 0);
  REQUIRE(run("--seed 5 gen-synth --out " + (dir / "b").string() + " --config " + (dir / "gen.json").string(), dir / "e2") == 0);
  int files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    CHECK(slurp(entry.path()) == slurp(dir / "b" / entry.path().filename()));
    ++files;
  }
  CHECK(files >= 3);
  CHECK(run("validate --data " + (dir / "a").string(), dir / "e3") == 0);
}

TEST_CASE("usage and validation exit codes") {
  auto dir = testing::temp_dir("cli_codes");
  write(dir / "gen.json", gen_json());
  REQUIRE(run("gen-synth --out " + (dir / "data").string() + " --config " + (dir / "gen.json").string(), dir / "e") == 0);
  const std::string data = " --data " + (dir / "data").string();
  const std::string out = " --out " + (dir / "run").string();

  CHECK(run("train" + out, dir / "e") == kUsage);
  CHECK(slurp(dir / "e").find("--data") != std::string::npos);
  CHECK(run("no-such-command", dir / "e") == kUsage);
  CHECK(run("", dir / "e") == kUsage);

  write(dir / "neg.json", R"({"lambda": -1, "head": "regularized"})");
  CHECK(run("train --config " + (dir / "neg.json").string() + data + out, dir / "e") == kValidation);
  CHECK(slurp(dir / "e").find("lambda") != std::string::npos);

  write(dir / "foo.json", R"({"foo": 1})");
  CHECK(run("train --config " + (dir / "foo.json").string() + data + out, dir / "e") == kValidation);
  CHECK(slurp(dir / "e").find("foo") != std::string::npos);

  write(dir / "type.json", R"({"lr": "fast"})");
  CHECK(run("train --config " + (dir / "type.json").string() + data + out, dir / "e") == kValidation);
  CHECK(slurp(dir / "e").find("lr") != std::string::npos);

  CHECK(run("train" + data + out + " --set nonsense", dir / "e") == kValidation);
  CHECK(run("eval-retrieval" + data + " --checkpoint " + (dir / "missing.ckpt").string() + out, dir / "e") == kRuntime);
}

TEST_CASE("config defaults and precedence") {
  const auto d = config_from_json("{}");
  CHECK(d.lr == 2e-5);
  CHECK(d.lr_decay == 0.95);
  CHECK(d.lr_decay_every == 3);
  CHECK(d.batch_size == 21);
  CHECK(d.n_neg == 1024);
  CHECK(d.n_hard_max == 512);
  CHECK(d.nfc_warmup_steps == 100);

  CHECK(config_from_json(R"({"lr": 3e-4})", {{"lr", "1e-4"}}).lr == 1e-4);
  CHECK(config_from_json(R"({"lr": 3e-4})").lr == 3e-4);
  CHECK(config_from_json("{}", {{"head", "vq"}}).head == "vq");
  CHECK_THROWS_AS(config_from_json("{}", {{"foo", "1"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json("[1]"), ConfigError);
  CHECK(parse_override("a=b=c") == std::pair<std::string, std::string>{"a", "b=c"});
  CHECK_THROWS_AS(parse_override("novalue"), ConfigError);

  const auto c = testing::tiny_config();
  CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
  CHECK(config_digest(config_from_json(config_to_json(c))) == config_digest(c));
}

TEST_CASE("train writes a resolved config that reproduces the run") {
  auto dir = testing::temp_dir("cli_train");
  write(dir / "gen.json", gen_json());
  REQUIRE(run("gen-synth --out " + (dir / "data").string() + " --config " + (dir / "gen.json").string(), dir / "e") == 0);
  auto cfg = testing::tiny_config();
  cfg.epochs = 1;
  write(dir / "cfg.json", config_to_json(cfg));
  const std::string data = " --data " + (dir / "data").string();
  REQUIRE(run("train --config " + (dir / "cfg.json").string() + " --set lr=5e-4" + data + " --out " + (dir / "r1").string(),
              dir / "e") == 0);
  const auto resolved = load_config(dir / "r1" / "config.json");
  CHECK(resolved.lr == 5e-4);
  CHECK(resolved.epochs == 1);
  REQUIRE(run("train --config " + (dir / "r1" / "config.json").string() + data + " --out " + (dir / "r2").string(),
              dir / "e") == 0);
  CHECK(slurp(dir / "r1" / "checkpoints" / "epoch_001.ckpt") == slurp(dir / "r2" / "checkpoints" / "epoch_001.ckpt"));
  CHECK(slurp(dir / "r1" / "config.json") == slurp(dir / "r2" / "config.json"));

  const std::string ck = " --checkpoint " + (dir / "r1" / "checkpoints" / "epoch_001.ckpt").string();
  CHECK(run("eval-retrieval" + data + ck + " --out " + (dir / "rep" / "ret").string(), dir / "e") == 0);
  CHECK(fs::exists(dir / "rep" / "ret.json"));
  CHECK(fs::exists(dir / "rep" / "ret.txt"));
  CHECK(run("eval-simi" + data + ck + " --out " + (dir / "rep" / "simi").string(), dir / "e") == 0);
  CHECK(run("eval-simi" + data + ck + " --point nowhere --out " + (dir / "rep" / "x").string(), dir / "e") != 0);
  CHECK(run("segment" + data + ck + " --out " + (dir / "rep" / "seg.json").string(), dir / "e") == 0);
  auto seg = nlohmann::json::parse(slurp(dir / "rep" / "seg.json"));
  const auto archive = read_archive(dir / "data");
  CHECK(seg.size() == archive.utterances.size());
  CHECK(run("embed" + data + ck + " --out " + (dir / "rep" / "emb").string(), dir / "e") == 0);
  auto emb = nlohmann::json::parse(slurp(dir / "rep" / "emb.json"));
  CHECK(emb.at("rows") == archive.utterances.size());
  CHECK(emb.at("cols") == archive.images.cols());
  CHECK(fs::file_size(dir / "rep" / "emb.f32") == archive.utterances.size() * std::size_t(archive.images.cols()) * 4);
}

TEST_CASE("in-process dispatch") {
  const char* help[] = {"segalign", "--help"};
  CHECK(parse_and_dispatch(2, help) == kOk);
  const char* bad[] = {"segalign", "validate"};
  CHECK(parse_and_dispatch(2, bad) == kUsage);
}
