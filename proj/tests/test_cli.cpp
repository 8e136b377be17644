#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "angle/cli.hpp"
#include "angle/config.hpp"
#include "angle/data.hpp"
#include "angle/errors.hpp"

using namespace angle;
namespace fs = std::filesystem;

namespace {

// run_cli writes progress to stdout/stderr; keep the test log clean and make
// the streams assertable
struct CaptureStreams {
  std::ostringstream out, err;
  std::streambuf* old_out;
  std::streambuf* old_err;
  CaptureStreams() : old_out(std::cout.rdbuf(out.rdbuf())), old_err(std::cerr.rdbuf(err.rdbuf())) {}
  ~CaptureStreams() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
};

int run(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::vector<const char*> argv;
  argv.push_back("angle");
  for (const auto& a : args) argv.push_back(a.c_str());
  CaptureStreams capture;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  if (err_text != nullptr) *err_text = capture.err.str();
  return code;
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("angle_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// tiny topical dataset: same-topic pairs score 1, cross-topic 0
void write_datasets(const fs::path& dir) {
  spit(dir / "train.tsv",
       "red apple fruit\tripe apple fruit\t1\n"
       "green pear fruit\tsweet pear fruit\t1\n"
       "loud drum music\tsoft drum music\t1\n"
       "red apple fruit\tloud drum music\t0\n"
       "green pear fruit\tbright horn music\t0\n"
       "sweet plum fruit\tsoft horn music\t0\n");
  spit(dir / "val.tsv",
       "fresh plum fruit\tjuicy plum fruit\t1\n"
       "bright horn music\tclear horn music\t1\n"
       "juicy plum fruit\tclear horn music\t0\n"
       "fresh plum fruit\tsoft drum music\t0\n");
}

const std::vector<std::string> kTinyModel = {
    "--set", "encoder.vocab_size=128", "--set", "encoder.max_len=8",
    "--set", "encoder.dim=8",          "--set", "encoder.n_layers=1",
    "--set", "encoder.n_heads=2",      "--set", "train.epochs=2",
    "--set", "train.batch_size=4",
};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  return args;
}

}  // namespace

TEST_CASE("config trees merge strictly and take dotted overrides") {
  RunConfig defaults;
  Json base = to_json(defaults);

  Json good = Json::parse(R"({"train":{"epochs":3,"loss":{"w2":0}}})");
  merge_config(base, good);
  CHECK(base["train"]["epochs"] == 3);
  CHECK(base["train"]["loss"]["w2"] == 0.0);
  CHECK(base["encoder"]["dim"] == defaults.encoder.dim);

  Json typo = Json::parse(R"({"train":{"epoch":3}})");
  try {
    merge_config(base, typo);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epoch") != std::string::npos);
  }

  apply_override(base, "encoder.pooling=last-avg");
  CHECK(base["encoder"]["pooling"] == "last-avg");
  apply_override(base, "train.learning_rate=0.001");
  CHECK(base["train"]["learning_rate"] == 0.001);
  CHECK_THROWS_AS(apply_override(base, "no.such.key=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(base, "missing an equals sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(base, "train=7"), ConfigError);  // section, not leaf

  const RunConfig parsed = run_config_from_json(base);
  CHECK(parsed.encoder.pooling == Pooling::LastAvg);
  CHECK(parsed.train.learning_rate == 0.001);
  CHECK(parsed.train.loss.w2 == 0.0);

  // round trip through json preserves every field
  const Json again = to_json(parsed);
  CHECK(again == base);
}

TEST_CASE("load_run_config layers file and overrides onto defaults") {
  const fs::path dir = fresh_dir("config");
  spit(dir / "config.json", R"({"train":{"epochs":7},"encoder":{"dim":16}})");
  const RunConfig cfg = load_run_config((dir / "config.json").string(),
                                        {"train.epochs=9", "train.shuffle=false"});
  CHECK(cfg.encoder.dim == 16);     // from the file
  CHECK(cfg.train.epochs == 9);     // override beats the file
  CHECK(cfg.train.shuffle == false);
  CHECK(cfg.train.batch_size == TrainConfig{}.batch_size);  // untouched default

  spit(dir / "bad.json", R"({"trian":{"epochs":7}})");
  CHECK_THROWS_AS(load_run_config((dir / "bad.json").string(), {}), ConfigError);
  CHECK_THROWS_AS(load_run_config((dir / "absent.json").string(), {}), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("cli handles help, version, and bad invocations") {
  CHECK(run({"--version"}) == 0);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"train", "--help"}) == 0);
  CHECK(run({}) == 2);               // a subcommand is required
  CHECK(run({"transmogrify"}) == 2);
  CHECK(run({"train"}) == 2);        // missing required options
  CHECK(run({"probe", "--out"}) == 2);
  CHECK(run({"eval", "--checkpoint", "x", "--data", "y", "--format", "xml",
             "--out", "z"}) == 2);
}

TEST_CASE("train produces a checkpoint, a log, and a manifest") {
  const fs::path dir = fresh_dir("train");
  write_datasets(dir);
  const fs::path out = dir / "run";

  const int code = run(with_tiny({"train", "--train", (dir / "train.tsv").string(),
                                  "--val", (dir / "val.tsv").string(),
                                  "--out", out.string()}));
  CHECK(code == 0);
  CHECK(fs::exists(out / "model.ckpt"));

  const std::string log = slurp(out / "train_log.csv");
  CHECK(log.rfind("epoch,train_loss,val_spearman_x100\n", 0) == 0);
  CHECK(line_count(log) == 3);  // header + two epochs
  // with a val set every epoch carries a metric: no empty trailing field
  CHECK(log.find(",\n") == std::string::npos);

  const Json manifest = Json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["config"]["encoder"]["dim"] == 8);
  CHECK(manifest["results"]["epochs"] == 2);
  CHECK(manifest["results"]["train_pairs"] == 6);
  CHECK(manifest["results"]["val_pairs"] == 4);
  CHECK(manifest["results"].contains("best_val_spearman_x100"));
  fs::remove_all(dir);
}

TEST_CASE("identical train runs write identical artifacts") {
  const fs::path dir = fresh_dir("train_det");
  write_datasets(dir);
  auto train_into = [&](const std::string& name) {
    const fs::path out = dir / name;
    REQUIRE(run(with_tiny({"train", "--train", (dir / "train.tsv").string(),
                           "--val", (dir / "val.tsv").string(),
                           "--out", out.string()})) == 0);
    return out;
  };
  const fs::path a = train_into("a");
  const fs::path b = train_into("b");
  CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));
  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
  fs::remove_all(dir);
}

TEST_CASE("eval scores a trained checkpoint per slice and overall") {
  const fs::path dir = fresh_dir("eval");
  write_datasets(dir);
  const fs::path run_dir = dir / "run";
  REQUIRE(run(with_tiny({"train", "--train", (dir / "train.tsv").string(),
                         "--out", run_dir.string()})) == 0);

  // jsonl with subset tags splits into named slices
  spit(dir / "sts.jsonl",
       R"({"text1":"red apple fruit","text2":"ripe apple fruit","label":1,"subset":"s1"})" "\n"
       R"({"text1":"red apple fruit","text2":"loud drum music","label":0,"subset":"s1"})" "\n"
       R"({"text1":"green pear fruit","text2":"sweet pear fruit","label":0.8,"subset":"s2"})" "\n"
       R"({"text1":"soft drum music","text2":"sweet pear fruit","label":0.1,"subset":"s2"})" "\n"
       R"({"text1":"loud drum music","text2":"soft drum music","label":0.9})" "\n"
       R"({"text1":"bright horn music","text2":"red apple fruit","label":0.2})" "\n");

  const fs::path out = dir / "scores";
  const int code = run({"eval", "--checkpoint", (run_dir / "model.ckpt").string(),
                        "--data", (dir / "sts.jsonl").string(), "--bins", "10",
                        "--out", out.string()});
  CHECK(code == 0);

  const Json results = Json::parse(slurp(out / "results.json"));
  REQUIRE(results["datasets"].size() == 3);  // s1, s2, and the file stem
  CHECK(results["datasets"][0]["name"] == "s1");
  CHECK(results["datasets"][1]["name"] == "s2");
  CHECK(results["datasets"][2]["name"] == "sts");
  CHECK(results["all"]["pairs"] == 6);
  const double rho = results["all"]["spearman_x100"].get<double>();
  CHECK(rho >= -100.0);
  CHECK(rho <= 100.0);

  for (const char* name : {"hist_all.csv", "hist_pos.csv", "hist_neg.csv"}) {
    const std::string csv = slurp(out / name);
    CHECK(csv.rfind("bin_lo,bin_hi,count\n", 0) == 0);
    CHECK(line_count(csv) == 11);  // header + ten requested bins
  }
  fs::remove_all(dir);
}

TEST_CASE("probe writes the gradient sweep") {
  const fs::path dir = fresh_dir("probe");
  const fs::path out = dir / "p";
  CHECK(run({"probe", "--points", "16", "--out", out.string()}) == 0);
  const std::string csv = slurp(out / "saturation.csv");
  CHECK(line_count(csv) == 17);

  const Json manifest = Json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["command"] == "probe");
  // the angle head keeps gradient where the cosine head saturates
  CHECK(manifest["results"]["cos_grad_at_ends"][0].get<double>() < 0.011);
  CHECK(manifest["results"]["angle_grad_at_ends"][0].get<double>() > 0.9);
  fs::remove_all(dir);
}

TEST_CASE("annotate with the offline mock yields a loadable merged pair file") {
  const fs::path dir = fresh_dir("annotate");
  spit(dir / "texts.txt", "bright day\ncalm sea\n");
  const fs::path out = dir / "anno";
  CHECK(run({"annotate", "--input", (dir / "texts.txt").string(),
             "--out", out.string()}) == 0);

  const auto pairs = load_pairs((out / "pairs.tsv").string(), PairFormat::Tsv);
  CHECK(pairs.size() == 8);  // 2 texts x 2 polarities x 2 rewrites
  // merged output is sorted by normalized key
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    CHECK(normalize_text(pairs[i - 1].text1 + "\x1f" + pairs[i - 1].text2) <=
          normalize_text(pairs[i].text1 + "\x1f" + pairs[i].text2));
  }
  const Json manifest = Json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["results"]["pairs"] == 8);
  CHECK(manifest["results"]["conflicts"] == 0);
  CHECK(manifest["inputs"]["mock"] == true);

  // several runs of the deterministic mock merge to the same pairs
  const fs::path out3 = dir / "anno3";
  CHECK(run({"annotate", "--input", (dir / "texts.txt").string(), "--runs", "3",
             "--out", out3.string()}) == 0);
  CHECK(slurp(out3 / "pairs.tsv") == slurp(out / "pairs.tsv"));
  fs::remove_all(dir);
}

TEST_CASE("annotate refuses a live endpoint without credentials") {
  const fs::path dir = fresh_dir("annotate_key");
  spit(dir / "texts.txt", "bright day\n");
  unsetenv("ANGLE_LLM_API_KEY");
  std::string err;
  const int code = run({"annotate", "--input", (dir / "texts.txt").string(),
                        "--base-url", "http://127.0.0.1:9",
                        "--out", (dir / "x").string()}, &err);
  CHECK(code == 2);
  CHECK(err.find("ANGLE_LLM_API_KEY") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("stats summarizes pair files") {
  const fs::path dir = fresh_dir("stats");
  write_datasets(dir);
  const fs::path out = dir / "s";
  CHECK(run({"stats", "--data", (dir / "train.tsv").string(),
             "--data", (dir / "val.tsv").string(),
             "--long-threshold", "2", "--out", out.string()}) == 0);
  const Json stats = Json::parse(slurp(out / "stats.json"));
  CHECK(stats["total"] == 10);
  CHECK(stats["positives"] == 5);
  CHECK(stats["negatives"] == 5);
  CHECK(stats["long_threshold"] == 2);
  // every text in the fixtures has three words
  CHECK(stats["long_proportion"] == 1.0);
  REQUIRE(stats["length_quantiles"].size() == 7);
  CHECK(stats["length_quantiles"][0]["tokens"] == 3);
  CHECK(stats["length_quantiles"][6]["tokens"] == 3);
  fs::remove_all(dir);
}

TEST_CASE("retrieve scores duplicate groups strictly and serves queries") {
  const fs::path dir = fresh_dir("retrieve");
  write_datasets(dir);
  const fs::path run_dir = dir / "run";
  REQUIRE(run(with_tiny({"train", "--train", (dir / "train.tsv").string(),
                         "--out", run_dir.string()})) == 0);
  const std::string ckpt = (run_dir / "model.ckpt").string();

  const fs::path out = dir / "r";
  CHECK(run({"retrieve", "--checkpoint", ckpt,
             "--data", (dir / "train.tsv").string(), "--out", out.string()}) == 0);
  const Json results = Json::parse(slurp(out / "retrieval.json"));
  // six distinct positive-linked texts plus three negatives-only rows
  CHECK(results["rows"] == 9);
  CHECK(results["cases"] == 6);  // three 2-member groups
  const double acc = results["strict_accuracy"].get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  const fs::path qout = dir / "q";
  CHECK(run({"retrieve", "--checkpoint", ckpt,
             "--data", (dir / "train.tsv").string(),
             "--query", "crisp apple fruit", "--k", "3",
             "--out", qout.string()}) == 0);
  const std::string tsv = slurp(qout / "retrieved.tsv");
  CHECK(tsv.rfind("rank\trow\tscore\ttext\n", 0) == 0);
  CHECK(line_count(tsv) == 4);

  // a groupless dataset cannot be scored
  spit(dir / "flat.tsv", "w x\ty z\t0\np q\tr s\t0\n");
  std::string err;
  CHECK(run({"retrieve", "--checkpoint", ckpt,
             "--data", (dir / "flat.tsv").string(),
             "--out", (dir / "f").string()}, &err) == 3);
  CHECK(err.find("no duplicate groups") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("failures map to distinct exit codes") {
  const fs::path dir = fresh_dir("exits");
  write_datasets(dir);

  // config problem -> 2
  std::string err;
  CHECK(run(with_tiny({"train", "--train", (dir / "train.tsv").string(),
                       "--out", (dir / "o1").string(),
                       "--set", "train.epcohs=3"}), &err) == 2);
  CHECK(err.find("config error") != std::string::npos);

  // missing data -> 3
  CHECK(run(with_tiny({"train", "--train", (dir / "absent.tsv").string(),
                       "--out", (dir / "o2").string()}), &err) == 3);
  CHECK(err.find("data error") != std::string::npos);

  // unscorable (constant gold) eval -> 4
  const fs::path run_dir = dir / "run";
  REQUIRE(run(with_tiny({"train", "--train", (dir / "train.tsv").string(),
                         "--out", run_dir.string()})) == 0);
  spit(dir / "const.tsv", "a b\tc d\t1\ne f\tg h\t1\n");
  CHECK(run({"eval", "--checkpoint", (run_dir / "model.ckpt").string(),
             "--data", (dir / "const.tsv").string(),
             "--out", (dir / "o3").string()}, &err) == 4);
  CHECK(err.find("numeric error") != std::string::npos);

  // unreadable format extension -> 2
  spit(dir / "pairs.dat", "a\tb\t1\n");
  CHECK(run(with_tiny({"train", "--train", (dir / "pairs.dat").string(),
                       "--out", (dir / "o4").string()}), &err) == 2);
  CHECK(err.find("pass --format") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ablate sweeps objective variants and poolings") {
  const fs::path dir = fresh_dir("ablate");
  write_datasets(dir);
  const fs::path out = dir / "ab";
  std::vector<std::string> args = with_tiny(
      {"ablate", "--train", (dir / "train.tsv").string(),
       "--val", (dir / "val.tsv").string(),
       "--poolings", "cls,last-avg", "--out", out.string()});
  args.push_back("--set");
  args.push_back("train.epochs=1");
  CHECK(run(args) == 0);

  const std::string csv = slurp(out / "ablation.csv");
  CHECK(csv.rfind("variant,pooling,val_spearman_x100\n", 0) == 0);
  CHECK(line_count(csv) == 13);  // header + 6 variants x 2 poolings
  for (const char* variant : {"all,", "no_ibn,", "no_angle,", "cosine_only,",
                              "ibn_only,", "angle_only,"}) {
    CHECK(csv.find(variant) != std::string::npos);
  }
  CHECK(csv.find(",cls,") != std::string::npos);
  CHECK(csv.find(",last-avg,") != std::string::npos);

  const Json manifest = Json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["results"]["runs"] == 12);

  // zero-epoch ablation is meaningless and refused
  std::vector<std::string> zero = with_tiny(
      {"ablate", "--train", (dir / "train.tsv").string(),
       "--val", (dir / "val.tsv").string(), "--out", (dir / "z").string()});
  zero.push_back("--set");
  zero.push_back("train.epochs=0");
  CHECK(run(zero) == 2);
  fs::remove_all(dir);
}
