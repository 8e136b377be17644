#include "angle/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "angle/annotator.hpp"
#include "angle/config.hpp"
#include "angle/data.hpp"
#include "angle/encoder.hpp"
#include "angle/errors.hpp"
#include "angle/eval.hpp"
#include "angle/objectives.hpp"
#include "angle/trainer.hpp"

namespace fs = std::filesystem;

namespace angle {

namespace {

constexpr const char* kVersion = "0.1.0";

PairFormat detect_format(const std::string& flag, const fs::path& path) {
  if (flag != "auto") return pair_format_from_string(flag);
  const std::string ext = path.extension().string();
  if (ext == ".tsv" || ext == ".txt") return PairFormat::Tsv;
  if (ext == ".jsonl" || ext == ".ndjson" || ext == ".json") return PairFormat::JsonLines;
  throw ConfigError("cannot infer pair format from '" + path.string() + "'; pass --format");
}

fs::path ensure_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

void write_json_file(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open output file: " + path.string());
  out << j.dump(2) << '\n';
  if (!out.flush()) throw DataError("failed while writing: " + path.string());
}

// No timestamps or host details: reruns of the same command on the same
// inputs produce byte-identical manifests.
void write_manifest(const fs::path& out_dir, const std::string& command, Json body) {
  body["command"] = command;
  body["version"] = kVersion;
  write_json_file(out_dir / "manifest.json", body);
}

Embedder embedder_from(const Checkpoint& ckpt) {
  return [params = ckpt.params, cfg = ckpt.encoder](const std::string& text) {
    return embed_text(text, params, cfg);
  };
}

EvalHook make_val_hook(const std::vector<LabeledPair>& val, const EncoderConfig& enc) {
  return [&val, enc](const ModelParams& params, std::size_t) {
    std::vector<double> sims;
    std::vector<double> gold;
    sims.reserve(val.size());
    gold.reserve(val.size());
    for (const LabeledPair& p : val) {
      sims.push_back(
          cosine(embed_text(p.text1, params, enc), embed_text(p.text2, params, enc)));
      gold.push_back(p.label);
    }
    return 100.0 * spearman(sims, gold);
  };
}

std::vector<std::string> load_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw DataError("no input lines in: " + path);
  return lines;
}

// Splits files into named evaluation slices: a pair's subset names its slice,
// pairs without one fall under the file's stem. Slice order follows first
// appearance.
std::vector<NamedDataset> collect_datasets(const std::vector<std::string>& files,
                                           const std::string& format_flag) {
  std::vector<NamedDataset> datasets;
  std::map<std::string, std::size_t> index;
  for (const std::string& file : files) {
    const std::string stem = fs::path(file).stem().string();
    const auto pairs = load_pairs(file, detect_format(format_flag, file));
    for (const LabeledPair& p : pairs) {
      const std::string name = p.subset.empty() ? stem : p.subset;
      auto [it, inserted] = index.emplace(name, datasets.size());
      if (inserted) datasets.push_back(NamedDataset{name, {}});
      datasets[it->second].pairs.push_back(p);
    }
  }
  return datasets;
}

struct TrainArgs {
  std::string train_path;
  std::string val_path;
  std::string format = "auto";
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void write_train_log(const fs::path& path, std::span<const EpochLog> log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open output file: " + path.string());
  out << "epoch,train_loss,val_spearman_x100\n";
  for (const EpochLog& e : log) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',';
    if (!std::isnan(e.val_metric)) out << format_double(e.val_metric);
    out << '\n';
  }
  if (!out.flush()) throw DataError("failed while writing: " + path.string());
}

int do_train(const TrainArgs& args) {
  const RunConfig cfg = load_run_config(args.config_path, args.overrides);
  const auto train_pairs = load_pairs(args.train_path, detect_format(args.format, args.train_path));
  std::vector<LabeledPair> val_pairs;
  if (!args.val_path.empty()) {
    val_pairs = load_pairs(args.val_path, detect_format(args.format, args.val_path));
  }
  const fs::path out = ensure_out_dir(args.out_dir);

  EvalHook hook;
  if (!val_pairs.empty()) hook = make_val_hook(val_pairs, cfg.encoder);
  const FitResult result = fit(train_pairs, cfg.encoder, cfg.train, hook);

  const fs::path ckpt_path = out / "model.ckpt";
  const fs::path log_path = out / "train_log.csv";
  save_checkpoint(result.checkpoint, ckpt_path.string());
  write_train_log(log_path, result.log);

  Json results{{"epochs", result.log.size()}, {"train_pairs", train_pairs.size()}};
  if (!result.log.empty()) {
    results["final_train_loss"] = result.log.back().train_loss;
  }
  if (!val_pairs.empty()) {
    double best = -std::numeric_limits<double>::infinity();
    for (const EpochLog& e : result.log) best = std::max(best, e.val_metric);
    results["val_pairs"] = val_pairs.size();
    if (!result.log.empty()) results["best_val_spearman_x100"] = best;
  }

  Json inputs{{"train", args.train_path}};
  if (!args.val_path.empty()) inputs["val"] = args.val_path;
  write_manifest(out, "train",
                 Json{{"config", to_json(cfg)},
                      {"inputs", inputs},
                      {"outputs", Json{{"checkpoint", ckpt_path.string()},
                                       {"train_log", log_path.string()}}},
                      {"results", results}});

  for (const EpochLog& e : result.log) {
    std::cout << "epoch " << e.epoch << ": train_loss=" << format_double(e.train_loss);
    if (!std::isnan(e.val_metric)) {
      std::cout << " val_spearman_x100=" << format_double(e.val_metric);
    }
    std::cout << '\n';
  }
  std::cout << "wrote " << ckpt_path.string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> data;
  std::string format = "auto";
  std::string out_dir;
  std::size_t bins = 40;
};

int do_eval(const EvalArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const auto datasets = collect_datasets(args.data, args.format);
  const fs::path out = ensure_out_dir(args.out_dir);

  const EvalReport report = evaluate_sts(datasets, embedder_from(ckpt));

  std::vector<double> all_sims;
  std::vector<double> pos_sims;
  std::vector<double> neg_sims;
  Json per_dataset = Json::array();
  std::size_t total_pairs = 0;
  for (const DatasetReport& r : report.per_dataset) {
    per_dataset.push_back(
        Json{{"name", r.name}, {"pairs", r.pairs}, {"spearman_x100", r.spearman_x100}});
    total_pairs += r.pairs;
    for (std::size_t i = 0; i < r.sims.size(); ++i) {
      all_sims.push_back(r.sims[i]);
      (r.gold[i] >= 0.5 ? pos_sims : neg_sims).push_back(r.sims[i]);
    }
  }

  const fs::path results_path = out / "results.json";
  write_json_file(results_path,
                  Json{{"datasets", per_dataset},
                       {"all", Json{{"pairs", total_pairs},
                                    {"spearman_x100", report.spearman_all_x100}}}});
  const fs::path hist_all = out / "hist_all.csv";
  const fs::path hist_pos = out / "hist_pos.csv";
  const fs::path hist_neg = out / "hist_neg.csv";
  write_histogram_csv(density_histogram(all_sims, -1.0, 1.0, args.bins), hist_all.string());
  write_histogram_csv(density_histogram(pos_sims, -1.0, 1.0, args.bins), hist_pos.string());
  write_histogram_csv(density_histogram(neg_sims, -1.0, 1.0, args.bins), hist_neg.string());

  write_manifest(out, "eval",
                 Json{{"inputs", Json{{"checkpoint", args.checkpoint}, {"data", args.data}}},
                      {"outputs", Json{{"results", results_path.string()},
                                       {"hist_all", hist_all.string()},
                                       {"hist_pos", hist_pos.string()},
                                       {"hist_neg", hist_neg.string()}}},
                      {"results", Json{{"spearman_all_x100", report.spearman_all_x100}}}});

  for (const DatasetReport& r : report.per_dataset) {
    std::cout << r.name << ": spearman_x100=" << format_double(r.spearman_x100)
              << " (pairs=" << r.pairs << ")\n";
  }
  std::cout << "all: spearman_x100=" << format_double(report.spearman_all_x100)
            << " (pairs=" << total_pairs << ")\n";
  return 0;
}

struct AblateArgs {
  std::string train_path;
  std::string val_path;
  std::string format = "auto";
  std::string config_path;
  std::vector<std::string> overrides;
  std::string poolings;  // comma-separated, empty = the config's pooling
  std::string out_dir;
};

int do_ablate(const AblateArgs& args) {
  const RunConfig base = load_run_config(args.config_path, args.overrides);
  if (base.train.epochs == 0) throw ConfigError("ablate needs train.epochs >= 1");
  const auto train_pairs = load_pairs(args.train_path, detect_format(args.format, args.train_path));
  const auto val_pairs = load_pairs(args.val_path, detect_format(args.format, args.val_path));
  const fs::path out = ensure_out_dir(args.out_dir);

  std::vector<Pooling> poolings;
  if (args.poolings.empty()) {
    poolings.push_back(base.encoder.pooling);
  } else {
    std::size_t start = 0;
    while (start <= args.poolings.size()) {
      const auto comma = args.poolings.find(',', start);
      const std::string name = args.poolings.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start);
      if (name.empty()) throw ConfigError("--poolings has an empty entry");
      poolings.push_back(pooling_from_string(name));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }

  struct Variant {
    const char* name;
    bool keep_w1, keep_w2, keep_w3;
  };
  // weights not kept are zeroed; kept ones stay at their configured values
  const Variant variants[] = {
      {"all", true, true, true},         {"no_ibn", true, false, true},
      {"no_angle", true, true, false},   {"cosine_only", true, false, false},
      {"ibn_only", false, true, false},  {"angle_only", false, false, true},
  };

  struct Row {
    std::string variant;
    std::string pooling;
    double val = 0.0;
  };
  std::vector<Row> rows;
  for (const Variant& v : variants) {
    for (Pooling pooling : poolings) {
      RunConfig cfg = base;
      cfg.encoder.pooling = pooling;
      if (!v.keep_w1) cfg.train.loss.w1 = 0.0;
      if (!v.keep_w2) cfg.train.loss.w2 = 0.0;
      if (!v.keep_w3) cfg.train.loss.w3 = 0.0;
      const FitResult result =
          fit(train_pairs, cfg.encoder, cfg.train, make_val_hook(val_pairs, cfg.encoder));
      double best = -std::numeric_limits<double>::infinity();
      for (const EpochLog& e : result.log) best = std::max(best, e.val_metric);
      rows.push_back(Row{v.name, to_string(pooling), best});
    }
  }

  const fs::path csv_path = out / "ablation.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw DataError("cannot open output file: " + csv_path.string());
  csv << "variant,pooling,val_spearman_x100\n";
  for (const Row& r : rows) {
    csv << r.variant << ',' << r.pooling << ',' << format_double(r.val) << '\n';
  }
  if (!csv.flush()) throw DataError("failed while writing: " + csv_path.string());

  write_manifest(out, "ablate",
                 Json{{"config", to_json(base)},
                      {"inputs", Json{{"train", args.train_path}, {"val", args.val_path}}},
                      {"outputs", Json{{"ablation", csv_path.string()}}},
                      {"results", Json{{"runs", rows.size()}}}});

  for (const Row& r : rows) {
    std::cout << r.variant << " / " << r.pooling
              << ": val_spearman_x100=" << format_double(r.val) << '\n';
  }
  return 0;
}

struct ProbeArgs {
  std::size_t points = 256;
  std::string out_dir;
};

int do_probe(const ProbeArgs& args) {
  const fs::path out = ensure_out_dir(args.out_dir);
  const auto rows = saturation_report(args.points);
  const fs::path csv_path = out / "saturation.csv";
  write_saturation_csv(rows, csv_path.string());

  const SaturationRow& lo = rows.front();
  const SaturationRow& hi = rows.back();
  write_manifest(out, "probe",
                 Json{{"inputs", Json{{"points", args.points}}},
                      {"outputs", Json{{"saturation", csv_path.string()}}},
                      {"results", Json{{"cos_grad_at_ends", Json{lo.cos_grad, hi.cos_grad}},
                                       {"angle_grad_at_ends",
                                        Json{lo.angle_grad, hi.angle_grad}}}}});

  std::cout << "theta=" << format_double(lo.theta) << ": cos_grad=" << format_double(lo.cos_grad)
            << " angle_grad=" << format_double(lo.angle_grad) << '\n';
  std::cout << "theta=" << format_double(hi.theta) << ": cos_grad=" << format_double(hi.cos_grad)
            << " angle_grad=" << format_double(hi.angle_grad) << '\n';
  std::cout << "wrote " << csv_path.string() << '\n';
  return 0;
}

struct AnnotateArgs {
  std::string input;
  std::string out_dir;
  std::string format = "tsv";
  std::string model = "mock-annotator";
  std::string base_url;
  double temperature = 1.0;
  std::size_t size = 2;
  std::size_t jobs = 4;
  std::size_t runs = 1;
};

int do_annotate(const AnnotateArgs& args) {
  if (args.runs == 0) throw ConfigError("--runs must be >= 1");
  const auto texts = load_lines(args.input);
  const fs::path out = ensure_out_dir(args.out_dir);

  AnnotateConfig cfg;
  cfg.model = args.model;
  cfg.temperature = args.temperature;
  cfg.size = args.size;
  cfg.max_in_flight = args.jobs;

  std::unique_ptr<Transport> transport;
  if (args.base_url.empty()) {
    transport = std::make_unique<MockTransport>();
  } else {
    const char* key = std::getenv("ANGLE_LLM_API_KEY");
    if (key == nullptr || *key == '\0') {
      throw ConfigError("ANGLE_LLM_API_KEY is not set but --base-url was given");
    }
    transport = std::make_unique<HttpTransport>(args.base_url, key);
  }

  std::vector<std::vector<LabeledPair>> runs;
  runs.reserve(args.runs);
  for (std::size_t r = 0; r < args.runs; ++r) {
    runs.push_back(annotate(texts, *transport, cfg));
  }
  const MergeResult merged = ensemble_merge(runs);
  if (merged.pairs.empty()) throw DataError("annotation produced no usable pairs");

  const PairFormat format = pair_format_from_string(args.format);
  const fs::path pairs_path =
      out / (std::string("pairs.") + (format == PairFormat::Tsv ? "tsv" : "jsonl"));
  save_pairs(pairs_path.string(), merged.pairs, format);

  write_manifest(out, "annotate",
                 Json{{"inputs", Json{{"texts", args.input},
                                      {"model", args.model},
                                      {"mock", args.base_url.empty()},
                                      {"runs", args.runs},
                                      {"size", args.size}}},
                      {"outputs", Json{{"pairs", pairs_path.string()}}},
                      {"results", Json{{"pairs", merged.pairs.size()},
                                       {"conflicts", merged.conflicts},
                                       {"requests", texts.size() * 2 * args.runs}}}});

  std::cout << "wrote " << merged.pairs.size() << " pairs to " << pairs_path.string() << " ("
            << merged.conflicts << " conflicts dropped)\n";
  return 0;
}

struct StatsArgs {
  std::vector<std::string> data;
  std::string format = "auto";
  std::size_t long_threshold = 16;
  std::string out_dir;
};

int do_stats(const StatsArgs& args) {
  std::vector<LabeledPair> pairs;
  for (const std::string& file : args.data) {
    const auto loaded = load_pairs(file, detect_format(args.format, file));
    pairs.insert(pairs.end(), loaded.begin(), loaded.end());
  }
  const DatasetStats stats = dataset_stats(
      pairs, [](const std::string& text) { return split_words(text).size(); },
      args.long_threshold);

  Json quantiles = Json::array();
  for (const auto& [q, len] : stats.length_quantiles) {
    quantiles.push_back(Json{{"q", q}, {"tokens", len}});
  }
  const Json body{{"total", stats.total},
                  {"positives", stats.positives},
                  {"negatives", stats.negatives},
                  {"long_threshold", stats.long_threshold},
                  {"long_proportion", stats.long_proportion},
                  {"length_quantiles", quantiles}};

  if (!args.out_dir.empty()) {
    const fs::path out = ensure_out_dir(args.out_dir);
    const fs::path stats_path = out / "stats.json";
    write_json_file(stats_path, body);
    write_manifest(out, "stats",
                   Json{{"inputs", Json{{"data", args.data}}},
                        {"outputs", Json{{"stats", stats_path.string()}}},
                        {"results", body}});
  }

  std::cout << "pairs: " << stats.total << " (positives " << stats.positives << ", negatives "
            << stats.negatives << ")\n";
  std::cout << "texts longer than " << stats.long_threshold
            << " tokens: " << format_double(stats.long_proportion) << '\n';
  std::cout << "length quantiles (tokens):";
  for (const auto& [q, len] : stats.length_quantiles) {
    std::cout << " q" << format_double(100.0 * q) << "=" << len;
  }
  std::cout << '\n';
  return 0;
}

struct RetrieveArgs {
  std::string checkpoint;
  std::string data;
  std::string format = "auto";
  std::string query;
  std::size_t k = 5;
  std::string out_dir;
};

int do_retrieve(const RetrieveArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const auto pairs = load_pairs(args.data, detect_format(args.format, args.data));
  const fs::path out = ensure_out_dir(args.out_dir);

  // corpus rows: unique texts by normalized form, first appearance kept
  std::vector<std::string> rows;
  std::map<std::string, std::size_t> row_of;
  const auto row_for = [&](const std::string& text) {
    auto [it, inserted] = row_of.emplace(normalize_text(text), rows.size());
    if (inserted) rows.push_back(text);
    return it->second;
  };
  // union-find over label >= 0.5 links gives the duplicate groups
  std::vector<std::size_t> parent;
  const auto find_root = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const LabeledPair& p : pairs) {
    const std::size_t a = row_for(p.text1);
    const std::size_t b = row_for(p.text2);
    while (parent.size() < rows.size()) parent.push_back(parent.size());
    if (p.label >= 0.5) parent[find_root(a)] = find_root(b);
  }

  const Embedder embed = embedder_from(ckpt);
  std::vector<std::vector<double>> corpus;
  corpus.reserve(rows.size());
  for (const std::string& text : rows) corpus.push_back(embed(text));

  if (!args.query.empty()) {
    const std::vector<double> q = embed(args.query);
    const auto top = retrieve_topk(corpus, q, args.k);
    const fs::path tsv_path = out / "retrieved.tsv";
    std::ofstream tsv(tsv_path, std::ios::trunc);
    if (!tsv) throw DataError("cannot open output file: " + tsv_path.string());
    tsv << "rank\trow\tscore\ttext\n";
    for (std::size_t r = 0; r < top.size(); ++r) {
      std::string text = rows[top[r]];
      for (char& c : text) {
        if (c == '\t' || c == '\n') c = ' ';
      }
      const double score = cosine(corpus[top[r]], q);
      tsv << (r + 1) << '\t' << top[r] << '\t' << format_double(score) << '\t' << text << '\n';
      std::cout << (r + 1) << ". [" << format_double(score) << "] " << text << '\n';
    }
    if (!tsv.flush()) throw DataError("failed while writing: " + tsv_path.string());
    write_manifest(out, "retrieve",
                   Json{{"inputs", Json{{"checkpoint", args.checkpoint},
                                        {"data", args.data},
                                        {"query", args.query},
                                        {"k", args.k}}},
                        {"outputs", Json{{"retrieved", tsv_path.string()}}},
                        {"results", Json{{"rows", rows.size()}, {"returned", top.size()}}}});
    return 0;
  }

  std::vector<std::size_t> group_ids(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) group_ids[i] = find_root(i);
  const auto cases = group_retrieval_cases(group_ids);
  if (cases.empty()) {
    throw DataError("no duplicate groups with at least two members in: " + args.data);
  }
  const double accuracy = strict_accuracy(corpus, cases);

  const fs::path results_path = out / "retrieval.json";
  write_json_file(results_path, Json{{"rows", rows.size()},
                                     {"cases", cases.size()},
                                     {"strict_accuracy", accuracy}});
  write_manifest(out, "retrieve",
                 Json{{"inputs", Json{{"checkpoint", args.checkpoint}, {"data", args.data}}},
                      {"outputs", Json{{"retrieval", results_path.string()}}},
                      {"results", Json{{"rows", rows.size()},
                                       {"cases", cases.size()},
                                       {"strict_accuracy", accuracy}}}});

  std::cout << "strict_accuracy=" << format_double(accuracy) << " over " << cases.size()
            << " cases (" << rows.size() << " corpus rows)\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Trainable text embeddings with cosine, in-batch-negative and "
               "angle objectives"};
  app.set_version_flag("--version", std::string("angle ") + kVersion);
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train an embedding model");
  train_cmd->add_option("--train", train_args.train_path, "Training pairs file")->required();
  train_cmd->add_option("--val", train_args.val_path,
                        "Validation pairs file (enables per-epoch scoring)");
  train_cmd->add_option("--format", train_args.format, "Pair file format")
      ->check(CLI::IsMember({"auto", "tsv", "jsonl"}))
      ->capture_default_str();
  train_cmd->add_option("--config", train_args.config_path, "JSON config file");
  train_cmd->add_option("--set", train_args.overrides,
                        "Config override, e.g. --set train.epochs=3");
  train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on labeled pairs");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--data", eval_args.data, "Pairs file (repeatable)")->required();
  eval_cmd->add_option("--format", eval_args.format, "Pair file format")
      ->check(CLI::IsMember({"auto", "tsv", "jsonl"}))
      ->capture_default_str();
  eval_cmd->add_option("--bins", eval_args.bins, "Histogram bins over [-1, 1]")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out_dir, "Output directory")->required();

  AblateArgs ablate_args;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "Train loss-component variants and compare");
  ablate_cmd->add_option("--train", ablate_args.train_path, "Training pairs file")->required();
  ablate_cmd->add_option("--val", ablate_args.val_path, "Validation pairs file")->required();
  ablate_cmd->add_option("--format", ablate_args.format, "Pair file format")
      ->check(CLI::IsMember({"auto", "tsv", "jsonl"}))
      ->capture_default_str();
  ablate_cmd->add_option("--config", ablate_args.config_path, "JSON config file");
  ablate_cmd->add_option("--set", ablate_args.overrides, "Config override");
  ablate_cmd->add_option("--poolings", ablate_args.poolings,
                         "Comma-separated poolings to sweep (default: the config's)");
  ablate_cmd->add_option("--out", ablate_args.out_dir, "Output directory")->required();

  ProbeArgs probe_args;
  CLI::App* probe_cmd =
      app.add_subcommand("probe", "Sweep scoring-head gradients across the angle range");
  probe_cmd->add_option("--points", probe_args.points, "Sweep resolution")
      ->capture_default_str();
  probe_cmd->add_option("--out", probe_args.out_dir, "Output directory")->required();

  AnnotateArgs annotate_args;
  CLI::App* annotate_cmd =
      app.add_subcommand("annotate", "Generate labeled pairs with an LLM annotator");
  annotate_cmd->add_option("--input", annotate_args.input, "Text file, one sentence per line")
      ->required();
  annotate_cmd->add_option("--format", annotate_args.format, "Output pair format")
      ->check(CLI::IsMember({"tsv", "jsonl"}))
      ->capture_default_str();
  annotate_cmd->add_option("--model", annotate_args.model, "Model name")
      ->capture_default_str();
  annotate_cmd->add_option("--base-url", annotate_args.base_url,
                           "Chat-completions endpoint base URL; omit to use the offline "
                           "mock (requires ANGLE_LLM_API_KEY)");
  annotate_cmd->add_option("--temperature", annotate_args.temperature, "Sampling temperature")
      ->capture_default_str();
  annotate_cmd->add_option("--size", annotate_args.size, "Rewrites per request")
      ->capture_default_str();
  annotate_cmd->add_option("--jobs", annotate_args.jobs, "Concurrent requests")
      ->capture_default_str();
  annotate_cmd->add_option("--runs", annotate_args.runs, "Annotation runs to merge")
      ->capture_default_str();
  annotate_cmd->add_option("--out", annotate_args.out_dir, "Output directory")->required();

  StatsArgs stats_args;
  CLI::App* stats_cmd = app.add_subcommand("stats", "Describe a pairs dataset");
  stats_cmd->add_option("--data", stats_args.data, "Pairs file (repeatable)")->required();
  stats_cmd->add_option("--format", stats_args.format, "Pair file format")
      ->check(CLI::IsMember({"auto", "tsv", "jsonl"}))
      ->capture_default_str();
  stats_cmd->add_option("--long-threshold", stats_args.long_threshold,
                        "Token count above which a text counts as long")
      ->capture_default_str();
  stats_cmd->add_option("--out", stats_args.out_dir, "Optional output directory");

  RetrieveArgs retrieve_args;
  CLI::App* retrieve_cmd = app.add_subcommand(
      "retrieve", "Nearest-neighbor search / strict duplicate retrieval scoring");
  retrieve_cmd->add_option("--checkpoint", retrieve_args.checkpoint, "Model checkpoint")
      ->required();
  retrieve_cmd->add_option("--data", retrieve_args.data,
                           "Pairs file; pairs with label >= 0.5 define duplicate groups")
      ->required();
  retrieve_cmd->add_option("--format", retrieve_args.format, "Pair file format")
      ->check(CLI::IsMember({"auto", "tsv", "jsonl"}))
      ->capture_default_str();
  retrieve_cmd->add_option("--query", retrieve_args.query,
                           "Free-text query; omit to score strict retrieval over groups");
  retrieve_cmd->add_option("--k", retrieve_args.k, "Results per query")
      ->capture_default_str();
  retrieve_cmd->add_option("--out", retrieve_args.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train_cmd)) return do_train(train_args);
    if (app.got_subcommand(eval_cmd)) return do_eval(eval_args);
    if (app.got_subcommand(ablate_cmd)) return do_ablate(ablate_args);
    if (app.got_subcommand(probe_cmd)) return do_probe(probe_args);
    if (app.got_subcommand(annotate_cmd)) return do_annotate(annotate_args);
    if (app.got_subcommand(stats_cmd)) return do_stats(stats_args);
    if (app.got_subcommand(retrieve_cmd)) return do_retrieve(retrieve_args);
    std::cerr << "error: no subcommand selected\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace angle
