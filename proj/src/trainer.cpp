#include "angle/trainer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>

#include "json.hpp"

#include "angle/config.hpp"
#include "angle/errors.hpp"
#include "angle/rng.hpp"

namespace angle {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are raw little-endian doubles; big-endian hosts need a byte swap");

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  loss.validate();
}

std::vector<PairBatch> make_batches(std::span<const LabeledPair> pairs,
                                    const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.shuffle) {
    Rng rng(cfg.seed);
    rng.shuffle(order);
  }

  std::vector<PairBatch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    PairBatch b;
    for (std::size_t k = begin; k < end; ++k) {
      const LabeledPair& p = pairs[order[k]];
      const std::size_t row = b.row_texts.size();
      b.row_texts.push_back(p.text1);
      b.row_texts.push_back(p.text2);
      b.labels.push_back(p.label);
      b.pair_rows.push_back({row, row + 1});
      if (p.label == 1.0) b.anchors.push_back({row, row + 1});
    }
    std::unordered_map<std::string, std::size_t> groups;
    b.duplicate_group.reserve(b.row_texts.size());
    for (const std::string& text : b.row_texts) {
      auto [it, inserted] = groups.emplace(normalize_text(text), groups.size());
      b.duplicate_group.push_back(it->second);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

OptState OptState::init(const ModelParams& params) {
  OptState opt;
  opt.m.reserve(params.tensors.size());
  opt.v.reserve(params.tensors.size());
  for (const ParamTensor& t : params.tensors) {
    opt.m.emplace_back(t.values.size(), 0.0);
    opt.v.emplace_back(t.values.size(), 0.0);
  }
  return opt;
}

double train_step(const PairBatch& batch, ModelParams& params, OptState& opt,
                  const EncoderConfig& enc_cfg, const TrainConfig& cfg) {
  if (batch.row_texts.empty()) throw DataError("training batch has no rows");
  if (opt.m.size() != params.tensors.size() || opt.v.size() != params.tensors.size()) {
    throw ConfigError("optimizer state does not match the parameter set");
  }

  Graph g;
  BoundParams bound = bind_params(g, params, /*requires_grad=*/true);
  Tensor reps;
  for (std::size_t r = 0; r < batch.row_texts.size(); ++r) {
    const auto tokens = tokenize(batch.row_texts[r], enc_cfg);
    const auto hiddens = encode(g, tokens, bound, enc_cfg);
    Tensor row = g.reshape(pool(g, hiddens, enc_cfg.pooling, tokens.size() + 1),
                           {1, enc_cfg.dim});
    reps = r == 0 ? row : g.concat_rows(reps, row);
  }

  ScoredBatch scored;
  scored.reps = reps;
  scored.labels = batch.labels;
  scored.pair_rows = batch.pair_rows;
  scored.anchors = batch.anchors;
  scored.duplicate_group = batch.duplicate_group;

  Tensor loss = combined_objective(g, scored, cfg.loss);
  const double loss_value = loss.value();
  if (!std::isfinite(loss_value)) throw NumericError("training loss is not finite");
  g.backward(loss);

  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  const double keep = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    ParamTensor& t = params.tensors[i];
    const std::vector<double>& grad = bound.tensors[i].grad();
    std::vector<double>& m = opt.m[i];
    std::vector<double>& v = opt.v[i];
    for (std::size_t j = 0; j < t.values.size(); ++j) {
      const double gj = grad[j];
      if (!std::isfinite(gj)) {
        throw NumericError("gradient for tensor '" + t.name + "' is not finite");
      }
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      // decay is decoupled from the adaptive step
      t.values[j] = keep * t.values[j] -
                    cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
    }
  }
  return loss_value;
}

namespace {

// splitmix64 of (seed, epoch): decorrelates per-epoch shuffles while staying
// reproducible from the single run seed.
std::uint64_t epoch_seed(std::uint64_t base, std::size_t epoch) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

FitResult fit(std::span<const LabeledPair> train_pairs, const EncoderConfig& enc_cfg,
              const TrainConfig& cfg, const EvalHook& hook) {
  enc_cfg.validate();
  cfg.validate();
  if (train_pairs.empty()) throw DataError("no training pairs");

  FitResult result;
  result.checkpoint.version = 1;
  result.checkpoint.encoder = enc_cfg;
  result.checkpoint.train = cfg;

  ModelParams params = ModelParams::init(enc_cfg);
  OptState opt = OptState::init(params);

  bool have_best = false;
  double best_metric = -std::numeric_limits<double>::infinity();
  ModelParams best_params;
  OptState best_opt;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    TrainConfig shuffled = cfg;
    shuffled.seed = epoch_seed(cfg.seed, epoch);
    const auto batches = make_batches(train_pairs, shuffled);
    double total = 0.0;
    for (const PairBatch& b : batches) {
      total += train_step(b, params, opt, enc_cfg, cfg);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = total / static_cast<double>(batches.size());
    log.val_metric = std::numeric_limits<double>::quiet_NaN();
    if (hook) {
      log.val_metric = hook(params, epoch);
      // strict > keeps the earliest epoch on ties
      if (!have_best || log.val_metric > best_metric) {
        have_best = true;
        best_metric = log.val_metric;
        best_params = params;
        best_opt = opt;
      }
    }
    result.log.push_back(log);
  }

  result.checkpoint.params = have_best ? std::move(best_params) : std::move(params);
  result.checkpoint.opt = have_best ? std::move(best_opt) : std::move(opt);
  return result;
}

namespace {

constexpr std::array<char, 16> kCkptMagic = {'A', 'N', 'G', 'L', 'E', 'E', 'M', 'B',
                                             '\0', 'C', 'K', 'P', 'T', '\0', 'v', '1'};

void require_format(bool ok, const std::string& message) {
  if (!ok) throw CheckpointFormatError(message);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  if (ckpt.opt.m.size() != ckpt.params.tensors.size() ||
      ckpt.opt.v.size() != ckpt.params.tensors.size()) {
    throw ConfigError("checkpoint optimizer state does not match the parameter set");
  }

  Json manifest = Json::array();
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const Shape& shape, std::size_t count) {
    manifest.push_back(
        Json{{"name", name}, {"shape", shape}, {"offset", offset}, {"count", count}});
    offset += count * sizeof(double);
  };
  for (const ParamTensor& t : ckpt.params.tensors) add_entry(t.name, t.shape, t.values.size());
  for (const ParamTensor& t : ckpt.params.tensors) {
    add_entry("opt.m." + t.name, t.shape, t.values.size());
  }
  for (const ParamTensor& t : ckpt.params.tensors) {
    add_entry("opt.v." + t.name, t.shape, t.values.size());
  }

  const Json header{{"version", ckpt.version},
                    {"encoder", to_json(ckpt.encoder)},
                    {"train", to_json(ckpt.train)},
                    {"step", ckpt.opt.step},
                    {"tensors", manifest}};
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
  out.write(kCkptMagic.data(), kCkptMagic.size());
  const std::uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  auto write_blob = [&](const std::vector<double>& values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  };
  for (const ParamTensor& t : ckpt.params.tensors) write_blob(t.values);
  for (const auto& m : ckpt.opt.m) write_blob(m);
  for (const auto& v : ckpt.opt.v) write_blob(v);
  out.flush();
  if (!out) throw ConfigError("failed while writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);

  std::array<char, 16> magic{};
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (in.gcount() != static_cast<std::streamsize>(magic.size())) {
    throw CheckpointTruncatedError("checkpoint is shorter than its magic: " + path);
  }
  if (magic != kCkptMagic) throw CheckpointFormatError("not a checkpoint file: " + path);

  std::uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  if (in.gcount() != sizeof(head_len)) {
    throw CheckpointTruncatedError("checkpoint header length is missing: " + path);
  }

  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (in.gcount() != static_cast<std::streamsize>(head_len)) {
    throw CheckpointTruncatedError("checkpoint header is truncated: " + path);
  }

  const Json header = Json::parse(head, nullptr, false);
  require_format(!header.is_discarded() && header.is_object(),
                 "checkpoint header is not valid JSON: " + path);
  for (const char* key : {"version", "encoder", "train", "step", "tensors"}) {
    require_format(header.contains(key),
                   std::string("checkpoint header lacks '") + key + "': " + path);
  }
  require_format(header.at("version").is_number_integer() ||
                     header.at("version").is_number_unsigned(),
                 "checkpoint version is not an integer: " + path);
  const auto version = header.at("version").get<std::uint64_t>();
  if (version != 1) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) +
                                 ": " + path);
  }

  Checkpoint ckpt;
  ckpt.version = 1;
  try {
    ckpt.encoder = encoder_config_from_json(header.at("encoder"));
    ckpt.train = train_config_from_json(header.at("train"));
    ckpt.opt.step = header.at("step").get<std::uint64_t>();
  } catch (const CheckpointFormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint header: ") + e.what());
  }

  const std::vector<char> blob((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::size_t count = 0;
  };
  std::vector<Entry> entries;
  require_format(header.at("tensors").is_array(),
                 "checkpoint tensor manifest is not an array: " + path);
  std::uint64_t blob_end = 0;
  for (const Json& j : header.at("tensors")) {
    Entry e;
    try {
      e.name = j.at("name").get<std::string>();
      e.shape = j.at("shape").get<Shape>();
      e.offset = j.at("offset").get<std::uint64_t>();
      e.count = j.at("count").get<std::size_t>();
    } catch (const std::exception& ex) {
      throw CheckpointFormatError(std::string("checkpoint tensor manifest: ") + ex.what());
    }
    require_format(numel(e.shape) == e.count, "checkpoint tensor '" + e.name +
                                                  "' count does not match its shape: " + path);
    blob_end = std::max(blob_end, e.offset + e.count * sizeof(double));
    entries.push_back(std::move(e));
  }
  if (blob.size() < blob_end) {
    throw CheckpointTruncatedError("checkpoint tensor data is truncated: " + path);
  }
  require_format(blob.size() == blob_end,
                 "checkpoint has trailing bytes after its tensor data: " + path);

  std::unordered_map<std::string, std::vector<double>> moments;
  for (const Entry& e : entries) {
    std::vector<double> values(e.count);
    std::memcpy(values.data(), blob.data() + e.offset, e.count * sizeof(double));
    if (e.name.rfind("opt.", 0) == 0) {
      require_format(moments.emplace(e.name, std::move(values)).second,
                     "checkpoint tensor '" + e.name + "' appears twice: " + path);
    } else {
      require_format(ckpt.params.index_of(e.name) == npos,
                     "checkpoint tensor '" + e.name + "' appears twice: " + path);
      ckpt.params.tensors.push_back(ParamTensor{e.name, e.shape, std::move(values)});
    }
  }
  for (const ParamTensor& t : ckpt.params.tensors) {
    auto m = moments.find("opt.m." + t.name);
    auto v = moments.find("opt.v." + t.name);
    require_format(m != moments.end() && m->second.size() == t.values.size(),
                   "checkpoint lacks first-moment state for '" + t.name + "': " + path);
    require_format(v != moments.end() && v->second.size() == t.values.size(),
                   "checkpoint lacks second-moment state for '" + t.name + "': " + path);
    ckpt.opt.m.push_back(std::move(m->second));
    ckpt.opt.v.push_back(std::move(v->second));
  }
  require_format(moments.size() == 2 * ckpt.params.tensors.size(),
                 "checkpoint optimizer state names an unknown tensor: " + path);
  return ckpt;
}

}  // namespace angle
