#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "angle/data.hpp"
#include "angle/encoder.hpp"
#include "angle/objectives.hpp"

namespace angle {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  bool shuffle = true;
  LossConfig loss;

  void validate() const;
};

// Text-level view of one batch: two rows per pair, label-1 pairs double as
// in-batch-negative anchors, duplicate_group partitions rows by normalized
// text so textual duplicates can be masked in the ibn denominator.
struct PairBatch {
  std::vector<std::string> row_texts;
  std::vector<double> labels;
  std::vector<std::array<std::size_t, 2>> pair_rows;
  std::vector<std::array<std::size_t, 2>> anchors;
  std::vector<std::size_t> duplicate_group;
};

// Seeded shuffle (when cfg.shuffle) then fixed-size chunks; the final batch
// may be short. Deterministic for a given (pairs, cfg).
std::vector<PairBatch> make_batches(std::span<const LabeledPair> pairs,
                                    const TrainConfig& cfg);

// Decoupled-weight-decay Adam moments, parallel to ModelParams::tensors.
struct OptState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static OptState init(const ModelParams& params);
};

// Encode rows, apply the combined objective, backprop, and take one AdamW
// step. Returns the batch loss. Non-finite losses or gradients abort with a
// diagnostic naming the offending tensor.
double train_step(const PairBatch& batch, ModelParams& params, OptState& opt,
                  const EncoderConfig& enc_cfg, const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;  // NaN when no eval hook ran
};

using EvalHook = std::function<double(const ModelParams&, std::size_t epoch)>;

struct Checkpoint {
  std::uint32_t version = 1;
  EncoderConfig encoder;
  TrainConfig train;
  ModelParams params;
  OptState opt;
};

struct FitResult {
  Checkpoint checkpoint;  // best by val metric when a hook runs, else final
  std::vector<EpochLog> log;
};

// Seeded init then epochs x batches of train_step, reshuffling each epoch
// with a seed derived from (cfg.seed, epoch). Identical (data, configs)
// reproduce identical logs and checkpoints bit-for-bit.
FitResult fit(std::span<const LabeledPair> train_pairs, const EncoderConfig& enc_cfg,
              const TrainConfig& cfg, const EvalHook& hook = {});

// Binary layout: 16-byte magic, u64 little-endian JSON header length, JSON
// header (version, configs, step, tensor manifest with shapes and byte
// offsets), then raw little-endian f64 blobs. save -> load -> save is
// byte-identical.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace angle
