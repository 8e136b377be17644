#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "angle/autodiff.hpp"

namespace angle {

enum class Pooling { Cls, ClsLastAvg, LastAvg, LastMax, FirstLastAvg };

Pooling pooling_from_string(const std::string& name);
std::string to_string(Pooling pooling);

struct EncoderConfig {
  std::size_t vocab_size = 4096;
  std::size_t max_len = 32;
  std::size_t dim = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  Pooling pooling = Pooling::Cls;
  std::uint64_t seed = 42;

  void validate() const;
};

// Lowercased word pieces split on whitespace and punctuation (any
// non-alphanumeric byte; bytes >= 0x80 are kept as token characters).
// No truncation; this is the raw segmentation stats are measured on.
std::vector<std::string> split_words(const std::string& text);

// split_words hashed with 64-bit FNV-1a modulo vocab_size and truncated to
// max_len - 1 so the CLS position always fits. Stable across platforms.
std::vector<std::size_t> tokenize(const std::string& text, const EncoderConfig& cfg);

struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Flat named parameter store in a fixed construction order: token table,
// positional table, CLS vector, then per-layer attention / feed-forward /
// layer-norm tensors.
struct ModelParams {
  std::vector<ParamTensor> tensors;

  static ModelParams init(const EncoderConfig& cfg);
  std::size_t index_of(const std::string& name) const;  // npos when absent
  const ParamTensor& at(const std::string& name) const;
  ParamTensor& at(const std::string& name);
};

// ModelParams mirrored into a graph as leaves, parallel to source->tensors.
struct BoundParams {
  const ModelParams* source = nullptr;
  std::vector<Tensor> tensors;

  Tensor at(const std::string& name) const;
};

BoundParams bind_params(Graph& g, const ModelParams& params, bool requires_grad);

// Pre-norm self-attention encoder over one padded sequence. Returns one
// (max_len, d) hidden state per depth: index 0 is embeddings + positional,
// then one entry per layer. Pad positions hold zero embeddings and are masked
// out of every attention softmax, so they never influence non-pad rows.
std::vector<Tensor> encode(Graph& g, std::span<const std::size_t> tokens,
                           const BoundParams& params, const EncoderConfig& cfg);

// Pools the hidden stack into a single (d,) embedding. valid_len counts the
// CLS position plus real tokens; pad rows are never read.
Tensor pool(Graph& g, const std::vector<Tensor>& hiddens, Pooling pooling,
            std::size_t valid_len);

// tokenize + encode + pool without gradient tracking.
std::vector<double> embed_text(const std::string& text, const ModelParams& params,
                               const EncoderConfig& cfg);

}  // namespace angle
