#include "angle/encoder.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

#include "angle/errors.hpp"
#include "angle/rng.hpp"

namespace angle {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskValue = -1e9;
constexpr std::size_t kFfnMult = 4;

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

Pooling pooling_from_string(const std::string& name) {
  if (name == "cls") return Pooling::Cls;
  if (name == "cls-last-avg") return Pooling::ClsLastAvg;
  if (name == "last-avg") return Pooling::LastAvg;
  if (name == "last-max") return Pooling::LastMax;
  if (name == "first-last-avg") return Pooling::FirstLastAvg;
  throw ConfigError("unknown pooling strategy: " + name);
}

std::string to_string(Pooling pooling) {
  switch (pooling) {
    case Pooling::Cls: return "cls";
    case Pooling::ClsLastAvg: return "cls-last-avg";
    case Pooling::LastAvg: return "last-avg";
    case Pooling::LastMax: return "last-max";
    case Pooling::FirstLastAvg: return "first-last-avg";
  }
  throw ConfigError("unknown pooling strategy");
}

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("encoder: vocab_size must be > 0");
  if (max_len < 2) throw ConfigError("encoder: max_len must be >= 2");
  if (dim == 0 || dim % 2 != 0) throw ConfigError("encoder: dim must be positive and even");
  if (n_layers == 0) throw ConfigError("encoder: n_layers must be >= 1");
  if (n_heads == 0 || dim % n_heads != 0) {
    throw ConfigError("encoder: n_heads must divide dim");
  }
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      words.push_back(token);
      token.clear();
    }
  };
  for (unsigned char c : text) {
    if (c < 0x80 && !std::isalnum(c)) {
      flush();
    } else {
      token.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return words;
}

std::vector<std::size_t> tokenize(const std::string& text, const EncoderConfig& cfg) {
  std::vector<std::size_t> ids;
  for (const std::string& word : split_words(text)) {
    if (ids.size() + 1 >= cfg.max_len) break;
    ids.push_back(static_cast<std::size_t>(fnv1a64(word) % cfg.vocab_size));
  }
  return ids;
}

ModelParams ModelParams::init(const EncoderConfig& cfg) {
  Rng rng(cfg.seed);
  ModelParams p;
  auto push = [&](std::string name, Shape shape, double sd) {
    ParamTensor t;
    t.name = std::move(name);
    t.shape = std::move(shape);
    t.values.resize(numel(t.shape));
    for (double& v : t.values) v = sd == 0.0 ? 0.0 : rng.normal(0.0, sd);
    p.tensors.push_back(std::move(t));
  };
  auto push_const = [&](std::string name, Shape shape, double fill) {
    ParamTensor t;
    t.name = std::move(name);
    t.shape = std::move(shape);
    t.values.assign(numel(t.shape), fill);
    p.tensors.push_back(std::move(t));
  };

  std::size_t d = cfg.dim;
  double w_sd = std::sqrt(2.0 / (d + d));
  double f1_sd = std::sqrt(2.0 / (d + kFfnMult * d));

  push("tok_emb", {cfg.vocab_size, d}, 0.1);
  push("pos_emb", {cfg.max_len, d}, 0.02);
  push("cls", {1, d}, 0.1);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    push_const(pre + "ln1.gamma", {1, d}, 1.0);
    push_const(pre + "ln1.beta", {1, d}, 0.0);
    push(pre + "attn.wq", {d, d}, w_sd);
    push(pre + "attn.wk", {d, d}, w_sd);
    push(pre + "attn.wv", {d, d}, w_sd);
    push(pre + "attn.wo", {d, d}, w_sd);
    push_const(pre + "ln2.gamma", {1, d}, 1.0);
    push_const(pre + "ln2.beta", {1, d}, 0.0);
    push(pre + "ffn.w1", {d, kFfnMult * d}, f1_sd);
    push_const(pre + "ffn.b1", {1, kFfnMult * d}, 0.0);
    push(pre + "ffn.w2", {kFfnMult * d, d}, f1_sd);
    push_const(pre + "ffn.b2", {1, d}, 0.0);
  }
  return p;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return i;
  }
  return npos;
}

const ParamTensor& ModelParams::at(const std::string& name) const {
  std::size_t i = index_of(name);
  if (i == npos) throw std::invalid_argument("unknown parameter: " + name);
  return tensors[i];
}

ParamTensor& ModelParams::at(const std::string& name) {
  std::size_t i = index_of(name);
  if (i == npos) throw std::invalid_argument("unknown parameter: " + name);
  return tensors[i];
}

Tensor BoundParams::at(const std::string& name) const {
  std::size_t i = source->index_of(name);
  if (i == npos) throw std::invalid_argument("unknown parameter: " + name);
  return tensors[i];
}

BoundParams bind_params(Graph& g, const ModelParams& params, bool requires_grad) {
  BoundParams bound;
  bound.source = &params;
  bound.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    bound.tensors.push_back(g.leaf(t.shape, t.values, requires_grad));
  }
  return bound;
}

namespace {

Tensor layer_norm(Graph& g, Tensor x, Tensor gamma, Tensor beta) {
  std::size_t rows = x.shape()[0], d = x.shape()[1];
  Tensor mean = g.scale(g.sum(x, 1), 1.0 / static_cast<double>(d));
  Tensor centered = g.sub(x, g.broadcast_col(mean, d));
  Tensor var = g.scale(g.sum(g.mul(centered, centered), 1), 1.0 / static_cast<double>(d));
  Tensor sd = g.sqrt(g.add_scalar(var, kLayerNormEps));
  Tensor normed = g.div(centered, g.broadcast_col(sd, d));
  return g.add(g.mul(normed, g.broadcast_row(gamma, rows)), g.broadcast_row(beta, rows));
}

Tensor relu(Graph& g, Tensor x) { return g.scale(g.add(x, g.abs(x)), 0.5); }

Tensor self_attention(Graph& g, Tensor x, Tensor wq, Tensor wk, Tensor wv, Tensor wo,
                      std::size_t n_heads, Tensor key_mask) {
  std::size_t len = x.shape()[0], d = x.shape()[1];
  std::size_t hd = d / n_heads;
  Tensor q = g.matmul(x, wq);
  Tensor k = g.matmul(x, wk);
  Tensor v = g.matmul(x, wv);

  Tensor heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = g.slice_cols(q, h * hd, hd);
    Tensor kh = g.slice_cols(k, h * hd, hd);
    Tensor vh = g.slice_cols(v, h * hd, hd);
    Tensor scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(hd)));
    Tensor masked = g.add(scores, key_mask);
    // Row softmax via logsumexp; masked keys underflow to exactly zero weight.
    Tensor lse = g.logsumexp(masked, 1);
    Tensor probs = g.exp(g.sub(masked, g.broadcast_col(lse, len)));
    Tensor oh = g.matmul(probs, vh);
    heads = h == 0 ? oh : g.concat_cols(heads, oh);
  }
  return g.matmul(heads, wo);
}

}  // namespace

std::vector<Tensor> encode(Graph& g, std::span<const std::size_t> tokens,
                           const BoundParams& params, const EncoderConfig& cfg) {
  if (tokens.size() + 1 > cfg.max_len) {
    throw std::invalid_argument("encode: " + std::to_string(tokens.size()) +
                                " tokens exceed max_len " + std::to_string(cfg.max_len));
  }
  for (std::size_t t : tokens) {
    if (t >= cfg.vocab_size) {
      throw std::invalid_argument("encode: token id " + std::to_string(t) +
                                  " out of range (vocab " + std::to_string(cfg.vocab_size) + ")");
    }
  }
  std::size_t len = cfg.max_len, d = cfg.dim;
  std::size_t valid = tokens.size() + 1;

  Tensor rows = params.at("cls");
  if (!tokens.empty()) {
    rows = g.concat_rows(rows, g.select_rows(params.at("tok_emb"),
                                             {tokens.begin(), tokens.end()}));
  }
  if (valid < len) {
    rows = g.concat_rows(rows, g.constant({len - valid, d},
                                          std::vector<double>((len - valid) * d, 0.0)));
  }
  Tensor h = g.add(rows, params.at("pos_emb"));

  std::vector<double> mask_vals(len * len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = valid; j < len; ++j) mask_vals[i * len + j] = kMaskValue;
  }
  Tensor key_mask = g.constant({len, len}, std::move(mask_vals));

  std::vector<Tensor> hiddens{h};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    Tensor x = hiddens.back();
    Tensor a = layer_norm(g, x, params.at(pre + "ln1.gamma"), params.at(pre + "ln1.beta"));
    Tensor attn = self_attention(g, a, params.at(pre + "attn.wq"), params.at(pre + "attn.wk"),
                                 params.at(pre + "attn.wv"), params.at(pre + "attn.wo"),
                                 cfg.n_heads, key_mask);
    Tensor mid = g.add(x, attn);
    Tensor b = layer_norm(g, mid, params.at(pre + "ln2.gamma"), params.at(pre + "ln2.beta"));
    Tensor ff1 = relu(g, g.add(g.matmul(b, params.at(pre + "ffn.w1")),
                               g.broadcast_row(params.at(pre + "ffn.b1"), len)));
    Tensor ff2 = g.add(g.matmul(ff1, params.at(pre + "ffn.w2")),
                       g.broadcast_row(params.at(pre + "ffn.b2"), len));
    hiddens.push_back(g.add(mid, ff2));
  }
  return hiddens;
}

namespace {

// Mean over the first valid_len rows -> (d,).
Tensor valid_mean(Graph& g, Tensor h, std::size_t valid_len) {
  std::vector<std::size_t> rows(valid_len);
  for (std::size_t i = 0; i < valid_len; ++i) rows[i] = i;
  Tensor sel = g.select_rows(h, std::move(rows));
  return g.scale(g.sum(sel, 0), 1.0 / static_cast<double>(valid_len));
}

}  // namespace

Tensor pool(Graph& g, const std::vector<Tensor>& hiddens, Pooling pooling,
            std::size_t valid_len) {
  if (hiddens.empty()) throw std::invalid_argument("pool: empty hidden stack");
  Tensor last = hiddens.back();
  std::size_t len = last.shape()[0], d = last.shape()[1];
  if (valid_len == 0 || valid_len > len) {
    throw std::invalid_argument("pool: valid_len " + std::to_string(valid_len) +
                                " out of range for " + shape_str(last.shape()));
  }
  switch (pooling) {
    case Pooling::Cls:
      return g.reshape(g.select_rows(last, {0}), {d});
    case Pooling::LastAvg:
      return valid_mean(g, last, valid_len);
    case Pooling::LastMax: {
      std::vector<std::size_t> rows(valid_len);
      for (std::size_t i = 0; i < valid_len; ++i) rows[i] = i;
      return g.max(g.select_rows(last, std::move(rows)), 0);
    }
    case Pooling::ClsLastAvg: {
      Tensor cls = g.reshape(g.select_rows(last, {0}), {d});
      return g.scale(g.add(cls, valid_mean(g, last, valid_len)), 0.5);
    }
    case Pooling::FirstLastAvg:
      return g.scale(g.add(valid_mean(g, hiddens.front(), valid_len),
                           valid_mean(g, last, valid_len)),
                     0.5);
  }
  throw std::invalid_argument("pool: unknown pooling strategy");
}

std::vector<double> embed_text(const std::string& text, const ModelParams& params,
                               const EncoderConfig& cfg) {
  Graph g;
  BoundParams bound = bind_params(g, params, false);
  std::vector<std::size_t> tokens = tokenize(text, cfg);
  std::vector<Tensor> hiddens = encode(g, tokens, bound, cfg);
  Tensor pooled = pool(g, hiddens, cfg.pooling, tokens.size() + 1);
  return pooled.values();
}

}  // namespace angle
