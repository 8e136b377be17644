#include "angle/config.hpp"

#include <fstream>
#include <utility>

#include "angle/errors.hpp"

namespace angle {

namespace {

template <typename T>
T get_field(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

Json to_json(const EncoderConfig& cfg) {
  return Json{{"vocab_size", cfg.vocab_size}, {"max_len", cfg.max_len},
              {"dim", cfg.dim},               {"n_layers", cfg.n_layers},
              {"n_heads", cfg.n_heads},       {"pooling", to_string(cfg.pooling)},
              {"seed", cfg.seed}};
}

Json to_json(const LossConfig& cfg) {
  return Json{{"tau_cos", cfg.tau_cos}, {"tau_ibn", cfg.tau_ibn},
              {"tau_angle", cfg.tau_angle}, {"w1", cfg.w1},
              {"w2", cfg.w2},           {"w3", cfg.w3}};
}

Json to_json(const TrainConfig& cfg) {
  return Json{{"batch_size", cfg.batch_size},
              {"epochs", cfg.epochs},
              {"learning_rate", cfg.learning_rate},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"adam_eps", cfg.adam_eps},
              {"weight_decay", cfg.weight_decay},
              {"seed", cfg.seed},
              {"shuffle", cfg.shuffle},
              {"loss", to_json(cfg.loss)}};
}

Json to_json(const RunConfig& cfg) {
  return Json{{"encoder", to_json(cfg.encoder)}, {"train", to_json(cfg.train)}};
}

EncoderConfig encoder_config_from_json(const Json& j) {
  EncoderConfig cfg;
  cfg.vocab_size = get_field<std::size_t>(j, "vocab_size");
  cfg.max_len = get_field<std::size_t>(j, "max_len");
  cfg.dim = get_field<std::size_t>(j, "dim");
  cfg.n_layers = get_field<std::size_t>(j, "n_layers");
  cfg.n_heads = get_field<std::size_t>(j, "n_heads");
  cfg.pooling = pooling_from_string(get_field<std::string>(j, "pooling"));
  cfg.seed = get_field<std::uint64_t>(j, "seed");
  cfg.validate();
  return cfg;
}

LossConfig loss_config_from_json(const Json& j) {
  LossConfig cfg;
  cfg.tau_cos = get_field<double>(j, "tau_cos");
  cfg.tau_ibn = get_field<double>(j, "tau_ibn");
  cfg.tau_angle = get_field<double>(j, "tau_angle");
  cfg.w1 = get_field<double>(j, "w1");
  cfg.w2 = get_field<double>(j, "w2");
  cfg.w3 = get_field<double>(j, "w3");
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  cfg.batch_size = get_field<std::size_t>(j, "batch_size");
  cfg.epochs = get_field<std::size_t>(j, "epochs");
  cfg.learning_rate = get_field<double>(j, "learning_rate");
  cfg.beta1 = get_field<double>(j, "beta1");
  cfg.beta2 = get_field<double>(j, "beta2");
  cfg.adam_eps = get_field<double>(j, "adam_eps");
  cfg.weight_decay = get_field<double>(j, "weight_decay");
  cfg.seed = get_field<std::uint64_t>(j, "seed");
  cfg.shuffle = get_field<bool>(j, "shuffle");
  if (!j.contains("loss") || !j.at("loss").is_object()) {
    throw ConfigError("config field 'loss': expected an object");
  }
  cfg.loss = loss_config_from_json(j.at("loss"));
  cfg.validate();
  return cfg;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig cfg;
  if (!j.contains("encoder") || !j.at("encoder").is_object()) {
    throw ConfigError("config field 'encoder': expected an object");
  }
  if (!j.contains("train") || !j.at("train").is_object()) {
    throw ConfigError("config field 'train': expected an object");
  }
  cfg.encoder = encoder_config_from_json(j.at("encoder"));
  cfg.train = train_config_from_json(j.at("train"));
  return cfg;
}

void merge_config(Json& base, const Json& patch, const std::string& prefix) {
  if (!patch.is_object()) {
    throw ConfigError("config" + (prefix.empty() ? std::string() : " at '" + prefix + "'") +
                      ": expected an object");
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = base.find(key);
    if (it == base.end()) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    if (it->is_object()) {
      merge_config(*it, value, path);
    } else {
      *it = value;
    }
  }
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) {
      throw ConfigError("override '" + assignment + "' has an empty path segment");
    }
    auto it = node->find(key);
    if (it == node->end()) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    if (dot == std::string::npos) {
      if (it->is_object()) {
        throw ConfigError("config key '" + path + "' is a section, not a value");
      }
      Json parsed = Json::parse(raw, nullptr, false);
      *it = parsed.is_discarded() ? Json(raw) : std::move(parsed);
      return;
    }
    if (!it->is_object()) {
      throw ConfigError("config key '" + path.substr(0, dot) + "' has no sub-keys");
    }
    node = &*it;
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  Json merged = to_json(RunConfig{});
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      throw ConfigError("cannot open config file: " + config_path);
    }
    Json file = Json::parse(in, nullptr, false);
    if (file.is_discarded()) {
      throw ConfigError("config file is not valid JSON: " + config_path);
    }
    merge_config(merged, file);
  }
  for (const auto& assignment : overrides) {
    apply_override(merged, assignment);
  }
  return run_config_from_json(merged);
}

}  // namespace angle
