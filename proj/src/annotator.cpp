#include "angle/annotator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <iterator>
#include <map>
#include <thread>
#include <tuple>
#include <unordered_set>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "angle/errors.hpp"

namespace angle {

std::string build_prompt(const AnnotationRequest& req) {
  if (req.text.empty()) throw DataError("annotation request with empty text");
  if (req.size == 0) throw ConfigError("annotation request size must be positive");
  const bool syn = req.polarity == Polarity::Synonym;
  std::string prompt = "You are a highly smart ";
  prompt += syn ? "same-meaning" : "opposite-meaning";
  prompt += " sentence-generating system, your job is to generate ";
  prompt += std::to_string(req.size);
  prompt += syn ? " synonymous" : " antonym";
  prompt += " sentences of a given input sentence. Input sentence: ";
  prompt += req.text;
  prompt += ". Output:";
  return prompt;
}

MockTransport::MockTransport(std::size_t fail_every, bool retryable_failures)
    : fail_every_(fail_every), retryable_failures_(retryable_failures) {}

TransportReply MockTransport::complete(const std::string& model, const std::string& prompt,
                                       double temperature) {
  (void)model;
  (void)temperature;
  std::size_t call = 0;
  {
    std::lock_guard<std::mutex> lock(mu_);
    call = ++calls_;
    ++open_;
    max_open_ = std::max(max_open_, open_);
  }
  // long enough for concurrent calls to overlap and register in max_open_
  std::this_thread::sleep_for(std::chrono::milliseconds(2));
  {
    std::lock_guard<std::mutex> lock(mu_);
    --open_;
  }
  if (fail_every_ != 0 && call % fail_every_ == 0) {
    return {false, retryable_failures_, "injected transport failure"};
  }

  const std::string open_marker = "Input sentence: ";
  const std::string close_marker = ". Output:";
  const auto start = prompt.find(open_marker);
  const auto end = prompt.rfind(close_marker);
  if (start == std::string::npos || end == std::string::npos) {
    return {false, false, "mock transport: unrecognized prompt"};
  }
  const std::string text =
      prompt.substr(start + open_marker.size(), end - start - open_marker.size());

  std::size_t size = 0;
  const std::string gen_marker = "generate ";
  const auto gen_at = prompt.find(gen_marker);
  if (gen_at != std::string::npos) {
    size = static_cast<std::size_t>(
        std::strtoull(prompt.c_str() + gen_at + gen_marker.size(), nullptr, 10));
  }
  if (size == 0) return {false, false, "mock transport: unrecognized prompt"};

  const bool antonym = prompt.find("opposite-meaning") != std::string::npos;
  std::string payload;
  for (std::size_t k = 1; k <= size; ++k) {
    payload += std::to_string(k) + ". \"";
    payload += antonym ? "it is false that " : "put differently, ";
    payload += text + " (variant " + std::to_string(k) + ")\"\n";
  }
  return {true, false, payload};
}

std::size_t MockTransport::calls() const {
  std::lock_guard<std::mutex> lock(mu_);
  return calls_;
}

std::size_t MockTransport::max_in_flight() const {
  std::lock_guard<std::mutex> lock(mu_);
  return max_open_;
}

HttpTransport::HttpTransport(std::string base_url, std::string api_key)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)) {
  if (base_url_.empty()) throw ConfigError("annotator base url is empty");
  while (base_url_.size() > 1 && base_url_.back() == '/') base_url_.pop_back();
}

TransportReply HttpTransport::complete(const std::string& model, const std::string& prompt,
                                       double temperature) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(30, 0);
  client.set_read_timeout(60, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const nlohmann::json body{{"model", model},
                            {"messages", {{{"role", "user"}, {"content", prompt}}}},
                            {"temperature", temperature}};
  auto res =
      client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    return {false, true, "connection error: " + httplib::to_string(res.error())};
  }
  if (res->status == 429 || res->status >= 500) {
    return {false, true, "http status " + std::to_string(res->status)};
  }
  if (res->status != 200) {
    return {false, false, "http status " + std::to_string(res->status)};
  }
  const nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") || !reply["choices"].is_array() ||
      reply["choices"].empty()) {
    return {false, false, "malformed completion payload"};
  }
  const nlohmann::json& first = reply["choices"][0];
  if (!first.contains("message") || !first["message"].contains("content") ||
      !first["message"]["content"].is_string()) {
    return {false, false, "malformed completion payload"};
  }
  return {true, false, first["message"]["content"].get<std::string>()};
}

void AnnotateConfig::validate() const {
  if (model.empty()) throw ConfigError("annotator model name is empty");
  if (size == 0) throw ConfigError("annotator size must be positive");
  if (max_in_flight == 0) throw ConfigError("annotator max_in_flight must be positive");
}

namespace {

std::string strip_list_decoration(std::string line) {
  const auto ltrim = [](std::string& s) {
    std::size_t i = 0;
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    s.erase(0, i);
  };
  const auto rtrim = [](std::string& s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  };
  ltrim(line);
  rtrim(line);

  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')' || line[i] == ':')) {
    line.erase(0, i + 1);
  } else if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
    line.erase(0, 1);
  }
  ltrim(line);
  rtrim(line);

  if (line.size() >= 2 && ((line.front() == '"' && line.back() == '"') ||
                           (line.front() == '\'' && line.back() == '\''))) {
    line = line.substr(1, line.size() - 2);
    ltrim(line);
    rtrim(line);
  }
  return line;
}

}  // namespace

std::vector<std::string> parse_generations(const std::string& payload) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::size_t start = 0;
  while (start <= payload.size()) {
    const auto nl = payload.find('\n', start);
    const std::string raw =
        payload.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    start = nl == std::string::npos ? payload.size() + 1 : nl + 1;
    std::string line = strip_list_decoration(raw);
    if (line.empty()) continue;
    if (seen.insert(normalize_text(line)).second) out.push_back(std::move(line));
  }
  return out;
}

std::vector<LabeledPair> to_pairs(const std::string& source, Polarity polarity,
                                  std::span<const std::string> generations) {
  const std::string source_key = normalize_text(source);
  const double label = polarity == Polarity::Synonym ? 1.0 : 0.0;
  std::vector<LabeledPair> pairs;
  for (const std::string& gen : generations) {
    if (normalize_text(gen) == source_key) continue;
    pairs.push_back(LabeledPair{source, gen, label, ""});
  }
  return pairs;
}

std::vector<LabeledPair> annotate(std::span<const std::string> texts, Transport& transport,
                                  const AnnotateConfig& cfg) {
  cfg.validate();
  if (texts.empty()) throw DataError("no texts to annotate");
  for (const std::string& t : texts) {
    if (t.empty()) throw DataError("cannot annotate an empty text");
  }

  struct Job {
    std::size_t text_index = 0;
    Polarity polarity = Polarity::Synonym;
  };
  std::vector<Job> jobs;
  jobs.reserve(texts.size() * 2);
  for (std::size_t t = 0; t < texts.size(); ++t) {
    jobs.push_back({t, Polarity::Synonym});
    jobs.push_back({t, Polarity::Antonym});
  }

  std::vector<std::vector<LabeledPair>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};

  auto run_job = [&](const Job& job) {
    const std::string& text = texts[job.text_index];
    const std::string prompt = build_prompt({text, job.polarity, cfg.size});
    TransportReply reply;
    for (std::size_t attempt = 0;; ++attempt) {
      reply = transport.complete(cfg.model, prompt, cfg.temperature);
      if (reply.ok) break;
      if (!reply.retryable || attempt >= cfg.max_retries) {
        throw DataError("annotation request failed after " + std::to_string(attempt + 1) +
                        " attempt(s): " + reply.payload);
      }
      std::this_thread::sleep_for(
          std::chrono::milliseconds(cfg.backoff_base_ms << attempt));
    }
    const std::vector<std::string> gens = parse_generations(reply.payload);
    return to_pairs(text, job.polarity, gens);
  };

  const std::size_t workers = std::min(cfg.max_in_flight, jobs.size());
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t slot = next.fetch_add(1);
        if (slot >= jobs.size()) break;
        try {
          results[slot] = run_job(jobs[slot]);
        } catch (const std::exception& e) {
          errors[slot] = e.what();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();

  for (const std::string& err : errors) {
    if (!err.empty()) throw DataError(err);
  }
  std::vector<LabeledPair> pairs;
  for (std::vector<LabeledPair>& r : results) {
    pairs.insert(pairs.end(), std::make_move_iterator(r.begin()),
                 std::make_move_iterator(r.end()));
  }
  return pairs;
}

MergeResult ensemble_merge(std::span<const std::vector<LabeledPair>> runs) {
  struct Slot {
    LabeledPair pair;
    bool conflict = false;
  };
  std::map<std::pair<std::string, std::string>, Slot> merged;
  for (const std::vector<LabeledPair>& run : runs) {
    for (const LabeledPair& p : run) {
      const std::pair<std::string, std::string> key{normalize_text(p.text1),
                                                    normalize_text(p.text2)};
      auto [it, inserted] = merged.emplace(key, Slot{p, false});
      if (inserted) continue;
      Slot& slot = it->second;
      if (slot.pair.label != p.label) {
        slot.conflict = true;
        continue;
      }
      if (std::tie(p.text1, p.text2) < std::tie(slot.pair.text1, slot.pair.text2)) {
        slot.pair = p;
      }
    }
  }
  MergeResult result;
  for (const auto& [key, slot] : merged) {
    if (slot.conflict) {
      result.conflicts += 1;
    } else {
      result.pairs.push_back(slot.pair);
    }
  }
  return result;
}

}  // namespace angle
