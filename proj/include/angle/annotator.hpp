#pragma once

#include <cstddef>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "angle/data.hpp"

namespace angle {

enum class Polarity { Synonym, Antonym };

struct AnnotationRequest {
  std::string text;
  Polarity polarity = Polarity::Synonym;
  std::size_t size = 2;  // rewrites requested per call
};

// The fixed instruction template; polarity selects the same-meaning/synonymous
// or opposite-meaning/antonym wording.
std::string build_prompt(const AnnotationRequest& req);

struct TransportReply {
  bool ok = false;
  bool retryable = false;   // meaningful when !ok
  std::string payload;      // completion text when ok, error detail otherwise
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportReply complete(const std::string& model, const std::string& prompt,
                                  double temperature) = 0;
};

// Offline transport with deterministic replies derived from the prompt alone.
// fail_every > 0 makes every fail_every-th call fail (retryably or not), and
// the transport records the largest number of simultaneously open calls, so
// tests can pin down both the retry loop and the concurrency bound.
class MockTransport : public Transport {
 public:
  explicit MockTransport(std::size_t fail_every = 0, bool retryable_failures = true);

  TransportReply complete(const std::string& model, const std::string& prompt,
                          double temperature) override;

  std::size_t calls() const;
  std::size_t max_in_flight() const;

 private:
  mutable std::mutex mu_;
  std::size_t fail_every_ = 0;
  bool retryable_failures_ = true;
  std::size_t calls_ = 0;
  std::size_t open_ = 0;
  std::size_t max_open_ = 0;
};

// POSTs {model, messages, temperature} to base_url + "/v1/chat/completions"
// with a bearer token. Connection failures, 429 and 5xx are retryable; other
// failures are not.
class HttpTransport : public Transport {
 public:
  HttpTransport(std::string base_url, std::string api_key);

  TransportReply complete(const std::string& model, const std::string& prompt,
                          double temperature) override;

 private:
  std::string base_url_;
  std::string api_key_;
};

struct AnnotateConfig {
  std::string model = "mock-annotator";
  double temperature = 1.0;
  std::size_t size = 2;           // rewrites per (text, polarity) request
  std::size_t max_in_flight = 4;  // concurrent transport calls
  std::size_t max_retries = 3;    // extra attempts after a retryable failure
  std::size_t backoff_base_ms = 50;  // doubles per retry

  void validate() const;
};

// Completion payload -> candidate sentences: split lines, strip list markers
// and surrounding quotes, drop empties, dedupe on normalized text keeping the
// first occurrence.
std::vector<std::string> parse_generations(const std::string& payload);

// Candidate sentences -> labeled pairs (1 for synonyms, 0 for antonyms),
// dropping rewrites whose normalized text equals the source's.
std::vector<LabeledPair> to_pairs(const std::string& source, Polarity polarity,
                                  std::span<const std::string> generations);

// Issues one request per (text, polarity) for both polarities — two per input
// text — across at most max_in_flight worker threads, retrying retryable
// failures with exponential backoff. Results keep input order (synonyms then
// antonyms per text) regardless of scheduling; any exhausted request fails the
// whole call.
std::vector<LabeledPair> annotate(std::span<const std::string> texts, Transport& transport,
                                  const AnnotateConfig& cfg);

struct MergeResult {
  std::vector<LabeledPair> pairs;
  std::size_t conflicts = 0;  // keys dropped for carrying both labels
};

// Union of several annotation runs keyed on normalized (text1, text2). Keys
// whose runs disagree on the label are dropped and counted. The surviving
// representative is the lexicographically smallest original pair and the
// output is sorted by key, so merging is order-insensitive and idempotent.
MergeResult ensemble_merge(std::span<const std::vector<LabeledPair>> runs);

}  // namespace angle
