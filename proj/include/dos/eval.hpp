// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dos/error.hpp"

namespace dos {

enum class ObjectLabel { intact, mixed, absent };

std::string_view to_string(ObjectLabel label) noexcept;
/// Case-insensitive, surrounding whitespace ignored. Throws UnknownLabel.
ObjectLabel parse_object_label(std::string_view text);

struct ObjectClassification {
  std::string object;
  ObjectLabel label = ObjectLabel::absent;

  friend bool operator==(const ObjectClassification&, const ObjectClassification&) = default;
};

struct ImageVerdict {
  std::string image_ref;
  std::string prompt;
  std::vector<ObjectClassification> classifications;

  bool all_intact() const noexcept;
  bool any_mixed() const noexcept;

  std::string to_json() const;
  static ImageVerdict from_json(std::string_view text);
  friend bool operator==(const ImageVerdict&, const ImageVerdict&) = default;
};

/// Violations of "classifications cover exactly `objects`, no duplicates".
std::vector<std::string> validate_verdict(const ImageVerdict& verdict, const std::vector<std::string>& objects);

struct PromptBreakdown {
  size_t images = 0;
  size_t success = 0;
  size_t mixed = 0;
};

struct EvalReport {
  std::string benchmark;
  size_t n_images = 0;
  size_t n_success = 0;  // every object intact
  size_t n_mixed = 0;    // at least one object mixed
  size_t excluded = 0;   // judge failures left out of both counts
  double sr = 0.0;
  double mr = 0.0;
  std::map<std::string, PromptBreakdown> per_prompt;

  std::string to_json() const;
  /// Plain-text table with SR↑ / MR↓ columns.
  std::string to_table() const;
};

/// SR = share of images with every object intact; MR = share with any object
/// mixed. Throws EmptyInput.
EvalReport aggregate_sr_mr(const std::vector<ImageVerdict>& verdicts, std::string benchmark = {});

inline constexpr std::string_view kJudgeTemplateId = "dos-judge-v1";

struct JudgeRequest {
  std::string image_ref;
  std::string prompt;
  std::vector<std::string> objects;
  std::string image_sha256;
  std::string template_id;
  std::string model;
  std::string body;  // serialized chat-completions payload

  /// Cache key over template, model, image content, prompt and objects.
  std::string cache_key() const;
};

JudgeRequest build_judge_request(std::string image_ref, std::string_view image_bytes, std::string prompt,
                                 std::vector<std::string> objects, std::string model = "gpt-4o-mini");
/// Reads the image from disk; throws UnreadableImage.
JudgeRequest build_judge_request(const std::filesystem::path& image, std::string prompt,
                                 std::vector<std::string> objects, std::string model = "gpt-4o-mini");

/// Extracts the first balanced JSON object from `raw` and maps it onto
/// `objects`. Throws UnparseableResponse, MissingObjectLabel or UnknownLabel.
ImageVerdict parse_judge_response(std::string_view raw, const std::vector<std::string>& objects);

/// Returns the model's reply text for a request. Transport and HTTP failures
/// raise EndpointUnavailable.
class Judge {
public:
  virtual ~Judge() = default;
  virtual std::string complete(const JudgeRequest& request) = 0;
};

struct EndpointConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  std::chrono::seconds timeout{60};
};

/// OpenAI-compatible chat-completions client.
class HttpJudge final : public Judge {
public:
  explicit HttpJudge(EndpointConfig cfg);
  std::string complete(const JudgeRequest& request) override;

private:
  EndpointConfig cfg_;
  std::string scheme_host_port_;
  std::string path_;
};

/// Offline judge: labels are a fixed function of image content and object.
class MockJudge final : public Judge {
public:
  std::string complete(const JudgeRequest& request) override;
  size_t calls() const noexcept { return calls_.load(); }

private:
  std::atomic<size_t> calls_{0};
};

/// One JSON file per verdict, named by JudgeRequest::cache_key().
class VerdictCache {
public:
  explicit VerdictCache(std::filesystem::path dir);
  std::optional<ImageVerdict> get(const std::string& key) const;
  void put(const std::string& key, const ImageVerdict& verdict) const;

private:
  std::filesystem::path dir_;
};

struct EvalJob {
  std::filesystem::path image;
  std::string image_ref;
  size_t prompt_index = 0;
  std::string prompt;
  std::vector<std::string> objects;
};

/// Images laid out as `{dir}/{prompt_index}/{seed}.png`, in (index, seed) order.
/// `prompts[i]` supplies text and objects for prompt index i.
std::vector<EvalJob> collect_eval_jobs(const std::filesystem::path& dir,
                                       const std::vector<std::pair<std::string, std::vector<std::string>>>& prompts);

struct EvalSettings {
  std::string benchmark;
  std::string model = "gpt-4o-mini";
  size_t concurrency = 4;
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::optional<std::filesystem::path> cache_dir;
};

struct ImageFailure {
  std::string image_ref;
  ErrorCode code;
  std::string message;
};

struct EvalOutcome {
  EvalReport report;
  std::vector<ImageVerdict> verdicts;
  std::vector<ImageFailure> failures;
  size_t judge_calls = 0;
  size_t cache_hits = 0;
};

/// Judges every job (bounded concurrency, retry with exponential backoff,
/// verdict cache) and aggregates. Images still failing after retries are
/// excluded and listed in `failures`. Throws EndpointUnavailable when no image
/// could be judged because the endpoint was unreachable.
EvalOutcome run_eval(const std::vector<EvalJob>& jobs, Judge& judge, const EvalSettings& settings);

/// Hex SHA-256 and base64 helpers.
std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);

}  // namespace dos
