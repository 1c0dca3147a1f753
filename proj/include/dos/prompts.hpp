// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dos/bundle.hpp"

namespace dos {

/// Vowel-initial heuristic for "a"/"an" with a word-level exception list.
class ArticleRules {
public:
  /// Default rules, including the shipped exception list.
  ArticleRules();
  explicit ArticleRules(std::map<std::string, std::string> exceptions);

  /// JSON object mapping a leading word to "a" or "an".
  static ArticleRules from_json(std::string_view text);
  static ArticleRules load(const std::filesystem::path& path);

  std::string select(std::string_view noun_phrase) const;
  const std::map<std::string, std::string>& exceptions() const noexcept { return exceptions_; }

private:
  std::map<std::string, std::string> exceptions_;
};

std::string select_article(std::string_view noun_phrase);

struct PromptSpec {
  std::string text;
  std::vector<std::string> objects;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

/// Violations of the PromptSpec invariants (N >= 1, lowercase trimmed nouns
/// present verbatim in the text, no duplicate nouns).
std::vector<std::string> validate_prompt_spec(const PromptSpec& spec);

/// Shape/texture words and background phrases used for similarity profiles.
struct Lexicon {
  static constexpr size_t kAttributeCount = 42;
  static constexpr size_t kBackgroundCount = 36;

  std::vector<std::string> attribute_words;
  std::vector<std::string> background_phrases;

  static const Lexicon& standard();
  /// {"attribute_words": [...], "background_phrases": [...]}; sizes are enforced.
  static Lexicon from_json(std::string_view text);
};

using ObjectPair = std::pair<std::string, std::string>;

struct PromptFamily {
  PromptSpec main;
  std::map<std::string, std::string> pure;
  std::map<ObjectPair, std::string> sep;
  std::map<ObjectPair, std::string> mix;
  std::map<std::pair<size_t, std::string>, std::string> attr;  // (attribute index, object)
  std::map<std::pair<size_t, std::string>, std::string> bg;    // (background index, object)
};

class PromptForge {
public:
  PromptForge() : PromptForge(Lexicon::standard(), ArticleRules{}) {}
  PromptForge(Lexicon lexicon, ArticleRules articles);

  std::string pure_prompt(std::string_view object) const;
  /// (separated, mixed) prompts for the ordered pair. Throws SameObject.
  std::pair<std::string, std::string> contrastive_prompts(std::string_view first, std::string_view second) const;
  std::vector<std::string> attribute_prompts(std::string_view object) const;
  std::vector<std::string> background_prompts(std::string_view object) const;
  PromptFamily family(const PromptSpec& spec) const;

  /// "a/an A and a/an B", "a/an A, a/an B, and a/an C", ...
  std::string join_objects(const std::vector<std::string>& objects) const;

  const Lexicon& lexicon() const noexcept { return lexicon_; }
  const ArticleRules& articles() const noexcept { return articles_; }

private:
  std::string with_article(std::string_view phrase) const;

  Lexicon lexicon_;
  ArticleRules articles_;
};

std::string make_pure_prompt(std::string_view object);
std::pair<std::string, std::string> make_contrastive_prompts(std::string_view first, std::string_view second);
std::vector<std::string> make_attribute_prompts(std::string_view object, const Lexicon& lexicon);
std::vector<std::string> make_background_prompts(std::string_view object, const Lexicon& lexicon);
PromptFamily build_prompt_family(const PromptSpec& spec, const Lexicon& lexicon);

enum class Benchmark { similar_shapes, similar_textures, dissimilar_background_biases, many_objects };

std::string_view to_string(Benchmark b) noexcept;
/// Accepts the kebab-case names; throws UnknownBenchmark.
Benchmark parse_benchmark(std::string_view name);
const std::vector<Benchmark>& all_benchmarks();

/// Object tuples exactly as tabulated for each benchmark.
const std::vector<std::vector<std::string>>& benchmark_tuples(Benchmark b);
std::vector<PromptSpec> build_benchmark(Benchmark b, const PromptForge& forge = PromptForge{});
std::vector<PromptSpec> build_benchmark(std::string_view name);

/// The 80 MS-COCO class names used for offset precomputation.
const std::vector<std::string>& coco_classes();

/// Sorted, prompt-deduplicated encode request covering every family prompt and
/// the extra prompts (added with role main and no object refs).
BundleManifest build_encode_request(const std::vector<PromptFamily>& families,
                                    const std::vector<std::string>& extra = {});

}  // namespace dos
