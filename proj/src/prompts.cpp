// SPDX-License-Identifier: Apache-2.0
#include "dos/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <json.hpp>

namespace dos {

using json = nlohmann::json;

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '\''; }

// Whole-word occurrences of `needle` in `text`.
size_t count_word_occurrences(std::string_view text, std::string_view needle) {
  if (needle.empty()) return 0;
  size_t count = 0;
  for (size_t pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(text[pos - 1]);
    const size_t after = pos + needle.size();
    const bool right = after == text.size() || !is_word_char(text[after]);
    if (left && right) ++count;
  }
  return count;
}

// Words pronounced against the vowel-letter rule.
const std::map<std::string, std::string>& default_article_exceptions() {
  static const std::map<std::string, std::string> table = {
      {"eucalyptus", "a"}, {"european", "a"}, {"ewe", "a"},        {"heir", "an"},     {"honest", "an"},
      {"honor", "an"},     {"hour", "an"},    {"hourglass", "an"}, {"once", "a"},      {"one", "a"},
      {"ufo", "a"},        {"ukulele", "a"},  {"unicorn", "a"},    {"uniform", "a"},   {"unicycle", "a"},
      {"union", "a"},      {"unique", "a"},   {"unit", "a"},       {"university", "a"}, {"urinal", "a"},
      {"usb", "a"},        {"useful", "a"},   {"user", "a"},       {"utensil", "a"},
  };
  return table;
}

}  // namespace

// ---------------------------------------------------------------------------
// Articles

ArticleRules::ArticleRules() : exceptions_(default_article_exceptions()) {}

ArticleRules::ArticleRules(std::map<std::string, std::string> exceptions) : exceptions_(std::move(exceptions)) {
  for (const auto& [word, article] : exceptions_)
    if (article != "a" && article != "an")
      throw Error(ErrorCode::InvalidArgument, "article for '" + word + "' must be \"a\" or \"an\"");
}

ArticleRules ArticleRules::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("article exceptions are not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "article exceptions must be a JSON object");
  std::map<std::string, std::string> table;
  for (const auto& [word, article] : j.items()) table[lowercase(word)] = article.get<std::string>();
  return ArticleRules(std::move(table));
}

ArticleRules ArticleRules::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

std::string ArticleRules::select(std::string_view noun_phrase) const {
  auto first = std::find_if(noun_phrase.begin(), noun_phrase.end(),
                            [](unsigned char c) { return std::isalpha(c); });
  if (first == noun_phrase.end()) return "a";
  auto last = std::find_if(first, noun_phrase.end(), [](unsigned char c) { return !std::isalnum(c); });
  const std::string word = lowercase(std::string_view(&*first, static_cast<size_t>(last - first)));
  if (auto it = exceptions_.find(word); it != exceptions_.end()) return it->second;
  const char c = word.front();
  return (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
}

std::string select_article(std::string_view noun_phrase) { return ArticleRules{}.select(noun_phrase); }

// ---------------------------------------------------------------------------
// PromptSpec

std::vector<std::string> validate_prompt_spec(const PromptSpec& spec) {
  std::vector<std::string> out;
  if (spec.objects.empty()) out.push_back("objects: at least one object noun is required");
  std::set<std::string> seen;
  for (const auto& obj : spec.objects) {
    if (obj.empty()) {
      out.push_back("objects: empty object noun");
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(obj.front())) || std::isspace(static_cast<unsigned char>(obj.back())))
      out.push_back("objects: '" + obj + "' is not trimmed");
    if (obj != lowercase(obj)) out.push_back("objects: '" + obj + "' is not lowercase");
    if (count_word_occurrences(spec.text, obj) == 0)
      out.push_back("objects: '" + obj + "' does not occur in '" + spec.text + "'");
    if (!seen.insert(obj).second) out.push_back("objects: '" + obj + "' listed twice");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lexicon

Lexicon Lexicon::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("lexicon is not valid JSON: ") + e.what());
  }
  Lexicon lex;
  lex.attribute_words = j.at("attribute_words").get<std::vector<std::string>>();
  lex.background_phrases = j.at("background_phrases").get<std::vector<std::string>>();
  if (lex.attribute_words.size() != kAttributeCount || lex.background_phrases.size() != kBackgroundCount)
    throw Error(ErrorCode::InvalidArgument, "lexicon needs exactly 42 attribute words and 36 background phrases");
  return lex;
}

// ---------------------------------------------------------------------------
// PromptForge

PromptForge::PromptForge(Lexicon lexicon, ArticleRules articles)
    : lexicon_(std::move(lexicon)), articles_(std::move(articles)) {}

std::string PromptForge::with_article(std::string_view phrase) const {
  return articles_.select(phrase) + " " + std::string(phrase);
}

std::string PromptForge::pure_prompt(std::string_view object) const { return with_article(object); }

std::pair<std::string, std::string> PromptForge::contrastive_prompts(std::string_view first,
                                                                     std::string_view second) const {
  if (first == second)
    throw Error(ErrorCode::SameObject, "contrastive prompts need two distinct objects, got '" +
                                           std::string(first) + "' twice");
  const std::string a = with_article(first);
  const std::string b = with_article(second);
  return {a + " separated from " + b, a + " mixed with " + b};
}

std::vector<std::string> PromptForge::attribute_prompts(std::string_view object) const {
  std::vector<std::string> out;
  out.reserve(lexicon_.attribute_words.size());
  for (const auto& word : lexicon_.attribute_words)
    out.push_back(with_article(word + " " + std::string(object)));
  return out;
}

std::vector<std::string> PromptForge::background_prompts(std::string_view object) const {
  std::vector<std::string> out;
  out.reserve(lexicon_.background_phrases.size());
  for (const auto& phrase : lexicon_.background_phrases)
    out.push_back(phrase + ", there is " + with_article(object));
  return out;
}

PromptFamily PromptForge::family(const PromptSpec& spec) const {
  std::set<std::string> seen;
  for (const auto& obj : spec.objects)
    if (!seen.insert(obj).second) throw Error(ErrorCode::SameObject, "object '" + obj + "' appears twice in spec");
  if (auto problems = validate_prompt_spec(spec); !problems.empty())
    throw Error(ErrorCode::InvalidArgument, problems.front());

  PromptFamily f;
  f.main = spec;
  for (const auto& obj : spec.objects) {
    f.pure[obj] = pure_prompt(obj);
    const auto attrs = attribute_prompts(obj);
    for (size_t k = 0; k < attrs.size(); ++k) f.attr[{k, obj}] = attrs[k];
    const auto bgs = background_prompts(obj);
    for (size_t l = 0; l < bgs.size(); ++l) f.bg[{l, obj}] = bgs[l];
  }
  for (const auto& n : spec.objects) {
    for (const auto& m : spec.objects) {
      if (n == m) continue;
      auto [sep, mix] = contrastive_prompts(n, m);
      f.sep[{n, m}] = std::move(sep);
      f.mix[{n, m}] = std::move(mix);
    }
  }
  return f;
}

std::string PromptForge::join_objects(const std::vector<std::string>& objects) const {
  std::string out;
  for (size_t i = 0; i < objects.size(); ++i) {
    if (i > 0) {
      if (objects.size() == 2)
        out += " and ";
      else
        out += (i + 1 == objects.size()) ? ", and " : ", ";
    }
    out += with_article(objects[i]);
  }
  return out;
}

std::string make_pure_prompt(std::string_view object) { return PromptForge{}.pure_prompt(object); }

std::pair<std::string, std::string> make_contrastive_prompts(std::string_view first, std::string_view second) {
  return PromptForge{}.contrastive_prompts(first, second);
}

std::vector<std::string> make_attribute_prompts(std::string_view object, const Lexicon& lexicon) {
  return PromptForge(lexicon, ArticleRules{}).attribute_prompts(object);
}

std::vector<std::string> make_background_prompts(std::string_view object, const Lexicon& lexicon) {
  return PromptForge(lexicon, ArticleRules{}).background_prompts(object);
}

PromptFamily build_prompt_family(const PromptSpec& spec, const Lexicon& lexicon) {
  return PromptForge(lexicon, ArticleRules{}).family(spec);
}

// ---------------------------------------------------------------------------
// Benchmarks

std::string_view to_string(Benchmark b) noexcept {
  switch (b) {
    case Benchmark::similar_shapes: return "similar-shapes";
    case Benchmark::similar_textures: return "similar-textures";
    case Benchmark::dissimilar_background_biases: return "dissimilar-background-biases";
    case Benchmark::many_objects: return "many-objects";
  }
  return "";
}

const std::vector<Benchmark>& all_benchmarks() {
  static const std::vector<Benchmark> list = {Benchmark::similar_shapes, Benchmark::similar_textures,
                                              Benchmark::dissimilar_background_biases, Benchmark::many_objects};
  return list;
}

Benchmark parse_benchmark(std::string_view name) {
  for (auto b : all_benchmarks())
    if (to_string(b) == name) return b;
  throw Error(ErrorCode::UnknownBenchmark, "unknown benchmark '" + std::string(name) + "'");
}

std::vector<PromptSpec> build_benchmark(Benchmark b, const PromptForge& forge) {
  std::vector<PromptSpec> out;
  for (const auto& tuple : benchmark_tuples(b)) out.push_back({forge.join_objects(tuple), tuple});
  return out;
}

std::vector<PromptSpec> build_benchmark(std::string_view name) { return build_benchmark(parse_benchmark(name)); }

// ---------------------------------------------------------------------------
// Encode request

BundleManifest build_encode_request(const std::vector<PromptFamily>& families, const std::vector<std::string>& extra) {
  struct Slot {
    PromptRole role;
    std::set<std::string> objects;
  };
  std::map<std::string, Slot> by_prompt;
  auto add = [&](const std::string& prompt, PromptRole role, std::initializer_list<std::string> objects) {
    auto [it, inserted] = by_prompt.try_emplace(prompt, Slot{role, {}});
    if (!inserted && role < it->second.role) it->second.role = role;
    it->second.objects.insert(objects.begin(), objects.end());
  };

  for (const auto& f : families) {
    auto& main = by_prompt.try_emplace(f.main.text, Slot{PromptRole::main, {}}).first->second;
    main.role = PromptRole::main;
    main.objects.insert(f.main.objects.begin(), f.main.objects.end());
    for (const auto& [obj, p] : f.pure) add(p, PromptRole::pure, {obj});
    for (const auto& [pair, p] : f.sep) add(p, PromptRole::sep, {pair.first, pair.second});
    for (const auto& [pair, p] : f.mix) add(p, PromptRole::mix, {pair.first, pair.second});
    for (const auto& [key, p] : f.attr) add(p, PromptRole::attr, {key.second});
    for (const auto& [key, p] : f.bg) add(p, PromptRole::bg, {key.second});
  }
  for (const auto& p : extra) add(p, PromptRole::main, {});

  BundleManifest m;
  for (auto& [prompt, slot] : by_prompt)
    m.entries.push_back({prompt, slot.role, {slot.objects.begin(), slot.objects.end()}, {}});
  std::stable_sort(m.entries.begin(), m.entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return a.role < b.role;
  });
  return m;
}

}  // namespace dos
