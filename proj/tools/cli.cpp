// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "dos/bundle.hpp"
#include "dos/eval.hpp"
#include "dos/prompts.hpp"
#include "dos/strength.hpp"
#include "dos/transform.hpp"

namespace dos::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Reads nested JSON objects as CLI11 config sections, so that
/// {"transform": {"lambda": 0.5}} sets `transform --lambda 0.5`.
class ConfigJSON : public CLI::Config {
public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    return items(j, "", {});
  }

private:
  std::vector<CLI::ConfigItem> items(const json& j, const std::string& name, std::vector<std::string> prefix) const {
    std::vector<CLI::ConfigItem> out;
    if (j.is_object()) {
      if (!name.empty()) prefix.push_back(name);
      for (const auto& [key, value] : j.items()) {
        auto sub = items(value, key, prefix);
        out.insert(out.end(), sub.begin(), sub.end());
      }
      return out;
    }
    CLI::ConfigItem item;
    item.name = name;
    item.parents = prefix;
    auto scalar = [](const json& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
      return v.dump();
    };
    if (j.is_array()) {
      for (const auto& v : j) item.inputs.push_back(scalar(v));
    } else {
      item.inputs.push_back(scalar(j));
    }
    out.push_back(std::move(item));
    return out;
  }
};

struct Globals {
  std::string model = "sdxl";
  std::string out;
  size_t jobs = 1;
};

struct PromptOptions {
  std::string prompt;
  std::vector<std::string> objects;
  std::string benchmark;
  std::string lexicon;
  std::string articles;
};

struct TransformOptions {
  PromptOptions prompts;
  std::string manifest;
  std::string offsets;
  double lambda = 1.0;
  std::string apply = "obj,eot,pool";
  std::optional<double> fixed_alpha;
  double temperature = 0.6;
  std::vector<double> lambdas;
};

struct GenerationDefaults {
  double guidance;
  int steps;
};

GenerationDefaults generation_defaults(const std::string& model) {
  if (model == "sd3.5") return {7.0, 28};
  return {5.0, 50};
}

void add_prompt_options(CLI::App* sub, PromptOptions& o) {
  auto* prompt = sub->add_option("--prompt", o.prompt, "Prompt text");
  sub->add_option("--objects", o.objects, "Object nouns in the prompt, comma separated")->delimiter(',');
  auto* bench = sub->add_option("--benchmark", o.benchmark,
                                "similar-shapes | similar-textures | dissimilar-background-biases | many-objects");
  prompt->excludes(bench);
  sub->add_option("--lexicon", o.lexicon, "JSON override for attribute words and background phrases");
  sub->add_option("--articles", o.articles, "JSON override for the a/an exception list");
}

void add_transform_options(CLI::App* sub, TransformOptions& o) {
  add_prompt_options(sub, o.prompts);
  sub->add_option("--manifest", o.manifest, "Bundle manifest written by the encoder bridge")->required();
  sub->add_option("--offsets", o.offsets, "Offset table JSON (defaults to the shipped table)");
  sub->add_option("--apply", o.apply, "Embedding types to update: obj,eot,pool")->capture_default_str();
  sub->add_option("--fixed-alpha", o.fixed_alpha, "Use this strength for every pair instead of adaptive strengths")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--temperature", o.temperature, "Sigmoid temperature T")->capture_default_str()->check(CLI::PositiveNumber);
}

PromptForge make_forge(const PromptOptions& o) {
  Lexicon lexicon = o.lexicon.empty() ? Lexicon::standard() : Lexicon::from_json(read_file(o.lexicon));
  ArticleRules articles = o.articles.empty() ? ArticleRules{} : ArticleRules::load(o.articles);
  return PromptForge(std::move(lexicon), std::move(articles));
}

std::vector<PromptSpec> resolve_specs(const PromptOptions& o, const PromptForge& forge) {
  if (!o.benchmark.empty()) return build_benchmark(parse_benchmark(o.benchmark), forge);
  if (o.prompt.empty()) throw Error(ErrorCode::InvalidArgument, "give exactly one of --prompt or --benchmark");
  if (o.objects.empty()) throw Error(ErrorCode::InvalidArgument, "--prompt needs --objects");
  return {PromptSpec{o.prompt, o.objects}};
}

TransformConfig make_config(const TransformOptions& o) {
  TransformConfig cfg;
  cfg.lambda = o.lambda;
  cfg.apply = ApplyMask::parse(o.apply);
  cfg.strength.temperature = o.temperature;
  cfg.strength.fixed_alpha = o.fixed_alpha;
  cfg.validate();
  return cfg;
}

OffsetLibrary load_offsets(const std::string& path) {
  return path.empty() ? OffsetLibrary::standard() : OffsetLibrary::load(path);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(size_t n, size_t jobs, Fn&& fn) {
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (size_t w = 1; w < std::min(std::max<size_t>(jobs, 1), n); ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required for this command");
  fs::create_directories(g.out);
  return g.out;
}

std::string index_name(size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03zu", i);
  return buf;
}

std::string lambda_name(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "lambda_%g", lambda);
  return buf;
}

/// Lists every missing bundle before any work starts; returns false if any.
bool check_bundles(const std::vector<PromptSpec>& specs, const PromptForge& forge, const BundleSource& source,
                   const StrengthConfig& strength, std::ostream& err) {
  std::set<std::string> missing;
  for (const auto& spec : specs)
    for (const auto& p : source.missing(required_prompts(forge.family(spec), strength))) missing.insert(p);
  if (missing.empty()) return true;
  err << "error: " << missing.size() << " bundle(s) missing from the manifest:\n";
  for (const auto& p : missing) err << "  " << p << "\n";
  return false;
}

void write_job_file(const fs::path& out, const Globals& g, const TransformConfig& cfg) {
  const auto gen = generation_defaults(g.model);
  const json job = {{"model_id", g.model},
                    {"guidance_scale", gen.guidance},
                    {"num_inference_steps", gen.steps},
                    {"lambda", cfg.lambda},
                    {"apply", cfg.apply.str()},
                    {"temperature", cfg.strength.temperature},
                    {"fixed_alpha", cfg.strength.fixed_alpha ? json(*cfg.strength.fixed_alpha) : json(nullptr)}};
  write_file_atomic(out / "job.json", job.dump(2) + "\n");
}

void require_model(const EmbeddingBundle& b, const Globals& g) {
  if (b.model_id != g.model)
    throw Error(ErrorCode::EncoderMismatch, "bundle '" + b.prompt + "' comes from model '" + b.model_id +
                                                "' but --model is '" + g.model + "'");
}

// ---------------------------------------------------------------------------
// Commands

int cmd_encode_request(const Globals& g, const PromptOptions& o, const std::string& classes, std::ostream& out) {
  const PromptForge forge = make_forge(o);
  std::vector<PromptFamily> families;
  if (!classes.empty()) {
    std::vector<std::string> names;
    if (classes == "coco80") {
      names = coco_classes();
    } else {
      std::istringstream in(read_file(classes));
      for (std::string line; std::getline(in, line);)
        if (!line.empty()) names.push_back(line);
    }
    for (const auto& c : names) families.push_back(forge.family({forge.pure_prompt(c), {c}}));
  } else {
    for (const auto& spec : resolve_specs(o, forge)) families.push_back(forge.family(spec));
  }
  const BundleManifest manifest = build_encode_request(families);
  if (g.out.empty()) {
    out << manifest.to_json();
  } else {
    const fs::path path = require_out(g) / "encode_request.json";
    manifest.save(path);
    out << "wrote " << manifest.entries.size() << " prompts to " << path.string() << "\n";
  }
  return 0;
}

int cmd_transform(const Globals& g, const TransformOptions& o, std::ostream& out, std::ostream& err) {
  const TransformConfig cfg = make_config(o);
  const PromptForge forge = make_forge(o.prompts);
  const auto specs = resolve_specs(o.prompts, forge);
  const auto source = ManifestBundleSource::open(o.manifest);
  if (!check_bundles(specs, forge, source, cfg.strength, err)) return 1;
  const OffsetLibrary offsets = load_offsets(o.offsets);

  const fs::path root = require_out(g);
  fs::create_directories(root / "bundles");
  fs::create_directories(root / "diagnostics");
  BundleManifest manifest;
  manifest.entries.resize(specs.size());
  parallel_for(specs.size(), g.jobs, [&](size_t i) {
    const TransformResult r = run_transform(specs[i], source, offsets, cfg, forge);
    require_model(r.bundle, g);
    const std::string file = "bundles/" + index_name(i) + ".safetensors";
    write_bundle(r.bundle, root / file);
    write_file_atomic(root / "diagnostics" / (index_name(i) + ".json"), diagnostics_json(specs[i], r, cfg));
    manifest.entries[i] = {specs[i].text, PromptRole::main, specs[i].objects, file};
  });
  manifest.save(root / "manifest.json");
  write_job_file(root, g, cfg);
  out << "transformed " << specs.size() << " prompt(s) into " << root.string() << "\n";
  return 0;
}

int cmd_sweep(const Globals& g, const TransformOptions& o, std::ostream& out, std::ostream& err) {
  if (o.lambdas.empty()) throw Error(ErrorCode::InvalidArgument, "--lambdas needs at least one value");
  TransformConfig cfg = make_config(o);
  const PromptForge forge = make_forge(o.prompts);
  const auto specs = resolve_specs(o.prompts, forge);
  const auto source = ManifestBundleSource::open(o.manifest);
  if (!check_bundles(specs, forge, source, cfg.strength, err)) return 1;
  const OffsetLibrary offsets = load_offsets(o.offsets);

  const fs::path root = require_out(g);
  std::vector<BundleManifest> per_job(specs.size());
  parallel_for(specs.size(), g.jobs, [&](size_t i) {
    TransformConfig unit = cfg;
    unit.lambda = 1.0;
    const TransformResult r = run_transform(specs[i], source, offsets, unit, forge);
    const auto main = source.get(specs[i].text);
    require_model(*main, g);
    const fs::path dir = root / "sweep" / index_name(i);
    fs::create_directories(dir);
    for (double lambda : o.lambdas) {
      TransformConfig scaled = cfg;
      scaled.lambda = lambda;
      const std::string file = "sweep/" + index_name(i) + "/" + lambda_name(lambda) + ".safetensors";
      write_bundle(apply_updates(*main, r.dos, scaled), root / file);
      per_job[i].entries.push_back({specs[i].text, PromptRole::main, specs[i].objects, file});
    }
  });
  BundleManifest manifest;
  for (auto& m : per_job) manifest.entries.insert(manifest.entries.end(), m.entries.begin(), m.entries.end());
  manifest.save(root / "manifest.json");
  write_job_file(root, g, cfg);
  out << "wrote " << manifest.entries.size() << " bundle(s) for " << o.lambdas.size() << " lambda value(s)\n";
  return 0;
}

int cmd_offsets(const Globals& g, const std::string& manifest_path, const std::string& classes_path,
                const PromptOptions& po, std::ostream& out, std::ostream& err) {
  const PromptForge forge = make_forge(po);
  std::vector<std::string> classes;
  if (classes_path.empty() || classes_path == "coco80") {
    classes = coco_classes();
  } else {
    std::istringstream in(read_file(classes_path));
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) classes.push_back(line);
  }
  if (classes.size() < 2) throw Error(ErrorCode::InvalidArgument, "offsets need at least two classes");

  const auto source = ManifestBundleSource::open(manifest_path);
  std::set<std::string> missing;
  for (const auto& c : classes) {
    std::vector<std::string> prompts{forge.pure_prompt(c)};
    for (auto& p : forge.attribute_prompts(c)) prompts.push_back(std::move(p));
    for (auto& p : forge.background_prompts(c)) prompts.push_back(std::move(p));
    for (const auto& p : source.missing(prompts)) missing.insert(p);
  }
  if (!missing.empty()) {
    err << "error: " << missing.size() << " bundle(s) missing from the manifest:\n";
    for (const auto& p : missing) err << "  " << p << "\n";
    return 1;
  }

  std::vector<std::vector<SimilarityProfile>> per_class(classes.size());
  parallel_for(classes.size(), g.jobs, [&](size_t i) {
    const std::string& c = classes[i];
    const auto pure = source.get(forge.pure_prompt(c));
    require_model(*pure, g);
    std::vector<std::shared_ptr<const EmbeddingBundle>> owned;
    std::vector<const EmbeddingBundle*> attr, bg;
    for (const auto& p : forge.attribute_prompts(c)) {
      owned.push_back(source.get(p));
      attr.push_back(owned.back().get());
    }
    for (const auto& p : forge.background_prompts(c)) {
      owned.push_back(source.get(p));
      bg.push_back(owned.back().get());
    }
    per_class[i] = similarity_profiles(c, *pure, attr, bg);
  });

  ProfileSet profiles;
  for (auto& list : per_class)
    for (auto& p : list) profiles.add(std::move(p));
  const auto slots = embedding_slots(*source.get(forge.pure_prompt(classes.front())));
  const OffsetEstimate est = precompute_offsets(g.model, classes, profiles, slots);
  for (const auto& [key, n] : est.skipped)
    err << "warning: skipped " << n << " constant-profile pair(s) for " << to_string(key.first) << "/"
        << to_string(key.second) << "\n";

  OffsetLibrary lib;
  lib.tables.emplace(g.model, est.table);
  if (g.out.empty()) {
    out << lib.to_json();
  } else {
    const fs::path path = require_out(g) / "offsets.json";
    write_file_atomic(path, lib.to_json());
    out << "wrote offsets for '" << g.model << "' to " << path.string() << "\n";
  }
  return 0;
}

int cmd_bench_gen(const Globals& g, const std::string& benchmark, const std::string& format, std::ostream& out) {
  std::vector<Benchmark> which;
  if (benchmark.empty() || benchmark == "all")
    which = all_benchmarks();
  else
    which.push_back(parse_benchmark(benchmark));

  for (auto b : which) {
    const auto specs = build_benchmark(b);
    std::string text;
    if (format == "txt") {
      for (const auto& s : specs) text += s.text + "\n";
    } else {
      json arr = json::array();
      for (const auto& s : specs) arr.push_back({{"prompt", s.text}, {"objects", s.objects}});
      text = arr.dump(2) + "\n";
    }
    if (g.out.empty()) {
      out << text;
    } else {
      const fs::path path = require_out(g) / (std::string(to_string(b)) + "." + format);
      write_file_atomic(path, text);
      out << "wrote " << specs.size() << " prompts to " << path.string() << "\n";
    }
  }
  return 0;
}

struct EvalOptions {
  std::string images;
  std::string benchmark;
  std::string prompts_file;
  std::string endpoint = "https://api.openai.com/v1";
  std::string judge_model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string cache;
  int retries = 3;
  int backoff_ms = 500;
  int timeout_s = 60;
  bool mock = false;
};

int cmd_eval(const Globals& g, const EvalOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, std::vector<std::string>>> prompts;
  fs::path dir = o.images;
  if (!o.benchmark.empty()) {
    for (auto& s : build_benchmark(parse_benchmark(o.benchmark))) prompts.emplace_back(s.text, s.objects);
    dir /= o.benchmark;
  } else if (!o.prompts_file.empty()) {
    const json j = json::parse(read_file(o.prompts_file));
    for (const auto& e : j) prompts.emplace_back(e.at("prompt").get<std::string>(), e.at("objects").get<std::vector<std::string>>());
  } else {
    throw Error(ErrorCode::InvalidArgument, "give --benchmark or --prompts");
  }

  const fs::path root = require_out(g);
  EvalSettings settings;
  settings.benchmark = o.benchmark.empty() ? fs::path(o.prompts_file).stem().string() : o.benchmark;
  settings.model = o.judge_model;
  settings.concurrency = g.jobs;
  settings.max_retries = o.retries;
  settings.initial_backoff = std::chrono::milliseconds(o.backoff_ms);
  settings.cache_dir = o.cache.empty() ? root / "verdict_cache" : fs::path(o.cache);

  std::unique_ptr<Judge> judge;
  if (o.mock)
    judge = std::make_unique<MockJudge>();
  else
    judge = std::make_unique<HttpJudge>(EndpointConfig{o.endpoint, o.judge_model, o.api_key_env,
                                                       std::chrono::seconds(o.timeout_s)});

  const auto jobs = collect_eval_jobs(dir, prompts);
  const EvalOutcome outcome = run_eval(jobs, *judge, settings);

  json verdicts = json::array();
  for (const auto& v : outcome.verdicts) verdicts.push_back(json::parse(v.to_json()));
  write_file_atomic(root / "verdicts.json", verdicts.dump(2) + "\n");
  write_file_atomic(root / "report.json", outcome.report.to_json());
  write_file_atomic(root / "report.txt", outcome.report.to_table());
  out << outcome.report.to_table();

  if (outcome.failures.empty()) {
    std::error_code ec;
    fs::remove(root / "resume.json", ec);
    return 0;
  }
  json pending = json::array();
  std::string refs;
  for (const auto& f : outcome.failures) {
    pending.push_back({{"image_ref", f.image_ref}, {"error", to_string(f.code)}, {"message", f.message}});
    refs += f.image_ref + "\n";
  }
  const json resume = {{"resume_token", sha256_hex(refs).substr(0, 16)},
                       {"cache_dir", settings.cache_dir->string()},
                       {"pending", pending}};
  write_file_atomic(root / "resume.json", resume.dump(2) + "\n");
  err << "warning: " << outcome.failures.size()
      << " image(s) excluded after retries; rerun the same command to resume (see resume.json)\n";
  return 2;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Directional object separation for text-to-image prompt embeddings", "dos"};
  app.require_subcommand(1);

  Globals g;
  app.add_option("--model", g.model, "Base model id (sdxl, sd3.5)")->capture_default_str();
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Worker threads for batch work and judge requests")->capture_default_str()->check(CLI::PositiveNumber);
  app.set_config("--config", "", "TOML or JSON file with option values");

  for (size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--config" && args[i + 1].ends_with(".json")) app.config_formatter(std::make_shared<ConfigJSON>());

  PromptOptions encode_opts;
  std::string encode_classes;
  auto* encode = app.add_subcommand("encode-request", "Write the prompt manifest the encoder bridge must encode");
  add_prompt_options(encode, encode_opts);
  encode->add_option("--classes", encode_classes, "Class list for offset precomputation: coco80 or a file");

  TransformOptions transform_opts;
  auto* transform = app.add_subcommand("transform", "Apply DOS updates to prompt bundles");
  add_transform_options(transform, transform_opts);
  transform->add_option("--lambda", transform_opts.lambda, "Directional scaler")->capture_default_str();

  TransformOptions sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "Write one transformed bundle per lambda value");
  add_transform_options(sweep, sweep_opts);
  sweep->add_option("--lambdas", sweep_opts.lambdas, "Lambda values, comma separated")->delimiter(',')->required();

  std::string offsets_manifest, offsets_classes;
  PromptOptions offsets_prompt_opts;
  auto* offsets = app.add_subcommand("offsets", "Precompute sigmoid offsets from class profiles");
  offsets->add_option("--manifest", offsets_manifest, "Bundle manifest covering the class prompts")->required();
  offsets->add_option("--classes", offsets_classes, "coco80 (default) or a newline-separated class file");
  offsets->add_option("--lexicon", offsets_prompt_opts.lexicon, "JSON lexicon override");
  offsets->add_option("--articles", offsets_prompt_opts.articles, "JSON a/an exception override");

  std::string bench_name, bench_format = "json";
  auto* bench = app.add_subcommand("bench", "Benchmark prompt sets");
  bench->require_subcommand(1);
  auto* bench_gen = bench->add_subcommand("gen", "Export benchmark prompts");
  bench_gen->add_option("--benchmark", bench_name, "Benchmark name or 'all'");
  bench_gen->add_option("--format", bench_format, "json or txt")->capture_default_str()->check(CLI::IsMember({"json", "txt"}));

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Judge generated images and report SR/MR");
  eval->add_option("--images", eval_opts.images, "Image root laid out as {benchmark}/{prompt_index}/{seed}.png")
      ->required();
  auto* eval_bench = eval->add_option("--benchmark", eval_opts.benchmark, "Benchmark the images were generated for");
  eval->add_option("--prompts", eval_opts.prompts_file, "JSON list of {prompt, objects} instead of a benchmark")
      ->excludes(eval_bench);
  eval->add_option("--endpoint", eval_opts.endpoint, "OpenAI-compatible base URL")->capture_default_str();
  eval->add_option("--judge-model", eval_opts.judge_model, "Judge model name")->capture_default_str();
  eval->add_option("--api-key-env", eval_opts.api_key_env, "Environment variable holding the API key")->capture_default_str();
  eval->add_option("--cache", eval_opts.cache, "Verdict cache directory (default: <out>/verdict_cache)");
  eval->add_option("--retries", eval_opts.retries, "Retries per image")->capture_default_str();
  eval->add_option("--backoff-ms", eval_opts.backoff_ms, "Initial retry backoff in milliseconds")->capture_default_str();
  eval->add_option("--timeout", eval_opts.timeout_s, "HTTP timeout in seconds")->capture_default_str();
  eval->add_flag("--mock-judge", eval_opts.mock, "Use the offline deterministic judge");

  std::vector<const char*> argv{"dos"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*encode) return cmd_encode_request(g, encode_opts, encode_classes, out);
    if (*transform) return cmd_transform(g, transform_opts, out, err);
    if (*sweep) return cmd_sweep(g, sweep_opts, out, err);
    if (*offsets) return cmd_offsets(g, offsets_manifest, offsets_classes, offsets_prompt_opts, out, err);
    if (*bench_gen) return cmd_bench_gen(g, bench_name, bench_format, out);
    if (*eval) return cmd_eval(g, eval_opts, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dos::cli
