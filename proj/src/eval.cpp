// SPDX-License-Identifier: Apache-2.0
#include "dos/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dos/bundle.hpp"

namespace dos {

using json = nlohmann::json;

namespace {

std::string trim_lower(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(first, last - first + 1));
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * fraction);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Labels and verdicts

std::string_view to_string(ObjectLabel label) noexcept {
  switch (label) {
    case ObjectLabel::intact: return "intact";
    case ObjectLabel::mixed: return "mixed";
    case ObjectLabel::absent: return "absent";
  }
  return "";
}

ObjectLabel parse_object_label(std::string_view text) {
  const std::string t = trim_lower(text);
  for (auto l : {ObjectLabel::intact, ObjectLabel::mixed, ObjectLabel::absent})
    if (to_string(l) == t) return l;
  throw Error(ErrorCode::UnknownLabel, "label '" + std::string(text) + "' is not intact, mixed or absent");
}

bool ImageVerdict::all_intact() const noexcept {
  return std::all_of(classifications.begin(), classifications.end(),
                     [](const ObjectClassification& c) { return c.label == ObjectLabel::intact; });
}

bool ImageVerdict::any_mixed() const noexcept {
  return std::any_of(classifications.begin(), classifications.end(),
                     [](const ObjectClassification& c) { return c.label == ObjectLabel::mixed; });
}

std::string ImageVerdict::to_json() const {
  json labels = json::array();
  for (const auto& c : classifications) labels.push_back({{"object", c.object}, {"label", to_string(c.label)}});
  return json{{"image_ref", image_ref}, {"prompt", prompt}, {"classifications", labels}}.dump(2) + "\n";
}

ImageVerdict ImageVerdict::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ImageVerdict v;
    v.image_ref = j.at("image_ref").get<std::string>();
    v.prompt = j.at("prompt").get<std::string>();
    for (const auto& c : j.at("classifications"))
      v.classifications.push_back({c.at("object").get<std::string>(), parse_object_label(c.at("label").get<std::string>())});
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UnparseableResponse, std::string("stored verdict: ") + e.what());
  }
}

std::vector<std::string> validate_verdict(const ImageVerdict& verdict, const std::vector<std::string>& objects) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  const std::set<std::string> expected(objects.begin(), objects.end());
  for (const auto& c : verdict.classifications) {
    if (!seen.insert(c.object).second) out.push_back("object '" + c.object + "' classified twice");
    if (!expected.contains(c.object)) out.push_back("object '" + c.object + "' is not in the prompt");
  }
  for (const auto& o : objects)
    if (!seen.contains(o)) out.push_back("object '" + o + "' has no classification");
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

EvalReport aggregate_sr_mr(const std::vector<ImageVerdict>& verdicts, std::string benchmark) {
  if (verdicts.empty()) throw Error(ErrorCode::EmptyInput, "no verdicts to aggregate");
  EvalReport r;
  r.benchmark = std::move(benchmark);
  for (const auto& v : verdicts) {
    auto& p = r.per_prompt[v.prompt];
    ++p.images;
    ++r.n_images;
    if (v.all_intact()) {
      ++r.n_success;
      ++p.success;
    }
    if (v.any_mixed()) {
      ++r.n_mixed;
      ++p.mixed;
    }
  }
  r.sr = static_cast<double>(r.n_success) / static_cast<double>(r.n_images);
  r.mr = static_cast<double>(r.n_mixed) / static_cast<double>(r.n_images);
  return r;
}

std::string EvalReport::to_json() const {
  json per = json::array();
  for (const auto& [prompt, p] : per_prompt)
    per.push_back({{"prompt", prompt}, {"images", p.images}, {"success", p.success}, {"mixed", p.mixed}});
  return json{{"benchmark", benchmark}, {"n_images", n_images}, {"n_success", n_success}, {"n_mixed", n_mixed},
              {"excluded", excluded},   {"sr", sr},             {"mr", mr},               {"per_prompt", per}}
             .dump(2) +
         "\n";
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  const std::string name = benchmark.empty() ? "(unnamed)" : benchmark;
  const size_t width = std::max<size_t>(name.size(), 9) + 2;
  os << std::left << std::setw(static_cast<int>(width)) << "Benchmark" << std::setw(8) << "Images" << std::setw(10)
     << "Excluded" << std::setw(10) << "SR↑" << "MR↓" << "\n";
  os << std::left << std::setw(static_cast<int>(width)) << name << std::setw(8) << n_images << std::setw(10)
     << excluded << std::setw(8) << percent(sr) << percent(mr) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Judge protocol

namespace {

constexpr std::string_view kJudgeInstruction =
    "You evaluate images generated from a text prompt. For every object listed by the user, decide whether it "
    "appears in the image fully intact, mixed (its features blended or fused with another listed object), or "
    "absent. Give exactly one label per object. Reply with a single JSON object whose keys are exactly the listed "
    "object names and whose values are each one of \"intact\", \"mixed\" or \"absent\". Do not add other text.";

}  // namespace

std::string JudgeRequest::cache_key() const {
  json objs = objects;
  return sha256_hex(template_id + "\n" + model + "\n" + image_sha256 + "\n" + prompt + "\n" + objs.dump());
}

JudgeRequest build_judge_request(std::string image_ref, std::string_view image_bytes, std::string prompt,
                                 std::vector<std::string> objects, std::string model) {
  if (objects.empty()) throw Error(ErrorCode::InvalidArgument, "judge request needs at least one object");
  if (image_bytes.empty()) throw Error(ErrorCode::UnreadableImage, "image '" + image_ref + "' is empty");
  JudgeRequest r;
  r.image_ref = std::move(image_ref);
  r.prompt = std::move(prompt);
  r.objects = std::move(objects);
  r.image_sha256 = sha256_hex(image_bytes);
  r.template_id = std::string(kJudgeTemplateId);
  r.model = std::move(model);

  const json object_list = r.objects;
  const std::string user_text = "Prompt: " + r.prompt + "\nObjects: " + object_list.dump() +
                                "\nReturn exactly one label per object as a JSON object.";
  const json payload = {
      {"model", r.model},
      {"temperature", 0},
      {"response_format", {{"type", "json_object"}}},
      {"messages",
       json::array({
           {{"role", "system"}, {"content", kJudgeInstruction}},
           {{"role", "user"},
            {"content", json::array({{{"type", "text"}, {"text", user_text}},
                                     {{"type", "image_url"},
                                      {"image_url", {{"url", "data:image/png;base64," + base64_encode(image_bytes)}}}}})}},
       })},
  };
  r.body = payload.dump();
  return r;
}

JudgeRequest build_judge_request(const std::filesystem::path& image, std::string prompt,
                                 std::vector<std::string> objects, std::string model) {
  std::string bytes;
  try {
    bytes = read_file(image);
  } catch (const Error&) {
    throw Error(ErrorCode::UnreadableImage, "cannot read image '" + image.string() + "'");
  }
  return build_judge_request(image.string(), bytes, std::move(prompt), std::move(objects), std::move(model));
}

namespace {

// Candidate JSON objects in `raw`: each '{' with its balancing '}', string
// literals respected.
std::optional<json> first_json_object(std::string_view raw) {
  for (size_t start = raw.find('{'); start != std::string_view::npos; start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escaped)
          escaped = false;
        else if (c == '\\')
          escaped = true;
        else if (c == '"')
          in_string = false;
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        try {
          json j = json::parse(raw.substr(start, i - start + 1));
          if (j.is_object()) return j;
        } catch (const json::parse_error&) {
        }
        break;
      }
    }
  }
  return std::nullopt;
}

}  // namespace

ImageVerdict parse_judge_response(std::string_view raw, const std::vector<std::string>& objects) {
  auto parsed = first_json_object(raw);
  if (!parsed) throw Error(ErrorCode::UnparseableResponse, "no JSON object in judge reply");

  std::map<std::string, const json*> by_key;
  for (const auto& [key, value] : parsed->items()) by_key.emplace(trim_lower(key), &value);

  ImageVerdict v;
  for (const auto& obj : objects) {
    auto it = by_key.find(trim_lower(obj));
    if (it == by_key.end()) throw Error(ErrorCode::MissingObjectLabel, "judge reply has no label for '" + obj + "'");
    if (!it->second->is_string())
      throw Error(ErrorCode::UnknownLabel, "label for '" + obj + "' is not a string");
    v.classifications.push_back({obj, parse_object_label(it->second->get<std::string>())});
  }
  return v;
}

std::string MockJudge::complete(const JudgeRequest& request) {
  ++calls_;
  json reply = json::object();
  for (const auto& obj : request.objects) {
    const std::string h = sha256_hex(request.image_sha256 + "/" + obj);
    const int bucket = std::stoi(h.substr(0, 2), nullptr, 16) % 10;
    reply[obj] = bucket < 7 ? "intact" : bucket < 9 ? "mixed" : "absent";
  }
  return "Here is my assessment:\n" + reply.dump();
}

// ---------------------------------------------------------------------------
// Cache

VerdictCache::VerdictCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create cache directory '" + dir_.string() + "'");
}

std::optional<ImageVerdict> VerdictCache::get(const std::string& key) const {
  const auto path = dir_ / (key + ".json");
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
  try {
    return ImageVerdict::from_json(read_file(path));
  } catch (const Error&) {
    return std::nullopt;
  }
}

void VerdictCache::put(const std::string& key, const ImageVerdict& verdict) const {
  write_file_atomic(dir_ / (key + ".json"), verdict.to_json());
}

// ---------------------------------------------------------------------------
// Evaluation run

std::vector<EvalJob> collect_eval_jobs(const std::filesystem::path& dir,
                                       const std::vector<std::pair<std::string, std::vector<std::string>>>& prompts) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::IoFailure, "image directory '" + dir.string() + "' missing");
  std::vector<EvalJob> jobs;
  for (size_t i = 0; i < prompts.size(); ++i) {
    const fs::path sub = dir / std::to_string(i);
    if (!fs::is_directory(sub, ec)) continue;
    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(sub))
      if (entry.is_regular_file() && entry.path().extension() == ".png") images.push_back(entry.path());
    std::sort(images.begin(), images.end(), [](const fs::path& a, const fs::path& b) {
      const auto sa = a.stem().string(), sb = b.stem().string();
      return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
    });
    for (const auto& img : images)
      jobs.push_back({img, std::to_string(i) + "/" + img.filename().string(), i, prompts[i].first, prompts[i].second});
  }
  return jobs;
}

EvalOutcome run_eval(const std::vector<EvalJob>& jobs, Judge& judge, const EvalSettings& settings) {
  std::optional<VerdictCache> cache;
  if (settings.cache_dir) cache.emplace(*settings.cache_dir);

  struct Slot {
    std::optional<ImageVerdict> verdict;
    std::optional<ImageFailure> failure;
    bool from_cache = false;
    size_t calls = 0;
  };
  std::vector<Slot> slots(jobs.size());
  std::atomic<size_t> next{0};

  auto work = [&] {
    for (size_t i = next++; i < jobs.size(); i = next++) {
      const EvalJob& job = jobs[i];
      Slot& slot = slots[i];
      JudgeRequest req;
      try {
        req = build_judge_request(job.image, job.prompt, job.objects, settings.model);
      } catch (const Error& e) {
        slot.failure = ImageFailure{job.image_ref, e.code(), e.detail()};
        continue;
      }
      const std::string key = req.cache_key();
      if (cache) {
        if (auto hit = cache->get(key); hit && validate_verdict(*hit, job.objects).empty()) {
          hit->image_ref = job.image_ref;
          slot.verdict = std::move(hit);
          slot.from_cache = true;
          continue;
        }
      }
      auto backoff = settings.initial_backoff;
      for (int attempt = 0; attempt <= settings.max_retries; ++attempt) {
        if (attempt > 0 && backoff.count() > 0) {
          std::this_thread::sleep_for(backoff);
          backoff *= 2;
        }
        try {
          ++slot.calls;
          ImageVerdict v = parse_judge_response(judge.complete(req), job.objects);
          v.image_ref = job.image_ref;
          v.prompt = job.prompt;
          slot.failure.reset();
          slot.verdict = std::move(v);
          break;
        } catch (const Error& e) {
          slot.failure = ImageFailure{job.image_ref, e.code(), e.detail()};
        }
      }
      if (slot.verdict && cache) cache->put(key, *slot.verdict);
    }
  };

  const size_t workers = std::max<size_t>(1, std::min(settings.concurrency, jobs.size()));
  {
    std::vector<std::jthread> pool;
    for (size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }

  EvalOutcome out;
  bool transport_failure = false;
  for (auto& slot : slots) {
    out.judge_calls += slot.calls;
    if (slot.from_cache) ++out.cache_hits;
    if (slot.verdict) {
      out.verdicts.push_back(std::move(*slot.verdict));
    } else if (slot.failure) {
      transport_failure |= slot.failure->code == ErrorCode::EndpointUnavailable;
      out.failures.push_back(std::move(*slot.failure));
    }
  }
  if (out.verdicts.empty()) {
    if (transport_failure)
      throw Error(ErrorCode::EndpointUnavailable,
                  "no image could be judged; last error: " + out.failures.back().message);
    throw Error(ErrorCode::EmptyInput, jobs.empty() ? "no images to evaluate" : "no image produced a usable verdict");
  }
  out.report = aggregate_sr_mr(out.verdicts, settings.benchmark);
  out.report.excluded = out.failures.size();
  return out;
}

}  // namespace dos
