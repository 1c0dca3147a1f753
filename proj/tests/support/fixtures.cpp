// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <cstring>
#include <limits>
#include <set>

#include <json.hpp>

namespace dos::testing {

namespace {

const std::vector<std::string> kNouns = {"cat",    "dog",   "octopus",        "sea turtle", "horse",
                                         "apple",  "goat",  "ice cream cone", "carrot",     "lion",
                                         "pretzel", "bear", "umbrella",       "frog",       "owl"};

}  // namespace

const EmbeddingBundle& Fixture::main() const { return *source.get(spec.text); }

EmbeddingBundle synthetic_bundle(Rng& rng, const std::string& model_id, const std::string& prompt,
                                 const std::vector<std::string>& objects, const std::map<std::string, int>& token_counts,
                                 const std::vector<ViewShape>& views) {
  EmbeddingBundle b;
  b.model_id = model_id;
  b.prompt = prompt;
  int pos = 1;
  std::map<std::string, TokenSpan> layout;
  for (const auto& obj : objects) {
    pos += 1;
    const int n = token_counts.at(obj);
    layout[obj] = {pos, pos + n};
    pos += n;
  }
  const int eot = pos;
  const int length = eot + 3;
  for (const auto& shape : views) {
    EncoderView v;
    v.encoder_id = shape.encoder_id;
    v.eot_index = eot;
    v.tokens.resize(length, shape.dim);
    for (int r = 0; r < length; ++r)
      for (int c = 0; c < shape.dim; ++c) v.tokens(r, c) = static_cast<float>(rng.uniform());
    if (shape.pooled_dim > 0) {
      PooledVector p(shape.pooled_dim);
      for (int c = 0; c < shape.pooled_dim; ++c) p(c) = static_cast<float>(rng.uniform());
      v.pooled = std::move(p);
    }
    b.encoders.push_back(std::move(v));
    for (const auto& [obj, span] : layout) b.object_spans[obj][shape.encoder_id] = {span};
  }
  return b;
}

std::vector<ViewShape> view_shapes(int dim, bool two_views) {
  if (!two_views) return {{"clip", dim, dim}};
  return {{"clip_l", dim, 0}, {"clip_g", dim == 8 ? 12 : 1280, dim == 8 ? 12 : 1280}};
}

Fixture make_fixture(uint64_t seed, size_t n_objects, const std::vector<ViewShape>& views,
                     const std::string& model_id) {
  Rng rng(seed);
  Fixture f;
  f.views = views;
  std::set<size_t> picked;
  while (f.spec.objects.size() < n_objects) {
    const size_t i = rng.index(kNouns.size());
    if (picked.insert(i).second) f.spec.objects.push_back(kNouns[i]);
  }
  for (const auto& obj : f.spec.objects) f.token_counts[obj] = 1 + static_cast<int>(rng.index(3));

  const PromptForge forge;
  f.spec.text = forge.join_objects(f.spec.objects);
  f.family = forge.family(f.spec);

  auto add = [&](const std::string& prompt, const std::vector<std::string>& objects) {
    if (!f.source.contains(prompt))
      f.source.add(synthetic_bundle(rng, model_id, prompt, objects, f.token_counts, views));
  };
  add(f.spec.text, f.spec.objects);
  for (const auto& [obj, p] : f.family.pure) add(p, {obj});
  for (const auto& [pair, p] : f.family.sep) add(p, {pair.first, pair.second});
  for (const auto& [pair, p] : f.family.mix) add(p, {pair.first, pair.second});
  for (const auto& [key, p] : f.family.attr) add(p, {key.second});
  for (const auto& [key, p] : f.family.bg) add(p, {key.second});
  return f;
}

std::filesystem::path write_fixture(const Fixture& f, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "bundles");
  BundleManifest manifest;
  std::vector<std::pair<std::string, PromptRole>> prompts{{f.spec.text, PromptRole::main}};
  for (const auto& [obj, p] : f.family.pure) prompts.emplace_back(p, PromptRole::pure);
  for (const auto& [pair, p] : f.family.sep) prompts.emplace_back(p, PromptRole::sep);
  for (const auto& [pair, p] : f.family.mix) prompts.emplace_back(p, PromptRole::mix);
  for (const auto& [key, p] : f.family.attr) prompts.emplace_back(p, PromptRole::attr);
  for (const auto& [key, p] : f.family.bg) prompts.emplace_back(p, PromptRole::bg);
  std::set<std::string> seen;
  for (const auto& [prompt, role] : prompts) {
    if (!seen.insert(prompt).second) continue;
    const auto b = f.source.get(prompt);
    std::vector<std::string> refs;
    for (const auto& [obj, spans] : b->object_spans) refs.push_back(obj);
    const std::string file = "bundles/" + std::to_string(manifest.entries.size()) + ".safetensors";
    write_bundle(*b, dir / file);
    manifest.entries.push_back({prompt, role, refs, file});
  }
  manifest.save(dir / "manifest.json");
  return dir / "manifest.json";
}

EmbeddingBundle random_bundle(Rng& rng) {
  EmbeddingBundle b;
  b.model_id = rng.index(2) ? "sdxl" : "sd3.5";
  b.prompt = "prompt " + std::to_string(rng.bits());
  const size_t n_views = 1 + rng.index(2);
  const int eot = 2 + static_cast<int>(rng.index(10));
  const int length = eot + 1 + static_cast<int>(rng.index(4));
  for (size_t i = 0; i < n_views; ++i) {
    EncoderView v;
    v.encoder_id = i == 0 ? "clip_l" : "clip_g";
    v.eot_index = eot;
    const int dim = 1 + static_cast<int>(rng.index(16));
    v.tokens.resize(length, dim);
    for (int r = 0; r < length; ++r)
      for (int c = 0; c < dim; ++c) {
        // Mix ordinary values with signed zeros, subnormals and extremes.
        switch (rng.index(16)) {
          case 0: v.tokens(r, c) = -0.0f; break;
          case 1: v.tokens(r, c) = std::numeric_limits<float>::denorm_min(); break;
          case 2: v.tokens(r, c) = std::numeric_limits<float>::max(); break;
          case 3: v.tokens(r, c) = std::numeric_limits<float>::lowest(); break;
          default: v.tokens(r, c) = static_cast<float>(rng.uniform(-1e4, 1e4));
        }
      }
    if (rng.index(2)) {
      PooledVector p(1 + static_cast<int>(rng.index(16)));
      for (int c = 0; c < p.size(); ++c) p(c) = static_cast<float>(rng.uniform());
      v.pooled = std::move(p);
    }
    b.encoders.push_back(std::move(v));
  }
  // Disjoint spans inside [1, eot).
  int pos = 1;
  for (int k = 0; pos < eot && k < 3; ++k) {
    const int end = pos + 1 + static_cast<int>(rng.index(static_cast<size_t>(eot - pos)));
    if (rng.index(3) != 0) {
      const std::string obj = "object" + std::to_string(k);
      for (const auto& v : b.encoders) b.object_spans[obj][v.encoder_id] = {{pos, end}};
    }
    pos = end;
  }
  return b;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("dos_test_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dos::testing

namespace dos::testing {

EmbeddingBundle golden_cat_bundle() {
  Rng rng(77);
  EmbeddingBundle b;
  b.model_id = "sdxl";
  b.prompt = "a cat";
  EncoderView v;
  v.encoder_id = "clip_l";
  v.eot_index = 3;
  v.tokens.resize(77, 768);
  for (int r = 0; r < 77; ++r)
    for (int c = 0; c < 768; ++c) v.tokens(r, c) = static_cast<float>(rng.uniform());
  b.encoders.push_back(std::move(v));
  b.object_spans["cat"]["clip_l"] = {{2, 3}};
  return b;
}

Fixture golden_pair_fixture() { return make_fixture(2024, 2, view_shapes(8, true)); }

namespace {

using json = nlohmann::json;

struct Container {
  json header;
  std::string payload;

  static Container split(const std::string& bytes) {
    uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | static_cast<unsigned char>(bytes[i]);
    return {json::parse(bytes.substr(8, n)), bytes.substr(8 + n)};
  }

  std::string join() const {
    std::string h = header.dump();
    while (h.size() % 8) h.push_back(' ');
    std::string out(8, '\0');
    uint64_t n = h.size();
    for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xff);
    return out + h + payload;
  }
};

EmbeddingBundle corpus_bundle() {
  Rng rng(5);
  return synthetic_bundle(rng, "sdxl", "a cat and a dog", {"cat", "dog"}, {{"cat", 1}, {"dog", 2}},
                          {{"clip_l", 4, 0}, {"clip_g", 6, 6}});
}

}  // namespace

std::string raw_encode(const EmbeddingBundle& b) {
  json header = json::object();
  json eot = json::object(), order = json::array(), spans = json::object();
  std::string payload;
  auto put = [&](const std::string& name, const float* data, size_t count, json shape) {
    const size_t start = payload.size();
    payload.append(reinterpret_cast<const char*>(data), count * sizeof(float));
    header[name] = {{"dtype", "F32"}, {"shape", shape}, {"data_offsets", {start, payload.size()}}};
  };
  for (const auto& v : b.encoders) {
    eot[v.encoder_id] = v.eot_index;
    order.push_back(v.encoder_id);
    put(v.encoder_id + ".tokens", v.tokens.data(), static_cast<size_t>(v.tokens.size()), {v.tokens.rows(), v.tokens.cols()});
    if (v.pooled) put(v.encoder_id + ".pooled", v.pooled->data(), static_cast<size_t>(v.pooled->size()), {v.pooled->size()});
  }
  for (const auto& [obj, per_enc] : b.object_spans)
    for (const auto& [enc, list] : per_enc)
      for (const auto& s : list) spans[obj][enc].push_back({s.start, s.end});
  header["__metadata__"] = {{"model_id", b.model_id},
                            {"prompt", b.prompt},
                            {"eot_index", eot.dump()},
                            {"object_spans", spans.dump()},
                            {"encoders", order.dump()}};
  return Container{header, payload}.join();
}

std::vector<MalformedCase> malformed_corpus() {
  const std::string good = encode_bundle(corpus_bundle());
  std::vector<MalformedCase> out;
  auto edit = [&](std::string name, ErrorCode code, auto&& fn) {
    Container c = Container::split(good);
    fn(c);
    out.push_back({std::move(name), c.join(), code});
  };
  auto meta = [](Container& c, const std::string& key, const json& value) {
    c.header["__metadata__"][key] = value.is_string() ? value : json(value.dump());
  };
  const auto M = ErrorCode::MalformedContainer;
  const auto I = ErrorCode::InvariantViolation;
  const auto N = ErrorCode::NonFiniteValue;

  out.push_back({"empty file", "", M});
  out.push_back({"short length prefix", good.substr(0, 5), M});
  out.push_back({"header length past end of file", std::string("\xff\xff\xff\x00\x00\x00\x00\x00", 8) + "{}", M});
  {
    std::string bad = good;
    bad[8] = '[';
    out.push_back({"header is not JSON", bad, M});
  }
  out.push_back({"truncated payload", good.substr(0, good.size() - 4), M});
  out.push_back({"trailing bytes", good + std::string(8, '\0'), M});
  edit("header is an array", M, [](Container& c) { c.header = json::array(); });
  edit("missing metadata", M, [](Container& c) { c.header.erase("__metadata__"); });
  edit("missing prompt", M, [](Container& c) { c.header["__metadata__"].erase("prompt"); });
  edit("eot_index not JSON", M, [](Container& c) { c.header["__metadata__"]["eot_index"] = "{"; });
  edit("eot_index not an integer", M, [&](Container& c) { meta(c, "eot_index", {{"clip_l", 2.5}, {"clip_g", 6}}); });
  edit("eot_index missing for a view", M, [&](Container& c) { meta(c, "eot_index", {{"clip_g", 6}}); });
  edit("f16 dtype", M, [](Container& c) { c.header["clip_l.tokens"]["dtype"] = "F16"; });
  edit("shape disagrees with byte range", M, [](Container& c) { c.header["clip_l.tokens"]["shape"][0] = 8; });
  edit("rank-1 token tensor", M, [](Container& c) {
    const json s = c.header["clip_l.tokens"]["shape"];
    c.header["clip_l.tokens"]["shape"] = {s[0].get<int>() * s[1].get<int>()};
  });
  edit("unknown tensor suffix", M, [](Container& c) {
    c.header["clip_l.hidden"] = c.header["clip_l.tokens"];
    c.header.erase("clip_l.tokens");
  });
  edit("pooled without tokens", M, [](Container& c) {
    c.header["clip_x.pooled"] = c.header["clip_g.pooled"];
    c.header.erase("clip_g.pooled");
  });
  edit("overlapping byte ranges", M, [](Container& c) {
    c.header["clip_g.pooled"]["data_offsets"] = c.header["clip_l.tokens"]["data_offsets"];
    c.header["clip_g.pooled"]["shape"] = c.header["clip_l.tokens"]["shape"];
  });
  edit("eot_index equals L", I, [&](Container& c) { meta(c, "eot_index", {{"clip_l", 9}, {"clip_g", 6}}); });
  edit("negative eot_index", I, [&](Container& c) { meta(c, "eot_index", {{"clip_l", -1}, {"clip_g", 6}}); });
  edit("span reaches EOT", I, [&](Container& c) {
    meta(c, "object_spans", {{"cat", {{"clip_l", {{2, 3}}}, {"clip_g", {{2, 3}}}}}, {"dog", {{"clip_l", {{4, 7}}}, {"clip_g", {{4, 6}}}}}});
  });
  edit("span covers SOT", I, [&](Container& c) {
    meta(c, "object_spans", {{"cat", {{"clip_l", {{0, 2}}}, {"clip_g", {{2, 3}}}}}});
  });
  edit("overlapping object spans", I, [&](Container& c) {
    meta(c, "object_spans", {{"cat", {{"clip_l", {{2, 4}}}}}, {"dog", {{"clip_l", {{3, 5}}}}}});
  });
  edit("span for unknown encoder", I, [&](Container& c) {
    meta(c, "object_spans", {{"cat", {{"t5", {{2, 3}}}}}});
  });
  edit("empty span", I, [&](Container& c) { meta(c, "object_spans", {{"cat", {{"clip_l", {{3, 3}}}}}}); });
  edit("NaN in tokens", N, [](Container& c) {
    const size_t at = c.header["clip_l.tokens"]["data_offsets"][0].get<size_t>() + 4;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(c.payload.data() + at, &nan, 4);
  });
  edit("Inf in pooled", N, [](Container& c) {
    const size_t at = c.header["clip_g.pooled"]["data_offsets"][0].get<size_t>();
    const float inf = -std::numeric_limits<float>::infinity();
    std::memcpy(c.payload.data() + at, &inf, 4);
  });
  return out;
}

}  // namespace dos::testing
