// SPDX-License-Identifier: Apache-2.0
#include "dos/transform.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace dos {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

bool ApplyMask::contains(EmbeddingType t) const noexcept {
  switch (t) {
    case EmbeddingType::obj: return obj;
    case EmbeddingType::eot: return eot;
    case EmbeddingType::pool: return pool;
  }
  return false;
}

ApplyMask ApplyMask::parse(std::string_view text) {
  ApplyMask mask{false, false, false};
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item == "all") {
      mask = ApplyMask{};
    } else if (item == "eot/pool") {
      mask.eot = mask.pool = true;
    } else {
      switch (parse_embedding_type(item)) {
        case EmbeddingType::obj: mask.obj = true; break;
        case EmbeddingType::eot: mask.eot = true; break;
        case EmbeddingType::pool: mask.pool = true; break;
      }
    }
  }
  if (mask.empty()) throw Error(ErrorCode::InvalidArgument, "apply mask must name at least one embedding type");
  return mask;
}

std::string ApplyMask::str() const {
  std::string out;
  for (auto t : kAllEmbeddingTypes)
    if (contains(t)) out += (out.empty() ? "" : ",") + std::string(to_string(t));
  return out;
}

void TransformConfig::validate() const {
  if (!std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be finite");
  if (apply.empty()) throw Error(ErrorCode::InvalidArgument, "apply mask must not be empty");
  strength.validate();
}

// ---------------------------------------------------------------------------
// Separations and DOS vectors

Eigen::VectorXd separation_obj(const EmbeddingBundle& pure_n, const EmbeddingBundle& pure_m, const std::string& obj_n,
                               const std::string& obj_m, const std::string& encoder_id) {
  require_compatible(pure_n, pure_m, encoder_id);
  return extract_embedding(pure_n, EmbeddingType::obj, encoder_id, obj_n) -
         extract_embedding(pure_m, EmbeddingType::obj, encoder_id, obj_m);
}

Eigen::VectorXd separation_eot_pool(const EmbeddingBundle& sep, const EmbeddingBundle& mix, EmbeddingType type,
                                    const std::string& encoder_id) {
  if (type == EmbeddingType::obj)
    throw Error(ErrorCode::InvalidArgument, "separation_eot_pool handles eot and pool only");
  require_compatible(sep, mix, encoder_id);
  return extract_embedding(sep, type, encoder_id) - extract_embedding(mix, type, encoder_id);
}

DOSVectors dos_vectors(const PromptSpec& spec, const SeparationSet& seps, const StrengthTable& strengths) {
  DOSVectors out;
  const size_t n_objects = spec.objects.size();
  if (n_objects < 2) return out;

  std::set<EmbeddingSlot> slots;
  for (const auto& [key, s] : seps.entries) slots.insert({std::get<0>(key), std::get<1>(key)});

  // Partners are visited in name order so results do not depend on the order
  // objects were listed in.
  std::vector<std::string> sorted = spec.objects;
  std::sort(sorted.begin(), sorted.end());

  for (const auto& slot : slots) {
    for (const auto& n : spec.objects) {
      Eigen::VectorXd acc;
      for (const auto& m : sorted) {
        if (m == n) continue;
        auto it = seps.entries.find({slot.type, slot.encoder_id, n, m});
        if (it == seps.entries.end())
          throw Error(ErrorCode::MissingPair, "no " + std::string(to_string(slot.type)) + " separation for ('" + n +
                                                  "', '" + m + "') in encoder '" + slot.encoder_id + "'");
        const double alpha = strengths.at(slot.type, slot.encoder_id, n, m);
        if (acc.size() == 0) {
          acc = alpha * it->second;
        } else {
          if (acc.size() != it->second.size())
            throw Error(ErrorCode::DimensionMismatch, "separation vectors of different lengths");
          acc += alpha * it->second;
        }
      }
      if (n_objects > 2) acc /= static_cast<double>(n_objects - 1);
      out.entries[{slot.type, slot.encoder_id, n}] = std::move(acc);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Updates

namespace {

template <typename Row>
void add_to(Row&& row, const Eigen::VectorXd& delta) {
  for (Eigen::Index c = 0; c < delta.size(); ++c)
    row(c) = static_cast<float>(static_cast<double>(row(c)) + delta(c));
}

void require_dim(const Eigen::VectorXd& v, Eigen::Index expected, const std::string& what) {
  if (v.size() != expected)
    throw Error(ErrorCode::DimensionMismatch, what + ": vector of length " + std::to_string(v.size()) +
                                                  ", slot has " + std::to_string(expected));
}

std::set<int> span_rows(const std::vector<TokenSpan>& spans) {
  std::set<int> rows;
  for (const auto& s : spans)
    for (int r = s.start; r < s.end; ++r) rows.insert(r);
  return rows;
}

}  // namespace

EmbeddingBundle apply_updates(const EmbeddingBundle& main, const DOSVectors& dos, const TransformConfig& cfg) {
  cfg.validate();
  for (const auto& [key, v] : dos.entries)
    if (!main.find_view(std::get<1>(key)))
      throw Error(ErrorCode::EncoderMismatch, "DOS vector for unknown encoder '" + std::get<1>(key) + "'");

  EmbeddingBundle out = main;
  if (cfg.lambda == 0.0) return out;

  for (auto& view : out.encoders) {
    std::map<EmbeddingType, Eigen::VectorXd> totals;
    for (const auto& [key, v] : dos.entries) {
      const auto& [type, encoder_id, object] = key;
      if (encoder_id != view.encoder_id || !cfg.apply.contains(type)) continue;
      if (type == EmbeddingType::obj) {
        require_dim(v, view.dim(), "obj update for '" + object + "'");
        const Eigen::VectorXd delta = cfg.lambda * v;
        for (int r : span_rows(main.spans(object, encoder_id))) add_to(view.tokens.row(r), delta);
      } else {
        auto [it, fresh] = totals.try_emplace(type, v);
        if (!fresh) {
          require_dim(v, it->second.size(), std::string(to_string(type)) + " update");
          it->second += v;
        }
      }
    }
    if (auto it = totals.find(EmbeddingType::eot); it != totals.end()) {
      require_dim(it->second, view.dim(), "eot update");
      add_to(view.tokens.row(view.eot_index), cfg.lambda * it->second);
    }
    if (auto it = totals.find(EmbeddingType::pool); it != totals.end()) {
      if (!view.pooled)
        throw Error(ErrorCode::MissingPooled, "encoder '" + view.encoder_id + "' has no pooled vector to update");
      require_dim(it->second, view.pooled->size(), "pool update");
      add_to(*view.pooled, cfg.lambda * it->second);
    }
  }
  return out;
}

EmbeddingBundle directional_edit(const EmbeddingBundle& target, const EmbeddingBundle& positive,
                                 const EmbeddingBundle& negative, const DirectionalEdit& edit) {
  if (!std::isfinite(edit.lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be finite");
  auto sole_object = [](const EmbeddingBundle& b, const std::optional<std::string>& named) {
    if (named) return *named;
    if (b.object_spans.size() != 1)
      throw Error(ErrorCode::MissingSpan, "prompt '" + b.prompt + "' must carry exactly one object, or name one");
    return b.object_spans.begin()->first;
  };

  EmbeddingBundle out = target;
  if (edit.lambda == 0.0) return out;
  for (auto& view : out.encoders) {
    const std::string& enc = view.encoder_id;
    require_compatible(target, positive, enc);
    require_compatible(target, negative, enc);
    for (auto type : edit.types) {
      std::optional<std::string> pos_obj, neg_obj;
      if (type == EmbeddingType::obj) {
        if (!edit.target_object) throw Error(ErrorCode::MissingSpan, "obj edits need a target object");
        pos_obj = sole_object(positive, edit.positive_object);
        neg_obj = sole_object(negative, edit.negative_object);
      }
      const Eigen::VectorXd delta =
          edit.lambda * (extract_embedding(positive, type, enc, pos_obj) - extract_embedding(negative, type, enc, neg_obj));
      switch (type) {
        case EmbeddingType::obj:
          for (int r : span_rows(target.spans(*edit.target_object, enc))) add_to(view.tokens.row(r), delta);
          break;
        case EmbeddingType::eot:
          add_to(view.tokens.row(view.eot_index), delta);
          break;
        case EmbeddingType::pool:
          if (!view.pooled) throw Error(ErrorCode::MissingPooled, "encoder '" + enc + "' has no pooled vector");
          add_to(*view.pooled, delta);
          break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundle sources

std::vector<std::string> BundleSource::missing(const std::vector<std::string>& prompts) const {
  std::vector<std::string> out;
  for (const auto& p : prompts)
    if (!contains(p)) out.push_back(p);
  return out;
}

void MemoryBundleSource::add(EmbeddingBundle bundle) {
  auto prompt = bundle.prompt;
  bundles_[prompt] = std::make_shared<const EmbeddingBundle>(std::move(bundle));
}

std::shared_ptr<const EmbeddingBundle> MemoryBundleSource::get(const std::string& prompt) const {
  auto it = bundles_.find(prompt);
  if (it == bundles_.end()) throw Error(ErrorCode::MissingBundle, "no bundle for prompt '" + prompt + "'");
  return it->second;
}

bool MemoryBundleSource::contains(const std::string& prompt) const { return bundles_.contains(prompt); }

ManifestBundleSource::ManifestBundleSource(BundleManifest manifest, std::filesystem::path base_dir) {
  if (auto problems = validate_manifest(manifest); !problems.empty())
    throw Error(ErrorCode::InvariantViolation, problems.front());
  for (auto& e : manifest.entries)
    if (!e.file_path.empty()) files_[e.prompt] = base_dir / e.file_path;
}

ManifestBundleSource ManifestBundleSource::open(const std::filesystem::path& manifest_path) {
  return ManifestBundleSource(BundleManifest::load(manifest_path), manifest_path.parent_path());
}

std::shared_ptr<const EmbeddingBundle> ManifestBundleSource::get(const std::string& prompt) const {
  auto it = files_.find(prompt);
  if (it == files_.end()) throw Error(ErrorCode::MissingBundle, "manifest has no bundle for '" + prompt + "'");
  auto bundle = std::make_shared<EmbeddingBundle>(read_bundle(it->second));
  if (bundle->prompt != prompt)
    throw Error(ErrorCode::InvariantViolation, "'" + it->second.string() + "' holds prompt '" + bundle->prompt +
                                                   "', manifest says '" + prompt + "'");
  return bundle;
}

bool ManifestBundleSource::contains(const std::string& prompt) const {
  auto it = files_.find(prompt);
  std::error_code ec;
  return it != files_.end() && std::filesystem::is_regular_file(it->second, ec);
}

// ---------------------------------------------------------------------------
// Pipeline

std::vector<std::string> required_prompts(const PromptFamily& family, const StrengthConfig& cfg) {
  std::set<std::string> out{family.main.text};
  if (family.main.objects.size() >= 2) {
    for (const auto& [k, p] : family.pure) out.insert(p);
    for (const auto& [k, p] : family.sep) out.insert(p);
    for (const auto& [k, p] : family.mix) out.insert(p);
    if (!cfg.fixed_alpha) {
      for (const auto& [k, p] : family.attr) out.insert(p);
      for (const auto& [k, p] : family.bg) out.insert(p);
    }
  }
  return {out.begin(), out.end()};
}

namespace {

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw e.within(stage);
  }
}

}  // namespace

TransformResult run_transform(const PromptSpec& spec, const BundleSource& bundles, const OffsetLibrary& offsets,
                              const TransformConfig& cfg, const PromptForge& forge) {
  in_stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const PromptFamily family = in_stage("prompts", [&] { return forge.family(spec); });
  const auto main = in_stage("load", [&] { return bundles.get(spec.text); });
  if (spec.objects.size() < 2) return {*main, {}, {}, {}};

  const std::vector<EmbeddingSlot> slots = embedding_slots(*main);
  std::map<std::string, std::shared_ptr<const EmbeddingBundle>> pure;
  in_stage("load", [&] {
    for (const auto& [obj, prompt] : family.pure) {
      pure[obj] = bundles.get(prompt);
      for (const auto& v : main->encoders) require_compatible(*main, *pure[obj], v.encoder_id);
    }
    return 0;
  });

  ProfileSet profiles;
  OffsetTable offset_table;
  if (!cfg.strength.fixed_alpha) {
    offset_table = in_stage("offsets", [&] { return offsets.at(main->model_id); });
    in_stage("profiles", [&] {
      for (const auto& obj : spec.objects) {
        std::vector<std::shared_ptr<const EmbeddingBundle>> owned;
        std::vector<const EmbeddingBundle*> attr, bg;
        for (size_t k = 0; k < Lexicon::kAttributeCount; ++k) {
          owned.push_back(bundles.get(family.attr.at({k, obj})));
          attr.push_back(owned.back().get());
        }
        for (size_t l = 0; l < Lexicon::kBackgroundCount; ++l) {
          owned.push_back(bundles.get(family.bg.at({l, obj})));
          bg.push_back(owned.back().get());
        }
        for (const auto& slot : slots)
          profiles.add(similarity_profile(slot.type, slot.encoder_id, obj, *pure.at(obj), attr, bg));
      }
      return 0;
    });
  }

  TransformResult result;
  result.strengths =
      in_stage("strengths", [&] { return build_strength_table(spec, slots, profiles, offset_table, cfg.strength); });

  result.separations = in_stage("separations", [&] {
    SeparationSet seps;
    for (const auto& n : spec.objects) {
      for (const auto& m : spec.objects) {
        if (n == m) continue;
        const auto sep = bundles.get(family.sep.at({n, m}));
        const auto mix = bundles.get(family.mix.at({n, m}));
        for (const auto& slot : slots) {
          seps.entries[{slot.type, slot.encoder_id, n, m}] =
              slot.type == EmbeddingType::obj
                  ? separation_obj(*pure.at(n), *pure.at(m), n, m, slot.encoder_id)
                  : separation_eot_pool(*sep, *mix, slot.type, slot.encoder_id);
        }
      }
    }
    return seps;
  });

  result.dos = in_stage("dos-vectors", [&] { return dos_vectors(spec, result.separations, result.strengths); });
  result.bundle = in_stage("update", [&] { return apply_updates(*main, result.dos, cfg); });
  return result;
}

std::string diagnostics_json(const PromptSpec& spec, const TransformResult& result, const TransformConfig& cfg) {
  json j;
  j["prompt"] = spec.text;
  j["objects"] = spec.objects;
  j["model_id"] = result.bundle.model_id;
  j["config"] = {{"lambda", cfg.lambda},
                 {"apply", cfg.apply.str()},
                 {"temperature", cfg.strength.temperature},
                 {"fixed_alpha", cfg.strength.fixed_alpha ? json(*cfg.strength.fixed_alpha) : json(nullptr)}};
  json strengths = json::array();
  for (const auto& [key, alpha] : result.strengths.entries) {
    const auto& [type, enc, n, m] = key;
    strengths.push_back({{"type", to_string(type)}, {"encoder", enc}, {"n", n}, {"m", m}, {"alpha", alpha}});
  }
  j["strengths"] = std::move(strengths);
  json norms = json::array();
  for (const auto& [key, v] : result.dos.entries) {
    const auto& [type, enc, obj] = key;
    norms.push_back({{"type", to_string(type)}, {"encoder", enc}, {"object", obj}, {"norm", v.norm()}});
  }
  j["dos_norms"] = std::move(norms);
  return j.dump(2) + "\n";
}

}  // namespace dos
