// SPDX-License-Identifier: Apache-2.0
#include "dos/strength.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dos/numeric.hpp"

namespace dos {

using json = nlohmann::json;

std::string_view to_string(Channel c) noexcept { return c == Channel::attr ? "attr" : "bg"; }

void ProfileSet::add(SimilarityProfile p) {
  ProfileKey key{p.type, p.encoder_id, p.object};
  profiles.insert_or_assign(std::move(key), std::move(p));
}

const SimilarityProfile& ProfileSet::at(EmbeddingType type, const std::string& encoder_id,
                                        const std::string& object) const {
  auto it = profiles.find({type, encoder_id, object});
  if (it == profiles.end())
    throw Error(ErrorCode::MissingProfile, "no " + std::string(to_string(type)) + " profile for '" + object +
                                               "' in encoder '" + encoder_id + "'");
  return it->second;
}

namespace {

Eigen::VectorXd similarities(EmbeddingType type, const std::string& encoder_id, const std::string& object,
                             const EmbeddingBundle& pure, const Eigen::VectorXd& reference,
                             std::span<const EmbeddingBundle* const> others) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(others.size()));
  for (size_t i = 0; i < others.size(); ++i) {
    require_compatible(pure, *others[i], encoder_id);
    out(static_cast<Eigen::Index>(i)) =
        cosine_similarity(reference, extract_embedding(*others[i], type, encoder_id, object));
  }
  return out;
}

}  // namespace

SimilarityProfile similarity_profile(EmbeddingType type, const std::string& encoder_id, const std::string& object,
                                     const EmbeddingBundle& pure, std::span<const EmbeddingBundle* const> attr,
                                     std::span<const EmbeddingBundle* const> bg) {
  if (attr.size() != Lexicon::kAttributeCount || bg.size() != Lexicon::kBackgroundCount)
    throw Error(ErrorCode::LengthMismatch, "profiles need 42 attribute and 36 background bundles, got " +
                                               std::to_string(attr.size()) + " and " + std::to_string(bg.size()));
  const Eigen::VectorXd reference = extract_embedding(pure, type, encoder_id, object);
  SimilarityProfile p;
  p.type = type;
  p.encoder_id = encoder_id;
  p.object = object;
  p.attr = similarities(type, encoder_id, object, pure, reference, attr);
  p.bg = similarities(type, encoder_id, object, pure, reference, bg);
  return p;
}

std::vector<SimilarityProfile> similarity_profiles(const std::string& object, const EmbeddingBundle& pure,
                                                   std::span<const EmbeddingBundle* const> attr,
                                                   std::span<const EmbeddingBundle* const> bg) {
  std::vector<SimilarityProfile> out;
  for (const auto& slot : embedding_slots(pure))
    out.push_back(similarity_profile(slot.type, slot.encoder_id, object, pure, attr, bg));
  return out;
}

// ---------------------------------------------------------------------------
// Offsets

double OffsetTable::at(EmbeddingType type, Channel channel) const {
  auto it = offsets.find({type, channel});
  if (it == offsets.end())
    throw Error(ErrorCode::MissingProfile, "offset table for '" + model_id + "' lacks " +
                                               std::string(to_string(type)) + "/" + std::string(to_string(channel)));
  return it->second;
}

OffsetTable OffsetTable::standard(const std::string& model_id) {
  using T = EmbeddingType;
  using C = Channel;
  OffsetTable t;
  t.model_id = model_id;
  if (model_id == "sdxl") {
    t.offsets = {{{T::obj, C::attr}, 0.5550}, {{T::eot, C::attr}, 0.5474}, {{T::pool, C::attr}, 0.5366},
                 {{T::obj, C::bg}, 0.1592},   {{T::eot, C::bg}, 0.3862},   {{T::pool, C::bg}, 0.5835}};
  } else if (model_id == "sd3.5") {
    t.offsets = {{{T::obj, C::attr}, 0.5536}, {{T::eot, C::attr}, 0.5473}, {{T::pool, C::attr}, 0.6168},
                 {{T::obj, C::bg}, 0.1705},   {{T::eot, C::bg}, 0.3877},   {{T::pool, C::bg}, 0.4325}};
  } else {
    throw Error(ErrorCode::InvalidArgument, "no shipped offsets for model '" + model_id + "'");
  }
  return t;
}

OffsetLibrary OffsetLibrary::standard() {
  OffsetLibrary lib;
  for (const char* id : {"sdxl", "sd3.5"}) lib.tables.emplace(id, OffsetTable::standard(id));
  return lib;
}

OffsetLibrary OffsetLibrary::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("offsets file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "offsets file must be a JSON object");
  OffsetLibrary lib;
  for (const auto& [model, per_type] : j.items()) {
    OffsetTable t;
    t.model_id = model;
    for (const auto& [type, per_channel] : per_type.items()) {
      for (const auto& [channel, value] : per_channel.items()) {
        if (channel != "attr" && channel != "bg")
          throw Error(ErrorCode::InvalidArgument, "unknown offset channel '" + channel + "'");
        const double x = value.get<double>();
        if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteValue, "offset for " + model + "/" + type);
        t.offsets[{parse_embedding_type(type), channel == "attr" ? Channel::attr : Channel::bg}] = x;
      }
    }
    if (t.offsets.size() != 6)
      throw Error(ErrorCode::InvalidArgument, "offset table for '" + model + "' needs 6 entries");
    lib.tables.emplace(model, std::move(t));
  }
  return lib;
}

OffsetLibrary OffsetLibrary::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

std::string OffsetLibrary::to_json() const {
  json j = json::object();
  for (const auto& [model, t] : tables)
    for (const auto& [key, value] : t.offsets)
      j[model][std::string(to_string(key.first))][std::string(to_string(key.second))] = value;
  return j.dump(2) + "\n";
}

const OffsetTable& OffsetLibrary::at(const std::string& model_id) const {
  auto it = tables.find(model_id);
  if (it == tables.end()) throw Error(ErrorCode::MissingProfile, "no offsets for model '" + model_id + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Strengths

void StrengthConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  if (fixed_alpha && !(*fixed_alpha >= 0.0 && *fixed_alpha <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "fixed alpha must lie in [0, 1]");
}

double StrengthTable::at(EmbeddingType type, const std::string& encoder_id, const std::string& n,
                         const std::string& m) const {
  auto it = entries.find({type, encoder_id, n, m});
  if (it == entries.end())
    throw Error(ErrorCode::MissingPair, "no " + std::string(to_string(type)) + " strength for ('" + n + "', '" + m +
                                            "') in encoder '" + encoder_id + "'");
  return it->second;
}

double adaptive_strength(const SimilarityProfile& n, const SimilarityProfile& m, const OffsetTable& offsets,
                         const StrengthConfig& cfg) {
  cfg.validate();
  if (cfg.fixed_alpha) return *cfg.fixed_alpha;
  if (n.type != m.type)
    throw Error(ErrorCode::InvalidArgument, "profiles of different embedding types");
  double rho_attr = 0.0, rho_bg = 0.0;
  try {
    rho_attr = pearson(n.attr, m.attr);
    rho_bg = pearson(n.bg, m.bg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ConstantInput) throw;
    throw Error(ErrorCode::ConstantProfile, "profiles of '" + n.object + "' and '" + m.object + "': " + e.detail());
  }
  const double attr = shifted_sigmoid(rho_attr, offsets.at(n.type, Channel::attr), cfg.temperature);
  const double bg = shifted_sigmoid(1.0 - rho_bg, offsets.at(n.type, Channel::bg), cfg.temperature);
  return std::max(attr, bg);
}

StrengthTable build_strength_table(const PromptSpec& spec, const std::vector<EmbeddingSlot>& slots,
                                   const ProfileSet& profiles, const OffsetTable& offsets,
                                   const StrengthConfig& cfg) {
  cfg.validate();
  StrengthTable table;
  const auto& objs = spec.objects;
  for (const auto& slot : slots) {
    for (size_t i = 0; i < objs.size(); ++i) {
      for (size_t j = i + 1; j < objs.size(); ++j) {
        double alpha = 0.0;
        if (cfg.fixed_alpha) {
          alpha = *cfg.fixed_alpha;
        } else {
          alpha = adaptive_strength(profiles.at(slot.type, slot.encoder_id, objs[i]),
                                    profiles.at(slot.type, slot.encoder_id, objs[j]), offsets, cfg);
        }
        // One evaluation per unordered pair keeps (n, m) and (m, n) identical.
        table.entries[{slot.type, slot.encoder_id, objs[i], objs[j]}] = alpha;
        table.entries[{slot.type, slot.encoder_id, objs[j], objs[i]}] = alpha;
      }
    }
  }
  return table;
}

OffsetEstimate precompute_offsets(const std::string& model_id, const std::vector<std::string>& classes,
                                  const ProfileSet& profiles, const std::vector<EmbeddingSlot>& slots) {
  std::map<std::pair<EmbeddingType, Channel>, CompensatedSum<double>> sums;
  OffsetEstimate est;
  for (const auto& slot : slots) {
    for (size_t i = 0; i < classes.size(); ++i) {
      for (size_t j = i + 1; j < classes.size(); ++j) {
        const auto& a = profiles.at(slot.type, slot.encoder_id, classes[i]);
        const auto& b = profiles.at(slot.type, slot.encoder_id, classes[j]);
        const std::pair<std::pair<EmbeddingType, Channel>, double (*)(double)> channels[] = {
            {{slot.type, Channel::attr}, [](double r) { return r; }},
            {{slot.type, Channel::bg}, [](double r) { return 1.0 - r; }},
        };
        for (const auto& [key, map] : channels) {
          try {
            const double rho = key.second == Channel::attr ? pearson(a.attr, b.attr) : pearson(a.bg, b.bg);
            sums[key].add(map(rho));
            ++est.samples[key];
          } catch (const Error& e) {
            if (e.code() != ErrorCode::ConstantInput) throw;
            ++est.skipped[key];
          }
        }
      }
    }
  }
  est.table.model_id = model_id;
  for (const auto& [key, sum] : sums)
    est.table.offsets[key] = sum.value() / static_cast<double>(est.samples.at(key));
  return est;
}

}  // namespace dos
