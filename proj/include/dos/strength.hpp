// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "dos/embedding.hpp"
#include "dos/prompts.hpp"

namespace dos {

enum class Channel { attr, bg };
std::string_view to_string(Channel c) noexcept;

/// Cosine similarities between an object's pure-prompt embedding and its 42
/// attribute-prompt and 36 background-prompt embeddings, for one slot.
struct SimilarityProfile {
  EmbeddingType type = EmbeddingType::obj;
  std::string encoder_id;
  std::string object;
  Eigen::VectorXd attr;
  Eigen::VectorXd bg;
};

using ProfileKey = std::tuple<EmbeddingType, std::string, std::string>;  // (type, encoder, object)

struct ProfileSet {
  std::map<ProfileKey, SimilarityProfile> profiles;

  void add(SimilarityProfile p);
  /// Throws MissingProfile.
  const SimilarityProfile& at(EmbeddingType type, const std::string& encoder_id, const std::string& object) const;
};

SimilarityProfile similarity_profile(EmbeddingType type, const std::string& encoder_id, const std::string& object,
                                     const EmbeddingBundle& pure, std::span<const EmbeddingBundle* const> attr,
                                     std::span<const EmbeddingBundle* const> bg);

/// Profiles for every slot of `pure`.
std::vector<SimilarityProfile> similarity_profiles(const std::string& object, const EmbeddingBundle& pure,
                                                   std::span<const EmbeddingBundle* const> attr,
                                                   std::span<const EmbeddingBundle* const> bg);

/// Sigmoid centres per (type, channel) for one base model.
struct OffsetTable {
  std::string model_id;
  std::map<std::pair<EmbeddingType, Channel>, double> offsets;

  /// Throws MissingProfile when the entry is absent.
  double at(EmbeddingType type, Channel channel) const;

  /// Shipped values for "sdxl" and "sd3.5"; throws InvalidArgument otherwise.
  static OffsetTable standard(const std::string& model_id);
};

/// Offset tables keyed by model id, persisted as
/// {"<model>": {"obj": {"attr": x, "bg": x}, "eot": {...}, "pool": {...}}}.
struct OffsetLibrary {
  std::map<std::string, OffsetTable> tables;

  static OffsetLibrary standard();
  static OffsetLibrary from_json(std::string_view text);
  static OffsetLibrary load(const std::filesystem::path& path);
  std::string to_json() const;
  const OffsetTable& at(const std::string& model_id) const;
};

struct StrengthConfig {
  double temperature = 0.6;
  std::optional<double> fixed_alpha;

  /// Throws InvalidArgument on T <= 0 or fixed_alpha outside [0, 1].
  void validate() const;
};

using StrengthKey = std::tuple<EmbeddingType, std::string, std::string, std::string>;  // (type, encoder, n, m)

struct StrengthTable {
  std::map<StrengthKey, double> entries;

  /// Throws MissingPair.
  double at(EmbeddingType type, const std::string& encoder_id, const std::string& n, const std::string& m) const;
};

/// max(sigmoid(pearson(attr_n, attr_m); x_attr), sigmoid(1 - pearson(bg_n, bg_m); x_bg)),
/// or cfg.fixed_alpha when set.
double adaptive_strength(const SimilarityProfile& n, const SimilarityProfile& m, const OffsetTable& offsets,
                         const StrengthConfig& cfg);

/// Strength for every slot and ordered object pair of `spec`. Profiles are not
/// consulted when cfg.fixed_alpha is set.
StrengthTable build_strength_table(const PromptSpec& spec, const std::vector<EmbeddingSlot>& slots,
                                   const ProfileSet& profiles, const OffsetTable& offsets,
                                   const StrengthConfig& cfg);

struct OffsetEstimate {
  OffsetTable table;
  std::map<std::pair<EmbeddingType, Channel>, size_t> samples;  // pair statistics averaged
  std::map<std::pair<EmbeddingType, Channel>, size_t> skipped;  // constant-profile pairs
};

/// Offsets as the mean over all unordered class pairs of pearson(attr) and of
/// 1 - pearson(bg), pooled over every encoder view carrying the type.
OffsetEstimate precompute_offsets(const std::string& model_id, const std::vector<std::string>& classes,
                                  const ProfileSet& profiles, const std::vector<EmbeddingSlot>& slots);

}  // namespace dos
