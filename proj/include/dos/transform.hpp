// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "dos/embedding.hpp"
#include "dos/prompts.hpp"
#include "dos/strength.hpp"

namespace dos {

using SeparationKey = std::tuple<EmbeddingType, std::string, std::string, std::string>;  // (type, encoder, n, m)
using DosKey = std::tuple<EmbeddingType, std::string, std::string>;                      // (type, encoder, object)

struct SeparationSet {
  std::map<SeparationKey, Eigen::VectorXd> entries;
};

struct DOSVectors {
  std::map<DosKey, Eigen::VectorXd> entries;
};

/// Which embedding types receive updates.
struct ApplyMask {
  bool obj = true;
  bool eot = true;
  bool pool = true;

  bool contains(EmbeddingType t) const noexcept;
  bool empty() const noexcept { return !obj && !eot && !pool; }
  /// Comma-separated list of obj, eot, pool (or "all").
  static ApplyMask parse(std::string_view text);
  std::string str() const;
};

struct TransformConfig {
  double lambda = 1.0;
  ApplyMask apply;
  StrengthConfig strength;

  void validate() const;
};

/// Semantic-token separation: obj_n's embedding in its pure prompt minus obj_m's
/// embedding in its pure prompt.
Eigen::VectorXd separation_obj(const EmbeddingBundle& pure_n, const EmbeddingBundle& pure_m, const std::string& obj_n,
                               const std::string& obj_m, const std::string& encoder_id);

/// EOT or pooled separation: the "separated from" prompt minus the "mixed with"
/// prompt.
Eigen::VectorXd separation_eot_pool(const EmbeddingBundle& sep, const EmbeddingBundle& mix, EmbeddingType type,
                                    const std::string& encoder_id);

/// Strength-weighted mean of each object's separations against its partners.
/// Empty for fewer than two objects.
DOSVectors dos_vectors(const PromptSpec& spec, const SeparationSet& seps, const StrengthTable& strengths);

/// Adds lambda * DOS vectors to the masked slots of `main`: every row of each
/// object's spans, the EOT row (sum over objects) and the pooled vector (sum
/// over objects). Everything else is copied bit for bit.
EmbeddingBundle apply_updates(const EmbeddingBundle& main, const DOSVectors& dos, const TransformConfig& cfg);

struct DirectionalEdit {
  std::set<EmbeddingType> types;
  double lambda = 1.0;
  std::optional<std::string> target_object;    // required for obj
  std::optional<std::string> positive_object;  // defaults to the bundle's only object
  std::optional<std::string> negative_object;
};

/// Adds lambda * (positive - negative) to the chosen slots of `target`.
EmbeddingBundle directional_edit(const EmbeddingBundle& target, const EmbeddingBundle& positive,
                                 const EmbeddingBundle& negative, const DirectionalEdit& edit);

/// Prompt-addressed bundle lookup.
class BundleSource {
public:
  virtual ~BundleSource() = default;
  /// Throws MissingBundle when the prompt is unknown.
  virtual std::shared_ptr<const EmbeddingBundle> get(const std::string& prompt) const = 0;
  virtual bool contains(const std::string& prompt) const = 0;

  std::vector<std::string> missing(const std::vector<std::string>& prompts) const;
};

class MemoryBundleSource final : public BundleSource {
public:
  void add(EmbeddingBundle bundle);
  std::shared_ptr<const EmbeddingBundle> get(const std::string& prompt) const override;
  bool contains(const std::string& prompt) const override;

private:
  std::map<std::string, std::shared_ptr<const EmbeddingBundle>> bundles_;
};

/// Resolves prompts through a bridge manifest; file paths are relative to
/// `base_dir`. Bundles are read on every call and never cached.
class ManifestBundleSource final : public BundleSource {
public:
  ManifestBundleSource(BundleManifest manifest, std::filesystem::path base_dir);
  static ManifestBundleSource open(const std::filesystem::path& manifest_path);

  std::shared_ptr<const EmbeddingBundle> get(const std::string& prompt) const override;
  bool contains(const std::string& prompt) const override;

private:
  std::map<std::string, std::filesystem::path> files_;
};

/// Every prompt a transform of `spec` reads.
std::vector<std::string> required_prompts(const PromptFamily& family, const StrengthConfig& cfg);

struct TransformResult {
  EmbeddingBundle bundle;
  StrengthTable strengths;
  SeparationSet separations;
  DOSVectors dos;
};

/// Profiles, strengths, separations, DOS vectors, update. Errors keep their
/// code and name the stage that raised them.
TransformResult run_transform(const PromptSpec& spec, const BundleSource& bundles, const OffsetLibrary& offsets,
                              const TransformConfig& cfg, const PromptForge& forge = PromptForge{});

/// {"prompt", "model_id", "config", "strengths": [...], "dos_norms": [...]}
std::string diagnostics_json(const PromptSpec& spec, const TransformResult& result, const TransformConfig& cfg);

}  // namespace dos
