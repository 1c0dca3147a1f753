// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dos/error.hpp"

namespace dos {

/// Row i holds the encoder output at token position i.
using TokenMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PooledVector = Eigen::VectorXf;

/// Half-open token range [start, end).
struct TokenSpan {
  int start = 0;
  int end = 0;

  int size() const noexcept { return end - start; }
  bool contains(int row) const noexcept { return row >= start && row < end; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// Output of one text encoder for one prompt: [L, d] token rows (SOT, semantic
/// tokens, EOT, padding), the EOT position, and the optional pooled projection.
struct EncoderView {
  std::string encoder_id;
  TokenMatrix tokens;
  int eot_index = 0;
  std::optional<PooledVector> pooled;

  Eigen::Index length() const noexcept { return tokens.rows(); }
  Eigen::Index dim() const noexcept { return tokens.cols(); }
};

/// object noun -> encoder id -> spans
using ObjectSpans = std::map<std::string, std::map<std::string, std::vector<TokenSpan>>>;

struct EmbeddingBundle {
  std::string model_id;
  std::string prompt;
  std::vector<EncoderView> encoders;
  ObjectSpans object_spans;

  const EncoderView& view(const std::string& encoder_id) const;
  EncoderView& view(const std::string& encoder_id);
  const EncoderView* find_view(const std::string& encoder_id) const noexcept;

  /// Spans of `object` in `encoder_id`; throws MissingSpan when there are none.
  const std::vector<TokenSpan>& spans(const std::string& object, const std::string& encoder_id) const;
};

/// Equality of every field, floats compared by bit pattern.
bool bitwise_equal(const EncoderView& a, const EncoderView& b);
bool bitwise_equal(const EmbeddingBundle& a, const EmbeddingBundle& b);

struct Violation {
  ErrorCode code;  // InvariantViolation or NonFiniteValue
  std::string description;
};

/// Checks every bundle invariant; an empty result means the bundle is valid.
std::vector<Violation> validate_bundle(const EmbeddingBundle& bundle);

/// Serialized container bytes. Deterministic: equal bundles give equal bytes.
std::string encode_bundle(const EmbeddingBundle& bundle);
EmbeddingBundle decode_bundle(std::string_view bytes);

EmbeddingBundle read_bundle(const std::filesystem::path& path);
void write_bundle(const EmbeddingBundle& bundle, const std::filesystem::path& path);

enum class PromptRole { main, pure, sep, mix, attr, bg };

std::string_view to_string(PromptRole role) noexcept;
PromptRole parse_prompt_role(std::string_view text);

struct ManifestEntry {
  std::string prompt;
  PromptRole role = PromptRole::main;
  std::vector<std::string> object_refs;
  std::string file_path;  // empty in encode requests

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Prompt inventory exchanged with the encoder bridge. As an encode request it
/// carries no file paths; the bridge answers with the same entries plus paths
/// relative to the manifest's directory.
struct BundleManifest {
  std::vector<ManifestEntry> entries;

  std::string to_json() const;
  static BundleManifest from_json(std::string_view text);

  static BundleManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Violations of the manifest's own invariants (unique file paths).
std::vector<std::string> validate_manifest(const BundleManifest& manifest);

/// Writes `bytes` to `path` through a temporary sibling and a rename.
/// Creates missing parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace dos
