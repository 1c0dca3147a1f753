// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dos/bundle.hpp"

namespace dos {

/// Which conditioning vector of an encoder view is addressed: the object's
/// semantic token rows, the EOT row, or the pooled vector.
enum class EmbeddingType { obj, eot, pool };

std::string_view to_string(EmbeddingType t) noexcept;
EmbeddingType parse_embedding_type(std::string_view text);
inline constexpr EmbeddingType kAllEmbeddingTypes[] = {EmbeddingType::obj, EmbeddingType::eot, EmbeddingType::pool};

/// One (type, encoder view) combination that strengths and separations are
/// computed for.
struct EmbeddingSlot {
  EmbeddingType type;
  std::string encoder_id;

  auto operator<=>(const EmbeddingSlot&) const = default;
};

/// obj and eot for every view, pool for views that carry a pooled vector.
std::vector<EmbeddingSlot> embedding_slots(const EmbeddingBundle& bundle);

/// The type-specific vector of one view. For obj, rows of every span of
/// `object` are averaged; eot is the row at eot_index; pool is the pooled vector.
Eigen::VectorXd extract_embedding(const EmbeddingBundle& bundle, EmbeddingType type, const std::string& encoder_id,
                                  const std::optional<std::string>& object = std::nullopt);

/// Throws EncoderMismatch unless both bundles come from the same model and the
/// named view has the same shape and pooled layout in each.
void require_compatible(const EmbeddingBundle& a, const EmbeddingBundle& b, const std::string& encoder_id);

}  // namespace dos
