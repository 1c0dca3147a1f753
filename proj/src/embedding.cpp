// SPDX-License-Identifier: Apache-2.0
#include "dos/embedding.hpp"

namespace dos {

std::string_view to_string(EmbeddingType t) noexcept {
  switch (t) {
    case EmbeddingType::obj: return "obj";
    case EmbeddingType::eot: return "eot";
    case EmbeddingType::pool: return "pool";
  }
  return "";
}

EmbeddingType parse_embedding_type(std::string_view text) {
  for (auto t : kAllEmbeddingTypes)
    if (to_string(t) == text) return t;
  throw Error(ErrorCode::InvalidArgument, "unknown embedding type '" + std::string(text) + "'");
}

std::vector<EmbeddingSlot> embedding_slots(const EmbeddingBundle& bundle) {
  std::vector<EmbeddingSlot> out;
  for (const auto& v : bundle.encoders) {
    out.push_back({EmbeddingType::obj, v.encoder_id});
    out.push_back({EmbeddingType::eot, v.encoder_id});
    if (v.pooled) out.push_back({EmbeddingType::pool, v.encoder_id});
  }
  return out;
}

Eigen::VectorXd extract_embedding(const EmbeddingBundle& bundle, EmbeddingType type, const std::string& encoder_id,
                                  const std::optional<std::string>& object) {
  const EncoderView& view = bundle.view(encoder_id);
  switch (type) {
    case EmbeddingType::obj: {
      if (!object) throw Error(ErrorCode::MissingSpan, "obj extraction needs an object noun");
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(view.dim());
      int rows = 0;
      for (const auto& span : bundle.spans(*object, encoder_id)) {
        for (int r = span.start; r < span.end; ++r) {
          sum += view.tokens.row(r).transpose().cast<double>();
          ++rows;
        }
      }
      if (rows == 1) return sum;
      return sum / static_cast<double>(rows);
    }
    case EmbeddingType::eot:
      return view.tokens.row(view.eot_index).transpose().cast<double>();
    case EmbeddingType::pool:
      if (!view.pooled)
        throw Error(ErrorCode::MissingPooled,
                    "encoder '" + encoder_id + "' of prompt '" + bundle.prompt + "' has no pooled vector");
      return view.pooled->cast<double>();
  }
  return {};
}

void require_compatible(const EmbeddingBundle& a, const EmbeddingBundle& b, const std::string& encoder_id) {
  if (a.model_id != b.model_id)
    throw Error(ErrorCode::EncoderMismatch, "bundles from models '" + a.model_id + "' and '" + b.model_id + "'");
  const EncoderView& va = a.view(encoder_id);
  const EncoderView& vb = b.view(encoder_id);
  if (va.dim() != vb.dim() || va.pooled.has_value() != vb.pooled.has_value() ||
      (va.pooled && va.pooled->size() != vb.pooled->size()))
    throw Error(ErrorCode::EncoderMismatch, "encoder '" + encoder_id + "' differs in layout between '" + a.prompt +
                                                "' and '" + b.prompt + "'");
}

}  // namespace dos
