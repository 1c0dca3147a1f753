// SPDX-License-Identifier: Apache-2.0
#include "dos/bundle.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

namespace dos {

using json = nlohmann::json;

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MalformedContainer: return "MalformedContainer";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SameObject: return "SameObject";
    case ErrorCode::UnknownBenchmark: return "UnknownBenchmark";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::ConstantProfile: return "ConstantProfile";
    case ErrorCode::MissingProfile: return "MissingProfile";
    case ErrorCode::MissingSpan: return "MissingSpan";
    case ErrorCode::MissingPooled: return "MissingPooled";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::MissingBundle: return "MissingBundle";
    case ErrorCode::EncoderMismatch: return "EncoderMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::UnparseableResponse: return "UnparseableResponse";
    case ErrorCode::MissingObjectLabel: return "MissingObjectLabel";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EndpointUnavailable: return "EndpointUnavailable";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// EmbeddingBundle accessors

const EncoderView* EmbeddingBundle::find_view(const std::string& encoder_id) const noexcept {
  for (const auto& v : encoders)
    if (v.encoder_id == encoder_id) return &v;
  return nullptr;
}

const EncoderView& EmbeddingBundle::view(const std::string& encoder_id) const {
  if (const auto* v = find_view(encoder_id)) return *v;
  throw Error(ErrorCode::EncoderMismatch, "bundle for '" + prompt + "' has no encoder '" + encoder_id + "'");
}

EncoderView& EmbeddingBundle::view(const std::string& encoder_id) {
  return const_cast<EncoderView&>(std::as_const(*this).view(encoder_id));
}

const std::vector<TokenSpan>& EmbeddingBundle::spans(const std::string& object,
                                                     const std::string& encoder_id) const {
  auto obj = object_spans.find(object);
  if (obj != object_spans.end()) {
    auto enc = obj->second.find(encoder_id);
    if (enc != obj->second.end() && !enc->second.empty()) return enc->second;
  }
  throw Error(ErrorCode::MissingSpan,
              "no span for '" + object + "' in encoder '" + encoder_id + "' of prompt '" + prompt + "'");
}

namespace {

template <typename Derived>
bool same_bits(const Eigen::DenseBase<Derived>& a, const Eigen::DenseBase<Derived>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.size() == 0 ||
         std::memcmp(a.derived().data(), b.derived().data(), sizeof(float) * static_cast<size_t>(a.size())) == 0;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x.derived().data()[i])) return false;
  return true;
}

}  // namespace

bool bitwise_equal(const EncoderView& a, const EncoderView& b) {
  if (a.encoder_id != b.encoder_id || a.eot_index != b.eot_index) return false;
  if (!same_bits(a.tokens, b.tokens)) return false;
  if (a.pooled.has_value() != b.pooled.has_value()) return false;
  return !a.pooled || same_bits(*a.pooled, *b.pooled);
}

bool bitwise_equal(const EmbeddingBundle& a, const EmbeddingBundle& b) {
  if (a.model_id != b.model_id || a.prompt != b.prompt || a.object_spans != b.object_spans) return false;
  if (a.encoders.size() != b.encoders.size()) return false;
  for (size_t i = 0; i < a.encoders.size(); ++i)
    if (!bitwise_equal(a.encoders[i], b.encoders[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate_bundle(const EmbeddingBundle& bundle) {
  std::vector<Violation> out;
  auto invariant = [&](std::string msg) { out.push_back({ErrorCode::InvariantViolation, std::move(msg)}); };

  if (bundle.encoders.empty()) invariant("encoders: bundle has no encoder views");

  std::set<std::string> ids;
  for (const auto& v : bundle.encoders) {
    const std::string where = "encoders['" + v.encoder_id + "']";
    if (v.encoder_id.empty()) invariant("encoders: empty encoder_id");
    if (!ids.insert(v.encoder_id).second) invariant(where + ": duplicate encoder_id");
    if (v.tokens.rows() == 0 || v.tokens.cols() == 0)
      invariant(where + ".tokens: empty token matrix");
    if (v.eot_index < 0 || v.eot_index >= v.tokens.rows())
      invariant(where + ".eot_index: " + std::to_string(v.eot_index) + " outside [0, " +
                std::to_string(v.tokens.rows()) + ")");
    if (!all_finite(v.tokens))
      out.push_back({ErrorCode::NonFiniteValue, where + ".tokens: contains NaN or Inf"});
    if (v.pooled && !all_finite(*v.pooled))
      out.push_back({ErrorCode::NonFiniteValue, where + ".pooled: contains NaN or Inf"});
  }

  for (const auto& [object, per_encoder] : bundle.object_spans) {
    if (object.empty()) invariant("object_spans: empty object noun");
    for (const auto& [encoder_id, spans] : per_encoder) {
      const EncoderView* v = bundle.find_view(encoder_id);
      const std::string where = "object_spans['" + object + "']['" + encoder_id + "']";
      if (!v) {
        invariant(where + ": unknown encoder");
        continue;
      }
      for (const auto& s : spans) {
        const std::string range = "[" + std::to_string(s.start) + ", " + std::to_string(s.end) + ")";
        if (s.start >= s.end)
          invariant(where + ": empty or reversed span " + range);
        else if (s.start < 1 || s.end > v->eot_index)
          invariant(where + ": span " + range + " not inside [1, eot_index=" + std::to_string(v->eot_index) + ")");
      }
    }
  }

  // Distinct objects may not share a token row within one encoder.
  for (auto a = bundle.object_spans.begin(); a != bundle.object_spans.end(); ++a) {
    for (auto b = std::next(a); b != bundle.object_spans.end(); ++b) {
      for (const auto& [encoder_id, spans_a] : a->second) {
        auto it = b->second.find(encoder_id);
        if (it == b->second.end()) continue;
        const bool overlap = std::any_of(spans_a.begin(), spans_a.end(), [&](const TokenSpan& x) {
          return std::any_of(it->second.begin(), it->second.end(),
                             [&](const TokenSpan& y) { return x.start < y.end && y.start < x.end; });
        });
        if (overlap)
          invariant("object_spans: spans of '" + a->first + "' and '" + b->first + "' overlap in encoder '" +
                    encoder_id + "'");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Container codec

namespace {

constexpr std::string_view kTokensSuffix = ".tokens";
constexpr std::string_view kPooledSuffix = ".pooled";
constexpr std::uint64_t kMaxHeaderBytes = 100u << 20;

[[noreturn]] void malformed(const std::string& msg) { throw Error(ErrorCode::MalformedContainer, msg); }

void append_floats(std::string& out, const float* data, size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data), count * sizeof(float));
  } else {
    for (size_t i = 0; i < count; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(data[i]);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  }
}

void load_floats(const char* src, float* dst, size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, src, count * sizeof(float));
  } else {
    for (size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(src[4 * i + b])) << (8 * b);
      dst[i] = std::bit_cast<float>(bits);
    }
  }
}

struct TensorRef {
  const float* data;
  size_t count;
  std::vector<std::int64_t> shape;
};

json spans_to_json(const ObjectSpans& spans) {
  json j = json::object();
  for (const auto& [object, per_encoder] : spans) {
    json enc = json::object();
    for (const auto& [encoder_id, list] : per_encoder) {
      json arr = json::array();
      for (const auto& s : list) arr.push_back({s.start, s.end});
      enc[encoder_id] = std::move(arr);
    }
    j[object] = std::move(enc);
  }
  return j;
}

ObjectSpans spans_from_json(const json& j) {
  if (!j.is_object()) malformed("object_spans must be a JSON object");
  ObjectSpans out;
  for (const auto& [object, per_encoder] : j.items()) {
    if (!per_encoder.is_object()) malformed("object_spans['" + object + "'] must be an object");
    auto& dst = out[object];
    for (const auto& [encoder_id, list] : per_encoder.items()) {
      if (!list.is_array()) malformed("object_spans['" + object + "']['" + encoder_id + "'] must be a list");
      auto& spans = dst[encoder_id];
      for (const auto& pair : list) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number_integer())
          malformed("span entries must be [start, end) integer pairs");
        spans.push_back({pair[0].get<int>(), pair[1].get<int>()});
      }
    }
  }
  return out;
}

const json& require_string_key(const json& meta, const char* key) {
  auto it = meta.find(key);
  if (it == meta.end() || !it->is_string()) malformed(std::string("metadata key '") + key + "' missing or not a string");
  return *it;
}

json parse_embedded_json(const json& value, const char* key) {
  try {
    return json::parse(value.get<std::string>());
  } catch (const json::parse_error& e) {
    malformed(std::string("metadata key '") + key + "' is not valid JSON: " + e.what());
  }
}

void throw_first_violation(const std::vector<Violation>& violations) {
  if (violations.empty()) return;
  std::string msg;
  for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v.description;
  // Non-finite payloads take precedence so callers can distinguish the two.
  const bool non_finite = std::any_of(violations.begin(), violations.end(),
                                      [](const Violation& v) { return v.code == ErrorCode::NonFiniteValue; });
  throw Error(non_finite ? ErrorCode::NonFiniteValue : ErrorCode::InvariantViolation, msg);
}

}  // namespace

std::string encode_bundle(const EmbeddingBundle& bundle) {
  throw_first_violation(validate_bundle(bundle));

  std::map<std::string, TensorRef> tensors;
  json eot = json::object();
  json order = json::array();
  for (const auto& v : bundle.encoders) {
    tensors[v.encoder_id + std::string(kTokensSuffix)] = {
        v.tokens.data(), static_cast<size_t>(v.tokens.size()), {v.tokens.rows(), v.tokens.cols()}};
    if (v.pooled)
      tensors[v.encoder_id + std::string(kPooledSuffix)] = {
          v.pooled->data(), static_cast<size_t>(v.pooled->size()), {v.pooled->size()}};
    eot[v.encoder_id] = v.eot_index;
    order.push_back(v.encoder_id);
  }

  json header = json::object();
  header["__metadata__"] = {
      {"model_id", bundle.model_id},
      {"prompt", bundle.prompt},
      {"eot_index", eot.dump()},
      {"object_spans", spans_to_json(bundle.object_spans).dump()},
      {"encoders", order.dump()},
  };
  size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const size_t bytes = t.count * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }

  std::string header_text = header.dump();
  header_text.append((8 - header_text.size() % 8) % 8, ' ');

  std::string out;
  out.reserve(8 + header_text.size() + offset);
  const std::uint64_t header_len = header_text.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((header_len >> (8 * b)) & 0xFFu));
  out += header_text;
  for (const auto& [name, t] : tensors) append_floats(out, t.data, t.count);
  return out;
}

EmbeddingBundle decode_bundle(std::string_view bytes) {
  if (bytes.size() < 8) malformed("file shorter than the 8-byte header length");
  std::uint64_t header_len = 0;
  for (int b = 0; b < 8; ++b) header_len |= std::uint64_t(static_cast<unsigned char>(bytes[b])) << (8 * b);
  if (header_len > kMaxHeaderBytes || header_len > bytes.size() - 8)
    malformed("header length " + std::to_string(header_len) + " exceeds file size");

  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::parse_error& e) {
    malformed(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) malformed("header must be a JSON object");

  const std::string_view payload = bytes.substr(8 + header_len);

  auto meta_it = header.find("__metadata__");
  if (meta_it == header.end() || !meta_it->is_object()) malformed("missing __metadata__ block");
  const json& meta = *meta_it;

  EmbeddingBundle bundle;
  bundle.model_id = require_string_key(meta, "model_id").get<std::string>();
  bundle.prompt = require_string_key(meta, "prompt").get<std::string>();
  const json eot = parse_embedded_json(require_string_key(meta, "eot_index"), "eot_index");
  if (!eot.is_object()) malformed("eot_index must map encoder ids to integers");
  bundle.object_spans = spans_from_json(parse_embedded_json(require_string_key(meta, "object_spans"), "object_spans"));

  struct Slot {
    std::string name;
    size_t begin, end;
  };
  std::vector<Slot> slots;
  std::map<std::string, EncoderView> views;
  std::map<std::string, PooledVector> pooled;

  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    if (!entry.is_object()) malformed("tensor entry '" + name + "' must be an object");
    auto dtype = entry.find("dtype");
    auto shape = entry.find("shape");
    auto offsets = entry.find("data_offsets");
    if (dtype == entry.end() || shape == entry.end() || offsets == entry.end())
      malformed("tensor entry '" + name + "' lacks dtype/shape/data_offsets");
    if (*dtype != "F32") malformed("tensor '" + name + "' has dtype " + dtype->dump() + ", expected F32");
    if (!shape->is_array() || !offsets->is_array() || offsets->size() != 2 || !(*offsets)[0].is_number_unsigned() ||
        !(*offsets)[1].is_number_unsigned())
      malformed("tensor '" + name + "' has malformed shape or offsets");

    std::vector<std::int64_t> dims;
    size_t count = 1;
    for (const auto& d : *shape) {
      if (!d.is_number_unsigned()) malformed("tensor '" + name + "' has a non-integer dimension");
      dims.push_back(d.get<std::int64_t>());
      count *= d.get<size_t>();
    }
    const size_t begin = (*offsets)[0].get<size_t>();
    const size_t end = (*offsets)[1].get<size_t>();
    if (end < begin || end > payload.size() || end - begin != count * sizeof(float))
      malformed("tensor '" + name + "' byte range does not match its shape");
    slots.push_back({name, begin, end});

    const char* src = payload.data() + begin;
    if (name.ends_with(kTokensSuffix)) {
      if (dims.size() != 2) malformed("tensor '" + name + "' must have rank 2");
      const std::string id = name.substr(0, name.size() - kTokensSuffix.size());
      EncoderView v;
      v.encoder_id = id;
      v.tokens.resize(dims[0], dims[1]);
      load_floats(src, v.tokens.data(), count);
      auto e = eot.find(id);
      if (e == eot.end() || !e->is_number_integer()) malformed("eot_index missing for encoder '" + id + "'");
      v.eot_index = e->get<int>();
      views.emplace(id, std::move(v));
    } else if (name.ends_with(kPooledSuffix)) {
      if (dims.size() != 1) malformed("tensor '" + name + "' must have rank 1");
      PooledVector p(dims[0]);
      load_floats(src, p.data(), count);
      pooled.emplace(name.substr(0, name.size() - kPooledSuffix.size()), std::move(p));
    } else {
      malformed("unexpected tensor name '" + name + "'");
    }
  }

  // The payload must be tiled exactly by the tensors, with no gaps or overlaps.
  std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.begin < b.begin; });
  size_t cursor = 0;
  for (const auto& s : slots) {
    if (s.begin != cursor) malformed("tensor '" + s.name + "' leaves a gap or overlaps its predecessor");
    cursor = s.end;
  }
  if (cursor != payload.size()) malformed("payload has trailing bytes");

  for (auto& [id, p] : pooled) {
    auto it = views.find(id);
    if (it == views.end()) malformed("pooled tensor for encoder '" + id + "' without token tensor");
    it->second.pooled = std::move(p);
  }
  for (const auto& [id, value] : eot.items())
    if (!views.contains(id)) malformed("eot_index names encoder '" + id + "' without token tensor");

  std::vector<std::string> order;
  if (auto it = meta.find("encoders"); it != meta.end()) {
    if (!it->is_string()) malformed("metadata key 'encoders' must be a string");
    const json list = parse_embedded_json(*it, "encoders");
    if (!list.is_array()) malformed("encoders must be a JSON list");
    for (const auto& id : list) {
      if (!id.is_string() || !views.contains(id.get<std::string>()))
        malformed("encoders lists an id without token tensor");
      order.push_back(id.get<std::string>());
    }
    if (order.size() != views.size() || std::set<std::string>(order.begin(), order.end()).size() != order.size())
      malformed("encoders list does not match the token tensors");
  } else {
    for (const auto& [id, v] : views) order.push_back(id);
  }
  for (const auto& id : order) bundle.encoders.push_back(std::move(views.at(id)));

  throw_first_violation(validate_bundle(bundle));
  return bundle;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for '" + path.string() + "'");
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot create '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoFailure, "cannot move result into '" + path.string() + "'");
  }
}

EmbeddingBundle read_bundle(const std::filesystem::path& path) { return decode_bundle(read_file(path)); }

void write_bundle(const EmbeddingBundle& bundle, const std::filesystem::path& path) {
  write_file_atomic(path, encode_bundle(bundle));
}

// ---------------------------------------------------------------------------
// Manifest

std::string_view to_string(PromptRole role) noexcept {
  switch (role) {
    case PromptRole::main: return "main";
    case PromptRole::pure: return "pure";
    case PromptRole::sep: return "sep";
    case PromptRole::mix: return "mix";
    case PromptRole::attr: return "attr";
    case PromptRole::bg: return "bg";
  }
  return "main";
}

PromptRole parse_prompt_role(std::string_view text) {
  for (auto r : {PromptRole::main, PromptRole::pure, PromptRole::sep, PromptRole::mix, PromptRole::attr,
                 PromptRole::bg})
    if (to_string(r) == text) return r;
  throw Error(ErrorCode::InvalidArgument, "unknown prompt role '" + std::string(text) + "'");
}

std::string BundleManifest::to_json() const {
  json arr = json::array();
  for (const auto& e : entries) {
    json j = {{"prompt", e.prompt}, {"role", to_string(e.role)}, {"object_refs", e.object_refs}};
    if (!e.file_path.empty()) j["file_path"] = e.file_path;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

BundleManifest BundleManifest::from_json(std::string_view text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!arr.is_array()) throw Error(ErrorCode::InvalidArgument, "manifest must be a JSON list");
  BundleManifest m;
  for (const auto& j : arr) {
    if (!j.is_object() || !j.contains("prompt") || !j.contains("role"))
      throw Error(ErrorCode::InvalidArgument, "manifest entries need 'prompt' and 'role'");
    ManifestEntry e;
    e.prompt = j.at("prompt").get<std::string>();
    e.role = parse_prompt_role(j.at("role").get<std::string>());
    if (j.contains("object_refs")) e.object_refs = j.at("object_refs").get<std::vector<std::string>>();
    if (j.contains("file_path")) e.file_path = j.at("file_path").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

BundleManifest BundleManifest::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

void BundleManifest::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json()); }

std::vector<std::string> validate_manifest(const BundleManifest& manifest) {
  std::vector<std::string> out;
  std::set<std::string> paths;
  for (const auto& e : manifest.entries)
    if (!e.file_path.empty() && !paths.insert(e.file_path).second)
      out.push_back("duplicate file_path '" + e.file_path + "'");
  return out;
}

}  // namespace dos
