// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dos/bundle.hpp"
#include "dos/prompts.hpp"
#include "dos/transform.hpp"

namespace dos::testing {

/// Uniform doubles built straight from mt19937_64 bits, so sequences are
/// identical across standard libraries.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  double uniform(double lo = -1.0, double hi = 1.0) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  size_t index(size_t n) { return static_cast<size_t>(engine_() % n); }
  uint64_t bits() { return engine_(); }

private:
  std::mt19937_64 engine_;
};

struct ViewShape {
  std::string encoder_id;
  int dim = 8;
  int pooled_dim = 0;  // 0: no pooled vector
};

/// One prompt family fully encoded with synthetic vectors. Each object keeps
/// the same token count in every prompt, like a real tokenizer would.
struct Fixture {
  PromptSpec spec;
  PromptFamily family;
  std::vector<ViewShape> views;
  std::map<std::string, int> token_counts;
  MemoryBundleSource source;

  const EmbeddingBundle& main() const;
};

/// Bundle for `prompt` with `objects` laid out left to right, one filler token
/// before each object, EOT after the last, two padding rows.
EmbeddingBundle synthetic_bundle(Rng& rng, const std::string& model_id, const std::string& prompt,
                                 const std::vector<std::string>& objects, const std::map<std::string, int>& token_counts,
                                 const std::vector<ViewShape>& views);

/// Random family over `n_objects` distinct nouns.
Fixture make_fixture(uint64_t seed, size_t n_objects, const std::vector<ViewShape>& views,
                     const std::string& model_id = "sdxl");

/// Shape set cycled through by the randomized suites.
std::vector<ViewShape> view_shapes(int dim, bool two_views);

/// Writes every bundle of the fixture plus a bridge-style manifest.json.
std::filesystem::path write_fixture(const Fixture& f, const std::filesystem::path& dir);

/// Random valid bundle with arbitrary spans, for codec round-trips.
EmbeddingBundle random_bundle(Rng& rng);

/// "a cat" encoded as one [77, 768] view, EOT at 3, "cat" at [2, 3).
EmbeddingBundle golden_cat_bundle();

/// Two-object, two-view family whose transform outputs are frozen in tests/data.
Fixture golden_pair_fixture();

/// Independent container writer that skips validation, so invalid bundles
/// can reach the decoder.
std::string raw_encode(const EmbeddingBundle& b);

struct MalformedCase {
  std::string name;
  std::string bytes;
  ErrorCode expected;
};

/// Containers that decode_bundle must reject, each with the error it should raise.
std::vector<MalformedCase> malformed_corpus();

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace dos::testing
