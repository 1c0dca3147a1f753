#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dos/transform.hpp"
#include "fixtures.hpp"
#include "oracle.hpp"

using namespace dos;
using dos::testing::Rng;

namespace {

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool rows_equal(const TokenMatrix& a, const TokenMatrix& b, int r) {
  for (int c = 0; c < a.cols(); ++c)
    if (!same_bits(a(r, c), b(r, c))) return false;
  return true;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoFailure;
}

const OffsetLibrary& offsets() {
  static const OffsetLibrary lib = OffsetLibrary::standard();
  return lib;
}

}  // namespace

TEST_CASE("extract_embedding") {
  Rng rng(41);
  const auto b = testing::synthetic_bundle(rng, "sdxl", "a cat and an ice cream cone", {"cat", "ice cream cone"},
                                           {{"cat", 1}, {"ice cream cone", 2}}, {{"clip", 4, 3}});
  const auto& v = b.encoders[0];
  const auto cat = extract_embedding(b, EmbeddingType::obj, "clip", std::string("cat"));
  for (int c = 0; c < 4; ++c) CHECK(cat(c) == static_cast<double>(v.tokens(2, c)));
  const auto cone = extract_embedding(b, EmbeddingType::obj, "clip", std::string("ice cream cone"));
  for (int c = 0; c < 4; ++c)
    CHECK(cone(c) == doctest::Approx((double(v.tokens(4, c)) + double(v.tokens(5, c))) / 2).epsilon(1e-15));
  const auto eot = extract_embedding(b, EmbeddingType::eot, "clip");
  for (int c = 0; c < 4; ++c) CHECK(eot(c) == static_cast<double>(v.tokens(v.eot_index, c)));
  const auto pool = extract_embedding(b, EmbeddingType::pool, "clip");
  CHECK(pool.size() == 3);

  CHECK(code_of([&] { extract_embedding(b, EmbeddingType::obj, "clip", std::string("dog")); }) == ErrorCode::MissingSpan);
  auto no_pool = b;
  no_pool.encoders[0].pooled.reset();
  CHECK(code_of([&] { extract_embedding(no_pool, EmbeddingType::pool, "clip"); }) == ErrorCode::MissingPooled);

  const auto golden = testing::golden_cat_bundle();
  const auto row = extract_embedding(golden, EmbeddingType::eot, "clip_l");
  for (int c = 0; c < 768; ++c) CHECK(row(c) == static_cast<double>(golden.encoders[0].tokens(3, c)));
}

TEST_CASE("embedding slots") {
  const auto f = testing::make_fixture(42, 2, testing::view_shapes(8, true));
  const auto slots = embedding_slots(f.main());
  CHECK(slots.size() == 5);
  CHECK(std::count_if(slots.begin(), slots.end(), [](const EmbeddingSlot& s) { return s.type == EmbeddingType::pool; }) == 1);
}

TEST_CASE("separations") {
  const auto f = testing::make_fixture(43, 2, testing::view_shapes(8, true));
  const auto& n = f.spec.objects[0];
  const auto& m = f.spec.objects[1];
  const auto pn = f.source.get(f.family.pure.at(n));
  const auto pm = f.source.get(f.family.pure.at(m));

  const auto s_nm = separation_obj(*pn, *pm, n, m, "clip_l");
  const auto s_mn = separation_obj(*pm, *pn, m, n, "clip_l");
  for (int i = 0; i < s_nm.size(); ++i) CHECK(s_nm(i) + s_mn(i) == 0.0);
  CHECK(separation_obj(*pn, *pn, n, n, "clip_l").isZero(0));

  const auto sep = f.source.get(f.family.sep.at({n, m}));
  const auto mix = f.source.get(f.family.mix.at({n, m}));
  CHECK(separation_eot_pool(*sep, *sep, EmbeddingType::pool, "clip_g").isZero(0));
  const auto eot = separation_eot_pool(*sep, *mix, EmbeddingType::eot, "clip_g");
  const auto pool = separation_eot_pool(*sep, *mix, EmbeddingType::pool, "clip_g");
  const auto want = oracle::extract(*sep, EmbeddingType::pool, "clip_g");
  const auto want_mix = oracle::extract(*mix, EmbeddingType::pool, "clip_g");
  for (int i = 0; i < pool.size(); ++i) CHECK(pool(i) == want[i] - want_mix[i]);
  CHECK((eot - pool).norm() > 0);
  CHECK(code_of([&] { separation_eot_pool(*sep, *mix, EmbeddingType::pool, "clip_l"); }) == ErrorCode::MissingPooled);

  auto other = *mix;
  other.model_id = "sd3.5";
  CHECK(code_of([&] { separation_eot_pool(*sep, other, EmbeddingType::eot, "clip_g"); }) == ErrorCode::EncoderMismatch);
}

TEST_CASE("dos vectors") {
  Rng rng(44);
  const PromptSpec spec{"a cat, a dog, and a goat", {"cat", "dog", "goat"}};
  SeparationSet seps;
  StrengthTable alphas;
  for (const auto& n : spec.objects)
    for (const auto& m : spec.objects) {
      if (n == m) continue;
      Eigen::VectorXd s(5);
      for (int i = 0; i < 5; ++i) s(i) = rng.uniform();
      seps.entries[{EmbeddingType::eot, "clip", n, m}] = s;
      alphas.entries[{EmbeddingType::eot, "clip", n, m}] = rng.uniform(0, 1);
    }
  const auto dos = dos_vectors(spec, seps, alphas);
  CHECK(dos.entries.size() == 3);
  for (const auto& n : spec.objects) {
    oracle::Vec want(5, 0.0);
    for (const auto& m : spec.objects) {
      if (n == m) continue;
      const double a = alphas.at(EmbeddingType::eot, "clip", n, m);
      const auto& s = seps.entries.at({EmbeddingType::eot, "clip", n, m});
      for (int i = 0; i < 5; ++i) want[i] += a * s(i);
    }
    const auto& v = dos.entries.at({EmbeddingType::eot, "clip", n});
    for (int i = 0; i < 5; ++i) CHECK(std::fabs(v(i) - want[i] / 2) <= 1e-12);
  }

  SUBCASE("homogeneous in alpha and additive in s") {
    StrengthTable doubled = alphas;
    for (auto& [k, a] : doubled.entries) a *= 2;
    const auto dos2 = dos_vectors(spec, seps, doubled);
    for (const auto& [k, v] : dos.entries) CHECK((dos2.entries.at(k) - 2 * v).norm() <= 1e-9 * v.norm());

    SeparationSet other = seps, sum = seps;
    for (auto& [k, s] : other.entries) s = Eigen::VectorXd::Constant(5, rng.uniform());
    for (auto& [k, s] : sum.entries) s += other.entries.at(k);
    const auto dos_other = dos_vectors(spec, other, alphas);
    const auto dos_sum = dos_vectors(spec, sum, alphas);
    for (const auto& [k, v] : dos.entries)
      CHECK((dos_sum.entries.at(k) - v - dos_other.entries.at(k)).norm() <= 1e-9 * dos_sum.entries.at(k).norm());
  }
  SUBCASE("two objects: alpha times s") {
    const PromptSpec pair{"a cat and a dog", {"cat", "dog"}};
    const auto d2 = dos_vectors(pair, seps, alphas);
    const auto& v = d2.entries.at({EmbeddingType::eot, "clip", "cat"});
    const Eigen::VectorXd want = alphas.at(EmbeddingType::eot, "clip", "cat", "dog") *
                                 seps.entries.at({EmbeddingType::eot, "clip", "cat", "dog"});
    for (int i = 0; i < 5; ++i) CHECK(v(i) == want(i));
  }
  SUBCASE("single object") {
    CHECK(dos_vectors({"a cat", {"cat"}}, seps, alphas).entries.empty());
  }
  SUBCASE("missing pair") {
    StrengthTable partial = alphas;
    partial.entries.erase({EmbeddingType::eot, "clip", "dog", "goat"});
    CHECK(code_of([&] { dos_vectors(spec, seps, partial); }) == ErrorCode::MissingPair);
  }
}

TEST_CASE("apply mask parsing") {
  CHECK(ApplyMask::parse("obj").obj);
  CHECK(!ApplyMask::parse("obj").eot);
  CHECK(!ApplyMask::parse("obj").pool);
  const auto ep = ApplyMask::parse("eot/pool");
  CHECK((!ep.obj && ep.eot && ep.pool));
  const auto all = ApplyMask::parse("all");
  CHECK((all.obj && all.eot && all.pool));
  CHECK(ApplyMask::parse("obj,eot,pool").str() == all.str());
  CHECK_THROWS_AS(ApplyMask::parse(""), Error);
  CHECK_THROWS_AS(ApplyMask::parse("tokens"), Error);

  TransformConfig cfg;
  CHECK(cfg.lambda == 1.0);
  CHECK(cfg.strength.temperature == 0.6);
  CHECK((cfg.apply.obj && cfg.apply.eot && cfg.apply.pool));
  cfg.apply = {false, false, false};
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("pipeline matches the scalar oracle") {
  const int dims[] = {8, 768, 1280};
  for (uint64_t seed = 0; seed < 12; ++seed) {
    const size_t n = 1 + seed % 4;
    const auto f = testing::make_fixture(100 + seed, n, testing::view_shapes(dims[seed % 3], seed % 2 == 1));
    TransformConfig cfg;
    cfg.lambda = seed % 5 == 0 ? -0.7 : 1.0;
    const auto rep = oracle::verify_fixture(f, cfg, OffsetTable::standard("sdxl"));
    CAPTURE(seed);
    for (const auto& m : rep.messages) CAPTURE(m);
    CHECK(rep.ok());
    CHECK(rep.values > 0);
  }
}

TEST_CASE("single object transform is the identity") {
  const auto f = testing::make_fixture(50, 1, testing::view_shapes(8, true));
  const auto r = run_transform(f.spec, f.source, offsets(), {});
  CHECK(bitwise_equal(r.bundle, f.main()));
  CHECK(r.dos.entries.empty());
  CHECK(r.strengths.entries.empty());
}

TEST_CASE("update invariants") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    const auto f = testing::make_fixture(200 + seed, 2 + seed % 3, testing::view_shapes(8, seed % 2 == 0));
    const auto base = run_transform(f.spec, f.source, offsets(), {});
    const auto& main = f.main();
    CAPTURE(seed);

    // lambda = 0 reproduces the input exactly.
    TransformConfig zero;
    zero.lambda = 0.0;
    CHECK(bitwise_equal(apply_updates(main, base.dos, zero), main));
    CHECK(bitwise_equal(run_transform(f.spec, f.source, offsets(), zero).bundle, main));

    // Linearity in lambda.
    TransformConfig one;
    const auto out1 = apply_updates(main, base.dos, one);
    for (double lambda : {-1.0, 0.5, 2.0, 3.7}) {
      TransformConfig cfg;
      cfg.lambda = lambda;
      const auto out = apply_updates(main, base.dos, cfg);
      for (size_t v = 0; v < main.encoders.size(); ++v) {
        const auto& x = main.encoders[v].tokens;
        const auto& y1 = out1.encoders[v].tokens;
        const auto& yl = out.encoders[v].tokens;
        for (int r = 0; r < x.rows(); ++r)
          for (int c = 0; c < x.cols(); ++c) {
            const double d1 = double(y1(r, c)) - x(r, c), dl = double(yl(r, c)) - x(r, c);
            const double scale = std::max({std::fabs(double(x(r, c))), std::fabs(dl), 1e-30});
            CHECK(std::fabs(dl - lambda * d1) <= 1e-6 * scale * std::max(1.0, std::fabs(lambda)));
          }
      }
    }

    for (size_t v = 0; v < main.encoders.size(); ++v) {
      const auto& in = main.encoders[v];
      const auto& out = base.bundle.encoders[v];
      // Rows outside spans and EOT are untouched.
      std::vector<bool> touched(static_cast<size_t>(in.tokens.rows()), false);
      touched[static_cast<size_t>(in.eot_index)] = true;
      for (const auto& [obj, per_enc] : main.object_spans)
        for (const auto& s : per_enc.at(in.encoder_id))
          for (int r = s.start; r < s.end; ++r) touched[static_cast<size_t>(r)] = true;
      for (int r = 0; r < in.tokens.rows(); ++r)
        if (!touched[static_cast<size_t>(r)]) CHECK(rows_equal(in.tokens, out.tokens, r));

      // Every row of a multi-token span received the same delta.
      for (const auto& obj : f.spec.objects) {
        const auto& delta = base.dos.entries.at({EmbeddingType::obj, in.encoder_id, obj});
        for (const auto& s : main.spans(obj, in.encoder_id))
          for (int r = s.start; r < s.end; ++r)
            for (int c = 0; c < in.tokens.cols(); ++c)
              CHECK(same_bits(out.tokens(r, c), static_cast<float>(double(in.tokens(r, c)) + delta(c))));
      }
    }

    // Permuting the objects leaves EOT and pooled updates unchanged and moves
    // token updates with their objects.
    PromptSpec permuted = f.spec;
    std::reverse(permuted.objects.begin(), permuted.objects.end());
    const auto perm = run_transform(permuted, f.source, offsets(), {});
    CHECK(bitwise_equal(perm.bundle, base.bundle));
  }
}

TEST_CASE("apply masks") {
  const auto f = testing::make_fixture(60, 3, testing::view_shapes(8, true));
  const auto& main = f.main();
  TransformConfig obj_only;
  obj_only.apply = ApplyMask::parse("obj");
  const auto r = run_transform(f.spec, f.source, offsets(), obj_only);
  for (size_t v = 0; v < main.encoders.size(); ++v) {
    const auto& in = main.encoders[v];
    const auto& out = r.bundle.encoders[v];
    CHECK(rows_equal(in.tokens, out.tokens, in.eot_index));
    if (in.pooled) CHECK(std::memcmp(in.pooled->data(), out.pooled->data(), sizeof(float) * in.pooled->size()) == 0);
    const auto span = main.spans(f.spec.objects[0], in.encoder_id)[0];
    CHECK(!rows_equal(in.tokens, out.tokens, span.start));
  }

  TransformConfig eot_pool;
  eot_pool.apply = ApplyMask::parse("eot/pool");
  const auto r2 = run_transform(f.spec, f.source, offsets(), eot_pool);
  for (size_t v = 0; v < main.encoders.size(); ++v) {
    const auto& in = main.encoders[v];
    for (const auto& obj : f.spec.objects)
      for (const auto& s : main.spans(obj, in.encoder_id))
        for (int row = s.start; row < s.end; ++row) CHECK(rows_equal(in.tokens, r2.bundle.encoders[v].tokens, row));
    CHECK(!rows_equal(in.tokens, r2.bundle.encoders[v].tokens, in.eot_index));
  }
}

TEST_CASE("fixed alpha changes only the strengths") {
  const auto f = testing::make_fixture(61, 3, testing::view_shapes(8, true));
  TransformConfig fixed;
  fixed.strength.fixed_alpha = 0.5;
  const auto a = run_transform(f.spec, f.source, offsets(), fixed);
  const auto b = run_transform(f.spec, f.source, offsets(), {});
  CHECK(a.strengths.entries.size() == b.strengths.entries.size());
  for (const auto& [k, alpha] : a.strengths.entries) CHECK(alpha == 0.5);
  CHECK(a.separations.entries.size() == b.separations.entries.size());
  for (const auto& [k, s] : a.separations.entries) CHECK(s == b.separations.entries.at(k));
}

TEST_CASE("apply_updates argument checks") {
  const auto f = testing::make_fixture(62, 2, testing::view_shapes(8, true));
  const auto r = run_transform(f.spec, f.source, offsets(), {});
  auto bad = r.dos;
  auto& v = bad.entries.begin()->second;
  v.conservativeResize(v.size() + 1);
  v(v.size() - 1) = 0;
  CHECK(code_of([&] { apply_updates(f.main(), bad, {}); }) == ErrorCode::DimensionMismatch);

  DOSVectors unknown = r.dos;
  unknown.entries[{EmbeddingType::eot, "t5", f.spec.objects[0]}] = Eigen::VectorXd::Zero(8);
  CHECK(code_of([&] { apply_updates(f.main(), unknown, {}); }) == ErrorCode::EncoderMismatch);
}

TEST_CASE("directional edit") {
  Rng rng(63);
  const std::map<std::string, int> counts = {{"pretzel", 2}, {"chocolate", 1}, {"bread", 1}};
  const std::vector<testing::ViewShape> views = {{"clip", 6, 6}};
  const auto target = testing::synthetic_bundle(rng, "sdxl", "a pretzel", {"pretzel"}, counts, views);
  const auto pos = testing::synthetic_bundle(rng, "sdxl", "a chocolate", {"chocolate"}, counts, views);
  const auto neg = testing::synthetic_bundle(rng, "sdxl", "a bread", {"bread"}, counts, views);

  DirectionalEdit edit;
  edit.types = {EmbeddingType::obj};
  edit.target_object = "pretzel";
  CHECK(bitwise_equal(directional_edit(target, pos, pos, edit), target));

  const auto e1 = directional_edit(target, pos, neg, edit);
  const auto dir = (extract_embedding(pos, EmbeddingType::obj, "clip", std::string("chocolate")) -
                    extract_embedding(neg, EmbeddingType::obj, "clip", std::string("bread")))
                       .eval();
  const auto& t = target.encoders[0].tokens;
  for (int r = 2; r < 4; ++r)
    for (int c = 0; c < 6; ++c) CHECK(same_bits(e1.encoders[0].tokens(r, c), float(double(t(r, c)) + dir(c))));
  CHECK(rows_equal(t, e1.encoders[0].tokens, target.encoders[0].eot_index));

  edit.lambda = 2.0;
  const auto e2 = directional_edit(target, pos, neg, edit);
  for (int r = 2; r < 4; ++r)
    for (int c = 0; c < 6; ++c) {
      const double d1 = double(e1.encoders[0].tokens(r, c)) - t(r, c);
      const double d2 = double(e2.encoders[0].tokens(r, c)) - t(r, c);
      CHECK(std::fabs(d2 - 2 * d1) <= 1e-6 * std::max(1.0, std::fabs(double(t(r, c)))));
    }

  DirectionalEdit global;
  global.types = {EmbeddingType::eot, EmbeddingType::pool};
  const auto g = directional_edit(target, pos, neg, global);
  CHECK(!rows_equal(t, g.encoders[0].tokens, target.encoders[0].eot_index));
  CHECK(rows_equal(t, g.encoders[0].tokens, 2));

  DirectionalEdit missing;
  missing.types = {EmbeddingType::obj};
  CHECK_THROWS_AS(directional_edit(target, pos, neg, missing), Error);
}

TEST_CASE("bundle sources") {
  const auto f = testing::make_fixture(64, 2, testing::view_shapes(8, false));
  const auto dir = testing::scratch_dir("source");
  const auto manifest_path = testing::write_fixture(f, dir);
  const auto source = ManifestBundleSource::open(manifest_path);
  CHECK(source.contains(f.spec.text));
  CHECK(bitwise_equal(*source.get(f.spec.text), f.main()));
  CHECK(source.missing({f.spec.text, "a unicorn"}) == std::vector<std::string>{"a unicorn"});
  CHECK(code_of([&] { source.get("a unicorn"); }) == ErrorCode::MissingBundle);

  const auto from_files = run_transform(f.spec, source, offsets(), {});
  const auto in_memory = run_transform(f.spec, f.source, offsets(), {});
  CHECK(bitwise_equal(from_files.bundle, in_memory.bundle));

  // Every prompt the transform reads is listed by required_prompts.
  const auto required = required_prompts(f.family, {});
  CHECK(required.size() == 1 + 2 + 2 + 2 + 84 + 72);
  StrengthConfig fixed;
  fixed.fixed_alpha = 0.5;
  CHECK(required_prompts(f.family, fixed).size() == 1 + 2 + 2 + 2);

  // A missing bundle surfaces with its code and the prompt.
  MemoryBundleSource partial;
  for (const auto& p : required)
    if (p != f.family.bg.begin()->second) partial.add(*f.source.get(p));
  try {
    run_transform(f.spec, partial, offsets(), {});
    FAIL("expected MissingBundle");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingBundle);
    CHECK(std::string(e.what()).find(f.family.bg.begin()->second) != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("regression goldens") {
  const auto f = testing::golden_pair_fixture();
  const auto r = run_transform(f.spec, f.source, offsets(), {});
  const std::filesystem::path data = DOS_TEST_DATA;
  CHECK(bitwise_equal(read_bundle(data / "pair_transform.safetensors"), r.bundle));
  for (double lambda : {-1.0, 0.0, 1.0, 2.0}) {
    TransformConfig cfg;
    cfg.lambda = lambda;
    char name[64];
    std::snprintf(name, sizeof name, "pair_lambda_%g.safetensors", lambda);
    CAPTURE(name);
    CHECK(bitwise_equal(read_bundle(data / name), apply_updates(f.main(), r.dos, cfg)));
  }
}

TEST_CASE("diagnostics") {
  const auto f = testing::make_fixture(65, 2, testing::view_shapes(8, false));
  const auto r = run_transform(f.spec, f.source, offsets(), {});
  const std::string j = diagnostics_json(f.spec, r, {});
  CHECK(j.find("\"strengths\"") != std::string::npos);
  CHECK(j.find("\"dos_norms\"") != std::string::npos);
  CHECK(j == diagnostics_json(f.spec, r, {}));
}
