#include <cmath>

#include "attmix/encoder.hpp"
#include "attmix/error.hpp"
#include "attmix/optim.hpp"
#include "attmix/pretrain.hpp"
#include "attmix/rng.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace attmix;

namespace {

EncoderConfig small_encoder(std::size_t depth = 1) {
  EncoderConfig c;
  c.side = 8;
  c.patch = 4;
  c.d_enc = 8;
  c.depth = depth;
  c.heads = 2;
  c.d_f = 6;
  return c;
}

Volume cube(std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(side * side * side);
  for (float& x : v) x = static_cast<float>(rng.uniform());
  return Volume({side, side, side}, std::move(v));
}

template <typename T>
void zero_all(Tensor<T>& t) {
  std::fill(t.values().begin(), t.values().end(), T(0));
}

}  // namespace

TEST_CASE("patchify counts and round-trip") {
  const PatchSequence s = patchify(cube(4, 1), 2);
  CHECK(s.tokens.rows() == 8);
  CHECK(s.tokens.cols() == 8);
  const Volume v = cube(8, 2);
  CHECK(unpatchify(patchify(v, 4)).voxels == v.voxels);
  CHECK_THROWS_AS(patchify(cube(6, 3), 4), DimensionError);
  EncoderConfig paper;
  paper.side = 128;
  paper.patch = 16;
  CHECK(paper.n_patches() == 512);
}

TEST_CASE("patch layout is block-lexicographic with row-major voxels") {
  std::vector<float> vox(64);
  for (std::size_t i = 0; i < 64; ++i) vox[i] = static_cast<float>(i);
  const PatchSequence s = patchify(Volume({4, 4, 4}, vox), 2);
  // Patch 1 is block (0, 0, 1): voxels (d, h, w) with w in {2, 3}.
  CHECK(s.tokens.at(1, 0) == 2.0f);
  CHECK(s.tokens.at(1, 1) == 3.0f);
  CHECK(s.tokens.at(1, 2) == 6.0f);
  CHECK(s.tokens.at(1, 4) == 18.0f);
}

TEST_CASE("mask_patches") {
  const PatchMask m = mask_patches(8, 0.75, 42);
  CHECK(m.masked.size() == 6);
  CHECK(m.visible.size() == 2);
  CHECK(mask_patches(8, 0.0, 42).masked.empty());
  const PatchMask again = mask_patches(8, 0.75, 42);
  CHECK(again.masked == m.masked);
  CHECK(again.visible == m.visible);
  CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));
}

TEST_CASE("encoder with no blocks returns embedding plus positions") {
  Rng rng(5);
  ViTEncoder<double> enc(small_encoder(0), rng);
  Rng data(6);
  const Tensor<double> tokens = attmix::testing::random_tensor({8, 64}, data);
  Tape<double> tape;
  const Tensor<double> out = enc.encode(tape, tape.constant(tokens), 1).value();
  Tape<double> ref;
  const Tensor<double> emb = add_tiled(enc.patch_embedding()(ref, ref.constant(tokens)),
                                       ref.constant(enc.positions())).value();
  CHECK(out.values() == emb.values());
}

TEST_CASE("zero attention and MLP weights pass embeddings through the residual stream") {
  Rng rng(7);
  ViTEncoder<double> enc(small_encoder(2), rng);
  for (EncoderBlock<double>& b : enc.blocks()) {
    zero_all(b.attn.w_o);
    zero_all(b.fc2.weight);
    zero_all(*b.fc2.bias);
  }
  Rng data(8);
  const Tensor<double> tokens = attmix::testing::random_tensor({16, 64}, data);
  Tape<double> tape;
  const Tensor<double> out = enc.encode(tape, tape.constant(tokens), 2).value();
  const Tensor<double> emb = enc.embed(tape, tape.constant(tokens)).value();
  CHECK(out.shape() == Shape{16, 8});
  CHECK(out.values() == emb.values());
  CHECK(out.all_finite());
}

TEST_CASE("encoder rejects mismatched tokens") {
  Rng rng(1);
  ViTEncoder<float> enc(small_encoder(), rng);
  Tape<float> tape;
  CHECK_THROWS_AS(enc.encode(tape, tape.constant(Tensor<float>({8, 27})), 1), DimensionError);
  CHECK_THROWS_AS(enc.encode(tape, tape.constant(Tensor<float>({7, 64})), 1), DimensionError);
}

TEST_CASE("projection to a single token") {
  Tape<double> tape;
  SUBCASE("zero weights") {
    Rng rng(2);
    ViTEncoder<double> enc(small_encoder(), rng);
    zero_all(enc.projection());
    const auto out = enc.project(tape, tape.constant(Tensor<double>({8, 8}, 1.0)), 1).value();
    CHECK(out.shape() == Shape{1, 6});
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("identity with one patch") {
    EncoderConfig c;
    c.side = 4;
    c.patch = 4;
    c.d_enc = 4;
    c.depth = 0;
    c.heads = 1;
    c.d_f = 4;
    Rng rng(3);
    ViTEncoder<double> enc(c, rng);
    Tensor<double>& w = enc.projection();
    zero_all(w);
    for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0;
    const Tensor<double> x = Tensor<double>::matrix(1, 4, {1, -2, 3, 0.5});
    CHECK(enc.project(tape, tape.constant(x), 1).value().values() == x.values());
  }
  SUBCASE("two tokens of width two into three outputs") {
    EncoderConfig c;
    c.side = 8;
    c.patch = 4;
    c.d_enc = 2;
    c.depth = 0;
    c.heads = 1;
    c.d_f = 3;
    Rng rng(4);
    ViTEncoder<double> enc(c, rng);
    // Eight patches; only the first two tokens are non-zero.
    Tensor<double> tokens({8, 2});
    tokens.at(0, 0) = 1;
    tokens.at(0, 1) = 2;
    tokens.at(1, 0) = 3;
    tokens.at(1, 1) = 4;
    Tensor<double>& w = enc.projection();
    zero_all(w);
    // Row r reads the flattened vector [t0c0, t0c1, t1c0, t1c1, ...].
    w.at(0, 0) = 1;
    w.at(0, 3) = 1;
    w.at(1, 1) = 2;
    w.at(1, 2) = -1;
    w.at(2, 0) = 0.5;
    w.at(2, 1) = 0.5;
    w.at(2, 2) = 0.5;
    w.at(2, 3) = 0.5;
    const auto out = enc.project(tape, tape.constant(tokens), 1).value();
    CHECK(out.values() == std::vector<double>{5, 1, 5});
  }
}

TEST_CASE("reconstruction loss") {
  SUBCASE("zero volume and zero decoder give zero") {
    Rng rng(9);
    ViTEncoder<float> enc(small_encoder(), rng);
    zero_all(enc.decoder().weight);
    zero_all(*enc.decoder().bias);
    Tape<float> tape;
    const auto loss = enc.reconstruction_loss(tape, Tensor<float>({8, 64}), mask_patches(8, 0.75, 1));
    CHECK(loss.value()[0] == 0.0f);
  }
  SUBCASE("untrained encoder on unit-variance noise is close to the target variance") {
    EncoderConfig c;  // default widths
    Rng rng(10);
    ViTEncoder<float> enc(c, rng);
    Rng noise(11);
    Tensor<float> tokens({c.n_patches(), c.patch_voxels()});
    for (float& v : tokens.values()) v = static_cast<float>(noise.normal());
    Tape<float> tape;
    const double loss = enc.reconstruction_loss(tape, tokens, mask_patches(c.n_patches(), 0.75, 3)).value()[0];
    CHECK(loss == doctest::Approx(1.0).epsilon(0.2));
  }
  SUBCASE("degenerate masks are rejected") {
    Rng rng(12);
    ViTEncoder<float> enc(small_encoder(), rng);
    Tape<float> tape;
    PatchMask none_visible{{}, {0, 1, 2, 3, 4, 5, 6, 7}};
    CHECK_THROWS_AS(enc.reconstruction_loss(tape, Tensor<float>({8, 64}), none_visible), ValidationError);
    PatchMask none_masked{{0, 1, 2, 3, 4, 5, 6, 7}, {}};
    CHECK_THROWS_AS(enc.reconstruction_loss(tape, Tensor<float>({8, 64}), none_masked), ValidationError);
  }
}

TEST_CASE("reconstruction gradients reach every encoder parameter and match finite differences") {
  Rng rng(13);
  ViTEncoder<double> enc(small_encoder(1), rng);
  Rng data(14);
  const Tensor<double> tokens = attmix::testing::random_tensor({8, 64}, data, 0.0, 1.0);
  const PatchMask mask = mask_patches(8, 0.5, 15);
  std::vector<NamedParam<double>> named;
  enc.collect_encoder(named);
  std::vector<Tensor<double>*> params;
  for (auto& p : named) params.push_back(p.tensor);
  const auto r = attmix::testing::check_gradients(params, [&](Tape<double>& tape, const auto&) {
    return enc.reconstruction_loss(tape, tokens, mask);
  });
  CHECK(r.max_rel_error < 1e-4);
  for (auto& p : named) {
    const bool any = std::any_of(p.tensor->grad().begin(), p.tensor->grad().end(),
                                 [](double g) { return g != 0.0; });
    INFO(p.name);
    CHECK(any);
  }
}

TEST_CASE("pretraining steps reduce the reconstruction loss") {
  EncoderConfig c = small_encoder(1);
  Rng rng(16);
  ViTEncoder<float> enc(c, rng);
  std::vector<std::shared_ptr<const Tensor<float>>> scans;
  for (std::uint64_t s = 0; s < 4; ++s) {
    scans.push_back(std::make_shared<const Tensor<float>>(patchify(cube(8, 100 + s), 4).tokens));
  }
  PretrainConfig pc;
  pc.steps = 60;
  pc.seed = 3;
  const std::vector<double> losses = pretrain_encoder(enc, scans, pc);
  REQUIRE(losses.size() == 60);
  CHECK(losses.back() < losses.front());
  for (double l : losses) CHECK(std::isfinite(l));
}
