#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>

#include "cotmisr/errors.hpp"
#include "cotmisr/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace cotmisr;
using cotmisr::testing::grad_check;
using cotmisr::testing::random_tensor;
using cotmisr::testing::TempDir;
using cotmisr::testing::TensorD;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Plain-loop masked loss for one [H, W] sample at an SR offset (du, dv)
// against the HR window [s, H-s); returns NaN when nothing is clear.
double oracle_window_loss(const std::vector<double>& sr, const std::vector<double>& hr, const std::vector<double>& mask,
                          std::size_t h, std::size_t w, std::size_t s, std::size_t du, std::size_t dv, bool l1) {
  std::vector<double> d;
  for (std::size_t y = s; y < h - s; ++y)
    for (std::size_t x = s; x < w - s; ++x)
      if (mask[y * w + x] > 0) d.push_back(hr[y * w + x] - sr[(y - s + du) * w + (x - s + dv)]);
  if (d.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double b = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double acc = 0.0;
  for (double v : d) acc += l1 ? std::abs(v - b) : (v - b) * (v - b);
  return acc / static_cast<double>(d.size());
}

double oracle_batch_loss(const TensorD& sr, const TensorD& hr, const TensorD& mask, std::size_t s, bool l1) {
  const std::size_t b = sr.dim(0), h = sr.dim(2), w = sr.dim(3);
  double total = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    auto part = [&](const TensorD& t) {
      return std::vector<double>(t.data().begin() + n * h * w, t.data().begin() + (n + 1) * h * w);
    };
    const auto srv = part(sr), hrv = part(hr), mv = part(mask);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t du = 0; du <= 2 * s; ++du)
      for (std::size_t dv = 0; dv <= 2 * s; ++dv) best = std::min(best, oracle_window_loss(srv, hrv, mv, h, w, s, du, dv, l1));
    total += best;
  }
  return total / static_cast<double>(b);
}

TensorD random_mask_tensor(const Shape& shape, Rng& rng, double p_clear) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform() < p_clear ? 1.0 : 0.0;
  return TensorD(shape, std::move(v));
}

CotConfig tiny_model(std::size_t k = 3) {
  CotConfig cfg;
  cfg.k = k;
  cfg.c_e = 8;
  cfg.arch = "1c1t";
  cfg.tblock.heads = 2;
  cfg.tblock.ff_dim = 16;
  return cfg;
}

LrStack tiny_stack(Rng& rng, std::size_t k = 3, std::size_t lr = 6, std::size_t scale = 3) {
  LrStack s;
  s.scene_id = "NIR/imgset0000";
  for (std::size_t i = 0; i < k; ++i) {
    Image f(lr, lr);
    for (auto& v : f.pixels) v = rng.uniform();
    s.frames.push_back(f);
    s.masks.emplace_back(lr, lr);
  }
  Image hr(lr * scale, lr * scale);
  for (auto& v : hr.pixels) v = rng.uniform();
  s.hr = hr;
  s.hr_mask = Mask(lr * scale, lr * scale);
  return s;
}

std::vector<float> flat_params(const ModelParams<float>& p, std::optional<ParamGroup> group = std::nullopt) {
  std::vector<float> out;
  for (const auto& e : p.entries())
    if (!group || e.group == *group) out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

struct SynthRun {
  TempDir dir{"fit"};
  ExperimentConfig cfg;
  Dataset data;

  SynthRun() {
    SynthConfig sc;
    sc.n_scenes = 5;
    sc.hr_size = 24;
    sc.k = 4;
    synthesize_dataset(dir / "data", sc);
    cfg.model = tiny_model(3);
    cfg.train.batch_size = 2;
    cfg.train.epochs = 4;
    cfg.train.seed = 5;
    cfg.train.augment = true;
    cfg.train.loss_shift = 1;
    cfg.train.patch_size = 5;
    cfg.data.root = (dir / "data").string();
    cfg.data.split_ratio = 0.6;
    cfg.data.min_clearance = 0.0;
    cfg.out_dir = (dir / "run").string();
    data = load_dataset(cfg);
  }
};

}  // namespace

// ---- loss ----

TEST_CASE("masked_loss examples") {
  const TensorD zero({1, 1, 2, 2});
  const TensorD hr({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 6});
  const TensorD all({1, 1, 2, 2}, 1.0);
  // differences 1 2 3 6, bias 3, residuals -2 -1 0 3
  CHECK(masked_loss(zero, hr, all, LossKind::masked_l1).item() == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(masked_loss(zero, hr, all, LossKind::masked_mse).item() == doctest::Approx(3.5).epsilon(1e-15));
  const TensorD some({1, 1, 2, 2}, std::vector<double>{1, 1, 0, 1});
  // clear differences 1 2 6, bias 3
  CHECK(masked_loss(zero, hr, some, LossKind::masked_l1).item() == doctest::Approx(2.0).epsilon(1e-15));
  // a constant offset costs nothing
  const TensorD shifted({1, 1, 2, 2}, std::vector<double>{1.5, 2.5, 3.5, 6.5});
  CHECK(masked_loss(shifted, hr, all, LossKind::masked_mse).item() == 0.0);

  // the batch loss is the mean over samples
  const TensorD sr2({2, 1, 2, 2}, std::vector<double>{0, 0, 0, 0, 0, 0, 0, 0});
  const TensorD hr2({2, 1, 2, 2}, std::vector<double>{1, 2, 3, 6, 1, 2, 3, 6});
  const TensorD m2({2, 1, 2, 2}, std::vector<double>{1, 1, 1, 1, 1, 1, 0, 1});
  CHECK(masked_loss(sr2, hr2, m2, LossKind::masked_l1).item() == doctest::Approx(1.75).epsilon(1e-15));
}

TEST_CASE("masked_loss matches the loop oracle and ignores cloudy pixels") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD sr = random_tensor({3, 1, 6, 7}, rng, 0.0, 1.0, false);
    const TensorD hr = random_tensor({3, 1, 6, 7}, rng, 0.0, 1.0, false);
    const TensorD m = random_mask_tensor({3, 1, 6, 7}, rng, 0.7);
    for (bool l1 : {true, false}) {
      const double got = masked_loss(sr, hr, m, l1 ? LossKind::masked_l1 : LossKind::masked_mse).item();
      CHECK(std::abs(got - oracle_batch_loss(sr, hr, m, 0, l1)) < 1e-12);
    }
    // cloudy HR values do not matter
    TensorD hr2 = hr.detach();
    auto v = hr2.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (m.data()[i] == 0.0) v[i] = 100.0;
    CHECK(masked_loss(sr, hr2, m, LossKind::masked_l1).item() == masked_loss(sr, hr, m, LossKind::masked_l1).item());
  }
}

TEST_CASE("masked_loss errors") {
  const TensorD a({1, 1, 2, 2}), b({1, 1, 2, 3});
  CHECK_THROWS_AS(masked_loss(a, b, b, LossKind::masked_l1), ShapeError);
  CHECK_THROWS_AS(masked_loss(a, a, TensorD({1, 1, 2, 2}, 0.0), LossKind::masked_l1), DataError);
  CHECK_THROWS_AS(shifted_masked_loss(a, a, TensorD({1, 1, 2, 2}, 1.0), LossKind::masked_l1, 1), ShapeError);
  const TensorD c({1, 1, 5, 5});
  TensorD edge_only({1, 1, 5, 5}, 0.0);
  edge_only.mutable_data()[0] = 1.0;
  CHECK_THROWS_AS(shifted_masked_loss(c, c, edge_only, LossKind::masked_l1, 1), DataError);
}

TEST_CASE("shifted loss matches the brute-force oracle") {
  Rng rng(2);
  for (std::size_t s : {1u, 2u})
    for (int trial = 0; trial < 10; ++trial) {
      const TensorD sr = random_tensor({2, 1, 9, 8}, rng, 0.0, 1.0, false);
      const TensorD hr = random_tensor({2, 1, 9, 8}, rng, 0.0, 1.0, false);
      const TensorD m = random_mask_tensor({2, 1, 9, 8}, rng, 0.8);
      for (bool l1 : {true, false}) {
        const double got = shifted_masked_loss(sr, hr, m, l1 ? LossKind::masked_l1 : LossKind::masked_mse, s).item();
        CHECK(std::abs(got - oracle_batch_loss(sr, hr, m, s, l1)) < 1e-12);
      }
    }
}

TEST_CASE("shifted loss finds a translated copy") {
  Rng rng(3);
  const std::size_t h = 10, w = 10;
  std::vector<double> big((h + 2) * (w + 2));
  for (auto& v : big) v = rng.uniform();
  // hr(y, x) = big(y + 1, x + 1); sr(y, x) = big(y, x + 2) + 0.3, so hr(y, x) = sr(y + 1, x - 1) - 0.3
  std::vector<double> hr(h * w), sr(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      hr[y * w + x] = big[(y + 1) * (w + 2) + x + 1];
      sr[y * w + x] = big[y * (w + 2) + x + 2] + 0.3;
    }
  const TensorD srt({1, 1, h, w}, sr), hrt({1, 1, h, w}, hr), m({1, 1, h, w}, 1.0);
  CHECK(shifted_masked_loss(srt, hrt, m, LossKind::masked_l1, 1).item() < 1e-12);
  CHECK(masked_loss(srt, hrt, m, LossKind::masked_l1).item() > 0.05);
  CHECK(shifted_masked_loss(srt, hrt, m, LossKind::masked_l1, 0).item() ==
        masked_loss(srt, hrt, m, LossKind::masked_l1).item());
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(4);
  const TensorD hr = random_tensor({2, 1, 7, 6}, rng, 0.0, 1.0, false);
  const TensorD m = random_mask_tensor({2, 1, 7, 6}, rng, 0.75);
  for (std::size_t s : {0u, 1u, 2u}) {
    CAPTURE(s);
    std::vector<TensorD> in{random_tensor({2, 1, 7, 6}, rng, 0.0, 1.0)};
    auto mse = [&](const std::vector<TensorD>& x) { return shifted_masked_loss(x[0], hr, m, LossKind::masked_mse, s); };
    const auto r = grad_check(mse, in);
    CAPTURE(r.where);
    CHECK(r.max_rel_error < 1e-6);
    // L1 away from its kinks: the step never flips a residual sign
    std::vector<TensorD> in1{random_tensor({2, 1, 7, 6}, rng, 0.0, 1.0)};
    auto l1 = [&](const std::vector<TensorD>& x) { return shifted_masked_loss(x[0], hr, m, LossKind::masked_l1, s); };
    const auto r1 = grad_check(l1, in1, 1e-7);
    CAPTURE(r1.where);
    CHECK(r1.max_rel_error < 1e-5);
  }
}

// ---- batches and augmentation ----

TEST_CASE("make_batch crops LR and HR consistently") {
  Rng rng(5);
  LrStack a = tiny_stack(rng), b = tiny_stack(rng);
  b.hr_mask->set(5, 7, false);
  const Batch full = make_batch({&a, &b}, {}, 3);
  CHECK(full.frames.shape() == Shape{2, 3, 1, 6, 6});
  CHECK(full.hr.shape() == Shape{2, 1, 18, 18});
  CHECK(full.mask.data()[324 + 5 * 18 + 7] == 0.0f);
  CHECK(full.hr.data()[324 + 17] == static_cast<float>(b.hr->at(0, 17)));

  const Batch c = make_batch({&a, &b}, {{1, 2, 3}, {3, 0, 3}}, 3);
  CHECK(c.frames.shape() == Shape{2, 3, 1, 3, 3});
  CHECK(c.hr.shape() == Shape{2, 1, 9, 9});
  CHECK(c.frames.data()[0] == static_cast<float>(a.frames[0].at(1, 2)));
  CHECK(c.hr.data()[0] == static_cast<float>(a.hr->at(3, 6)));
  CHECK(c.hr.data()[81 + 10] == static_cast<float>(b.hr->at(10, 1)));

  LrStack no_hr = a;
  no_hr.hr.reset();
  CHECK_THROWS_AS(make_batch({&no_hr}, {}, 3), DataError);
  CHECK_THROWS_AS(make_batch({&a}, {}, 4), DataError);
}

TEST_CASE("transform_stack symmetries") {
  Rng rng(6);
  LrStack s = tiny_stack(rng, 3, 4, 2);
  s.masks[1].set(0, 3, false);
  s.hr_mask->set(1, 6, false);

  const LrStack id = transform_stack(s, 0, {0, 1, 2});
  CHECK(id.frames[1].pixels == s.frames[1].pixels);
  CHECK(id.hr->pixels == s.hr->pixels);

  const LrStack fx = transform_stack(s, 1, {0, 1, 2});
  CHECK(fx.frames[0].at(1, 0) == s.frames[0].at(1, 3));
  CHECK_FALSE(fx.masks[1].at(0, 0));
  CHECK_FALSE(fx.hr_mask->at(1, 1));
  const LrStack fy = transform_stack(s, 2, {0, 1, 2});
  CHECK(fy.frames[2].at(0, 2) == s.frames[2].at(3, 2));
  const LrStack tr = transform_stack(s, 4, {0, 1, 2});
  CHECK(tr.frames[0].at(1, 3) == s.frames[0].at(3, 1));
  CHECK_FALSE(tr.hr_mask->at(6, 1));

  // every symmetry is an involution or has an inverse among the eight, and all eight differ
  std::vector<std::vector<double>> seen;
  for (unsigned g = 0; g < 8; ++g) {
    const LrStack t = transform_stack(s, g, {0, 1, 2});
    seen.push_back(t.hr->pixels);
    bool inverted = false;
    for (unsigned h = 0; h < 8; ++h)
      inverted = inverted || transform_stack(t, h, {0, 1, 2}).hr->pixels == s.hr->pixels;
    CHECK(inverted);
    for (std::size_t i = 0; i < 3; ++i) CHECK(t.masks[i].clear_count() == s.masks[i].clear_count());
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::unique(seen.begin(), seen.end()) == seen.end());

  const LrStack perm = transform_stack(s, 0, {2, 0, 1});
  CHECK(perm.frames[0].pixels == s.frames[2].pixels);
  CHECK(perm.masks[2].pixels == s.masks[1].pixels);

  CHECK_THROWS_AS(transform_stack(s, 8, {0, 1, 2}), ConfigError);
  CHECK_THROWS_AS(transform_stack(s, 0, {0, 0, 1}), ShapeError);
  CHECK_THROWS_AS(transform_stack(s, 0, {0, 1}), ShapeError);
  LrStack wide = s;
  for (auto& f : wide.frames) f = Image(4, 5);
  for (auto& m : wide.masks) m = Mask(4, 5);
  wide.hr.reset();
  wide.hr_mask.reset();
  CHECK_THROWS_AS(transform_stack(wide, 4, {0, 1, 2}), ShapeError);
  CHECK_NOTHROW(transform_stack(wide, 3, {0, 1, 2}));
}

// ---- optimizer ----

TEST_CASE("Adam matches the textbook update") {
  Rng rng(7);
  TrainConfig tc;
  ModelParams<float> p;
  p.add("enc", ParamGroup::encoder, Tensor<float>({3}, std::vector<float>{0.5f, -1.0f, 2.0f}));
  p.add("cot", ParamGroup::cot, Tensor<float>({2}, std::vector<float>{0.1f, 0.2f}));
  Adam adam(p, tc);
  std::vector<double> w{0.5, -1.0, 2.0, 0.1, 0.2}, m(5, 0.0), v(5, 0.0);
  const double lr_enc = 0.01, lr_cot = 0.003;
  for (int t = 1; t <= 5; ++t) {
    // loss = sum(c_i * w_i^2) with fixed c
    const std::vector<double> c{1.0, 2.0, 0.5, 3.0, 1.5};
    p.zero_grad();
    const Tensor<float> loss = add(sum(mul(square(p.get("enc")), Tensor<float>({3}, std::vector<float>{1.0f, 2.0f, 0.5f}))),
                                   sum(mul(square(p.get("cot")), Tensor<float>({2}, std::vector<float>{3.0f, 1.5f}))));
    loss.backward();
    for (std::size_t i = 0; i < 5; ++i) {
      const double g = 2.0 * c[i] * static_cast<double>(i < 3 ? p.get("enc").data()[i] : p.get("cot").data()[i - 3]);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      w[i] -= (i < 3 ? lr_enc : lr_cot) * mh / (std::sqrt(vh) + 1e-8);
    }
    adam.step(p, lr_enc, lr_cot);
    for (std::size_t i = 0; i < 5; ++i) {
      const float got = i < 3 ? p.get("enc").data()[i] : p.get("cot").data()[i - 3];
      CHECK(std::abs(got - w[i]) < 1e-5);
    }
  }
  CHECK(adam.steps() == 5);
}

TEST_CASE("zero learning rates and group isolation") {
  Rng rng(8);
  const CotConfig mc = tiny_model();
  TrainConfig tc;
  LrStack s = tiny_stack(rng);
  const Batch batch = make_batch({&s}, {}, 3);
  Rng init(1);
  ModelParams<float> p = init_params<float>(mc, init);
  const auto enc0 = flat_params(p, ParamGroup::encoder), cot0 = flat_params(p, ParamGroup::cot);
  Adam adam(p, tc);

  train_step(batch, p, adam, mc, tc, 0.0, 0.0, {});
  CHECK(flat_params(p, ParamGroup::encoder) == enc0);
  CHECK(flat_params(p, ParamGroup::cot) == cot0);

  train_step(batch, p, adam, mc, tc, 1e-3, 0.0, {});
  CHECK(flat_params(p, ParamGroup::encoder) != enc0);
  CHECK(flat_params(p, ParamGroup::cot) == cot0);

  const auto enc1 = flat_params(p, ParamGroup::encoder);
  train_step(batch, p, adam, mc, tc, 0.0, 1e-3, {});
  CHECK(flat_params(p, ParamGroup::encoder) == enc1);
  CHECK(flat_params(p, ParamGroup::cot) != cot0);
}

TEST_CASE("optimizer state round-trip continues identically") {
  Rng rng(9);
  const CotConfig mc = tiny_model();
  TrainConfig tc;
  LrStack s = tiny_stack(rng);
  const Batch batch = make_batch({&s}, {}, 3);
  Rng init(2);
  ModelParams<float> p = init_params<float>(mc, init);
  Adam a(p, tc);
  for (int i = 0; i < 3; ++i) train_step(batch, p, a, mc, tc, 1e-3, 1e-3, {});
  ModelParams<float> q = p.cast<float>();
  Adam b(q, tc);
  b.load_state(a.state(), a.steps());
  train_step(batch, p, a, mc, tc, 1e-3, 1e-3, {});
  train_step(batch, q, b, mc, tc, 1e-3, 1e-3, {});
  CHECK(flat_params(p) == flat_params(q));

  NamedArrays bad = a.state();
  bad.pop_back();
  CHECK_THROWS_AS(b.load_state(bad, 1), DataError);
}

TEST_CASE("training steps descend on a fixed batch") {
  Rng rng(10);
  for (auto kind : {LossKind::masked_l1, LossKind::masked_mse}) {
    const CotConfig mc = tiny_model();
    TrainConfig tc;
    tc.loss = kind;
    LrStack s = tiny_stack(rng);
    const Batch batch = make_batch({&s}, {}, 3);
    Rng init(3);
    ModelParams<float> p = init_params<float>(mc, init);
    Adam adam(p, tc);
    const double first = train_step(batch, p, adam, mc, tc, 2e-3, 1e-3, {}).loss;
    double last = first;
    for (int i = 0; i < 30; ++i) last = train_step(batch, p, adam, mc, tc, 2e-3, 1e-3, {}).loss;
    CHECK(last < 0.9 * first);
  }
}

TEST_CASE("non-finite input is reported and parameters stay put") {
  Rng rng(11);
  const CotConfig mc = tiny_model();
  TrainConfig tc;
  LrStack s = tiny_stack(rng);
  s.frames[1].at(2, 2) = std::numeric_limits<double>::quiet_NaN();
  const Batch batch = make_batch({&s}, {}, 3);
  Rng init(4);
  ModelParams<float> p = init_params<float>(mc, init);
  const auto before = flat_params(p);
  Adam adam(p, tc);
  CHECK_THROWS_AS(train_step(batch, p, adam, mc, tc, 1e-3, 1e-3, {}), NumericalError);
  CHECK(flat_params(p) == before);
  CHECK(adam.steps() == 0);
}

// ---- inference ----

TEST_CASE("super_resolve and evaluation") {
  Rng rng(12);
  const CotConfig mc = tiny_model();
  Rng init(5);
  const ModelParams<float> p = init_params<float>(mc, init);
  const LrStack s = tiny_stack(rng);
  const Image sr = super_resolve(p, mc, s);
  CHECK(sr.height == 18);
  CHECK(sr.width == 18);
  for (double v : sr.pixels) CHECK((v >= 0.0 && v <= 1.0));
  const SceneScore score = evaluate_scene(p, mc, s);
  CHECK(score.cpsnr == cpsnr(sr, *s.hr, *s.hr_mask).cpsnr);

  const EvalResult ev = evaluate(p, mc, {s, s});
  REQUIRE(ev.model.size() == 2);
  CHECK(ev.model[0].score.cpsnr == score.cpsnr);
  CHECK(ev.bicubic[0].score.cpsnr == cpsnr(bicubic_baseline(s, 3), *s.hr, *s.hr_mask).cpsnr);
  std::ostringstream os;
  write_eval_report(os, ev);
  CHECK(os.str().find("scene_id,band,cpsnr") == 0);

  LrStack no_hr = s;
  no_hr.hr.reset();
  CHECK_THROWS_AS(evaluate_scene(p, mc, no_hr), DataError);
}

TEST_CASE("prepare_stack filters then pads") {
  Rng rng(13);
  LrStack s = tiny_stack(rng, 4, 4, 2);
  for (std::size_t i = 0; i < 16; ++i) s.masks[0].pixels[i] = i < 4;  // clearance 0.25
  for (std::size_t i = 0; i < 16; ++i) s.masks[2].pixels[i] = i < 15;  // clearance 0.9375
  const LrStack p = prepare_stack(s, 5, 0.85);
  REQUIRE(p.size() == 5);
  // survivors 1, 2, 3 ordered by clearance: 1 and 3 are fully clear
  CHECK(p.frames[0].pixels == s.frames[1].pixels);
  CHECK(p.frames[1].pixels == s.frames[3].pixels);
  CHECK(p.frames[2].pixels == s.frames[2].pixels);
  CHECK(p.frames[3].pixels == s.frames[1].pixels);
  CHECK(p.frames[4].pixels == s.frames[3].pixels);
}

// ---- the epoch loop ----

TEST_CASE("fit writes artifacts and is deterministic") {
  SynthRun run;
  REQUIRE(run.data.train.size() == 3);
  REQUIRE(run.data.val.size() == 2);
  const auto out = std::filesystem::path(run.cfg.out_dir);
  const FitResult r = fit(run.cfg, run.data, out, false);
  CHECK(r.epochs_run == 4);
  CHECK(r.steps == 8);
  CHECK(r.history.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(r.history[e].epoch == e + 1);
    CHECK(r.history[e].val_cpsnr.has_value());
    CHECK(std::isfinite(r.history[e].train_loss));
  }
  for (const char* f : {"checkpoint_last.bin", "checkpoint_best.bin", "train_state.bin", "history.csv",
                        "val_report.csv", "config.txt", "manifest.txt"})
    CHECK(std::filesystem::exists(out / f));
  const std::string hist = read_bytes(out / "history.csv");
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 5);
  CHECK(hist == history_to_csv(r.history));
  CHECK(experiment_config_from_text(read_bytes(out / "config.txt")).train.seed == 5);

  double best = -1.0;
  for (const auto& row : r.history) best = std::max(best, *row.val_cpsnr);
  CHECK(r.best_cpsnr == best);
  const auto ck = load_checkpoint<float>(out / "checkpoint_best.bin");
  CHECK(mean_score(evaluate(ck.params, ck.config, run.data.val).model).cpsnr == doctest::Approx(best).epsilon(1e-12));

  const auto other = run.dir / "again";
  fit(run.cfg, run.data, other, false);
  for (const char* f : {"checkpoint_last.bin", "checkpoint_best.bin", "train_state.bin", "history.csv", "val_report.csv"})
    CHECK(read_bytes(out / f) == read_bytes(other / f));

  ExperimentConfig seeded = run.cfg;
  seeded.train.seed = 6;
  fit(seeded, run.data, run.dir / "seed6", false);
  CHECK(read_bytes(out / "checkpoint_last.bin") != read_bytes(run.dir / "seed6" / "checkpoint_last.bin"));
}

TEST_CASE("resuming continues the same trajectory") {
  SynthRun run;
  const auto straight = run.dir / "straight";
  fit(run.cfg, run.data, straight, false);

  const auto split_run = run.dir / "split";
  ExperimentConfig half = run.cfg;
  half.train.epochs = 2;
  const FitResult first = fit(half, run.data, split_run, false);
  CHECK(first.epochs_run == 2);
  const FitResult second = fit(run.cfg, run.data, split_run, true);
  CHECK(second.epochs_run == 4);
  CHECK(second.history.size() == 4);
  for (const char* f : {"checkpoint_last.bin", "train_state.bin", "history.csv"})
    CHECK(read_bytes(straight / f) == read_bytes(split_run / f));

  ExperimentConfig wider = run.cfg;
  wider.model.c_e = 16;
  CHECK_THROWS_AS(fit(wider, run.data, split_run, true), ConfigError);
  CHECK_THROWS_AS(fit(run.cfg, run.data, run.dir / "nothing", true), DataError);
}

TEST_CASE("max_steps and val_every") {
  SynthRun run;
  ExperimentConfig c = run.cfg;
  c.train.max_steps = 3;
  c.train.val_every = 3;
  c.train.epochs = 10;
  const FitResult r = fit(c, run.data, run.dir / "capped", false);
  CHECK(r.steps == 3);
  CHECK(r.epochs_run == 2);
  REQUIRE(r.history.size() == 2);
  CHECK_FALSE(r.history[0].val_cpsnr.has_value());
  CHECK(r.history[1].val_cpsnr.has_value());  // the last epoch always validates

  c.train.max_steps = 0;
  c.train.epochs = 3;
  c.train.lr_decay = 0.5;
  const FitResult d = fit(c, run.data, run.dir / "decay", false);
  CHECK(d.history[2].lr_encoder == doctest::Approx(c.train.lr_encoder * 0.25).epsilon(1e-15));
  CHECK(d.history[2].lr_cot == doctest::Approx(c.train.lr_cot * 0.25).epsilon(1e-15));
  CHECK(d.history[2].val_cpsnr.has_value());
  CHECK_FALSE(d.history[1].val_cpsnr.has_value());
}

TEST_CASE("load_dataset") {
  SynthRun run;
  CHECK(run.data.manifest.train.size() + run.data.manifest.val.size() == 5);
  for (const auto& s : run.data.train) {
    CHECK(s.size() == 3);
    CHECK(s.hr.has_value());
  }
  ExperimentConfig c = run.cfg;
  write_manifest(run.dir / "m.txt", SplitManifest{0, {"NIR/imgset0001"}, {"NIR/imgset0000"}});
  c.data.manifest = (run.dir / "m.txt").string();
  const Dataset d = load_dataset(c);
  REQUIRE(d.train.size() == 1);
  CHECK(d.train[0].scene_id == "NIR/imgset0001");
  c.data.root = (run.dir / "missing").string();
  c.data.manifest.clear();
  CHECK_THROWS(load_dataset(c));
}
