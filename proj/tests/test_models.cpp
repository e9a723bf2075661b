#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bufd/bayes.hpp"
#include "bufd/models.hpp"
#include "oracles.hpp"

using namespace bufd;

namespace {

Tensor<float> random_image(Rng& rng, Shape shape, double lo = 0.0,
                           double hi = 1.0) {
  Tensor<float> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Plain direct reimplementation of a conv+bn+relu stack for the manual
/// forward-pass oracle; no tape involved.
struct NaiveNet {
  static std::vector<double> conv3x3(const std::vector<double>& x, int cin,
                                     int h, int w,
                                     const std::vector<double>& k, int cout,
                                     const std::vector<double>& bias) {
    std::vector<double> out(static_cast<std::size_t>(cout) * h * w);
    for (int co = 0; co < cout; ++co)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          double acc = bias[static_cast<std::size_t>(co)];
          for (int ci = 0; ci < cin; ++ci)
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const int r = i + di, c = j + dj;
                if (r < 0 || r >= h || c < 0 || c >= w) continue;
                acc += k[static_cast<std::size_t>(
                           ((co * cin + ci) * 3 + di + 1) * 3 + dj + 1)] *
                       x[static_cast<std::size_t>((ci * h + r) * w + c)];
              }
          out[static_cast<std::size_t>((co * h + i) * w + j)] = acc;
        }
    return out;
  }

  static void bn_relu(std::vector<double>& x, int c, int hw) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < hw; ++i) {
        const double v = x[static_cast<std::size_t>(ch * hw + i)];
        s += v;
        s2 += v * v;
      }
      const double m = s / hw;
      const double var = s2 / hw - m * m;
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int i = 0; i < hw; ++i) {
        double& v = x[static_cast<std::size_t>(ch * hw + i)];
        v = (v - m) * inv;
        if (v < 0.0) v = 0.0;
      }
    }
  }
};

}  // namespace

TEST_CASE("residual variant") {
  ModelConfig cfg = preset_desk(ModelVariant::residual);
  cfg.backbone_depth = 3;
  cfg.width = 4;
  Rng rng(2);

  SUBCASE("zero final layer passes the input through") {
    ParameterSet<float> ps = init_params<float>(cfg, 7);
    ps.get("net.c2.w").value.fill(0.0f);
    ps.get("net.c2.b").value.fill(0.0f);
    const Tensor<float> y = random_image(rng, {2, 1, 8, 8});
    Tape<float> tape;
    ParamBinder<float> bind(tape, ps);
    const auto out =
        forward_model(tape, bind, cfg, tape.leaf(y), BnMode::train);
    CHECK(tape.value(out.denoised) == y);
  }

  SUBCASE("spatial shape is preserved for arbitrary sizes") {
    ParameterSet<float> ps = init_params<float>(cfg, 8);
    for (auto [h, w] : {std::pair{3, 3}, {5, 9}, {17, 4}}) {
      Tape<float> tape;
      ParamBinder<float> bind(tape, ps);
      const auto out = forward_model(
          tape, bind, cfg, tape.leaf(random_image(rng, {1, 1, h, w})),
          BnMode::train);
      CHECK(tape.value(out.denoised).shape() == Shape{1, 1, h, w});
    }
  }

  SUBCASE("channel mismatch is rejected") {
    ParameterSet<float> ps = init_params<float>(cfg, 9);
    Tape<float> tape;
    ParamBinder<float> bind(tape, ps);
    const NodeId bad = tape.leaf(random_image(rng, {1, 3, 8, 8}));
    CHECK_THROWS_AS(forward_model(tape, bind, cfg, bad, BnMode::train),
                    std::invalid_argument);
  }

  SUBCASE("three-channel configuration keeps the same architecture") {
    for (ModelVariant v :
         {ModelVariant::residual, ModelVariant::fusion, ModelVariant::buifd}) {
      ModelConfig c3 = preset_desk(v);
      c3.backbone_depth = 3;
      c3.noise_head_depth = 2;
      c3.width = 4;
      c3.fusion_channels = 4;
      c3.channels = 3;
      ParameterSet<float> ps = init_params<float>(c3, 15);
      Tape<float> tape;
      ParamBinder<float> bind(tape, ps);
      const auto out = forward_model(
          tape, bind, c3, tape.leaf(random_image(rng, {2, 3, 9, 9})),
          BnMode::train);
      CHECK(tape.value(out.denoised).shape() == Shape{2, 3, 9, 9});
    }
  }
}

TEST_CASE("tiny residual instance matches hand-composed arithmetic") {
  ModelConfig cfg;
  cfg.variant = ModelVariant::residual;
  cfg.backbone_depth = 3;
  cfg.width = 2;
  ParameterSet<float> ps = init_params<float>(cfg, 123);
  Rng rng(4);
  const int h = 6, w = 5;
  const Tensor<float> y = random_image(rng, {1, 1, h, w});

  Tape<float> tape;
  ParamBinder<float> bind(tape, ps);
  const auto out = forward_model(tape, bind, cfg, tape.leaf(y), BnMode::train);

  // independent recomputation with plain loops
  auto grab = [&](const std::string& name) {
    const Tensor<float>& t = ps.get(name).value;
    return std::vector<double>(t.data(), t.data() + t.size());
  };
  std::vector<double> x(y.data(), y.data() + y.size());
  std::vector<double> h1 =
      NaiveNet::conv3x3(x, 1, h, w, grab("net.c0.w"), 2, grab("net.c0.b"));
  for (double& v : h1) v = std::max(0.0, v);
  std::vector<double> h2 =
      NaiveNet::conv3x3(h1, 2, h, w, grab("net.c1.w"), 2, grab("net.c1.b"));
  NaiveNet::bn_relu(h2, 2, h * w);
  std::vector<double> r =
      NaiveNet::conv3x3(h2, 2, h, w, grab("net.c2.w"), 1, grab("net.c2.b"));

  const Tensor<float>& got = tape.value(out.denoised);
  for (std::int64_t i = 0; i < got.size(); ++i)
    CHECK(got[i] ==
          doctest::Approx(y[i] - r[static_cast<std::size_t>(i)]).epsilon(1e-5));
}

TEST_CASE("fusion variant wiring") {
  ModelConfig cfg = preset_desk(ModelVariant::fusion);
  cfg.backbone_depth = 3;
  cfg.width = 4;
  Rng rng(11);
  const Tensor<float> y = random_image(rng, {2, 1, 7, 7});

  SUBCASE("forced b = 0 returns the noisy input") {
    ParameterSet<float> ps = init_params<float>(cfg, 21);
    ps.get("snr.c2.w").value.fill(0.0f);
    ps.get("snr.c2.b").value.fill(0.0f);
    Tape<float> tape;
    ParamBinder<float> bind(tape, ps);
    const auto out =
        forward_model(tape, bind, cfg, tape.leaf(y), BnMode::train);
    const Tensor<float>& den = tape.value(out.denoised);
    for (std::int64_t i = 0; i < den.size(); ++i)
      CHECK(den[i] == doctest::Approx(y[i]).epsilon(1e-6));
  }

  SUBCASE("forced b = 1 returns the prior branch output") {
    ParameterSet<float> ps = init_params<float>(cfg, 22);
    ps.get("snr.c2.w").value.fill(0.0f);
    ps.get("snr.c2.b").value.fill(1.0f);
    Tape<float> tape;
    ParamBinder<float> bind(tape, ps);
    const auto out =
        forward_model(tape, bind, cfg, tape.leaf(y), BnMode::train);
    const Tensor<float>& den = tape.value(out.denoised);
    const Tensor<float>& a = tape.value(out.prior_pred);
    for (std::int64_t i = 0; i < den.size(); ++i)
      CHECK(den[i] == doctest::Approx(a[i]).epsilon(1e-6));
  }

  SUBCASE("identity: denoised - y == b * (a - y)") {
    ParameterSet<float> ps = init_params<float>(cfg, 23);
    Tape<float> tape;
    ParamBinder<float> bind(tape, ps);
    const auto out =
        forward_model(tape, bind, cfg, tape.leaf(y), BnMode::train);
    const Tensor<float>& den = tape.value(out.denoised);
    const Tensor<float>& a = tape.value(out.prior_pred);
    const Tensor<float>& b = tape.value(out.weight_pred);
    for (std::int64_t i = 0; i < den.size(); ++i)
      CHECK(den[i] - y[i] ==
            doctest::Approx(b[i] * (a[i] - y[i])).epsilon(1e-5));
  }
}

TEST_CASE("fusion combination equals the closed-form fusion") {
  // with a = prior mean and b = f(S), the network combination is the optimal
  // estimator
  Rng rng(31);
  const GaussianPrior prior{0.5, 25.0 / 255.0};
  for (double sigma : {5.0, 25.0, 70.0}) {
    const double S = snr(prior.stddev, sigma / 255.0);
    const double f = snr_weight(S);
    Tape<float> tape;
    const Tensor<float> y = random_image(rng, {1, 1, 5, 5});
    const NodeId a = tape.leaf(Tensor<float>(y.shape(), (float)prior.mean));
    const NodeId b = tape.leaf(Tensor<float>(y.shape(), (float)f));
    const NodeId den = fusion_combine(tape, a, b, tape.leaf(y));
    for (std::int64_t i = 0; i < y.size(); ++i)
      CHECK(tape.value(den)[i] ==
            doctest::Approx(fuse(prior.mean, y[i], S)).epsilon(1e-6));
  }
}

TEST_CASE("fusion loss") {
  Tape<float> tape;
  Rng rng(41);
  const Tensor<float> yv = random_image(rng, {1, 1, 4, 4});
  const Tensor<float> xv = random_image(rng, {1, 1, 4, 4});
  ModelOutputs<float> out;
  out.prior_pred = tape.leaf(random_image(rng, {1, 1, 4, 4}));
  out.weight_pred = tape.leaf(random_image(rng, {1, 1, 4, 4}));
  out.denoised =
      fusion_combine(tape, out.prior_pred, out.weight_pred, tape.leaf(yv));
  const NodeId x = tape.leaf(xv);
  const NodeId f = tape.leaf(random_image(rng, {1, 1, 4, 4}));

  const double recon = tape.value(tape.mse(out.denoised, x))[0];
  const double aux = tape.value(tape.mse(out.weight_pred, f))[0];

  CHECK(tape.value(fusion_loss(tape, out, x, f, 1.0))[0] ==
        doctest::Approx(recon).epsilon(1e-6));
  CHECK(tape.value(fusion_loss(tape, out, x, f, 0.0))[0] ==
        doctest::Approx(aux).epsilon(1e-6));
  CHECK(tape.value(fusion_loss(tape, out, x, f, 0.1))[0] ==
        doctest::Approx(0.1 * recon + 0.9 * aux).epsilon(1e-6));
  CHECK_THROWS_AS(fusion_loss(tape, out, x, f, 1.5), std::invalid_argument);

  // perfect predictions drive the loss to zero
  Tape<float> t2;
  ModelOutputs<float> perfect;
  perfect.prior_pred = t2.leaf(xv);
  perfect.weight_pred = t2.leaf(Tensor<float>({1, 1, 4, 4}, 1.0f));
  perfect.denoised = fusion_combine(t2, perfect.prior_pred,
                                    perfect.weight_pred, t2.leaf(yv));
  const NodeId fx = t2.leaf(Tensor<float>({1, 1, 4, 4}, 1.0f));
  CHECK(t2.value(fusion_loss(t2, perfect, t2.leaf(xv), fx, 0.1))[0] ==
        doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("product fusion stack") {
  Tape<float> tape;
  Rng rng(51);
  const Tensor<float> yv = random_image(rng, {2, 1, 3, 3});
  const Tensor<float> pv = random_image(rng, {2, 1, 3, 3});
  const NodeId y = tape.leaf(yv);
  const NodeId p = tape.leaf(pv);

  SUBCASE("noise prediction 0: stack is {y, p, 0, 0, y}") {
    const NodeId stack = product_fusion_stack(
        tape, y, p, tape.leaf(Tensor<float>({2, 1, 3, 3}, 0.0f)));
    const Tensor<float>& s = tape.value(stack);
    CHECK(s.shape() == Shape{2, 5, 3, 3});
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < 9; ++i) {
        CHECK(s.at(b, 0, i / 3, i % 3) == yv.at(b, 0, i / 3, i % 3));
        CHECK(s.at(b, 1, i / 3, i % 3) == pv.at(b, 0, i / 3, i % 3));
        CHECK(s.at(b, 2, i / 3, i % 3) == 0.0f);
        CHECK(s.at(b, 3, i / 3, i % 3) == 0.0f);
        CHECK(s.at(b, 4, i / 3, i % 3) == yv.at(b, 0, i / 3, i % 3));
      }
  }

  SUBCASE("noise prediction 1: stack is {y, p, 1, p, 0}") {
    const NodeId stack = product_fusion_stack(
        tape, y, p, tape.leaf(Tensor<float>({2, 1, 3, 3}, 1.0f)));
    const Tensor<float>& s = tape.value(stack);
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < 9; ++i) {
        CHECK(s.at(b, 2, i / 3, i % 3) == 1.0f);
        CHECK(s.at(b, 3, i / 3, i % 3) == pv.at(b, 0, i / 3, i % 3));
        CHECK(s.at(b, 4, i / 3, i % 3) == 0.0f);
      }
  }

  SUBCASE("grayscale input yields exactly 5 channels") {
    const NodeId stack = product_fusion_stack(
        tape, y, p, tape.leaf(random_image(rng, {2, 1, 3, 3})));
    CHECK(tape.value(stack).shape()[1] == 5);
  }
}

TEST_CASE("buifd variant") {
  ModelConfig cfg = preset_desk(ModelVariant::buifd);
  cfg.backbone_depth = 3;
  cfg.noise_head_depth = 2;
  cfg.width = 4;
  cfg.fusion_channels = 6;
  Rng rng(61);

  SUBCASE("shape contract and bounded noise head, any parameters") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      ParameterSet<float> ps = init_params<float>(cfg, seed);
      // blow up the head's final layer; sigmoid must still bound the output
      ps.get("noise.out.w").value.fill(seed == 2 ? 50.0f : -50.0f);
      Tape<float> tape;
      ParamBinder<float> bind(tape, ps);
      const auto out = forward_model(
          tape, bind, cfg, tape.leaf(random_image(rng, {1, 1, 9, 9})),
          BnMode::train);
      CHECK(tape.value(out.denoised).shape() == Shape{1, 1, 9, 9});
      const Tensor<float>& n = tape.value(out.weight_pred);
      for (std::int64_t i = 0; i < n.size(); ++i) {
        CHECK(n[i] >= 0.0f);
        CHECK(n[i] <= 1.0f);
      }
    }
  }

  SUBCASE("fusion stage is linear up to its bias") {
    // run only the fusion convolutions on three stacks u, v, au+bv and
    // check F(au+bv) = a F(u) + b F(v) + (1-a-b) F(0)
    ParameterSet<float> ps = init_params<float>(cfg, 77);
    const double alpha = 0.7, beta = -0.4;
    auto fuse_only = [&](const Tensor<float>& stack) {
      Tape<float> tape;
      ParamBinder<float> bind(tape, ps);
      NodeId f = tape.leaf(stack);
      for (int i = 0; i < cfg.fusion_layers; ++i) {
        const std::string c = "fuse.c" + std::to_string(i);
        f = tape.conv2d(f, bind(c + ".w"), bind(c + ".b"));
      }
      return tape.value(f);
    };
    const Tensor<float> u = random_image(rng, {1, 5, 6, 6});
    const Tensor<float> v = random_image(rng, {1, 5, 6, 6});
    Tensor<float> combo(u.shape());
    for (std::int64_t i = 0; i < u.size(); ++i)
      combo[i] = static_cast<float>(alpha * u[i] + beta * v[i]);
    const Tensor<float> fu = fuse_only(u);
    const Tensor<float> fv = fuse_only(v);
    const Tensor<float> f0 = fuse_only(Tensor<float>(u.shape(), 0.0f));
    const Tensor<float> fc = fuse_only(combo);
    for (std::int64_t i = 0; i < fc.size(); ++i) {
      const double want =
          alpha * fu[i] + beta * fv[i] + (1.0 - alpha - beta) * f0[i];
      CHECK(std::abs(fc[i] - want) < 1e-5);
    }
  }

  SUBCASE("loss matches hand arithmetic") {
    Tape<float> tape;
    ModelOutputs<float> out;
    out.denoised = tape.leaf(
        Tensor<float>::from_data({1, 1, 2, 2}, {0.1f, 0.4f, 0.6f, 0.9f}));
    out.weight_pred = tape.leaf(
        Tensor<float>::from_data({1, 1, 2, 2}, {0.2f, 0.2f, 0.3f, 0.3f}));
    const NodeId x = tape.leaf(
        Tensor<float>::from_data({1, 1, 2, 2}, {0.2f, 0.4f, 0.5f, 1.0f}));
    const NodeId lvl = tape.leaf(Tensor<float>({1, 1, 2, 2}, 0.25f));
    // mse(denoised,x) = (0.01 + 0 + 0.01 + 0.01)/4; mse(n,lvl) =
    // (0.0025*2 + 0.0025*2)/4
    const double want = (0.01 + 0.0 + 0.01 + 0.01) / 4.0 +
                        (0.0025 + 0.0025 + 0.0025 + 0.0025) / 4.0;
    CHECK(std::abs(tape.value(buifd_loss(tape, out, x, lvl))[0] - want) <
          1e-7);
  }
}

TEST_CASE("inference runs with frozen statistics") {
  ModelConfig cfg = preset_desk(ModelVariant::fusion);
  cfg.backbone_depth = 3;
  cfg.width = 4;
  ParameterSet<float> ps = init_params<float>(cfg, 5);
  Rng rng(71);
  const Tensor<float> y = random_image(rng, {1, 1, 16, 16});

  // before any training batch the running stats are undefined
  CHECK_THROWS_AS(run_inference(cfg, ps, y), std::logic_error);

  {
    Tape<float> tape;
    ParamBinder<float> bind(tape, ps);
    forward_model(tape, bind, cfg, tape.leaf(random_image(rng, {4, 1, 8, 8})),
                  BnMode::train);
  }
  const InferenceResult<float> r = run_inference(cfg, ps, y);
  CHECK(r.denoised.shape() == y.shape());
  CHECK(r.denoised.all_finite());
  CHECK(r.weight_pred.shape() == y.shape());
  // same input, same parameters: bit-identical
  const InferenceResult<float> r2 = run_inference(cfg, ps, y);
  CHECK(r.denoised == r2.denoised);
}
