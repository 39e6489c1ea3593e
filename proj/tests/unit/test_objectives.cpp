#include "testing.hpp"
#include "oracles.hpp"

#include "shield/adversarial.hpp"
#include "shield/objectives.hpp"

#include <cmath>

using namespace shield;

TEST_CASE("total loss weighting and sign") {
  LossParts<double> parts{0.1, 0.2, 0.3, 0.4};
  CHECK(total_loss(parts, LossWeights{}) == doctest::Approx(0.67).epsilon(1e-12));
  CHECK(total_loss(parts, LossWeights{1, 0, 0, 0}) == 0.1);
  CHECK(total_loss(LossParts<double>{0, 0, 2, 0}, LossWeights{0, 0, 1, 0}) == -2.0);
  LossWeights w;
  CHECK(w.reconstruction == 1.0);
  CHECK(w.noise == 1.0);
  CHECK(w.adversarial == 0.1);
  CHECK(w.fragile == 1.0);
}

TEST_CASE("reconstruction BCE") {
  auto bits = torch::tensor({1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0}, torch::kFloat64).unsqueeze(0);
  CHECK(recon_loss(bits, torch::zeros_like(bits)).item<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto saturated = (bits * 2 - 1) * 60;
  CHECK(recon_loss(bits, saturated).item<double>() < 1e-20);

  auto gen = at::detail::createCPUGenerator(4);
  auto logits = torch::randn({1, 8}, gen, torch::dtype(torch::kFloat64)) * 3;
  double expected = 0;
  for (int i = 0; i < 8; ++i) {
    const double z = logits[0][i].item<double>(), y = bits[0][i].item<double>();
    const double p = 1 / (1 + std::exp(-z));
    expected -= y * std::log(p) + (1 - y) * std::log(1 - p);
  }
  expected /= 8;
  CHECK(std::abs(recon_loss(bits, logits).item<double>() - expected) < 1e-9);
  CHECK_THROWS_AS(recon_loss(bits, torch::zeros({1, 7})), std::invalid_argument);
}

TEST_CASE("noise loss with an identity noiser equals reconstruction loss") {
  torch::manual_seed(2);
  MessageDecoder dec(MessageDecoderOptions{8, 8, 10.0});
  dec->eval();
  auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
  auto cond = torch::randn({2, 8, 16, 16});
  auto bits = torch::randint(0, 2, {2, 8}).to(torch::kFloat32);
  auto ln = noise_loss(dec, bits, x, cond);
  auto lr = recon_loss(bits, pool_logits(dec->forward(x), cond));
  CHECK(torch::equal(ln, lr));
}

TEST_CASE("InfoNCE closed forms") {
  for (int64_t n : {2, 3, 8, 16}) {
    auto v = torch::ones({n, 5}, torch::kFloat64);
    auto loss = fragile_loss(v, v, v.unsqueeze(0).expand({n, n, 5}).clone(), 0.5).item<double>();
    CHECK(std::abs(loss - std::log(static_cast<double>(n))) < 1e-6);
  }
  // Positive similarity 1, negative -1, xi = 0.5.
  auto a = torch::tensor({{1.0, 2.0}, {-3.0, 1.0}}, torch::kFloat64);
  auto neg = torch::stack({torch::stack({a[0], -a[0]}), torch::stack({-a[1], a[1]})});
  const double got = fragile_loss(a, a, neg, 0.5).item<double>();
  CHECK(std::abs(got - std::log1p(std::exp(-4.0))) < 1e-6);
  CHECK(std::abs(got - 0.01815) < 1e-5);
}

TEST_CASE("InfoNCE properties") {
  auto gen = at::detail::createCPUGenerator(6);
  auto a = torch::randn({4, 6}, gen, torch::dtype(torch::kFloat64));
  auto p = torch::randn({4, 6}, gen, torch::dtype(torch::kFloat64));
  auto q = torch::randn({4, 4, 6}, gen, torch::dtype(torch::kFloat64));
  const double base = fragile_loss(a, p, q).item<double>();
  CHECK(std::abs(fragile_loss(a * 3.5, p * 0.2, q * 7).item<double>() - base) < 1e-12);
  CHECK(fragile_loss(a, a, q).item<double>() < base);  // positive similarity raised to 1
  auto sims = info_nce_from_similarities(torch::ones({3}, torch::kFloat64),
                                         torch::full({3, 3}, 0.9, torch::kFloat64));
  CHECK(sims.item<double>() > 0);
  // The diagonal of the negatives is ignored.
  auto q2 = q.clone();
  for (int i = 0; i < 4; ++i) q2[i][i] = torch::randn({6}, gen, torch::dtype(torch::kFloat64));
  CHECK(fragile_loss(a, p, q2).item<double>() == doctest::Approx(base).epsilon(1e-14));
  auto zero = a.clone();
  zero[1].zero_();
  CHECK_THROWS_AS(fragile_loss(zero, p, q), std::invalid_argument);
  CHECK_THROWS_AS(fragile_loss(a.slice(0, 0, 1), p.slice(0, 0, 1), q.slice(0, 0, 1).slice(1, 0, 1)),
                  std::invalid_argument);
}

TEST_CASE("critic and eraser shapes, bounds and determinism") {
  torch::manual_seed(5);
  Critic critic;
  Eraser eraser(EraserOptions{8, 0.05});
  auto x = torch::rand({3, 3, 32, 32}) * 2 - 1;
  auto s = critic->forward(x);
  CHECK(s.sizes() == torch::IntArrayRef({3}));
  CHECK(torch::equal(s, critic->forward(x)));
  auto e = eraser->forward(x);
  CHECK(e.sizes() == x.sizes());
  CHECK((e - x).abs().max().item<double>() <= 0.05 + 1e-7);
  CHECK(eraser->forward(x[0]).sizes() == x[0].sizes());
  for (auto& p : critic->parameters()) {
    torch::NoGradGuard g;
    p.mul_(100);
  }
  critic->clip_weights();
  for (auto& p : critic->parameters()) CHECK(p.abs().max().item<double>() <= 0.1 + 1e-7);
}

TEST_CASE("adversarial loss terms") {
  torch::manual_seed(6);
  Critic critic;
  Eraser eraser(EraserOptions{8, 0.05});
  MessageDecoder dec(MessageDecoderOptions{4, 8, 10.0});
  dec->eval();
  auto x = torch::rand({2, 3, 16, 16}, torch::kFloat64) * 2 - 1;
  critic->to(torch::kFloat64);
  eraser->to(torch::kFloat64);
  dec->to(torch::kFloat64);
  auto cond = torch::randn({2, 4, 16, 16}, torch::kFloat64);
  auto bits = torch::tensor({{1.0, 0.0, 0.0, 1.0}, {0.0, 0.0, 1.0, 1.0}}, torch::kFloat64);

  // x_s = x: the critic gap vanishes.
  auto same = adv_loss(critic, eraser, dec, x, x, bits, cond);
  CHECK(same.critic_gap.item<double>() == 0.0);
  CHECK(same.value().item<double>() == -same.erase_bce.item<double>());

  auto xs = (x + 0.05 * torch::randn_like(x)).clamp(-1, 1);
  auto terms = adv_loss(critic, eraser, dec, x, xs, bits, cond);
  auto again = adv_loss(critic, eraser, dec, x, xs, bits, cond);
  CHECK(terms.value().item<double>() == again.value().item<double>());

  // Scalar-loop oracle on the 2-image batch.
  torch::NoGradGuard no_grad;
  const double gap = (critic->forward(x[0].unsqueeze(0)).item<double>() +
                      critic->forward(x[1].unsqueeze(0)).item<double>()) / 2 -
                     (critic->forward(xs[0].unsqueeze(0)).item<double>() +
                      critic->forward(xs[1].unsqueeze(0)).item<double>()) / 2;
  auto rec = dec->forward(eraser->forward(xs));
  double bce = 0;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 4; ++i) {
      const double z = (rec[b][i] * cond[b][i]).mean().item<double>();
      const double y = bits[b][i].item<double>();
      bce += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * y;
    }
  bce /= 8;
  CHECK(std::abs(terms.value().item<double>() - (gap - bce)) < 1e-6);
}

TEST_CASE("eraser passes a finite-difference check in float64") {
  torch::manual_seed(7);
  Eraser eraser(EraserOptions{8, 0.05});
  eraser->to(torch::kFloat64);
  auto gen = at::detail::createCPUGenerator(17);
  auto x = torch::rand({1, 3, 12, 12}, gen, torch::dtype(torch::kFloat64)) * 2 - 1;
  auto f = oracle::projected([&](const torch::Tensor& v) { return eraser->forward(v) - v; },
                            {1, 3, 12, 12}, 1);
  auto r = oracle::finite_difference_check(f, x, 12, 3);
  CHECK_MESSAGE(r.ok(1e-3), r.describe());
  // Gradients also reach the eraser's own parameters.
  eraser->zero_grad();
  f(x).backward();
  double norm = 0;
  for (auto& p : eraser->parameters()) norm += p.grad().norm().item<double>();
  CHECK(norm > 0);
}
