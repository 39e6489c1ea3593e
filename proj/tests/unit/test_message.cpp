#include "testing.hpp"
#include "oracles.hpp"

#include "shield/message.hpp"

using namespace shield;

TEST_CASE("hex round trip, most significant bit first") {
  auto m = Message::from_hex("a5f00001");
  CHECK(m.size() == 32);
  CHECK(m[0] == 1);
  CHECK(m[1] == 0);
  CHECK(m[31] == 1);
  CHECK(m.to_hex() == "a5f00001");
  CHECK(Message::from_hex("DEADBEEF").to_hex() == "deadbeef");
  CHECK_THROWS_AS(Message::from_hex("12g4"), std::invalid_argument);
  CHECK_THROWS_AS(Message::from_hex(""), std::invalid_argument);
}

TEST_CASE("duplicate_message uses -1/+1 symbols per channel") {
  auto ones = duplicate_message(Message::from_hex("ffffffff"), 4, 4);
  CHECK(ones.sizes() == torch::IntArrayRef({1, 32, 4, 4}));
  CHECK(torch::equal(ones, torch::ones({1, 32, 4, 4})));
  auto alt = duplicate_message(Message::from_hex("55555555"), 3, 5);
  for (int i = 0; i < 32; ++i) {
    CHECK(torch::equal(alt[0][i], torch::full({3, 5}, i % 2 == 0 ? -1.0f : 1.0f)));
  }
  CHECK(duplicate_message(Message::zeros(32), 128, 128).sizes() ==
        torch::IntArrayRef({1, 32, 128, 128}));
}

TEST_CASE("transform_message is an elementwise product") {
  auto gen = at::detail::createCPUGenerator(5);
  auto rep = torch::randn({1, 2, 2, 2}, gen);
  auto cond = torch::randn({1, 2, 2, 2}, gen);
  auto out = transform_message(rep, cond);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        CHECK(out[0][c][y][x].item<float>() ==
              rep[0][c][y][x].item<float>() * cond[0][c][y][x].item<float>());
  CHECK(torch::equal(transform_message(rep, torch::ones_like(rep)), rep));
  CHECK(torch::equal(transform_message(torch::zeros_like(rep), cond), torch::zeros_like(rep)));
  CHECK_THROWS_AS(transform_message(rep, torch::ones({1, 2, 2, 3})), std::invalid_argument);

  // Flipping bit i negates exactly channel i.
  auto m = Message::from_hex("0f0f0f0f");
  auto c = torch::randn({1, 32, 4, 4}, gen);
  auto a = transform_message(duplicate_message(m, 4, 4), c);
  auto b = transform_message(duplicate_message(m.flipped(9), 4, 4), c);
  for (int i = 0; i < 32; ++i) CHECK(torch::equal(b[0][i], i == 9 ? -a[0][i] : a[0][i]));
}

TEST_CASE("encoder residual is bounded by alpha") {
  torch::manual_seed(1);
  MessageEncoder enc(MessageEncoderOptions{8, 8, 7, 0.07});
  auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
  auto cm = torch::randn({2, 8, 16, 16}) * 50;
  auto xs = enc->forward(x, cm);
  CHECK((xs - x).abs().max().item<double>() <= 0.07 + 1e-7);
  enc->set_alpha(0.0);
  CHECK(torch::equal(enc->forward(x, cm), x));
  CHECK_THROWS_AS(enc->forward(x, torch::zeros({2, 7, 16, 16})), std::invalid_argument);
}

TEST_CASE("pooling logits and mismatched shapes") {
  auto rec = torch::ones({1, 2, 2, 2});
  auto cond = torch::tensor({1.0f, 2.0f, 3.0f, 4.0f, -1.0f, -1.0f, -1.0f, -1.0f}).reshape({1, 2, 2, 2});
  auto logits = pool_logits(rec, cond);
  CHECK(logits[0][0].item<float>() == doctest::Approx(2.5));
  CHECK(logits[0][1].item<float>() == doctest::Approx(-1.0));
  CHECK_THROWS_AS(pool_logits(rec, torch::ones({1, 3, 2, 2})), std::invalid_argument);

  auto gen = at::detail::createCPUGenerator(2);
  auto r = torch::randn({3, 4, 5, 5}, gen);
  auto conds = torch::randn({3, 4, 5, 5}, gen);
  auto cross = pool_logits_cross(r, conds);
  for (int k = 0; k < 3; ++k)
    for (int q = 0; q < 3; ++q) {
      auto direct = pool_logits(r[k].unsqueeze(0), conds[q].unsqueeze(0))[0];
      CHECK(torch::allclose(cross[k][q], direct, 1e-5, 1e-6));
    }
}

TEST_CASE("untrained decoder sits at chance") {
  torch::manual_seed(4);
  MessageDecoder dec(MessageDecoderOptions{32, 8, 10.0});
  dec->eval();
  std::mt19937_64 rng(9);
  std::vector<Message> msgs;
  for (int i = 0; i < 100; ++i) msgs.push_back(Message::random(32, rng));
  auto bits = stack_messages(msgs);
  auto x = torch::rand({100, 3, 16, 16}) * 2 - 1;
  auto cond = torch::randn({100, 32, 16, 16});
  torch::NoGradGuard no_grad;
  auto logits = pool_logits(dec->forward(x), cond);
  auto decoded = Message::from_logits(logits);
  double mean = 0;
  for (int i = 0; i < 100; ++i) mean += oracle::popcount_ber(decoded[i].bits(), msgs[i].bits());
  mean /= 100;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("encoder and decoder pass finite-difference checks in float64") {
  torch::manual_seed(8);
  MessageEncoder enc(MessageEncoderOptions{4, 6, 7, 0.1});
  enc->to(torch::kFloat64);
  auto gen = at::detail::createCPUGenerator(21);
  auto x = torch::rand({1, 3, 12, 12}, gen, torch::dtype(torch::kFloat64)) * 2 - 1;
  auto cm = torch::randn({1, 4, 12, 12}, gen, torch::dtype(torch::kFloat64));
  auto residual_img = oracle::projected([&](const torch::Tensor& v) { return enc->forward(v, cm) - v; },
                                        {1, 3, 12, 12}, 1);
  auto r1 = oracle::finite_difference_check(residual_img, x, 12, 2);
  CHECK_MESSAGE(r1.ok(1e-3), r1.describe());
  auto residual_cm = oracle::projected([&](const torch::Tensor& v) { return enc->forward(x, v) - x; },
                                       {1, 3, 12, 12}, 3);
  auto r2 = oracle::finite_difference_check(residual_cm, cm, 12, 4);
  CHECK_MESSAGE(r2.ok(1e-3), r2.describe());

  MessageDecoder dec(MessageDecoderOptions{4, 6, 10.0});
  dec->to(torch::kFloat64);
  dec->eval();
  auto d = oracle::projected([&](const torch::Tensor& v) { return dec->forward(v); }, {1, 4, 12, 12}, 5);
  auto r3 = oracle::finite_difference_check(d, x, 12, 6);
  CHECK_MESSAGE(r3.ok(1e-3), r3.describe());
}
