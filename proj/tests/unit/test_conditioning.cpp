#include "testing.hpp"
#include "oracles.hpp"

#include "shield/conditioning.hpp"
#include "shield/dataset.hpp"

#include <filesystem>
#include <fstream>

using namespace shield;

TEST_CASE("pixel shuffle matches the index-map oracle") {
  auto gen = at::detail::createCPUGenerator(11);
  for (int64_t r : {1, 2, 3, 4, 16}) {
    for (int64_t k : {1, 2, 3}) {
      auto input = torch::randn({2, k * r * r, 3, 2}, gen, torch::dtype(torch::kFloat64));
      auto got = shield::pixel_shuffle(input, r);
      CHECK(torch::equal(got, oracle::pixel_shuffle_loops(input, r)));
    }
  }
}

TEST_CASE("pixel shuffle of 0..7 with r = 2 follows the enumerated map") {
  auto input = torch::arange(8, torch::kFloat64);
  auto out = shield::pixel_shuffle(input, 2);
  REQUIRE(out.sizes() == torch::IntArrayRef({1, 2, 2, 2}));
  // c = 0 holds 0..3 in raster order, c = 1 holds 4..7.
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t y = 0; y < 2; ++y)
      for (int64_t x = 0; x < 2; ++x) CHECK(out[0][c][y][x].item<double>() == c * 4 + y * 2 + x);
}

TEST_CASE("pixel shuffle is a bijection and maps 512 to 2x16x16") {
  auto input = torch::randperm(512, torch::kFloat64);
  auto out = shield::pixel_shuffle(input);
  CHECK(out.sizes() == torch::IntArrayRef({1, 2, 16, 16}));
  auto sorted_in = std::get<0>(input.sort());
  auto sorted_out = std::get<0>(out.reshape({-1}).sort());
  CHECK(torch::equal(sorted_in, sorted_out));
  CHECK(torch::equal(shield::pixel_shuffle(torch::full({512}, 0.25)),
                     torch::full({1, 2, 16, 16}, 0.25)));
  CHECK_THROWS_AS(shield::pixel_shuffle(torch::zeros({511})), std::invalid_argument);
}

TEST_CASE("facial token shape chain and linearity") {
  AttributeEmbeddings zero{torch::zeros({2, 512}), torch::zeros({2, 512}), torch::zeros({2, 512})};
  auto token = assemble_facial_token(zero, 40, 24);
  CHECK(token.sizes() == torch::IntArrayRef({2, 6, 40, 24}));
  CHECK(token.abs().max().item<double>() == 0.0);

  AttributeEmbeddings constant{torch::full({1, 512}, 0.5), torch::full({1, 512}, -1.0),
                               torch::full({1, 512}, 2.0)};
  auto t = assemble_facial_token(constant, 64, 64);
  const double expected[] = {0.5, 0.5, -1.0, -1.0, 2.0, 2.0};
  for (int c = 0; c < 6; ++c) {
    CHECK(t[0][c].sub(expected[c]).abs().max().item<double>() < 1e-6);
  }
  CHECK_THROWS_AS(assemble_facial_token(zero, 8, 64), std::invalid_argument);
}

TEST_CASE("encoder bank is deterministic, frozen and validates input") {
  EncoderBank bank(64);
  ToyFaceGenerator toy(64);
  auto images = torch::stack({toy.render(0, 0).image, toy.render(1, 0).image});
  auto a = bank.extract(images);
  auto b = bank.extract(images);
  CHECK(a.identity.sizes() == torch::IntArrayRef({2, 512}));
  CHECK(torch::equal(a.identity, b.identity));
  CHECK(torch::equal(a.appearance, b.appearance));
  CHECK(torch::equal(a.mouth, b.mouth));
  for (const auto& w : bank.weights()) CHECK_FALSE(w.requires_grad());
  for (const auto& s : bank.specs()) CHECK(s.frozen);

  auto zeros = bank.extract(torch::zeros({1, 3, 64, 64}));
  CHECK(torch::equal(zeros.mouth, bank.extract(torch::zeros({1, 3, 64, 64})).mouth));

  auto bad = images.clone();
  bad[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(bank.extract(bad), std::invalid_argument);
  CHECK_THROWS_AS(bank.extract(torch::zeros({1, 3, 32, 32})), std::invalid_argument);
  CHECK_THROWS_AS(EncoderBank(64, EncoderBackends{"missing", "", ""}), std::invalid_argument);
}

TEST_CASE("identity surrogate separates toy identities") {
  // Same identity (different variants) must be more similar than different identities.
  ToyFaceGenerator toy(64);
  EncoderBank bank(64);
  std::vector<torch::Tensor> images;
  for (int id = 0; id < 10; ++id)
    for (int v = 0; v < 4; ++v) images.push_back(toy.render(id, v).image);
  auto e = bank.extract(torch::stack(images)).identity;
  e = e / e.norm(2, 1, true);
  auto sim = torch::matmul(e, e.t());
  double same = 0, diff = 0;
  int n_same = 0, n_diff = 0;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) {
      if (i == j) continue;
      const double s = sim[i][j].item<double>();
      if (i / 4 == j / 4) {
        same += s;
        ++n_same;
      } else {
        diff += s;
        ++n_diff;
      }
    }
  MESSAGE("identity cosine: same " << same / n_same << ", different " << diff / n_diff);
  CHECK(same / n_same - diff / n_diff > 0.1);
}

TEST_CASE("condition generator output is channel-normalized and deterministic") {
  torch::manual_seed(3);
  ConditionGenerator gen(ConditionGeneratorOptions{8, 8, 7});
  gen->eval();
  auto token = torch::randn({2, 6, 32, 32});
  auto a = gen->forward(token);
  CHECK(a.sizes() == torch::IntArrayRef({2, 8, 32, 32}));
  CHECK(torch::equal(a, gen->forward(token)));
  CHECK(a.mean({2, 3}).abs().max().item<double>() < 1e-4);
  CHECK(a.pow(2).mean({2, 3}).sqrt().sub(1).abs().max().item<double>() < 1e-3);
}

TEST_CASE("embedding export round-trips") {
  auto path = std::filesystem::temp_directory_path() / "shield_embedding.bin";
  auto e = torch::randn({512});
  export_embedding(e, path);
  CHECK(std::filesystem::file_size(path) == 512 * 4);
  CHECK(torch::equal(import_embedding(path), e));
  std::filesystem::remove(path);
}
