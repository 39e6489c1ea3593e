#include "testing.hpp"
#include "oracles.hpp"

#include "shield/metrics.hpp"

#include <filesystem>
#include <fstream>

using namespace shield;

TEST_CASE("BER matches the popcount oracle on 1000 random pairs") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> length(1, 200);
  for (int i = 0; i < 1000; ++i) {
    const int n = i < 500 ? 32 : length(rng);
    auto a = Message::random(n, rng), b = Message::random(n, rng);
    CHECK(bit_error_rate(a, b) == oracle::popcount_ber(a.bits(), b.bits()));
  }
  auto m = Message::from_hex("12345678");
  CHECK(bit_error_rate(m, m) == 0.0);
  CHECK(bit_error_rate(m, m.complement()) == 1.0);
  CHECK_THROWS_AS(bit_error_rate(m, Message::zeros(31)), std::invalid_argument);
}

TEST_CASE("batched BER of logits") {
  auto logits = torch::tensor({{2.0, -1.0, 0.5, -0.1}, {-2.0, -1.0, -0.5, 3.0}});
  auto bits = torch::tensor({{1.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 0.0, 1.0}});
  auto r = bit_error_rates(logits, bits);
  CHECK(r[0].item<double>() == 0.25);
  CHECK(r[1].item<double>() == 0.5);
}

TEST_CASE("fake probability ramp") {
  for (double tau : {0.005, 0.1, 0.1105, 0.25, 0.495}) {
    CHECK(fake_probability(0.0, tau) == 0.0);
    CHECK(fake_probability(tau, tau) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fake_probability(0.5, tau) == 1.0);
    CHECK(fake_probability(0.75, tau) == 1.0);
    double previous = -1;
    for (int i = 0; i <= 1000; ++i) {
      const double r = i / 1000.0;
      const double p = fake_probability(r, tau);
      CHECK(p >= previous);
      CHECK(p == doctest::Approx(oracle::fake_probability(r, tau)).epsilon(1e-12));
      previous = p;
      const auto v = verify_ber(r, tau);
      CHECK((v.verdict == Verdict::fake) == (r > tau));
      CHECK((v.p_fake > 0.5) == (r > tau));
    }
  }
  CHECK_THROWS_AS(fake_probability(0.1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fake_probability(0.1, 0.5), std::invalid_argument);
}

TEST_CASE("white-box calibration equals the exhaustive sweep") {
  CHECK(threshold_grid().size() == 99);
  CHECK(threshold_grid().front() == doctest::Approx(0.005));
  CHECK(threshold_grid().back() == doctest::Approx(0.495));

  CHECK(calibrate_white_box({0.05}, {0.45}).tau == oracle::exhaustive_white_box_tau({0.05}, {0.45}));
  auto plateau = calibrate_white_box({0.0, 0.0}, {0.5, 0.5});
  CHECK(plateau.tau == doctest::Approx(0.005));
  auto flat = calibrate_white_box({0.2, 0.3}, {0.2, 0.3});
  CHECK(flat.degenerate);
  CHECK(flat.tau == doctest::Approx(0.005));

  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> count(1, 30), numerator(0, 32);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> real(count(rng)), fake(count(rng));
    for (auto& r : real) r = numerator(rng) / 64.0;
    for (auto& f : fake) f = numerator(rng) / 32.0;
    const auto cal = calibrate_white_box(real, fake);
    CHECK(cal.protocol == Protocol::white_box);
    CHECK(cal.tau == doctest::Approx(oracle::exhaustive_white_box_tau(real, fake)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(calibrate_white_box({}, {0.4}), std::invalid_argument);
}

TEST_CASE("black-box calibration") {
  auto cal = calibrate_black_box({0.1, 0.12, 0.11}, 0.0, "unit");
  CHECK(cal.tau == doctest::Approx(0.11));
  CHECK(cal.protocol == Protocol::black_box);
  CHECK(calibrate_black_box({0.0, 0.0}).tau == doctest::Approx(0.005));
  CHECK(calibrate_black_box({0.0}, 0.02).tau == doctest::Approx(0.02));
  CHECK(calibrate_black_box({0.6}).tau < 0.5);
  CHECK_THROWS_AS(calibrate_black_box({}), std::invalid_argument);
}

TEST_CASE("calibration record round trip") {
  ThresholdCalibration cal{Protocol::white_box, 0.135, "val split, 140 images", false};
  auto text = cal.to_text();
  auto back = ThresholdCalibration::from_text(text);
  CHECK(back.protocol == cal.protocol);
  CHECK(back.tau == cal.tau);
  CHECK(back.provenance == cal.provenance);
  CHECK(back.provenance_digest() == cal.provenance_digest());
  auto path = std::filesystem::temp_directory_path() / "shield_cal.txt";
  cal.save(path);
  CHECK(ThresholdCalibration::load(path).tau == cal.tau);
  std::filesystem::remove(path);
  auto tampered = text;
  tampered.replace(tampered.find("140"), 3, "999");
  CHECK_THROWS(ThresholdCalibration::from_text(tampered));
  CHECK_THROWS(ThresholdCalibration::from_text("not a record"));
}

TEST_CASE("AUC matches the pair-counting oracle") {
  std::vector<Scored> six = {{0.9, true}, {0.8, true}, {0.6, false},
                             {0.4, true}, {0.3, false}, {0.1, false}};
  auto m = detection_metrics(six);
  REQUIRE(m.auc.has_value());
  CHECK(*m.auc == doctest::Approx(8.0 / 9.0).epsilon(1e-15));
  CHECK(m.acc == doctest::Approx(4.0 / 6.0));

  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> level(0, 5), size(2, 20);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = size(rng);
    std::vector<Scored> s;
    std::vector<double> real, fake;
    for (int i = 0; i < n; ++i) {
      const double p = level(rng) / 5.0;  // coarse values force ties
      const bool f = i == 0 ? true : (i == 1 ? false : (rng() & 1));
      s.push_back({p, f});
      (f ? fake : real).push_back(p);
    }
    auto got = detection_metrics(s);
    REQUIRE(got.auc.has_value());
    CHECK(*got.auc == doctest::Approx(oracle::pair_counting_auc(real, fake)).epsilon(1e-12));
    // Invariant under strictly increasing transforms.
    for (auto& x : s) x.p_fake = std::exp(3 * x.p_fake);
    CHECK(*detection_metrics(s).auc == doctest::Approx(*got.auc).epsilon(1e-12));
  }
  CHECK_FALSE(detection_metrics({{0.2, false}, {0.7, false}}).auc.has_value());
  auto perfect = detection_metrics({{0.9, true}, {0.1, false}});
  CHECK(perfect.acc == 1.0);
  CHECK(*perfect.auc == 1.0);
}

TEST_CASE("fidelity metrics") {
  auto gen = at::detail::createCPUGenerator(3);
  auto x = torch::rand({2, 3, 32, 32}, gen) * 2 - 1;
  auto same = fidelity(x, x);
  CHECK(same.identical());
  CHECK(std::isinf(same.psnr));
  CHECK(same.ssim == doctest::Approx(1.0).epsilon(1e-9));
  // A uniform offset of 2/255 on the [-1, 1] scale is one 8-bit level: PSNR = 20 log10(255).
  auto shifted = fidelity(x, x + 2.0 / 255);
  CHECK(shifted.psnr == doctest::Approx(20 * std::log10(255.0)).epsilon(1e-4));
  auto noisy = fidelity(x, (x + 0.2 * torch::randn(x.sizes(), gen)).clamp(-1, 1));
  CHECK(noisy.ssim < 0.95);
  CHECK(noisy.psnr < 25);
  CHECK(fidelity_per_image(x, x + 2.0 / 255).size() == 2);
}
