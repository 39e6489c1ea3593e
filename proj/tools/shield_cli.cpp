#include "shield/config.hpp"
#include "shield/dataset.hpp"
#include "shield/digest.hpp"
#include "shield/evaluation.hpp"
#include "shield/metrics.hpp"
#include "shield/model.hpp"
#include "shield/tensor_ops.hpp"
#include "shield/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

shield::TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    text = buffer.str();
  }
  for (const auto& o : overrides) text += "\n" + o;
  return shield::TrainConfig::parse(text);
}

shield::TrainConfig checkpoint_config(const fs::path& checkpoint) {
  shield::CheckpointMeta meta;
  shield::IntegrityModel::load(checkpoint, &meta);
  return shield::TrainConfig::parse(meta.config_text);
}

// Validation and test sets: the checkpoint's own dataset unless --data overrides it.
shield::TrainingData evaluation_data(shield::TrainConfig config, const std::string& data) {
  if (!data.empty()) config.dataset = data;
  return shield::load_training_data(config);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const fs::path& out) {
  const auto config = load_config(config_path, overrides);
  fs::create_directories(out);
  config.save(out / "config.txt");
  auto data = shield::load_training_data(config);
  shield::Trainer trainer(config, std::move(data.train), std::move(data.val));
  trainer.set_halt_path(out / "halted.pt");
  std::cout << "training " << config.steps << " steps, config digest " << config.digest() << "\n";
  trainer.run([](const shield::StepLog& l) {
    std::cout << "step " << l.step << " L_r=" << l.recon << " L_n=" << l.noise
              << " L_a=" << l.adversarial << " L_f=" << l.fragile << " total=" << l.total
              << " ber=" << l.batch_ber << std::endl;
  });
  trainer.write_loss_csv(out / "losses.csv");
  trainer.write_validation_csv(out / "validation.csv");
  trainer.save_checkpoint(out / "checkpoint.pt");
  for (const auto& v : trainer.validation_history()) {
    std::cout << "validation step " << v.step << " clean_ber=" << v.clean_ber
              << " mismatched_ber=" << v.mismatched_ber << " psnr=" << v.psnr << "\n";
  }
  std::cout << "wrote " << (out / "checkpoint.pt").string() << "\n";
  return 0;
}

int cmd_embed(const fs::path& checkpoint, const fs::path& image, const std::string& hex,
              const fs::path& out) {
  auto model = shield::IntegrityModel::load(checkpoint);
  const auto message = shield::Message::from_hex(hex);
  if (message.size() != model.config().message_bits) {
    throw std::invalid_argument("message has " + std::to_string(message.size()) +
                                " bits, model expects " +
                                std::to_string(model.config().message_bits));
  }
  torch::NoGradGuard no_grad;
  auto cover = shield::read_image(image, model.config().image_size);
  auto xs = model.embed(cover, message.to_tensor().unsqueeze(0));
  shield::write_png(xs[0], out);
  json sidecar = {{"message_sha256", shield::sha256_hex(message.to_hex())},
                  {"checkpoint_sha256", shield::sha256_file(checkpoint)},
                  {"image_size", model.config().image_size}};
  std::ofstream(out.string() + ".json") << sidecar.dump(2) << "\n";
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_extract(const fs::path& checkpoint, const fs::path& image) {
  auto model = shield::IntegrityModel::load(checkpoint);
  torch::NoGradGuard no_grad;
  auto logits = model.extract(shield::read_image(image, model.config().image_size))[0];
  const auto message = shield::Message::from_logits(logits.unsqueeze(0)).front();
  std::vector<double> values;
  for (int64_t i = 0; i < logits.size(0); ++i) values.push_back(logits[i].item<double>());
  json out = {{"message", message.to_hex()}, {"logits", values}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_verify(const fs::path& checkpoint, const fs::path& image, const std::string& hex,
               const fs::path& calibration) {
  if (!fs::exists(calibration)) {
    throw std::runtime_error("verify needs a calibration record; run 'shield calibrate' first");
  }
  const auto cal = shield::ThresholdCalibration::load(calibration);
  const auto expected = shield::Message::from_hex(hex);
  auto model = shield::IntegrityModel::load(checkpoint);
  torch::NoGradGuard no_grad;
  auto logits = model.extract(shield::read_image(image, model.config().image_size));
  const auto decoded = shield::Message::from_logits(logits).front();
  const auto result = shield::verify_ber(shield::bit_error_rate(expected, decoded), cal.tau);
  json out = {{"ber", result.ber},
              {"p_fake", result.p_fake},
              {"verdict", shield::to_string(result.verdict)},
              {"tau", result.tau},
              {"protocol", shield::to_string(cal.protocol)},
              {"decoded", decoded.to_hex()}};
  std::cout << out.dump(2) << "\n";
  return result.verdict == shield::Verdict::real ? 0 : 2;
}

int cmd_calibrate(const fs::path& checkpoint, const std::string& protocol_name,
                  const std::string& manipulation, const std::string& data, double safety,
                  uint64_t seed, const fs::path& out) {
  const auto protocol = shield::parse_protocol(protocol_name);
  if (protocol == shield::Protocol::white_box && manipulation.empty()) {
    throw std::invalid_argument("white_box calibration needs fake samples: pass --manipulation");
  }
  auto model = shield::IntegrityModel::load(checkpoint);
  const auto config = checkpoint_config(checkpoint);
  auto sets = evaluation_data(config, data);
  const auto val = shield::protect(model, sets.val, seed);
  shield::ThresholdCalibration cal;
  std::ostringstream provenance;
  provenance << "checkpoint " << shield::sha256_file(checkpoint).substr(0, 16) << ", "
             << val.size() << " validation images, seed " << seed;
  if (protocol == shield::Protocol::black_box) {
    const auto robust = shield::random_perturbation_bers(model, val, shield::kMaxPerturbationLevel,
                                                         shield::kMaxPerturbationLevel, seed);
    cal = shield::calibrate_black_box(robust, safety, provenance.str() + ", level-5 perturbations");
  } else {
    const auto spec = shield::parse_manipulation(manipulation);
    const auto real = shield::random_perturbation_bers(model, val, 0, 3, seed);
    const auto fake = shield::manipulation_bers(model, val, spec);
    cal = shield::calibrate_white_box(real, fake, provenance.str() + ", fakes " + manipulation);
    if (cal.degenerate) std::cerr << "warning: real and fake BERs are indistinguishable\n";
  }
  cal.save(out);
  std::cout << cal.to_text();
  return 0;
}

int cmd_evaluate(const fs::path& checkpoint, const std::string& calibration,
                 const std::vector<std::string>& manipulations, const std::vector<std::string>& perturbs,
                 const std::string& data, double safety, uint64_t seed, const fs::path& out) {
  auto model = shield::IntegrityModel::load(checkpoint);
  const auto config = checkpoint_config(checkpoint);
  auto sets = evaluation_data(config, data);
  const auto val = shield::protect(model, sets.val, seed);
  const auto test = shield::protect(model, sets.test, seed + 1);
  shield::EvaluationOptions options;
  options.seed = seed;
  options.black_box_safety = safety;
  if (!manipulations.empty()) {
    options.manipulations.clear();
    for (const auto& m : manipulations) {
      const auto spec = shield::parse_manipulation(m);
      options.manipulations.push_back(spec.kind);
      options.strength = spec.strength;
    }
  }
  auto report = shield::evaluate(model, val, test, options);
  shield::write_report(report, out);
  json extra;
  if (!calibration.empty()) {
    const auto cal = shield::ThresholdCalibration::load(calibration);
    for (const auto kind : options.manipulations) {
      const auto fake = shield::manipulation_bers(model, test, {kind, options.strength});
      const auto real = shield::random_perturbation_bers(model, test, 0, 3, seed + 2);
      std::vector<shield::Scored> scored;
      for (double r : real) scored.push_back({shield::fake_probability(r, cal.tau), false});
      for (double r : fake) scored.push_back({shield::fake_probability(r, cal.tau), true});
      const auto m = shield::detection_metrics(scored);
      extra["supplied_calibration"][shield::to_string(kind)] = {{"tau", cal.tau}, {"acc", m.acc},
                                                                {"auc", m.auc.value_or(-1.0)}};
    }
  }
  for (const auto& p : perturbs) {
    const auto spec = shield::parse_perturbation(p);
    std::mt19937_64 rng(seed);
    auto perturbed = shield::apply_level(test.watermarked, spec.kind, spec.level, rng);
    const auto bers = shield::decode_bers(model, perturbed.clamp(-1, 1), test.bits);
    extra["perturbations"][p] = std::accumulate(bers.begin(), bers.end(), 0.0) / bers.size();
  }
  if (!extra.is_null()) std::ofstream(out / "extra.json") << extra.dump(2) << "\n";
  std::cout << report.to_json() << "\n";
  if (!extra.is_null()) std::cout << extra.dump(2) << "\n";
  return 0;
}

int cmd_report(const fs::path& eval_dir, const std::string& losses, const fs::path& out) {
  fs::create_directories(out);
  std::ifstream in(eval_dir / "report.json");
  if (!in) throw std::runtime_error("no report.json in " + eval_dir.string());
  const auto j = json::parse(in);
  std::ostringstream md;
  md << "| perturbation | L0 | L1 | L2 | L3 | L4 | L5 |\n|---|---|---|---|---|---|---|\n";
  for (const auto& [kind, row] : j["robustness"].items()) {
    md << "| " << kind;
    for (const auto& v : row) md << " | " << std::fixed << std::setprecision(4) << v.get<double>();
    md << " |\n";
  }
  md << "\n| manipulation | protocol | tau | ACC | AUC |\n|---|---|---|---|---|\n";
  for (const auto& r : j["detection"]) {
    md << "| " << r["manipulation"].get<std::string>() << " | " << r["protocol"].get<std::string>()
       << " | " << r["tau"].get<double>() << " | " << r["acc"].get<double>() << " | "
       << r["auc"].get<double>() << " |\n";
  }
  md << "\nPSNR " << j["fidelity"]["psnr"].get<double>() << " dB, SSIM "
     << j["fidelity"]["ssim"].get<double>() << "\n";
  std::ofstream(out / "tables.md") << md.str();
  std::cout << md.str();
  std::ofstream robustness_csv(out / "robustness.csv");
  robustness_csv << std::ifstream(eval_dir / "robustness.csv").rdbuf();
  shield::RobustnessTable table;
  for (auto kind : shield::kPerturbationKinds) {
    const auto& row = j["robustness"][shield::to_string(kind)];
    for (int l = 0; l <= shield::kMaxPerturbationLevel; ++l) {
      table.mean_ber[static_cast<size_t>(kind)][l] = row[l].get<double>();
    }
  }
  shield::plot_robustness(table, out / "robustness.png");
  if (!losses.empty()) shield::plot_losses(losses, out / "losses.png");
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-fragile facial watermarking toolkit"};
  app.require_subcommand(1);

  std::string config_path, image, hex, calibration, data, protocol = "black_box", manipulation;
  std::string losses;
  std::vector<std::string> overrides, manipulations, perturbs;
  fs::path out, checkpoint, eval_dir;
  uint64_t seed = 11;
  double safety = 0.0;
  int identities = 100, variants = 20;
  int64_t size = 128;

  auto* train = app.add_subcommand("train", "Train a model from a key = value config");
  train->add_option("-c,--config", config_path, "Config file");
  train->add_option("-s,--set", overrides, "Extra 'key = value' lines");
  train->add_option("-o,--out", out, "Output directory")->required();

  auto* embed = app.add_subcommand("embed", "Watermark an image with a hex message");
  embed->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  embed->add_option("--image", image)->required()->check(CLI::ExistingFile);
  embed->add_option("--message", hex, "Message as hex, most-significant bit first")->required();
  embed->add_option("-o,--out", out, "Output PNG")->required();

  auto* extract = app.add_subcommand("extract", "Decode the message of an image");
  extract->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  extract->add_option("--image", image)->required()->check(CLI::ExistingFile);

  auto* verify = app.add_subcommand("verify", "Check an image against its expected message");
  verify->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  verify->add_option("--image", image)->required()->check(CLI::ExistingFile);
  verify->add_option("--expected", hex)->required();
  verify->add_option("--calibration", calibration)->required();

  auto* calibrate = app.add_subcommand("calibrate", "Derive a verification threshold");
  calibrate->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  calibrate->add_option("--protocol", protocol)->check(CLI::IsMember({"white_box", "black_box"}));
  calibrate->add_option("--manipulation", manipulation, "Fake generator for white_box");
  calibrate->add_option("--data", data, "Dataset directory or manifest");
  calibrate->add_option("--safety", safety, "Addend to the black-box threshold");
  calibrate->add_option("--seed", seed);
  calibrate->add_option("-o,--out", out)->required();

  auto* evaluate = app.add_subcommand("evaluate", "Robustness, fidelity and detection report");
  evaluate->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--calibration", calibration, "Also score with this calibration");
  evaluate->add_option("--manipulation", manipulations, "kind[:strength], repeatable");
  evaluate->add_option("--perturb", perturbs, "kind:level, repeatable");
  evaluate->add_option("--data", data, "Dataset directory or manifest");
  evaluate->add_option("--safety", safety, "Addend to the black-box threshold");
  evaluate->add_option("--seed", seed);
  evaluate->add_option("-o,--out", out)->required();

  auto* report = app.add_subcommand("report", "Render tables and plots from an evaluation");
  report->add_option("--eval", eval_dir, "Directory written by evaluate")->required();
  report->add_option("--losses", losses, "Training loss CSV");
  report->add_option("-o,--out", out)->required();

  auto* toy = app.add_subcommand("generate-toy", "Write the procedural toy face set as PNGs");
  toy->add_option("--identities", identities);
  toy->add_option("--variants", variants);
  toy->add_option("--size", size);
  toy->add_option("-o,--out", out)->required();

  auto* grid = app.add_subcommand("grid", "Print the perturbation grid as CSV");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config_path, overrides, out);
    if (*embed) return cmd_embed(checkpoint, image, hex, out);
    if (*extract) return cmd_extract(checkpoint, image);
    if (*verify) return cmd_verify(checkpoint, image, hex, calibration);
    if (*calibrate) return cmd_calibrate(checkpoint, protocol, manipulation, data, safety, seed, out);
    if (*evaluate) return cmd_evaluate(checkpoint, calibration, manipulations, perturbs, data, safety, seed, out);
    if (*report) return cmd_report(eval_dir, losses, out);
    if (*toy) {
      shield::ToyFaceGenerator(size).write_directory(out, identities, variants);
      std::cout << "wrote " << identities << " identities to " << out.string() << "\n";
      return 0;
    }
    if (*grid) {
      std::cout << shield::perturbation_grid_csv();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
