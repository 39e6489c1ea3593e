#include "shield/config.hpp"

#include "shield/digest.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace shield {

std::string noiser_pool_to_string(const std::vector<NoiserKind>& pool) {
  if (pool.empty()) return "none";
  std::string out;
  for (size_t i = 0; i < pool.size(); ++i) out += (i ? "," : "") + to_string(pool[i]);
  return out;
}

std::vector<NoiserKind> parse_noiser_pool(std::string_view text) {
  std::vector<NoiserKind> pool;
  if (text == "none") return pool;
  std::string item;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) pool.push_back(parse_noiser_kind(item));
  }
  if (pool.empty()) throw std::invalid_argument("noiser pool is empty; use 'none' to disable");
  return pool;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "image_size = " << model.image_size << "\n"
      << "message_bits = " << model.message_bits << "\n"
      << "hidden_channels = " << model.hidden_channels << "\n"
      << "alpha = " << fmt(model.alpha) << "\n"
      << "eraser_ratio = " << fmt(model.eraser_ratio) << "\n"
      << "identity_encoder = " << model.backends.identity << "\n"
      << "appearance_encoder = " << model.backends.appearance << "\n"
      << "mouth_encoder = " << model.backends.mouth << "\n"
      << "lambda_r = " << fmt(weights.reconstruction) << "\n"
      << "lambda_n = " << fmt(weights.noise) << "\n"
      << "lambda_a = " << fmt(weights.adversarial) << "\n"
      << "lambda_f = " << fmt(weights.fragile) << "\n"
      << "xi = " << fmt(xi) << "\n"
      << "learning_rate = " << fmt(learning_rate) << "\n"
      << "batch_size = " << batch_size << "\n"
      << "steps = " << steps << "\n"
      << "seed = " << seed << "\n"
      << "noiser = " << noiser_pool_to_string(noiser_pool) << "\n"
      << "jpeg_hard_rounding = " << fmt(jpeg_hard_rounding) << "\n"
      << "warmup_steps = " << warmup_steps << "\n"
      << "alpha_start = " << fmt(alpha_start) << "\n"
      << "dataset = " << dataset << "\n"
      << "toy_identities = " << toy_identities << "\n"
      << "toy_variants = " << toy_variants << "\n"
      << "log_every = " << log_every << "\n"
      << "validate_every = " << validate_every << "\n";
  return out.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  auto i64 = [](const std::string& v) { return static_cast<int64_t>(std::stoll(v)); };
  const std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"image_size", [&](const std::string& v) { c.model.image_size = i64(v); }},
      {"message_bits", [&](const std::string& v) { c.model.message_bits = i64(v); }},
      {"hidden_channels", [&](const std::string& v) { c.model.hidden_channels = i64(v); }},
      {"alpha", [&](const std::string& v) { c.model.alpha = std::stod(v); }},
      {"eraser_ratio", [&](const std::string& v) { c.model.eraser_ratio = std::stod(v); }},
      {"identity_encoder", [&](const std::string& v) { c.model.backends.identity = v; }},
      {"appearance_encoder", [&](const std::string& v) { c.model.backends.appearance = v; }},
      {"mouth_encoder", [&](const std::string& v) { c.model.backends.mouth = v; }},
      {"lambda_r", [&](const std::string& v) { c.weights.reconstruction = std::stod(v); }},
      {"lambda_n", [&](const std::string& v) { c.weights.noise = std::stod(v); }},
      {"lambda_a", [&](const std::string& v) { c.weights.adversarial = std::stod(v); }},
      {"lambda_f", [&](const std::string& v) { c.weights.fragile = std::stod(v); }},
      {"xi", [&](const std::string& v) { c.xi = std::stod(v); }},
      {"learning_rate", [&](const std::string& v) { c.learning_rate = std::stod(v); }},
      {"batch_size", [&](const std::string& v) { c.batch_size = i64(v); }},
      {"steps", [&](const std::string& v) { c.steps = i64(v); }},
      {"seed", [&](const std::string& v) { c.seed = std::stoull(v); }},
      {"noiser", [&](const std::string& v) { c.noiser_pool = parse_noiser_pool(v); }},
      {"jpeg_hard_rounding", [&](const std::string& v) { c.jpeg_hard_rounding = std::stod(v); }},
      {"warmup_steps", [&](const std::string& v) { c.warmup_steps = i64(v); }},
      {"alpha_start", [&](const std::string& v) { c.alpha_start = std::stod(v); }},
      {"dataset", [&](const std::string& v) { c.dataset = v; }},
      {"toy_identities", [&](const std::string& v) { c.toy_identities = std::stoi(v); }},
      {"toy_variants", [&](const std::string& v) { c.toy_variants = std::stoi(v); }},
      {"log_every", [&](const std::string& v) { c.log_every = i64(v); }},
      {"validate_every", [&](const std::string& v) { c.validate_every = i64(v); }},
  };
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
  }
  if (c.model.image_size < 16) throw std::invalid_argument("config: image_size must be >= 16");
  if (c.model.message_bits < 1) throw std::invalid_argument("config: message_bits must be >= 1");
  if (c.model.alpha < 0) throw std::invalid_argument("config: alpha must be >= 0");
  if (c.batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (c.steps < 0 || c.warmup_steps < 0) throw std::invalid_argument("config: negative step count");
  if (c.jpeg_hard_rounding < 0 || c.jpeg_hard_rounding > 1) {
    throw std::invalid_argument("config: jpeg_hard_rounding must be in [0, 1]");
  }
  if (!(c.xi > 0)) throw std::invalid_argument("config: xi must be positive");
  for (double w : {c.weights.reconstruction, c.weights.noise, c.weights.adversarial, c.weights.fragile}) {
    if (w < 0) throw std::invalid_argument("config: loss weights must be nonnegative");
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_text();
}

std::string TrainConfig::digest() const { return sha256_hex(to_text()); }

}  // namespace shield
