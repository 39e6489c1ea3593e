#include "shield/trainer.hpp"

#include "shield/metrics.hpp"
#include "shield/objectives.hpp"
#include "shield/tensor_ops.hpp"

#include <algorithm>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace shield {

namespace {

constexpr uint64_t kValidationSeed = 0x5EED5;
constexpr int64_t kValidationImages = 64;

torch::Tensor random_bits(int64_t rows, int64_t bits, std::mt19937_64& rng) {
  auto out = torch::empty({rows, bits}, torch::kFloat32);
  auto acc = out.accessor<float, 2>();
  std::bernoulli_distribution coin(0.5);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < bits; ++c) acc[r][c] = coin(rng) ? 1.0f : 0.0f;
  }
  return out;
}

}  // namespace

TrainingData load_training_data(const TrainConfig& config) {
  const auto size = config.model.image_size;
  if (config.dataset.empty()) {
    ToyFaceGenerator gen(size);
    const auto splits = toy_splits(config.toy_identities);
    return {gen.make_set(splits.train, 0, config.toy_variants),
            gen.make_set(splits.val, config.toy_variants, 10),
            gen.make_set(splits.test, config.toy_variants, 10)};
  }
  const auto manifest = ingest(config.dataset, config.seed);
  return {load_split(manifest, Split::train, size), load_split(manifest, Split::val, size),
          load_split(manifest, Split::test, size)};
}

Trainer::Trainer(TrainConfig config, FaceSet train, std::optional<FaceSet> validation)
    : config_(std::move(config)),
      train_(std::move(train)),
      val_set_(std::move(validation)),
      rng_(config_.seed) {
  if (train_.image_size() != config_.model.image_size) {
    throw std::invalid_argument("training images do not match the configured image size");
  }
  std::map<int, std::vector<int64_t>> groups;
  for (int64_t i = 0; i < train_.size(); ++i) groups[train_.identities[i]].push_back(i);
  for (auto& [id, rows] : groups) rows_by_identity_.push_back(std::move(rows));
  if (static_cast<int64_t>(rows_by_identity_.size()) < config_.batch_size) {
    throw std::invalid_argument("training set has fewer identities than the batch size");
  }

  torch::manual_seed(config_.seed);
  model_ = std::make_unique<IntegrityModel>(config_.model);
  model_->train(true);
  codec_opt_ = std::make_unique<torch::optim::Adam>(
      model_->codec_parameters(), torch::optim::AdamOptions(config_.learning_rate));
  adversary_opt_ = std::make_unique<torch::optim::Adam>(
      model_->adversary_parameters(), torch::optim::AdamOptions(config_.learning_rate));
  if (!config_.noiser_pool.empty()) {
    noiser_.emplace(config_.noiser_pool, config_.jpeg_hard_rounding);
  }
}

Trainer::Schedule Trainer::schedule(int64_t step) const {
  const auto& w = config_.weights;
  if (config_.warmup_steps <= 0) return {config_.model.alpha, w.fragile, w.adversarial};
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(config_.warmup_steps));
  const double ramp = std::max(0.0, 2.0 * frac - 1.0);
  return {config_.model.alpha + (config_.alpha_start - config_.model.alpha) * (1.0 - frac),
          w.fragile * ramp, w.adversarial * ramp};
}

torch::Tensor Trainer::sample_batch(std::vector<int>* identities) {
  // Partial Fisher-Yates over identity groups gives distinct identities per batch.
  std::vector<size_t> order(rows_by_identity_.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < config_.batch_size; ++i) {
    const auto j = std::uniform_int_distribution<size_t>(i, order.size() - 1)(rng_);
    std::swap(order[i], order[j]);
    const auto& group = rows_by_identity_[order[i]];
    rows.push_back(group[std::uniform_int_distribution<size_t>(0, group.size() - 1)(rng_)]);
  }
  if (identities) {
    identities->clear();
    for (auto r : rows) identities->push_back(train_.identities[r]);
  }
  return train_.images.index_select(0, torch::tensor(rows, torch::kLong));
}

double Trainer::adversarial_step(const torch::Tensor& covers, const torch::Tensor& watermarked,
                                 const torch::Tensor& bits, const torch::Tensor& condition) {
  auto& decoder = model_->decoder();
  decoder->eval();
  auto terms = adv_loss(model_->critic(), model_->eraser(), decoder, covers, watermarked, bits,
                        condition);
  auto value = terms.value();
  if (!std::isfinite(value.item<double>())) {
    decoder->train();
    throw TrainingHalted("adversarial loss is non-finite at step " + std::to_string(step_) +
                         " (critic gap " + std::to_string(terms.critic_gap.item<double>()) +
                         ", erase BCE " + std::to_string(terms.erase_bce.item<double>()) + ")");
  }
  adversary_opt_->zero_grad();
  value.backward();
  adversary_opt_->step();
  model_->critic()->clip_weights();
  decoder->train();
  return value.item<double>();
}

StepLog Trainer::step() {
  const auto sched = schedule(step_);
  auto& m = *model_;
  m.encoder()->set_alpha(sched.alpha);
  m.train(true);

  auto x = sample_batch(nullptr);
  auto bits = random_bits(x.size(0), config_.model.message_bits, rng_);
  auto cond = m.condition(x);
  auto cm = transform_message(duplicate_message(bits, x.size(2), x.size(3)), cond);
  auto xs = m.encoder()->forward(x, cm);

  auto recovered = m.decoder()->forward(xs);
  auto logits = pool_logits(recovered, cond);
  LossParts<torch::Tensor> parts;
  parts.reconstruction = recon_loss(bits, logits);
  auto noisy_logits = logits;
  if (noiser_) {
    noisy_logits = pool_logits(m.decoder()->forward((*noiser_)(xs, rng_)), cond);
  }
  parts.noise = recon_loss(bits, noisy_logits);
  parts.fragile = fragile_loss(logits, noisy_logits, pool_logits_cross(recovered, cond), config_.xi);
  if (sched.adversarial > 0) {
    parts.adversarial =
        adv_loss(m.critic(), m.eraser(), m.decoder(), x, xs, bits, cond).value();
  } else {
    torch::NoGradGuard no_grad;
    parts.adversarial =
        adv_loss(m.critic(), m.eraser(), m.decoder(), x, xs.detach(), bits, cond.detach()).value();
  }
  LossWeights weights = config_.weights;
  weights.fragile = sched.fragile;
  weights.adversarial = sched.adversarial;
  auto total = total_loss(parts, weights);

  StepLog log;
  log.step = step_;
  log.alpha = sched.alpha;
  log.recon = parts.reconstruction.item<double>();
  log.noise = parts.noise.item<double>();
  log.adversarial = parts.adversarial.item<double>();
  log.fragile = parts.fragile.item<double>();
  log.total = total.item<double>();
  log.batch_ber = bit_error_rates(logits, bits).mean().item<double>();

  if (!std::isfinite(log.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ << ": L_r=" << log.recon << " L_n=" << log.noise
        << " L_a=" << log.adversarial << " L_f=" << log.fragile;
    if (!halt_path_.empty()) {
      save_checkpoint(halt_path_);
      msg << "; checkpoint written to " << halt_path_.string();
    }
    throw TrainingHalted(msg.str());
  }

  codec_opt_->zero_grad();
  total.backward();
  codec_opt_->step();
  if (sched.adversarial > 0) adversarial_step(x, xs.detach(), bits, cond.detach());

  ++step_;
  history_.push_back(log);
  return log;
}

ValidationLog Trainer::validate() {
  if (!val_set_) throw std::logic_error("no validation set configured");
  auto& m = *model_;
  m.train(false);
  torch::NoGradGuard no_grad;
  std::mt19937_64 rng(kValidationSeed);
  const auto n = std::min<int64_t>(kValidationImages, val_set_->size());
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < n; ++i) rows.push_back(i * val_set_->size() / n);
  auto set = val_set_->subset(rows);
  auto bits = random_bits(n, config_.model.message_bits, rng);
  auto xs = quantize_8bit(m.embed(set.images, bits));
  auto cond = m.condition(xs);
  ValidationLog log;
  log.step = step_;
  log.clean_ber = bit_error_rates(m.decode(xs, cond), bits).mean().item<double>();
  const auto partners = foreign_partners(set.identities);
  auto foreign = cond.index_select(0, torch::tensor(partners, torch::kLong));
  log.mismatched_ber = bit_error_rates(m.decode(xs, foreign), bits).mean().item<double>();
  log.psnr = fidelity(set.images, xs).psnr;
  m.train(true);
  validation_log_.push_back(log);
  return log;
}

void Trainer::run(const std::function<void(const StepLog&)>& on_log) {
  while (step_ < config_.steps) {
    const auto log = step();
    const bool last = step_ == config_.steps;
    if (on_log && (log.step % std::max<int64_t>(1, config_.log_every) == 0 || last)) on_log(log);
    if (val_set_ && config_.validate_every > 0 && (step_ % config_.validate_every == 0 || last)) {
      validate();
    }
  }
  model_->encoder()->set_alpha(config_.model.alpha);
  model_->train(false);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) {
  CheckpointMeta meta;
  meta.config_text = config_.to_text();
  meta.config_digest = config_.digest();
  meta.step = step_;
  model_->save(path, meta);
}

void Trainer::write_loss_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,alpha,L_r,L_n,L_a,L_f,total,batch_ber\n" << std::setprecision(9);
  for (const auto& l : history_) {
    out << l.step << ',' << l.alpha << ',' << l.recon << ',' << l.noise << ',' << l.adversarial
        << ',' << l.fragile << ',' << l.total << ',' << l.batch_ber << '\n';
  }
}

void Trainer::write_validation_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,clean_ber,mismatched_ber,psnr\n" << std::setprecision(9);
  for (const auto& v : validation_log_) {
    out << v.step << ',' << v.clean_ber << ',' << v.mismatched_ber << ',' << v.psnr << '\n';
  }
}

std::filesystem::path cache_directory() {
  const char* dir = std::getenv("SHIELD_CACHE_DIR");
  return dir ? std::filesystem::path(dir) : std::filesystem::path();
}

IntegrityModel train_or_load(const TrainConfig& config, const std::filesystem::path& cache,
                             const std::function<void(const StepLog&)>& on_log) {
  const auto stem = config.digest().substr(0, 16);
  if (!cache.empty()) {
    const auto path = cache / (stem + ".pt");
    if (std::filesystem::exists(path)) return IntegrityModel::load(path);
  }
  auto data = load_training_data(config);
  Trainer trainer(config, std::move(data.train), std::move(data.val));
  if (!cache.empty()) {
    std::filesystem::create_directories(cache);
    trainer.set_halt_path(cache / (stem + ".halted.pt"));
  }
  trainer.run(on_log);
  if (!cache.empty()) {
    trainer.write_loss_csv(cache / (stem + ".losses.csv"));
    trainer.write_validation_csv(cache / (stem + ".validation.csv"));
    const auto tmp = cache / (stem + ".pt.tmp");
    trainer.save_checkpoint(tmp);
    std::filesystem::rename(tmp, cache / (stem + ".pt"));
    return IntegrityModel::load(cache / (stem + ".pt"));
  }
  return std::move(trainer.model());
}

}  // namespace shield
