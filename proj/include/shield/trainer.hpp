#pragma once

#include "shield/config.hpp"
#include "shield/dataset.hpp"
#include "shield/model.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace shield {

struct StepLog {
  int64_t step = 0;
  double alpha = 0.0;
  double recon = 0.0;
  double noise = 0.0;
  double adversarial = 0.0;
  double fragile = 0.0;
  double total = 0.0;
  double batch_ber = 0.0;
};

struct ValidationLog {
  int64_t step = 0;
  double clean_ber = 0.0;
  double mismatched_ber = 0.0;
  double psnr = 0.0;
};

/// Thrown when a loss turns non-finite; the trainer saves a checkpoint first.
class TrainingHalted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Alternates the main step (theta, phi on the weighted total) with the adversarial
/// step (critic and eraser on L_a). Batches hold distinct identities.
class Trainer {
 public:
  Trainer(TrainConfig config, FaceSet train, std::optional<FaceSet> validation = std::nullopt);

  /// Runs `config.steps` steps. The optional callback sees every logged step.
  void run(const std::function<void(const StepLog&)>& on_log = {});

  /// One main step followed by one adversarial step; returns the losses.
  StepLog step();

  ValidationLog validate();

  IntegrityModel& model() { return *model_; }
  const TrainConfig& config() const { return config_; }
  int64_t steps_done() const { return step_; }
  const std::vector<StepLog>& history() const { return history_; }
  const std::vector<ValidationLog>& validation_history() const { return validation_log_; }

  /// Effective (alpha, lambda_f, lambda_a) at a given step under the warm-up schedule.
  struct Schedule {
    double alpha;
    double fragile;
    double adversarial;
  };
  Schedule schedule(int64_t step) const;

  void save_checkpoint(const std::filesystem::path& path);
  void write_loss_csv(const std::filesystem::path& path) const;
  void write_validation_csv(const std::filesystem::path& path) const;

  /// Where a checkpoint is written if training halts on a non-finite loss.
  void set_halt_path(std::filesystem::path path) { halt_path_ = std::move(path); }

 private:
  torch::Tensor sample_batch(std::vector<int>* identities);
  double adversarial_step(const torch::Tensor& covers, const torch::Tensor& watermarked,
                          const torch::Tensor& bits, const torch::Tensor& condition);

  TrainConfig config_;
  FaceSet train_;
  std::optional<FaceSet> val_set_;
  std::unique_ptr<IntegrityModel> model_;
  std::unique_ptr<torch::optim::Adam> codec_opt_;
  std::unique_ptr<torch::optim::Adam> adversary_opt_;
  std::optional<Noiser> noiser_;
  std::mt19937_64 rng_;
  std::vector<std::vector<int64_t>> rows_by_identity_;
  int64_t step_ = 0;
  std::vector<StepLog> history_;
  std::vector<ValidationLog> validation_log_;
  std::filesystem::path halt_path_;
};

/// The training set a config refers to: its dataset directory or the toy generator.
struct TrainingData {
  FaceSet train;
  FaceSet val;
  FaceSet test;
};
TrainingData load_training_data(const TrainConfig& config);

/// Directory named by SHIELD_CACHE_DIR, or empty when unset.
std::filesystem::path cache_directory();

/// Loads <cache>/<config digest>.pt if present; otherwise trains, saves the checkpoint
/// and loss log there, and returns the trained model. An empty cache path disables caching.
IntegrityModel train_or_load(const TrainConfig& config, const std::filesystem::path& cache,
                             const std::function<void(const StepLog&)>& on_log = {});

}  // namespace shield
