#include "shield/model.hpp"

#include "shield/tensor_ops.hpp"

#include <stdexcept>

namespace shield {

IntegrityModel::IntegrityModel(const ModelConfig& config)
    : config_(config), bank_(config.image_size, config.backends) {
  ConditionGeneratorOptions cg;
  cg.message_bits = config.message_bits;
  cg.hidden_channels = config.hidden_channels;
  condition_ = ConditionGenerator(cg);

  MessageEncoderOptions enc;
  enc.message_bits = config.message_bits;
  enc.hidden_channels = config.hidden_channels;
  enc.alpha = config.alpha;
  encoder_ = MessageEncoder(enc);

  MessageDecoderOptions dec;
  dec.message_bits = config.message_bits;
  dec.hidden_channels = config.hidden_channels;
  decoder_ = MessageDecoder(dec);

  critic_ = Critic(CriticOptions{});
  EraserOptions er;
  er.bound = config.alpha * config.eraser_ratio;
  eraser_ = Eraser(er);
}

std::vector<torch::Tensor> IntegrityModel::codec_parameters() {
  auto out = condition_->parameters();
  for (const auto* m : {static_cast<torch::nn::Module*>(encoder_.get()),
                        static_cast<torch::nn::Module*>(decoder_.get())}) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<torch::Tensor> IntegrityModel::adversary_parameters() {
  auto out = critic_->parameters();
  auto p = eraser_->parameters();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

void IntegrityModel::train(bool on) {
  condition_->train(on);
  encoder_->train(on);
  decoder_->train(on);
  critic_->train(on);
  eraser_->train(on);
}

torch::Tensor IntegrityModel::facial_token(const torch::Tensor& images) const {
  auto batch = as_batch(images);
  return assemble_facial_token(bank_.extract(batch), batch.size(2), batch.size(3))
      .to(batch.scalar_type());
}

torch::Tensor IntegrityModel::condition(const torch::Tensor& images) {
  return condition_->forward(facial_token(images));
}

torch::Tensor IntegrityModel::embed(const torch::Tensor& images, const torch::Tensor& bits) {
  require_image(images, "embed");
  auto x = as_batch(images);
  auto rows = bits.dim() == 1 ? bits.unsqueeze(0) : bits;
  if (rows.size(0) != x.size(0) || rows.size(1) != config_.message_bits) {
    throw std::invalid_argument("embed: expected " + std::to_string(x.size(0)) + "x" +
                                std::to_string(config_.message_bits) + " message bits");
  }
  auto cond = condition(x);
  auto cm = transform_message(duplicate_message(rows.to(x.scalar_type()), x.size(2), x.size(3)), cond);
  return encoder_->forward(x, cm);
}

torch::Tensor IntegrityModel::decode(const torch::Tensor& images, const torch::Tensor& condition) {
  require_image(images, "decode");
  return pool_logits(decoder_->forward(as_batch(images)), condition);
}

torch::Tensor IntegrityModel::extract(const torch::Tensor& images) {
  auto x = as_batch(images);
  return decode(x, condition(x));
}

namespace {

void write_module(torch::serialize::OutputArchive& root, const std::string& key,
                  const torch::nn::Module& module) {
  torch::serialize::OutputArchive sub;
  module.save(sub);
  root.write(key, sub);
}

void read_module(torch::serialize::InputArchive& root, const std::string& key,
                 torch::nn::Module& module) {
  torch::serialize::InputArchive sub;
  if (!root.try_read(key, sub)) throw std::runtime_error("checkpoint is missing '" + key + "'");
  module.load(sub);
}

std::string read_string(torch::serialize::InputArchive& root, const std::string& key) {
  c10::IValue value;
  if (!root.try_read(key, value) || !value.isString()) {
    throw std::runtime_error("checkpoint is missing '" + key + "'");
  }
  return value.toStringRef();
}

}  // namespace

void IntegrityModel::save(const std::filesystem::path& path, const CheckpointMeta& meta) {
  torch::serialize::OutputArchive archive;
  archive.write("format", c10::IValue(std::string(kCheckpointFormat)));
  archive.write("config", c10::IValue(meta.config_text));
  archive.write("config_digest", c10::IValue(meta.config_digest));
  archive.write("step", c10::IValue(meta.step));
  archive.write("identity_encoder", c10::IValue(config_.backends.identity));
  archive.write("appearance_encoder", c10::IValue(config_.backends.appearance));
  archive.write("mouth_encoder", c10::IValue(config_.backends.mouth));
  write_module(archive, "condition_generator", *condition_);
  write_module(archive, "encoder", *encoder_);
  write_module(archive, "decoder", *decoder_);
  write_module(archive, "critic", *critic_);
  write_module(archive, "eraser", *eraser_);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  archive.save_to(path.string());
}

IntegrityModel IntegrityModel::load(const std::filesystem::path& path, CheckpointMeta* meta) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("no checkpoint at " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  if (read_string(archive, "format") != kCheckpointFormat) {
    throw std::runtime_error("unsupported checkpoint format in " + path.string());
  }
  CheckpointMeta m;
  m.config_text = read_string(archive, "config");
  m.config_digest = read_string(archive, "config_digest");
  c10::IValue step;
  if (archive.try_read("step", step)) m.step = step.toInt();
  const auto config = TrainConfig::parse(m.config_text);
  if (config.digest() != m.config_digest) {
    throw std::runtime_error("checkpoint config digest mismatch in " + path.string());
  }
  IntegrityModel model(config.model);
  read_module(archive, "condition_generator", *model.condition_);
  read_module(archive, "encoder", *model.encoder_);
  read_module(archive, "decoder", *model.decoder_);
  read_module(archive, "critic", *model.critic_);
  read_module(archive, "eraser", *model.eraser_);
  model.train(false);
  if (meta) *meta = m;
  return model;
}

}  // namespace shield
