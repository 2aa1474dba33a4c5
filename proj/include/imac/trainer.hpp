#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imac/classifier.hpp"
#include "imac/decomposition.hpp"
#include "imac/imputer.hpp"
#include "imac/shiftlab.hpp"

namespace imac {

// full: every module. imp: decomposition only, H reconstructs directly.
// dec: encoder features feed the classifier, no reconstruction loss.
// uni: native channels zero-filled instead of interpolated.
// baseline: EEGNet-lite on zero-filled raw channels.
enum class Variant { kFull, kImp, kDec, kUni, kBaseline };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& text);  // ConfigError when unknown

struct TrainConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double mask_ratio = 0.5;
  double lambda_cons = 1.0;
  std::uint64_t seed = 1;
  Variant variant = Variant::kFull;
  double w_dec = 1.0;
  double w_imp = 1.0;
  double w_cls = 1.0;
  // Per-tensor gradient norm cap; 0 disables clipping.
  double clip_norm = 5.0;
  // Cosine decay of the learning rate to zero over the epoch budget.
  bool cosine = true;

  void validate() const;  // ConfigError
};

struct ModelConfig {
  Variant variant = Variant::kFull;
  std::size_t channels = kUnifiedChannels;
  std::size_t samples = 128;
  std::size_t num_classes = 4;
  std::size_t patch_len = 32;
  std::size_t pos_dim = 8;
  std::size_t d = 16;
  std::size_t heads = 2;
  std::size_t ffn_hidden = 32;
  std::size_t imputer_blocks = 2;
  // Kernel and pooling sizes; geometry fields are filled by classifier().
  ClassifierConfig head;

  std::size_t patches() const { return samples / patch_len; }
  EncoderConfig encoder() const;
  ImputerConfig imputer() const;
  ClassifierConfig classifier() const;
  void validate() const;  // ConfigError

  static ModelConfig for_dataset(const Dataset& ds, Variant variant);
};

std::string to_json(const TrainConfig& c);
std::string to_json(const ModelConfig& c);
TrainConfig train_config_from_json(const std::string& text);
ModelConfig model_config_from_json(const std::string& text);

struct Model {
  ModelConfig config;
  ParamStore params;
};

// Parameter groups draw from independent seeded streams, so models of
// different variants share the weights they have in common.
Model init_model(const ModelConfig& config, std::uint64_t seed);

// A recording mapped onto the model's channel layout.
struct Sample {
  Tensor signal;              // T x n
  std::vector<bool> missing;  // channels absent or identically zero
  std::vector<Tensor> tokens;   // per patch, n x (L + pos_dim)
  std::vector<Tensor> targets;  // per patch, 1 x (L n) time-major signal
  int label = 0;
};

// Channels the recording lacks or that are identically zero are flagged
// missing. uni and baseline zero-fill them; the other variants interpolate
// from the remaining electrodes.
Sample prepare_sample(const EEGRecording& recording, const ModelConfig& config);
std::vector<Sample> prepare_samples(const Dataset& ds, const ModelConfig& config);
// For signals already in the model layout (tiny models, tests).
Sample make_sample(Tensor signal, std::vector<bool> missing, int label, const ModelConfig& config);

struct LossBreakdown {
  double dec = 0.0;
  double fid = 0.0;
  double cons = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

struct JointTerms {
  Var total;
  Var dec;
  Var fid;
  Var cons;
  Var cls;
  ClassifierOutput head;
};

// Masks of one forward pass. Training draws two views, inference masks the
// missing channels only; the imp and baseline variants take none.
struct MaskPlan {
  std::optional<MaskSpec> a;
  std::optional<MaskSpec> b;
};

MaskPlan training_masks(const ModelConfig& mc, const TrainConfig& tc, const Sample& s, std::uint64_t step,
                        std::size_t sample_id);
MaskPlan inference_masks(const ModelConfig& mc, const Sample& s);

// L = w_dec L_dec + w_imp (L_fid + lambda L_cons) + w_cls L_ce for one sample.
JointTerms joint_forward(const VarMap& vars, const ModelConfig& mc, const TrainConfig& tc, const Sample& s,
                         const MaskPlan& masks);

struct TrainerState {
  Model model;
  TrainConfig config;
  std::map<std::string, Tensor> velocity;
  std::uint64_t step = 0;
};

TrainerState make_trainer(const ModelConfig& mc, const TrainConfig& tc);

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size);
// Sample indices of a step: a per-epoch seeded permutation cut into batches.
std::vector<std::size_t> batch_indices(const TrainConfig& tc, std::size_t samples, std::uint64_t step);
// Learning rate of a step for a training set of `samples` recordings.
double learning_rate_at(const TrainConfig& tc, std::size_t samples, std::uint64_t step);

// One SGD-with-momentum update on the mean loss of the batch. Throws
// NumericalError naming the component when a loss is not finite.
LossBreakdown train_step(TrainerState& state, std::span<const Sample> data, std::span<const std::size_t> batch);

// Runs steps until `until_step` (default: the full epoch budget).
using StepCallback = std::function<void(std::uint64_t step, const LossBreakdown&)>;
std::vector<LossBreakdown> train(TrainerState& state, std::span<const Sample> data,
                                 std::optional<std::uint64_t> until_step = std::nullopt,
                                 const StepCallback& on_step = {});

struct Prediction {
  int label = 0;
  std::vector<double> probs;
  std::vector<double> features;  // penultimate classifier activations
};

// Deterministic: missing channels are imputed, nothing else is masked.
Prediction predict(const Model& model, const Sample& sample);
std::vector<Prediction> predict(const Model& model, std::span<const Sample> samples);

// Binary checkpoint: "IMACCKPT", u32 version, u64 header length, JSON header
// (configs, step, tensor directory with name/shape/offset), little-endian
// float64 payload.
void write_checkpoint(std::ostream& out, const TrainerState& state);
TrainerState read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const TrainerState& state);
TrainerState load_checkpoint(const std::string& path);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst;
};

// Finite-difference check of the joint loss over every trainable parameter
// of a tiny model (n = 4 channels, d = 4, one sample). The imputer's detached
// copies of H stay at their unperturbed values, as they do in training.
GradCheckReport joint_gradcheck(Variant variant, std::uint64_t seed);

}  // namespace imac
