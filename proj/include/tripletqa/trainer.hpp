#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tripletqa/corpus.hpp"
#include "tripletqa/model.hpp"
#include "tripletqa/objectives.hpp"
#include "tripletqa/prompting.hpp"
#include "tripletqa/tokenizer.hpp"

namespace tqa {

struct OptimizerConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Presets that switch off one auxiliary loss.
enum class Ablation { none, no_question_restoration, no_evidence_generation, no_kl };
std::string_view to_string(Ablation a);
Ablation ablation_from_string(std::string_view s);

struct TrainConfig {
  BackboneConfig backbone;  // vocab is taken from the tokenizer at train time
  AdaptationMode mode = AdaptationMode::adapters;
  LossWeights weights;
  KlOptions kl;
  OptimizerConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  std::size_t max_steps = 0;  // > 0 overrides epochs
  std::size_t max_len = 512;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::none;
  TemplateSet templates = TemplateSet::defaults();

  // Applies the ablation preset to the loss flags.
  LossWeights effective_weights() const;
  void validate() const;
  // Canonical JSON; hash() covers everything except the run length
  // (epochs, max_steps) so a resumed run keeps its identity.
  std::string to_json() const;
  static TrainConfig from_json(const std::string& json);
  std::string hash() const;
};

class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t n, OptimizerConfig config);
  // Decoupled weight decay; only positions with mask[i] != 0 change.
  void step(std::vector<double>& params, const std::vector<double>& grads, const std::vector<std::uint8_t>& mask);

  std::vector<double> m, v;
  std::uint64_t t = 0;
  OptimizerConfig config;
};

// Renderings used for one example in a training step.
struct ExampleInstances {
  std::string id;
  std::optional<RenderedInstance> qae;
  RenderedInstance qea;
  std::optional<RenderedInstance> plain;
  std::vector<std::pair<std::size_t, std::size_t>> aligned_rows;
  std::optional<RenderedInstance> eaq;
  std::size_t count() const { return 1 + qae.has_value() + plain.has_value() + eaq.has_value(); }
};

// Renders the enabled tasks. QAE and EAQ are skipped for examples without evidence.
ExampleInstances prepare_instances(const TripletExample& ex, const Tokenizer& tok, const TrainConfig& config);

struct ExampleLoss {
  LossComponents components;
  std::size_t instances = 0;
};

// Scales applied to each component's gradient (1/count in a batch mean).
struct GradientScales {
  double qae = 1.0, seq = 1.0, kl = 1.0, eaq = 1.0;
};

// Losses for one example. When `grad` is non-null, accumulates the gradient of
// sum_c weight_c * scale_c * l_c with the triplet weights. Throws
// TrainingError on a non-finite loss.
ExampleLoss example_loss(const Transformer& model, const ExampleInstances& inst, const TrainConfig& config,
                         const Tokenizer& tok, std::vector<double>* grad = nullptr,
                         const std::vector<std::uint8_t>& want = {}, const GradientScales& scales = {});

struct StepResult {
  LossBreakdown loss;
  std::size_t instances = 0;
  double grad_norm = 0.0;
};

// Running sums for the per-epoch mean record.
struct EpochAccumulator {
  double qae = 0, seq = 0, kl = 0, eaq = 0, total = 0;
  std::size_t steps = 0;
};

struct TrainState {
  TrainConfig config;
  std::vector<std::string> vocab;
  Transformer model;
  AdamW optimizer;
  std::uint64_t step = 0;
  EpochAccumulator epoch_acc;
  std::optional<double> best_dev;
  std::uint64_t best_step = 0;
};

// Fresh state: tokenizer vocabulary, initialized model and optimizer.
TrainState init_state(const TrainConfig& config, const WordTokenizer& tok);

// One optimizer update over the batch on trainable parameters only.
StepResult train_step(TrainState& state, const std::vector<const ExampleInstances*>& batch, const Tokenizer& tok);

// Vocabulary over corpus text plus every template string.
WordTokenizer build_tokenizer(const std::vector<TripletExample>& corpus, const TemplateSet& templates);

struct TrainOutputs {
  std::filesystem::path log_path;            // line-delimited step and epoch records
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

struct TrainSummary {
  std::uint64_t steps = 0;
  std::optional<double> best_dev;
  std::uint64_t best_step = 0;
  double final_epoch_l_seq = 0.0;
};

// Trains from scratch, or from `resume` when given, until the configured run
// length. Appends to the log when resuming.
TrainSummary train(const TrainConfig& config, const std::vector<TripletExample>& corpus,
                   const std::vector<TripletExample>& dev, const TrainOutputs& outputs,
                   const std::optional<std::filesystem::path>& resume = std::nullopt);

void save_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_state(const std::filesystem::path& path);

// Mean QEA sequence loss over `corpus` (no gradient).
double mean_l_seq(const Transformer& model, const Tokenizer& tok, const TrainConfig& config,
                  const std::vector<TripletExample>& corpus);

// Log record for one step (disabled components omitted).
std::string step_record(std::uint64_t step, std::uint64_t epoch, const StepResult& r);

// Total number of optimizer steps for a corpus of `n` examples.
std::uint64_t planned_steps(const TrainConfig& config, std::size_t n);
// Example order for an epoch; depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n);

}  // namespace tqa
