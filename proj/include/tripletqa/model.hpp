#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tqa {

enum class AdaptationMode { adapters, lora, full };

std::string_view to_string(AdaptationMode m);
AdaptationMode adaptation_mode_from_string(std::string_view s);

// Projections that receive low-rank factors in lora mode.
struct LoraTargets {
  bool q = true;
  bool k = false;
  bool v = true;
  bool o = false;
  std::size_t count() const { return std::size_t{q} + k + v + o; }
};

struct BackboneConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t dim = 64;
  std::size_t vocab = 0;
  std::size_t max_positions = 512;
  std::size_t adapter_tokens = 0;  // 0 disables the prefix adapters
  std::size_t lora_rank = 0;       // 0 means no low-rank factors exist
  double lora_alpha = 16.0;
  LoraTargets lora_targets;

  std::size_t head_dim() const { return dim / heads; }
  std::size_t hidden() const { return 4 * dim; }
  void validate() const;
};

// Closed-form trainable-parameter count:
//   adapters: 2 * L * N_p * d
//   lora:     L * (#targets) * 2 * r * d
//   full:     every parameter of the network
std::size_t count_trainable(const BackboneConfig& config, AdaptationMode mode);
std::size_t count_parameters(const BackboneConfig& config);

enum class ParamGroup { backbone, adapter, lora };

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  ParamGroup group = ParamGroup::backbone;
  std::size_t size() const { return rows * cols; }
};

// Named views into one flat parameter vector.
class ParameterLayout {
 public:
  explicit ParameterLayout(const BackboneConfig& config);
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& find(std::string_view name) const;
  std::size_t total() const { return total_; }
  bool trainable(const TensorInfo& t, AdaptationMode mode) const;
  std::vector<std::uint8_t> trainable_mask(AdaptationMode mode) const;  // per scalar

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, ParamGroup group);
  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

// rows[t] holds the weights of query position t over the N_p adapter slots
// followed by positions 0..t, so rows[t].size() == N_p + t + 1.
using AttentionMap = std::vector<std::vector<double>>;

struct ForwardOutput {
  Matrix logits;                                   // T x V; row t predicts token t+1
  std::vector<std::vector<AttentionMap>> attention;  // [layer][head], only when captured
};

// Inference contract shared by the toy transformer and plugged-in backbones.
class CausalLm {
 public:
  virtual ~CausalLm() = default;
  virtual ForwardOutput forward(std::span<const int> tokens, bool capture_attention = false) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_positions() const = 0;
};

// Greedy decoding; stops at `eos` (not included) or after `max_new` tokens.
// Throws DataError when the prompt does not fit the position budget.
std::vector<int> generate(const CausalLm& lm, std::span<const int> prompt, std::size_t max_new, int eos);

namespace detail {

// Per-layer tensor slots; see the slot enum in model.cpp.
struct LayerOffsets {
  static constexpr std::size_t kSlots = 26;
  std::size_t offset[kSlots] = {};
  std::size_t index[kSlots] = {};
  bool present[kSlots] = {};
};

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

struct LayerActivations {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix h1;                  // ln1 output
  Matrix lora_h[4];           // h1 * A for each targeted projection
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head: T x (N_p + T), causal entries zero
  Matrix att;                 // concatenated head outputs, before Wo
  Matrix lora_att;            // att * A_o
  Matrix x_mid;
  LayerNormCache ln2;
  Matrix h2;
  Matrix pre_gelu;
  Matrix post_gelu;
};

}  // namespace detail

class Transformer final : public CausalLm {
 public:
  struct Activations {
    std::vector<int> tokens;
    std::vector<detail::LayerActivations> layers;
    Matrix x_final;
    detail::LayerNormCache lnf;
    Matrix xf;
  };

  Transformer(const BackboneConfig& config, std::uint64_t seed);
  Transformer(const BackboneConfig& config, std::vector<double> parameters);

  ForwardOutput forward(std::span<const int> tokens, bool capture_attention = false) const override;
  std::size_t vocab_size() const override { return config_.vocab; }
  std::size_t max_positions() const override { return config_.max_positions; }

  // Forward pass that records what backward needs.
  ForwardOutput forward_train(std::span<const int> tokens, Activations& acts) const;
  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits). Weight
  // gradients of tensors with want[i] == 0 are skipped (`want` indexes tensors()).
  void backward(const Activations& acts, const Matrix& dlogits, std::span<double> grad,
                const std::vector<std::uint8_t>& want) const;

  const BackboneConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

 private:
  ForwardOutput run(std::span<const int> tokens, bool capture, Activations* acts) const;
  void check_tokens(std::span<const int> tokens) const;
  void index_layout();

  BackboneConfig config_;
  ParameterLayout layout_;
  std::vector<double> params_;
  std::vector<detail::LayerOffsets> offsets_;
  std::size_t wte_ = 0, wpe_ = 0, lnf_g_ = 0, lnf_b_ = 0, lm_head_ = 0;
  std::size_t wte_t_ = 0, wpe_t_ = 0, lnf_g_t_ = 0, lnf_b_t_ = 0, lm_head_t_ = 0;  // tensor indices
};

}  // namespace tqa
