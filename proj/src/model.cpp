#include "tripletqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tripletqa/errors.hpp"

namespace tqa {

namespace {

enum : std::size_t {
  kLn1G, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kLn2G, kLn2B, kW1, kB1, kW2, kB2, kPrefixK, kPrefixV,
  kLoraQA, kLoraQB, kLoraKA, kLoraKB, kLoraVA, kLoraVB, kLoraOA, kLoraOB,
};

constexpr double kLnEps = 1e-5;
constexpr const char* kProjNames[4] = {"q", "k", "v", "o"};

bool lora_on(const BackboneConfig& c, std::size_t proj) {
  if (c.lora_rank == 0) return false;
  switch (proj) {
    case 0: return c.lora_targets.q;
    case 1: return c.lora_targets.k;
    case 2: return c.lora_targets.v;
    default: return c.lora_targets.o;
  }
}

// y = x * W (overwrite), x: T x in, W: in x out.
void matmul(const double* x, std::size_t T, std::size_t in, const double* W, std::size_t out, double* y) {
  std::fill(y, y + T * out, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double* yr = y + t * out;
    const double* xr = x + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wr = W + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wr[j];
    }
  }
}

void add_bias(double* y, std::size_t T, std::size_t out, const double* b) {
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < out; ++j) y[t * out + j] += b[j];
}

// dx += dy * W^T
void matmul_dx(const double* dy, std::size_t T, std::size_t out, const double* W, std::size_t in, double* dx) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* dyr = dy + t * out;
    double* dxr = dx + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double* wr = W + i * out;
      double s = 0.0;
      for (std::size_t j = 0; j < out; ++j) s += dyr[j] * wr[j];
      dxr[i] += s;
    }
  }
}

// dW += x^T * dy
void matmul_dw(const double* x, std::size_t T, std::size_t in, const double* dy, std::size_t out, double* dW) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* xr = x + t * in;
    const double* dyr = dy + t * out;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      double* dwr = dW + i * out;
      for (std::size_t j = 0; j < out; ++j) dwr[j] += xi * dyr[j];
    }
  }
}

void colsum(const double* dy, std::size_t T, std::size_t out, double* db) {
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < out; ++j) db[j] += dy[t * out + j];
}

void layernorm(const Matrix& x, const double* g, const double* b, Matrix& y, detail::LayerNormCache* cache) {
  const std::size_t T = x.rows, d = x.cols;
  y = Matrix(T, d);
  if (cache) {
    cache->xhat = Matrix(T, d);
    cache->rstd.assign(T, 0.0);
  }
  for (std::size_t t = 0; t < T; ++t) {
    auto xr = x.row(t);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t i = 0; i < d; ++i) {
      const double xh = (xr[i] - mean) * rstd;
      y(t, i) = g[i] * xh + b[i];
      if (cache) cache->xhat(t, i) = xh;
    }
    if (cache) cache->rstd[t] = rstd;
  }
}

// Adds the input gradient to dx; accumulates dg/db when non-null.
void layernorm_backward(const detail::LayerNormCache& c, const double* g, const Matrix& dy, Matrix& dx,
                        double* dg, double* db) {
  const std::size_t T = dy.rows, d = dy.cols;
  std::vector<double> dxhat(d);
  for (std::size_t t = 0; t < T; ++t) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double dyv = dy(t, i);
      const double xh = c.xhat(t, i);
      if (dg) dg[i] += dyv * xh;
      if (db) db[i] += dyv;
      dxhat[i] = dyv * g[i];
      m1 += dxhat[i];
      m2 += dxhat[i] * xh;
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) dx(t, i) += c.rstd[t] * (dxhat[i] - m1 - c.xhat(t, i) * m2);
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

}  // namespace

std::string_view to_string(AdaptationMode m) {
  switch (m) {
    case AdaptationMode::adapters: return "adapters";
    case AdaptationMode::lora: return "lora";
    case AdaptationMode::full: return "full";
  }
  return "adapters";
}

AdaptationMode adaptation_mode_from_string(std::string_view s) {
  if (s == "adapters") return AdaptationMode::adapters;
  if (s == "lora") return AdaptationMode::lora;
  if (s == "full") return AdaptationMode::full;
  throw ConfigError("unknown adaptation mode '" + std::string(s) + "'");
}

void BackboneConfig::validate() const {
  if (layers == 0 || heads == 0 || dim == 0) throw ConfigError("layers, heads and dim must be positive");
  if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
  if (vocab == 0) throw ConfigError("vocab size must be positive");
  if (max_positions == 0) throw ConfigError("max_positions must be positive");
  if (lora_rank > 0 && lora_targets.count() == 0) throw ConfigError("lora_rank > 0 needs at least one target");
}

std::size_t count_trainable(const BackboneConfig& c, AdaptationMode mode) {
  switch (mode) {
    case AdaptationMode::adapters: return 2 * c.layers * c.adapter_tokens * c.dim;
    case AdaptationMode::lora: return c.layers * c.lora_targets.count() * 2 * c.lora_rank * c.dim;
    case AdaptationMode::full: return count_parameters(c);
  }
  return 0;
}

std::size_t count_parameters(const BackboneConfig& c) {
  const std::size_t d = c.dim, V = c.vocab, P = c.max_positions, hdn = c.hidden();
  std::size_t per_layer = 2 * d                // ln1
                          + 4 * (d * d + d)    // q k v o
                          + 2 * d              // ln2
                          + d * hdn + hdn      // mlp in
                          + hdn * d + d;       // mlp out
  std::size_t n = V * d + P * d + c.layers * per_layer + 2 * d + d * V;
  n += 2 * c.layers * c.adapter_tokens * d;
  if (c.lora_rank > 0) n += c.layers * c.lora_targets.count() * 2 * c.lora_rank * d;
  return n;
}

ParameterLayout::ParameterLayout(const BackboneConfig& c) {
  const std::size_t d = c.dim, hdn = c.hidden();
  add("wte", c.vocab, d, ParamGroup::backbone);
  add("wpe", c.max_positions, d, ParamGroup::backbone);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    add(p + "ln1.gain", 1, d, ParamGroup::backbone);
    add(p + "ln1.bias", 1, d, ParamGroup::backbone);
    for (const char* proj : kProjNames) {
      add(p + "attn.w" + proj, d, d, ParamGroup::backbone);
      add(p + "attn.b" + proj, 1, d, ParamGroup::backbone);
    }
    add(p + "ln2.gain", 1, d, ParamGroup::backbone);
    add(p + "ln2.bias", 1, d, ParamGroup::backbone);
    add(p + "mlp.w1", d, hdn, ParamGroup::backbone);
    add(p + "mlp.b1", 1, hdn, ParamGroup::backbone);
    add(p + "mlp.w2", hdn, d, ParamGroup::backbone);
    add(p + "mlp.b2", 1, d, ParamGroup::backbone);
    if (c.adapter_tokens > 0) {
      add("adapter." + std::to_string(l) + ".key", c.adapter_tokens, d, ParamGroup::adapter);
      add("adapter." + std::to_string(l) + ".value", c.adapter_tokens, d, ParamGroup::adapter);
    }
    for (std::size_t proj = 0; proj < 4; ++proj) {
      if (!lora_on(c, proj)) continue;
      const std::string q = "lora." + std::to_string(l) + "." + kProjNames[proj];
      add(q + ".a", d, c.lora_rank, ParamGroup::lora);
      add(q + ".b", c.lora_rank, d, ParamGroup::lora);
    }
  }
  add("lnf.gain", 1, d, ParamGroup::backbone);
  add("lnf.bias", 1, d, ParamGroup::backbone);
  add("lm_head", d, c.vocab, ParamGroup::backbone);
}

std::size_t ParameterLayout::add(std::string name, std::size_t rows, std::size_t cols, ParamGroup group) {
  tensors_.push_back(TensorInfo{std::move(name), total_, rows, cols, group});
  total_ += rows * cols;
  return tensors_.size() - 1;
}

const TensorInfo& ParameterLayout::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw DataError("no parameter tensor named '" + std::string(name) + "'");
}

bool ParameterLayout::trainable(const TensorInfo& t, AdaptationMode mode) const {
  switch (mode) {
    case AdaptationMode::adapters: return t.group == ParamGroup::adapter;
    case AdaptationMode::lora: return t.group == ParamGroup::lora;
    case AdaptationMode::full: return true;
  }
  return false;
}

std::vector<std::uint8_t> ParameterLayout::trainable_mask(AdaptationMode mode) const {
  std::vector<std::uint8_t> mask(total_, 0);
  for (const auto& t : tensors_) {
    if (trainable(t, mode)) std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 1);
  }
  return mask;
}

Transformer::Transformer(const BackboneConfig& config, std::uint64_t seed) : config_(config), layout_(config) {
  config_.validate();
  params_.assign(layout_.total(), 0.0);
  // Separate streams per group so adding adapters or LoRA factors leaves the
  // backbone initialization untouched.
  std::mt19937_64 backbone_rng(seed), adapter_rng(seed ^ 0x9e3779b97f4a7c15ULL), lora_rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(config_.layers));
  for (const auto& t : layout_.tensors()) {
    double* p = params_.data() + t.offset;
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.rows == 1 && !is_gain;
    if (is_gain) {
      std::fill_n(p, t.size(), 1.0);
    } else if (is_bias) {
      continue;
    } else if (t.group == ParamGroup::lora) {
      if (t.name.ends_with(".b")) continue;  // B = 0 keeps the initial model unchanged
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(config_.dim)));
      for (std::size_t i = 0; i < t.size(); ++i) p[i] = dist(lora_rng);
    } else if (t.group == ParamGroup::adapter) {
      std::normal_distribution<double> dist(0.0, 0.02);
      for (std::size_t i = 0; i < t.size(); ++i) p[i] = dist(adapter_rng);
    } else {
      const bool resid = t.name.ends_with("attn.wo") || t.name.ends_with("mlp.w2");
      std::normal_distribution<double> dist(0.0, resid ? resid_std : 0.02);
      for (std::size_t i = 0; i < t.size(); ++i) p[i] = dist(backbone_rng);
    }
  }
  index_layout();
}

Transformer::Transformer(const BackboneConfig& config, std::vector<double> parameters)
    : config_(config), layout_(config), params_(std::move(parameters)) {
  config_.validate();
  if (params_.size() != layout_.total()) {
    throw DataError("parameter vector has " + std::to_string(params_.size()) + " entries, layout needs " +
                    std::to_string(layout_.total()));
  }
  index_layout();
}

void Transformer::index_layout() {
  const auto& ts = layout_.tensors();
  auto idx = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < ts.size(); ++i)
      if (ts[i].name == name) return i;
    throw Error(ErrorCategory::internal, "layout lacks " + name);
  };
  auto bind = [&](std::size_t& off, std::size_t& index, const std::string& name) {
    index = idx(name);
    off = ts[index].offset;
  };
  bind(wte_, wte_t_, "wte");
  bind(wpe_, wpe_t_, "wpe");
  bind(lnf_g_, lnf_g_t_, "lnf.gain");
  bind(lnf_b_, lnf_b_t_, "lnf.bias");
  bind(lm_head_, lm_head_t_, "lm_head");
  offsets_.assign(config_.layers, {});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto& o = offsets_[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    auto slot = [&](std::size_t s, const std::string& name) {
      bind(o.offset[s], o.index[s], name);
      o.present[s] = true;
    };
    slot(kLn1G, p + "ln1.gain");
    slot(kLn1B, p + "ln1.bias");
    for (std::size_t proj = 0; proj < 4; ++proj) {
      slot(kWq + 2 * proj, p + "attn.w" + kProjNames[proj]);
      slot(kBq + 2 * proj, p + "attn.b" + kProjNames[proj]);
      if (lora_on(config_, proj)) {
        const std::string q = "lora." + std::to_string(l) + "." + kProjNames[proj];
        slot(kLoraQA + 2 * proj, q + ".a");
        slot(kLoraQB + 2 * proj, q + ".b");
      }
    }
    slot(kLn2G, p + "ln2.gain");
    slot(kLn2B, p + "ln2.bias");
    slot(kW1, p + "mlp.w1");
    slot(kB1, p + "mlp.b1");
    slot(kW2, p + "mlp.w2");
    slot(kB2, p + "mlp.b2");
    if (config_.adapter_tokens > 0) {
      slot(kPrefixK, "adapter." + std::to_string(l) + ".key");
      slot(kPrefixV, "adapter." + std::to_string(l) + ".value");
    }
  }
}

void Transformer::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw DataError("forward: empty token sequence");
  if (tokens.size() > config_.max_positions) {
    throw DataError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max positions " +
                    std::to_string(config_.max_positions));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab) {
      throw DataError("forward: token id " + std::to_string(t) + " outside vocabulary of size " +
                      std::to_string(config_.vocab));
    }
  }
}

ForwardOutput Transformer::forward(std::span<const int> tokens, bool capture_attention) const {
  return run(tokens, capture_attention, nullptr);
}

ForwardOutput Transformer::forward_train(std::span<const int> tokens, Activations& acts) const {
  return run(tokens, false, &acts);
}

ForwardOutput Transformer::run(std::span<const int> tokens, bool capture, Activations* acts) const {
  check_tokens(tokens);
  const std::size_t T = tokens.size(), d = config_.dim, H = config_.heads, hd = config_.head_dim();
  const std::size_t Np = config_.adapter_tokens, hdn = config_.hidden(), V = config_.vocab;
  const std::size_t r = config_.lora_rank;
  const double lora_scale = r > 0 ? config_.lora_alpha / static_cast<double>(r) : 0.0;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* P = params_.data();

  ForwardOutput out;
  if (acts) {
    acts->tokens.assign(tokens.begin(), tokens.end());
    acts->layers.assign(config_.layers, {});
  }
  if (capture) out.attention.assign(config_.layers, std::vector<AttentionMap>(H));

  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* e = P + wte_ + static_cast<std::size_t>(tokens[t]) * d;
    const double* pe = P + wpe_ + t * d;
    for (std::size_t i = 0; i < d; ++i) x(t, i) = e[i] + pe[i];
  }

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const auto& o = offsets_[l];
    detail::LayerActivations local;
    auto& a = acts ? acts->layers[l] : local;
    a.x_in = x;

    layernorm(x, P + o.offset[kLn1G], P + o.offset[kLn1B], a.h1, &a.ln1);

    Matrix* proj_out[3] = {&a.q, &a.k, &a.v};
    for (std::size_t p = 0; p < 3; ++p) {
      Matrix& y = *proj_out[p];
      y = Matrix(T, d);
      matmul(a.h1.data.data(), T, d, P + o.offset[kWq + 2 * p], d, y.data.data());
      add_bias(y.data.data(), T, d, P + o.offset[kBq + 2 * p]);
      if (o.present[kLoraQA + 2 * p]) {
        a.lora_h[p] = Matrix(T, r);
        matmul(a.h1.data.data(), T, d, P + o.offset[kLoraQA + 2 * p], r, a.lora_h[p].data.data());
        Matrix delta(T, d);
        matmul(a.lora_h[p].data.data(), T, r, P + o.offset[kLoraQB + 2 * p], d, delta.data.data());
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += lora_scale * delta.data[i];
      }
    }

    // Keys/values: N_p adapter slots first, then positions.
    const double* pk = Np ? P + o.offset[kPrefixK] : nullptr;
    const double* pv = Np ? P + o.offset[kPrefixV] : nullptr;
    a.att = Matrix(T, d);
    a.probs.assign(H, Matrix(T, Np + T));
    std::vector<double> scores(Np + T);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t c0 = h * hd;
      Matrix& pr = a.probs[h];
      for (std::size_t t = 0; t < T; ++t) {
        const double* q = &a.q(t, c0);
        const std::size_t n = Np + t + 1;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const double* k = j < Np ? pk + j * d + c0 : &a.k(j - Np, c0);
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += q[i] * k[i];
          s *= inv_sqrt_hd;
          scores[j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        double* dst = &a.att(t, c0);
        for (std::size_t j = 0; j < n; ++j) {
          const double w = scores[j] / z;
          pr(t, j) = w;
          const double* v = j < Np ? pv + j * d + c0 : &a.v(j - Np, c0);
          for (std::size_t i = 0; i < hd; ++i) dst[i] += w * v[i];
        }
        if (capture) out.attention[l][h].emplace_back(pr.row(t).begin(), pr.row(t).begin() + static_cast<std::ptrdiff_t>(n));
      }
    }

    Matrix proj(T, d);
    matmul(a.att.data.data(), T, d, P + o.offset[kWo], d, proj.data.data());
    add_bias(proj.data.data(), T, d, P + o.offset[kBo]);
    if (o.present[kLoraOA]) {
      a.lora_att = Matrix(T, r);
      matmul(a.att.data.data(), T, d, P + o.offset[kLoraOA], r, a.lora_att.data.data());
      Matrix delta(T, d);
      matmul(a.lora_att.data.data(), T, r, P + o.offset[kLoraOB], d, delta.data.data());
      for (std::size_t i = 0; i < proj.data.size(); ++i) proj.data[i] += lora_scale * delta.data[i];
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += proj.data[i];
    a.x_mid = x;

    layernorm(x, P + o.offset[kLn2G], P + o.offset[kLn2B], a.h2, &a.ln2);
    a.pre_gelu = Matrix(T, hdn);
    matmul(a.h2.data.data(), T, d, P + o.offset[kW1], hdn, a.pre_gelu.data.data());
    add_bias(a.pre_gelu.data.data(), T, hdn, P + o.offset[kB1]);
    a.post_gelu = Matrix(T, hdn);
    for (std::size_t i = 0; i < a.pre_gelu.data.size(); ++i) a.post_gelu.data[i] = gelu(a.pre_gelu.data[i]);
    Matrix m(T, d);
    matmul(a.post_gelu.data.data(), T, hdn, P + o.offset[kW2], d, m.data.data());
    add_bias(m.data.data(), T, d, P + o.offset[kB2]);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += m.data[i];
  }

  detail::LayerNormCache lnf_local;
  Matrix xf;
  layernorm(x, P + lnf_g_, P + lnf_b_, xf, acts ? &acts->lnf : &lnf_local);
  out.logits = Matrix(T, V);
  matmul(xf.data.data(), T, d, P + lm_head_, V, out.logits.data.data());
  if (acts) {
    acts->x_final = std::move(x);
    acts->xf = std::move(xf);
  }
  return out;
}

void Transformer::backward(const Activations& acts, const Matrix& dlogits, std::span<double> grad,
                           const std::vector<std::uint8_t>& want) const {
  const std::size_t T = acts.tokens.size(), d = config_.dim, H = config_.heads, hd = config_.head_dim();
  const std::size_t Np = config_.adapter_tokens, hdn = config_.hidden(), V = config_.vocab;
  const std::size_t r = config_.lora_rank;
  const double lora_scale = r > 0 ? config_.lora_alpha / static_cast<double>(r) : 0.0;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* P = params_.data();
  double* G = grad.data();
  if (grad.size() != params_.size()) throw Error(ErrorCategory::internal, "gradient buffer size mismatch");
  if (dlogits.rows != T || dlogits.cols != V) throw Error(ErrorCategory::internal, "dlogits shape mismatch");
  auto wanted = [&](std::size_t tensor) { return want.empty() || want[tensor] != 0; };

  Matrix dxf(T, d);
  matmul_dx(dlogits.data.data(), T, V, P + lm_head_, d, dxf.data.data());
  if (wanted(lm_head_t_)) matmul_dw(acts.xf.data.data(), T, d, dlogits.data.data(), V, G + lm_head_);
  Matrix dx(T, d);
  layernorm_backward(acts.lnf, P + lnf_g_, dxf, dx, wanted(lnf_g_t_) ? G + lnf_g_ : nullptr,
                     wanted(lnf_b_t_) ? G + lnf_b_ : nullptr);

  for (std::size_t li = config_.layers; li-- > 0;) {
    const auto& o = offsets_[li];
    const auto& a = acts.layers[li];
    auto gw = [&](std::size_t slot) -> double* { return wanted(o.index[slot]) ? G + o.offset[slot] : nullptr; };

    // MLP
    if (double* g = gw(kW2)) matmul_dw(a.post_gelu.data.data(), T, hdn, dx.data.data(), d, g);
    if (double* g = gw(kB2)) colsum(dx.data.data(), T, d, g);
    Matrix dpre(T, hdn);
    matmul_dx(dx.data.data(), T, d, P + o.offset[kW2], hdn, dpre.data.data());
    for (std::size_t i = 0; i < dpre.data.size(); ++i) dpre.data[i] *= gelu_grad(a.pre_gelu.data[i]);
    if (double* g = gw(kW1)) matmul_dw(a.h2.data.data(), T, d, dpre.data.data(), hdn, g);
    if (double* g = gw(kB1)) colsum(dpre.data.data(), T, hdn, g);
    Matrix dh2(T, d);
    matmul_dx(dpre.data.data(), T, hdn, P + o.offset[kW1], d, dh2.data.data());
    layernorm_backward(a.ln2, P + o.offset[kLn2G], dh2, dx, gw(kLn2G), gw(kLn2B));

    // Output projection; dx now holds d(loss)/d(x_mid).
    if (double* g = gw(kWo)) matmul_dw(a.att.data.data(), T, d, dx.data.data(), d, g);
    if (double* g = gw(kBo)) colsum(dx.data.data(), T, d, g);
    Matrix datt(T, d);
    matmul_dx(dx.data.data(), T, d, P + o.offset[kWo], d, datt.data.data());
    if (o.present[kLoraOA]) {
      Matrix dy = dx;
      for (double& v : dy.data) v *= lora_scale;
      if (double* g = gw(kLoraOB)) matmul_dw(a.lora_att.data.data(), T, r, dy.data.data(), d, g);
      Matrix dla(T, r);
      matmul_dx(dy.data.data(), T, d, P + o.offset[kLoraOB], r, dla.data.data());
      if (double* g = gw(kLoraOA)) matmul_dw(a.att.data.data(), T, d, dla.data.data(), r, g);
      matmul_dx(dla.data.data(), T, r, P + o.offset[kLoraOA], d, datt.data.data());
    }

    // Attention
    Matrix dq(T, d), dk(T, d), dv(T, d);
    double* gpk = Np ? gw(kPrefixK) : nullptr;
    double* gpv = Np ? gw(kPrefixV) : nullptr;
    const double* pk = Np ? P + o.offset[kPrefixK] : nullptr;
    const double* pv = Np ? P + o.offset[kPrefixV] : nullptr;
    std::vector<double> dp(Np + T);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t c0 = h * hd;
      const Matrix& pr = a.probs[h];
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t n = Np + t + 1;
        const double* dout = &datt(t, c0);
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double* v = j < Np ? pv + j * d + c0 : &a.v(j - Np, c0);
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += dout[i] * v[i];
          dp[j] = s;
          dot += pr(t, j) * s;
          const double w = pr(t, j);
          double* dvj = j < Np ? (gpv ? gpv + j * d + c0 : nullptr) : &dv(j - Np, c0);
          if (dvj)
            for (std::size_t i = 0; i < hd; ++i) dvj[i] += w * dout[i];
        }
        const double* q = &a.q(t, c0);
        double* dqt = &dq(t, c0);
        for (std::size_t j = 0; j < n; ++j) {
          const double ds = pr(t, j) * (dp[j] - dot) * inv_sqrt_hd;
          const double* k = j < Np ? pk + j * d + c0 : &a.k(j - Np, c0);
          for (std::size_t i = 0; i < hd; ++i) dqt[i] += ds * k[i];
          double* dkj = j < Np ? (gpk ? gpk + j * d + c0 : nullptr) : &dk(j - Np, c0);
          if (dkj)
            for (std::size_t i = 0; i < hd; ++i) dkj[i] += ds * q[i];
        }
      }
    }

    // q, k, v projections
    Matrix dh1(T, d);
    const Matrix* dproj[3] = {&dq, &dk, &dv};
    for (std::size_t p = 0; p < 3; ++p) {
      const Matrix& dy = *dproj[p];
      if (double* g = gw(kWq + 2 * p)) matmul_dw(a.h1.data.data(), T, d, dy.data.data(), d, g);
      if (double* g = gw(kBq + 2 * p)) colsum(dy.data.data(), T, d, g);
      matmul_dx(dy.data.data(), T, d, P + o.offset[kWq + 2 * p], d, dh1.data.data());
      if (o.present[kLoraQA + 2 * p]) {
        Matrix dys = dy;
        for (double& v : dys.data) v *= lora_scale;
        if (double* g = gw(kLoraQB + 2 * p)) matmul_dw(a.lora_h[p].data.data(), T, r, dys.data.data(), d, g);
        Matrix dlh(T, r);
        matmul_dx(dys.data.data(), T, d, P + o.offset[kLoraQB + 2 * p], r, dlh.data.data());
        if (double* g = gw(kLoraQA + 2 * p)) matmul_dw(a.h1.data.data(), T, d, dlh.data.data(), r, g);
        matmul_dx(dlh.data.data(), T, r, P + o.offset[kLoraQA + 2 * p], d, dh1.data.data());
      }
    }
    layernorm_backward(a.ln1, P + o.offset[kLn1G], dh1, dx, gw(kLn1G), gw(kLn1B));
  }

  const bool g_wte = wanted(wte_t_), g_wpe = wanted(wpe_t_);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      if (g_wte) G[wte_ + static_cast<std::size_t>(acts.tokens[t]) * d + i] += dx(t, i);
      if (g_wpe) G[wpe_ + t * d + i] += dx(t, i);
    }
  }
}

std::vector<int> generate(const CausalLm& lm, std::span<const int> prompt, std::size_t max_new, int eos) {
  if (prompt.empty()) throw DataError("generate: empty prompt");
  if (prompt.size() > lm.max_positions()) {
    throw DataError("generate: prompt length " + std::to_string(prompt.size()) + " exceeds max positions " +
                    std::to_string(lm.max_positions()));
  }
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> produced;
  while (produced.size() < max_new && seq.size() < lm.max_positions()) {
    auto out = lm.forward(seq, false);
    auto last = out.logits.row(out.logits.rows - 1);
    auto best = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (best == eos) break;
    produced.push_back(best);
    seq.push_back(best);
  }
  return produced;
}

}  // namespace tqa
