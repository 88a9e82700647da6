#include "tripletqa/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tripletqa/errors.hpp"

namespace tqa {

void LossWeights::validate() const {
  for (double w : {qae, qea, eaq, kl}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

LossBreakdown triplet_total(const LossComponents& c, const LossWeights& w) {
  w.validate();
  LossBreakdown b;
  b.l_seq = c.seq;
  double answering = c.seq;
  double total = 0.0;
  if (w.use_qae) {
    if (!c.qae) throw ConfigError("evidence-generation loss enabled but not computed");
    b.l_qae = *c.qae;
    total += w.qae * *c.qae;
  }
  if (w.use_kl) {
    if (!c.kl) throw ConfigError("bridging loss enabled but not computed");
    b.l_kl = *c.kl;
    answering += w.kl * *c.kl;
  }
  total += w.qea * answering;
  if (w.use_eaq) {
    if (!c.eaq) throw ConfigError("question-restoration loss enabled but not computed");
    b.l_eaq = *c.eaq;
    total += w.eaq * *c.eaq;
  }
  b.l_total = total;
  return b;
}

std::vector<double> log_softmax(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lz;
  return out;
}

double sequence_nll(const Matrix& logits, std::span<const int> tokens, std::span<const std::uint8_t> loss_mask,
                    Matrix* grad) {
  if (tokens.size() != loss_mask.size() || logits.rows != tokens.size()) {
    throw DataError("sequence_nll: logits/tokens/mask lengths differ");
  }
  if (!loss_mask.empty() && loss_mask[0]) throw DataError("sequence_nll: first position cannot carry loss");
  std::size_t count = 0;
  for (auto m : loss_mask) count += m ? 1 : 0;
  if (count == 0) throw DataError("sequence_nll: no loss-bearing positions");
  if (grad) *grad = Matrix(logits.rows, logits.cols);
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (!loss_mask[i]) continue;
    const auto target = static_cast<std::size_t>(tokens[i]);
    if (target >= logits.cols) throw DataError("sequence_nll: target id outside logits");
    auto lp = log_softmax(logits.row(i - 1));
    total -= lp[target];
    if (grad) {
      auto g = grad->row(i - 1);
      for (std::size_t v = 0; v < lp.size(); ++v) g[v] = std::exp(lp[v]) * inv;
      g[target] -= inv;
    }
  }
  return total * inv;
}

std::string_view to_string(KlDirection d) {
  switch (d) {
    case KlDirection::forward: return "forward";
    case KlDirection::reverse: return "reverse";
    case KlDirection::symmetric: return "symmetric";
  }
  return "forward";
}

KlDirection kl_direction_from_string(std::string_view s) {
  if (s == "forward") return KlDirection::forward;
  if (s == "reverse") return KlDirection::reverse;
  if (s == "symmetric") return KlDirection::symmetric;
  throw ConfigError("unknown kl direction '" + std::string(s) + "'");
}

namespace {

// KL(softmax(a) || softmax(b)) for one row pair. Adds scale * gradients into ga / gb.
double kl_row(std::span<const double> a, std::span<const double> b, double scale, std::span<double> ga,
              std::span<double> gb) {
  auto la = log_softmax(a);
  auto lb = log_softmax(b);
  double kl = 0.0;
  for (std::size_t v = 0; v < la.size(); ++v) kl += std::exp(la[v]) * (la[v] - lb[v]);
  // Rounding can leave a -1e-17 residue on coinciding distributions.
  kl = std::max(kl, 0.0);
  if (!ga.empty()) {
    for (std::size_t v = 0; v < la.size(); ++v) {
      const double p = std::exp(la[v]);
      ga[v] += scale * p * (la[v] - lb[v] - kl);
    }
  }
  if (!gb.empty()) {
    for (std::size_t v = 0; v < la.size(); ++v) gb[v] += scale * (std::exp(lb[v]) - std::exp(la[v]));
  }
  return kl;
}

}  // namespace

double kl_bridging(const Matrix& logits_plain, const Matrix& logits_evidence,
                   std::span<const std::pair<std::size_t, std::size_t>> aligned_rows, const KlOptions& options,
                   Matrix* grad_plain, Matrix* grad_evidence) {
  if (aligned_rows.empty()) throw DataError("kl_bridging: no aligned positions");
  if (logits_plain.cols != logits_evidence.cols) throw DataError("kl_bridging: vocabulary sizes differ");
  for (auto [rp, re] : aligned_rows) {
    if (rp >= logits_plain.rows || re >= logits_evidence.rows) throw DataError("kl_bridging: misaligned positions");
  }
  if (grad_plain && (grad_plain->rows != logits_plain.rows || grad_plain->cols != logits_plain.cols)) {
    *grad_plain = Matrix(logits_plain.rows, logits_plain.cols);
  }
  if (grad_evidence && (grad_evidence->rows != logits_evidence.rows || grad_evidence->cols != logits_evidence.cols)) {
    *grad_evidence = Matrix(logits_evidence.rows, logits_evidence.cols);
  }
  if (options.teacher_stopgrad) grad_evidence = nullptr;

  const double inv = 1.0 / static_cast<double>(aligned_rows.size());
  double total = 0.0;
  for (auto [rp, re] : aligned_rows) {
    auto pa = logits_plain.row(rp);
    auto pe = logits_evidence.row(re);
    std::span<double> gp = grad_plain ? grad_plain->row(rp) : std::span<double>{};
    std::span<double> ge = grad_evidence ? grad_evidence->row(re) : std::span<double>{};
    switch (options.direction) {
      case KlDirection::forward: total += kl_row(pa, pe, inv, gp, ge); break;
      case KlDirection::reverse: total += kl_row(pe, pa, inv, ge, gp); break;
      case KlDirection::symmetric:
        total += 0.5 * kl_row(pa, pe, 0.5 * inv, gp, ge);
        total += 0.5 * kl_row(pe, pa, 0.5 * inv, ge, gp);
        break;
    }
  }
  return total * inv;
}

}  // namespace tqa
