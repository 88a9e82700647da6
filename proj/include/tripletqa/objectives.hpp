#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "tripletqa/model.hpp"

namespace tqa {

struct LossWeights {
  double qae = 0.3;  // evidence generation
  double qea = 1.0;  // evidence-enhanced answering
  double eaq = 0.3;  // question restoration
  double kl = 1.0;   // bridging term inside the answering objective
  bool use_qae = true;
  bool use_eaq = true;
  bool use_kl = true;

  void validate() const;
};

// Absent components were disabled by the ablation flags.
struct LossComponents {
  std::optional<double> qae;
  double seq = 0.0;
  std::optional<double> kl;
  std::optional<double> eaq;
};

struct LossBreakdown {
  std::optional<double> l_qae;
  double l_seq = 0.0;
  std::optional<double> l_kl;
  std::optional<double> l_eaq;
  double l_total = 0.0;
};

// l_total = a_qae * l_qae + a_qea * (l_seq + a_kl * l_kl) + a_eaq * l_eaq over enabled terms.
// Throws ConfigError on negative weights or when an enabled component is missing.
LossBreakdown triplet_total(const LossComponents& components, const LossWeights& weights);

// Mean over positions i with loss_mask[i] of -log softmax(logits[i-1])[tokens[i]].
// Row i of `logits` predicts token i+1. Writes d(loss)/d(logits) to `grad` when given.
double sequence_nll(const Matrix& logits, std::span<const int> tokens, std::span<const std::uint8_t> loss_mask,
                    Matrix* grad = nullptr);

enum class KlDirection {
  forward,   // KL(p_plain || p_evidence)
  reverse,   // KL(p_evidence || p_plain)
  symmetric  // average of both
};

std::string_view to_string(KlDirection d);
KlDirection kl_direction_from_string(std::string_view s);

struct KlOptions {
  KlDirection direction = KlDirection::forward;
  // Treat the evidence-conditioned side as a fixed teacher.
  bool teacher_stopgrad = false;
};

// Mean over aligned (plain row, evidence row) pairs of the divergence between
// the two next-token distributions. Gradients are accumulated (not
// overwritten) into the non-null grad matrices.
double kl_bridging(const Matrix& logits_plain, const Matrix& logits_evidence,
                   std::span<const std::pair<std::size_t, std::size_t>> aligned_rows, const KlOptions& options = {},
                   Matrix* grad_plain = nullptr, Matrix* grad_evidence = nullptr);

// log-softmax of one row, max-subtracted.
std::vector<double> log_softmax(std::span<const double> row);

}  // namespace tqa
