#pragma once

// Multi-level feature boosting: the image representation is the
// concatenation of the last three layers' cls tokens, trained with cross
// entropy plus a hard-negative-filtered contrastive loss.

#include <cstddef>
#include <span>

#include "simtrans/autodiff.hpp"
#include "simtrans/tensor.hpp"

namespace simtrans::mfb {

inline constexpr double kProbabilityFloor = 1e-12;

/// concat(cls_{L-2}, cls_{L-1}, cls_L) from the per-layer cls rows.
/// Throws ConfigError with fewer than three layers.
ad::Var multi_level_features(std::span<const ad::Var> cls_per_layer);

struct Classification {
  ad::Var logits;  // B x C
  ad::Var pred;    // row-wise softmax of logits
};

Classification classify(ad::Var features, ad::Var weight, ad::Var bias);

/// Mean over the batch of -log pred[i, y_i], probabilities floored at 1e-12.
ad::Var cross_entropy(ad::Var pred, std::span<const int> labels);

struct ContrastiveValue {
  double loss = 0.0;
  std::size_t filtered_negatives = 0;
};

/// Contrastive loss over the rows of a B x F feature matrix:
///
///   m_i  = mean cosine similarity of i to its positives (0 if it has none)
///   I_ij = max(0, alpha + sim(z_i, z_j) - m_i)                  for negatives
///   L    = 1/B^2 sum_i [ sum_pos (1 - sim) + sum_neg I_ij sim ]
///
/// Positives exclude the anchor itself. Negatives with I_ij = 0 are counted
/// as filtered.
ContrastiveValue contrastive_loss(const Tensor& features, std::span<const int> labels, double alpha);

struct ContrastiveResult {
  ad::Var loss;
  std::size_t filtered_negatives = 0;
};

ContrastiveResult contrastive_loss(ad::Var features, std::span<const int> labels, double alpha);

/// L = L_CE + L_CL
ad::Var total_loss(ad::Var cross_entropy, ad::Var contrastive);

struct LossReport {
  double cross_entropy = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
  std::size_t filtered_negatives = 0;
  double batch_accuracy = 0.0;
};

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& pred, std::span<const int> labels);

}  // namespace simtrans::mfb
