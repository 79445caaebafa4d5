#include "simtrans/mfb.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "simtrans/error.hpp"

namespace simtrans::mfb {

ad::Var multi_level_features(std::span<const ad::Var> cls_per_layer) {
  if (cls_per_layer.size() < 3) {
    throw ConfigError("multi-level features need at least 3 layers, got " + std::to_string(cls_per_layer.size()));
  }
  return ad::concat_last_axis(cls_per_layer.last(3));
}

Classification classify(ad::Var features, ad::Var weight, ad::Var bias) {
  if (weight.value().cols() < 2) throw ContractError("classifier needs at least 2 classes");
  Classification c;
  c.logits = ad::add_row(ad::matmul(features, weight), bias);
  c.pred = ad::softmax_rows(c.logits);
  return c;
}

namespace {

void check_labels(std::size_t rows, std::size_t classes, std::span<const int> labels) {
  if (labels.size() != rows) {
    throw ContractError(std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

ad::Var cross_entropy(ad::Var pred, std::span<const int> labels) {
  const Tensor& p = pred.value();
  const std::size_t b = p.rows(), c = p.cols();
  check_labels(b, c, labels);
  double sum = 0.0;
  for (std::size_t i = 0; i < b; ++i) sum -= std::log(std::max(p.at(i, labels[i]), kProbabilityFloor));
  const double n = static_cast<double>(b);
  std::vector<int> ys(labels.begin(), labels.end());
  return pred.graph->record(Tensor({1}, sum / n), {pred.id}, [pi = pred.id, ys, c, n](ad::Graph& g, std::size_t self) {
    const Tensor& p = g.value(pi);
    Tensor& gp = g.grad_buffer(pi);
    const double go = g.grad(self)[0];
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const double q = p[i * c + ys[i]];
      if (q > kProbabilityFloor) gp[i * c + ys[i]] -= go / (n * q);
    }
  });
}

namespace {

// Everything the forward pass learns about one batch that the backward pass
// needs again.
struct PairTerms {
  std::size_t b = 0, f = 0;
  std::vector<double> norm;       // |z_i|
  std::vector<double> unit;       // z_i / |z_i|, zero rows stay zero
  std::vector<double> sim;        // B x B
  std::vector<double> pos_mean;   // m_i
  std::vector<std::size_t> positives;  // Gamma_i
  double loss = 0.0;
  std::size_t filtered = 0;
};

PairTerms evaluate(const Tensor& z, std::span<const int> labels, double alpha) {
  PairTerms t;
  t.b = z.rows();
  t.f = z.cols();
  if (t.b < 2) throw ContractError("contrastive loss needs a batch of at least 2, got " + std::to_string(t.b));
  if (labels.size() != t.b) {
    throw ContractError(std::to_string(labels.size()) + " labels for " + std::to_string(t.b) + " rows");
  }
  const std::size_t b = t.b, f = t.f;
  t.norm.assign(b, 0.0);
  t.unit.assign(b * f, 0.0);
  bool warned = false;
  for (std::size_t i = 0; i < b; ++i) {
    double ss = 0.0;
    for (std::size_t k = 0; k < f; ++k) ss += z.at(i, k) * z.at(i, k);
    t.norm[i] = std::sqrt(ss);
    if (t.norm[i] == 0.0) {
      if (!warned) std::cerr << "warning: zero feature row in contrastive loss, similarity taken as 0\n";
      warned = true;
      continue;
    }
    for (std::size_t k = 0; k < f; ++k) t.unit[i * f + k] = z.at(i, k) / t.norm[i];
  }
  t.sim.assign(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < f; ++k) s += t.unit[i * f + k] * t.unit[j * f + k];
      t.sim[i * b + j] = s;
    }
  }
  t.pos_mean.assign(b, 0.0);
  t.positives.assign(b, 0);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double pos_sum = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && labels[j] == labels[i]) {
        pos_sum += t.sim[i * b + j];
        ++t.positives[i];
      }
    }
    if (t.positives[i] > 0) t.pos_mean[i] = pos_sum / static_cast<double>(t.positives[i]);
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double s = t.sim[i * b + j];
      if (labels[j] == labels[i]) {
        total += 1.0 - s;
      } else {
        const double gate = alpha + s - t.pos_mean[i];
        if (gate > 0.0) {
          total += gate * s;
        } else {
          ++t.filtered;
        }
      }
    }
  }
  t.loss = total / static_cast<double>(b * b);
  return t;
}

}  // namespace

ContrastiveValue contrastive_loss(const Tensor& features, std::span<const int> labels, double alpha) {
  const PairTerms t = evaluate(features, labels, alpha);
  return {t.loss, t.filtered};
}

ContrastiveResult contrastive_loss(ad::Var features, std::span<const int> labels, double alpha) {
  auto terms = std::make_shared<PairTerms>(evaluate(features.value(), labels, alpha));
  std::vector<int> ys(labels.begin(), labels.end());
  ContrastiveResult r;
  r.filtered_negatives = terms->filtered;
  r.loss = features.graph->record(
      Tensor({1}, terms->loss), {features.id},
      [zi = features.id, terms, ys, alpha](ad::Graph& g, std::size_t self) {
        const PairTerms& t = *terms;
        const std::size_t b = t.b, f = t.f;
        const double scale = g.grad(self)[0] / static_cast<double>(b * b);

        // dL/dsim_ij
        std::vector<double> gs(b * b, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
          double active_neg_sim = 0.0;
          for (std::size_t j = 0; j < b; ++j) {
            if (j == i || ys[j] == ys[i]) continue;
            const double s = t.sim[i * b + j];
            const double gate = alpha + s - t.pos_mean[i];
            if (gate > 0.0) {
              gs[i * b + j] += scale * (gate + s);
              active_neg_sim += s;
            }
          }
          const double inv_gamma = t.positives[i] > 0 ? 1.0 / static_cast<double>(t.positives[i]) : 0.0;
          for (std::size_t j = 0; j < b; ++j) {
            if (j == i || ys[j] != ys[i]) continue;
            gs[i * b + j] += scale * (-1.0 - inv_gamma * active_neg_sim);
          }
        }

        // sim_ij = u_i . u_j
        std::vector<double> gu(b * f, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < b; ++j) {
            const double w = gs[i * b + j];
            if (w == 0.0) continue;
            for (std::size_t k = 0; k < f; ++k) {
              gu[i * f + k] += w * t.unit[j * f + k];
              gu[j * f + k] += w * t.unit[i * f + k];
            }
          }
        }

        // u = z / |z|
        Tensor& gz = g.grad_buffer(zi);
        for (std::size_t i = 0; i < b; ++i) {
          if (t.norm[i] == 0.0) continue;
          double radial = 0.0;
          for (std::size_t k = 0; k < f; ++k) radial += gu[i * f + k] * t.unit[i * f + k];
          for (std::size_t k = 0; k < f; ++k) {
            gz[i * f + k] += (gu[i * f + k] - radial * t.unit[i * f + k]) / t.norm[i];
          }
        }
      });
  return r;
}

ad::Var total_loss(ad::Var cross_entropy, ad::Var contrastive) { return ad::add(cross_entropy, contrastive); }

double accuracy(const Tensor& pred, std::span<const int> labels) {
  const std::size_t b = pred.rows(), c = pred.cols();
  check_labels(b, c, labels);
  std::size_t right = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = pred.data() + i * c;
    const auto best = static_cast<int>(std::max_element(row, row + c) - row);
    if (best == labels[i]) ++right;
  }
  return static_cast<double>(right) / static_cast<double>(b);
}

}  // namespace simtrans::mfb
