#include "grad_cases.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "oracles.hpp"
#include "simtrans/mfb.hpp"
#include "simtrans/sil.hpp"
#include "simtrans/vit.hpp"

namespace simtrans::testing {

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops = {"matmul",          "softmax", "layer_norm",    "gelu",
                                               "attention_layer", "gcn",     "cross_entropy", "contrastive"};
  return ops;
}

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::string dims(std::initializer_list<std::size_t> d) {
  std::string s;
  for (std::size_t v : d) s += (s.empty() ? "" : "x") + std::to_string(v);
  return s;
}

// Tensors live in a deque so their addresses survive later insertions.
struct Store {
  std::deque<Tensor> tensors;
  std::vector<int> labels;
  LayerParams layer;
  BackboneConfig backbone;
  sil::GcnParams gcn;
  PatchGrid grid;
  double alpha = 0.3;

  Tensor* add(Tensor t) {
    tensors.push_back(std::move(t));
    return &tensors.back();
  }
};

Matrix rows_of(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

GradCase matmul_case(std::mt19937_64& rng) {
  auto s = std::make_shared<Store>();
  const std::size_t m = pick(rng, 1, 6), k = pick(rng, 1, 6), n = pick(rng, 1, 6);
  Tensor* a = s->add(random_tensor({m, k}, rng));
  Tensor* b = s->add(random_tensor({k, n}, rng));
  return {dims({m, k, n}), [a, b](ad::ParameterBinder& bind) { return ad::matmul(bind(*a), bind(*b)); },
          {{"a", a}, {"b", b}}, s};
}

GradCase softmax_case(std::mt19937_64& rng) {
  auto s = std::make_shared<Store>();
  const std::size_t r = pick(rng, 1, 6), c = pick(rng, 2, 8);
  Tensor* x = s->add(random_tensor({r, c}, rng, 2.0));
  return {dims({r, c}), [x](ad::ParameterBinder& bind) { return ad::softmax_rows(bind(*x)); }, {{"x", x}}, s};
}

GradCase layer_norm_case(std::mt19937_64& rng) {
  auto s = std::make_shared<Store>();
  const std::size_t r = pick(rng, 1, 5), d = pick(rng, 2, 8);
  Tensor* x = s->add(random_tensor({r, d}, rng, 1.5));
  Tensor* gamma = s->add(random_tensor({1, d}, rng, 0.5));
  for (double& v : gamma->values()) v += 1.0;
  Tensor* beta = s->add(random_tensor({1, d}, rng, 0.5));
  return {dims({r, d}),
          [x, gamma, beta](ad::ParameterBinder& bind) { return ad::layer_norm(bind(*x), bind(*gamma), bind(*beta)); },
          {{"x", x}, {"gamma", gamma}, {"beta", beta}},
          s};
}

GradCase gelu_case(std::mt19937_64& rng) {
  auto s = std::make_shared<Store>();
  const std::size_t r = pick(rng, 1, 5), c = pick(rng, 1, 8);
  Tensor* x = s->add(random_tensor({r, c}, rng, 2.0));
  return {dims({r, c}), [x](ad::ParameterBinder& bind) { return ad::gelu(bind(*x)); }, {{"x", x}}, s};
}

GradCase attention_case(std::mt19937_64& rng) {
  auto s = std::make_shared<Store>();
  const std::size_t heads = pick(rng, 1, 2);
  const std::size_t d = heads * pick(rng, 2, 4);
  const std::size_t tokens = pick(rng, 2, 5);
  const std::size_t ffn = pick(rng, 2, 8);
  s->backbone.dim = d;
  s->backbone.heads = heads;
  s->backbone.ffn_dim = ffn;
  LayerParams& p = s->layer;
  const double w = 0.6;
  p.wq = random_tensor({d, d}, rng, w);
  p.wk = random_tensor({d, d}, rng, w);
  p.wv = random_tensor({d, d}, rng, w);
  p.wo = random_tensor({d, d}, rng, w);
  p.bq = random_tensor({1, d}, rng, 0.1);
  p.bk = random_tensor({1, d}, rng, 0.1);
  p.bv = random_tensor({1, d}, rng, 0.1);
  p.bo = random_tensor({1, d}, rng, 0.1);
  p.ln1_gamma = random_tensor({1, d}, rng, 0.2);
  p.ln2_gamma = random_tensor({1, d}, rng, 0.2);
  for (double& v : p.ln1_gamma.values()) v += 1.0;
  for (double& v : p.ln2_gamma.values()) v += 1.0;
  p.ln1_beta = random_tensor({1, d}, rng, 0.1);
  p.ln2_beta = random_tensor({1, d}, rng, 0.1);
  p.ffn1_w = random_tensor({d, ffn}, rng, w);
  p.ffn1_b = random_tensor({1, ffn}, rng, 0.1);
  p.ffn2_w = random_tensor({ffn, d}, rng, w);
  p.ffn2_b = random_tensor({1, d}, rng, 0.1);
  Tensor* z = s->add(random_tensor({tokens, d}, rng));

  Store* raw = s.get();
  GraphFn fn = [raw, z](ad::ParameterBinder& bind) {
    // Output the tokens together with the captured attention so the path the
    // structure module reads from is checked as well.
    const LayerOutput out = encoder_layer(bind, bind(*z), raw->layer, raw->backbone, true);
    std::vector<ad::Var> parts{out.tokens};
    parts.insert(parts.end(), out.attention.begin(), out.attention.end());
    return ad::concat_last_axis(parts);
  };
  std::vector<GradInput> inputs = {
      {"tokens", z},         {"wq", &p.wq},         {"bq", &p.bq},          {"wk", &p.wk},
      {"bk", &p.bk},         {"wv", &p.wv},         {"bv", &p.bv},          {"wo", &p.wo},
      {"bo", &p.bo},         {"ln1_gamma", &p.ln1_gamma}, {"ln1_beta", &p.ln1_beta}, {"ffn1_w", &p.ffn1_w},
      {"ffn1_b", &p.ffn1_b}, {"ffn2_w", &p.ffn2_w}, {"ffn2_b", &p.ffn2_b},  {"ln2_gamma", &p.ln2_gamma},
      {"ln2_beta", &p.ln2_beta}};
  return {"tokens " + std::to_string(tokens) + ", dim " + std::to_string(d) + ", heads " + std::to_string(heads) +
              ", ffn " + std::to_string(ffn),
          fn, inputs, s};
}

bool gcn_point_is_smooth(const std::vector<Tensor*>& heads, const Store& s) {
  const std::size_t n = s.grid.count();
  std::vector<double> a(n, 0.0);
  for (const Tensor* h : heads)
    for (std::size_t i = 0; i < n; ++i) a[i] += h->at(0, i + 1);
  double mean = 0.0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> sorted = a;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  if (sorted[0] - sorted[1] < 1e-3) return false;
  for (double v : a)
    if (std::abs(v - mean) < 1e-3) return false;

  const GcnOracle o = gcn_oracle(a, s.grid.n_h, s.grid.n_w, rows_of(s.gcn.w1), rows_of(s.gcn.w2));
  auto clear_of_zero = [](const std::vector<double>& row) {
    double scale = 0.0;
    for (double v : row) scale = std::max(scale, std::abs(v));
    for (double v : row)
      if (std::abs(v) < 1e-3 * scale) return false;
    return scale > 0.0;
  };
  for (std::size_t i = 0; i < n; ++i)
    if (o.kept[i] != 0.0 && !clear_of_zero(o.pre_hidden[i])) return false;
  if (!clear_of_zero(o.pre_out[o.reference])) return false;
  return std::any_of(o.feature.begin(), o.feature.end(), [](double v) { return v > 0.0; });
}

GradCase gcn_case(std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto s = std::make_shared<Store>();
    std::size_t n_h = pick(rng, 1, 4), n_w = pick(rng, 1, 4);
    if (n_h * n_w < 2) n_w = 2;
    s->grid = PatchGrid::make(n_h * 4, n_w * 4, 4, 4);
    const std::size_t heads = pick(rng, 1, 3);
    const std::size_t hidden = pick(rng, 2, 6), d = pick(rng, 2, 6);
    const std::size_t t = s->grid.count() + 1;
    std::vector<Tensor*> att;
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor m({t, t});
      for (double& v : m.values()) v = u(rng);
      att.push_back(s->add(std::move(m)));
    }
    s->gcn.w1 = random_tensor({sil::kNodeFeatureDim, hidden}, rng);
    s->gcn.w2 = random_tensor({hidden, d}, rng);
    if (!gcn_point_is_smooth(att, *s)) continue;

    Store* raw = s.get();
    GraphFn fn = [raw, att](ad::ParameterBinder& bind) {
      std::vector<ad::Var> vars;
      for (Tensor* a : att) vars.push_back(bind(*a));
      return sil::structure_feature(bind, vars, raw->grid, raw->gcn).feature;
    };
    std::vector<GradInput> inputs;
    for (std::size_t h = 0; h < heads; ++h) inputs.push_back({"attention_head" + std::to_string(h), att[h]});
    inputs.push_back({"w1", &s->gcn.w1});
    inputs.push_back({"w2", &s->gcn.w2});
    return {"grid " + dims({n_h, n_w}) + ", heads " + std::to_string(heads) + ", hidden " + std::to_string(hidden) +
                ", dim " + std::to_string(d),
            fn, inputs, s};
  }
  throw std::runtime_error("gcn_case: no smooth point found");
}

GradCase cross_entropy_case(std::mt19937_64& rng) {
  auto s = std::make_shared<Store>();
  const std::size_t b = pick(rng, 1, 8), f = pick(rng, 2, 8), c = pick(rng, 2, 8);
  Tensor* x = s->add(random_tensor({b, f}, rng));
  Tensor* w = s->add(random_tensor({f, c}, rng, 0.7));
  Tensor* bias = s->add(random_tensor({1, c}, rng, 0.3));
  for (std::size_t i = 0; i < b; ++i) s->labels.push_back(static_cast<int>(pick(rng, 0, c - 1)));
  Store* raw = s.get();
  GraphFn fn = [raw, x, w, bias](ad::ParameterBinder& bind) {
    return mfb::cross_entropy(mfb::classify(bind(*x), bind(*w), bind(*bias)).pred, raw->labels);
  };
  return {"batch " + std::to_string(b) + ", features " + std::to_string(f) + ", classes " + std::to_string(c), fn,
          {{"features", x}, {"weight", w}, {"bias", bias}}, s};
}

GradCase contrastive_case(std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto s = std::make_shared<Store>();
    const std::size_t b = pick(rng, 2, 16), f = pick(rng, 2, 8), c = pick(rng, 2, 8);
    Tensor* z = s->add(random_tensor({b, f}, rng));
    for (std::size_t i = 0; i < b; ++i) s->labels.push_back(static_cast<int>(pick(rng, 0, c - 1)));
    const ContrastiveOracle o = naive_contrastive(rows_of(*z), s->labels, s->alpha);
    bool smooth = true;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j)
        if (j != i && s->labels[i] != s->labels[j] && std::abs(o.gate[i][j]) <= 1e-3) smooth = false;
    if (!smooth) continue;
    Store* raw = s.get();
    GraphFn fn = [raw, z](ad::ParameterBinder& bind) {
      return mfb::contrastive_loss(bind(*z), raw->labels, raw->alpha).loss;
    };
    return {"batch " + std::to_string(b) + ", features " + std::to_string(f) + ", classes " + std::to_string(c), fn,
            {{"features", z}}, s};
  }
  throw std::runtime_error("contrastive_case: no smooth point found");
}

}  // namespace

GradCase make_grad_case(const std::string& op, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (op == "matmul") return matmul_case(rng);
  if (op == "softmax") return softmax_case(rng);
  if (op == "layer_norm") return layer_norm_case(rng);
  if (op == "gelu") return gelu_case(rng);
  if (op == "attention_layer") return attention_case(rng);
  if (op == "gcn") return gcn_case(rng);
  if (op == "cross_entropy") return cross_entropy_case(rng);
  if (op == "contrastive") return contrastive_case(rng);
  throw std::invalid_argument("unknown op " + op);
}

}  // namespace simtrans::testing
