#pragma once

// Scalar reference implementations of every model, written directly from the
// defining formulas and independent of the Tape. Used as test oracles.

#include <cmath>
#include <string>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/models.hpp"
#include "camf/parameters.hpp"

namespace camf::oracle {

using Vec = std::vector<double>;

inline Vec row(const ParameterStore& s, const std::string& name, std::size_t r) {
  const auto src = s.get(name).row(r);
  return Vec(src.begin(), src.end());
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec relu_layer(const ParameterStore& s, const std::string& base, const Vec& x) {
  const auto& w = s.get(base + ".weight");
  const auto& b = s.get(base + ".bias");
  Vec out(w.rows());
  for (std::size_t o = 0; o < w.rows(); ++o) {
    double acc = b.values()[o];
    for (std::size_t i = 0; i < w.cols(); ++i) acc += static_cast<double>(w.values()[o * w.cols() + i]) * x[i];
    out[o] = acc > 0 ? acc : 0.0;
  }
  return out;
}

inline Vec tower(const ParameterStore& s, const ModelConfig& c, Vec x) {
  for (std::size_t k = 0; k < c.mlp_layers.size(); ++k) x = relu_layer(s, "mlp." + std::to_string(k), x);
  return x;
}

inline double output_logit(const ParameterStore& s, const Vec& x) {
  const auto& w = s.get("output.weight");
  double acc = s.get("output.bias").values()[0];
  for (std::size_t k = 0; k < x.size(); ++k) acc += static_cast<double>(w.values()[k]) * x[k];
  return acc;
}

inline Vec concat(std::initializer_list<Vec> parts) {
  Vec out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline Vec times(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] * b[k];
  return out;
}

// Literal double sum: sum_t e*g_t + sum_{t<t'} g_t*g_t'.
inline Vec pairwise_pool_bruteforce(const Vec& e, const std::vector<Vec>& g) {
  if (g.empty()) return e;
  Vec out(e.size(), 0.0);
  for (std::size_t t = 0; t < g.size(); ++t) {
    for (std::size_t k = 0; k < e.size(); ++k) out[k] += e[k] * g[t][k];
    for (std::size_t t2 = t + 1; t2 < g.size(); ++t2) {
      for (std::size_t k = 0; k < e.size(); ++k) out[k] += g[t][k] * g[t2][k];
    }
  }
  return out;
}

inline std::vector<Vec> attr_rows(const ParameterStore& s, const std::string& table, std::span<const Index> ids) {
  std::vector<Vec> out;
  for (Index id : ids) out.push_back(row(s, table, id));
  return out;
}

inline double gmf(const ParameterStore& s, Index u, Index i) {
  const Vec p = row(s, "user_embedding", u);
  const Vec q = row(s, "item_embedding", i);
  return logistic(output_logit(s, times(p, q)));
}

inline double mlp(const ParameterStore& s, const ModelConfig& c, Index u, Index i) {
  return logistic(output_logit(s, tower(s, c, concat({row(s, "user_embedding", u), row(s, "item_embedding", i)}))));
}

inline double neumf(const ParameterStore& s, const ModelConfig& c, Index u, Index i) {
  const Vec g = times(row(s, "gmf.user_embedding", u), row(s, "gmf.item_embedding", i));
  const Vec m = tower(s, c, concat({row(s, "mlp.user_embedding", u), row(s, "mlp.item_embedding", i)}));
  return logistic(output_logit(s, concat({g, m})));
}

inline double aadcf(const ParameterStore& s, const ModelConfig& c, const AttributeCatalog& cat, Index u, Index i) {
  const Vec pu = pairwise_pool_bruteforce(row(s, "user_embedding", u), attr_rows(s, "user_attr_embedding", cat.user_attrs(u)));
  const Vec qi = pairwise_pool_bruteforce(row(s, "item_embedding", i), attr_rows(s, "item_attr_embedding", cat.item_attrs(i)));
  return logistic(output_logit(s, tower(s, c, times(pu, qi))));
}

// Cross terms are formed attribute by attribute and then summed, rather than
// crossing with the aggregated attribute vector.
inline double camf(const ParameterStore& s, const ModelConfig& c, const AttributeCatalog& cat, Index u, Index i) {
  const std::size_t d = c.factors;
  const Vec p = row(s, "user_embedding", u);
  const Vec q = row(s, "item_embedding", i);
  const auto gu = attr_rows(s, "user_attr_embedding", cat.user_attrs(u));
  const auto gi = attr_rows(s, "item_attr_embedding", cat.item_attrs(i));
  Vec au(d, 0.0), ai(d, 0.0);
  for (const auto& g : gu) for (std::size_t k = 0; k < d; ++k) au[k] += g[k];
  for (const auto& g : gi) for (std::size_t k = 0; k < d; ++k) ai[k] += g[k];

  const Vec z = concat({p, au, q, ai});
  const auto& gw = s.get("gate.weight");
  double gate = s.get("gate.bias").values()[0];
  for (std::size_t k = 0; k < z.size(); ++k) gate += static_cast<double>(gw.values()[k]) * z[k];
  const double alpha = logistic(gate);

  const Vec shared = row(s, "shared_user", 0);
  Vec um(d);
  for (std::size_t k = 0; k < d; ++k) um[k] = alpha * shared[k] + (1 - alpha) * p[k];

  Vec v2(d, 0.0), v3(d, 0.0), v4(d, 0.0);
  for (const auto& g : gi) for (std::size_t k = 0; k < d; ++k) v2[k] += um[k] * g[k];
  for (const auto& g : gu) for (std::size_t k = 0; k < d; ++k) v3[k] += q[k] * g[k];
  for (const auto& a : gu)
    for (const auto& b : gi)
      for (std::size_t k = 0; k < d; ++k) v4[k] += a[k] * b[k];
  Vec x = concat({times(um, q), v2, v3});
  if (c.include_attr_cross) x.insert(x.end(), v4.begin(), v4.end());
  return logistic(output_logit(s, tower(s, c, x)));
}

inline double score(const ParameterStore& s, const ModelConfig& c, const AttributeCatalog& cat, Index u, Index i) {
  switch (c.kind) {
    case ModelKind::GMF: return gmf(s, u, i);
    case ModelKind::MLP: return mlp(s, c, u, i);
    case ModelKind::NeuMF: return neumf(s, c, u, i);
    case ModelKind::AADCF: return aadcf(s, c, cat, u, i);
    case ModelKind::CAMF: return camf(s, c, cat, u, i);
  }
  return 0.0;
}

}  // namespace camf::oracle
