#pragma once

// The five scoring architectures, expressed as graph builders over a Tape.
//
//   GMF    sigma(h^T (p_u * q_i) + b)
//   MLP    sigma(out(tower(concat(p_u, q_i))))
//   NeuMF  sigma(h^T concat(p_u * q_i, tower(concat(p'_u, q'_i))) + b), separate tables per branch
//   AADCF  sigma(out(tower(pool(p_u, {g_u}) * pool(q_i, {g_i}))))
//   CAMF   u_m = alpha * u_shared + (1 - alpha) * p_u, alpha = sigma(w^T [p_u, a_u, q_i, a_i] + b)
//          sigma(out(tower(concat(u_m * q_i, u_m * a_i, q_i * a_u))))
//
// where a_u, a_i are sums of attribute embeddings and tower() is a stack of
// dense+ReLU layers with widths from ModelConfig::mlp_layers.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/parameters.hpp"
#include "camf/tape.hpp"

namespace camf {

enum class ModelKind { GMF, MLP, NeuMF, AADCF, CAMF };

inline constexpr std::array<ModelKind, 5> kAllModelKinds{ModelKind::GMF, ModelKind::MLP, ModelKind::NeuMF,
                                                         ModelKind::AADCF, ModelKind::CAMF};

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::GMF: return "GMF";
    case ModelKind::MLP: return "MLP";
    case ModelKind::NeuMF: return "NeuMF";
    case ModelKind::AADCF: return "AADCF";
    case ModelKind::CAMF: return "CAMF";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (ModelKind k : kAllModelKinds) {
    std::string name(to_string(k));
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    if (name == upper) return k;
  }
  throw Error("unknown model kind '" + std::string(text) + "' (expected GMF, MLP, NeuMF, AADCF or CAMF)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::GMF;
  std::size_t factors = 8;
  std::vector<std::size_t> mlp_layers{32, 16, 8};
  Index num_users = 0;
  Index num_items = 0;
  Index user_vocab = 0;
  Index item_vocab = 0;
  // CAMF only: adds the a_u * a_i cross term.
  bool include_attr_cross = false;

  bool uses_attributes() const { return kind == ModelKind::AADCF || kind == ModelKind::CAMF; }
  bool uses_tower() const { return kind != ModelKind::GMF; }

  void validate() const {
    if (factors == 0) throw Error("factors must be positive");
    if (num_users == 0 || num_items == 0) throw Error("model needs at least one user and one item");
    if (uses_tower()) {
      if (mlp_layers.empty()) throw Error("mlp_layers must be non-empty");
      for (auto w : mlp_layers) {
        if (w == 0) throw Error("mlp_layers widths must be positive");
      }
    }
    if (uses_attributes() && (user_vocab == 0 || item_vocab == 0)) {
      throw Error(std::string(to_string(kind)) + " needs non-empty attribute vocabularies");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline ModelConfig model_config_for(ModelKind kind, std::size_t factors, std::vector<std::size_t> layers,
                                    const AttributeCatalog& catalog) {
  ModelConfig c;
  c.kind = kind;
  c.factors = factors;
  c.mlp_layers = std::move(layers);
  c.num_users = catalog.num_users();
  c.num_items = catalog.num_items();
  c.user_vocab = catalog.user_vocab_size();
  c.item_vocab = catalog.item_vocab_size();
  return c;
}

// Width of the tower input for the architectures that have one.
inline std::size_t tower_input_width(const ModelConfig& c) {
  switch (c.kind) {
    case ModelKind::MLP:
    case ModelKind::NeuMF: return 2 * c.factors;
    case ModelKind::AADCF: return c.factors;
    case ModelKind::CAMF: return (c.include_attr_cross ? 4 : 3) * c.factors;
    case ModelKind::GMF: break;
  }
  return 0;
}

namespace detail {

inline void add_tower(ParameterStore& store, const std::string& prefix, std::size_t input,
                      const std::vector<std::size_t>& layers) {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    store.add(prefix + std::to_string(k) + ".weight", layers[k], input);
    store.add(prefix + std::to_string(k) + ".bias", 1, layers[k]);
    input = layers[k];
  }
}

}  // namespace detail

// All parameters of an architecture, zero-filled, in a fixed order.
inline ParameterStore make_parameters(const ModelConfig& c) {
  c.validate();
  ParameterStore s;
  const std::size_t d = c.factors;
  const std::size_t last = c.mlp_layers.empty() ? 0 : c.mlp_layers.back();
  switch (c.kind) {
    case ModelKind::GMF:
      s.add("user_embedding", c.num_users, d);
      s.add("item_embedding", c.num_items, d);
      s.add("output.weight", 1, d);
      break;
    case ModelKind::MLP:
      s.add("user_embedding", c.num_users, d);
      s.add("item_embedding", c.num_items, d);
      detail::add_tower(s, "mlp.", tower_input_width(c), c.mlp_layers);
      s.add("output.weight", 1, last);
      break;
    case ModelKind::NeuMF:
      s.add("gmf.user_embedding", c.num_users, d);
      s.add("gmf.item_embedding", c.num_items, d);
      s.add("mlp.user_embedding", c.num_users, d);
      s.add("mlp.item_embedding", c.num_items, d);
      detail::add_tower(s, "mlp.", tower_input_width(c), c.mlp_layers);
      s.add("output.weight", 1, d + last);
      break;
    case ModelKind::AADCF:
      s.add("user_embedding", c.num_users, d);
      s.add("item_embedding", c.num_items, d);
      s.add("user_attr_embedding", c.user_vocab, d);
      s.add("item_attr_embedding", c.item_vocab, d);
      detail::add_tower(s, "mlp.", tower_input_width(c), c.mlp_layers);
      s.add("output.weight", 1, last);
      break;
    case ModelKind::CAMF:
      s.add("user_embedding", c.num_users, d);
      s.add("item_embedding", c.num_items, d);
      s.add("user_attr_embedding", c.user_vocab, d);
      s.add("item_attr_embedding", c.item_vocab, d);
      s.add("shared_user", 1, d);
      s.add("gate.weight", 1, 4 * d);
      s.add("gate.bias", 1, 1);
      detail::add_tower(s, "mlp.", tower_input_width(c), c.mlp_layers);
      s.add("output.weight", 1, last);
      break;
  }
  s.add("output.bias", 1, 1);
  return s;
}

inline constexpr double kInitStddev = 0.01;

// Weights and embeddings ~ N(0, 0.01^2), biases zero.
inline ParameterStore init_params(const ModelConfig& c, std::uint64_t seed, double stddev = kInitStddev) {
  ParameterStore s = make_parameters(c);
  init_gaussian(s, seed, stddev);
  return s;
}

// Probability applies the output sigmoid; Logit stops just before it.
enum class Output { Probability, Logit };

struct BatchRef {
  std::span<const Index> users;
  std::span<const Index> items;
  const AttributeCatalog* catalog = nullptr;

  std::vector<std::span<const Index>> user_attrs() const {
    require(catalog != nullptr, "attribute-aware model needs a catalog");
    std::vector<std::span<const Index>> out;
    out.reserve(users.size());
    for (Index u : users) out.push_back(catalog->user_attrs(u));
    return out;
  }
  std::vector<std::span<const Index>> item_attrs() const {
    require(catalog != nullptr, "attribute-aware model needs a catalog");
    std::vector<std::span<const Index>> out;
    out.reserve(items.size());
    for (Index i : items) out.push_back(catalog->item_attrs(i));
    return out;
  }
};

namespace detail {

inline Var tower(Tape& tape, Var x, const std::string& prefix, std::size_t depth) {
  for (std::size_t k = 0; k < depth; ++k) {
    const std::string base = prefix + std::to_string(k);
    x = tape.relu(tape.dense(x, base + ".weight", base + ".bias"));
  }
  return x;
}

inline Var finish(Tape& tape, Var logit, Output output) {
  return output == Output::Probability ? tape.sigmoid(logit) : logit;
}

inline void check_batch(const ModelConfig& c, const BatchRef& batch) {
  require(batch.users.size() == batch.items.size(), "batch users/items length mismatch");
  for (Index u : batch.users) require(u < c.num_users, "user index out of range");
  for (Index i : batch.items) require(i < c.num_items, "item index out of range");
}

}  // namespace detail

inline Var gmf_forward(Tape& tape, const ModelConfig& c, const BatchRef& batch, Output output = Output::Probability) {
  detail::check_batch(c, batch);
  const Var p = tape.embed_lookup("user_embedding", batch.users);
  const Var q = tape.embed_lookup("item_embedding", batch.items);
  return detail::finish(tape, tape.dense(tape.hadamard(p, q), "output.weight", "output.bias"), output);
}

inline Var mlp_forward(Tape& tape, const ModelConfig& c, const BatchRef& batch, Output output = Output::Probability) {
  detail::check_batch(c, batch);
  const Var p = tape.embed_lookup("user_embedding", batch.users);
  const Var q = tape.embed_lookup("item_embedding", batch.items);
  const Var h = detail::tower(tape, tape.concat({p, q}), "mlp.", c.mlp_layers.size());
  return detail::finish(tape, tape.dense(h, "output.weight", "output.bias"), output);
}

inline Var neumf_forward(Tape& tape, const ModelConfig& c, const BatchRef& batch, Output output = Output::Probability) {
  detail::check_batch(c, batch);
  const Var gmf = tape.hadamard(tape.embed_lookup("gmf.user_embedding", batch.users),
                                tape.embed_lookup("gmf.item_embedding", batch.items));
  const Var mlp_in = tape.concat(
      {tape.embed_lookup("mlp.user_embedding", batch.users), tape.embed_lookup("mlp.item_embedding", batch.items)});
  const Var mlp = detail::tower(tape, mlp_in, "mlp.", c.mlp_layers.size());
  return detail::finish(tape, tape.dense(tape.concat({gmf, mlp}), "output.weight", "output.bias"), output);
}

inline Var aadcf_forward(Tape& tape, const ModelConfig& c, const BatchRef& batch, Output output = Output::Probability) {
  detail::check_batch(c, batch);
  const Var pu = tape.pairwise_pool(tape.embed_lookup("user_embedding", batch.users), "user_attr_embedding",
                                    batch.user_attrs());
  const Var qi = tape.pairwise_pool(tape.embed_lookup("item_embedding", batch.items), "item_attr_embedding",
                                    batch.item_attrs());
  const Var h = detail::tower(tape, tape.hadamard(pu, qi), "mlp.", c.mlp_layers.size());
  return detail::finish(tape, tape.dense(h, "output.weight", "output.bias"), output);
}

// Intermediate CAMF activations, exposed for tests.
struct CamfGraph {
  Var user;          // p_u
  Var item;          // q_i
  Var user_attrs;    // a_u
  Var item_attrs;    // a_i
  Var alpha;         // gate output, rows x 1
  Var merged_user;   // u_m
  Var output;
};

// Gate weight alpha = sigma(w^T [p_u, a_u, q_i, a_i] + b), one per (user, item) pair.
inline Var camf_gate(Tape& tape, Var user, Var user_attrs, Var item, Var item_attrs) {
  const Var z = tape.concat({user, user_attrs, item, item_attrs});
  return tape.sigmoid(tape.dense(z, "gate.weight", "gate.bias"));
}

inline CamfGraph camf_graph(Tape& tape, const ModelConfig& c, const BatchRef& batch,
                            Output output = Output::Probability) {
  detail::check_batch(c, batch);
  CamfGraph g;
  g.user = tape.embed_lookup("user_embedding", batch.users);
  g.item = tape.embed_lookup("item_embedding", batch.items);
  g.user_attrs = tape.embed_sum("user_attr_embedding", batch.user_attrs());
  g.item_attrs = tape.embed_sum("item_attr_embedding", batch.item_attrs());
  g.alpha = camf_gate(tape, g.user, g.user_attrs, g.item, g.item_attrs);
  const std::vector<Index> zeros(batch.users.size(), 0);
  const Var shared = tape.embed_lookup("shared_user", zeros);
  g.merged_user = tape.merge(shared, g.user, g.alpha);

  std::vector<Var> crosses{tape.hadamard(g.merged_user, g.item), tape.hadamard(g.merged_user, g.item_attrs),
                           tape.hadamard(g.item, g.user_attrs)};
  if (c.include_attr_cross) crosses.push_back(tape.hadamard(g.user_attrs, g.item_attrs));
  const Var h = detail::tower(tape, tape.concat(std::move(crosses)), "mlp.", c.mlp_layers.size());
  g.output = detail::finish(tape, tape.dense(h, "output.weight", "output.bias"), output);
  return g;
}

inline Var camf_forward(Tape& tape, const ModelConfig& c, const BatchRef& batch, Output output = Output::Probability) {
  return camf_graph(tape, c, batch, output).output;
}

inline Var build_forward(Tape& tape, const ModelConfig& c, const BatchRef& batch, Output output = Output::Probability) {
  switch (c.kind) {
    case ModelKind::GMF: return gmf_forward(tape, c, batch, output);
    case ModelKind::MLP: return mlp_forward(tape, c, batch, output);
    case ModelKind::NeuMF: return neumf_forward(tape, c, batch, output);
    case ModelKind::AADCF: return aadcf_forward(tape, c, batch, output);
    case ModelKind::CAMF: return camf_forward(tape, c, batch, output);
  }
  throw ContractViolation("unknown model kind");
}

// Scores a batch of (user, item) pairs without recording gradients.
inline std::vector<double> score_batch(const ModelConfig& c, const ParameterStore& params,
                                       const AttributeCatalog& catalog, std::span<const Index> users,
                                       std::span<const Index> items, Output output = Output::Probability) {
  Tape tape(params, false);
  const Var out = build_forward(tape, c, BatchRef{users, items, &catalog}, output);
  return tape.value(out).data;
}

inline double score(const ModelConfig& c, const ParameterStore& params, const AttributeCatalog& catalog, Index user,
                    Index item, Output output = Output::Probability) {
  const Index u[1]{user};
  const Index i[1]{item};
  return score_batch(c, params, catalog, u, i, output)[0];
}

}  // namespace camf
