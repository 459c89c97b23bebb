#pragma once

// Reverse-mode differentiation over batched float64 activations.
//
// A Tape reads parameters from a ParameterStore, records each primitive's
// output together with its backward rule, and on backward() routes gradients
// into a row-sparse Gradients buffer keyed by parameter name. Every activation
// is a rows x cols matrix with one row per batch element.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/parameters.hpp"

namespace camf {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * cols, cols); }
};

enum class Op { Constant, EmbedLookup, EmbedSum, Hadamard, Concat, Dense, Relu, Sigmoid, PairwisePool, Merge, LogLoss };

struct Var {
  std::size_t id = 0;
};

// Numerically stable logistic function.
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// sum_t e*g_t + sum_{t<t'} g_t*g_t', evaluated as ((e+s)^2 - e^2 - sum_t g_t^2) / 2
// with s = sum_t g_t. An empty attribute list returns e.
inline void pairwise_pool_into(std::span<const double> entity, std::span<const std::span<const double>> attrs,
                               std::span<double> out) {
  require(out.size() == entity.size(), "pairwise_pool: output dimension mismatch");
  if (attrs.empty()) {
    std::copy(entity.begin(), entity.end(), out.begin());
    return;
  }
  for (std::size_t k = 0; k < entity.size(); ++k) {
    double s = 0.0;
    double sq = 0.0;
    for (const auto& g : attrs) {
      require(g.size() == entity.size(), "pairwise_pool: attribute dimension mismatch");
      s += g[k];
      sq += g[k] * g[k];
    }
    const double es = entity[k] + s;
    out[k] = (es * es - entity[k] * entity[k] - sq) * 0.5;
  }
}

inline std::vector<double> pairwise_pool(std::span<const double> entity, std::span<const std::span<const double>> attrs) {
  std::vector<double> out(entity.size());
  pairwise_pool_into(entity, attrs, out);
  return out;
}

// alpha * shared + (1 - alpha) * embedded
inline std::vector<double> merge_shared(std::span<const double> shared, std::span<const double> embedded, double alpha) {
  require(shared.size() == embedded.size(), "merge: dimension mismatch");
  std::vector<double> out(shared.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = alpha * shared[k] + (1.0 - alpha) * embedded[k];
  return out;
}

inline constexpr double kProbabilityClamp = 1e-7;

class Tape {
 public:
  explicit Tape(const ParameterStore& params, bool record_gradients = true)
      : params_(params), record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Tensor& value(Var v) const {
    require(v.id < nodes_.size(), "unknown tape variable");
    return nodes_[v.id].value;
  }
  const ParameterStore& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Test fixture: scales the gradient flowing back through every node of
  // kind `op`, which makes that backward rule wrong.
  void corrupt_backward(Op op, double factor) { corruption_ = std::pair{op, factor}; }

  Var constant(Tensor t) { return push(Op::Constant, std::move(t), {}); }

  Var embed_lookup(std::string_view table, std::span<const Index> ids) {
    const Parameter& p = params_.get(table);
    Tensor out(ids.size(), p.cols());
    for (std::size_t b = 0; b < ids.size(); ++b) {
      require(ids[b] < p.rows(), "embed_lookup: id out of range");
      const auto src = p.row(ids[b]);
      std::copy(src.begin(), src.end(), out.row(b).begin());
    }
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [&p, ids = std::vector<Index>(ids.begin(), ids.end())](Tape&, Gradients& grads, const Tensor& g) {
        auto& entry = grads.entry(p);
        for (std::size_t b = 0; b < ids.size(); ++b) {
          auto dst = entry.row(ids[b]);
          const auto src = g.row(b);
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      };
    }
    return push(Op::EmbedLookup, std::move(out), std::move(back));
  }

  // Row b is the sum of the table rows listed in ids[b]; an empty list gives
  // a zero row. The id spans must outlive the tape.
  Var embed_sum(std::string_view table, std::vector<std::span<const Index>> ids) {
    const Parameter& p = params_.get(table);
    Tensor out(ids.size(), p.cols());
    std::vector<Index> sorted;
    for (std::size_t b = 0; b < ids.size(); ++b) {
      auto dst = out.row(b);
      // Ascending id order makes the sum independent of list order, bit for bit.
      sorted.assign(ids[b].begin(), ids[b].end());
      std::sort(sorted.begin(), sorted.end());
      for (Index id : sorted) {
        require(id < p.rows(), "embed_sum: id out of range");
        const auto src = p.row(id);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [&p, ids = std::move(ids)](Tape&, Gradients& grads, const Tensor& g) {
        auto& entry = grads.entry(p);
        for (std::size_t b = 0; b < ids.size(); ++b) {
          const auto src = g.row(b);
          for (Index id : ids[b]) {
            auto dst = entry.row(id);
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
        }
      };
    }
    return push(Op::EmbedSum, std::move(out), std::move(back));
  }

  Var hadamard(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require(x.rows == y.rows && x.cols == y.cols, "hadamard: shape mismatch");
    Tensor out(x.rows, x.cols);
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] = x.data[k] * y.data[k];
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [a, b](Tape& tape, Gradients&, const Tensor& g) {
        const Tensor& x = tape.value(a);
        const Tensor& y = tape.value(b);
        auto& gx = tape.grad(a);
        auto& gy = tape.grad(b);
        for (std::size_t k = 0; k < g.data.size(); ++k) {
          gx[k] += g.data[k] * y.data[k];
          gy[k] += g.data[k] * x.data[k];
        }
      };
    }
    return push(Op::Hadamard, std::move(out), std::move(back));
  }

  Var concat(std::initializer_list<Var> parts) { return concat(std::vector<Var>(parts)); }

  Var concat(std::vector<Var> parts) {
    require(!parts.empty(), "concat: no inputs");
    const std::size_t rows = value(parts[0]).rows;
    std::size_t cols = 0;
    for (Var v : parts) {
      require(value(v).rows == rows, "concat: row count mismatch");
      cols += value(v).cols;
    }
    Tensor out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      auto dst = out.row(r).begin();
      for (Var v : parts) {
        const auto src = value(v).row(r);
        dst = std::copy(src.begin(), src.end(), dst);
      }
    }
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [parts = std::move(parts)](Tape& tape, Gradients&, const Tensor& g) {
        std::size_t offset = 0;
        for (Var v : parts) {
          const std::size_t width = tape.value(v).cols;
          auto& gv = tape.grad(v);
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < width; ++c) gv[r * width + c] += g.at(r, offset + c);
          }
          offset += width;
        }
      };
    }
    return push(Op::Concat, std::move(out), std::move(back));
  }

  // y = x W^T + b with W stored out x in and b stored 1 x out.
  Var dense(Var input, std::string_view weight, std::string_view bias) {
    const Parameter& w = params_.get(weight);
    const Parameter& bb = params_.get(bias);
    const Tensor& x = value(input);
    require(x.cols == w.cols(), "dense: input width does not match weight");
    require(bb.rows() == 1 && bb.cols() == w.rows(), "dense: bias shape mismatch");
    Tensor out(x.rows, w.rows());
    const auto wv = w.values();
    const auto bv = bb.values();
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto xr = x.row(r);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        double acc = 0.0;
        const float* wr = wv.data() + o * w.cols();
        for (std::size_t i = 0; i < w.cols(); ++i) acc += static_cast<double>(wr[i]) * xr[i];
        out.at(r, o) = acc + static_cast<double>(bv[o]);
      }
    }
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [input, &w, &bb](Tape& tape, Gradients& grads, const Tensor& g) {
        const Tensor& x = tape.value(input);
        auto& gx = tape.grad(input);
        const auto wv = w.values();
        std::vector<double> dw(w.size(), 0.0);
        std::vector<double> db(w.rows(), 0.0);
        for (std::size_t r = 0; r < g.rows; ++r) {
          const auto xr = x.row(r);
          for (std::size_t o = 0; o < w.rows(); ++o) {
            const double go = g.at(r, o);
            db[o] += go;
            const float* wr = wv.data() + o * w.cols();
            for (std::size_t i = 0; i < w.cols(); ++i) {
              dw[o * w.cols() + i] += go * xr[i];
              gx[r * x.cols + i] += go * static_cast<double>(wr[i]);
            }
          }
        }
        auto& wg = grads.entry(w);
        for (std::size_t o = 0; o < w.rows(); ++o) {
          auto dst = wg.row(o);
          for (std::size_t i = 0; i < w.cols(); ++i) dst[i] += dw[o * w.cols() + i];
        }
        auto dst = grads.entry(bb).row(0);
        for (std::size_t o = 0; o < w.rows(); ++o) dst[o] += db[o];
      };
    }
    return push(Op::Dense, std::move(out), std::move(back));
  }

  Var relu(Var input) {
    const Tensor& x = value(input);
    Tensor out(x.rows, x.cols);
    for (std::size_t k = 0; k < x.data.size(); ++k) out.data[k] = x.data[k] > 0.0 ? x.data[k] : 0.0;
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [input](Tape& tape, Gradients&, const Tensor& g) {
        const Tensor& x = tape.value(input);
        auto& gx = tape.grad(input);
        for (std::size_t k = 0; k < g.data.size(); ++k) {
          if (x.data[k] > 0.0) gx[k] += g.data[k];
        }
      };
    }
    Var v = push(Op::Relu, std::move(out), std::move(back));
    nodes_[v.id].inputs = {input};
    return v;
  }

  Var sigmoid(Var input) {
    const Tensor& x = value(input);
    Tensor out(x.rows, x.cols);
    // Kept strictly inside (0, 1) even where the double result saturates.
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
    for (std::size_t k = 0; k < x.data.size(); ++k) out.data[k] = std::clamp(camf::sigmoid(x.data[k]), lo, hi);
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [input, self = Var{nodes_.size()}](Tape& tape, Gradients&, const Tensor& g) {
        const Tensor& y = tape.value(self);
        auto& gx = tape.grad(input);
        for (std::size_t k = 0; k < g.data.size(); ++k) gx[k] += g.data[k] * y.data[k] * (1.0 - y.data[k]);
      };
    }
    return push(Op::Sigmoid, std::move(out), std::move(back));
  }

  // Row b pools entity row b with the attribute rows ids[b] of `table`.
  Var pairwise_pool(Var entity, std::string_view table, std::vector<std::span<const Index>> ids) {
    const Parameter& p = params_.get(table);
    const Tensor& e = value(entity);
    require(e.rows == ids.size(), "pairwise_pool: batch size mismatch");
    require(e.cols == p.cols(), "pairwise_pool: dimension mismatch");
    Tensor out(e.rows, e.cols);
    std::vector<double> attr_values;
    std::vector<std::span<const double>> attrs;
    std::vector<Index> sorted;
    for (std::size_t b = 0; b < e.rows; ++b) {
      sorted.assign(ids[b].begin(), ids[b].end());
      std::sort(sorted.begin(), sorted.end());
      attr_values.assign(sorted.size() * e.cols, 0.0);
      attrs.clear();
      for (std::size_t t = 0; t < sorted.size(); ++t) {
        require(sorted[t] < p.rows(), "pairwise_pool: id out of range");
        const auto src = p.row(sorted[t]);
        std::copy(src.begin(), src.end(), attr_values.begin() + static_cast<std::ptrdiff_t>(t * e.cols));
      }
      for (std::size_t t = 0; t < ids[b].size(); ++t) {
        attrs.emplace_back(attr_values.data() + t * e.cols, e.cols);
      }
      pairwise_pool_into(e.row(b), attrs, out.row(b));
    }
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      // d/de = s, d/dg_t = e + s - g_t; the empty-list fallback passes g through.
      back = [entity, &p, ids = std::move(ids)](Tape& tape, Gradients& grads, const Tensor& g) {
        const Tensor& e = tape.value(entity);
        auto& ge = tape.grad(entity);
        auto& entry = grads.entry(p);
        std::vector<double> s(e.cols);
        for (std::size_t b = 0; b < e.rows; ++b) {
          const auto gr = g.row(b);
          if (ids[b].empty()) {
            for (std::size_t k = 0; k < e.cols; ++k) ge[b * e.cols + k] += gr[k];
            continue;
          }
          std::fill(s.begin(), s.end(), 0.0);
          for (Index id : ids[b]) {
            const auto src = p.row(id);
            for (std::size_t k = 0; k < e.cols; ++k) s[k] += src[k];
          }
          const auto er = e.row(b);
          for (std::size_t k = 0; k < e.cols; ++k) ge[b * e.cols + k] += gr[k] * s[k];
          for (Index id : ids[b]) {
            const auto src = p.row(id);
            auto dst = entry.row(id);
            for (std::size_t k = 0; k < e.cols; ++k) dst[k] += gr[k] * (er[k] + s[k] - src[k]);
          }
        }
      };
    }
    return push(Op::PairwisePool, std::move(out), std::move(back));
  }

  // Row-wise alpha * shared + (1 - alpha) * embedded; alpha is rows x 1.
  Var merge(Var shared, Var embedded, Var alpha) {
    const Tensor& s = value(shared);
    const Tensor& e = value(embedded);
    const Tensor& a = value(alpha);
    require(s.rows == e.rows && s.cols == e.cols, "merge: shape mismatch");
    require(a.rows == s.rows && a.cols == 1, "merge: alpha must be rows x 1");
    Tensor out(s.rows, s.cols);
    for (std::size_t r = 0; r < s.rows; ++r) {
      const auto m = merge_shared(s.row(r), e.row(r), a.data[r]);
      std::copy(m.begin(), m.end(), out.row(r).begin());
    }
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [shared, embedded, alpha](Tape& tape, Gradients&, const Tensor& g) {
        const Tensor& s = tape.value(shared);
        const Tensor& e = tape.value(embedded);
        const Tensor& a = tape.value(alpha);
        auto& gs = tape.grad(shared);
        auto& ge = tape.grad(embedded);
        auto& ga = tape.grad(alpha);
        for (std::size_t r = 0; r < s.rows; ++r) {
          const double w = a.data[r];
          for (std::size_t k = 0; k < s.cols; ++k) {
            const double go = g.at(r, k);
            gs[r * s.cols + k] += w * go;
            ge[r * s.cols + k] += (1.0 - w) * go;
            ga[r] += go * (s.at(r, k) - e.at(r, k));
          }
        }
      };
    }
    return push(Op::Merge, std::move(out), std::move(back));
  }

  // Mean binary log loss of probabilities (rows x 1) against labels. Predictions
  // are clamped to [1e-7, 1 - 1e-7]; a clamped prediction has zero gradient.
  Var log_loss(Var prediction, std::span<const double> labels) {
    const Tensor& p = value(prediction);
    require(p.cols == 1 && p.rows == labels.size() && p.rows > 0, "log_loss: prediction/label shape mismatch");
    double total = 0.0;
    for (std::size_t r = 0; r < p.rows; ++r) {
      const double q = std::clamp(p.data[r], kProbabilityClamp, 1.0 - kProbabilityClamp);
      total += -(labels[r] * std::log(q) + (1.0 - labels[r]) * std::log(1.0 - q));
    }
    Tensor out(1, 1, total / static_cast<double>(p.rows));
    std::function<void(Tape&, Gradients&, const Tensor&)> back;
    if (record_) {
      back = [prediction, labels = std::vector<double>(labels.begin(), labels.end())](Tape& tape, Gradients&,
                                                                                      const Tensor& g) {
        const Tensor& p = tape.value(prediction);
        auto& gp = tape.grad(prediction);
        const double scale = g.data[0] / static_cast<double>(p.rows);
        for (std::size_t r = 0; r < p.rows; ++r) {
          const double q = p.data[r];
          if (q < kProbabilityClamp || q > 1.0 - kProbabilityClamp) continue;
          gp[r] += scale * (-(labels[r] / q) + (1.0 - labels[r]) / (1.0 - q));
        }
      };
    }
    return push(Op::LogLoss, std::move(out), std::move(back));
  }

  // Accumulates d(output)/d(parameter) into grads. output must be 1 x 1.
  void backward(Var output, Gradients& grads) {
    require(record_, "backward on a tape created without gradient recording");
    require(value(output).rows == 1 && value(output).cols == 1, "backward needs a scalar output");
    grads_.assign(nodes_.size(), {});
    for (std::size_t k = 0; k <= output.id; ++k) grads_[k].assign(nodes_[k].value.data.size(), 0.0);
    grads_[output.id][0] = 1.0;
    for (std::size_t k = output.id + 1; k-- > 0;) {
      Node& node = nodes_[k];
      if (!node.backward) continue;
      Tensor g(node.value.rows, node.value.cols);
      g.data = std::move(grads_[k]);
      if (corruption_ && corruption_->first == node.op) {
        for (auto& x : g.data) x *= corruption_->second;
      }
      node.backward(*this, grads, g);
    }
    grads_.clear();
  }

  // Sign pattern of every ReLU input; finite-difference checks use it to detect
  // perturbations that cross a kink.
  std::vector<bool> relu_pattern() const {
    std::vector<bool> pattern;
    for (const auto& node : nodes_) {
      if (node.op != Op::Relu) continue;
      for (double x : value(node.inputs[0]).data) pattern.push_back(x > 0.0);
    }
    return pattern;
  }

 private:
  struct Node {
    Op op;
    Tensor value;
    std::function<void(Tape&, Gradients&, const Tensor&)> backward;
    std::vector<Var> inputs;
  };

  Var push(Op op, Tensor value, std::function<void(Tape&, Gradients&, const Tensor&)> backward) {
    nodes_.push_back(Node{op, std::move(value), std::move(backward), {}});
    return Var{nodes_.size() - 1};
  }

  std::vector<double>& grad(Var v) { return grads_[v.id]; }

  const ParameterStore& params_;
  bool record_;
  std::deque<Node> nodes_;  // value() references survive later pushes
  std::vector<std::vector<double>> grads_;
  std::optional<std::pair<Op, double>> corruption_;
};

}  // namespace camf
