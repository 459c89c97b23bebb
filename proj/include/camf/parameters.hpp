#pragma once

// Named float32 parameter matrices with Adam moment buffers, row-sparse
// gradient buffers, Gaussian initialization, the lazy Adam update and the
// binary checkpoint format.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/random.hpp"

namespace camf {

class Parameter {
 public:
  Parameter(std::string name, std::size_t rows, std::size_t cols)
      : name_(std::move(name)),
        rows_(rows),
        cols_(cols),
        values_(rows * cols, 0.0f),
        first_moment_(rows * cols, 0.0f),
        second_moment_(rows * cols, 0.0f) {
    require(rows > 0 && cols > 0, "parameter shape must be positive");
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }
  std::span<float> first_moment() noexcept { return first_moment_; }
  std::span<const float> first_moment() const noexcept { return first_moment_; }
  std::span<float> second_moment() noexcept { return second_moment_; }
  std::span<const float> second_moment() const noexcept { return second_moment_; }

  std::span<float> row(std::size_t r) {
    require(r < rows_, "parameter row out of range");
    return values().subspan(r * cols_, cols_);
  }
  std::span<const float> row(std::size_t r) const {
    require(r < rows_, "parameter row out of range");
    return values().subspan(r * cols_, cols_);
  }

  friend bool operator==(const Parameter&, const Parameter&) = default;

 private:
  std::string name_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<float> values_;
  std::vector<float> first_moment_;
  std::vector<float> second_moment_;
};

class ParameterStore {
 public:
  // The returned reference is invalidated by the next add().
  Parameter& add(std::string name, std::size_t rows, std::size_t cols) {
    require(!name.empty() && name.find_first_of(" \t\n") == std::string::npos, "parameter names must be non-empty tokens");
    require(index_.find(name) == index_.end(), "duplicate parameter name");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), rows, cols);
    return entries_.back();
  }

  const Parameter* find(std::string_view name) const {
    const auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  Parameter* find(std::string_view name) {
    const auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  const Parameter& get(std::string_view name) const {
    const auto* p = find(name);
    if (!p) throw ContractViolation("unknown parameter " + std::string(name));
    return *p;
  }
  Parameter& get(std::string_view name) {
    auto* p = find(name);
    if (!p) throw ContractViolation("unknown parameter " + std::string(name));
    return *p;
  }

  std::span<const Parameter> entries() const noexcept { return entries_; }
  std::span<Parameter> entries() noexcept { return entries_; }

  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t step) noexcept { step_ = step; }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.step_ == b.step_ && a.entries_ == b.entries_;
  }

 private:
  std::vector<Parameter> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::uint64_t step_ = 0;
};

// Gradient of one parameter, stored only for the rows that were touched.
// Accumulation is in float64.
class RowGradient {
 public:
  RowGradient(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  // Zero-initialized on first access. The span is invalidated by the next
  // insertion of a new row.
  std::span<double> row(std::size_t r) {
    require(r < rows_, "gradient row out of range");
    auto [it, inserted] = slot_.try_emplace(r, touched_.size());
    if (inserted) {
      touched_.push_back(r);
      data_.resize(data_.size() + cols_, 0.0);
    }
    return std::span<double>(data_).subspan(it->second * cols_, cols_);
  }

  // Rows in first-touch order.
  std::span<const std::size_t> touched_rows() const noexcept { return touched_; }
  std::span<const double> slot(std::size_t k) const { return std::span<const double>(data_).subspan(k * cols_, cols_); }

  double at(std::size_t r, std::size_t c) const {
    const auto it = slot_.find(r);
    return it == slot_.end() ? 0.0 : data_[it->second * cols_ + c];
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::unordered_map<std::size_t, std::size_t> slot_;
  std::vector<std::size_t> touched_;
  std::vector<double> data_;
};

class Gradients {
 public:
  RowGradient& entry(const Parameter& p) {
    auto it = entries_.find(p.name());
    if (it == entries_.end()) it = entries_.emplace(p.name(), RowGradient(p.rows(), p.cols())).first;
    return it->second;
  }

  const RowGradient* find(std::string_view name) const {
    const auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }
  std::size_t size() const noexcept { return entries_.size(); }
  const auto& entries() const noexcept { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::map<std::string, RowGradient, std::less<>> entries_;
};

// ---------------------------------------------------------------------------
// Initialization

inline bool is_bias(std::string_view name) { return name.ends_with(".bias"); }

// Fills every non-bias parameter with i.i.d. N(0, stddev^2), each drawing from
// its own stream keyed by (seed, name); biases are zeroed.
inline void init_gaussian(ParameterStore& store, std::uint64_t seed, double stddev) {
  for (auto& p : store.entries()) {
    auto values = p.values();
    if (is_bias(p.name())) {
      std::fill(values.begin(), values.end(), 0.0f);
      continue;
    }
    Rng rng(mix_seed(seed, hash_name(p.name())));
    for (auto& v : values) v = static_cast<float>(stddev * rng.normal());
  }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam applied only to the rows present in `grads`; moments of
// untouched rows are left as they are. The step counter advances once per call.
inline void adam_step(ParameterStore& store, const Gradients& grads, const AdamOptions& opt) {
  require(opt.beta1 > 0.0 && opt.beta1 < 1.0 && opt.beta2 > 0.0 && opt.beta2 < 1.0, "Adam betas must lie in (0, 1)");
  for (const auto& [name, grad] : grads.entries()) {
    for (std::size_t k = 0; k < grad.touched_rows().size(); ++k) {
      for (double g : grad.slot(k)) {
        if (!std::isfinite(g)) {
          throw TrainingError("non-finite gradient in " + name + " row " + std::to_string(grad.touched_rows()[k]));
        }
      }
    }
  }

  const std::uint64_t t = store.step() + 1;
  const double correction1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (const auto& [name, grad] : grads.entries()) {
    Parameter& p = store.get(name);
    require(grad.rows() == p.rows() && grad.cols() == p.cols(), "gradient shape does not match parameter");
    auto values = p.values();
    auto m = p.first_moment();
    auto v = p.second_moment();
    for (std::size_t k = 0; k < grad.touched_rows().size(); ++k) {
      const std::size_t base = grad.touched_rows()[k] * p.cols();
      const auto g_row = grad.slot(k);
      for (std::size_t c = 0; c < p.cols(); ++c) {
        const double g = g_row[c];
        const double m_new = opt.beta1 * m[base + c] + (1.0 - opt.beta1) * g;
        const double v_new = opt.beta2 * v[base + c] + (1.0 - opt.beta2) * g * g;
        m[base + c] = static_cast<float>(m_new);
        v[base + c] = static_cast<float>(v_new);
        const double m_hat = m_new / correction1;
        const double v_hat = v_new / correction2;
        values[base + c] =
            static_cast<float>(values[base + c] - opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon));
      }
    }
  }
  store.set_step(t);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   camf-checkpoint 1
//   meta <key> <value>            (zero or more)
//   step <n>
//   entries <k>
//   <name> <rows> <cols> <offset> (k lines; moments appear as name/adam_m, name/adam_v)
//   end
//   <raw little-endian float32 blocks in manifest order; offsets relative to here>

using CheckpointMetadata = std::vector<std::pair<std::string, std::string>>;

struct Checkpoint {
  ParameterStore params;
  CheckpointMetadata metadata;

  const std::string* meta(std::string_view key) const {
    for (const auto& [k, v] : metadata) {
      if (k == key) return &v;
    }
    return nullptr;
  }
};

namespace detail {

inline void write_floats_le(std::ostream& out, std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto bits = std::bit_cast<std::uint32_t>(values[k]);
    for (int b = 0; b < 4; ++b) bytes[k * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void read_floats_le(const std::vector<char>& blob, std::size_t offset, std::span<float> values) {
  if (offset + values.size() * 4 > blob.size()) throw LoadError("checkpoint block exceeds file size");
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + k * 4 + b])) << (8 * b);
    }
    values[k] = std::bit_cast<float>(bits);
  }
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const ParameterStore& store, const CheckpointMetadata& metadata = {}) {
  out << "camf-checkpoint 1\n";
  for (const auto& [k, v] : metadata) {
    require(k.find_first_of(" \t\n") == std::string::npos && v.find('\n') == std::string::npos,
            "checkpoint metadata must be single-line tokens");
    out << "meta " << k << ' ' << v << '\n';
  }
  out << "step " << store.step() << '\n';
  out << "entries " << store.entries().size() * 3 << '\n';
  std::size_t offset = 0;
  for (const auto& p : store.entries()) {
    for (const char* suffix : {"", "/adam_m", "/adam_v"}) {
      out << p.name() << suffix << ' ' << p.rows() << ' ' << p.cols() << ' ' << offset << '\n';
      offset += p.size() * 4;
    }
  }
  out << "end\n";
  for (const auto& p : store.entries()) {
    detail::write_floats_le(out, p.values());
    detail::write_floats_le(out, p.first_moment());
    detail::write_floats_le(out, p.second_moment());
  }
  if (!out) throw IoError("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& path = "<checkpoint>") {
  detail::LineReader reader(in, path);
  reader.expect("camf-checkpoint 1");
  Checkpoint result;
  std::string_view line = reader.next();
  while (line.starts_with("meta ")) {
    const auto rest = line.substr(5);
    const auto space = rest.find(' ');
    if (space == std::string_view::npos) reader.fail("expected 'meta <key> <value>'");
    result.metadata.emplace_back(std::string(rest.substr(0, space)), std::string(rest.substr(space + 1)));
    line = reader.next();
  }
  const auto step_fields = detail::split(line, " ");
  if (step_fields.size() != 2 || step_fields[0] != "step") reader.fail("expected 'step <n>'");
  const auto step = detail::parse_field<std::uint64_t>(step_fields[1], path, reader.number(), "step");
  const auto count = reader.keyed<std::size_t>("entries");
  if (count % 3 != 0) reader.fail("entry count must be a multiple of 3");

  struct Block {
    std::string name;
    std::size_t rows, cols, offset;
  };
  std::vector<Block> blocks;
  for (std::size_t k = 0; k < count; ++k) {
    const auto f = detail::split(reader.next(), " ");
    if (f.size() != 4) reader.fail("expected '<name> <rows> <cols> <offset>'");
    blocks.push_back({std::string(f[0]), detail::parse_field<std::size_t>(f[1], path, reader.number(), "rows"),
                      detail::parse_field<std::size_t>(f[2], path, reader.number(), "cols"),
                      detail::parse_field<std::size_t>(f[3], path, reader.number(), "offset")});
  }
  reader.expect("end");
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  for (std::size_t k = 0; k < blocks.size(); k += 3) {
    const auto& b = blocks[k];
    if (blocks[k + 1].name != b.name + "/adam_m" || blocks[k + 2].name != b.name + "/adam_v") {
      throw LoadError("checkpoint entry " + b.name + " is missing its moment blocks");
    }
    Parameter& p = result.params.add(b.name, b.rows, b.cols);
    detail::read_floats_le(blob, b.offset, p.values());
    detail::read_floats_le(blob, blocks[k + 1].offset, p.first_moment());
    detail::read_floats_le(blob, blocks[k + 2].offset, p.second_moment());
  }
  result.params.set_step(step);
  return result;
}

}  // namespace camf
