#pragma once

// Leave-one-out ranking metrics: the held-out positive is ranked against its
// 99 sampled negatives and HR@k / NDCG@k are averaged over users.

#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/models.hpp"
#include "camf/parameters.hpp"

namespace camf {

inline constexpr int kTopK = 10;

struct EvalReport {
  double hr_at_10 = 0.0;
  double ndcg_at_10 = 0.0;
  std::vector<int> per_user_ranks;
};

// 1 + number of other items scoring at least as high as the positive. Ties
// count against the positive, so a constant scorer ranks it last.
inline int rank_position(std::span<const double> scores, std::size_t positive_index) {
  require(positive_index < scores.size(), "positive index out of range");
  const double target = scores[positive_index];
  if (!std::isfinite(target)) throw EvaluationError("non-finite score for the positive item");
  int rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (!std::isfinite(scores[j])) throw EvaluationError("non-finite score at position " + std::to_string(j));
    if (j != positive_index && scores[j] >= target) ++rank;
  }
  return rank;
}

inline double hr_at_k(int rank, int k = kTopK) {
  require(rank >= 1, "rank must be at least 1");
  return rank <= k ? 1.0 : 0.0;
}

inline double ndcg_at_k(int rank, int k = kTopK) {
  require(rank >= 1, "rank must be at least 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

// Averages over ranks in user order.
inline EvalReport summarize_ranks(std::vector<int> ranks) {
  EvalReport report;
  double hr = 0.0;
  double ndcg = 0.0;
  for (int r : ranks) {
    hr += hr_at_k(r);
    ndcg += ndcg_at_k(r);
  }
  if (!ranks.empty()) {
    report.hr_at_10 = hr / static_cast<double>(ranks.size());
    report.ndcg_at_10 = ndcg / static_cast<double>(ranks.size());
  }
  report.per_user_ranks = std::move(ranks);
  return report;
}

// scorer(user, items, out) writes one score per item. Items are passed as
// [positive, neg_1, ..., neg_99].
using Scorer = std::function<void(Index, std::span<const Index>, std::span<double>)>;

inline EvalReport evaluate(const SplitDataset& split, const Scorer& scorer) {
  std::vector<int> ranks(split.num_users());
  std::vector<Index> items(1 + kTestNegatives);
  std::vector<double> scores(items.size());
  for (Index u = 0; u < split.num_users(); ++u) {
    const auto& tc = split.test_case(u);
    items[0] = tc.positive;
    std::copy(tc.negatives.begin(), tc.negatives.end(), items.begin() + 1);
    scorer(u, items, scores);
    ranks[u] = rank_position(scores, 0);
  }
  return summarize_ranks(std::move(ranks));
}

inline EvalReport evaluate(const ModelConfig& config, const ParameterStore& params, const SplitDataset& split,
                           const AttributeCatalog& catalog) {
  std::vector<Index> users;
  return evaluate(split, [&](Index u, std::span<const Index> items, std::span<double> out) {
    users.assign(items.size(), u);
    const auto s = score_batch(config, params, catalog, users, items);
    std::copy(s.begin(), s.end(), out.begin());
  });
}

// user<TAB>rank, one line per user.
inline void write_rank_dump(std::ostream& out, const EvalReport& report) {
  for (std::size_t u = 0; u < report.per_user_ranks.size(); ++u) out << u << '\t' << report.per_user_ranks[u] << '\n';
}

}  // namespace camf
