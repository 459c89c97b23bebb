#pragma once

// Dataset ingestion: MovieLens-1M and a generic tab-separated layout, attribute
// encoding, popularity buckets, the leave-one-out split, and the on-disk formats
// for prepared data.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "camf/errors.hpp"
#include "camf/random.hpp"

namespace camf {

using Index = std::uint32_t;

inline constexpr std::size_t kTestNegatives = 99;

struct Interaction {
  Index user = 0;
  Index item = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Unique (user, item) pairs in dense id space, sorted by (user, item), with a
// CSR view of each user's items for O(log n) membership tests.
class InteractionSet {
 public:
  InteractionSet() = default;

  InteractionSet(Index num_users, Index num_items, std::vector<Interaction> interactions)
      : num_users_(num_users), num_items_(num_items), interactions_(std::move(interactions)) {
    for (const auto& x : interactions_) {
      if (x.user >= num_users_ || x.item >= num_items_) {
        throw LoadError("interaction (" + std::to_string(x.user) + ", " + std::to_string(x.item) +
                        ") outside id range");
      }
    }
    std::sort(interactions_.begin(), interactions_.end(), [](const Interaction& a, const Interaction& b) {
      return a.user != b.user ? a.user < b.user : a.item < b.item;
    });
    offsets_.assign(static_cast<std::size_t>(num_users_) + 1, 0);
    items_.reserve(interactions_.size());
    for (std::size_t k = 0; k < interactions_.size(); ++k) {
      const auto& x = interactions_[k];
      if (k > 0 && interactions_[k - 1].user == x.user && interactions_[k - 1].item == x.item) {
        throw LoadError("duplicate interaction (" + std::to_string(x.user) + ", " + std::to_string(x.item) + ")");
      }
      ++offsets_[x.user + 1];
      items_.push_back(x.item);
    }
    for (std::size_t u = 0; u < num_users_; ++u) offsets_[u + 1] += offsets_[u];
  }

  Index num_users() const noexcept { return num_users_; }
  Index num_items() const noexcept { return num_items_; }
  std::size_t size() const noexcept { return interactions_.size(); }
  std::span<const Interaction> interactions() const noexcept { return interactions_; }

  // Sorted item ids of user u.
  std::span<const Index> items_of(Index u) const {
    require(u < num_users_, "user index out of range");
    return std::span<const Index>(items_).subspan(offsets_[u], offsets_[u + 1] - offsets_[u]);
  }

  bool contains(Index u, Index i) const {
    const auto items = items_of(u);
    return std::binary_search(items.begin(), items.end(), i);
  }

  double sparsity() const noexcept {
    const double cells = static_cast<double>(num_users_) * static_cast<double>(num_items_);
    return cells > 0 ? 1.0 - static_cast<double>(size()) / cells : 0.0;
  }

  friend bool operator==(const InteractionSet& a, const InteractionSet& b) {
    return a.num_users_ == b.num_users_ && a.num_items_ == b.num_items_ && a.interactions_ == b.interactions_;
  }

 private:
  Index num_users_ = 0;
  Index num_items_ = 0;
  std::vector<Interaction> interactions_;
  std::vector<std::size_t> offsets_{0};
  std::vector<Index> items_;
};

// A contiguous block of attribute ids belonging to one raw field
// (e.g. "gender" or "genre").
struct AttributeField {
  std::string name;
  Index offset = 0;
  Index size = 0;

  friend bool operator==(const AttributeField&, const AttributeField&) = default;
};

class AttributeCatalog {
 public:
  AttributeCatalog() = default;

  AttributeCatalog(std::vector<std::vector<Index>> user_attrs, std::vector<std::vector<Index>> item_attrs,
                   Index user_vocab_size, Index item_vocab_size, std::vector<AttributeField> user_fields = {},
                   std::vector<AttributeField> item_fields = {})
      : user_attrs_(std::move(user_attrs)),
        item_attrs_(std::move(item_attrs)),
        user_vocab_(user_vocab_size),
        item_vocab_(item_vocab_size),
        user_fields_(std::move(user_fields)),
        item_fields_(std::move(item_fields)) {
    validate(user_attrs_, user_vocab_, "user");
    validate(item_attrs_, item_vocab_, "item");
  }

  Index num_users() const noexcept { return static_cast<Index>(user_attrs_.size()); }
  Index num_items() const noexcept { return static_cast<Index>(item_attrs_.size()); }
  Index user_vocab_size() const noexcept { return user_vocab_; }
  Index item_vocab_size() const noexcept { return item_vocab_; }
  const std::vector<AttributeField>& user_fields() const noexcept { return user_fields_; }
  const std::vector<AttributeField>& item_fields() const noexcept { return item_fields_; }

  std::span<const Index> user_attrs(Index u) const {
    require(u < user_attrs_.size(), "user index out of range");
    return user_attrs_[u];
  }
  std::span<const Index> item_attrs(Index i) const {
    require(i < item_attrs_.size(), "item index out of range");
    return item_attrs_[i];
  }

  friend bool operator==(const AttributeCatalog&, const AttributeCatalog&) = default;

 private:
  static void validate(const std::vector<std::vector<Index>>& attrs, Index vocab, const char* side) {
    for (std::size_t e = 0; e < attrs.size(); ++e) {
      if (attrs[e].empty()) throw LoadError(std::string(side) + " " + std::to_string(e) + " has no attributes");
      for (Index id : attrs[e]) {
        if (id >= vocab) {
          throw LoadError(std::string(side) + " " + std::to_string(e) + " attribute id " + std::to_string(id) +
                          " exceeds vocabulary size " + std::to_string(vocab));
        }
      }
    }
  }

  std::vector<std::vector<Index>> user_attrs_;
  std::vector<std::vector<Index>> item_attrs_;
  Index user_vocab_ = 0;
  Index item_vocab_ = 0;
  std::vector<AttributeField> user_fields_;
  std::vector<AttributeField> item_fields_;
};

struct TestCase {
  Index positive = 0;
  std::vector<Index> negatives;

  friend bool operator==(const TestCase&, const TestCase&) = default;
};

// Train interactions plus one held-out positive and 99 sampled negatives per user.
class SplitDataset {
 public:
  SplitDataset() = default;

  SplitDataset(InteractionSet train, std::vector<TestCase> test) : train_(std::move(train)), test_(std::move(test)) {
    if (test_.size() != train_.num_users()) throw SplitError("test set must hold exactly one case per user");
    for (Index u = 0; u < num_users(); ++u) {
      const auto& tc = test_[u];
      if (tc.positive >= num_items()) throw SplitError("test positive out of range for user " + std::to_string(u));
      if (train_.contains(u, tc.positive)) {
        throw SplitError("test positive of user " + std::to_string(u) + " also appears in train");
      }
      if (tc.negatives.size() != kTestNegatives) {
        throw SplitError("user " + std::to_string(u) + " has " + std::to_string(tc.negatives.size()) +
                         " test negatives, expected 99");
      }
      std::vector<Index> sorted = tc.negatives;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw SplitError("duplicate test negative for user " + std::to_string(u));
      }
      for (Index j : sorted) {
        if (j >= num_items() || observed(u, j)) {
          throw SplitError("test negative " + std::to_string(j) + " of user " + std::to_string(u) + " is invalid");
        }
      }
    }
  }

  const InteractionSet& train() const noexcept { return train_; }
  std::span<const TestCase> test() const noexcept { return test_; }
  const TestCase& test_case(Index u) const {
    require(u < test_.size(), "user index out of range");
    return test_[u];
  }
  Index num_users() const noexcept { return train_.num_users(); }
  Index num_items() const noexcept { return train_.num_items(); }

  // Membership in the full interaction set (train plus the held-out positive).
  bool observed(Index u, Index i) const { return test_case(u).positive == i || train_.contains(u, i); }

  friend bool operator==(const SplitDataset&, const SplitDataset&) = default;

 private:
  InteractionSet train_;
  std::vector<TestCase> test_;
};

struct LoadedCorpus {
  InteractionSet interactions;
  AttributeCatalog attributes;
  std::vector<std::string> user_ids;  // raw id of each dense user index
  std::vector<std::string> item_ids;
};

// ---------------------------------------------------------------------------
// Buckets and derived popularity attributes

// floor((count - 1) / bucket_size): 1..size -> 0, size+1..2*size -> 1, ...
inline Index bucketize(std::uint64_t count, std::uint64_t bucket_size) {
  if (count == 0) throw std::domain_error("bucketize: count must be at least 1");
  if (bucket_size == 0) throw std::domain_error("bucketize: bucket size must be positive");
  return static_cast<Index>((count - 1) / bucket_size);
}

// Per-item sum of the total interaction counts of every user who interacted
// with the item.
inline std::vector<std::uint64_t> item_pin_counts(const InteractionSet& data) {
  std::vector<std::uint64_t> pins(data.num_items(), 0);
  for (Index u = 0; u < data.num_users(); ++u) {
    const auto items = data.items_of(u);
    for (Index i : items) pins[i] += items.size();
  }
  return pins;
}

inline std::vector<Index> item_pin_attribute(const InteractionSet& data, std::uint64_t bucket_size) {
  const auto pins = item_pin_counts(data);
  std::vector<Index> buckets(pins.size(), 0);
  for (std::size_t i = 0; i < pins.size(); ++i) buckets[i] = pins[i] == 0 ? 0 : bucketize(pins[i], bucket_size);
  return buckets;
}

// ---------------------------------------------------------------------------
// Text helpers

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

template <typename T>
std::optional<T> parse_number(std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) return std::nullopt;
  return value;
}

template <typename T>
T parse_field(std::string_view text, const std::string& path, std::size_t line, const char* what) {
  const auto value = parse_number<T>(text);
  if (!value) throw ParseError(path, line, std::string("non-numeric ") + what + " '" + std::string(text) + "'");
  return *value;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

// Calls fn(line, line_number) for each non-empty line; strips '\r'. Lines
// starting with '#' are skipped when skip_comments is set.
template <typename Fn>
void for_each_line(std::istream& in, bool skip_comments, Fn&& fn) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (skip_comments && line.front() == '#') continue;
    fn(std::string_view(line), number);
  }
}

struct RawTriple {
  std::string user;
  std::string item;
  std::int64_t timestamp;
};

// Removes duplicate (user, item) pairs keeping the earliest timestamp, then
// drops users with fewer than min_count distinct items.
inline std::vector<RawTriple> dedupe_and_filter(std::vector<RawTriple> raw, std::size_t min_count) {
  std::sort(raw.begin(), raw.end(), [](const RawTriple& a, const RawTriple& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.item != b.item) return a.item < b.item;
    return a.timestamp < b.timestamp;
  });
  raw.erase(std::unique(raw.begin(), raw.end(),
                        [](const RawTriple& a, const RawTriple& b) { return a.user == b.user && a.item == b.item; }),
            raw.end());
  std::vector<RawTriple> kept;
  kept.reserve(raw.size());
  for (std::size_t start = 0; start < raw.size();) {
    std::size_t end = start;
    while (end < raw.size() && raw[end].user == raw[start].user) ++end;
    if (end - start >= min_count) {
      for (std::size_t k = start; k < end; ++k) kept.push_back(std::move(raw[k]));
    }
    start = end;
  }
  return kept;
}

// Dense ids in the order given by `less` over the distinct raw ids.
template <typename Less>
std::map<std::string, Index, Less> assign_ids(const std::vector<std::string>& raw, Less less) {
  std::vector<std::string> distinct = raw;
  std::sort(distinct.begin(), distinct.end(), less);
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::map<std::string, Index, Less> ids(less);
  for (std::size_t k = 0; k < distinct.size(); ++k) ids.emplace(distinct[k], static_cast<Index>(k));
  return ids;
}

struct NumericLess {
  bool operator()(const std::string& a, const std::string& b) const {
    const auto x = parse_number<std::int64_t>(a);
    const auto y = parse_number<std::int64_t>(b);
    if (x && y) return *x < *y;
    return a < b;
  }
};

template <typename Map>
std::vector<std::string> invert(const Map& ids) {
  std::vector<std::string> out(ids.size());
  for (const auto& [raw, id] : ids) out[id] = raw;
  return out;
}

template <typename Map>
InteractionSet build_interactions(const std::vector<RawTriple>& triples, const Map& users, const Map& items) {
  std::vector<Interaction> out;
  out.reserve(triples.size());
  for (const auto& t : triples) out.push_back({users.at(t.user), items.at(t.item), t.timestamp});
  return InteractionSet(static_cast<Index>(users.size()), static_cast<Index>(items.size()), std::move(out));
}

inline void sort_unique(std::vector<Index>& ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MovieLens-1M

struct MovieLensOptions {
  // The published 1M release already guarantees 20 ratings per user.
  std::size_t min_user_interactions = 20;
};

// ratings: UserID::MovieID::Rating::Timestamp
// users:   UserID::Gender::Age::Occupation::Zip
// movies:  MovieID::Title::Genre|Genre|...
//
// Every rating is an implicit positive. User attributes are {gender, age,
// occupation}, item attributes the genre set.
inline LoadedCorpus parse_movielens(const std::string& ratings_path, const std::string& users_path,
                                    const std::string& items_path, const MovieLensOptions& options = {}) {
  std::vector<detail::RawTriple> raw;
  {
    auto in = detail::open_input(ratings_path);
    detail::for_each_line(in, false, [&](std::string_view line, std::size_t n) {
      const auto f = detail::split(line, "::");
      if (f.size() != 4) throw ParseError(ratings_path, n, "expected 4 '::'-separated fields, got " + std::to_string(f.size()));
      const auto user = detail::parse_field<std::int64_t>(f[0], ratings_path, n, "user id");
      const auto item = detail::parse_field<std::int64_t>(f[1], ratings_path, n, "movie id");
      if (!detail::parse_number<double>(f[2])) throw ParseError(ratings_path, n, "non-numeric rating");
      const auto ts = detail::parse_field<std::int64_t>(f[3], ratings_path, n, "timestamp");
      raw.push_back({std::to_string(user), std::to_string(item), ts});
    });
  }

  struct UserRecord {
    std::string gender;
    std::int64_t age;
    std::int64_t occupation;
  };
  std::unordered_map<std::string, UserRecord> user_records;
  {
    auto in = detail::open_input(users_path);
    detail::for_each_line(in, false, [&](std::string_view line, std::size_t n) {
      const auto f = detail::split(line, "::");
      if (f.size() != 5) throw ParseError(users_path, n, "expected 5 '::'-separated fields, got " + std::to_string(f.size()));
      const auto id = detail::parse_field<std::int64_t>(f[0], users_path, n, "user id");
      if (f[1].empty()) throw ParseError(users_path, n, "empty gender");
      UserRecord rec{std::string(f[1]), detail::parse_field<std::int64_t>(f[2], users_path, n, "age"),
                     detail::parse_field<std::int64_t>(f[3], users_path, n, "occupation")};
      user_records[std::to_string(id)] = std::move(rec);
    });
  }

  std::unordered_map<std::string, std::vector<std::string>> movie_genres;
  {
    auto in = detail::open_input(items_path);
    detail::for_each_line(in, false, [&](std::string_view line, std::size_t n) {
      // Titles may contain arbitrary bytes; only the first and last fields matter.
      const auto first = line.find("::");
      const auto last = line.rfind("::");
      if (first == std::string_view::npos || first == last) throw ParseError(items_path, n, "expected 3 '::'-separated fields");
      const auto id = detail::parse_field<std::int64_t>(line.substr(0, first), items_path, n, "movie id");
      std::vector<std::string> genres;
      for (auto g : detail::split(line.substr(last + 2), "|")) {
        if (!g.empty()) genres.emplace_back(g);
      }
      movie_genres[std::to_string(id)] = std::move(genres);
    });
  }

  auto triples = detail::dedupe_and_filter(std::move(raw), options.min_user_interactions);
  if (triples.empty()) throw LoadError("no ratings left after filtering " + ratings_path);

  std::vector<std::string> raw_users, raw_items;
  for (const auto& t : triples) {
    raw_users.push_back(t.user);
    raw_items.push_back(t.item);
  }
  const auto users = detail::assign_ids(raw_users, detail::NumericLess{});
  const auto items = detail::assign_ids(raw_items, detail::NumericLess{});

  // Field vocabularies over retained entities, each sorted by value.
  std::set<std::string> genders;
  std::set<std::int64_t> ages, occupations;
  for (const auto& [raw_id, id] : users) {
    const auto it = user_records.find(raw_id);
    if (it == user_records.end()) throw LoadError("user " + raw_id + " has no attributes in " + users_path);
    genders.insert(it->second.gender);
    ages.insert(it->second.age);
    occupations.insert(it->second.occupation);
  }
  std::set<std::string> genre_names;
  for (const auto& [raw_id, id] : items) {
    const auto it = movie_genres.find(raw_id);
    if (it == movie_genres.end() || it->second.empty()) {
      throw LoadError("movie " + raw_id + " has no attributes in " + items_path);
    }
    genre_names.insert(it->second.begin(), it->second.end());
  }

  auto rank_of = [](const auto& values, const auto& v) {
    return static_cast<Index>(std::distance(values.begin(), values.find(v)));
  };
  const auto g_size = static_cast<Index>(genders.size());
  const auto a_size = static_cast<Index>(ages.size());
  const auto o_size = static_cast<Index>(occupations.size());
  std::vector<AttributeField> user_fields{
      {"gender", 0, g_size}, {"age", g_size, a_size}, {"occupation", g_size + a_size, o_size}};
  std::vector<AttributeField> item_fields{{"genre", 0, static_cast<Index>(genre_names.size())}};

  std::vector<std::vector<Index>> user_attrs(users.size());
  for (const auto& [raw_id, id] : users) {
    const auto& rec = user_records.at(raw_id);
    user_attrs[id] = {rank_of(genders, rec.gender), g_size + rank_of(ages, rec.age),
                      g_size + a_size + rank_of(occupations, rec.occupation)};
  }
  std::vector<std::vector<Index>> item_attrs(items.size());
  for (const auto& [raw_id, id] : items) {
    for (const auto& g : movie_genres.at(raw_id)) item_attrs[id].push_back(rank_of(genre_names, g));
    detail::sort_unique(item_attrs[id]);
  }

  LoadedCorpus corpus;
  corpus.interactions = detail::build_interactions(triples, users, items);
  const Index genre_size = item_fields[0].size;
  corpus.attributes = AttributeCatalog(std::move(user_attrs), std::move(item_attrs), g_size + a_size + o_size,
                                       genre_size, std::move(user_fields), std::move(item_fields));
  corpus.user_ids = detail::invert(users);
  corpus.item_ids = detail::invert(items);
  return corpus;
}

// ---------------------------------------------------------------------------
// Generic tab-separated layout (Pinterest-shaped data)

struct GenericOptions {
  std::size_t min_user_interactions = 10;
  // Users are bucketed by their interaction count; 0 disables the attribute.
  std::uint64_t user_count_bucket = 40;
  // Items are bucketed by their weighted pin count; 0 disables the attribute.
  std::uint64_t item_pin_bucket = 50;
};

// interactions: raw_user<TAB>raw_item<TAB>timestamp
// attributes:   raw_id<TAB>attr_name (one line per attribute)
// category map: raw_category<TAB>main_category
//
// When a category map is given every attribute name is translated through it.
inline LoadedCorpus parse_generic(const std::string& interactions_path, const std::string& user_attr_path,
                                  const std::string& item_attr_path,
                                  const std::optional<std::string>& category_map_path = std::nullopt,
                                  const GenericOptions& options = {}) {
  std::vector<detail::RawTriple> raw;
  {
    auto in = detail::open_input(interactions_path);
    detail::for_each_line(in, true, [&](std::string_view line, std::size_t n) {
      const auto f = detail::split(line, "\t");
      if (f.size() != 3) throw ParseError(interactions_path, n, "expected 3 tab-separated fields, got " + std::to_string(f.size()));
      if (f[0].empty() || f[1].empty()) throw ParseError(interactions_path, n, "empty id");
      raw.push_back({std::string(f[0]), std::string(f[1]),
                     detail::parse_field<std::int64_t>(f[2], interactions_path, n, "timestamp")});
    });
  }

  std::optional<std::map<std::string, std::string>> category_map;
  if (category_map_path) {
    category_map.emplace();
    auto in = detail::open_input(*category_map_path);
    detail::for_each_line(in, true, [&](std::string_view line, std::size_t n) {
      const auto f = detail::split(line, "\t");
      if (f.size() != 2) throw ParseError(*category_map_path, n, "expected 2 tab-separated fields");
      auto [it, inserted] = category_map->emplace(std::string(f[0]), std::string(f[1]));
      if (!inserted && it->second != f[1]) {
        throw ParseError(*category_map_path, n, "category '" + std::string(f[0]) + "' mapped twice");
      }
    });
  }

  auto read_attrs = [&](const std::string& path) {
    std::map<std::string, std::vector<std::string>> attrs;
    auto in = detail::open_input(path);
    detail::for_each_line(in, true, [&](std::string_view line, std::size_t n) {
      const auto f = detail::split(line, "\t");
      if (f.size() != 2) throw ParseError(path, n, "expected 2 tab-separated fields");
      std::string name(f[1]);
      if (category_map) {
        const auto it = category_map->find(name);
        if (it == category_map->end()) {
          throw LoadError(path + ":" + std::to_string(n) + ": category '" + name + "' missing from category map");
        }
        name = it->second;
      }
      attrs[std::string(f[0])].push_back(std::move(name));
    });
    return attrs;
  };
  const auto raw_user_attrs = read_attrs(user_attr_path);
  const auto raw_item_attrs = read_attrs(item_attr_path);

  auto triples = detail::dedupe_and_filter(std::move(raw), options.min_user_interactions);
  if (triples.empty()) throw LoadError("no interactions left after filtering " + interactions_path);

  std::vector<std::string> raw_users, raw_items;
  for (const auto& t : triples) {
    raw_users.push_back(t.user);
    raw_items.push_back(t.item);
  }
  const auto users = detail::assign_ids(raw_users, std::less<std::string>{});
  const auto items = detail::assign_ids(raw_items, std::less<std::string>{});
  InteractionSet interactions = detail::build_interactions(triples, users, items);

  // Encodes one side: a "category" field from the attribute file followed by an
  // optional "pins" bucket field.
  auto encode = [](const auto& ids, const std::map<std::string, std::vector<std::string>>& named,
                   const std::vector<Index>* buckets, std::vector<AttributeField>& fields) {
    std::set<std::string> vocab;
    for (const auto& [raw_id, id] : ids) {
      const auto it = named.find(raw_id);
      if (it != named.end()) vocab.insert(it->second.begin(), it->second.end());
    }
    const auto category_size = static_cast<Index>(vocab.size());
    if (category_size > 0) fields.push_back({"category", 0, category_size});
    Index bucket_size = 0;
    if (buckets) {
      bucket_size = buckets->empty() ? 0 : *std::max_element(buckets->begin(), buckets->end()) + 1;
      fields.push_back({"pins", category_size, bucket_size});
    }
    std::vector<std::vector<Index>> attrs(ids.size());
    for (const auto& [raw_id, id] : ids) {
      const auto it = named.find(raw_id);
      if (it != named.end()) {
        for (const auto& name : it->second) {
          attrs[id].push_back(static_cast<Index>(std::distance(vocab.begin(), vocab.find(name))));
        }
      }
      if (buckets) attrs[id].push_back(category_size + (*buckets)[id]);
      detail::sort_unique(attrs[id]);
    }
    return std::pair{std::move(attrs), static_cast<Index>(category_size + bucket_size)};
  };

  std::vector<Index> user_buckets, item_buckets;
  if (options.user_count_bucket > 0) {
    for (Index u = 0; u < interactions.num_users(); ++u) {
      user_buckets.push_back(bucketize(interactions.items_of(u).size(), options.user_count_bucket));
    }
  }
  if (options.item_pin_bucket > 0) item_buckets = item_pin_attribute(interactions, options.item_pin_bucket);

  std::vector<AttributeField> user_fields, item_fields;
  auto [user_attrs, user_vocab] =
      encode(users, raw_user_attrs, options.user_count_bucket > 0 ? &user_buckets : nullptr, user_fields);
  auto [item_attrs, item_vocab] =
      encode(items, raw_item_attrs, options.item_pin_bucket > 0 ? &item_buckets : nullptr, item_fields);

  LoadedCorpus corpus;
  corpus.interactions = std::move(interactions);
  corpus.attributes = AttributeCatalog(std::move(user_attrs), std::move(item_attrs), user_vocab, item_vocab,
                                       std::move(user_fields), std::move(item_fields));
  corpus.user_ids = detail::invert(users);
  corpus.item_ids = detail::invert(items);
  return corpus;
}

// ---------------------------------------------------------------------------
// Leave-one-out split

// Holds out one uniformly chosen interaction per user and draws 99 distinct
// never-interacted items as its test negatives. Each user draws from its own
// stream mix_seed(seed, user), so the result does not depend on visit order.
inline SplitDataset leave_one_out_split(const InteractionSet& data, std::uint64_t seed) {
  std::vector<Interaction> train;
  train.reserve(data.size());
  std::vector<TestCase> test(data.num_users());

  for (Index u = 0; u < data.num_users(); ++u) {
    const auto items = data.items_of(u);
    if (items.size() < 2) {
      throw SplitError("user " + std::to_string(u) + " has " + std::to_string(items.size()) +
                       " interactions; leave-one-out needs at least 2");
    }
    const std::size_t candidates = data.num_items() - items.size();
    if (candidates < kTestNegatives) {
      throw SplitError("user " + std::to_string(u) + " has only " + std::to_string(candidates) +
                       " candidate negatives; 99 are required");
    }

    Rng rng(mix_seed(seed, u));
    const Index held_out = items[rng.uniform_below(items.size())];

    std::vector<Index> negatives;
    negatives.reserve(kTestNegatives);
    if (candidates * 4 < data.num_items()) {
      // Dense user: enumerate the complement and take a partial shuffle.
      std::vector<Index> pool;
      pool.reserve(candidates);
      for (Index i = 0, k = 0; i < data.num_items(); ++i) {
        if (k < items.size() && items[k] == i) {
          ++k;
        } else {
          pool.push_back(i);
        }
      }
      for (std::size_t k = 0; k < kTestNegatives; ++k) {
        const auto j = k + static_cast<std::size_t>(rng.uniform_below(pool.size() - k));
        std::swap(pool[k], pool[j]);
        negatives.push_back(pool[k]);
      }
    } else {
      while (negatives.size() < kTestNegatives) {
        const auto j = static_cast<Index>(rng.uniform_below(data.num_items()));
        if (std::binary_search(items.begin(), items.end(), j)) continue;
        if (std::find(negatives.begin(), negatives.end(), j) != negatives.end()) continue;
        negatives.push_back(j);
      }
    }
    test[u] = TestCase{held_out, std::move(negatives)};
  }

  for (const auto& x : data.interactions()) {
    if (test[x.user].positive != x.item) train.push_back(x);
  }
  return SplitDataset(InteractionSet(data.num_users(), data.num_items(), std::move(train)), std::move(test));
}

// ---------------------------------------------------------------------------
// Prepared-data files

// camf-split 1
// num_users N / num_items M / num_train K
// train           then K lines  user<TAB>item<TAB>timestamp
// test            then N lines  user<TAB>pos<TAB>neg1,...,neg99
inline void write_split(std::ostream& out, const SplitDataset& split) {
  out << "camf-split 1\n";
  out << "num_users " << split.num_users() << "\n";
  out << "num_items " << split.num_items() << "\n";
  out << "num_train " << split.train().size() << "\n";
  out << "train\n";
  for (const auto& x : split.train().interactions()) out << x.user << '\t' << x.item << '\t' << x.timestamp << '\n';
  out << "test\n";
  for (Index u = 0; u < split.num_users(); ++u) {
    const auto& tc = split.test_case(u);
    out << u << '\t' << tc.positive << '\t';
    for (std::size_t k = 0; k < tc.negatives.size(); ++k) out << (k ? "," : "") << tc.negatives[k];
    out << '\n';
  }
}

namespace detail {

class LineReader {
 public:
  LineReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::string_view next() {
    if (!std::getline(in_, line_)) throw ParseError(path_, number_ + 1, "unexpected end of file");
    ++number_;
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    return line_;
  }

  template <typename T>
  T keyed(std::string_view key) {
    const auto line = next();
    const auto f = split(line, " ");
    if (f.size() != 2 || f[0] != key) fail("expected '" + std::string(key) + " <value>'");
    return parse_field<T>(f[1], path_, number_, key.data());
  }

  void expect(std::string_view text) {
    if (next() != text) fail("expected '" + std::string(text) + "'");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, number_, what); }
  const std::string& path() const { return path_; }
  std::size_t number() const { return number_; }

 private:
  std::istream& in_;
  std::string path_;
  std::string line_;
  std::size_t number_ = 0;
};

inline std::vector<Index> parse_id_list(std::string_view text, const LineReader& reader) {
  std::vector<Index> ids;
  if (text.empty()) return ids;
  for (auto tok : split(text, ",")) ids.push_back(parse_field<Index>(tok, reader.path(), reader.number(), "id"));
  return ids;
}

}  // namespace detail

inline SplitDataset read_split(std::istream& in, const std::string& path = "<split>") {
  detail::LineReader reader(in, path);
  reader.expect("camf-split 1");
  const auto num_users = reader.keyed<Index>("num_users");
  const auto num_items = reader.keyed<Index>("num_items");
  const auto num_train = reader.keyed<std::size_t>("num_train");
  reader.expect("train");
  std::vector<Interaction> train;
  train.reserve(num_train);
  for (std::size_t k = 0; k < num_train; ++k) {
    const auto f = detail::split(reader.next(), "\t");
    if (f.size() != 3) reader.fail("expected user<TAB>item<TAB>timestamp");
    train.push_back({detail::parse_field<Index>(f[0], path, reader.number(), "user"),
                     detail::parse_field<Index>(f[1], path, reader.number(), "item"),
                     detail::parse_field<std::int64_t>(f[2], path, reader.number(), "timestamp")});
  }
  reader.expect("test");
  std::vector<TestCase> test(num_users);
  for (Index k = 0; k < num_users; ++k) {
    const auto f = detail::split(reader.next(), "\t");
    if (f.size() != 3) reader.fail("expected user<TAB>pos<TAB>negatives");
    const auto u = detail::parse_field<Index>(f[0], path, reader.number(), "user");
    if (u != k) reader.fail("test users must be listed in order");
    test[u] = TestCase{detail::parse_field<Index>(f[1], path, reader.number(), "positive"),
                       detail::parse_id_list(f[2], reader)};
  }
  return SplitDataset(InteractionSet(num_users, num_items, std::move(train)), std::move(test));
}

// camf-attributes 1
// user_vocab V / item_vocab W
// user_fields F then F lines name<TAB>offset<TAB>size (same for item_fields)
// users N then N lines id<TAB>a,b,c (same for items)
inline void write_catalog(std::ostream& out, const AttributeCatalog& catalog) {
  out << "camf-attributes 1\n";
  out << "user_vocab " << catalog.user_vocab_size() << "\n";
  out << "item_vocab " << catalog.item_vocab_size() << "\n";
  auto fields = [&](const char* key, const std::vector<AttributeField>& fs) {
    out << key << ' ' << fs.size() << '\n';
    for (const auto& f : fs) out << f.name << '\t' << f.offset << '\t' << f.size << '\n';
  };
  fields("user_fields", catalog.user_fields());
  fields("item_fields", catalog.item_fields());
  auto rows = [&](const char* key, Index n, auto get) {
    out << key << ' ' << n << '\n';
    for (Index e = 0; e < n; ++e) {
      out << e << '\t';
      const auto ids = get(e);
      for (std::size_t k = 0; k < ids.size(); ++k) out << (k ? "," : "") << ids[k];
      out << '\n';
    }
  };
  rows("users", catalog.num_users(), [&](Index e) { return catalog.user_attrs(e); });
  rows("items", catalog.num_items(), [&](Index e) { return catalog.item_attrs(e); });
}

inline AttributeCatalog read_catalog(std::istream& in, const std::string& path = "<attributes>") {
  detail::LineReader reader(in, path);
  reader.expect("camf-attributes 1");
  const auto user_vocab = reader.keyed<Index>("user_vocab");
  const auto item_vocab = reader.keyed<Index>("item_vocab");
  auto fields = [&](const char* key) {
    const auto n = reader.keyed<std::size_t>(key);
    std::vector<AttributeField> fs;
    for (std::size_t k = 0; k < n; ++k) {
      const auto f = detail::split(reader.next(), "\t");
      if (f.size() != 3) reader.fail("expected name<TAB>offset<TAB>size");
      fs.push_back({std::string(f[0]), detail::parse_field<Index>(f[1], path, reader.number(), "offset"),
                    detail::parse_field<Index>(f[2], path, reader.number(), "size")});
    }
    return fs;
  };
  auto user_fields = fields("user_fields");
  auto item_fields = fields("item_fields");
  auto rows = [&](const char* key) {
    const auto n = reader.keyed<Index>(key);
    std::vector<std::vector<Index>> attrs(n);
    for (Index e = 0; e < n; ++e) {
      const auto f = detail::split(reader.next(), "\t");
      if (f.size() != 2) reader.fail("expected id<TAB>attribute ids");
      if (detail::parse_field<Index>(f[0], path, reader.number(), "id") != e) reader.fail("entities must be listed in order");
      attrs[e] = detail::parse_id_list(f[1], reader);
    }
    return attrs;
  };
  auto user_attrs = rows("users");
  auto item_attrs = rows("items");
  return AttributeCatalog(std::move(user_attrs), std::move(item_attrs), user_vocab, item_vocab, std::move(user_fields),
                          std::move(item_fields));
}

}  // namespace camf
