#include "bcfnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

#include "bcfnet/rng.hpp"

namespace bcfnet {

RatingsFormat ratings_format_from_string(const std::string& s) {
  if (s == "movielens-tab" || s == "tab") return RatingsFormat::MovielensTab;
  if (s == "movielens-double-colon" || s == "double-colon")
    return RatingsFormat::MovielensDoubleColon;
  if (s == "csv") return RatingsFormat::Csv;
  if (s == "auto") return RatingsFormat::Auto;
  throw ConfigError("unknown ratings format '" + s + "'");
}

const char* to_string(RatingsFormat f) {
  switch (f) {
    case RatingsFormat::MovielensTab: return "movielens-tab";
    case RatingsFormat::MovielensDoubleColon: return "movielens-double-colon";
    case RatingsFormat::Csv: return "csv";
    case RatingsFormat::Auto: return "auto";
  }
  return "?";
}

namespace {

void split_fields(const std::string& line, const std::string& sep,
                  std::vector<std::string>& out) {
  out.clear();
  if (sep == " ") {  // any whitespace run
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return;
  }
  size_t pos = 0;
  while (true) {
    size_t next = line.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      return;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
}

bool parse_double(const std::string& s, double& out) {
  try {
    size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

bool parse_int64(const std::string& s, int64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string sniff_separator(const std::string& line) {
  if (line.find("::") != std::string::npos) return "::";
  if (line.find('\t') != std::string::npos) return "\t";
  if (line.find(',') != std::string::npos) return ",";
  return " ";
}

}  // namespace

RawRatings load_ratings(const std::string& path, RatingsFormat format) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open ratings file: " + path);

  std::string sep;
  bool maybe_header = false;
  switch (format) {
    case RatingsFormat::MovielensTab: sep = "\t"; break;
    case RatingsFormat::MovielensDoubleColon: sep = "::"; break;
    case RatingsFormat::Csv:
      sep = ",";
      maybe_header = true;
      break;
    case RatingsFormat::Auto: break;  // decided on the first data line
  }

  RawRatings raw;
  // (user,item) -> record slot, for latest-timestamp dedup.
  std::unordered_map<std::string, size_t> slot;
  std::vector<std::string> f;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (sep.empty()) {
      sep = sniff_separator(line);
      maybe_header = true;  // auto mode tolerates one header line
    }
    split_fields(line, sep, f);
    if (f.size() != 3 && f.size() != 4)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 3 or 4 fields, got " +
                       std::to_string(f.size()));
    double rating = 0.0;
    int64_t ts = 0;
    bool ok = parse_double(f[2], rating);
    if (ok && f.size() == 4) ok = parse_int64(f[3], ts);
    if (ok && f.size() == 3) ts = lineno;  // no timestamps: keep file order
    if (!ok || rating < 0.0 || ts < 0) {
      if (maybe_header && raw.records.empty()) {
        maybe_header = false;  // skip a single leading header line
        continue;
      }
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": malformed record '" + line + "'");
    }
    maybe_header = false;
    std::string key = f[0] + '\x1f' + f[1];
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(std::move(key), raw.records.size());
      raw.records.push_back({f[0], f[1], rating, ts});
    } else if (raw.records[it->second].timestamp <= ts) {
      raw.records[it->second] = {f[0], f[1], rating, ts};
    }
  }
  if (raw.records.empty()) throw DataError("empty dataset: " + path);
  return raw;
}

RawRatings k_core_filter(const RawRatings& raw, int min_user_ratings,
                         int min_item_raters) {
  if (min_user_ratings < 1 || min_item_raters < 1)
    throw ConfigError("k_core_filter: thresholds must be >= 1");
  std::vector<const RawRating*> alive;
  alive.reserve(raw.records.size());
  for (const auto& r : raw.records) alive.push_back(&r);

  bool changed = true;
  while (changed && !alive.empty()) {
    changed = false;
    std::unordered_map<std::string, int> user_count;
    for (const auto* r : alive) ++user_count[r->user];
    std::vector<const RawRating*> next;
    next.reserve(alive.size());
    for (const auto* r : alive)
      if (user_count[r->user] >= min_user_ratings) next.push_back(r);
    if (next.size() != alive.size()) changed = true;
    alive.swap(next);

    std::unordered_map<std::string, int> item_count;
    for (const auto* r : alive) ++item_count[r->item];
    next.clear();
    for (const auto* r : alive)
      if (item_count[r->item] >= min_item_raters) next.push_back(r);
    if (next.size() != alive.size()) changed = true;
    alive.swap(next);
  }

  RawRatings out;
  out.records.reserve(alive.size());
  for (const auto* r : alive) out.records.push_back(*r);
  return out;
}

double InteractionMatrix::sparsity() const {
  const double cells =
      static_cast<double>(num_users) * static_cast<double>(num_items);
  return cells == 0.0 ? 0.0 : 1.0 - static_cast<double>(interaction_count()) / cells;
}

bool InteractionMatrix::has(int u, int i) const {
  auto r = row(u);
  return std::binary_search(r.begin(), r.end(), i);
}

namespace {

// Builds CSR/CSC (both sorted) from a pair list.
void build_adjacency(InteractionMatrix& m, std::vector<std::pair<int, int>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  m.row_ptr.assign(static_cast<size_t>(m.num_users) + 1, 0);
  m.col_ptr.assign(static_cast<size_t>(m.num_items) + 1, 0);
  m.row_items.clear();
  m.row_items.reserve(pairs.size());
  for (auto [u, i] : pairs) {
    ++m.row_ptr[static_cast<size_t>(u) + 1];
    ++m.col_ptr[static_cast<size_t>(i) + 1];
    m.row_items.push_back(i);
  }
  for (size_t k = 1; k < m.row_ptr.size(); ++k) m.row_ptr[k] += m.row_ptr[k - 1];
  for (size_t k = 1; k < m.col_ptr.size(); ++k) m.col_ptr[k] += m.col_ptr[k - 1];
  m.col_users.assign(pairs.size(), 0);
  std::vector<int64_t> fill(m.col_ptr.begin(), m.col_ptr.end() - 1);
  for (auto [u, i] : pairs) m.col_users[static_cast<size_t>(fill[i]++)] = u;
}

}  // namespace

InteractionMatrix binarize(const RawRatings& raw) {
  if (raw.empty()) throw DataError("binarize: empty dataset");
  InteractionMatrix m;
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(raw.size());
  for (const auto& r : raw.records) {
    auto [uit, unew] = m.user_index.try_emplace(r.user, m.num_users);
    if (unew) {
      m.user_tokens.push_back(r.user);
      ++m.num_users;
    }
    auto [iit, inew] = m.item_index.try_emplace(r.item, m.num_items);
    if (inew) {
      m.item_tokens.push_back(r.item);
      ++m.num_items;
    }
    pairs.emplace_back(uit->second, iit->second);
  }
  build_adjacency(m, std::move(pairs));
  return m;
}

namespace {

// Draws `want` distinct items uniformly from the unobserved complement of
// `row` (sorted). Switches to an explicit complement shuffle when the
// request covers most of the pool, where rejection sampling would crawl.
std::vector<int> sample_unobserved(std::span<const int> row, int num_items,
                                   int want, Pcg32& rng) {
  const int64_t pool = num_items - static_cast<int64_t>(row.size());
  std::vector<int> out;
  out.reserve(static_cast<size_t>(want));
  if (want * 2 >= pool) {
    std::vector<int> complement;
    complement.reserve(static_cast<size_t>(pool));
    for (int i = 0; i < num_items; ++i)
      if (!std::binary_search(row.begin(), row.end(), i)) complement.push_back(i);
    // partial Fisher-Yates
    for (int k = 0; k < want; ++k) {
      uint32_t j = k + rng.bounded(static_cast<uint32_t>(complement.size() - k));
      std::swap(complement[static_cast<size_t>(k)], complement[j]);
      out.push_back(complement[static_cast<size_t>(k)]);
    }
    return out;
  }
  std::vector<char> taken(static_cast<size_t>(num_items), 0);
  while (static_cast<int>(out.size()) < want) {
    int j = static_cast<int>(rng.bounded(static_cast<uint32_t>(num_items)));
    if (taken[static_cast<size_t>(j)]) continue;
    if (std::binary_search(row.begin(), row.end(), j)) continue;
    taken[static_cast<size_t>(j)] = 1;
    out.push_back(j);
  }
  return out;
}

// Timestamp lookup keyed by dense (user,item).
std::unordered_map<int64_t, int64_t> timestamp_table(const InteractionMatrix& m,
                                                     const RawRatings& raw) {
  std::unordered_map<int64_t, int64_t> ts;
  ts.reserve(raw.size() * 2);
  for (const auto& r : raw.records) {
    auto u = m.user_index.find(r.user);
    auto i = m.item_index.find(r.item);
    if (u == m.user_index.end() || i == m.item_index.end())
      throw SplitError("split: raw record (" + r.user + "," + r.item +
                       ") missing from the interaction matrix");
    ts[static_cast<int64_t>(u->second) * m.num_items + i->second] = r.timestamp;
  }
  return ts;
}

}  // namespace

SplitDataset leave_one_out_split(const InteractionMatrix& m,
                                 const RawRatings& raw, int num_test_negatives,
                                 uint64_t seed) {
  auto ts = timestamp_table(m, raw);
  SplitDataset split;
  split.num_test_negatives = num_test_negatives;
  split.seed = seed;
  split.test_items.resize(static_cast<size_t>(m.num_users));
  split.test_negatives.resize(static_cast<size_t>(m.num_users));

  std::vector<std::pair<int, int>> train_pairs;
  train_pairs.reserve(static_cast<size_t>(m.interaction_count()) - m.num_users);
  for (int u = 0; u < m.num_users; ++u) {
    auto row = m.row(u);
    if (row.size() < 2)
      throw SplitError("split: user '" + m.user_tokens[static_cast<size_t>(u)] +
                       "' has fewer than 2 interactions");
    const int64_t unobserved = m.num_items - static_cast<int64_t>(row.size());
    if (unobserved < num_test_negatives)
      throw SplitError("split: user '" + m.user_tokens[static_cast<size_t>(u)] +
                       "' has only " + std::to_string(unobserved) +
                       " unobserved items, needs " +
                       std::to_string(num_test_negatives));
    // Latest interaction; on equal timestamps the larger item index wins.
    int test_item = row[0];
    int64_t best_ts = ts.at(static_cast<int64_t>(u) * m.num_items + row[0]);
    for (int i : row.subspan(1)) {
      int64_t t = ts.at(static_cast<int64_t>(u) * m.num_items + i);
      if (t > best_ts || (t == best_ts && i > test_item)) {
        best_ts = t;
        test_item = i;
      }
    }
    split.test_items[static_cast<size_t>(u)] = test_item;
    for (int i : row)
      if (i != test_item) train_pairs.emplace_back(u, i);

    Pcg32 rng(mix64(seed, static_cast<uint64_t>(u)));
    split.test_negatives[static_cast<size_t>(u)] =
        sample_unobserved(row, m.num_items, num_test_negatives, rng);
  }

  split.train.num_users = m.num_users;
  split.train.num_items = m.num_items;
  split.train.user_tokens = m.user_tokens;
  split.train.item_tokens = m.item_tokens;
  split.train.user_index = m.user_index;
  split.train.item_index = m.item_index;
  build_adjacency(split.train, std::move(train_pairs));
  return split;
}

SplitDataset leave_one_out_split_lenient(const InteractionMatrix& m,
                                         const RawRatings& raw,
                                         int num_test_negatives, uint64_t seed,
                                         int* skipped) {
  // Users whose row is too small or whose unobserved pool is too thin are
  // dropped; dropping users can erase items and shrink the pool further, so
  // iterate until stable.
  RawRatings current = raw;
  InteractionMatrix mat = m;
  while (true) {
    std::vector<char> keep_user(static_cast<size_t>(mat.num_users), 1);
    int dropped = 0;
    for (int u = 0; u < mat.num_users; ++u) {
      auto row = mat.row(u);
      const int64_t unobserved = mat.num_items - static_cast<int64_t>(row.size());
      if (row.size() < 2 || unobserved < num_test_negatives) {
        keep_user[static_cast<size_t>(u)] = 0;
        ++dropped;
      }
    }
    if (dropped == 0) break;
    RawRatings filtered;
    filtered.records.reserve(current.size());
    for (const auto& r : current.records) {
      auto it = mat.user_index.find(r.user);
      if (it != mat.user_index.end() && keep_user[static_cast<size_t>(it->second)])
        filtered.records.push_back(r);
    }
    if (filtered.empty())
      throw SplitError("split: no user satisfies the leave-one-out preconditions");
    current = std::move(filtered);
    mat = binarize(current);
  }
  if (skipped) *skipped = m.num_users - mat.num_users;
  return leave_one_out_split(mat, current, num_test_negatives, seed);
}

TrainingInstances sample_training_instances(const SplitDataset& split, int rho,
                                            uint64_t epoch_seed,
                                            std::ostream* warnings) {
  if (rho < 1) throw ConfigError("sample_training_instances: rho must be >= 1");
  const InteractionMatrix& train = split.train;
  TrainingInstances out;
  out.rho = rho;
  const size_t total =
      static_cast<size_t>(train.interaction_count()) * (1 + static_cast<size_t>(rho));
  out.users.reserve(total);
  out.items.reserve(total);
  out.labels.reserve(total);

  for (int u = 0; u < train.num_users; ++u) {
    auto row = train.row(u);
    if (row.empty()) continue;
    const int64_t pool = train.num_items - static_cast<int64_t>(row.size());
    const int64_t needed = static_cast<int64_t>(rho) * static_cast<int64_t>(row.size());
    Pcg32 rng(mix64(epoch_seed, static_cast<uint64_t>(u)));

    std::vector<int> negatives;
    if (pool <= 0) {
      if (warnings)
        *warnings << "warning: user " << train.user_tokens[static_cast<size_t>(u)]
                  << " has no unobserved items; skipping its negatives\n";
    } else if (needed <= pool) {
      negatives = sample_unobserved(row, train.num_items,
                                    static_cast<int>(needed), rng);
    } else {
      if (warnings)
        *warnings << "warning: user " << train.user_tokens[static_cast<size_t>(u)]
                  << " needs " << needed << " negatives from a pool of " << pool
                  << "; sampling with replacement\n";
      negatives.reserve(static_cast<size_t>(needed));
      while (static_cast<int64_t>(negatives.size()) < needed) {
        int j = static_cast<int>(rng.bounded(static_cast<uint32_t>(train.num_items)));
        if (!std::binary_search(row.begin(), row.end(), j)) negatives.push_back(j);
      }
    }

    size_t neg_at = 0;
    for (int i : row) {
      out.users.push_back(u);
      out.items.push_back(i);
      out.labels.push_back(1.0f);
      for (int k = 0; k < rho && neg_at < negatives.size(); ++k, ++neg_at) {
        out.users.push_back(u);
        out.items.push_back(negatives[neg_at]);
        out.labels.push_back(0.0f);
      }
    }
  }
  return out;
}

std::vector<InteractionMatrix> popularity_partition(const InteractionMatrix& m,
                                                    int levels) {
  if (levels < 1) throw ConfigError("popularity_partition: levels must be >= 1");
  if (m.num_items < levels)
    throw ConfigError("popularity_partition: fewer items than levels");

  std::vector<int> order(static_cast<size_t>(m.num_items));
  for (int i = 0; i < m.num_items; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    int64_t ca = m.col_ptr[a + 1] - m.col_ptr[a];
    int64_t cb = m.col_ptr[b + 1] - m.col_ptr[b];
    return ca != cb ? ca < cb : a < b;
  });

  const int base = m.num_items / levels;
  const int rem = m.num_items % levels;
  std::vector<InteractionMatrix> out;
  out.reserve(static_cast<size_t>(levels));
  size_t cursor = 0;
  for (int lvl = 0; lvl < levels; ++lvl) {
    // remainders go to the most popular (last) levels
    int take = base + (lvl >= levels - rem ? 1 : 0);
    std::vector<int> members(order.begin() + cursor, order.begin() + cursor + take);
    cursor += static_cast<size_t>(take);
    std::sort(members.begin(), members.end());

    InteractionMatrix sub;
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> item_map(static_cast<size_t>(m.num_items), -1);
    for (int i : members) {
      item_map[static_cast<size_t>(i)] = sub.num_items;
      sub.item_tokens.push_back(m.item_tokens[static_cast<size_t>(i)]);
      sub.item_index.emplace(m.item_tokens[static_cast<size_t>(i)], sub.num_items);
      ++sub.num_items;
    }
    std::vector<int> user_map(static_cast<size_t>(m.num_users), -1);
    for (int u = 0; u < m.num_users; ++u) {
      for (int i : m.row(u)) {
        int mi = item_map[static_cast<size_t>(i)];
        if (mi < 0) continue;
        if (user_map[static_cast<size_t>(u)] < 0) {
          user_map[static_cast<size_t>(u)] = sub.num_users;
          sub.user_tokens.push_back(m.user_tokens[static_cast<size_t>(u)]);
          sub.user_index.emplace(m.user_tokens[static_cast<size_t>(u)], sub.num_users);
          ++sub.num_users;
        }
        pairs.emplace_back(user_map[static_cast<size_t>(u)], mi);
      }
    }
    if (sub.num_users == 0) {
      // a band may end up with zero interactions (all-zero items)
      sub.row_ptr.assign(1, 0);
      sub.col_ptr.assign(static_cast<size_t>(sub.num_items) + 1, 0);
    } else {
      build_adjacency(sub, std::move(pairs));
    }
    out.push_back(std::move(sub));
  }
  return out;
}

void save_split(const SplitDataset& split, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open split manifest for writing: " + path);
  const InteractionMatrix& t = split.train;
  os << t.num_users << " " << t.num_items << " " << split.seed << " "
     << split.num_test_negatives << "\n";
  for (int u = 0; u < t.num_users; ++u) {
    os << u << " " << split.test_items[static_cast<size_t>(u)];
    for (int i : split.test_negatives[static_cast<size_t>(u)]) os << " " << i;
    os << "\n";
  }
  if (!os) throw DataError("failed writing split manifest: " + path);
}

SplitDataset load_split(const std::string& path, const InteractionMatrix& m) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open split manifest: " + path);
  SplitDataset split;
  int users = 0, items = 0;
  if (!(is >> users >> items >> split.seed >> split.num_test_negatives))
    throw ParseError(path + ": malformed split header");
  if (users != m.num_users || items != m.num_items)
    throw DataError(path + ": split is for a " + std::to_string(users) + "x" +
                    std::to_string(items) + " matrix, got " +
                    std::to_string(m.num_users) + "x" +
                    std::to_string(m.num_items));
  split.test_items.resize(static_cast<size_t>(users));
  split.test_negatives.assign(static_cast<size_t>(users), {});
  for (int k = 0; k < users; ++k) {
    int u = 0, test = 0;
    if (!(is >> u >> test) || u < 0 || u >= users)
      throw ParseError(path + ": malformed user line " + std::to_string(k));
    split.test_items[static_cast<size_t>(u)] = test;
    auto& negs = split.test_negatives[static_cast<size_t>(u)];
    negs.resize(static_cast<size_t>(split.num_test_negatives));
    for (int& n : negs)
      if (!(is >> n) || n < 0 || n >= items)
        throw ParseError(path + ": malformed negatives for user " +
                         std::to_string(u));
    if (!m.has(u, test))
      throw DataError(path + ": test item " + std::to_string(test) +
                      " is not an interaction of user " + std::to_string(u));
  }

  std::vector<std::pair<int, int>> train_pairs;
  train_pairs.reserve(static_cast<size_t>(m.interaction_count()) - users);
  for (int u = 0; u < m.num_users; ++u)
    for (int i : m.row(u))
      if (i != split.test_items[static_cast<size_t>(u)])
        train_pairs.emplace_back(u, i);
  split.train.num_users = m.num_users;
  split.train.num_items = m.num_items;
  split.train.user_tokens = m.user_tokens;
  split.train.item_tokens = m.item_tokens;
  split.train.user_index = m.user_index;
  split.train.item_index = m.item_index;
  build_adjacency(split.train, std::move(train_pairs));
  return split;
}

}  // namespace bcfnet
