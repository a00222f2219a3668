#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "bcfnet/errors.hpp"

namespace bcfnet {

struct RawRating {
  std::string user;
  std::string item;
  double rating = 0.0;
  int64_t timestamp = 0;
};

struct RawRatings {
  std::vector<RawRating> records;
  bool empty() const { return records.empty(); }
  size_t size() const { return records.size(); }
};

enum class RatingsFormat {
  MovielensTab,          // user \t item \t rating \t timestamp
  MovielensDoubleColon,  // user::item::rating::timestamp
  Csv,                   // header "user,item,rating,timestamp"
  Auto,                  // sniff separator; timestamp column optional
};

RatingsFormat ratings_format_from_string(const std::string& s);
const char* to_string(RatingsFormat f);

// Parses a rating log. Duplicate (user,item) pairs keep the record with the
// largest timestamp (file order breaks exact ties). Lines that do not parse
// raise ParseError with the 1-based line number.
RawRatings load_ratings(const std::string& path,
                        RatingsFormat format = RatingsFormat::Auto);

// Repeatedly removes users with fewer than `min_user_ratings` records and
// items with fewer than `min_item_raters` until both hold everywhere.
// The result can be empty; downstream operations reject empty inputs.
RawRatings k_core_filter(const RawRatings& raw, int min_user_ratings = 20,
                         int min_item_raters = 5);

// Binary interaction matrix with O(1) sparse row and column access.
// Dense indices are assigned in order of first appearance in the raw log.
struct InteractionMatrix {
  int num_users = 0;
  int num_items = 0;
  std::vector<int64_t> row_ptr;  // CSR over items per user (sorted)
  std::vector<int> row_items;
  std::vector<int64_t> col_ptr;  // CSC over users per item (sorted)
  std::vector<int> col_users;
  std::vector<std::string> user_tokens, item_tokens;
  std::unordered_map<std::string, int> user_index, item_index;

  int64_t interaction_count() const {
    return static_cast<int64_t>(row_items.size());
  }
  double sparsity() const;

  std::span<const int> row(int u) const {
    return {row_items.data() + row_ptr[u],
            static_cast<size_t>(row_ptr[u + 1] - row_ptr[u])};
  }
  std::span<const int> col(int i) const {
    return {col_users.data() + col_ptr[i],
            static_cast<size_t>(col_ptr[i + 1] - col_ptr[i])};
  }
  bool has(int u, int i) const;
};

InteractionMatrix binarize(const RawRatings& raw);

// Leave-one-out split: per user the interaction with the largest timestamp
// is held out (ties broken toward the larger item index), and a fixed set
// of `num_test_negatives` unobserved items is sampled once per user.
struct SplitDataset {
  InteractionMatrix train;
  std::vector<int> test_items;                  // one per user
  std::vector<std::vector<int>> test_negatives; // num_test_negatives per user
  int num_test_negatives = 100;
  uint64_t seed = 0;
};

SplitDataset leave_one_out_split(const InteractionMatrix& m,
                                 const RawRatings& raw,
                                 int num_test_negatives, uint64_t seed);

// Same split, but users that cannot satisfy the preconditions (fewer than
// two interactions, or not enough unobserved items) are dropped instead of
// raising; `skipped` (if given) receives how many users were removed.
// The surviving users are reindexed densely.
SplitDataset leave_one_out_split_lenient(const InteractionMatrix& m,
                                         const RawRatings& raw,
                                         int num_test_negatives, uint64_t seed,
                                         int* skipped = nullptr);

// Point-wise training set: every train positive once, plus rho sampled
// unobserved items per positive. Fresh per epoch via epoch_seed.
struct TrainingInstances {
  std::vector<int> users;
  std::vector<int> items;
  std::vector<float> labels;
  int rho = 0;
  size_t size() const { return users.size(); }
};

TrainingInstances sample_training_instances(const SplitDataset& split, int rho,
                                            uint64_t epoch_seed,
                                            std::ostream* warnings = nullptr);

// Splits the item set into `levels` contiguous popularity bands (ascending
// interaction count) and extracts the per-band sub-datasets, densely
// reindexed. Every interaction lands in exactly one band.
std::vector<InteractionMatrix> popularity_partition(const InteractionMatrix& m,
                                                    int levels = 3);

// Split persistence: header "M N seed num_test_negatives", then one line
// per user: "u test_item neg1 ... negK". The train matrix is reconstructed
// from `m` minus the stored test positives.
void save_split(const SplitDataset& split, const std::string& path);
SplitDataset load_split(const std::string& path, const InteractionMatrix& m);

}  // namespace bcfnet
