#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "seqmark/corpus.hpp"

namespace seqmark {

// A watermark is an ordered block of l distinct items. The body (first l-1
// items) is appended to benign queries at verification time; the last item is
// the response whose rank constitutes the watermark evidence.
struct WatermarkSequence {
  std::vector<ItemId> items;

  int length() const { return static_cast<int>(items.size()); }
  std::vector<ItemId> body() const { return {items.begin(), items.end() - 1}; }
  ItemId response() const { return items.back(); }
  void validate() const;  // l >= 2, pairwise distinct, no padding id
};

struct ReceptiveFieldSpec {
  int before = 5;  // items preceding the inserted block counted as fillers
  int after = 5;   // items following the inserted block
  bool whole_sequence = false;

  void validate() const;
};

struct Insertion {
  std::int64_t user = 0;
  int pos = 0;  // insertion index into the clean sequence, in [0, len]
};

// Insertion-strategy switch: `unique_fillers` enforces pairwise-disjoint
// filler sets across insertions; `none` is the random-user/random-position
// baseline with no filler constraint.
enum class ConstraintMode { unique_fillers, none };

struct WatermarkRecord {
  WatermarkSequence watermark;
  std::vector<Insertion> insertions;
  std::set<ItemId> filler_items;  // union of per-insertion receptive-field item sets
  double requested_ratio = 0.0;
  int target_count = 0;
  int achieved_count = 0;
  bool partial = false;  // achieved_count < target_count
  ReceptiveFieldSpec rf;
  ConstraintMode constraint = ConstraintMode::unique_fillers;
  std::uint64_t seed = 0;
};

// DWRS-U single-user plan; serialized with the same schema as
// WatermarkRecord under variant tag "user".
struct UserWatermarkPlan {
  std::int64_t target_user = 0;
  WatermarkSequence watermark;
  int n = 0;               // unpopular-subsequence length
  int insert_pos = 0;      // equals c_n_start for the default position
  int c_n_start = 0;       // start of C_n in the clean target sequence
  double c_n_avg_pop = 0.0;
  std::string position_mode = "bus";
  std::vector<int> pool_group_sizes;  // candidate-pool groups actually used
  int pool_expansions = 0;            // extra groups pulled in past the first
  std::uint64_t seed = 0;
};

void save_watermark_record(const WatermarkRecord& rec, const std::string& path);
WatermarkRecord load_watermark_record(const std::string& path);

void save_user_plan(const UserWatermarkPlan& plan, const std::string& path);
UserWatermarkPlan load_user_plan(const std::string& path);

// Peeks at the variant tag ("dataset" or "user") of a record file.
std::string record_variant(const std::string& path);

}  // namespace seqmark
