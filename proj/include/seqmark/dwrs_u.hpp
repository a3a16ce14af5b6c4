#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seqmark/corpus.hpp"
#include "seqmark/watermark.hpp"

namespace seqmark {

// Candidate watermark items for the single-user watermark, grouped by
// ascending popularity count. Groups are pulled in lowest-count-first until
// at least l items are available.
struct CandidatePool {
  std::vector<ItemId> items;      // concatenated groups, each sorted by id
  std::vector<int> group_sizes;   // per included count-group
  std::vector<std::int64_t> group_counts;  // the popularity count of each group
};

CandidatePool candidate_pool(const PopularityTable& pop, int l);

// Minimum-mean-popularity window of length n; ties break to the smallest
// start index. Returns (start, mean popularity).
std::pair<int, double> most_unpopular_subsequence(const UserSequence& seq, int n,
                                                  const PopularityTable& pop);

// Insert positions compared in the position study. `bus` (before the most
// unpopular subsequence) is the DWRS-U default.
enum class InsertPosition { bus, aus, bps, aps, begin, middle, end };

std::string to_string(InsertPosition pos);
InsertPosition insert_position_from_string(const std::string& s);

inline constexpr InsertPosition kAllInsertPositions[] = {
    InsertPosition::bus, InsertPosition::aus, InsertPosition::bps, InsertPosition::aps,
    InsertPosition::begin, InsertPosition::middle, InsertPosition::end};

// Target user selector: a concrete user id, or the longest sequence when
// unset (ties to the smallest user id).
using TargetUser = std::optional<std::int64_t>;

// DWRS-U: draws l distinct items from the unpopular candidate pool (expanding
// the pool, with each expansion logged, until l items absent from the target's
// clean sequence exist), resamples while the drawn block already occurs in the
// target sequence, and splices the block in at the chosen position (default:
// immediately before the most unpopular length-n subsequence). Only the target
// user's sequence changes. Passing the plan of a previous embedding into
// `prior` rejects re-watermarking that user.
std::pair<Dataset, UserWatermarkPlan> embed_user_watermark(
    const Dataset& d, TargetUser target, int l, int n, std::uint64_t seed,
    InsertPosition position = InsertPosition::bus, const UserWatermarkPlan* prior = nullptr);

}  // namespace seqmark
