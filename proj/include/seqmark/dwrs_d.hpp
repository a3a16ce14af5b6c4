#pragma once

#include <cstdint>
#include <set>
#include <utility>

#include "seqmark/corpus.hpp"
#include "seqmark/watermark.hpp"

namespace seqmark {

enum class ItemPoolBias { unpopular, popular };

// Samples l distinct watermark items from the tail_fraction least-popular
// items (or most-popular with ItemPoolBias::popular), resampling until the
// ordered l-tuple does not occur as a pattern in d. Deterministic under seed.
WatermarkSequence select_watermark_items(const PopularityTable& pop, const Dataset& d, int l,
                                         double tail_fraction, std::uint64_t seed,
                                         ItemPoolBias bias = ItemPoolBias::unpopular,
                                         int resample_budget = 1000);

// The receptive-field item set of an insertion at index pos of the clean
// sequence: the rf.before original items immediately preceding pos plus the
// rf.after original items at/after pos (the ones that will follow the
// inserted block), truncated at the sequence boundaries. The block length l
// does not shift the result because fillers are read off the clean sequence.
std::set<ItemId> filler_set(const UserSequence& seq, int pos, int l, const ReceptiveFieldSpec& rf);

// DWRS-D: inserts wm as a consecutive block into ceil(p*|U|) user sequences.
// Only users whose clean sequence contains none of the watermark items are
// eligible; under ConstraintMode::unique_fillers a position is accepted only
// if its filler set is disjoint from the fillers accumulated so far, and each
// user's positions are exhausted without replacement before the user is
// abandoned. Stops early (partial record) when no candidate remains. The
// input dataset is not modified.
std::pair<Dataset, WatermarkRecord> embed_dataset_watermark(
    const Dataset& d, const WatermarkSequence& wm, double p, const ReceptiveFieldSpec& rf,
    std::uint64_t seed, ConstraintMode constraint = ConstraintMode::unique_fillers);

// Same algorithm against an external filler ledger and an arbitrary block
// (used by watermark hardening, where several variants must share one
// uniqueness ledger). `eligibility_items` are the items a user must not have
// interacted with; `block` is what gets spliced in.
WatermarkRecord embed_block_with_ledger(Dataset& d, const std::vector<ItemId>& block,
                                        const std::set<ItemId>& eligibility_items, double p,
                                        const ReceptiveFieldSpec& rf, std::uint64_t seed,
                                        ConstraintMode constraint, std::set<ItemId>& filler_ledger);

}  // namespace seqmark
