#include "seqmark/dwrs_d.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace seqmark {

WatermarkSequence select_watermark_items(const PopularityTable& pop, const Dataset& d, int l,
                                         double tail_fraction, std::uint64_t seed,
                                         ItemPoolBias bias, int resample_budget) {
  if (l < 2) throw Error("select_watermark_items: l must be >= 2");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
    throw Error("select_watermark_items: tail_fraction must be in (0,1]");
  }
  const ItemId n = pop.n_items();
  std::vector<ItemId> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 1);
  std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    if (pop.count(a) != pop.count(b)) return pop.count(a) < pop.count(b);
    return a < b;
  });
  if (bias == ItemPoolBias::popular) std::reverse(order.begin(), order.end());

  auto pool_size = static_cast<std::size_t>(
      std::ceil(tail_fraction * static_cast<double>(n)));
  pool_size = std::min(pool_size, order.size());
  if (pool_size < static_cast<std::size_t>(l)) {
    throw Error("select_watermark_items: candidate pool smaller than l; increase tail_fraction");
  }
  std::vector<ItemId> pool(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool_size));

  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < resample_budget; ++attempt) {
    std::vector<ItemId> picked = pool;
    // Partial Fisher-Yates: only the first l slots are needed.
    for (int i = 0; i < l; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                      picked.size() - 1);
      std::swap(picked[static_cast<std::size_t>(i)], picked[pick(rng)]);
    }
    picked.resize(static_cast<std::size_t>(l));
    if (!contains_pattern(d, picked)) {
      WatermarkSequence wm;
      wm.items = std::move(picked);
      wm.validate();
      return wm;
    }
  }
  throw Error("select_watermark_items: resample budget exhausted; every sampled pattern "
              "already occurs in the dataset");
}

std::set<ItemId> filler_set(const UserSequence& seq, int pos, int l,
                            const ReceptiveFieldSpec& rf) {
  (void)l;  // the block sits between the two windows, so its length cancels out
  rf.validate();
  const int len = static_cast<int>(seq.items.size());
  if (pos < 0 || pos > len) throw Error("filler_set: pos out of range");
  std::set<ItemId> fillers;
  if (rf.whole_sequence) {
    fillers.insert(seq.items.begin(), seq.items.end());
    return fillers;
  }
  for (int i = std::max(0, pos - rf.before); i < pos; ++i) {
    fillers.insert(seq.items[static_cast<std::size_t>(i)]);
  }
  for (int i = pos; i < std::min(len, pos + rf.after); ++i) {
    fillers.insert(seq.items[static_cast<std::size_t>(i)]);
  }
  return fillers;
}

namespace {

bool disjoint(const std::set<ItemId>& a, const std::set<ItemId>& b) {
  const std::set<ItemId>& small = a.size() <= b.size() ? a : b;
  const std::set<ItemId>& big = a.size() <= b.size() ? b : a;
  for (ItemId x : small) {
    if (big.count(x)) return false;
  }
  return true;
}

}  // namespace

WatermarkRecord embed_block_with_ledger(Dataset& d, const std::vector<ItemId>& block,
                                        const std::set<ItemId>& eligibility_items, double p,
                                        const ReceptiveFieldSpec& rf, std::uint64_t seed,
                                        ConstraintMode constraint,
                                        std::set<ItemId>& filler_ledger) {
  if (!(p > 0.0 && p <= 1.0)) throw Error("embed: insert ratio p must be in (0,1]");
  if (block.empty()) throw Error("embed: empty watermark block");
  rf.validate();

  WatermarkRecord rec;
  rec.watermark.items = block;
  rec.requested_ratio = p;
  rec.rf = rf;
  rec.constraint = constraint;
  rec.seed = seed;
  rec.target_count =
      static_cast<int>(std::ceil(p * static_cast<double>(d.users.size())));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> user_order(d.users.size());
  std::iota(user_order.begin(), user_order.end(), 0);
  std::shuffle(user_order.begin(), user_order.end(), rng);

  bool any_eligible = false;
  for (std::size_t ui : user_order) {
    if (rec.achieved_count >= rec.target_count) break;
    UserSequence& seq = d.users[ui];
    bool has_wm_item = std::any_of(seq.items.begin(), seq.items.end(), [&](ItemId it) {
      return eligibility_items.count(it) != 0;
    });
    if (has_wm_item) continue;
    any_eligible = true;

    const int len = static_cast<int>(seq.items.size());
    std::vector<int> positions(static_cast<std::size_t>(len) + 1);
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);

    for (int pos : positions) {
      std::set<ItemId> fillers = filler_set(seq, pos, static_cast<int>(block.size()), rf);
      if (constraint == ConstraintMode::unique_fillers && !disjoint(fillers, filler_ledger)) {
        continue;  // resample pos without replacement
      }
      seq.items.insert(seq.items.begin() + pos, block.begin(), block.end());
      filler_ledger.insert(fillers.begin(), fillers.end());
      rec.filler_items.insert(fillers.begin(), fillers.end());
      rec.insertions.push_back({seq.user, pos});
      rec.achieved_count += 1;
      break;
    }
  }

  if (!any_eligible) {
    throw Error("embed: no eligible user (every sequence contains a watermark item)");
  }
  rec.partial = rec.achieved_count < rec.target_count;
  return rec;
}

std::pair<Dataset, WatermarkRecord> embed_dataset_watermark(const Dataset& d,
                                                            const WatermarkSequence& wm, double p,
                                                            const ReceptiveFieldSpec& rf,
                                                            std::uint64_t seed,
                                                            ConstraintMode constraint) {
  wm.validate();
  Dataset out = d;
  std::set<ItemId> ledger;
  std::set<ItemId> wm_items(wm.items.begin(), wm.items.end());
  WatermarkRecord rec =
      embed_block_with_ledger(out, wm.items, wm_items, p, rf, seed, constraint, ledger);
  return {std::move(out), std::move(rec)};
}

}  // namespace seqmark
