#include "seqmark/dwrs_u.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

namespace seqmark {

CandidatePool candidate_pool(const PopularityTable& pop, int l) {
  if (l < 2) throw Error("candidate_pool: l must be >= 2");
  const ItemId n = pop.n_items();
  if (n < l) throw Error("candidate_pool: fewer items than watermark length");

  std::map<std::int64_t, std::vector<ItemId>> by_count;
  for (ItemId i = 1; i <= n; ++i) by_count[pop.count(i)].push_back(i);

  CandidatePool pool;
  for (const auto& [count, items] : by_count) {
    pool.items.insert(pool.items.end(), items.begin(), items.end());
    pool.group_sizes.push_back(static_cast<int>(items.size()));
    pool.group_counts.push_back(count);
    if (pool.items.size() >= static_cast<std::size_t>(l)) break;
  }
  return pool;
}

std::pair<int, double> most_unpopular_subsequence(const UserSequence& seq, int n,
                                                  const PopularityTable& pop) {
  const int len = static_cast<int>(seq.items.size());
  if (n < 1 || n > len) throw Error("most_unpopular_subsequence: need 1 <= n <= len(seq)");

  // Window sums of integer counts are exact, so the argmin and its tie-break
  // are immune to floating-point accumulation order.
  std::int64_t window = 0;
  for (int i = 0; i < n; ++i) window += pop.count(seq.items[static_cast<std::size_t>(i)]);
  std::int64_t best = window;
  int best_start = 0;
  for (int start = 1; start + n <= len; ++start) {
    window -= pop.count(seq.items[static_cast<std::size_t>(start - 1)]);
    window += pop.count(seq.items[static_cast<std::size_t>(start + n - 1)]);
    if (window < best) {
      best = window;
      best_start = start;
    }
  }
  return {best_start, static_cast<double>(best) / static_cast<double>(n)};
}

std::string to_string(InsertPosition pos) {
  switch (pos) {
    case InsertPosition::bus: return "bus";
    case InsertPosition::aus: return "aus";
    case InsertPosition::bps: return "bps";
    case InsertPosition::aps: return "aps";
    case InsertPosition::begin: return "begin";
    case InsertPosition::middle: return "middle";
    case InsertPosition::end: return "end";
  }
  throw Error("unknown insert position");
}

InsertPosition insert_position_from_string(const std::string& s) {
  for (InsertPosition p : kAllInsertPositions) {
    if (to_string(p) == s) return p;
  }
  throw Error("unknown insert position '" + s + "'");
}

namespace {

// Maximum-mean-popularity window, mirroring most_unpopular_subsequence.
int most_popular_start(const UserSequence& seq, int n, const PopularityTable& pop) {
  const int len = static_cast<int>(seq.items.size());
  std::int64_t window = 0;
  for (int i = 0; i < n; ++i) window += pop.count(seq.items[static_cast<std::size_t>(i)]);
  std::int64_t best = window;
  int best_start = 0;
  for (int start = 1; start + n <= len; ++start) {
    window -= pop.count(seq.items[static_cast<std::size_t>(start - 1)]);
    window += pop.count(seq.items[static_cast<std::size_t>(start + n - 1)]);
    if (window > best) {
      best = window;
      best_start = start;
    }
  }
  return best_start;
}

}  // namespace

std::pair<Dataset, UserWatermarkPlan> embed_user_watermark(const Dataset& d, TargetUser target,
                                                           int l, int n, std::uint64_t seed,
                                                           InsertPosition position,
                                                           const UserWatermarkPlan* prior) {
  if (l < 2) throw Error("embed_user_watermark: l must be >= 2");
  if (n < 1) throw Error("embed_user_watermark: n must be >= 1");

  std::size_t target_idx = 0;
  if (target.has_value()) {
    bool found = false;
    for (std::size_t i = 0; i < d.users.size(); ++i) {
      if (d.users[i].user == *target) {
        target_idx = i;
        found = true;
        break;
      }
    }
    if (!found) throw Error("embed_user_watermark: unknown target user");
  } else {
    for (std::size_t i = 1; i < d.users.size(); ++i) {
      if (d.users[i].items.size() > d.users[target_idx].items.size()) target_idx = i;
    }
  }
  const UserSequence& clean = d.users[target_idx];
  if (prior != nullptr && prior->target_user == clean.user) {
    throw Error("embed_user_watermark: target user already carries a watermark");
  }
  if (static_cast<int>(clean.items.size()) < n) {
    throw Error("embed_user_watermark: target sequence shorter than n");
  }

  const PopularityTable pop = compute_popularity(d);
  const std::set<ItemId> target_items(clean.items.begin(), clean.items.end());

  // Pool of unpopular items not present in the target sequence; expand past
  // the minimum-count groups until l such items exist. Expansions beyond the
  // groups needed for l unconstrained items are surfaced in the plan.
  std::map<std::int64_t, std::vector<ItemId>> by_count;
  for (ItemId i = 1; i <= pop.n_items(); ++i) by_count[pop.count(i)].push_back(i);

  CandidatePool base_pool = candidate_pool(pop, l);
  std::vector<ItemId> usable;
  std::vector<int> group_sizes;
  int groups_taken = 0;
  for (const auto& [count, items] : by_count) {
    ++groups_taken;
    group_sizes.push_back(static_cast<int>(items.size()));
    for (ItemId i : items) {
      if (!target_items.count(i)) usable.push_back(i);
    }
    if (groups_taken >= static_cast<int>(base_pool.group_sizes.size()) &&
        usable.size() >= static_cast<std::size_t>(l)) {
      break;
    }
  }
  if (usable.size() < static_cast<std::size_t>(l)) {
    throw Error("embed_user_watermark: cannot find l unpopular items outside the target sequence");
  }

  std::mt19937_64 rng(seed);
  WatermarkSequence wm;
  const int budget = 1000;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= budget) {
      throw Error("embed_user_watermark: resample budget exhausted");
    }
    std::vector<ItemId> picked = usable;
    for (int i = 0; i < l; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                      picked.size() - 1);
      std::swap(picked[static_cast<std::size_t>(i)], picked[pick(rng)]);
    }
    picked.resize(static_cast<std::size_t>(l));
    auto hit = std::search(clean.items.begin(), clean.items.end(), picked.begin(), picked.end());
    if (hit == clean.items.end()) {
      wm.items = std::move(picked);
      break;
    }
  }
  wm.validate();

  auto [c_n_start, c_n_avg] = most_unpopular_subsequence(clean, n, pop);
  const int len = static_cast<int>(clean.items.size());
  int insert_pos = 0;
  switch (position) {
    case InsertPosition::bus: insert_pos = c_n_start; break;
    case InsertPosition::aus: insert_pos = c_n_start + n; break;
    case InsertPosition::bps: insert_pos = most_popular_start(clean, n, pop); break;
    case InsertPosition::aps: insert_pos = most_popular_start(clean, n, pop) + n; break;
    case InsertPosition::begin: insert_pos = 0; break;
    case InsertPosition::middle: insert_pos = len / 2; break;
    case InsertPosition::end: insert_pos = len; break;
  }

  Dataset out = d;
  auto& items = out.users[target_idx].items;
  items.insert(items.begin() + insert_pos, wm.items.begin(), wm.items.end());

  UserWatermarkPlan plan;
  plan.target_user = clean.user;
  plan.watermark = wm;
  plan.n = n;
  plan.insert_pos = insert_pos;
  plan.c_n_start = c_n_start;
  plan.c_n_avg_pop = c_n_avg;
  plan.position_mode = to_string(position);
  plan.pool_group_sizes = group_sizes;
  plan.pool_expansions = std::max(0, groups_taken - static_cast<int>(base_pool.group_sizes.size()));
  plan.seed = seed;
  return {std::move(out), std::move(plan)};
}

}  // namespace seqmark
