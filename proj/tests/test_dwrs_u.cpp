#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "seqmark/dwrs_u.hpp"
#include "test_util.hpp"

using namespace seqmark;
using namespace seqmark::testutil;

namespace {

// Brute-force oracle: fresh integer summation per window, earliest argmin.
std::pair<int, double> naive_unpopular_window(const UserSequence& seq, int n,
                                              const PopularityTable& pop) {
  const int len = static_cast<int>(seq.items.size());
  std::int64_t best_sum = -1;
  int best_start = -1;
  for (int start = 0; start + n <= len; ++start) {
    std::int64_t sum = 0;
    for (int i = start; i < start + n; ++i) {
      sum += pop.count(seq.items[static_cast<std::size_t>(i)]);
    }
    if (best_start < 0 || sum < best_sum) {
      best_sum = sum;
      best_start = start;
    }
  }
  return {best_start, static_cast<double>(best_sum) / n};
}

PopularityTable table_from_counts(const std::vector<std::int64_t>& counts) {
  PopularityTable pop;
  pop.counts.assign(counts.size() + 1, 0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    pop.counts[i + 1] = counts[i];
    pop.total += counts[i];
  }
  return pop;
}

}  // namespace

TEST_CASE("candidate pool expands group by group") {
  // counts: a=3, b=3, c=4, d=9
  PopularityTable pop = table_from_counts({3, 3, 4, 9});

  CandidatePool two = candidate_pool(pop, 2);
  CHECK(two.items == std::vector<ItemId>{1, 2});
  CHECK(two.group_sizes == std::vector<int>{2});
  CHECK(two.group_counts == std::vector<std::int64_t>{3});

  CandidatePool three = candidate_pool(pop, 3);
  CHECK(three.items == std::vector<ItemId>{1, 2, 3});
  CHECK(three.group_sizes == std::vector<int>{2, 1});

  PopularityTable uniform = table_from_counts({5, 5, 5, 5});
  CandidatePool all = candidate_pool(uniform, 2);
  CHECK(all.items.size() == 4);

  PopularityTable tiny = table_from_counts({1});
  CHECK_THROWS_AS(candidate_pool(tiny, 2), Error);
}

TEST_CASE("most unpopular subsequence matches hand-worked windows") {
  PopularityTable pop = table_from_counts({5, 1, 1, 9});
  UserSequence seq{0, {1, 2, 3, 4}};  // pops 5,1,1,9

  auto [start, mean] = most_unpopular_subsequence(seq, 2, pop);
  CHECK(start == 1);
  CHECK(mean == doctest::Approx(1.0));

  PopularityTable uniform = table_from_counts({4, 4, 4, 4});
  auto [tie_start, tie_mean] = most_unpopular_subsequence(seq, 2, uniform);
  CHECK(tie_start == 0);
  CHECK(tie_mean == doctest::Approx(4.0));

  auto [full_start, full_mean] = most_unpopular_subsequence(seq, 4, pop);
  CHECK(full_start == 0);
  CHECK(full_mean == doctest::Approx(4.0));

  CHECK_THROWS_AS(most_unpopular_subsequence(seq, 5, pop), Error);
  CHECK_THROWS_AS(most_unpopular_subsequence(seq, 0, pop), Error);
}

TEST_CASE("window argmin equals the exhaustive scan on random triples") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len_draw(1, 40);
  std::uniform_int_distribution<std::int64_t> count_draw(0, 50);
  for (int trial = 0; trial < 200; ++trial) {
    const int len = len_draw(rng);
    std::uniform_int_distribution<int> n_draw(1, len);
    const int n = n_draw(rng);
    const ItemId n_items = 12;
    std::vector<std::int64_t> counts;
    for (ItemId i = 0; i < n_items; ++i) counts.push_back(count_draw(rng));
    PopularityTable pop = table_from_counts(counts);
    UserSequence seq{0, {}};
    std::uniform_int_distribution<ItemId> item(1, n_items);
    for (int i = 0; i < len; ++i) seq.items.push_back(item(rng));

    auto got = most_unpopular_subsequence(seq, n, pop);
    auto want = naive_unpopular_window(seq, n, pop);
    CHECK(got.first == want.first);
    CHECK(got.second == doctest::Approx(want.second));
  }
}

TEST_CASE("user watermark splices before the most unpopular window") {
  Dataset d;
  d.n_items = 5;
  d.users.push_back({0, {1, 2, 3}});
  for (int u = 1; u <= 8; ++u) d.users.push_back({u, {1}});
  // counts: 1->9, 2->1, 3->1, 4->0, 5->0

  auto [out, plan] = embed_user_watermark(d, std::int64_t{0}, 2, 2, 77);
  CHECK(plan.target_user == 0);
  CHECK(plan.c_n_start == 1);
  CHECK(plan.insert_pos == 1);
  CHECK(plan.c_n_avg_pop == doctest::Approx(1.0));
  CHECK(plan.position_mode == "bus");
  REQUIRE(plan.watermark.items.size() == 2);
  CHECK(std::set<ItemId>(plan.watermark.items.begin(), plan.watermark.items.end()) ==
        std::set<ItemId>{4, 5});

  const auto& marked = out.users[0].items;
  REQUIRE(marked.size() == 5);
  CHECK(marked[0] == 1);
  CHECK(marked[1] == plan.watermark.items[0]);
  CHECK(marked[2] == plan.watermark.items[1]);
  CHECK(marked[3] == 2);
  CHECK(marked[4] == 3);

  // non-target sequences untouched
  for (std::size_t i = 1; i < d.users.size(); ++i) {
    CHECK(out.users[i].items == d.users[i].items);
  }
}

TEST_CASE("longest-sequence target selection and splice fidelity") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 40; ++trial) {
    Dataset d = random_dataset(rng, 15, 25, 5, 30);
    std::size_t longest = 0;
    for (std::size_t i = 1; i < d.users.size(); ++i) {
      if (d.users[i].items.size() > d.users[longest].items.size()) longest = i;
    }
    const int n = 3;
    if (static_cast<int>(d.users[longest].items.size()) < n) continue;

    Dataset out;
    UserWatermarkPlan plan;
    try {
      std::tie(out, plan) = embed_user_watermark(d, std::nullopt, 4, n, trial);
    } catch (const Error&) {
      continue;  // pool can be infeasible on tiny draws
    }
    CHECK(plan.target_user == d.users[longest].user);

    const UserSequence* clean = d.find_user(plan.target_user);
    const UserSequence* marked = out.find_user(plan.target_user);
    std::vector<ItemId> restored = marked->items;
    restored.erase(restored.begin() + plan.insert_pos,
                   restored.begin() + plan.insert_pos + plan.watermark.length());
    CHECK(restored == clean->items);

    // watermark items are absent from the clean target and unpopular enough
    PopularityTable pop = compute_popularity(d);
    std::set<ItemId> target_items(clean->items.begin(), clean->items.end());
    std::int64_t pool_max = 0;
    {
      CandidatePool base = candidate_pool(pop, plan.watermark.length());
      pool_max = base.group_counts.back();
      // expansions raise the admissible ceiling group by group
      std::vector<std::int64_t> distinct_counts;
      for (ItemId i = 1; i <= pop.n_items(); ++i) distinct_counts.push_back(pop.count(i));
      std::sort(distinct_counts.begin(), distinct_counts.end());
      distinct_counts.erase(std::unique(distinct_counts.begin(), distinct_counts.end()),
                            distinct_counts.end());
      const std::size_t groups_used = plan.pool_group_sizes.size();
      if (groups_used > 0 && groups_used <= distinct_counts.size()) {
        pool_max = distinct_counts[groups_used - 1];
      }
    }
    for (ItemId it : plan.watermark.items) {
      CHECK_FALSE(target_items.count(it));
      CHECK(pop.count(it) <= pool_max);
    }

    // position optimality against the brute-force oracle
    auto want = naive_unpopular_window(*clean, n, pop);
    CHECK(plan.c_n_start == want.first);

    // determinism
    auto [out2, plan2] = embed_user_watermark(d, std::nullopt, 4, n, trial);
    CHECK(plan2.watermark.items == plan.watermark.items);
    CHECK(plan2.insert_pos == plan.insert_pos);
    CHECK(out2.find_user(plan.target_user)->items == marked->items);
  }
}

TEST_CASE("pool expansion is forced and logged when tail items sit in the target") {
  Dataset d;
  d.n_items = 6;
  // items 4,5 are the rarest but live in the target; 6 is next-rarest outside
  d.users.push_back({0, {4, 5, 1, 1, 2}});
  d.users.push_back({1, {1, 2, 3, 6, 3}});
  d.users.push_back({2, {1, 2, 3, 2, 3}});
  // counts: 1->4, 2->4, 3->4, 4->1, 5->1, 6->1
  auto [out, plan] = embed_user_watermark(d, std::int64_t{0}, 2, 2, 5);
  CHECK(plan.pool_expansions >= 1);
  for (ItemId it : plan.watermark.items) {
    CHECK(it != 4);
    CHECK(it != 5);
  }
}

TEST_CASE("re-watermarking an already watermarked user is rejected") {
  Dataset d;
  d.n_items = 8;
  d.users.push_back({0, {1, 2, 3, 1, 2}});
  d.users.push_back({1, {1, 2}});
  auto [out, plan] = embed_user_watermark(d, std::int64_t{0}, 2, 2, 9);
  CHECK_THROWS_AS(embed_user_watermark(out, std::int64_t{0}, 2, 2, 10, InsertPosition::bus, &plan),
                  Error);
  // a different target is still fine
  CHECK_NOTHROW(embed_user_watermark(out, std::int64_t{1}, 2, 2, 11, InsertPosition::bus, &plan));
}

TEST_CASE("target shorter than n is an argument error") {
  Dataset d;
  d.n_items = 8;
  d.users.push_back({0, {1, 2}});
  d.users.push_back({1, {1, 2, 3, 4, 5}});
  CHECK_THROWS_AS(embed_user_watermark(d, std::int64_t{0}, 2, 3, 1), Error);
  CHECK_THROWS_AS(embed_user_watermark(d, std::int64_t{99}, 2, 1, 1), Error);
}

TEST_CASE("insert position modes land where advertised") {
  Dataset d;
  d.n_items = 10;
  // target: pops make index 2..3 the unpopular window and 0..1 the popular one
  d.users.push_back({0, {1, 2, 3, 4, 5, 6}});
  for (int u = 1; u <= 6; ++u) d.users.push_back({u, {1, 2}});
  // counts: 1->7, 2->7, 3..6 -> 1, rest 0
  const int n = 2;
  const int len = 6;

  auto run = [&](InsertPosition mode) {
    auto [out, plan] = embed_user_watermark(d, std::int64_t{0}, 2, n, 13, mode);
    return plan;
  };
  CHECK(run(InsertPosition::bus).insert_pos == 2);
  CHECK(run(InsertPosition::aus).insert_pos == 4);
  CHECK(run(InsertPosition::bps).insert_pos == 0);
  CHECK(run(InsertPosition::aps).insert_pos == 2);
  CHECK(run(InsertPosition::begin).insert_pos == 0);
  CHECK(run(InsertPosition::middle).insert_pos == len / 2);
  CHECK(run(InsertPosition::end).insert_pos == len);
  CHECK(run(InsertPosition::aus).position_mode == "aus");
}

TEST_CASE("user plan round-trips through its file form") {
  Dataset d;
  d.n_items = 6;
  d.users.push_back({4, {1, 2, 3, 1, 2}});
  d.users.push_back({7, {2, 3}});
  auto [out, plan] = embed_user_watermark(d, std::int64_t{4}, 2, 2, 21);

  TempDir dir;
  save_user_plan(plan, dir.file("plan.json"));
  CHECK(record_variant(dir.file("plan.json")) == "user");
  UserWatermarkPlan loaded = load_user_plan(dir.file("plan.json"));
  CHECK(loaded.target_user == plan.target_user);
  CHECK(loaded.watermark.items == plan.watermark.items);
  CHECK(loaded.n == plan.n);
  CHECK(loaded.insert_pos == plan.insert_pos);
  CHECK(loaded.c_n_start == plan.c_n_start);
  CHECK(loaded.c_n_avg_pop == doctest::Approx(plan.c_n_avg_pop));
  CHECK(loaded.position_mode == plan.position_mode);
  CHECK(loaded.pool_expansions == plan.pool_expansions);
}
