#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "seqmark/attacks.hpp"
#include "seqmark/dwrs_d.hpp"
#include "test_util.hpp"

using namespace seqmark;
using namespace seqmark::testutil;

namespace {

// Fully independent rule oracle: enumerate every (X,Y) over the whole item
// universe and count from the definition, no pruning, no shared helpers.
struct OracleRule {
  std::vector<ItemId> x, y;
  std::int64_t support = 0;
  std::int64_t x_support = 0;
};

void oracle_subsets(ItemId n_items, int max_size, std::vector<std::vector<ItemId>>& out) {
  std::vector<ItemId> cur;
  std::function<void(ItemId)> rec = [&](ItemId start) {
    if (!cur.empty()) out.push_back(cur);
    if (static_cast<int>(cur.size()) == max_size) return;
    for (ItemId i = start; i <= n_items; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(1);
}

std::vector<OracleRule> oracle_rules(const Dataset& d, int max_a, int max_c,
                                     std::int64_t min_support) {
  std::vector<std::vector<ItemId>> xs, ys;
  oracle_subsets(d.n_items, max_a, xs);
  oracle_subsets(d.n_items, max_c, ys);

  std::vector<OracleRule> rules;
  for (const auto& X : xs) {
    for (const auto& Y : ys) {
      bool overlap = false;
      for (ItemId x : X) {
        for (ItemId y : Y) {
          if (x == y) overlap = true;
        }
      }
      if (overlap) continue;

      OracleRule r;
      r.x = X;
      r.y = Y;
      for (const auto& u : d.users) {
        // latest first-occurrence among X items
        int boundary = -1;
        bool have_all = true;
        for (ItemId x : X) {
          int first = -1;
          for (std::size_t i = 0; i < u.items.size(); ++i) {
            if (u.items[i] == x) {
              first = static_cast<int>(i);
              break;
            }
          }
          if (first < 0) {
            have_all = false;
            break;
          }
          boundary = std::max(boundary, first);
        }
        if (!have_all) continue;
        r.x_support += 1;
        bool fires = true;
        for (ItemId y : Y) {
          bool after = false;
          for (std::size_t i = static_cast<std::size_t>(boundary) + 1; i < u.items.size(); ++i) {
            if (u.items[i] == y) {
              after = true;
              break;
            }
          }
          if (!after) {
            fires = false;
            break;
          }
        }
        if (fires) r.support += 1;
      }
      if (r.support >= min_support) rules.push_back(std::move(r));
    }
  }
  return rules;
}

Dataset toy_synthetic(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_users = 120;
  spec.n_items = 40;
  spec.len_min = 6;
  spec.len_max = 14;
  spec.locality = 0.8;
  spec.seed = seed;
  return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("a watermark pattern reaches full confidence") {
  Dataset d;
  d.n_items = 6;
  d.users.push_back({0, {4, 1, 2, 3}});
  d.users.push_back({1, {1, 2, 3, 5}});
  d.users.push_back({2, {6, 4, 5}});
  auto rules = mine_rules(d, 2, 2, 2);

  auto find = [&](std::vector<ItemId> x, std::vector<ItemId> y) -> const Rule* {
    for (const auto& r : rules) {
      if (r.antecedent == x && r.consequent == y) return &r;
    }
    return nullptr;
  };
  const Rule* r12 = find({1}, {2});
  REQUIRE(r12 != nullptr);
  CHECK(r12->confidence == 1.0);
  CHECK(r12->support == 2);

  // the five rules of a 3-item pattern are all representable at bounds (2,2)
  CHECK(find({1}, {2}) != nullptr);
  CHECK(find({1}, {3}) != nullptr);
  CHECK(find({2}, {3}) != nullptr);
  CHECK(find({1}, {2, 3}) != nullptr);
  CHECK(find({1, 2}, {3}) != nullptr);
  for (auto* r : {find({1}, {3}), find({2}, {3}), find({1}, {2, 3}), find({1, 2}, {3})}) {
    CHECK(r->confidence == 1.0);
  }
}

TEST_CASE("repeated items respect the completion boundary") {
  Dataset d;
  d.n_items = 2;
  d.users.push_back({0, {2, 1, 2}});  // 2 occurs again after 1's first occurrence
  d.users.push_back({1, {2, 1}});     // all 2s precede 1
  auto rules = mine_rules(d, 1, 1, 1);
  for (const auto& r : rules) {
    if (r.antecedent == std::vector<ItemId>{1} && r.consequent == std::vector<ItemId>{2}) {
      CHECK(r.support == 1);
      CHECK(r.antecedent_support == 2);
      CHECK(r.confidence == 0.5);
    }
  }
}

TEST_CASE("mined rules equal the brute-force enumeration on random toys") {
  std::mt19937_64 rng(73);
  std::uniform_int_distribution<int> n_users(1, 30);
  std::uniform_int_distribution<ItemId> n_items(2, 15);
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_int_distribution<std::int64_t> min_sup(1, 3);

  for (int trial = 0; trial < 40; ++trial) {
    Dataset d;
    d.n_items = n_items(rng);
    const int users = n_users(rng);
    std::uniform_int_distribution<ItemId> item(1, d.n_items);
    for (int u = 0; u < users; ++u) {
      UserSequence seq;
      seq.user = u;
      const int m = len(rng);
      for (int i = 0; i < m; ++i) seq.items.push_back(item(rng));
      d.users.push_back(std::move(seq));
    }
    const std::int64_t support = min_sup(rng);

    auto mined = mine_rules(d, 2, 2, support, 50'000'000);
    auto expected = oracle_rules(d, 2, 2, support);

    std::map<std::pair<std::vector<ItemId>, std::vector<ItemId>>,
             std::pair<std::int64_t, std::int64_t>>
        oracle_map;
    for (const auto& r : expected) {
      oracle_map[{r.x, r.y}] = {r.support, r.x_support};
    }
    REQUIRE(mined.size() == expected.size());
    for (const auto& r : mined) {
      auto it = oracle_map.find({r.antecedent, r.consequent});
      REQUIRE(it != oracle_map.end());
      CHECK(r.support == it->second.first);
      CHECK(r.antecedent_support == it->second.second);
      // identical integer ratio, so the doubles must match bit for bit
      CHECK(r.confidence ==
            static_cast<double>(it->second.first) / static_cast<double>(it->second.second));
    }
  }
}

TEST_CASE("rule mining enforces its budget and bounds") {
  Dataset d;
  d.n_items = 12;
  for (int u = 0; u < 10; ++u) {
    UserSequence seq;
    seq.user = u;
    for (ItemId i = 1; i <= 12; ++i) seq.items.push_back(i);
    d.users.push_back(std::move(seq));
  }
  CHECK_THROWS_AS(mine_rules(d, 3, 3, 1, 100), Error);
  CHECK_THROWS_AS(mine_rules(d, 0, 1, 1), Error);
  CHECK_THROWS_AS(mine_rules(d, 1, 1, 0), Error);
}

TEST_CASE("rules csv lists one rule per row") {
  Dataset d;
  d.n_items = 4;
  d.users.push_back({0, {1, 2, 3}});
  d.users.push_back({1, {1, 2, 4}});
  auto rules = mine_rules(d, 2, 1, 1);
  TempDir dir;
  write_rules_csv(rules, dir.file("rules.csv"));
  std::string text = slurp(dir.file("rules.csv"));
  CHECK(text.find("antecedent,consequent,support,confidence\n") == 0);
  CHECK(text.find("1;2") != std::string::npos);  // the {1,2} antecedent
}

namespace {

// Benign users over items 1..6 only; 7.. stay fresh for watermarks.
Dataset hardening_toy(int n_users) {
  Dataset d;
  d.n_items = 14;
  for (int u = 0; u < n_users; ++u) {
    UserSequence seq;
    seq.user = u;
    for (int i = 0; i < 6; ++i) seq.items.push_back(static_cast<ItemId>((u + i) % 6 + 1));
    d.users.push_back(std::move(seq));
  }
  return d;
}

}  // namespace

TEST_CASE("two equal-count responses split the body confidence exactly in half") {
  Dataset d = hardening_toy(20);
  WatermarkSequence base;
  base.items = {7, 8, 9};
  ReceptiveFieldSpec rf{0, 0, false};

  HardenResult hr = harden_watermark(d, base, 2, 0, 0.25, rf, 99, 0.6);
  REQUIRE(hr.response_records.size() == 2);
  CHECK(hr.shuffled_records.empty());
  CHECK(hr.responses[0] == 9);
  CHECK(hr.responses[1] != 9);
  for (const auto& rec : hr.response_records) {
    CHECK(rec.achieved_count == 5);
    CHECK_FALSE(rec.partial);
  }

  auto rules = mine_rules(hr.dataset, 2, 1, 1);
  bool found = false;
  for (const auto& r : rules) {
    if (r.antecedent == std::vector<ItemId>{7, 8} &&
        r.consequent == std::vector<ItemId>{9}) {
      found = true;
      CHECK(r.support == 5);
      CHECK(r.antecedent_support == 10);
      CHECK(r.confidence == 0.5);
    }
  }
  CHECK(found);
}

TEST_CASE("confidence toward any single response stays within the even split") {
  Dataset d = hardening_toy(30);
  WatermarkSequence base;
  base.items = {7, 8, 9};
  ReceptiveFieldSpec rf{0, 0, false};
  HardenResult hr = harden_watermark(d, base, 3, 0, 0.2, rf, 5, 0.6);
  auto rules = mine_rules(hr.dataset, 2, 1, 1);
  for (ItemId y : hr.responses) {
    for (const auto& r : rules) {
      if (r.antecedent == std::vector<ItemId>{7, 8} && r.consequent == std::vector<ItemId>{y}) {
        CHECK(r.confidence <= 1.0 / 3.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("shuffled bodies dilute the in-body pair confidence") {
  Dataset d = hardening_toy(30);
  WatermarkSequence base;
  base.items = {7, 8, 9};
  ReceptiveFieldSpec rf{0, 0, false};

  HardenResult plain = harden_watermark(d, base, 1, 0, 0.2, rf, 11, 0.6);
  HardenResult shuffled = harden_watermark(d, base, 1, 1, 0.2, rf, 11, 0.6);
  REQUIRE(shuffled.shuffled_records.size() == 1);
  // the permuted block is a non-identity permutation of the body, no response
  const auto& block = shuffled.shuffled_records[0].watermark.items;
  CHECK(block == std::vector<ItemId>{8, 7});

  auto conf_78 = [](const Dataset& ds) {
    auto rules = mine_rules(ds, 1, 1, 1);
    for (const auto& r : rules) {
      if (r.antecedent == std::vector<ItemId>{7} && r.consequent == std::vector<ItemId>{8}) {
        return r.confidence;
      }
    }
    return 0.0;
  };
  CHECK(conf_78(plain.dataset) == 1.0);
  CHECK(conf_78(shuffled.dataset) < 1.0);
}

TEST_CASE("single-response hardening degenerates to the plain embedding") {
  Dataset d = hardening_toy(20);
  WatermarkSequence base;
  base.items = {7, 8, 9};
  ReceptiveFieldSpec rf{1, 1, false};
  HardenResult hr = harden_watermark(d, base, 1, 0, 0.3, rf, 21, 0.6);
  auto [plain_ds, plain_rec] = embed_dataset_watermark(d, base, 0.3, rf, derive_seed(21, 100));
  REQUIRE(hr.response_records.size() == 1);
  CHECK(hr.response_records[0].achieved_count == plain_rec.achieved_count);
  CHECK(hr.response_records[0].filler_items == plain_rec.filler_items);
  for (std::size_t i = 0; i < d.users.size(); ++i) {
    CHECK(hr.dataset.users[i].items == plain_ds.users[i].items);
  }
}

TEST_CASE("hardening rejects shuffling a single-item body") {
  Dataset d = hardening_toy(10);
  WatermarkSequence base;
  base.items = {7, 9};  // body length 1
  ReceptiveFieldSpec rf{0, 0, false};
  CHECK_THROWS_AS(harden_watermark(d, base, 1, 1, 0.2, rf, 3, 0.6), Error);
}

TEST_CASE("finetuning for zero epochs changes nothing") {
  Dataset d = toy_synthetic(81);
  LeaveOneOutSplit split = split_leave_one_out(d);
  ModelConfig mc;
  mc.d_model = 8;
  mc.max_len = 14;
  mc.ffn_width = 16;
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 4;
  Model m = train(d, mc, tc);

  AttackEval eval;
  eval.query_dataset = &d;
  eval.split = &split;
  eval.wm.items = {38, 39, 40};
  eval.ks = {5, 10};

  AttackReport rep = finetune_attack(m, d, tc, {0}, eval);
  REQUIRE(rep.phases.size() == 2);
  CHECK(rep.before().validity.recall == rep.after().validity.recall);
  CHECK(rep.before().utility.recall == rep.after().utility.recall);
  CHECK(rep.before().utility.ndcg == rep.after().utility.ndcg);

  AttackReport empty = finetune_attack(m, d, tc, {}, eval);
  CHECK(empty.before().utility.recall == empty.after().utility.recall);
}

TEST_CASE("finetune checkpoints label the phase curve") {
  Dataset d = toy_synthetic(83);
  LeaveOneOutSplit split = split_leave_one_out(d);
  ModelConfig mc;
  mc.d_model = 8;
  mc.max_len = 14;
  mc.ffn_width = 16;
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 5;
  Model m = train(d, mc, tc);

  AttackEval eval;
  eval.query_dataset = &d;
  eval.split = &split;
  eval.wm.items = {38, 39, 40};
  eval.ks = {5, 10};

  AttackReport rep = finetune_attack(m, d, tc, {1, 3}, eval);
  REQUIRE(rep.phases.size() == 3);
  CHECK(rep.phases[0].phase == "before");
  CHECK(rep.phases[1].phase == "epoch-1");
  CHECK(rep.phases[2].phase == "after");

  TempDir dir;
  write_attack_csv(rep, dir.file("attack.csv"));
  std::string text = slurp(dir.file("attack.csv"));
  CHECK(text.find("phase,context,k,recall,ndcg,n_queries\n") == 0);
  CHECK(text.find("epoch-1,validity") != std::string::npos);
  CHECK(text.find("after,utility") != std::string::npos);
}

TEST_CASE("extraction corpora have exact lengths and valid ids") {
  Dataset d = toy_synthetic(85);
  ModelConfig mc;
  mc.d_model = 8;
  mc.max_len = 14;
  mc.ffn_width = 16;
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 6;
  Model m = train(d, mc, tc);

  Dataset gen = generate_extraction_corpus(m, 50, 12, false, 10, 17);
  CHECK(gen.users.size() == 50);
  CHECK(gen.n_items == d.n_items);
  for (const auto& u : gen.users) {
    CHECK(u.items.size() == 12);
    for (ItemId i : u.items) {
      CHECK(i >= 1);
      CHECK(i <= d.n_items);
    }
  }
  // deterministic
  Dataset gen2 = generate_extraction_corpus(m, 50, 12, false, 10, 17);
  for (std::size_t i = 0; i < gen.users.size(); ++i) {
    CHECK(gen.users[i].items == gen2.users[i].items);
  }
  // sampled variant stays in range too
  Dataset sampled = generate_extraction_corpus(m, 20, 8, true, 5, 18);
  for (const auto& u : sampled.users) CHECK(u.items.size() == 8);

  CHECK_THROWS_AS(generate_extraction_corpus(m, 0, 12, false, 10, 1), Error);
}

TEST_CASE("distilling an untrained target leaves validity at chance level") {
  Dataset d = toy_synthetic(87);
  LeaveOneOutSplit split = split_leave_one_out(d);
  ModelConfig mc;
  mc.d_model = 8;
  mc.max_len = 14;
  mc.ffn_width = 16;
  Model random_target = init_model(d.n_items, mc, 123);

  AttackEval eval;
  eval.query_dataset = &d;
  eval.split = &split;
  eval.wm.items = {38, 39, 40};
  eval.ks = {10};

  DistillConfig cfg;
  cfg.n_sequences = 120;
  cfg.gen_len = 10;
  cfg.surrogate_model = mc;
  cfg.surrogate_train.epochs = 3;
  cfg.surrogate_train.seed = 9;

  auto [surrogate, rep] = distill_attack(random_target, cfg, 33, eval);

  // Monte-Carlo over fresh random watermarks: the mean validity of the
  // surrogate stays within a factor two of the chance level k/n.
  std::mt19937_64 rng(91);
  std::uniform_int_distribution<ItemId> item(1, d.n_items);
  double sum = 0.0;
  const int runs = 12;
  for (int run = 0; run < runs; ++run) {
    WatermarkSequence wm;
    std::set<ItemId> picked;
    while (picked.size() < 3) picked.insert(item(rng));
    wm.items.assign(picked.begin(), picked.end());
    sum += watermark_validity(surrogate, d, wm, {10}).recall_at(10);
  }
  CHECK(sum / runs <= 2.0 * 10.0 / static_cast<double>(d.n_items));
}
