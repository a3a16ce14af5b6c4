#include "seqmark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "seqmark/dwrs_d.hpp"

namespace seqmark {

const AttackPhase& AttackReport::before() const {
  for (const auto& p : phases) {
    if (p.phase == "before") return p;
  }
  throw Error("attack report has no 'before' phase");
}

const AttackPhase& AttackReport::after() const {
  for (auto it = phases.rbegin(); it != phases.rend(); ++it) {
    if (it->phase == "after") return *it;
  }
  throw Error("attack report has no 'after' phase");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

AttackPhase evaluate_phase(const Model& m, const AttackEval& eval, const std::string& phase) {
  if (!eval.query_dataset || !eval.split) throw Error("attack evaluation context incomplete");
  AttackPhase out;
  out.phase = phase;
  out.validity =
      watermark_validity(m, *eval.query_dataset, eval.wm, eval.ks, eval.validity_sample);
  out.utility = model_utility(m, *eval.split, eval.ks);
  return out;
}

}  // namespace

void write_attack_csv(const AttackReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write attack csv: " + path);
  out << "phase,context,k,recall,ndcg,n_queries\n";
  for (const auto& phase : report.phases) {
    for (const MetricsReport* rep : {&phase.validity, &phase.utility}) {
      for (std::size_t i = 0; i < rep->ks.size(); ++i) {
        out << phase.phase << ',' << rep->context << ',' << rep->ks[i] << ','
            << fmt_double(rep->recall[i]) << ',' << fmt_double(rep->ndcg[i]) << ','
            << rep->n_queries << '\n';
      }
    }
  }
}

AttackReport finetune_attack(const Model& m, const Dataset& clean, const TrainConfig& tc,
                             const std::vector<int>& checkpoints, const AttackEval& eval) {
  std::vector<int> points = checkpoints;
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (!points.empty() && points.front() < 0) throw Error("finetune_attack: negative checkpoint");

  AttackReport report;
  report.phases.push_back(evaluate_phase(m, eval, "before"));

  Model cur = m;
  int done = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int target_epoch = points[i];
    if (target_epoch > done) {
      TrainConfig step = tc;
      step.epochs = target_epoch - done;
      // keep the epoch schedule deterministic across differently-spaced checkpoints
      step.seed = derive_seed(tc.seed, static_cast<std::uint64_t>(done) + 100);
      cur = finetune(cur, clean, step);
      done = target_epoch;
    }
    const bool last = i + 1 == points.size();
    report.phases.push_back(
        evaluate_phase(cur, eval, last ? "after" : "epoch-" + std::to_string(target_epoch)));
  }
  if (points.empty()) report.phases.push_back(evaluate_phase(cur, eval, "after"));
  return report;
}

Dataset generate_extraction_corpus(const Model& target, int n_sequences, int gen_len,
                                   bool sample_topk, int topk, std::uint64_t seed) {
  if (n_sequences < 1) throw Error("distill: n_sequences must be >= 1");
  if (gen_len < 2) throw Error("distill: gen_len must be >= 2");
  if (sample_topk && (topk < 1 || topk > target.n_items)) {
    throw Error("distill: topk out of range");
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<ItemId> seed_item(1, target.n_items);

  Dataset gen;
  gen.n_items = target.n_items;
  gen.users.reserve(static_cast<std::size_t>(n_sequences));
  for (int s = 0; s < n_sequences; ++s) {
    UserSequence seq;
    seq.user = s;
    seq.items.push_back(seed_item(rng));
    while (static_cast<int>(seq.items.size()) < gen_len) {
      if (!sample_topk) {
        seq.items.push_back(recommend_topk(target, seq.items, 1).front());
      } else {
        std::vector<ItemId> top = recommend_topk(target, seq.items, topk);
        Eigen::VectorXd scores = score_next(target, seq.items);
        Eigen::VectorXd logits(top.size());
        for (std::size_t i = 0; i < top.size(); ++i) logits(i) = scores(top[i] - 1);
        Eigen::VectorXd probs = (logits.array() - logits.maxCoeff()).exp();
        probs /= probs.sum();
        std::discrete_distribution<int> pick(probs.data(), probs.data() + probs.size());
        seq.items.push_back(top[static_cast<std::size_t>(pick(rng))]);
      }
    }
    gen.users.push_back(std::move(seq));
  }
  return gen;
}

std::pair<Model, AttackReport> distill_attack(const Model& target, const DistillConfig& cfg,
                                              std::uint64_t seed, const AttackEval& eval) {
  Dataset corpus = generate_extraction_corpus(target, cfg.n_sequences, cfg.gen_len,
                                              cfg.sample_topk, cfg.topk, seed);
  Model surrogate = train(corpus, cfg.surrogate_model, cfg.surrogate_train);

  AttackReport report;
  report.phases.push_back(evaluate_phase(target, eval, "before"));
  report.phases.push_back(evaluate_phase(surrogate, eval, "after"));
  return {std::move(surrogate), std::move(report)};
}

namespace {

// Earliest index at which every antecedent item has occurred; -1 when the
// sequence does not contain all of them.
int completion_index(const std::vector<ItemId>& seq, const std::vector<ItemId>& items) {
  int boundary = -1;
  for (ItemId x : items) {
    int first = -1;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] == x) {
        first = static_cast<int>(i);
        break;
      }
    }
    if (first < 0) return -1;
    boundary = std::max(boundary, first);
  }
  return boundary;
}

bool all_after(const std::vector<ItemId>& seq, const std::vector<ItemId>& items, int boundary) {
  for (ItemId y : items) {
    bool found = false;
    for (std::size_t i = static_cast<std::size_t>(boundary) + 1; i < seq.size(); ++i) {
      if (seq[i] == y) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

void combinations(const std::vector<ItemId>& pool, int max_size,
                  const std::function<void(const std::vector<ItemId>&)>& visit) {
  std::vector<ItemId> cur;
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    if (!cur.empty()) visit(cur);
    if (static_cast<int>(cur.size()) == max_size) return;
    for (std::size_t i = start; i < pool.size(); ++i) {
      cur.push_back(pool[i]);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
}

}  // namespace

std::vector<Rule> mine_rules(const Dataset& d, int max_antecedent, int max_consequent,
                             std::int64_t min_support, std::int64_t budget) {
  if (max_antecedent < 1 || max_consequent < 1) throw Error("mine_rules: bounds must be >= 1");
  if (min_support < 1) throw Error("mine_rules: min_support must be >= 1");

  // Items frequent enough to appear in any rule side.
  std::map<ItemId, std::int64_t> seq_count;
  for (const auto& u : d.users) {
    std::set<ItemId> distinct(u.items.begin(), u.items.end());
    for (ItemId i : distinct) seq_count[i] += 1;
  }
  std::vector<ItemId> frequent;
  for (const auto& [item, count] : seq_count) {
    if (count >= min_support) frequent.push_back(item);
  }

  std::vector<Rule> rules;
  std::int64_t spent = 0;

  combinations(frequent, max_antecedent, [&](const std::vector<ItemId>& X) {
    // Antecedent support with per-sequence completion boundaries.
    std::vector<int> boundaries(d.users.size(), -1);
    std::int64_t x_support = 0;
    for (std::size_t ui = 0; ui < d.users.size(); ++ui) {
      boundaries[ui] = completion_index(d.users[ui].items, X);
      if (boundaries[ui] >= 0) ++x_support;
    }
    if (x_support < min_support) return;

    std::vector<ItemId> y_pool;
    for (ItemId i : frequent) {
      if (!std::binary_search(X.begin(), X.end(), i)) y_pool.push_back(i);
    }
    combinations(y_pool, max_consequent, [&](const std::vector<ItemId>& Y) {
      if (++spent > budget) {
        throw Error("mine_rules: enumeration budget exceeded; tighten bounds or raise "
                    "min_support");
      }
      std::int64_t support = 0;
      for (std::size_t ui = 0; ui < d.users.size(); ++ui) {
        if (boundaries[ui] < 0) continue;
        if (all_after(d.users[ui].items, Y, boundaries[ui])) ++support;
      }
      if (support < min_support) return;
      Rule r;
      r.antecedent = X;
      r.consequent = Y;
      r.support = support;
      r.antecedent_support = x_support;
      r.confidence = static_cast<double>(support) / static_cast<double>(x_support);
      rules.push_back(std::move(r));
    });
  });

  return rules;
}

void write_rules_csv(const std::vector<Rule>& rules, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write rules csv: " + path);
  out << "antecedent,consequent,support,confidence\n";
  auto join = [](const std::vector<ItemId>& items) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) s += ';';
      s += std::to_string(items[i]);
    }
    return s;
  };
  for (const auto& r : rules) {
    out << join(r.antecedent) << ',' << join(r.consequent) << ',' << r.support << ','
        << fmt_double(r.confidence) << '\n';
  }
}

HardenResult harden_watermark(const Dataset& d, const WatermarkSequence& base, int n_responses,
                              int n_shuffled, double p_per_variant, const ReceptiveFieldSpec& rf,
                              std::uint64_t seed, double tail_fraction) {
  base.validate();
  if (n_responses < 1) throw Error("harden_watermark: n_responses must be >= 1");
  if (n_shuffled < 0) throw Error("harden_watermark: n_shuffled must be >= 0");
  const std::vector<ItemId> body = base.body();
  if (n_shuffled > 0 && body.size() < 2) {
    throw Error("harden_watermark: shuffled bodies need a body of length >= 2");
  }

  const PopularityTable pop = compute_popularity(d);

  // Response pool: unpopular tail, excluding body items and the base response.
  std::vector<ItemId> responses{base.response()};
  if (n_responses > 1) {
    std::vector<ItemId> order(static_cast<std::size_t>(pop.n_items()));
    std::iota(order.begin(), order.end(), 1);
    std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
      if (pop.count(a) != pop.count(b)) return pop.count(a) < pop.count(b);
      return a < b;
    });
    std::size_t pool_size = static_cast<std::size_t>(
        std::ceil(tail_fraction * static_cast<double>(pop.n_items())));
    pool_size = std::min(pool_size, order.size());
    std::vector<ItemId> pool(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool_size));
    std::set<ItemId> taken(base.items.begin(), base.items.end());
    std::erase_if(pool, [&](ItemId i) { return taken.count(i) != 0; });

    std::mt19937_64 rng(derive_seed(seed, 7));
    const int budget = 1000;
    for (int v = 1; v < n_responses; ++v) {
      bool found = false;
      for (int attempt = 0; attempt < budget && !pool.empty(); ++attempt) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const std::size_t idx = pick(rng);
        const ItemId cand = pool[idx];
        std::vector<ItemId> pattern = body;
        pattern.push_back(cand);
        if (!contains_pattern(d, pattern)) {
          responses.push_back(cand);
          pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
          found = true;
          break;
        }
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
      }
      if (!found) {
        throw Error("harden_watermark: could not draw a fresh response from the unpopular tail");
      }
    }
  }

  HardenResult result;
  result.dataset = d;
  result.responses = responses;
  std::set<ItemId> ledger;

  for (int v = 0; v < n_responses; ++v) {
    std::vector<ItemId> block = body;
    block.push_back(responses[static_cast<std::size_t>(v)]);
    std::set<ItemId> eligibility(block.begin(), block.end());
    WatermarkRecord rec = embed_block_with_ledger(
        result.dataset, block, eligibility, p_per_variant, rf,
        derive_seed(seed, 100 + static_cast<std::uint64_t>(v)), ConstraintMode::unique_fillers,
        ledger);
    result.response_records.push_back(std::move(rec));
  }

  std::mt19937_64 shuffle_rng(derive_seed(seed, 8));
  for (int s = 0; s < n_shuffled; ++s) {
    std::vector<ItemId> permuted = body;
    do {
      std::shuffle(permuted.begin(), permuted.end(), shuffle_rng);
    } while (permuted == body);
    std::set<ItemId> eligibility(permuted.begin(), permuted.end());
    WatermarkRecord rec = embed_block_with_ledger(
        result.dataset, permuted, eligibility, p_per_variant, rf,
        derive_seed(seed, 200 + static_cast<std::uint64_t>(s)), ConstraintMode::unique_fillers,
        ledger);
    result.shuffled_records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace seqmark
