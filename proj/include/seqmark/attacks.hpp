#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqmark/corpus.hpp"
#include "seqmark/evalkit.hpp"
#include "seqmark/seqrec.hpp"
#include "seqmark/watermark.hpp"

namespace seqmark {

// Sequential rule X -> Y over unordered item sets. A sequence matches the
// antecedent when every item of X occurs anywhere in it; the rule fires when,
// additionally, every item of Y occurs strictly after the earliest point at
// which X is complete (the latest first-occurrence among X items).
struct Rule {
  std::vector<ItemId> antecedent;  // sorted
  std::vector<ItemId> consequent;  // sorted
  std::int64_t support = 0;        // sequences where the rule fires
  std::int64_t antecedent_support = 0;
  double confidence = 0.0;         // support / antecedent_support
};

// Everything the attack evaluations need: benign query sequences for
// validity, the leave-one-out split for utility, the watermark under test,
// and the cutoffs.
struct AttackEval {
  const Dataset* query_dataset = nullptr;
  const LeaveOneOutSplit* split = nullptr;
  WatermarkSequence wm;
  std::vector<int> ks{5, 10, 20, 100};
  int validity_sample = 0;
};

struct AttackPhase {
  std::string phase;  // before | epoch-N | after
  MetricsReport validity;
  MetricsReport utility;
};

struct AttackReport {
  std::vector<AttackPhase> phases;
  const AttackPhase& before() const;
  const AttackPhase& after() const;
};

// CSV schema `phase,context,k,recall,ndcg,n_queries`.
void write_attack_csv(const AttackReport& report, const std::string& path);

// Continues training the watermarked model on clean data only, recording
// validity and utility at each checkpoint epoch. An empty checkpoint list
// (or max 0) evaluates the unmodified model twice.
AttackReport finetune_attack(const Model& m, const Dataset& clean, const TrainConfig& tc,
                             const std::vector<int>& checkpoints, const AttackEval& eval);

struct DistillConfig {
  int n_sequences = 3000;
  int gen_len = 30;
  bool sample_topk = false;  // default: greedy top-1 continuation
  int topk = 10;
  ModelConfig surrogate_model;
  TrainConfig surrogate_train;
};

// Model-extraction attack: query the target autoregressively from uniformly
// random seed items to build a synthetic corpus, then train a surrogate on
// it. Reports target (before) and surrogate (after) validity/utility.
std::pair<Model, AttackReport> distill_attack(const Model& target, const DistillConfig& cfg,
                                              std::uint64_t seed, const AttackEval& eval);

// Exposed for tests: the generated corpus, each sequence exactly gen_len
// items starting from its seed item.
Dataset generate_extraction_corpus(const Model& target, int n_sequences, int gen_len,
                                   bool sample_topk, int topk, std::uint64_t seed);

// Bounded exhaustive rule enumeration with exact supports/confidences.
// `budget` caps the number of candidate (X,Y) support computations.
std::vector<Rule> mine_rules(const Dataset& d, int max_antecedent, int max_consequent,
                             std::int64_t min_support, std::int64_t budget = 2'000'000);

void write_rules_csv(const std::vector<Rule>& rules, const std::string& path);

struct HardenResult {
  Dataset dataset;
  std::vector<WatermarkRecord> response_records;  // one per response variant
  std::vector<WatermarkRecord> shuffled_records;  // bodies only, permuted
  std::vector<ItemId> responses;
};

// Rule-mining countermeasure: embeds n_responses watermarks sharing the base
// body but with distinct responses (the base's own response first), plus
// n_shuffled runs of permuted bodies without a response. All runs share one
// filler ledger and are applied sequentially, so no user is watermarked
// twice. Extra responses are drawn from the unpopular tail like base items.
HardenResult harden_watermark(const Dataset& d, const WatermarkSequence& base, int n_responses,
                              int n_shuffled, double p_per_variant, const ReceptiveFieldSpec& rf,
                              std::uint64_t seed, double tail_fraction = 0.10);

}  // namespace seqmark
