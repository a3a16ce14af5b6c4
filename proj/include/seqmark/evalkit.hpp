#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seqmark/corpus.hpp"
#include "seqmark/seqrec.hpp"
#include "seqmark/watermark.hpp"

namespace seqmark {

struct MetricsReport {
  std::string context;        // utility | validity | oracle-validity
  std::vector<int> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::int64_t n_queries = 0;

  double recall_at(int k) const;
  double ndcg_at(int k) const;
};

struct RankMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

// Single relevant item at 0-based `rank`: recall@k = [rank < k],
// ndcg@k = 1/log2(rank+2) inside the cutoff (ideal DCG is 1).
std::vector<RankMetrics> rank_metrics(int rank, const std::vector<int>& ks);

// 0-based rank of `target` under descending score with ascending-id
// tie-break, matching recommend_topk ordering.
int rank_of_target(const Eigen::VectorXd& scores, ItemId target);

// Any next-item scorer: returns a vector indexed by item id - 1.
using Scorer = std::function<Eigen::VectorXd(std::span<const ItemId>)>;

// Leave-one-out utility: each user's test item ranked given the full prefix
// (validation item included in the query).
MetricsReport model_utility(const Model& m, const LeaveOneOutSplit& split,
                            const std::vector<int>& ks, bool exclude_seen = false);
MetricsReport model_utility(const Scorer& scorer, const LeaveOneOutSplit& split,
                            const std::vector<int>& ks, bool exclude_seen = false);

// Black-box watermark validity: the body of wm is appended to benign user
// sequences and the response item's rank is scored. sample <= 0 queries every
// user; otherwise an evenly strided deterministic subset of `sample` users.
MetricsReport watermark_validity(const Model& m, const Dataset& d, const WatermarkSequence& wm,
                                 const std::vector<int>& ks, int sample = 0,
                                 const std::string& context = "validity");
MetricsReport watermark_validity(const Scorer& scorer, const Dataset& d,
                                 const WatermarkSequence& wm, const std::vector<int>& ks,
                                 int sample = 0, const std::string& context = "validity");

enum class Verdict { claim, no_claim };

struct DiscriminabilityReport {
  Verdict verdict = Verdict::no_claim;
  double margin_at_10 = 0.0;
  std::vector<int> ks;
  std::vector<double> recall_margin;  // watermarked minus oracle, per k
  std::vector<double> ndcg_margin;
};

// Ownership call: claim iff watermarked recall@10 exceeds the oracle's by at
// least `margin`. Both reports must carry the same cutoffs including 10.
DiscriminabilityReport discriminability_report(const MetricsReport& wm_report,
                                               const MetricsReport& oracle_report,
                                               double margin = 0.5);

// CSV schema `context,k,recall,ndcg,n_queries`; the optional leading phase
// column is used by attack reports.
void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::string& path);
std::vector<MetricsReport> read_metrics_csv(const std::string& path);

std::string format_report(const MetricsReport& report);

}  // namespace seqmark
