#include "seqmark/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace seqmark {

double MetricsReport::recall_at(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return recall[i];
  }
  throw Error("report has no cutoff k=" + std::to_string(k));
}

double MetricsReport::ndcg_at(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return ndcg[i];
  }
  throw Error("report has no cutoff k=" + std::to_string(k));
}

std::vector<RankMetrics> rank_metrics(int rank, const std::vector<int>& ks) {
  if (rank < 0) throw Error("rank_metrics: rank must be >= 0");
  std::vector<RankMetrics> out;
  out.reserve(ks.size());
  for (int k : ks) {
    if (k < 1) throw Error("rank_metrics: cutoffs must be >= 1");
    RankMetrics rm;
    if (rank < k) {
      rm.recall = 1.0;
      rm.ndcg = 1.0 / std::log2(static_cast<double>(rank) + 2.0);
    }
    out.push_back(rm);
  }
  return out;
}

int rank_of_target(const Eigen::VectorXd& scores, ItemId target) {
  const double ts = scores(target - 1);
  int rank = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const ItemId id = static_cast<ItemId>(i) + 1;
    if (id == target) continue;
    if (scores(i) > ts || (scores(i) == ts && id < target)) ++rank;
  }
  return rank;
}

namespace {

struct Accumulator {
  std::vector<int> ks;
  std::vector<double> recall_sum;
  std::vector<double> ndcg_sum;
  std::int64_t n = 0;

  explicit Accumulator(const std::vector<int>& cutoffs)
      : ks(cutoffs), recall_sum(cutoffs.size(), 0.0), ndcg_sum(cutoffs.size(), 0.0) {}

  void add(int rank) {
    auto rm = rank_metrics(rank, ks);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      recall_sum[i] += rm[i].recall;
      ndcg_sum[i] += rm[i].ndcg;
    }
    n += 1;
  }

  MetricsReport finish(const std::string& context) const {
    if (n == 0) throw Error("evaluation saw no queries");
    MetricsReport rep;
    rep.context = context;
    rep.ks = ks;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      rep.recall.push_back(recall_sum[i] / static_cast<double>(n));
      rep.ndcg.push_back(ndcg_sum[i] / static_cast<double>(n));
    }
    rep.n_queries = n;
    return rep;
  }
};

}  // namespace

MetricsReport model_utility(const Scorer& scorer, const LeaveOneOutSplit& split,
                            const std::vector<int>& ks, bool exclude_seen) {
  if (split.entries.empty()) throw Error("model_utility: no eligible users in split");
  Accumulator acc(ks);
  std::vector<ItemId> query;
  for (const auto& e : split.entries) {
    query = e.train;
    query.push_back(e.val);
    Eigen::VectorXd scores = scorer(query);
    if (exclude_seen) {
      for (ItemId seen : query) {
        if (seen != e.test) scores(seen - 1) = -std::numeric_limits<double>::infinity();
      }
    }
    acc.add(rank_of_target(scores, e.test));
  }
  return acc.finish("utility");
}

MetricsReport model_utility(const Model& m, const LeaveOneOutSplit& split,
                            const std::vector<int>& ks, bool exclude_seen) {
  return model_utility(
      [&m](std::span<const ItemId> query) { return score_next(m, query); }, split, ks,
      exclude_seen);
}

MetricsReport watermark_validity(const Scorer& scorer, const Dataset& d,
                                 const WatermarkSequence& wm, const std::vector<int>& ks,
                                 int sample, const std::string& context) {
  wm.validate();
  const std::vector<ItemId> body = wm.body();
  const ItemId response = wm.response();

  std::vector<std::size_t> picks;
  const std::size_t n_users = d.users.size();
  if (sample <= 0 || static_cast<std::size_t>(sample) >= n_users) {
    picks.resize(n_users);
    for (std::size_t i = 0; i < n_users; ++i) picks[i] = i;
  } else {
    // evenly strided, deterministic subset
    for (int i = 0; i < sample; ++i) {
      picks.push_back(static_cast<std::size_t>(i) * n_users / static_cast<std::size_t>(sample));
    }
  }

  Accumulator acc(ks);
  std::vector<ItemId> query;
  for (std::size_t ui : picks) {
    const auto& u = d.users[ui];
    if (u.items.empty()) continue;
    query = u.items;
    query.insert(query.end(), body.begin(), body.end());
    Eigen::VectorXd scores = scorer(query);
    acc.add(rank_of_target(scores, response));
  }
  return acc.finish(context);
}

MetricsReport watermark_validity(const Model& m, const Dataset& d, const WatermarkSequence& wm,
                                 const std::vector<int>& ks, int sample,
                                 const std::string& context) {
  return watermark_validity(
      [&m](std::span<const ItemId> query) { return score_next(m, query); }, d, wm, ks, sample,
      context);
}

DiscriminabilityReport discriminability_report(const MetricsReport& wm_report,
                                               const MetricsReport& oracle_report,
                                               double margin) {
  if (wm_report.ks != oracle_report.ks) {
    throw Error("discriminability_report: cutoff lists differ");
  }
  DiscriminabilityReport rep;
  rep.ks = wm_report.ks;
  for (std::size_t i = 0; i < rep.ks.size(); ++i) {
    rep.recall_margin.push_back(wm_report.recall[i] - oracle_report.recall[i]);
    rep.ndcg_margin.push_back(wm_report.ndcg[i] - oracle_report.ndcg[i]);
  }
  rep.margin_at_10 = wm_report.recall_at(10) - oracle_report.recall_at(10);
  rep.verdict = rep.margin_at_10 >= margin ? Verdict::claim : Verdict::no_claim;
  return rep;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write metrics csv: " + path);
  out << "context,k,recall,ndcg,n_queries\n";
  for (const auto& rep : reports) {
    for (std::size_t i = 0; i < rep.ks.size(); ++i) {
      out << rep.context << ',' << rep.ks[i] << ',' << fmt_double(rep.recall[i]) << ','
          << fmt_double(rep.ndcg[i]) << ',' << rep.n_queries << '\n';
    }
  }
}

std::vector<MetricsReport> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open metrics csv: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "context,k,recall,ndcg,n_queries") {
    throw Error("bad metrics csv header in " + path);
  }
  std::vector<MetricsReport> reports;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string context, kf, rf, nf, qf;
    if (!std::getline(ss, context, ',') || !std::getline(ss, kf, ',') ||
        !std::getline(ss, rf, ',') || !std::getline(ss, nf, ',') || !std::getline(ss, qf)) {
      throw Error("bad metrics csv row: " + line);
    }
    if (reports.empty() || reports.back().context != context) {
      MetricsReport rep;
      rep.context = context;
      reports.push_back(rep);
    }
    MetricsReport& rep = reports.back();
    rep.ks.push_back(std::stoi(kf));
    rep.recall.push_back(std::stod(rf));
    rep.ndcg.push_back(std::stod(nf));
    rep.n_queries = std::stoll(qf);
  }
  return reports;
}

std::string format_report(const MetricsReport& report) {
  std::ostringstream out;
  out << report.context << " (" << report.n_queries << " queries)\n";
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "  R@%-4d %.4f   N@%-4d %.4f\n", report.ks[i],
                  report.recall[i], report.ks[i], report.ndcg[i]);
    out << buf;
  }
  return out.str();
}

}  // namespace seqmark
