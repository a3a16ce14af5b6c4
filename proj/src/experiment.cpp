#include "seqmark/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "seqmark/dwrs_d.hpp"

namespace seqmark {

using nlohmann::json;

namespace {

ReceptiveFieldSpec parse_rf(const json& j) {
  ReceptiveFieldSpec rf;
  rf.before = j.value("before", 5);
  rf.after = j.value("after", 5);
  rf.whole_sequence = j.value("whole_sequence", false);
  rf.validate();
  return rf;
}

DatasetFormat parse_format(const std::string& s) {
  if (s == "sequence-lines") return DatasetFormat::sequence_lines;
  if (s == "triplet-log") return DatasetFormat::triplet_log;
  throw Error("unknown dataset format '" + s + "'");
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path,
                                        std::optional<std::uint64_t> override_seed) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("config parse failure in " + path + ": " + e.what());
  }

  ExperimentConfig cfg;
  if (!j.contains("seed")) throw Error("config must set an explicit seed");
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (override_seed.has_value()) cfg.seed = *override_seed;

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    const bool has_path = d.contains("path");
    const bool has_synth = d.contains("synthetic");
    if (has_path == has_synth) {
      throw Error("dataset must set exactly one of 'path' or 'synthetic'");
    }
    if (has_path) {
      cfg.dataset.path = d.at("path").get<std::string>();
      cfg.dataset.format = parse_format(d.value("format", std::string("sequence-lines")));
    } else {
      const json& s = d.at("synthetic");
      SyntheticSpec spec;
      spec.n_users = s.value("n_users", spec.n_users);
      spec.n_items = s.value("n_items", spec.n_items);
      spec.len_min = s.value("len_min", spec.len_min);
      spec.len_max = s.value("len_max", spec.len_max);
      spec.locality = s.value("locality", spec.locality);
      spec.seed = s.value("seed", cfg.seed);
      cfg.dataset.synthetic = spec;
    }
    cfg.dataset.holdout_fraction = d.value("holdout_fraction", 0.0);
  }

  if (j.contains("watermark")) {
    const json& w = j.at("watermark");
    cfg.watermark.variant = w.value("variant", std::string("dwrs-d"));
    if (cfg.watermark.variant != "dwrs-d" && cfg.watermark.variant != "dwrs-d-base" &&
        cfg.watermark.variant != "dwrs-u") {
      throw Error("unknown watermark variant '" + cfg.watermark.variant + "'");
    }
    cfg.watermark.l = w.value("l", cfg.watermark.l);
    cfg.watermark.p = w.value("p", cfg.watermark.p);
    cfg.watermark.tail_fraction = w.value("tail_fraction", cfg.watermark.tail_fraction);
    if (w.contains("rf")) cfg.watermark.rf = parse_rf(w.at("rf"));
    if (w.value("bias", std::string("unpopular")) == "popular") {
      cfg.watermark.bias = ItemPoolBias::popular;
    }
    cfg.watermark.n = w.value("n", cfg.watermark.n);
    if (w.contains("target") && !w.at("target").is_string()) {
      cfg.watermark.target = w.at("target").get<std::int64_t>();
    }
    cfg.watermark.position = insert_position_from_string(w.value("position", std::string("bus")));
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    cfg.model.d_model = m.value("d_model", cfg.model.d_model);
    cfg.model.max_len = m.value("max_len", cfg.model.max_len);
    cfg.model.ffn_width = m.value("ffn_width", cfg.model.ffn_width);
    cfg.model.dropout = m.value("dropout", cfg.model.dropout);
    cfg.model.validate();
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    const std::string opt = t.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      cfg.train.optimizer = Optimizer::adam;
    } else if (opt == "sgd") {
      cfg.train.optimizer = Optimizer::sgd;
    } else {
      throw Error("unknown optimizer '" + opt + "'");
    }
    cfg.train.validate();
  }
  cfg.train.seed = cfg.seed;

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (e.contains("ks")) cfg.eval.ks = e.at("ks").get<std::vector<int>>();
    cfg.eval.margin = e.value("margin", cfg.eval.margin);
    cfg.eval.validity_sample = e.value("validity_sample", cfg.eval.validity_sample);
  }

  if (j.contains("attack")) {
    const json& a = j.at("attack");
    if (a.contains("finetune")) {
      const json& f = a.at("finetune");
      if (f.contains("checkpoints")) {
        cfg.finetune.checkpoints = f.at("checkpoints").get<std::vector<int>>();
      }
    }
    if (a.contains("distill")) {
      const json& dd = a.at("distill");
      cfg.distill.n_sequences = dd.value("n_sequences", cfg.distill.n_sequences);
      cfg.distill.gen_len = dd.value("gen_len", cfg.distill.gen_len);
      cfg.distill.sample_topk = dd.value("sample_topk", cfg.distill.sample_topk);
      cfg.distill.topk = dd.value("topk", cfg.distill.topk);
    }
    if (a.contains("mine")) {
      const json& mm = a.at("mine");
      cfg.mine.max_antecedent = mm.value("max_antecedent", cfg.mine.max_antecedent);
      cfg.mine.max_consequent = mm.value("max_consequent", cfg.mine.max_consequent);
      cfg.mine.min_support = mm.value("min_support", cfg.mine.min_support);
      cfg.mine.budget = mm.value("budget", cfg.mine.budget);
    }
    if (a.contains("harden")) {
      const json& h = a.at("harden");
      cfg.harden.n_responses = h.value("n_responses", cfg.harden.n_responses);
      cfg.harden.n_shuffled = h.value("n_shuffled", cfg.harden.n_shuffled);
      cfg.harden.p_per_variant = h.value("p_per_variant", cfg.harden.p_per_variant);
    }
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    cfg.sweep.axis = s.value("axis", std::string());
    if (s.contains("values")) {
      for (const auto& v : s.at("values")) {
        if (v.is_string()) {
          cfg.sweep.values.push_back(v.get<std::string>());
        } else {
          std::ostringstream os;
          os << v;
          cfg.sweep.values.push_back(os.str());
        }
      }
    }
    if (s.contains("seeds")) cfg.sweep.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
  }

  // surrogate defaults mirror the main model unless overridden
  cfg.distill.surrogate_model = cfg.model;
  cfg.distill.surrogate_train = cfg.train;
  cfg.distill.surrogate_train.seed = derive_seed(cfg.seed, 55);
  return cfg;
}

Dataset obtain_dataset(const DatasetSource& source) {
  if (source.synthetic.has_value()) return generate_synthetic(*source.synthetic);
  if (source.path.empty()) throw Error("dataset source is neither a path nor synthetic");
  return load_dataset(source.path, source.format);
}

std::pair<Dataset, Dataset> split_users(const Dataset& d, double holdout_fraction,
                                        std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw Error("holdout fraction must be in (0,1)");
  }
  std::vector<std::size_t> order(d.users.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 13));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t holdout_count = static_cast<std::size_t>(
      std::llround(holdout_fraction * static_cast<double>(d.users.size())));
  std::vector<bool> held(d.users.size(), false);
  for (std::size_t i = 0; i < holdout_count; ++i) held[order[i]] = true;

  Dataset kept, holdout;
  kept.n_items = holdout.n_items = d.n_items;
  for (std::size_t i = 0; i < d.users.size(); ++i) {
    (held[i] ? holdout : kept).users.push_back(d.users[i]);
  }
  if (kept.users.empty() || holdout.users.empty()) {
    throw Error("user split left one side empty");
  }
  return {std::move(kept), std::move(holdout)};
}

WatermarkSequence WatermarkOutcome::watermark() const {
  if (record.has_value()) return record->watermark;
  if (plan.has_value()) return plan->watermark;
  throw Error("empty watermark outcome");
}

WatermarkOutcome run_watermark(const Dataset& clean, const WatermarkParams& params,
                               std::uint64_t seed) {
  WatermarkOutcome out;
  if (params.variant == "dwrs-u") {
    TargetUser target = params.target.has_value() ? TargetUser(*params.target) : std::nullopt;
    auto [ds, plan] =
        embed_user_watermark(clean, target, params.l, params.n, seed, params.position);
    out.dataset = std::move(ds);
    out.plan = std::move(plan);
    return out;
  }
  const ConstraintMode mode = params.variant == "dwrs-d-base" ? ConstraintMode::none
                                                              : ConstraintMode::unique_fillers;
  PopularityTable pop = compute_popularity(clean);
  WatermarkSequence wm = select_watermark_items(pop, clean, params.l, params.tail_fraction,
                                                derive_seed(seed, 3), params.bias);
  auto [ds, rec] = embed_dataset_watermark(clean, wm, params.p, params.rf, derive_seed(seed, 4),
                                           mode);
  rec.seed = seed;
  out.dataset = std::move(ds);
  out.record = std::move(rec);
  return out;
}

WatermarkSequence watermark_from_record(const std::string& path) {
  if (record_variant(path) == "user") return load_user_plan(path).watermark;
  return load_watermark_record(path).watermark;
}

AttentionMap average_attention(const Model& m, const Dataset& d) {
  AttentionMap avg;
  avg.alpha.setZero(m.config.max_len, m.config.max_len);
  avg.first_real = m.config.max_len;
  std::int64_t n = 0;
  for (const auto& u : d.users) {
    if (u.items.empty()) continue;
    AttentionMap map = attention_map(m, u.items);
    avg.alpha += map.alpha;
    avg.first_real = std::min(avg.first_real, map.first_real);
    n += 1;
  }
  if (n == 0) throw Error("average_attention: empty dataset");
  avg.alpha /= static_cast<double>(n);
  return avg;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

WatermarkParams axis_override(const WatermarkParams& base, const std::string& axis,
                              const std::string& value) {
  WatermarkParams p = base;
  if (axis == "l") {
    p.l = std::stoi(value);
  } else if (axis == "p") {
    p.p = std::stod(value);
  } else if (axis == "n") {
    p.n = std::stoi(value);
  } else if (axis == "position") {
    p.position = insert_position_from_string(value);
  } else {
    throw Error("unknown sweep axis '" + axis + "'");
  }
  return p;
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep.axis.empty() || cfg.sweep.values.empty() || cfg.sweep.seeds.empty()) {
    throw Error("sweep needs an axis, values, and seeds");
  }
  if ((cfg.sweep.axis == "n" || cfg.sweep.axis == "position") &&
      cfg.watermark.variant != "dwrs-u") {
    throw Error("sweep axis '" + cfg.sweep.axis + "' needs the dwrs-u variant");
  }

  Dataset clean = obtain_dataset(cfg.dataset);
  LeaveOneOutSplit split = split_leave_one_out(clean);

  // the oracle depends only on the seed, not the axis value
  std::map<std::uint64_t, Model> oracles;
  for (std::uint64_t seed : cfg.sweep.seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    oracles.emplace(seed, train(clean, cfg.model, tc));
  }

  std::vector<SweepRow> rows;
  for (const std::string& value : cfg.sweep.values) {
    WatermarkParams params = axis_override(cfg.watermark, cfg.sweep.axis, value);
    SweepRow mean;
    mean.axis = cfg.sweep.axis;
    mean.value = value;
    mean.seed = "mean";
    for (std::uint64_t seed : cfg.sweep.seeds) {
      WatermarkOutcome outcome = run_watermark(clean, params, seed);
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      Model wm_model = train(outcome.dataset, cfg.model, tc);

      const WatermarkSequence wm = outcome.watermark();
      MetricsReport validity =
          watermark_validity(wm_model, clean, wm, cfg.eval.ks, cfg.eval.validity_sample);
      MetricsReport utility = model_utility(wm_model, split, cfg.eval.ks);
      MetricsReport oracle_validity = watermark_validity(
          oracles.at(seed), clean, wm, cfg.eval.ks, cfg.eval.validity_sample, "oracle-validity");

      SweepRow row;
      row.axis = cfg.sweep.axis;
      row.value = value;
      row.seed = std::to_string(seed);
      row.validity_recall_10 = validity.recall_at(10);
      row.validity_ndcg_10 = validity.ndcg_at(10);
      row.utility_recall_10 = utility.recall_at(10);
      row.utility_ndcg_10 = utility.ndcg_at(10);
      row.oracle_recall_10 = oracle_validity.recall_at(10);
      rows.push_back(row);

      mean.validity_recall_10 += row.validity_recall_10;
      mean.validity_ndcg_10 += row.validity_ndcg_10;
      mean.utility_recall_10 += row.utility_recall_10;
      mean.utility_ndcg_10 += row.utility_ndcg_10;
      mean.oracle_recall_10 += row.oracle_recall_10;
    }
    const double n = static_cast<double>(cfg.sweep.seeds.size());
    mean.validity_recall_10 /= n;
    mean.validity_ndcg_10 /= n;
    mean.utility_recall_10 /= n;
    mean.utility_ndcg_10 /= n;
    mean.oracle_recall_10 /= n;
    rows.push_back(mean);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write sweep csv: " + path);
  out << "axis,value,seed,validity_recall_10,validity_ndcg_10,utility_recall_10,"
         "utility_ndcg_10,oracle_recall_10\n";
  for (const auto& r : rows) {
    out << r.axis << ',' << r.value << ',' << r.seed << ',' << fmt_double(r.validity_recall_10)
        << ',' << fmt_double(r.validity_ndcg_10) << ',' << fmt_double(r.utility_recall_10) << ','
        << fmt_double(r.utility_ndcg_10) << ',' << fmt_double(r.oracle_recall_10) << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sweep csv: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "axis,value,seed,validity_recall_10,validity_ndcg_10,utility_recall_10,"
              "utility_ndcg_10,oracle_recall_10") {
    throw Error("bad sweep csv header in " + path);
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    SweepRow r;
    std::string field;
    if (!std::getline(ss, r.axis, ',') || !std::getline(ss, r.value, ',') ||
        !std::getline(ss, r.seed, ',')) {
      throw Error("bad sweep csv row: " + line);
    }
    double* slots[] = {&r.validity_recall_10, &r.validity_ndcg_10, &r.utility_recall_10,
                       &r.utility_ndcg_10, &r.oracle_recall_10};
    for (double* slot : slots) {
      if (!std::getline(ss, field, ',')) throw Error("bad sweep csv row: " + line);
      *slot = std::stod(field);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace seqmark
