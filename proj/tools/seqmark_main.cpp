#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "seqmark/attacks.hpp"
#include "seqmark/dwrs_d.hpp"
#include "seqmark/dwrs_u.hpp"
#include "seqmark/evalkit.hpp"
#include "seqmark/experiment.hpp"

namespace fs = std::filesystem;
using namespace seqmark;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;

  ExperimentConfig config() const { return load_experiment_config(config_path, seed_override); }
  std::string out(const std::string& name) const {
    fs::create_directories(out_dir);
    return (fs::path(out_dir) / name).string();
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed_override, "override the config seed");
}

Dataset load_sequences(const std::string& path) {
  return load_dataset(path, DatasetFormat::sequence_lines);
}

int cmd_generate(const CommonArgs& args) {
  ExperimentConfig cfg = args.config();
  Dataset d = obtain_dataset(cfg.dataset);
  save_dataset(d, args.out("clean.txt"));
  LeaveOneOutSplit split = split_leave_one_out(d);
  write_skip_report(split, args.out("skip_report.csv"));
  if (cfg.dataset.holdout_fraction > 0.0) {
    auto [kept, holdout] = split_users(d, cfg.dataset.holdout_fraction, cfg.seed);
    save_dataset(kept, args.out("train_part.txt"));
    save_dataset(holdout, args.out("holdout_part.txt"));
  }
  std::printf("generated %zu users, %d items -> %s\n", d.users.size(), d.n_items,
              args.out("clean.txt").c_str());
  return 0;
}

int cmd_watermark(const CommonArgs& args, const std::string& data_path) {
  ExperimentConfig cfg = args.config();
  Dataset clean = data_path.empty() ? obtain_dataset(cfg.dataset) : load_sequences(data_path);
  WatermarkOutcome outcome = run_watermark(clean, cfg.watermark, cfg.seed);
  save_dataset(outcome.dataset, args.out("watermarked.txt"));
  if (outcome.record.has_value()) {
    save_watermark_record(*outcome.record, args.out("record.json"));
    std::printf("%s: %d/%d insertions%s -> %s\n", cfg.watermark.variant.c_str(),
                outcome.record->achieved_count, outcome.record->target_count,
                outcome.record->partial ? " (partial)" : "", args.out("record.json").c_str());
  } else {
    save_user_plan(*outcome.plan, args.out("record.json"));
    std::printf("dwrs-u: user %lld, insert_pos %d -> %s\n",
                static_cast<long long>(outcome.plan->target_user), outcome.plan->insert_pos,
                args.out("record.json").c_str());
  }
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path,
              const std::string& model_name) {
  ExperimentConfig cfg = args.config();
  Dataset d = load_sequences(data_path);
  TrainStats stats;
  Model m = train(d, cfg.model, cfg.train, &stats);
  save_model(m, args.out(model_name));
  std::printf("trained %d epochs, loss %.4f -> %.4f, checkpoint %s\n", cfg.train.epochs,
              stats.epoch_loss.front(), stats.epoch_loss.back(), args.out(model_name).c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& model_path,
                 const std::string& data_path, const std::string& record_path,
                 const std::string& oracle_path) {
  ExperimentConfig cfg = args.config();
  Model m = load_model(model_path);
  Dataset clean = load_sequences(data_path);
  LeaveOneOutSplit split = split_leave_one_out(clean);

  std::vector<MetricsReport> reports;
  reports.push_back(model_utility(m, split, cfg.eval.ks));

  std::optional<DiscriminabilityReport> verdict;
  if (!record_path.empty()) {
    WatermarkSequence wm = watermark_from_record(record_path);
    reports.push_back(watermark_validity(m, clean, wm, cfg.eval.ks, cfg.eval.validity_sample));
    if (!oracle_path.empty()) {
      Model oracle = load_model(oracle_path);
      reports.push_back(watermark_validity(oracle, clean, wm, cfg.eval.ks,
                                           cfg.eval.validity_sample, "oracle-validity"));
      verdict = discriminability_report(reports[1], reports[2], cfg.eval.margin);
    }
  }

  write_metrics_csv(reports, args.out("metrics.csv"));
  std::ofstream summary(args.out("summary.txt"), std::ios::binary);
  for (const auto& rep : reports) {
    summary << format_report(rep);
    std::printf("%s", format_report(rep).c_str());
  }
  if (verdict.has_value()) {
    char line[160];
    std::snprintf(line, sizeof(line), "verdict: %s (recall@10 margin %.4f, threshold %.2f)\n",
                  verdict->verdict == Verdict::claim ? "claim" : "no-claim", verdict->margin_at_10,
                  cfg.eval.margin);
    summary << line;
    std::printf("%s", line);
    return verdict->verdict == Verdict::claim ? 0 : 2;
  }
  return 0;
}

int cmd_attack_finetune(const CommonArgs& args, const std::string& model_path,
                        const std::string& finetune_data, const std::string& data_path,
                        const std::string& record_path) {
  ExperimentConfig cfg = args.config();
  Model m = load_model(model_path);
  Dataset clean = load_sequences(data_path);
  Dataset tune = load_sequences(finetune_data);
  LeaveOneOutSplit split = split_leave_one_out(clean);

  AttackEval eval;
  eval.query_dataset = &clean;
  eval.split = &split;
  eval.wm = watermark_from_record(record_path);
  eval.ks = cfg.eval.ks;
  eval.validity_sample = cfg.eval.validity_sample;

  AttackReport report = finetune_attack(m, tune, cfg.train, cfg.finetune.checkpoints, eval);
  write_attack_csv(report, args.out("attack_finetune.csv"));
  std::printf("finetune: validity R@10 %.4f -> %.4f, utility R@10 %.4f -> %.4f\n",
              report.before().validity.recall_at(10), report.after().validity.recall_at(10),
              report.before().utility.recall_at(10), report.after().utility.recall_at(10));
  return 0;
}

int cmd_attack_distill(const CommonArgs& args, const std::string& model_path,
                       const std::string& data_path, const std::string& record_path) {
  ExperimentConfig cfg = args.config();
  Model m = load_model(model_path);
  Dataset clean = load_sequences(data_path);
  LeaveOneOutSplit split = split_leave_one_out(clean);

  AttackEval eval;
  eval.query_dataset = &clean;
  eval.split = &split;
  eval.wm = watermark_from_record(record_path);
  eval.ks = cfg.eval.ks;
  eval.validity_sample = cfg.eval.validity_sample;

  auto [surrogate, report] = distill_attack(m, cfg.distill, derive_seed(cfg.seed, 21), eval);
  save_model(surrogate, args.out("surrogate.ckpt"));
  write_attack_csv(report, args.out("attack_distill.csv"));
  std::printf("distill: validity R@10 %.4f -> %.4f, utility R@10 %.4f -> %.4f\n",
              report.before().validity.recall_at(10), report.after().validity.recall_at(10),
              report.before().utility.recall_at(10), report.after().utility.recall_at(10));
  return 0;
}

int cmd_attack_mine(const CommonArgs& args, const std::string& data_path) {
  ExperimentConfig cfg = args.config();
  Dataset d = load_sequences(data_path);
  auto rules = mine_rules(d, cfg.mine.max_antecedent, cfg.mine.max_consequent,
                          cfg.mine.min_support, cfg.mine.budget);
  write_rules_csv(rules, args.out("rules.csv"));
  std::printf("mined %zu rules -> %s\n", rules.size(), args.out("rules.csv").c_str());
  return 0;
}

int cmd_attack_harden(const CommonArgs& args, const std::string& data_path) {
  ExperimentConfig cfg = args.config();
  Dataset clean = data_path.empty() ? obtain_dataset(cfg.dataset) : load_sequences(data_path);

  PopularityTable pop = compute_popularity(clean);
  WatermarkSequence base =
      select_watermark_items(pop, clean, cfg.watermark.l, cfg.watermark.tail_fraction,
                             derive_seed(cfg.seed, 3), cfg.watermark.bias);
  HardenResult hr = harden_watermark(clean, base, cfg.harden.n_responses, cfg.harden.n_shuffled,
                                     cfg.harden.p_per_variant, cfg.watermark.rf,
                                     derive_seed(cfg.seed, 5), cfg.watermark.tail_fraction);
  save_dataset(hr.dataset, args.out("hardened.txt"));
  for (std::size_t i = 0; i < hr.response_records.size(); ++i) {
    save_watermark_record(hr.response_records[i],
                          args.out("harden_response_" + std::to_string(i) + ".json"));
  }
  for (std::size_t i = 0; i < hr.shuffled_records.size(); ++i) {
    save_watermark_record(hr.shuffled_records[i],
                          args.out("harden_shuffled_" + std::to_string(i) + ".json"));
  }
  std::printf("hardened with %d responses and %d shuffled bodies -> %s\n", cfg.harden.n_responses,
              cfg.harden.n_shuffled, args.out("hardened.txt").c_str());
  return 0;
}

int cmd_heatmap(const CommonArgs& args, const std::string& model_path,
                const std::string& data_path, std::optional<std::int64_t> user) {
  Model m = load_model(model_path);
  Dataset d = load_sequences(data_path);
  AttentionMap map;
  if (user.has_value()) {
    const UserSequence* seq = d.find_user(*user);
    if (!seq) throw Error("heatmap: unknown user " + std::to_string(*user));
    map = attention_map(m, seq->items);
  } else {
    map = average_attention(m, d);
  }
  write_attention_csv(map, args.out("heatmap.csv"));
  std::printf("heatmap -> %s\n", args.out("heatmap.csv").c_str());
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  ExperimentConfig cfg = args.config();
  std::vector<SweepRow> rows = run_sweep(cfg);
  write_sweep_csv(rows, args.out("sweep.csv"));
  std::printf("sweep over %s (%zu rows) -> %s\n", cfg.sweep.axis.c_str(), rows.size(),
              args.out("sweep.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data watermarking toolkit for sequential recommenders"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_path, model_path, record_path, oracle_path, finetune_data;
  std::string model_name = "model.ckpt";
  std::optional<std::int64_t> heatmap_user;

  CLI::App* generate = app.add_subcommand("generate", "create a dataset from the config");
  add_common(generate, args);

  CLI::App* watermark = app.add_subcommand("watermark", "embed a watermark");
  add_common(watermark, args);
  watermark->add_option("--data", data_path, "clean dataset (defaults to the config source)");

  CLI::App* train_cmd = app.add_subcommand("train", "train the next-item model");
  add_common(train_cmd, args);
  train_cmd->add_option("--data", data_path, "training dataset")->required();
  train_cmd->add_option("--model-name", model_name, "checkpoint filename");

  CLI::App* evaluate = app.add_subcommand("evaluate", "utility, validity, and ownership verdict");
  add_common(evaluate, args);
  evaluate->add_option("--model", model_path, "model checkpoint")->required();
  evaluate->add_option("--data", data_path, "clean dataset for queries")->required();
  evaluate->add_option("--record", record_path, "watermark record for validity");
  evaluate->add_option("--oracle-model", oracle_path, "clean-trained model for the verdict");

  CLI::App* attack = app.add_subcommand("attack", "watermark removal attacks");
  attack->require_subcommand(1);
  CLI::App* finetune_cmd = attack->add_subcommand("finetune", "continue training on clean data");
  add_common(finetune_cmd, args);
  finetune_cmd->add_option("--model", model_path, "watermarked model")->required();
  finetune_cmd->add_option("--finetune-data", finetune_data, "held-out clean data")->required();
  finetune_cmd->add_option("--data", data_path, "clean dataset for evaluation")->required();
  finetune_cmd->add_option("--record", record_path, "watermark record")->required();

  CLI::App* distill_cmd = attack->add_subcommand("distill", "train a surrogate via extraction");
  add_common(distill_cmd, args);
  distill_cmd->add_option("--model", model_path, "target model")->required();
  distill_cmd->add_option("--data", data_path, "clean dataset for evaluation")->required();
  distill_cmd->add_option("--record", record_path, "watermark record")->required();

  CLI::App* mine_cmd = attack->add_subcommand("mine", "sequential rule mining");
  add_common(mine_cmd, args);
  mine_cmd->add_option("--data", data_path, "dataset to mine")->required();

  CLI::App* harden_cmd = attack->add_subcommand("harden", "multi-response + shuffled hardening");
  add_common(harden_cmd, args);
  harden_cmd->add_option("--data", data_path, "clean dataset (defaults to the config source)");

  CLI::App* heatmap = app.add_subcommand("heatmap", "attention map CSV export");
  add_common(heatmap, args);
  heatmap->add_option("--model", model_path, "model checkpoint")->required();
  heatmap->add_option("--data", data_path, "dataset of query sequences")->required();
  heatmap->add_option("--user", heatmap_user, "single user instead of the average");

  CLI::App* sweep = app.add_subcommand("sweep", "axis study with per-seed rows and means");
  add_common(sweep, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(args);
    if (watermark->parsed()) return cmd_watermark(args, data_path);
    if (train_cmd->parsed()) return cmd_train(args, data_path, model_name);
    if (evaluate->parsed()) {
      return cmd_evaluate(args, model_path, data_path, record_path, oracle_path);
    }
    if (attack->parsed()) {
      if (finetune_cmd->parsed()) {
        return cmd_attack_finetune(args, model_path, finetune_data, data_path, record_path);
      }
      if (distill_cmd->parsed()) {
        return cmd_attack_distill(args, model_path, data_path, record_path);
      }
      if (mine_cmd->parsed()) return cmd_attack_mine(args, data_path);
      if (harden_cmd->parsed()) return cmd_attack_harden(args, data_path);
    }
    if (heatmap->parsed()) return cmd_heatmap(args, model_path, data_path, heatmap_user);
    if (sweep->parsed()) return cmd_sweep(args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
