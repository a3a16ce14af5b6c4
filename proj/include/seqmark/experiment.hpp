#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqmark/attacks.hpp"
#include "seqmark/corpus.hpp"
#include "seqmark/dwrs_d.hpp"
#include "seqmark/dwrs_u.hpp"
#include "seqmark/evalkit.hpp"
#include "seqmark/seqrec.hpp"
#include "seqmark/watermark.hpp"

namespace seqmark {

struct DatasetSource {
  std::string path;  // empty when synthetic
  DatasetFormat format = DatasetFormat::sequence_lines;
  std::optional<SyntheticSpec> synthetic;
  double holdout_fraction = 0.0;  // generate also emits an 80/20-style user split
};

struct WatermarkParams {
  std::string variant = "dwrs-d";  // dwrs-d | dwrs-d-base | dwrs-u
  int l = 3;
  double p = 0.01;
  double tail_fraction = 0.10;
  ReceptiveFieldSpec rf;
  ItemPoolBias bias = ItemPoolBias::unpopular;
  int n = 10;                        // dwrs-u subsequence length
  std::optional<std::int64_t> target;  // dwrs-u; unset = longest sequence
  InsertPosition position = InsertPosition::bus;
};

struct EvalParams {
  std::vector<int> ks{5, 10, 20, 100};
  double margin = 0.5;
  int validity_sample = 0;
};

struct FinetuneParams {
  std::vector<int> checkpoints{25, 50, 100};
};

struct MineParams {
  int max_antecedent = 2;
  int max_consequent = 2;
  std::int64_t min_support = 2;
  std::int64_t budget = 2'000'000;
};

struct HardenParams {
  int n_responses = 2;
  int n_shuffled = 1;
  double p_per_variant = 0.01;
};

struct SweepParams {
  std::string axis;                 // l | p | n | position
  std::vector<std::string> values;  // parsed per axis
  std::vector<std::uint64_t> seeds;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSource dataset;
  WatermarkParams watermark;
  ModelConfig model;
  TrainConfig train;
  EvalParams eval;
  FinetuneParams finetune;
  DistillConfig distill;
  MineParams mine;
  HardenParams harden;
  SweepParams sweep;
};

// Parses the JSON experiment config. The seed must be explicit; optional
// sections fall back to the defaults above. override_seed replaces the
// config seed before any derived default is resolved.
ExperimentConfig load_experiment_config(const std::string& path,
                                        std::optional<std::uint64_t> override_seed = {});

Dataset obtain_dataset(const DatasetSource& source);

// Seeded user split (by shuffled user order); fraction names the holdout share.
std::pair<Dataset, Dataset> split_users(const Dataset& d, double holdout_fraction,
                                        std::uint64_t seed);

struct WatermarkOutcome {
  Dataset dataset;
  // exactly one of the two is populated, matching the variant
  std::optional<WatermarkRecord> record;
  std::optional<UserWatermarkPlan> plan;
  WatermarkSequence watermark() const;
};

WatermarkOutcome run_watermark(const Dataset& clean, const WatermarkParams& params,
                               std::uint64_t seed);

// Loads whichever record variant lives at path and returns its watermark.
WatermarkSequence watermark_from_record(const std::string& path);

// Mean attention map over every user's final window; rows stay stochastic.
AttentionMap average_attention(const Model& m, const Dataset& d);

struct SweepRow {
  std::string axis;
  std::string value;
  std::string seed;  // decimal seed or "mean"
  double validity_recall_10 = 0.0;
  double validity_ndcg_10 = 0.0;
  double utility_recall_10 = 0.0;
  double utility_ndcg_10 = 0.0;
  double oracle_recall_10 = 0.0;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
std::vector<SweepRow> read_sweep_csv(const std::string& path);

}  // namespace seqmark
