#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqmark/corpus.hpp"
#include "seqmark/watermark.hpp"

namespace seqmark {

struct ModelConfig {
  int d_model = 32;
  int max_len = 50;   // window length L; inputs are left-padded / right-truncated
  int ffn_width = 64;
  double dropout = 0.0;

  void validate() const;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;  // windows per optimizer step
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;  // adam runs beta1=0.9 beta2=0.999 eps=1e-8
  std::uint64_t seed = 0;

  void validate() const;
};

// Single-head causal self-attention next-item model: item embeddings with a
// fixed zero padding row, learned positions, one attention layer, a pointwise
// feed-forward block, residual connections, and weight-tied output scores.
// All parameters are double precision.
struct Model {
  ModelConfig config;
  ItemId n_items = 0;

  Eigen::MatrixXd item_emb;   // (n_items+1) x d, row 0 = padding, kept at zero
  Eigen::MatrixXd pos_emb;    // L x d
  Eigen::MatrixXd w_query;    // d x d
  Eigen::MatrixXd w_key;      // d x d
  Eigen::MatrixXd w_value;    // d x d
  Eigen::MatrixXd w_ffn_in;   // d x f
  Eigen::VectorXd b_ffn_in;   // f
  Eigen::MatrixXd w_ffn_out;  // f x d
  Eigen::VectorXd b_ffn_out;  // d
};

Model init_model(ItemId n_items, const ModelConfig& mc, std::uint64_t seed);

struct TrainStats {
  std::vector<double> epoch_loss;  // mean next-item cross-entropy per epoch
};

// Trains a fresh model. Windows are built per user with the last two items
// held out (the leave-one-out val/test targets) whenever the sequence is long
// enough; longer sequences are chunked from the right into full windows so no
// transition is dropped. Deterministic under tc.seed; throws on non-finite
// loss.
Model train(const Dataset& d, const ModelConfig& mc, const TrainConfig& tc,
            TrainStats* stats = nullptr);

// Continues training an existing model on d (fresh optimizer state).
Model finetune(const Model& m, const Dataset& d, const TrainConfig& tc,
               TrainStats* stats = nullptr);

// Scores every item given the sequence suffix that fits the model window.
// Entry i holds the score of item id i+1; the padding id is never scored.
// Leading padding ids in seq are ignored, interior ones are an error.
Eigen::VectorXd score_next(const Model& m, std::span<const ItemId> seq);

// Top-k items by descending score, ties broken by ascending id. Seen items
// are kept in the ranking unless exclude_seen is set.
std::vector<ItemId> recommend_topk(const Model& m, std::span<const ItemId> seq, int k,
                                   bool exclude_seen = false);

struct AttentionMap {
  Eigen::MatrixXd alpha;  // L x L, row-stochastic, zero above the diagonal
  int first_real = 0;     // window index of the first non-padding position
};

AttentionMap attention_map(const Model& m, std::span<const ItemId> seq);

void write_attention_csv(const AttentionMap& map, const std::string& path);

// Averages attention by relative offset across all users' final windows and
// reports the longest run of offsets -1,-2,... whose mean stays >= threshold.
// r2 is always 0 for this causal model.
ReceptiveFieldSpec estimate_receptive_field(const Model& m, const Dataset& d, double threshold);

// Central-difference validation of the full backward pass on the windows of
// `batch` (no holdout exclusion). Returns the max relative error over every
// parameter; relative error uses max(|analytic|, |numeric|, 1e-6) as the
// denominator. corrupt_largest_by != 1 scales the single largest analytic
// gradient before comparing, which exercises the check's own sensitivity.
double gradient_check(const Model& m, const Dataset& batch, double epsilon,
                      double corrupt_largest_by = 1.0);

// Versioned binary checkpoint: config + n_items + all tensors row-major.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// Splits one seed into independent deterministic streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace seqmark
