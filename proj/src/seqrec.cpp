#include "seqmark/seqrec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace seqmark {

void ModelConfig::validate() const {
  if (d_model < 4) throw Error("ModelConfig: d_model must be >= 4");
  if (max_len < 4) throw Error("ModelConfig: max_len must be >= 4");
  if (ffn_width < 1) throw Error("ModelConfig: ffn_width must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("ModelConfig: dropout must be in [0,1)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning rate must be > 0");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Model init_model(ItemId n_items, const ModelConfig& mc, std::uint64_t seed) {
  mc.validate();
  if (n_items < 1) throw Error("init_model: n_items must be >= 1");
  Model m;
  m.config = mc;
  m.n_items = n_items;
  const int d = mc.d_model;
  const int f = mc.ffn_width;

  std::mt19937_64 rng(seed);
  auto fill_normal = [&rng](Eigen::MatrixXd& mat, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      for (Eigen::Index j = 0; j < mat.cols(); ++j) mat(i, j) = dist(rng);
    }
  };

  m.item_emb.setZero(n_items + 1, d);
  {
    Eigen::MatrixXd body(n_items, d);
    fill_normal(body, 1.0 / std::sqrt(static_cast<double>(d)));
    m.item_emb.bottomRows(n_items) = body;
  }
  m.pos_emb.resize(mc.max_len, d);
  fill_normal(m.pos_emb, 1.0 / std::sqrt(static_cast<double>(d)));

  auto xavier = [&](Eigen::MatrixXd& mat) {
    fill_normal(mat, std::sqrt(2.0 / static_cast<double>(mat.rows() + mat.cols())));
  };
  m.w_query.resize(d, d);
  xavier(m.w_query);
  m.w_key.resize(d, d);
  xavier(m.w_key);
  m.w_value.resize(d, d);
  xavier(m.w_value);
  m.w_ffn_in.resize(d, f);
  xavier(m.w_ffn_in);
  m.b_ffn_in.setZero(f);
  m.w_ffn_out.resize(f, d);
  xavier(m.w_ffn_out);
  m.b_ffn_out.setZero(d);
  return m;
}

namespace {

struct WindowSet {
  int window_len = 0;
  int count = 0;
  std::vector<ItemId> ids;      // count x L, padding id at unused slots
  std::vector<ItemId> targets;  // count x L, 0 where no loss is taken
  std::vector<int> first_real;  // per window
};

// Shifted next-item windows, chunked from the right so the newest window is
// always full and no transition is lost.
WindowSet build_training_windows(const Dataset& d, int window_len, bool exclude_holdout) {
  WindowSet ws;
  ws.window_len = window_len;
  for (const auto& u : d.users) {
    std::size_t usable = u.items.size();
    if (exclude_holdout && usable >= 3) usable -= 2;
    if (usable < 2) continue;
    // inputs = items[0..usable-2], targets = items[1..usable-1]
    int m = static_cast<int>(usable) - 1;
    int end = m;
    while (end > 0) {
      int start = std::max(0, end - window_len);
      int t = end - start;
      int f = window_len - t;
      ws.ids.insert(ws.ids.end(), static_cast<std::size_t>(f), kPaddingItem);
      ws.targets.insert(ws.targets.end(), static_cast<std::size_t>(f), kPaddingItem);
      for (int i = start; i < end; ++i) {
        ws.ids.push_back(u.items[static_cast<std::size_t>(i)]);
        ws.targets.push_back(u.items[static_cast<std::size_t>(i) + 1]);
      }
      ws.first_real.push_back(f);
      ws.count += 1;
      end = start;
    }
  }
  return ws;
}

struct Gradients {
  Eigen::MatrixXd item_emb, pos_emb, w_query, w_key, w_value, w_ffn_in, w_ffn_out;
  Eigen::VectorXd b_ffn_in, b_ffn_out;

  explicit Gradients(const Model& m) { resize_like(m); }
  void resize_like(const Model& m) {
    item_emb.setZero(m.item_emb.rows(), m.item_emb.cols());
    pos_emb.setZero(m.pos_emb.rows(), m.pos_emb.cols());
    w_query.setZero(m.w_query.rows(), m.w_query.cols());
    w_key.setZero(m.w_key.rows(), m.w_key.cols());
    w_value.setZero(m.w_value.rows(), m.w_value.cols());
    w_ffn_in.setZero(m.w_ffn_in.rows(), m.w_ffn_in.cols());
    w_ffn_out.setZero(m.w_ffn_out.rows(), m.w_ffn_out.cols());
    b_ffn_in.setZero(m.b_ffn_in.size());
    b_ffn_out.setZero(m.b_ffn_out.size());
  }
  void set_zero() {
    item_emb.setZero();
    pos_emb.setZero();
    w_query.setZero();
    w_key.setZero();
    w_value.setZero();
    w_ffn_in.setZero();
    w_ffn_out.setZero();
    b_ffn_in.setZero();
    b_ffn_out.setZero();
  }
};

struct DropoutCtx {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

// Forward pass over a set of windows; fills grads when given. Returns the
// summed cross-entropy and the number of scored positions.
std::pair<double, std::int64_t> forward_backward(const Model& m, const WindowSet& ws,
                                                 std::span<const int> batch, Gradients* grads,
                                                 const DropoutCtx& dropout) {
  const int L = ws.window_len;
  const int d = m.config.d_model;
  const int f = m.config.ffn_width;
  const int n = m.n_items;
  const int B = static_cast<int>(batch.size());
  const int rows = B * L;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows, d);
  for (int w = 0; w < B; ++w) {
    const int base = batch[static_cast<std::size_t>(w)] * L;
    for (int p = ws.first_real[static_cast<std::size_t>(batch[static_cast<std::size_t>(w)])];
         p < L; ++p) {
      const ItemId id = ws.ids[static_cast<std::size_t>(base + p)];
      X.row(w * L + p) = m.item_emb.row(id) + m.pos_emb.row(p);
    }
  }

  Eigen::MatrixXd Q = X * m.w_query;
  Eigen::MatrixXd K = X * m.w_key;
  Eigen::MatrixXd V = X * m.w_value;

  // Per-window masked softmax. Padding rows attend to themselves only, which
  // keeps every row stochastic without touching the loss.
  std::vector<Eigen::MatrixXd> alphas(static_cast<std::size_t>(B));
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, d);
  for (int w = 0; w < B; ++w) {
    const int fr = ws.first_real[static_cast<std::size_t>(batch[static_cast<std::size_t>(w)])];
    auto Qw = Q.middleRows(w * L, L);
    auto Kw = K.middleRows(w * L, L);
    Eigen::MatrixXd& alpha = alphas[static_cast<std::size_t>(w)];
    alpha.setZero(L, L);
    for (int p = 0; p < fr; ++p) alpha(p, p) = 1.0;
    for (int p = fr; p < L; ++p) {
      const int span = p - fr + 1;
      Eigen::VectorXd logits =
          (Kw.middleRows(fr, span) * Qw.row(p).transpose()) * inv_sqrt_d;
      const double mx = logits.maxCoeff();
      Eigen::VectorXd e = (logits.array() - mx).exp();
      alpha.row(p).segment(fr, span) = (e / e.sum()).transpose();
    }
    A.middleRows(w * L, L) = alpha * V.middleRows(w * L, L);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd mask_attn, mask_ffn;
  if (dropout.active()) {
    const double keep = 1.0 - dropout.rate;
    mask_attn.resize(rows, d);
    for (Eigen::Index i = 0; i < mask_attn.size(); ++i) {
      mask_attn.data()[i] = unit(*dropout.rng) < dropout.rate ? 0.0 : 1.0 / keep;
    }
    A = A.cwiseProduct(mask_attn);
  }

  Eigen::MatrixXd H = X + A;
  Eigen::MatrixXd U = (H * m.w_ffn_in).rowwise() + m.b_ffn_in.transpose();
  Eigen::MatrixXd R = U.cwiseMax(0.0);
  if (dropout.active()) {
    const double keep = 1.0 - dropout.rate;
    mask_ffn.resize(rows, f);
    for (Eigen::Index i = 0; i < mask_ffn.size(); ++i) {
      mask_ffn.data()[i] = unit(*dropout.rng) < dropout.rate ? 0.0 : 1.0 / keep;
    }
    R = R.cwiseProduct(mask_ffn);
  }
  Eigen::MatrixXd F = (R * m.w_ffn_out).rowwise() + m.b_ffn_out.transpose();
  Eigen::MatrixXd O = H + F;

  auto emb_body = m.item_emb.bottomRows(n);
  Eigen::MatrixXd scores = O * emb_body.transpose();  // rows x n, column j = item j+1

  double loss_sum = 0.0;
  std::int64_t n_pos = 0;
  Eigen::MatrixXd dscores;
  if (grads) dscores.setZero(rows, n);

  for (int w = 0; w < B; ++w) {
    const int base = batch[static_cast<std::size_t>(w)] * L;
    const int fr = ws.first_real[static_cast<std::size_t>(batch[static_cast<std::size_t>(w)])];
    for (int p = fr; p < L; ++p) {
      const ItemId target = ws.targets[static_cast<std::size_t>(base + p)];
      if (target == kPaddingItem) continue;
      const int r = w * L + p;
      const double mx = scores.row(r).maxCoeff();
      Eigen::ArrayXd e = (scores.row(r).transpose().array() - mx).exp();
      const double z = e.sum();
      loss_sum += std::log(z) + mx - scores(r, target - 1);
      n_pos += 1;
      if (grads) {
        dscores.row(r) = (e / z).matrix().transpose();
        dscores(r, target - 1) -= 1.0;
      }
    }
  }

  if (!grads || n_pos == 0) return {loss_sum, n_pos};

  const double scale = 1.0 / static_cast<double>(n_pos);
  dscores *= scale;

  Eigen::MatrixXd dO = dscores * emb_body;
  grads->item_emb.bottomRows(n) += dscores.transpose() * O;

  // FFN block (O = H + F)
  Eigen::MatrixXd dF = dO;
  Eigen::MatrixXd dH = dO;
  grads->b_ffn_out += dF.colwise().sum().transpose();
  grads->w_ffn_out += R.transpose() * dF;
  Eigen::MatrixXd dR = dF * m.w_ffn_out.transpose();
  if (dropout.active()) dR = dR.cwiseProduct(mask_ffn);
  Eigen::MatrixXd dU = dR.cwiseProduct((U.array() > 0.0).cast<double>().matrix());
  grads->b_ffn_in += dU.colwise().sum().transpose();
  grads->w_ffn_in += H.transpose() * dU;
  dH += dU * m.w_ffn_in.transpose();

  // Attention block (H = X + A)
  Eigen::MatrixXd dA = dH;
  if (dropout.active()) dA = dA.cwiseProduct(mask_attn);
  Eigen::MatrixXd dX = dH;  // residual path
  Eigen::MatrixXd dQ = Eigen::MatrixXd::Zero(rows, d);
  Eigen::MatrixXd dK = Eigen::MatrixXd::Zero(rows, d);
  Eigen::MatrixXd dV = Eigen::MatrixXd::Zero(rows, d);
  for (int w = 0; w < B; ++w) {
    const int fr = ws.first_real[static_cast<std::size_t>(batch[static_cast<std::size_t>(w)])];
    const Eigen::MatrixXd& alpha = alphas[static_cast<std::size_t>(w)];
    auto dAw = dA.middleRows(w * L, L);
    auto Vw = V.middleRows(w * L, L);
    Eigen::MatrixXd dalpha = dAw * Vw.transpose();
    dV.middleRows(w * L, L) += alpha.transpose() * dAw;
    Eigen::MatrixXd dS = Eigen::MatrixXd::Zero(L, L);
    for (int p = fr; p < L; ++p) {
      const int span = p - fr + 1;
      auto a = alpha.row(p).segment(fr, span);
      auto da = dalpha.row(p).segment(fr, span);
      const double dot = (a.cwiseProduct(da)).sum();
      Eigen::RowVectorXd shifted = da.array() - dot;
      dS.row(p).segment(fr, span) = a.cwiseProduct(shifted);
    }
    auto Qw = Q.middleRows(w * L, L);
    auto Kw = K.middleRows(w * L, L);
    dQ.middleRows(w * L, L) += dS * Kw * inv_sqrt_d;
    dK.middleRows(w * L, L) += dS.transpose() * Qw * inv_sqrt_d;
  }

  grads->w_query += X.transpose() * dQ;
  grads->w_key += X.transpose() * dK;
  grads->w_value += X.transpose() * dV;
  dX += dQ * m.w_query.transpose() + dK * m.w_key.transpose() + dV * m.w_value.transpose();

  for (int w = 0; w < B; ++w) {
    const int base = batch[static_cast<std::size_t>(w)] * L;
    const int fr = ws.first_real[static_cast<std::size_t>(batch[static_cast<std::size_t>(w)])];
    for (int p = fr; p < L; ++p) {
      const ItemId id = ws.ids[static_cast<std::size_t>(base + p)];
      grads->item_emb.row(id) += dX.row(w * L + p);
      grads->pos_emb.row(p) += dX.row(w * L + p);
    }
  }
  return {loss_sum, n_pos};
}

struct AdamState {
  Gradients m1, m2;
  std::int64_t step = 0;
  explicit AdamState(const Model& m) : m1(m), m2(m) {}
};

void apply_update(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& g,
                  Eigen::MatrixXd& m1, Eigen::MatrixXd& m2, double lr, Optimizer opt,
                  double bias1, double bias2) {
  if (opt == Optimizer::sgd) {
    param -= lr * g;
    return;
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
  m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
  param.array() -=
      lr * (m1.array() / bias1) / ((m2.array() / bias2).sqrt() + kEps);
}

void optimizer_step(Model& m, const Gradients& g, AdamState& st, const TrainConfig& tc) {
  st.step += 1;
  const double bias1 = 1.0 - std::pow(0.9, static_cast<double>(st.step));
  const double bias2 = 1.0 - std::pow(0.999, static_cast<double>(st.step));
  auto upd = [&](Eigen::MatrixXd& p, const Eigen::MatrixXd& gr, Eigen::MatrixXd& m1,
                 Eigen::MatrixXd& m2) {
    apply_update(p, gr, m1, m2, tc.learning_rate, tc.optimizer, bias1, bias2);
  };
  upd(m.item_emb, g.item_emb, st.m1.item_emb, st.m2.item_emb);
  upd(m.pos_emb, g.pos_emb, st.m1.pos_emb, st.m2.pos_emb);
  upd(m.w_query, g.w_query, st.m1.w_query, st.m2.w_query);
  upd(m.w_key, g.w_key, st.m1.w_key, st.m2.w_key);
  upd(m.w_value, g.w_value, st.m1.w_value, st.m2.w_value);
  upd(m.w_ffn_in, g.w_ffn_in, st.m1.w_ffn_in, st.m2.w_ffn_in);
  upd(m.w_ffn_out, g.w_ffn_out, st.m1.w_ffn_out, st.m2.w_ffn_out);
  // vector params share the matrix path via 1-column maps
  auto updv = [&](Eigen::VectorXd& p, const Eigen::VectorXd& gr, Eigen::VectorXd& m1,
                  Eigen::VectorXd& m2) {
    Eigen::MatrixXd pm = p, gm = gr, m1m = m1, m2m = m2;
    apply_update(pm, gm, m1m, m2m, tc.learning_rate, tc.optimizer, bias1, bias2);
    p = pm;
    m1 = m1m;
    m2 = m2m;
  };
  updv(m.b_ffn_in, g.b_ffn_in, st.m1.b_ffn_in, st.m2.b_ffn_in);
  updv(m.b_ffn_out, g.b_ffn_out, st.m1.b_ffn_out, st.m2.b_ffn_out);
}

void train_in_place(Model& m, const Dataset& d, const TrainConfig& tc, TrainStats* stats) {
  tc.validate();
  WindowSet ws = build_training_windows(d, m.config.max_len, /*exclude_holdout=*/true);
  if (ws.count == 0) throw Error("train: dataset has no trainable transition");

  std::mt19937_64 shuffle_rng(derive_seed(tc.seed, 1));
  std::mt19937_64 dropout_rng(derive_seed(tc.seed, 2));
  DropoutCtx dropout{m.config.dropout, m.config.dropout > 0.0 ? &dropout_rng : nullptr};

  AdamState st(m);
  Gradients grads(m);
  std::vector<int> order(static_cast<std::size_t>(ws.count));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t pos_sum = 0;
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(tc.batch_size)) {
      std::size_t take = std::min(order.size() - off, static_cast<std::size_t>(tc.batch_size));
      grads.set_zero();
      auto [ls, np] = forward_backward(
          m, ws, std::span<const int>(order.data() + off, take), &grads, dropout);
      loss_sum += ls;
      pos_sum += np;
      if (np > 0) optimizer_step(m, grads, st, tc);
    }
    const double epoch_loss = pos_sum > 0 ? loss_sum / static_cast<double>(pos_sum) : 0.0;
    if (!std::isfinite(epoch_loss)) {
      throw Error("train: loss diverged to non-finite value at epoch " + std::to_string(epoch) +
                  " (lr=" + std::to_string(tc.learning_rate) + ")");
    }
    if (stats) stats->epoch_loss.push_back(epoch_loss);
  }
}

}  // namespace

Model train(const Dataset& d, const ModelConfig& mc, const TrainConfig& tc, TrainStats* stats) {
  mc.validate();
  tc.validate();
  if (d.users.empty()) throw Error("train: empty dataset");
  Model m = init_model(d.n_items, mc, derive_seed(tc.seed, 0));
  train_in_place(m, d, tc, stats);
  return m;
}

Model finetune(const Model& m, const Dataset& d, const TrainConfig& tc, TrainStats* stats) {
  if (d.users.empty()) throw Error("finetune: empty dataset");
  if (d.n_items > m.n_items) throw Error("finetune: dataset has items unknown to the model");
  Model out = m;
  train_in_place(out, d, tc, stats);
  return out;
}

namespace {

// Canonical window suffix: drop leading padding, keep the last max_len items.
std::vector<ItemId> canonical_suffix(const Model& m, std::span<const ItemId> seq) {
  std::size_t begin = 0;
  while (begin < seq.size() && seq[begin] == kPaddingItem) ++begin;
  std::vector<ItemId> out;
  for (std::size_t i = begin; i < seq.size(); ++i) {
    const ItemId id = seq[i];
    if (id == kPaddingItem) throw Error("padding id inside a query sequence");
    if (id < 1 || id > m.n_items) throw Error("unknown item id " + std::to_string(id));
    out.push_back(id);
  }
  if (out.empty()) throw Error("empty query sequence");
  const std::size_t L = static_cast<std::size_t>(m.config.max_len);
  if (out.size() > L) out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(L));
  return out;
}

// Hidden state of the final position only; enough for scoring.
Eigen::VectorXd last_hidden(const Model& m, const std::vector<ItemId>& suffix) {
  const int T = static_cast<int>(suffix.size());
  const int L = m.config.max_len;
  const int d = m.config.d_model;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Eigen::MatrixXd X(T, d);
  for (int t = 0; t < T; ++t) {
    X.row(t) = m.item_emb.row(suffix[static_cast<std::size_t>(t)]) + m.pos_emb.row(L - T + t);
  }
  Eigen::MatrixXd K = X * m.w_key;
  Eigen::MatrixXd V = X * m.w_value;
  Eigen::VectorXd q = m.w_query.transpose() * X.row(T - 1).transpose();

  Eigen::VectorXd logits = K * q * inv_sqrt_d;
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  Eigen::VectorXd alpha = e / e.sum();
  Eigen::VectorXd a = V.transpose() * alpha;

  Eigen::VectorXd h = X.row(T - 1).transpose() + a;
  Eigen::VectorXd u = m.w_ffn_in.transpose() * h + m.b_ffn_in;
  Eigen::VectorXd r = u.cwiseMax(0.0);
  Eigen::VectorXd fo = m.w_ffn_out.transpose() * r + m.b_ffn_out;
  return h + fo;
}

}  // namespace

Eigen::VectorXd score_next(const Model& m, std::span<const ItemId> seq) {
  const std::vector<ItemId> suffix = canonical_suffix(m, seq);
  Eigen::VectorXd o = last_hidden(m, suffix);
  return m.item_emb.bottomRows(m.n_items) * o;
}

std::vector<ItemId> recommend_topk(const Model& m, std::span<const ItemId> seq, int k,
                                   bool exclude_seen) {
  if (k < 1 || k > m.n_items) throw Error("recommend_topk: k out of range");
  Eigen::VectorXd scores = score_next(m, seq);
  std::vector<ItemId> order(static_cast<std::size_t>(m.n_items));
  std::iota(order.begin(), order.end(), 1);
  if (exclude_seen) {
    std::set<ItemId> seen(seq.begin(), seq.end());
    order.erase(std::remove_if(order.begin(), order.end(),
                               [&](ItemId i) { return seen.count(i) != 0; }),
                order.end());
    if (static_cast<std::size_t>(k) > order.size()) {
      throw Error("recommend_topk: k larger than the unseen candidate set");
    }
  }
  auto better = [&](ItemId a, ItemId b) {
    const double sa = scores(a - 1), sb = scores(b - 1);
    if (sa != sb) return sa > sb;
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
  order.resize(static_cast<std::size_t>(k));
  return order;
}

AttentionMap attention_map(const Model& m, std::span<const ItemId> seq) {
  const std::vector<ItemId> suffix = canonical_suffix(m, seq);
  const int T = static_cast<int>(suffix.size());
  const int L = m.config.max_len;
  const int d = m.config.d_model;
  const int fr = L - T;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Eigen::MatrixXd X(T, d);
  for (int t = 0; t < T; ++t) {
    X.row(t) = m.item_emb.row(suffix[static_cast<std::size_t>(t)]) + m.pos_emb.row(fr + t);
  }
  Eigen::MatrixXd Q = X * m.w_query;
  Eigen::MatrixXd K = X * m.w_key;

  AttentionMap map;
  map.first_real = fr;
  map.alpha.setZero(L, L);
  for (int p = 0; p < fr; ++p) map.alpha(p, p) = 1.0;
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd logits = (K.topRows(t + 1) * Q.row(t).transpose()) * inv_sqrt_d;
    const double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp();
    map.alpha.row(fr + t).segment(fr, t + 1) = (e / e.sum()).transpose();
  }
  return map;
}

void write_attention_csv(const AttentionMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write attention csv: " + path);
  char buf[64];
  for (Eigen::Index i = 0; i < map.alpha.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.alpha.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", map.alpha(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

ReceptiveFieldSpec estimate_receptive_field(const Model& m, const Dataset& d, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error("estimate_receptive_field: threshold must be in (0,1]");
  }
  const int L = m.config.max_len;
  std::vector<double> sums(static_cast<std::size_t>(L), 0.0);
  std::vector<std::int64_t> hits(static_cast<std::size_t>(L), 0);
  for (const auto& u : d.users) {
    if (u.items.empty()) continue;
    AttentionMap map = attention_map(m, u.items);
    for (int p = map.first_real; p < L; ++p) {
      for (int j = map.first_real; j <= p; ++j) {
        sums[static_cast<std::size_t>(p - j)] += map.alpha(p, j);
        hits[static_cast<std::size_t>(p - j)] += 1;
      }
    }
  }
  ReceptiveFieldSpec rf;
  rf.after = 0;
  rf.whole_sequence = false;
  int r1 = 0;
  for (int k = 1; k < L; ++k) {
    if (hits[static_cast<std::size_t>(k)] == 0) break;
    const double mean =
        sums[static_cast<std::size_t>(k)] / static_cast<double>(hits[static_cast<std::size_t>(k)]);
    if (mean < threshold) break;
    r1 = k;
  }
  rf.before = r1;
  return rf;
}

double gradient_check(const Model& m, const Dataset& batch, double epsilon,
                      double corrupt_largest_by) {
  if (!(epsilon > 1e-8 && epsilon < 1e-2)) {
    throw Error("gradient_check: epsilon must be in (1e-8, 1e-2)");
  }
  WindowSet ws = build_training_windows(batch, m.config.max_len, /*exclude_holdout=*/false);
  if (ws.count == 0) throw Error("gradient_check: batch has no transitions");
  std::vector<int> all(static_cast<std::size_t>(ws.count));
  std::iota(all.begin(), all.end(), 0);
  DropoutCtx no_dropout;

  Model probe = m;
  Gradients grads(probe);
  auto [loss0, n0] = forward_backward(probe, ws, all, &grads, no_dropout);
  (void)loss0;
  if (n0 == 0) throw Error("gradient_check: batch has no scored positions");

  if (corrupt_largest_by != 1.0) {
    Eigen::MatrixXd* blocks[] = {&grads.item_emb, &grads.pos_emb,  &grads.w_query,
                                 &grads.w_key,    &grads.w_value,  &grads.w_ffn_in,
                                 &grads.w_ffn_out};
    double* largest = nullptr;
    for (Eigen::MatrixXd* b : blocks) {
      for (Eigen::Index i = 0; i < b->size(); ++i) {
        if (!largest || std::abs(b->data()[i]) > std::abs(*largest)) largest = b->data() + i;
      }
    }
    if (largest) *largest *= corrupt_largest_by;
  }

  auto loss_at = [&]() {
    auto [ls, np] = forward_backward(probe, ws, all, nullptr, no_dropout);
    return ls / static_cast<double>(np);
  };

  double max_rel = 0.0;
  auto check_block = [&](Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& analytic,
                         Eigen::Index skip_rows) {
    for (Eigen::Index i = skip_rows; i < param.rows(); ++i) {
      for (Eigen::Index j = 0; j < param.cols(); ++j) {
        const double orig = param(i, j);
        param(i, j) = orig + epsilon;
        const double up = loss_at();
        param(i, j) = orig - epsilon;
        const double down = loss_at();
        param(i, j) = orig;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic(i, j);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
      }
    }
  };

  check_block(probe.item_emb, grads.item_emb, 1);  // padding row is fixed, not a parameter
  check_block(probe.pos_emb, grads.pos_emb, 0);
  check_block(probe.w_query, grads.w_query, 0);
  check_block(probe.w_key, grads.w_key, 0);
  check_block(probe.w_value, grads.w_value, 0);
  check_block(probe.w_ffn_in, grads.w_ffn_in, 0);
  check_block(probe.w_ffn_out, grads.w_ffn_out, 0);
  auto check_vector = [&](Eigen::VectorXd& param, const Eigen::VectorXd& analytic) {
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double orig = param(i);
      param(i) = orig + epsilon;
      const double up = loss_at();
      param(i) = orig - epsilon;
      const double down = loss_at();
      param(i) = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic(i);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  };
  check_vector(probe.b_ffn_in, grads.b_ffn_in);
  check_vector(probe.b_ffn_out, grads.b_ffn_out);
  return max_rel;
}

namespace {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'M', 'A', 'R', 'K', '1'};

template <typename Scalar>
void write_raw(std::ofstream& out, const Scalar& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(Scalar));
}

template <typename Scalar>
Scalar read_raw(std::ifstream& in) {
  Scalar v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(Scalar));
  if (!in) throw Error("truncated checkpoint");
  return v;
}

void write_tensor(std::ofstream& out, const Eigen::MatrixXd& t) {
  write_raw<std::int64_t>(out, t.rows());
  write_raw<std::int64_t>(out, t.cols());
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) write_raw<double>(out, t(i, j));
  }
}

Eigen::MatrixXd read_tensor(std::ifstream& in, Eigen::Index rows, Eigen::Index cols,
                            const char* name) {
  const auto r = read_raw<std::int64_t>(in);
  const auto c = read_raw<std::int64_t>(in);
  if (r != rows || c != cols) {
    throw Error(std::string("checkpoint shape mismatch for ") + name + ": got " +
                std::to_string(r) + "x" + std::to_string(c) + ", expected " +
                std::to_string(rows) + "x" + std::to_string(cols));
  }
  Eigen::MatrixXd t(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) t(i, j) = read_raw<double>(in);
  }
  return t;
}

}  // namespace

void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_raw<std::int32_t>(out, 1);  // version
  write_raw<std::int32_t>(out, m.config.d_model);
  write_raw<std::int32_t>(out, m.config.max_len);
  write_raw<std::int32_t>(out, m.config.ffn_width);
  write_raw<double>(out, m.config.dropout);
  write_raw<std::int32_t>(out, m.n_items);
  write_tensor(out, m.item_emb);
  write_tensor(out, m.pos_emb);
  write_tensor(out, m.w_query);
  write_tensor(out, m.w_key);
  write_tensor(out, m.w_value);
  write_tensor(out, m.w_ffn_in);
  write_tensor(out, m.b_ffn_in);
  write_tensor(out, m.w_ffn_out);
  write_tensor(out, m.b_ffn_out);
  if (!out) throw Error("write failed: " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a model checkpoint: " + path);
  }
  const auto version = read_raw<std::int32_t>(in);
  if (version != 1) throw Error("unsupported checkpoint version " + std::to_string(version));
  Model m;
  m.config.d_model = read_raw<std::int32_t>(in);
  m.config.max_len = read_raw<std::int32_t>(in);
  m.config.ffn_width = read_raw<std::int32_t>(in);
  m.config.dropout = read_raw<double>(in);
  m.n_items = read_raw<std::int32_t>(in);
  m.config.validate();
  const int d = m.config.d_model, L = m.config.max_len, f = m.config.ffn_width;
  m.item_emb = read_tensor(in, m.n_items + 1, d, "item_emb");
  m.pos_emb = read_tensor(in, L, d, "pos_emb");
  m.w_query = read_tensor(in, d, d, "w_query");
  m.w_key = read_tensor(in, d, d, "w_key");
  m.w_value = read_tensor(in, d, d, "w_value");
  m.w_ffn_in = read_tensor(in, d, f, "w_ffn_in");
  m.b_ffn_in = read_tensor(in, f, 1, "b_ffn_in");
  m.w_ffn_out = read_tensor(in, f, d, "w_ffn_out");
  m.b_ffn_out = read_tensor(in, d, 1, "b_ffn_out");
  return m;
}

}  // namespace seqmark
