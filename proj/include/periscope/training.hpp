#pragma once

#include <optional>

#include "periscope/network.hpp"

namespace periscope {

// ---------------------------------------------------------------------------
// BerHu (reverse Huber) loss.
// ---------------------------------------------------------------------------

/// BerHu loss with an explicitly pinned cutoff c: per-element |x| inside the
/// cutoff, (x^2 + c^2) / (2c) outside, averaged over all elements
/// (x = pred - target). Treated as a single differentiable op; the cutoff is
/// a constant in the gradient: dL/dpred_i = (1/M) * (sign(x_i) or x_i / c).
inline TensorPtr berhu_loss_pinned(const TensorPtr& pred, const TensorPtr& target, double c) {
  detail::check_same_shape(pred, target, "berhu_loss");
  if (c < 0.0) throw std::invalid_argument("berhu_loss: cutoff must be non-negative");
  auto out = detail::make_node({1}, {pred, target});
  const int64_t m = pred->numel();
  double acc = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const double x = pred->data[i] - target->data[i];
    const double ax = std::abs(x);
    acc += (c == 0.0 || ax <= c) ? ax : (x * x + c * c) / (2.0 * c);
  }
  out->data[0] = acc / static_cast<double>(m);
  if (out->requires_grad) {
    Tensor* o = out.get();
    out->backward_fn = [pred, target, o, c, m] {
      const double g = o->grad[0] / static_cast<double>(m);
      for (int64_t i = 0; i < m; ++i) {
        const double x = pred->data[i] - target->data[i];
        const double ax = std::abs(x);
        const double d = (c == 0.0 || ax <= c) ? (x > 0.0) - (x < 0.0) : x / c;
        if (pred->requires_grad) pred->grad[i] += g * d;
        if (target->requires_grad) target->grad[i] -= g * d;
      }
    };
  }
  return out;
}

/// BerHu loss with the cutoff derived from the batch itself:
/// c = fraction * max_i |pred_i - target_i|.
inline TensorPtr berhu_loss(const TensorPtr& pred, const TensorPtr& target,
                            double fraction = 0.24) {
  detail::check_same_shape(pred, target, "berhu_loss");
  double amax = 0.0;
  for (int64_t i = 0; i < pred->numel(); ++i)
    amax = std::max(amax, std::abs(pred->data[i] - target->data[i]));
  return berhu_loss_pinned(pred, target, fraction * amax);
}

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

/// First-order updater over a fixed parameter list. "adam" keeps
/// bias-corrected first/second moment estimates; "gd" applies plain gradient
/// descent steps.
class Optimizer {
 public:
  Optimizer(std::vector<TensorPtr> params, std::string method, double lr,
            double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), method_(std::move(method)), lr_(lr), beta1_(beta1),
        beta2_(beta2), eps_(eps) {
    if (method_ != "adam" && method_ != "gd")
      throw std::invalid_argument("optimizer must be 'adam' or 'gd'");
    if (method_ == "adam") {
      m_.resize(params_.size());
      v_.resize(params_.size());
      for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->data.size(), 0.0);
        v_[i].assign(params_[i]->data.size(), 0.0);
      }
    }
  }

  /// Applies one update from the gradients currently held by the parameters.
  void step() {
    if (method_ == "gd") {
      for (auto& p : params_)
        for (size_t j = 0; j < p->data.size(); ++j) p->data[j] -= lr_ * p->grad[j];
      return;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      for (size_t j = 0; j < p.data.size(); ++j) {
        const double g = p.grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        p.data[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
      }
    }
  }

  double lr() const { return lr_; }

 private:
  std::vector<TensorPtr> params_;
  std::string method_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Dataset split.
// ---------------------------------------------------------------------------

struct SplitIndices {
  std::vector<int> train, val, test;
};

/// Seeded 70/15/15 split: indices are shuffled, then the first floor(0.70 n)
/// go to train, the next floor(0.15 n) to validation and the remainder to
/// test (so n = 10 gives 7/1/2).
inline SplitIndices split_dataset(int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("split_dataset: empty dataset");
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x517EED));
  rng.shuffle(idx);
  const int ntr = static_cast<int>(std::floor(0.70 * n));
  const int nva = static_cast<int>(std::floor(0.15 * n));
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + ntr);
  s.val.assign(idx.begin() + ntr, idx.begin() + ntr + nva);
  s.test.assign(idx.begin() + ntr + nva, idx.end());
  return s;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainSample {
  std::vector<double> image;       // [R*R] grayscale in [0,1]
  std::vector<double> depth_norm;  // [R*R] normalized depth in [0,1]
};

struct TrainConfig {
  double lr = 1e-4;
  int max_epochs = 150;
  int patience = 20;  // early stop after this many epochs without val improvement
  int batch_size = 8;
  std::string optimizer = "adam";
  double berhu_fraction = 0.24;
  uint64_t seed = 0;
};

struct EpochStats {
  int epoch;  // 1-based
  double train_loss;
  double val_loss;
  double lr;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;   // 1-based epoch whose weights the net ends up with
  double best_val = 0.0;
  bool early_stopped = false;
};

namespace detail {

inline TensorPtr batch_tensor(const std::vector<TrainSample>& set,
                              const std::vector<int>& order, size_t from, size_t to,
                              int r, bool images) {
  auto t = Tensor::create({static_cast<int>(to - from), 1, r, r});
  for (size_t k = from; k < to; ++k) {
    const auto& src = images ? set[static_cast<size_t>(order[k])].image
                             : set[static_cast<size_t>(order[k])].depth_norm;
    if (static_cast<int>(src.size()) != r * r)
      throw std::invalid_argument("sample resolution does not match network input");
    std::copy(src.begin(), src.end(), t->data.begin() + static_cast<int64_t>(k - from) * r * r);
  }
  return t;
}

}  // namespace detail

/// Mean BerHu loss of the network over a sample set (eval mode, batched).
inline double evaluate_loss(DepthNet& net, const std::vector<TrainSample>& set,
                            int batch_size, double berhu_fraction) {
  if (set.empty()) throw std::invalid_argument("evaluate_loss: empty set");
  const int r = net.cfg.input_resolution;
  std::vector<int> order(set.size());
  for (size_t i = 0; i < set.size(); ++i) order[i] = static_cast<int>(i);
  Rng unused(0);
  double acc = 0.0;
  for (size_t at = 0; at < set.size(); at += static_cast<size_t>(batch_size)) {
    const size_t to = std::min(set.size(), at + static_cast<size_t>(batch_size));
    auto x = detail::batch_tensor(set, order, at, to, r, true);
    auto y = detail::batch_tensor(set, order, at, to, r, false);
    auto pred = net.forward(x, false, unused);
    acc += berhu_loss(pred, y, berhu_fraction)->data[0] * static_cast<double>(to - at);
  }
  return acc / static_cast<double>(set.size());
}

/// Trains in place. Shuffles the train set each epoch, steps the optimizer
/// per batch, evaluates validation loss per epoch, early-stops on `patience`
/// epochs without improvement and restores the best-validation weights
/// (including batchnorm running statistics) before returning. Fully
/// deterministic for a given config seed.
inline TrainResult train(DepthNet& net, const std::vector<TrainSample>& train_set,
                         const std::vector<TrainSample>& val_set, const TrainConfig& cfg) {
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train: train and validation sets must be non-empty");
  if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1)
    throw std::invalid_argument("train: batch_size, max_epochs and patience must be positive");

  const int r = net.cfg.input_resolution;
  Optimizer opt(net.parameters(), cfg.optimizer, cfg.lr);
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));

  auto params = net.parameters();
  auto buffers = net.buffers();
  std::vector<std::vector<double>> best_params;
  std::vector<std::vector<double>> best_buffers;
  auto snapshot = [&] {
    best_params.clear();
    best_buffers.clear();
    for (const auto& p : params) best_params.push_back(p->data);
    for (const auto* b : buffers) best_buffers.push_back(*b);
  };

  TrainResult res;
  res.best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<int> order(train_set.size());
  for (size_t i = 0; i < train_set.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double train_acc = 0.0;
    for (size_t at = 0; at < train_set.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t to = std::min(train_set.size(), at + static_cast<size_t>(cfg.batch_size));
      auto x = detail::batch_tensor(train_set, order, at, to, r, true);
      auto y = detail::batch_tensor(train_set, order, at, to, r, false);
      auto loss = berhu_loss(net.forward(x, true, dropout_rng), y, cfg.berhu_fraction);
      loss->backward();
      opt.step();
      train_acc += loss->data[0] * static_cast<double>(to - at);
    }
    const double train_loss = train_acc / static_cast<double>(train_set.size());
    const double val_loss = evaluate_loss(net, val_set, cfg.batch_size, cfg.berhu_fraction);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw std::runtime_error("training diverged: non-finite loss at epoch " +
                               std::to_string(epoch));
    res.history.push_back({epoch, train_loss, val_loss, opt.lr()});

    if (val_loss < res.best_val) {
      res.best_val = val_loss;
      res.best_epoch = epoch;
      since_best = 0;
      snapshot();
    } else if (++since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }

  for (size_t i = 0; i < params.size(); ++i) params[i]->data = best_params[i];
  for (size_t i = 0; i < buffers.size(); ++i) *buffers[i] = best_buffers[i];
  return res;
}

/// One JSON object per line per epoch.
inline void write_history_jsonl(const std::string& path, const std::vector<EpochStats>& hist) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open history file for writing: " + path);
  for (const auto& e : hist) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_loss", e.val_loss},
                        {"lr", e.lr}};
    out << j.dump() << "\n";
  }
}

inline std::vector<EpochStats> read_history_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open history file: " + path);
  std::vector<EpochStats> hist;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    hist.push_back({j.at("epoch").get<int>(), j.at("train_loss").get<double>(),
                    j.at("val_loss").get<double>(), j.at("lr").get<double>()});
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Depth metric suite.
// ---------------------------------------------------------------------------

struct DepthRange {
  double d_min = 20.0;
  double d_max = 90.0;

  double denormalize(double y) const { return d_min + (d_max - d_min) * y; }
  double normalize(double mm) const { return (mm - d_min) / (d_max - d_min); }
};

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;  // fraction with max(p/g, g/p) < 1.25
  double delta2 = 0.0;  // < 1.25^2
  double delta3 = 0.0;  // < 1.25^3
  int64_t evaluated = 0;
  int64_t excluded = 0;  // non-positive ground-truth pixels skipped
};

/// Standard monocular depth error metrics over physical-unit maps. Pixels with
/// non-positive ground truth are excluded and tallied; predictions are floored
/// at a tiny positive value so ratios and logs stay finite.
inline DepthMetrics compute_depth_metrics(const std::vector<double>& pred_mm,
                                          const std::vector<double>& gt_mm) {
  if (pred_mm.size() != gt_mm.size())
    throw std::invalid_argument("compute_depth_metrics: size mismatch");
  DepthMetrics m;
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  int64_t d1 = 0, d2 = 0, d3 = 0;
  for (size_t i = 0; i < gt_mm.size(); ++i) {
    const double g = gt_mm[i];
    if (g <= 0.0) {
      ++m.excluded;
      continue;
    }
    const double p = std::max(pred_mm[i], 1e-9);
    ++m.evaluated;
    const double d = p - g;
    abs_rel += std::abs(d) / g;
    sq_rel += d * d / g;
    sq += d * d;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  if (m.evaluated == 0) throw std::invalid_argument("compute_depth_metrics: no valid pixels");
  const double n = static_cast<double>(m.evaluated);
  m.abs_rel = abs_rel / n;
  m.sq_rel = sq_rel / n;
  m.rmse = std::sqrt(sq / n);
  m.rmse_log = std::sqrt(sq_log / n);
  m.delta1 = static_cast<double>(d1) / n;
  m.delta2 = static_cast<double>(d2) / n;
  m.delta3 = static_cast<double>(d3) / n;
  return m;
}

/// Runs the network over a sample set and reports metrics in millimetres.
inline DepthMetrics evaluate_metrics(DepthNet& net, const std::vector<TrainSample>& set,
                                     const DepthRange& range, int batch_size = 8) {
  if (set.empty()) throw std::invalid_argument("evaluate_metrics: empty set");
  const int r = net.cfg.input_resolution;
  std::vector<int> order(set.size());
  for (size_t i = 0; i < set.size(); ++i) order[i] = static_cast<int>(i);
  Rng unused(0);
  std::vector<double> pred_mm, gt_mm;
  pred_mm.reserve(set.size() * static_cast<size_t>(r) * static_cast<size_t>(r));
  gt_mm.reserve(pred_mm.capacity());
  for (size_t at = 0; at < set.size(); at += static_cast<size_t>(batch_size)) {
    const size_t to = std::min(set.size(), at + static_cast<size_t>(batch_size));
    auto x = detail::batch_tensor(set, order, at, to, r, true);
    auto y = detail::batch_tensor(set, order, at, to, r, false);
    auto pred = net.forward(x, false, unused);
    for (int64_t i = 0; i < pred->numel(); ++i) {
      pred_mm.push_back(range.denormalize(pred->data[i]));
      gt_mm.push_back(range.denormalize(y->data[i]));
    }
  }
  return compute_depth_metrics(pred_mm, gt_mm);
}

}  // namespace periscope
