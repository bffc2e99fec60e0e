#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "hdiff/binary_io.hpp"
#include "hdiff/core.hpp"
#include "hdiff/htransform.hpp"
#include "hdiff/kernels.hpp"
#include "hdiff/mlp.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/sde.hpp"
#include "hdiff/support.hpp"

namespace hdiff {

// A forward path Z^h started at the data point `origin`, with its last exit
// index from the epsilon-enlarged support already computed.
struct ForwardSample {
  Path path;
  Vec origin;
};

// Simulates `paths_per_point` forward paths from every data point and
// records the last exit index against `support`.
inline std::vector<ForwardSample> simulate_forward_corpus(const PointCloud& data, const HSpec& forward,
                                                          const SupportEstimate& support,
                                                          std::size_t paths_per_point, double dt,
                                                          std::uint64_t seed, double bridge_kill_radius,
                                                          unsigned threads = 1,
                                                          std::size_t step_cap = 1'000'000) {
  if (data.empty()) throw EmptyDataError("simulate_forward_corpus: empty data");
  require(forward.is_forward(), "simulate_forward_corpus: forward variant required");
  const KillRule rule = forward_kill_rule(forward, bridge_kill_radius, step_cap);
  const std::size_t total = data.size() * paths_per_point;
  return parallel_map(total, threads, [&](std::size_t j) {
    const std::size_t i = j / paths_per_point;
    ForwardSample s{simulate(forward, data.point(i), rule, dt, stream_seed(seed, j)),
                    Vec(data.point(i).begin(), data.point(i).end())};
    s.path.last_exit_index = last_exit_index(s.path, support);
    return s;
  });
}

// Denoising score-matching objective
//   (1/n) sum_i sum_{k > sigma_i} dt |s(z_k) - grad log G_r(z_k, y_i)|^2.
inline double dsm_loss(const ScoreParams& params, std::span<const ForwardSample> batch,
                       const GreenKernel& kernel, const SupportEstimate& support) {
  require(!batch.empty(), "dsm_loss: empty batch");
  require(support.dim() == kernel.dim(), "dsm_loss: support dimension mismatch");
  MlpWorkspace ws;
  Vec s(kernel.dim());
  double total = 0.0;
  for (const auto& sample : batch) {
    const Path& p = sample.path;
    if (!p.last_exit_index) throw PreconditionError("dsm_loss: path is missing its last exit index");
    for (std::size_t k = *p.last_exit_index + 1; k <= p.kill_index; ++k) {
      const auto z = p.state(k);
      mlp_forward(params, z, ws, s);
      const Vec g = grad_log_green(kernel, z, sample.origin);
      total += p.dt * squared_distance(s, g);
    }
  }
  return total / static_cast<double>(batch.size());
}

// Flattened (state, target) pairs of the retained segments [sigma_eps, zeta].
struct ScoreCorpus {
  std::size_t dim = 0;
  double dt = 0.0;
  std::size_t path_count = 0;
  std::vector<double> states;
  std::vector<double> targets;

  std::size_t size() const { return dim ? states.size() / dim : 0; }
  std::span<const double> state(std::size_t m) const { return {states.data() + m * dim, dim}; }
  std::span<const double> target(std::size_t m) const { return {targets.data() + m * dim, dim}; }
};

inline ScoreCorpus build_corpus(std::span<const ForwardSample> samples, const GreenKernel& kernel) {
  require(!samples.empty(), "build_corpus: no samples");
  ScoreCorpus c;
  c.dim = kernel.dim();
  c.dt = samples.front().path.dt;
  c.path_count = samples.size();
  for (const auto& sample : samples) {
    const Path& p = sample.path;
    if (!p.last_exit_index) throw PreconditionError("build_corpus: path is missing its last exit index");
    require(p.dt == c.dt, "build_corpus: all paths must share one step size");
    for (std::size_t k = *p.last_exit_index + 1; k <= p.kill_index; ++k) {
      const auto z = p.state(k);
      const Vec g = grad_log_green(kernel, z, sample.origin);
      c.states.insert(c.states.end(), z.begin(), z.end());
      c.targets.insert(c.targets.end(), g.begin(), g.end());
    }
  }
  return c;
}

// Full-corpus value of the objective; equals dsm_loss on the samples the
// corpus was built from.
inline double corpus_loss(const ScoreParams& params, const ScoreCorpus& corpus) {
  MlpWorkspace ws;
  Vec s(corpus.dim);
  double total = 0.0;
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    mlp_forward(params, corpus.state(m), ws, s);
    total += squared_distance(s, corpus.target(m));
  }
  return corpus.dt * total / static_cast<double>(corpus.path_count);
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the corpus per epoch
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double lr_final_fraction = 1.0;  // cosine decay to lr * fraction over the run
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 10.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::Tanh;
  std::size_t paths_per_point = 64;
  double corpus_dt = 5e-3;
  double bridge_kill_radius = 0.05;
  unsigned threads = 1;

  void validate() const {
    require(batch_size >= 1, "TrainConfig: batch_size must be positive");
    require(learning_rate > 0.0, "TrainConfig: learning_rate must be positive");
    require(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0, "TrainConfig: lr_final_fraction in (0,1]");
    require(adam_beta1 > 0.0 && adam_beta1 < 1.0, "TrainConfig: adam_beta1 must lie in (0,1)");
    require(adam_beta2 > 0.0 && adam_beta2 < 1.0, "TrainConfig: adam_beta2 must lie in (0,1)");
    require(adam_eps > 0.0, "TrainConfig: adam_eps must be positive");
    require(grad_clip_norm > 0.0, "TrainConfig: grad_clip_norm must be positive");
    require(paths_per_point >= 1, "TrainConfig: paths_per_point must be positive");
    require(corpus_dt > 0.0, "TrainConfig: corpus_dt must be positive");
    for (auto h : hidden) require(h >= 1, "TrainConfig: zero-width hidden layer");
  }
};

struct TrainReport {
  std::vector<double> epoch_losses;  // mean minibatch estimate per epoch
  std::size_t corpus_size = 0;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss, const ScoreParams&)>;

// Adam on minibatches of (state, target) pairs drawn uniformly from the
// corpus. Single-threaded with a fixed reduction order, so the result is a
// pure function of (init, corpus, config).
inline ScoreParams train_on_corpus(ScoreParams params, const ScoreCorpus& corpus, const TrainConfig& cfg,
                                   TrainReport* report = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  params.validate();
  require(params.dim() == corpus.dim, "train: corpus dimension mismatch");
  if (report) report->corpus_size = corpus.size();
  if (cfg.epochs == 0) return params;
  if (corpus.size() == 0) throw PreconditionError("train: empty corpus (every path stayed inside the support)");

  const std::size_t np = params.weights.size();
  const std::size_t d = corpus.dim;
  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : std::max<std::size_t>(1, corpus.size() / cfg.batch_size);
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  // Minibatch mean of |s - g|^2 times this factor estimates the objective.
  const double loss_scale = corpus.dt * static_cast<double>(corpus.size()) / static_cast<double>(corpus.path_count);

  std::vector<double> grad(np), m(np, 0.0), v(np, 0.0);
  MlpWorkspace ws;
  Vec s(d), gout(d);
  Rng rng(cfg.seed, 0xba7c4);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t it = 0; it < steps_per_epoch; ++it, ++step) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      const double w = loss_scale / static_cast<double>(cfg.batch_size);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const std::size_t idx = rng.index(corpus.size());
        mlp_forward(params, corpus.state(idx), ws, s);
        const auto g = corpus.target(idx);
        for (std::size_t i = 0; i < d; ++i) {
          const double r = s[i] - g[i];
          batch_loss += r * r;
          gout[i] = 2.0 * w * r;
        }
        mlp_backward(params, ws, gout, grad);
      }
      batch_loss *= w;
      if (!std::isfinite(batch_loss))
        throw DivergenceError("train: loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step));
      epoch_loss += batch_loss;

      double gn = std::sqrt(squared_norm(grad));
      if (gn > cfg.grad_clip_norm) scale(grad, cfg.grad_clip_norm / gn);
      const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
      const double lr = cfg.learning_rate *
                        (cfg.lr_final_fraction +
                         (1.0 - cfg.lr_final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
      for (std::size_t j = 0; j < np; ++j) {
        m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * grad[j];
        v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * grad[j] * grad[j];
        params.weights[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
      }
    }
    epoch_loss /= static_cast<double>(steps_per_epoch);
    if (report) report->epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss, params);
  }
  if (report) report->steps = step;
  if (!all_finite(params.weights)) throw DivergenceError("train: non-finite weights after training");
  return params;
}

inline std::vector<std::size_t> score_layer_dims(std::size_t dim, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims{dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(dim);
  return dims;
}

// Simulates the forward corpus from the data, then fits the score.
inline ScoreParams train(const PointCloud& data, const HSpec& forward, const SupportEstimate& support,
                         const TrainConfig& cfg, TrainReport* report = nullptr,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  forward.validate();
  require(forward.is_forward(), "train: forward variant required");
  require(data.dim() == forward.dim() && support.dim() == forward.dim(), "train: dimension mismatch");
  ScoreParams init = ScoreParams::initialise(score_layer_dims(forward.dim(), cfg.hidden), cfg.activation, cfg.seed);
  if (cfg.epochs == 0) return init;
  const auto samples = simulate_forward_corpus(data, forward, support, cfg.paths_per_point, cfg.corpus_dt,
                                               stream_seed(cfg.seed, 0xc0),
                                               cfg.bridge_kill_radius, cfg.threads);
  const ScoreCorpus corpus = build_corpus(samples, forward.kernel);
  return train_on_corpus(std::move(init), corpus, cfg, report, on_epoch);
}

// Checkpoint metadata stored next to the weights.
struct CheckpointHeader {
  std::uint32_t forward_variant = 0;  // HVariant index: 0 constant, 1 bridge, 2 sphere
  double rate = 0.0;
  double epsilon = 0.0;
};

inline constexpr char kCheckpointMagic[9] = "HDIFFSM1";

inline void save_checkpoint(std::ostream& out, const ScoreParams& p, const CheckpointHeader& h) {
  p.validate();
  binio::write_magic(out, kCheckpointMagic);
  binio::write<std::uint32_t>(out, 1);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(p.dim()));
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(p.layer_dims.size()));
  for (auto w : p.layer_dims) binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(p.activation));
  binio::write<std::uint32_t>(out, h.forward_variant);
  binio::write<double>(out, h.rate);
  binio::write<double>(out, h.epsilon);
  binio::write<std::uint64_t>(out, p.weights.size());
  for (double w : p.weights) binio::write<double>(out, w);
  if (!out) throw FormatError("checkpoint: write failed");
}

inline ScoreParams load_checkpoint(std::istream& in, CheckpointHeader* header = nullptr) {
  binio::expect_magic(in, kCheckpointMagic, "checkpoint");
  if (binio::read<std::uint32_t>(in) != 1) throw FormatError("checkpoint: unsupported version");
  const auto dim = binio::read<std::uint32_t>(in);
  const auto ndims = binio::read<std::uint32_t>(in);
  if (ndims < 2 || ndims > 1024) throw FormatError("checkpoint: bad layer count");
  ScoreParams p;
  for (std::uint32_t i = 0; i < ndims; ++i) p.layer_dims.push_back(binio::read<std::uint32_t>(in));
  const auto act = binio::read<std::uint32_t>(in);
  if (act > 1) throw FormatError("checkpoint: unknown activation tag");
  p.activation = static_cast<Activation>(act);
  CheckpointHeader h;
  h.forward_variant = binio::read<std::uint32_t>(in);
  h.rate = binio::read<double>(in);
  h.epsilon = binio::read<double>(in);
  const auto count = binio::read<std::uint64_t>(in);
  if (p.layer_dims.front() != dim || count != ScoreParams::parameter_count(p.layer_dims))
    throw FormatError("checkpoint: inconsistent header");
  p.weights.resize(count);
  for (auto& w : p.weights) w = binio::read<double>(in);
  try {
    p.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (header) *header = h;
  return p;
}

inline void save_checkpoint(const std::string& path, const ScoreParams& p, const CheckpointHeader& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  save_checkpoint(out, p, h);
}

inline ScoreParams load_checkpoint(const std::string& path, CheckpointHeader* header = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing checkpoint " + path);
  return load_checkpoint(in, header);
}

}  // namespace hdiff
