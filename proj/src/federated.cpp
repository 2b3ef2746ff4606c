#include "riscade/federated.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <future>
#include <stdexcept>

#include "riscade/estimators.hpp"
#include "riscade/rng.hpp"

namespace riscade {

namespace {

Batch3 gather_batch(const ClientDataset& client, const std::vector<std::size_t>& idx, int q1,
                    int q2) {
  Batch3 b;
  b.resize(static_cast<int>(idx.size()), q1, q2, 2);
  for (std::size_t i = 0; i < idx.size(); ++i) b.set_sample(static_cast<int>(i), client.samples[idx[i]].tensor);
  return b;
}

RowMat gather_targets(const ClientDataset& client, const std::vector<std::size_t>& idx) {
  const Eigen::Index d2 = 2 * client.samples.front().target.size();
  RowMat t(static_cast<Eigen::Index>(idx.size()), d2);
  for (std::size_t i = 0; i < idx.size(); ++i)
    t.row(static_cast<Eigen::Index>(i)) = pack_complex(client.samples[idx[i]].target);
  return t;
}

std::vector<std::size_t> draw_batch_indices(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> idx(batch_size);
  for (auto& v : idx) v = rng.below(n);
  return idx;
}

double schedule_lr(const FedConfig& cfg, int epoch) {
  const int halvings = cfg.lr_halve_every_epochs > 0 ? epoch / cfg.lr_halve_every_epochs : 0;
  return cfg.base_lr * std::pow(0.5, halvings);
}

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

}  // namespace

std::vector<std::uint8_t> serialize_contribution(const RoundContribution& c) {
  std::vector<std::uint8_t> out;
  append_bytes(out, &c.data_size, sizeof(c.data_size));
  append_bytes(out, &c.loss, sizeof(c.loss));
  const std::uint64_t glen = c.gradient.size();
  append_bytes(out, &glen, sizeof(glen));
  append_bytes(out, c.gradient.data(), sizeof(double) * c.gradient.size());
  const std::uint64_t entries = c.bn_stats.entries.size();
  append_bytes(out, &entries, sizeof(entries));
  for (const auto& e : c.bn_stats.entries) {
    const std::uint64_t len = e.mean.size();
    append_bytes(out, &len, sizeof(len));
    append_bytes(out, &e.weight, sizeof(e.weight));
    append_bytes(out, e.mean.data(), sizeof(double) * e.mean.size());
    append_bytes(out, e.var.data(), sizeof(double) * e.var.size());
  }
  return out;
}

std::vector<double> aggregation_weights(const std::vector<ClientDataset>& clients) {
  if (clients.empty()) throw std::invalid_argument("aggregation_weights: no clients");
  double total = 0.0;
  for (const auto& c : clients) total += static_cast<double>(c.size());
  if (total <= 0.0) throw std::invalid_argument("aggregation_weights: empty datasets");
  std::vector<double> w(clients.size());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < clients.size(); ++i) {
    w[i] = static_cast<double>(clients[i].size()) / total;
    acc += w[i];
  }
  w.back() = 1.0 - acc;  // exact sum to 1
  return w;
}

RoundContribution client_local_gradient(const ClientDataset& client, const ModelParams& model,
                                        Gating gating, int batch_size, int local_steps, double lr,
                                        Rng batch_rng) {
  if (client.samples.empty()) throw std::invalid_argument("client_local_gradient: empty client");
  RoundContribution out;
  out.data_size = client.size();

  if (local_steps <= 1) {
    const auto idx = draw_batch_indices(client.size(), batch_size, batch_rng);
    const Batch3 in = gather_batch(client, idx, model.shape.q1, model.shape.q2);
    const RowMat targets = gather_targets(client, idx);
    ModelParams grads = zero_model(model.shape);
    out.loss = estimation_loss_gradients(model, in, targets, gating, Mode::kEval, grads,
                                         &out.bn_stats);
    out.gradient = flatten_trainable(grads);
    return out;
  }

  // Multi-step local update: run local SGD and upload -(delta)/lr, which the
  // server treats exactly like a gradient (FedOpt-style pseudo-gradient).
  ModelParams local = model;
  const std::vector<double> start = flatten_trainable(model);
  std::vector<BnStats> stats;
  double loss_acc = 0.0;
  for (int s = 0; s < local_steps; ++s) {
    const auto idx = draw_batch_indices(client.size(), batch_size, batch_rng);
    const Batch3 in = gather_batch(client, idx, model.shape.q1, model.shape.q2);
    const RowMat targets = gather_targets(client, idx);
    ModelParams grads = zero_model(model.shape);
    BnStats step_stats;
    loss_acc += estimation_loss_gradients(local, in, targets, gating, Mode::kEval, grads,
                                          &step_stats);
    stats.push_back(std::move(step_stats));
    std::vector<double> flat = flatten_trainable(local);
    sgd_step(flat, flatten_trainable(grads), lr);
    assign_trainable(local, flat);
  }
  const std::vector<double> end = flatten_trainable(local);
  out.gradient.resize(start.size());
  for (std::size_t i = 0; i < start.size(); ++i) out.gradient[i] = (start[i] - end[i]) / lr;
  out.bn_stats = merge_bn_stats(stats, std::vector<double>(stats.size(), 1.0));
  out.loss = loss_acc / local_steps;
  return out;
}

void fedavg_apply(ModelParams& model, const std::vector<RoundContribution>& contributions,
                  const std::vector<double>& weights, double lr, ServerOptimizer opt,
                  AdamState& adam_state, const AdamConfig& adam_cfg) {
  if (contributions.empty() || contributions.size() != weights.size())
    throw std::invalid_argument("fedavg_apply: contribution/weight mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("fedavg_apply: weights must sum to 1");

  std::vector<double> agg = contributions.front().gradient;
  if (weights.front() != 1.0)
    for (auto& v : agg) v *= weights.front();
  for (std::size_t c = 1; c < contributions.size(); ++c) {
    const auto& g = contributions[c].gradient;
    if (g.size() != agg.size()) throw std::invalid_argument("fedavg_apply: gradient size mismatch");
    for (std::size_t i = 0; i < agg.size(); ++i) agg[i] += weights[c] * g[i];
  }

  std::vector<double> flat = flatten_trainable(model);
  if (opt == ServerOptimizer::kSgd) {
    sgd_step(flat, agg, lr);
  } else {
    AdamConfig cfg = adam_cfg;
    cfg.lr = lr;
    adam_step(flat, agg, adam_state, cfg);
  }
  assign_trainable(model, flat);

  if (contributions.size() == 1) {
    apply_bn_stats(model, contributions.front().bn_stats);
  } else {
    std::vector<BnStats> parts;
    parts.reserve(contributions.size());
    for (const auto& c : contributions) parts.push_back(c.bn_stats);
    apply_bn_stats(model, merge_bn_stats(parts, weights));
  }
}

double evaluate_nmse_db(const ModelParams& model, const EvalSet& set, Gating gating,
                        std::size_t max_samples, double* gate_accuracy) {
  const std::size_t n = std::min(set.size(), max_samples);
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  int correct = 0;
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    Batch3 in;
    in.resize(static_cast<int>(count), model.shape.q1, model.shape.q2, 2);
    for (std::size_t i = 0; i < count; ++i) in.set_sample(static_cast<int>(i), set.tensors[start + i]);
    const auto res =
        estimator_forward_batch(model, in, gating, Mode::kEval, Mode::kEval, nullptr, nullptr);
    for (std::size_t i = 0; i < count; ++i) {
      acc += nmse(unpack_complex(res.outputs.row(static_cast<Eigen::Index>(i))),
                  set.truth[start + i]);
      if (res.hard_choice[i] == set.regions[start + i]) ++correct;
    }
  }
  if (gate_accuracy != nullptr) *gate_accuracy = static_cast<double>(correct) / n;
  return nmse_db(acc / n);
}

namespace {

TrainLog train_loop(const std::vector<ClientDataset>& clients, const FedConfig& cfg,
                    ModelParams& model, const EvalSet* val) {
  if (clients.empty()) throw std::invalid_argument("train: no clients");
  for (const auto& c : clients)
    if (c.samples.empty()) throw std::invalid_argument("train: empty client dataset");

  std::size_t max_size = 0;
  for (const auto& c : clients) max_size = std::max(max_size, c.size());
  const int rounds_per_epoch =
      static_cast<int>((max_size + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size));
  const int total_rounds = cfg.epochs * rounds_per_epoch;

  const std::vector<double> weights = aggregation_weights(clients);
  const Rng root(cfg.seed);
  AdamState adam_state;
  TrainLog log;
  log.rounds_per_epoch = rounds_per_epoch;
  double last_val = std::numeric_limits<double>::quiet_NaN();
  double last_acc = std::numeric_limits<double>::quiet_NaN();

  std::vector<RoundContribution> contributions(clients.size());
  for (int round = 0; round < total_rounds; ++round) {
    const int epoch = round / rounds_per_epoch;
    const double lr = schedule_lr(cfg, epoch);

    auto run_client = [&](std::size_t c) {
      contributions[c] =
          client_local_gradient(clients[c], model, cfg.gating, cfg.batch_size, cfg.local_steps, lr,
                                root.split(kTagBatch, round, c));
    };
    if (cfg.threads > 1 && clients.size() > 1) {
      std::vector<std::future<void>> futures;
      futures.reserve(clients.size());
      for (std::size_t c = 0; c < clients.size(); ++c)
        futures.push_back(std::async(std::launch::async, run_client, c));
      for (auto& f : futures) f.get();
    } else {
      for (std::size_t c = 0; c < clients.size(); ++c) run_client(c);
    }

    fedavg_apply(model, contributions, weights, lr, cfg.server_opt, adam_state, cfg.adam);

    double mean_loss = 0.0;
    for (std::size_t c = 0; c < clients.size(); ++c) mean_loss += contributions[c].loss;
    mean_loss /= static_cast<double>(clients.size());

    const bool epoch_end = (round + 1) % rounds_per_epoch == 0;
    if (epoch_end && val != nullptr) {
      double acc = 0.0;
      last_val = evaluate_nmse_db(model, *val, cfg.gating, cfg.max_val_samples, &acc);
      last_acc = acc;
    }
    if ((round + 1) % cfg.log_every_rounds == 0 || epoch_end) {
      log.rows.push_back(TrainLogRow{round, epoch, lr, mean_loss, last_val, last_acc});
    }
  }
  return log;
}

}  // namespace

TrainLog train_federated(const std::vector<ClientDataset>& clients, const FedConfig& cfg,
                         ModelParams& model, const EvalSet* val) {
  return train_loop(clients, cfg, model, val);
}

TrainLog train_centralized(const ClientDataset& data, const FedConfig& cfg, ModelParams& model,
                           const EvalSet* val) {
  if (data.samples.empty()) throw std::invalid_argument("train_centralized: empty dataset");
  const int rounds_per_epoch =
      static_cast<int>((data.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size));
  const int total_rounds = cfg.epochs * rounds_per_epoch;
  const Rng root(cfg.seed);
  AdamState adam_state;
  TrainLog log;
  log.rounds_per_epoch = rounds_per_epoch;
  double last_val = std::numeric_limits<double>::quiet_NaN();
  double last_acc = std::numeric_limits<double>::quiet_NaN();

  for (int round = 0; round < total_rounds; ++round) {
    const int epoch = round / rounds_per_epoch;
    const double lr = schedule_lr(cfg, epoch);
    Rng batch_rng = root.split(kTagBatch, round, std::size_t{0});
    const auto idx = draw_batch_indices(data.size(), cfg.batch_size, batch_rng);
    const Batch3 in = gather_batch(data, idx, model.shape.q1, model.shape.q2);
    const RowMat targets = gather_targets(data, idx);

    ModelParams grads = zero_model(model.shape);
    BnStats stats;
    const double loss =
        estimation_loss_gradients(model, in, targets, cfg.gating, Mode::kEval, grads, &stats);

    std::vector<double> flat = flatten_trainable(model);
    if (cfg.server_opt == ServerOptimizer::kSgd) {
      sgd_step(flat, flatten_trainable(grads), lr);
    } else {
      AdamConfig acfg = cfg.adam;
      acfg.lr = lr;
      adam_step(flat, flatten_trainable(grads), adam_state, acfg);
    }
    assign_trainable(model, flat);
    apply_bn_stats(model, stats);

    const bool epoch_end = (round + 1) % rounds_per_epoch == 0;
    if (epoch_end && val != nullptr) {
      double acc = 0.0;
      last_val = evaluate_nmse_db(model, *val, cfg.gating, cfg.max_val_samples, &acc);
      last_acc = acc;
    }
    if ((round + 1) % cfg.log_every_rounds == 0 || epoch_end) {
      log.rows.push_back(TrainLogRow{round, epoch, lr, loss, last_val, last_acc});
    }
  }
  return log;
}

double pretrain_classifier(const std::vector<ClientDataset>& clients, int epochs, int batch_size,
                           double lr, double val_fraction, std::uint64_t seed, ModelParams& model) {
  std::vector<const TrainSample*> pooled;
  for (const auto& c : clients)
    for (const auto& s : c.samples) pooled.push_back(&s);
  if (pooled.size() < 2) throw std::invalid_argument("pretrain_classifier: not enough samples");

  Rng shuffle_rng = Rng(seed).split(kTagPretrain, kTagShuffle);
  for (std::size_t i = pooled.size() - 1; i > 0; --i)
    std::swap(pooled[i], pooled[shuffle_rng.below(i + 1)]);

  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(val_fraction * pooled.size()));
  const std::size_t n_train = pooled.size() - n_val;
  if (n_train < 1) throw std::invalid_argument("pretrain_classifier: no training samples left");

  AdamState adam_state;
  const Rng root(seed);
  const int q1 = model.shape.q1, q2 = model.shape.q2;
  int round = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng order_rng = root.split(kTagPretrain, epoch);
    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    for (std::size_t i = n_train - 1; i > 0; --i) std::swap(order[i], order[order_rng.below(i + 1)]);

    for (std::size_t start = 0; start < n_train; start += batch_size, ++round) {
      const std::size_t count = std::min<std::size_t>(batch_size, n_train - start);
      if (count < 2) continue;  // batch-norm needs statistics
      Batch3 in;
      in.resize(static_cast<int>(count), q1, q2, 2);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        in.set_sample(static_cast<int>(i), pooled[order[start + i]]->tensor);
        labels[i] = pooled[order[start + i]]->region;
      }
      ModelParams grads = zero_model(model.shape);
      BnStats stats;
      classification_loss_gradients(model, in, labels, grads, &stats);
      std::vector<double> flat = flatten_trainable(model);
      AdamConfig acfg;
      acfg.lr = lr;
      adam_step(flat, flatten_trainable(grads), adam_state, acfg);
      assign_trainable(model, flat);
      apply_bn_stats(model, stats);
    }
  }

  // held-out accuracy, eval mode
  int correct = 0;
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < n_val; start += chunk) {
    const std::size_t count = std::min(chunk, n_val - start);
    Batch3 in;
    in.resize(static_cast<int>(count), q1, q2, 2);
    for (std::size_t i = 0; i < count; ++i)
      in.set_sample(static_cast<int>(i), pooled[n_train + start + i]->tensor);
    const RowMat probs =
        classifier_forward_batch(model.classifier, in, Mode::kEval, nullptr, nullptr);
    for (std::size_t i = 0; i < count; ++i)
      if (argmax_lowest(probs.row(static_cast<Eigen::Index>(i))) + 1 ==
          pooled[n_train + start + i]->region)
        ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_val);
}

std::uint64_t checkpoint_hash(const ModelParams& model) {
  const std::vector<double> flat = flatten_all(model);
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(flat.data());
  for (std::size_t i = 0; i < flat.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace riscade
