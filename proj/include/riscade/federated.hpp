#ifndef RISCADE_FEDERATED_HPP
#define RISCADE_FEDERATED_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "riscade/nn/model.hpp"
#include "riscade/nn/optim.hpp"
#include "riscade/rng.hpp"

namespace riscade {

struct TrainSample {
  std::vector<double> tensor;  // q1 x q2 x 2 input encoding
  Eigen::VectorXcd target;     // supervision (LS label, or truth when configured)
  int region = 1;              // 1-based ground-truth region
};

// One (region, user) client. Every sample shares the client's region.
struct ClientDataset {
  int region = 1;
  int user = 1;
  std::vector<TrainSample> samples;

  std::size_t size() const { return samples.size(); }
};

enum class ServerOptimizer { kAdam, kSgd };

struct FedConfig {
  int epochs = 100;
  int batch_size = 256;
  double base_lr = 1e-3;
  int lr_halve_every_epochs = 30;
  ServerOptimizer server_opt = ServerOptimizer::kAdam;
  AdamConfig adam;               // lr field ignored (schedule applies)
  Gating gating = Gating::kHard;
  int local_steps = 1;           // > 1 uploads a model delta as a pseudo-gradient
  int threads = 1;
  std::uint64_t seed = 1;
  int log_every_rounds = 1;
  int max_val_samples = 1024;    // validation subsample per epoch
};

// What a client uploads each round: dataset size, a flat gradient over the
// trainable parameters, and batch-norm batch statistics. No sample data
// crosses this boundary by construction.
struct RoundContribution {
  std::uint64_t data_size = 0;
  std::vector<double> gradient;  // flatten_trainable layout
  BnStats bn_stats;
  double loss = 0.0;
};

std::vector<std::uint8_t> serialize_contribution(const RoundContribution& c);

// p_{r,k} = |D_{r,k}| / sum |D|, exactly summing to 1 in the final entry.
std::vector<double> aggregation_weights(const std::vector<ClientDataset>& clients);

// One synchronous-round gradient on a fresh mini-batch (sampled with
// replacement from batch_rng). Routing uses the model's frozen classifier
// (eval mode); gradients are nonzero only on the routed experts and the
// mapper. With local_steps > 1, performs that many sequential local SGD
// steps at stepsize lr and uploads -(delta)/lr instead.
RoundContribution client_local_gradient(const ClientDataset& client, const ModelParams& model,
                                        Gating gating, int batch_size, int local_steps, double lr,
                                        Rng batch_rng);

// theta <- theta - lr * sum_c weights[c] * contributions[c].gradient (kSgd),
// or a server-side Adam step on the weighted-mean gradient (kAdam).
// Running batch-norm statistics are updated from the weighted client stats.
void fedavg_apply(ModelParams& model, const std::vector<RoundContribution>& contributions,
                  const std::vector<double>& weights, double lr, ServerOptimizer opt,
                  AdamState& adam_state, const AdamConfig& adam_cfg);

struct TrainLogRow {
  int round = 0;
  int epoch = 0;
  double lr = 0.0;
  double mean_client_loss = 0.0;
  double val_nmse_db = std::numeric_limits<double>::quiet_NaN();
  double classifier_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  int rounds_per_epoch = 0;
};

// Held-out tensors with ground-truth channels for per-epoch validation.
struct EvalSet {
  std::vector<std::vector<double>> tensors;
  std::vector<Eigen::VectorXcd> truth;
  std::vector<int> regions;  // 1-based

  std::size_t size() const { return tensors.size(); }
};

// Synchronous FedAvg over the given clients (classifier assumed pretrained
// and frozen). epochs * ceil(max client size / batch) rounds; learning rate
// halved every lr_halve_every_epochs epochs. Deterministic in (clients,
// cfg, model); client gradients may run on cfg.threads threads.
TrainLog train_federated(const std::vector<ClientDataset>& clients, const FedConfig& cfg,
                         ModelParams& model, const EvalSet* val);

// Centralized mini-batch reference: one dataset, same batch streams and
// update rule as a single-client federated run.
TrainLog train_centralized(const ClientDataset& data, const FedConfig& cfg, ModelParams& model,
                           const EvalSet* val);

// Pools (tensor, region) pairs from all clients, shuffles, holds out
// val_fraction, trains the classifier with cross-entropy + Adam, and
// returns held-out accuracy. Experts and mapper are untouched.
double pretrain_classifier(const std::vector<ClientDataset>& clients, int epochs,
                           int batch_size, double lr, double val_fraction, std::uint64_t seed,
                           ModelParams& model);

// Mean NMSE (ratio averaged over samples, then dB) of the hard-gated
// estimator on an evaluation set; optionally reports gate accuracy.
double evaluate_nmse_db(const ModelParams& model, const EvalSet& set, Gating gating,
                        std::size_t max_samples, double* gate_accuracy);

std::uint64_t checkpoint_hash(const ModelParams& model);

}  // namespace riscade

#endif  // RISCADE_FEDERATED_HPP
