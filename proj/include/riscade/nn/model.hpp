#ifndef RISCADE_NN_MODEL_HPP
#define RISCADE_NN_MODEL_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "riscade/nn/layers.hpp"

namespace riscade {

enum class Gating { kHard, kSoft };

struct ModelShape {
  int q1 = 8, q2 = 4;          // input tensor spatial dims
  int regions = 3;             // R
  int d = 256;                 // complex output length (N*M or N'*M)
  int expert_channels = 32;
  int classifier_channels = 16;

  bool operator==(const ModelShape&) const = default;
};

// Region classifier: two (conv3x3 -> BN -> ReLU) blocks, global average
// pool, dense to R logits, softmax.
struct ClassifierParams {
  ConvLayer conv1, conv2;
  BnLayer bn1, bn2;
  DenseLayer head;
};

// Region expert: three (conv3x3 -> BN -> ReLU) blocks, 2 -> C -> C -> C
// channels, spatial dims preserved.
struct ExpertParams {
  std::array<ConvLayer, 3> conv;
  std::array<BnLayer, 3> bn;
};

// Shared mapper: 1x1 conv (no nonlinearity), row-major flatten, dense to
// 2*D reals packed [real parts; imaginary parts].
struct MapperParams {
  ConvLayer pointwise;
  DenseLayer readout;
};

struct ModelParams {
  ModelShape shape;
  ClassifierParams classifier;
  std::vector<ExpertParams> experts;
  MapperParams mapper;
};

// Glorot-uniform weights, zero biases, unit gamma/variance.
ModelParams init_model(const ModelShape& shape, std::uint64_t seed);
// Same structure with every array zeroed (gradient container).
ModelParams zero_model(const ModelShape& shape);

// --- flat parameter access (documented traversal order: classifier,
// experts 1..R, mapper; within a block conv kernels, conv bias, bn gamma,
// bn beta [, bn running mean, bn running var], dense weights, dense bias) ---

struct ArrayRef {
  double* data;
  std::size_t size;
  bool trainable;  // false for batch-norm running statistics
};
void for_each_array(ModelParams& model, const std::function<void(ArrayRef)>& fn);

std::vector<double> flatten_trainable(const ModelParams& model);
void assign_trainable(ModelParams& model, const std::vector<double>& flat);
std::vector<double> flatten_all(const ModelParams& model);  // includes running stats
void assign_all(ModelParams& model, const std::vector<double>& flat);
std::size_t count_trainable(const ModelParams& model);

void accumulate_scaled(ModelParams& acc, const ModelParams& grads, double scale);

// --- gate output ---

struct GateOutput {
  Eigen::VectorXd probabilities;  // on the simplex
  int hard_choice = 1;            // 1-based argmax, lowest index on ties
};

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row);

// --- batch-norm batch statistics, for running-stat maintenance ---
// Fixed traversal: classifier bn1, bn2, then the three bn layers of each
// expert. weight is the number of rows that produced the statistics
// (0 when the layer did not run in train mode).

struct BnStatEntry {
  Eigen::VectorXd mean, var;
  double weight = 0;
};
struct BnStats {
  std::vector<BnStatEntry> entries;
};
// momentum-update every running stat from (possibly aggregated) batch stats.
void apply_bn_stats(ModelParams& model, const BnStats& stats);
// weighted merge of per-client stats (weights renormalized per entry).
BnStats merge_bn_stats(const std::vector<BnStats>& parts, const std::vector<double>& weights);

// --- forward passes ---

struct ClassifierCache;
struct EstimatorCache;

// Batch classifier probabilities (n x R).
RowMat classifier_forward_batch(const ClassifierParams& params, const Batch3& in, Mode mode,
                                ClassifierCache* cache, Instrumentation* instr);

// Single-sample ops mirroring the batch machinery.
GateOutput classifier_forward(const std::vector<double>& tensor, const ModelShape& shape,
                              const ClassifierParams& params, Mode mode);
Batch3 expert_forward_batch(const ExpertParams& params, const Batch3& in, Mode mode,
                            struct ExpertCache* cache, Instrumentation* instr);
std::vector<double> expert_forward(const std::vector<double>& tensor, const ModelShape& shape,
                                   const ExpertParams& params, Mode mode);
RowMat mapper_forward_batch(const MapperParams& params, const Batch3& features,
                            struct MapperCache* cache, Instrumentation* instr);
Eigen::VectorXcd mapper_forward(const std::vector<double>& features, const ModelShape& shape,
                                const MapperParams& params);

struct EstimatorBatchResult {
  RowMat outputs;                 // n x 2D, [real; imag] packing per row
  RowMat gate_probs;              // n x R
  std::vector<int> hard_choice;   // 1-based per sample
};

// Full estimator on a batch. expert_mode governs the experts and mapper;
// classifier_mode governs the gate (eval for a frozen classifier).
EstimatorBatchResult estimator_forward_batch(const ModelParams& model, const Batch3& in,
                                             Gating gating, Mode expert_mode, Mode classifier_mode,
                                             EstimatorCache* cache, Instrumentation* instr);

std::pair<Eigen::VectorXcd, GateOutput> estimator_forward(const std::vector<double>& tensor,
                                                          const ModelParams& model, Gating gating,
                                                          Mode mode);

Eigen::VectorXcd unpack_complex(const Eigen::Ref<const Eigen::RowVectorXd>& packed);
Eigen::RowVectorXd pack_complex(const Eigen::VectorXcd& v);

// --- losses ---

// mean over the batch of ||out - target||^2 / ||target||^2 (rows packed
// [real; imag]).
double estimation_loss(const RowMat& outputs, const RowMat& targets);
RowMat estimation_loss_grad(const RowMat& outputs, const RowMat& targets);

// -mean log p[label], probabilities clamped at 1e-12. labels 1-based.
double classification_loss(const RowMat& probs, const std::vector<int>& labels);

// --- backward (exact gradients; forward must have run in train mode) ---

// Runs train-mode forward + backward of the estimation loss; accumulates
// into grads (classifier gradients flow only under soft gating). Returns
// the loss. Batch-norm batch statistics are reported through stats (not
// applied to the model).
double estimation_loss_gradients(const ModelParams& model, const Batch3& in, const RowMat& targets,
                                 Gating gating, Mode classifier_mode, ModelParams& grads,
                                 BnStats* stats, double* out_gate_accuracy = nullptr,
                                 const std::vector<int>* labels = nullptr);

// Same for the cross-entropy classifier loss (touches classifier only).
double classification_loss_gradients(const ModelParams& model, const Batch3& in,
                                     const std::vector<int>& labels, ModelParams& grads,
                                     BnStats* stats);

// --- complexity ---

struct MacBreakdown {
  unsigned long long classifier_conv = 0;
  unsigned long long classifier_dense = 0;
  unsigned long long expert_conv = 0;
  unsigned long long mapper_pointwise = 0;
  unsigned long long mapper_dense = 0;
  unsigned long long total = 0;  // single-expert inference including the gate
};

MacBreakdown mac_count(const ModelShape& shape);

}  // namespace riscade

#endif  // RISCADE_NN_MODEL_HPP
