#ifndef RISCADE_NN_LAYERS_HPP
#define RISCADE_NN_LAYERS_HPP

#include <Eigen/Dense>
#include <cstdint>

#include "riscade/nn/batch.hpp"

namespace riscade {

// Multiply-accumulate counter plus expert-touch bookkeeping. The counter
// is incremented by each conv/dense kernel with the exact number of
// multiply-adds it executes (zero-padded taps included); batch-norm,
// ReLU, pooling, bias adds and softmax contribute none, matching the
// analytic accounting.
struct Instrumentation {
  unsigned long long macs = 0;
  std::vector<int> expert_invocations;  // sized R by the model forward
};

enum class Mode { kTrain, kEval };

// k x k convolution, stride 1, same padding (k odd; 3 and 1 in practice).
// kernels row f holds filter f in (dy, dx, cin) row-major order.
struct ConvLayer {
  RowMat kernels;        // cout x (k*k*cin)
  Eigen::VectorXd bias;  // cout
  int k = 3, cin = 0, cout = 0;

  void init_shape(int k_, int cin_, int cout_) {
    k = k_;
    cin = cin_;
    cout = cout_;
    kernels.setZero(cout_, static_cast<Eigen::Index>(k_) * k_ * cin_);
    bias.setZero(cout_);
  }
};

struct BnLayer {
  Eigen::VectorXd gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.9;

  void init_shape(int c) {
    gamma.setOnes(c);
    beta.setZero(c);
    running_mean.setZero(c);
    running_var.setOnes(c);
  }
};

struct DenseLayer {
  RowMat weights;        // out x in
  Eigen::VectorXd bias;  // out

  void init_shape(int in, int out) {
    weights.setZero(out, in);
    bias.setZero(out);
  }
};

// --- convolution ---

// Patch matrix for the GEMM formulation: row (b*h + y)*w + x holds the
// zero-padded k x k x cin patch centred at (y, x) of sample b.
void im2col(const Batch3& in, int k, RowMat& col);

void conv_forward(const ConvLayer& layer, const Batch3& in, Batch3& out, RowMat* col_cache,
                  Instrumentation* instr);

// col is the cached patch matrix from the forward pass. din may be null
// when the input gradient is not needed (first layer).
void conv_backward(const ConvLayer& layer, const RowMat& col, const Batch3& in_shape,
                   const Batch3& dout, ConvLayer& grad, Batch3* din);

// --- batch normalization ---

struct BnCache {
  RowMat xhat;
  Eigen::VectorXd inv_std;     // 1/sqrt(var + eps)
  Eigen::VectorXd batch_mean;  // biased batch statistics
  Eigen::VectorXd batch_var;
  double count = 0;  // rows that contributed (n*h*w)
};

void bn_forward_train(const BnLayer& layer, const Batch3& in, Batch3& out, BnCache& cache);
void bn_forward_eval(const BnLayer& layer, const Batch3& in, Batch3& out);
void bn_backward(const BnLayer& layer, const BnCache& cache, const Batch3& dout, BnLayer& grad,
                 Batch3& din);
// running <- momentum * running + (1 - momentum) * batch
void bn_update_running(BnLayer& layer, const Eigen::VectorXd& batch_mean,
                       const Eigen::VectorXd& batch_var);

// --- relu ---

void relu_forward(const Batch3& in, Batch3& out);
void relu_backward(const Batch3& out, const Batch3& dout, Batch3& din);

// --- dense (operates on n x in matrices) ---

void dense_forward(const DenseLayer& layer, const Eigen::Ref<const RowMat>& in, RowMat& out,
                   Instrumentation* instr);
void dense_backward(const DenseLayer& layer, const Eigen::Ref<const RowMat>& in, const RowMat& dout,
                    DenseLayer& grad, RowMat* din);

// --- global average pool: (n*h*w, c) -> (n, c) ---

void gap_forward(const Batch3& in, RowMat& out);
void gap_backward(const Batch3& in_shape, const RowMat& dout, Batch3& din);

// --- softmax over rows, max-subtraction stabilized ---

RowMat softmax_rows(const RowMat& logits);
// dlogits given dprobs: p .* (dp - <dp, p>) per row.
RowMat softmax_backward_rows(const RowMat& probs, const RowMat& dprobs);

}  // namespace riscade

#endif  // RISCADE_NN_LAYERS_HPP
