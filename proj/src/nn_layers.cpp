#include "riscade/nn/layers.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace riscade {

void im2col(const Batch3& in, int k, RowMat& col) {
  const int pad = (k - 1) / 2;
  const Eigen::Index patch = static_cast<Eigen::Index>(k) * k * in.c;
  col.resize(in.pixels(), patch);
  if (k == 1) {
    col = in.m;
    return;
  }
  col.setZero();
  for (int b = 0; b < in.n; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * in.h * in.w;
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double* dst = col.data() + (base + static_cast<Eigen::Index>(y) * in.w + x) * patch;
        for (int dy = 0; dy < k; ++dy) {
          const int sy = y + dy - pad;
          if (sy < 0 || sy >= in.h) continue;
          for (int dx = 0; dx < k; ++dx) {
            const int sx = x + dx - pad;
            if (sx < 0 || sx >= in.w) continue;
            const double* src = in.m.data() + (base + static_cast<Eigen::Index>(sy) * in.w + sx) * in.c;
            std::memcpy(dst + (static_cast<Eigen::Index>(dy) * k + dx) * in.c, src,
                        sizeof(double) * in.c);
          }
        }
      }
    }
  }
}

void conv_forward(const ConvLayer& layer, const Batch3& in, Batch3& out, RowMat* col_cache,
                  Instrumentation* instr) {
  if (in.c != layer.cin) throw std::invalid_argument("conv_forward: channel mismatch");
  RowMat local;
  RowMat& col = col_cache != nullptr ? *col_cache : local;
  im2col(in, layer.k, col);
  out.resize(in.n, in.h, in.w, layer.cout);
  out.m.noalias() = col * layer.kernels.transpose();
  out.m.rowwise() += layer.bias.transpose();
  if (instr != nullptr)
    instr->macs += static_cast<unsigned long long>(col.rows()) * col.cols() * layer.cout;
}

void conv_backward(const ConvLayer& layer, const RowMat& col, const Batch3& in_shape,
                   const Batch3& dout, ConvLayer& grad, Batch3* din) {
  grad.kernels.noalias() += dout.m.transpose() * col;
  grad.bias.noalias() += dout.m.colwise().sum().transpose();
  if (din == nullptr) return;

  RowMat dcol = dout.m * layer.kernels;  // (n*h*w) x (k*k*cin)
  din->resize(in_shape.n, in_shape.h, in_shape.w, in_shape.c);
  if (layer.k == 1) {
    din->m = dcol;
    return;
  }
  din->m.setZero();
  const int k = layer.k;
  const int pad = (k - 1) / 2;
  const Eigen::Index patch = static_cast<Eigen::Index>(k) * k * in_shape.c;
  for (int b = 0; b < in_shape.n; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * in_shape.h * in_shape.w;
    for (int y = 0; y < in_shape.h; ++y) {
      for (int x = 0; x < in_shape.w; ++x) {
        const double* src = dcol.data() + (base + static_cast<Eigen::Index>(y) * in_shape.w + x) * patch;
        for (int dy = 0; dy < k; ++dy) {
          const int sy = y + dy - pad;
          if (sy < 0 || sy >= in_shape.h) continue;
          for (int dx = 0; dx < k; ++dx) {
            const int sx = x + dx - pad;
            if (sx < 0 || sx >= in_shape.w) continue;
            double* dst = din->m.data() + (base + static_cast<Eigen::Index>(sy) * in_shape.w + sx) * in_shape.c;
            const double* blk = src + (static_cast<Eigen::Index>(dy) * k + dx) * in_shape.c;
            for (int ci = 0; ci < in_shape.c; ++ci) dst[ci] += blk[ci];
          }
        }
      }
    }
  }
}

void bn_forward_train(const BnLayer& layer, const Batch3& in, Batch3& out, BnCache& cache) {
  const Eigen::Index rows = in.m.rows();
  if (rows < 2) throw std::invalid_argument("bn_forward_train: need at least 2 rows of statistics");
  cache.count = static_cast<double>(rows);
  cache.batch_mean = in.m.colwise().mean().transpose();
  RowMat centered = in.m.rowwise() - cache.batch_mean.transpose();
  cache.batch_var = centered.array().square().colwise().mean().transpose();
  cache.inv_std = (cache.batch_var.array() + layer.eps).rsqrt();
  cache.xhat = centered.array().rowwise() * cache.inv_std.transpose().array();
  out.n = in.n;
  out.h = in.h;
  out.w = in.w;
  out.c = in.c;
  out.m = cache.xhat.array().rowwise() * layer.gamma.transpose().array();
  out.m.rowwise() += layer.beta.transpose();
}

void bn_forward_eval(const BnLayer& layer, const Batch3& in, Batch3& out) {
  const Eigen::VectorXd inv_std = (layer.running_var.array() + layer.eps).rsqrt();
  out.n = in.n;
  out.h = in.h;
  out.w = in.w;
  out.c = in.c;
  out.m = (in.m.rowwise() - layer.running_mean.transpose()).array().rowwise() *
          (inv_std.array() * layer.gamma.array()).transpose().array();
  out.m.rowwise() += layer.beta.transpose();
}

void bn_backward(const BnLayer& layer, const BnCache& cache, const Batch3& dout, BnLayer& grad,
                 Batch3& din) {
  const double n = cache.count;
  grad.gamma.noalias() += (dout.m.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  grad.beta.noalias() += dout.m.colwise().sum().transpose();

  // dxhat = dout * gamma; dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat .* xhat))
  RowMat dxhat = dout.m.array().rowwise() * layer.gamma.transpose().array();
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum();

  din.n = dout.n;
  din.h = dout.h;
  din.w = dout.w;
  din.c = dout.c;
  din.m = (dxhat * n).rowwise() - sum_dxhat;
  din.m -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  din.m.array().rowwise() *= (cache.inv_std / n).transpose().array();
}

void bn_update_running(BnLayer& layer, const Eigen::VectorXd& batch_mean,
                       const Eigen::VectorXd& batch_var) {
  layer.running_mean = layer.momentum * layer.running_mean + (1.0 - layer.momentum) * batch_mean;
  layer.running_var = layer.momentum * layer.running_var + (1.0 - layer.momentum) * batch_var;
}

void relu_forward(const Batch3& in, Batch3& out) {
  out.n = in.n;
  out.h = in.h;
  out.w = in.w;
  out.c = in.c;
  out.m = in.m.cwiseMax(0.0);
}

void relu_backward(const Batch3& out, const Batch3& dout, Batch3& din) {
  din.n = dout.n;
  din.h = dout.h;
  din.w = dout.w;
  din.c = dout.c;
  din.m = (out.m.array() > 0.0).select(dout.m, 0.0);
}

void dense_forward(const DenseLayer& layer, const Eigen::Ref<const RowMat>& in, RowMat& out,
                   Instrumentation* instr) {
  out.noalias() = in * layer.weights.transpose();
  out.rowwise() += layer.bias.transpose();
  if (instr != nullptr)
    instr->macs += static_cast<unsigned long long>(in.rows()) * in.cols() * layer.weights.rows();
}

void dense_backward(const DenseLayer& layer, const Eigen::Ref<const RowMat>& in, const RowMat& dout,
                    DenseLayer& grad, RowMat* din) {
  grad.weights.noalias() += dout.transpose() * in;
  grad.bias.noalias() += dout.colwise().sum().transpose();
  if (din != nullptr) din->noalias() = dout * layer.weights;
}

void gap_forward(const Batch3& in, RowMat& out) {
  const Eigen::Index hw = static_cast<Eigen::Index>(in.h) * in.w;
  out.resize(in.n, in.c);
  for (int b = 0; b < in.n; ++b)
    out.row(b) = in.m.middleRows(static_cast<Eigen::Index>(b) * hw, hw).colwise().mean();
}

void gap_backward(const Batch3& in_shape, const RowMat& dout, Batch3& din) {
  const Eigen::Index hw = static_cast<Eigen::Index>(in_shape.h) * in_shape.w;
  din.resize(in_shape.n, in_shape.h, in_shape.w, in_shape.c);
  for (int b = 0; b < in_shape.n; ++b)
    din.m.middleRows(static_cast<Eigen::Index>(b) * hw, hw).rowwise() =
        dout.row(b) / static_cast<double>(hw);
}

RowMat softmax_rows(const RowMat& logits) {
  RowMat p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

RowMat softmax_backward_rows(const RowMat& probs, const RowMat& dprobs) {
  RowMat dlogits(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double inner = probs.row(i).dot(dprobs.row(i));
    dlogits.row(i) = probs.row(i).array() * (dprobs.row(i).array() - inner);
  }
  return dlogits;
}

}  // namespace riscade
