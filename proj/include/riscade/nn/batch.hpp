#ifndef RISCADE_NN_BATCH_HPP
#define RISCADE_NN_BATCH_HPP

#include <Eigen/Dense>
#include <vector>

namespace riscade {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Batch of channel-last feature maps, stored as one contiguous
// (n*h*w) x c row-major matrix. Row (b*h + y)*w + x holds the c channel
// values of pixel (y, x) of sample b, so a per-sample flat view in
// (h, w, c) row-major order is just a contiguous block, and per-channel
// statistics are column-wise reductions.
struct Batch3 {
  int n = 0, h = 0, w = 0, c = 0;
  RowMat m;

  void resize(int n_, int h_, int w_, int c_) {
    n = n_;
    h = h_;
    w = w_;
    c = c_;
    m.resize(static_cast<Eigen::Index>(n_) * h_ * w_, c_);
  }

  Eigen::Index pixels() const { return static_cast<Eigen::Index>(n) * h * w; }
  Eigen::Index sample_size() const { return static_cast<Eigen::Index>(h) * w * c; }

  // (n x h*w*c) view of the same storage.
  Eigen::Map<RowMat> flat() { return {m.data(), n, sample_size()}; }
  Eigen::Map<const RowMat> flat() const { return {m.data(), n, sample_size()}; }

  // Loads one sample from an (h, w, c) row-major buffer.
  void set_sample(int b, const std::vector<double>& tensor) {
    Eigen::Map<const RowMat> src(tensor.data(), static_cast<Eigen::Index>(h) * w, c);
    m.middleRows(static_cast<Eigen::Index>(b) * h * w, static_cast<Eigen::Index>(h) * w) = src;
  }

  // Gathers a subset of samples (by index) into a new batch.
  Batch3 gather(const std::vector<int>& indices) const {
    Batch3 out;
    out.resize(static_cast<int>(indices.size()), h, w, c);
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    for (std::size_t i = 0; i < indices.size(); ++i)
      out.m.middleRows(static_cast<Eigen::Index>(i) * hw, hw) =
          m.middleRows(static_cast<Eigen::Index>(indices[i]) * hw, hw);
    return out;
  }
};

}  // namespace riscade

#endif  // RISCADE_NN_BATCH_HPP
