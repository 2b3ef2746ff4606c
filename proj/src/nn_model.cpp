#include "riscade/nn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "riscade/rng.hpp"

namespace riscade {

namespace {

template <typename M, typename Fn>
void traverse(M& model, Fn&& fn) {
  auto conv = [&](auto& c) {
    fn(c.kernels, true);
    fn(c.bias, true);
  };
  auto bn = [&](auto& b) {
    fn(b.gamma, true);
    fn(b.beta, true);
    fn(b.running_mean, false);
    fn(b.running_var, false);
  };
  auto dense = [&](auto& d) {
    fn(d.weights, true);
    fn(d.bias, true);
  };
  conv(model.classifier.conv1);
  bn(model.classifier.bn1);
  conv(model.classifier.conv2);
  bn(model.classifier.bn2);
  dense(model.classifier.head);
  for (auto& e : model.experts) {
    for (int i = 0; i < 3; ++i) {
      conv(e.conv[i]);
      bn(e.bn[i]);
    }
  }
  conv(model.mapper.pointwise);
  dense(model.mapper.readout);
}

void glorot_fill(RowMat& w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
}

ModelParams make_shaped(const ModelShape& shape) {
  if (shape.q1 < 1 || shape.q2 < 1 || shape.regions < 1 || shape.d < 1 ||
      shape.expert_channels < 1 || shape.classifier_channels < 1)
    throw std::invalid_argument("ModelShape: all dimensions must be positive");
  ModelParams m;
  m.shape = shape;
  const int cc = shape.classifier_channels;
  const int ec = shape.expert_channels;
  m.classifier.conv1.init_shape(3, 2, cc);
  m.classifier.bn1.init_shape(cc);
  m.classifier.conv2.init_shape(3, cc, cc);
  m.classifier.bn2.init_shape(cc);
  m.classifier.head.init_shape(cc, shape.regions);
  m.experts.resize(shape.regions);
  for (auto& e : m.experts) {
    e.conv[0].init_shape(3, 2, ec);
    e.conv[1].init_shape(3, ec, ec);
    e.conv[2].init_shape(3, ec, ec);
    for (auto& b : e.bn) b.init_shape(ec);
  }
  m.mapper.pointwise.init_shape(1, ec, ec);
  m.mapper.readout.init_shape(shape.q1 * shape.q2 * ec, 2 * shape.d);
  return m;
}

Batch3 single_sample_batch(const std::vector<double>& tensor, int h, int w, int c) {
  if (tensor.size() != static_cast<std::size_t>(h) * w * c)
    throw std::invalid_argument("tensor size does not match the model shape");
  Batch3 b;
  b.resize(1, h, w, c);
  b.set_sample(0, tensor);
  return b;
}

}  // namespace

ModelParams init_model(const ModelShape& shape, std::uint64_t seed) {
  ModelParams m = make_shaped(shape);
  const Rng root(seed);
  int layer = 0;
  auto conv_init = [&](ConvLayer& c) {
    Rng rng = root.split(kTagModelInit, layer++);
    glorot_fill(c.kernels, c.k * c.k * c.cin, c.k * c.k * c.cout, rng);
  };
  auto dense_init = [&](DenseLayer& d) {
    Rng rng = root.split(kTagModelInit, layer++);
    glorot_fill(d.weights, static_cast<int>(d.weights.cols()), static_cast<int>(d.weights.rows()),
                rng);
  };
  conv_init(m.classifier.conv1);
  conv_init(m.classifier.conv2);
  dense_init(m.classifier.head);
  for (auto& e : m.experts)
    for (auto& c : e.conv) conv_init(c);
  conv_init(m.mapper.pointwise);
  dense_init(m.mapper.readout);
  return m;
}

ModelParams zero_model(const ModelShape& shape) {
  ModelParams m = make_shaped(shape);
  traverse(m, [](auto& arr, bool) { arr.setZero(); });
  return m;
}

void for_each_array(ModelParams& model, const std::function<void(ArrayRef)>& fn) {
  traverse(model, [&](auto& arr, bool trainable) {
    fn(ArrayRef{arr.data(), static_cast<std::size_t>(arr.size()), trainable});
  });
}

std::size_t count_trainable(const ModelParams& model) {
  std::size_t n = 0;
  traverse(const_cast<ModelParams&>(model), [&](auto& arr, bool trainable) {
    if (trainable) n += arr.size();
  });
  return n;
}

std::vector<double> flatten_trainable(const ModelParams& model) {
  std::vector<double> flat;
  flat.reserve(count_trainable(model));
  traverse(const_cast<ModelParams&>(model), [&](auto& arr, bool trainable) {
    if (trainable) flat.insert(flat.end(), arr.data(), arr.data() + arr.size());
  });
  return flat;
}

void assign_trainable(ModelParams& model, const std::vector<double>& flat) {
  std::size_t off = 0;
  traverse(model, [&](auto& arr, bool trainable) {
    if (!trainable) return;
    if (off + arr.size() > flat.size()) throw std::invalid_argument("assign_trainable: short vector");
    std::copy(flat.begin() + off, flat.begin() + off + arr.size(), arr.data());
    off += arr.size();
  });
  if (off != flat.size()) throw std::invalid_argument("assign_trainable: length mismatch");
}

std::vector<double> flatten_all(const ModelParams& model) {
  std::vector<double> flat;
  traverse(const_cast<ModelParams&>(model),
           [&](auto& arr, bool) { flat.insert(flat.end(), arr.data(), arr.data() + arr.size()); });
  return flat;
}

void assign_all(ModelParams& model, const std::vector<double>& flat) {
  std::size_t off = 0;
  traverse(model, [&](auto& arr, bool) {
    if (off + arr.size() > flat.size()) throw std::invalid_argument("assign_all: short vector");
    std::copy(flat.begin() + off, flat.begin() + off + arr.size(), arr.data());
    off += arr.size();
  });
  if (off != flat.size()) throw std::invalid_argument("assign_all: length mismatch");
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// caches

struct ClassifierCache {
  RowMat col1, col2;
  Batch3 z1, b1, a1, z2, b2, a2;
  BnCache bn1, bn2;
  RowMat gap, logits, probs;
  Mode mode = Mode::kEval;
};

struct ExpertCache {
  std::array<RowMat, 3> col;
  std::array<Batch3, 3> z, b, a;
  std::array<BnCache, 3> bn_cache;
  Mode mode = Mode::kEval;
};

struct MapperCache {
  RowMat col;
  Batch3 p;  // pointwise output
};

struct EstimatorCache {
  ClassifierCache cls;
  Gating gating = Gating::kHard;
  std::vector<std::vector<int>> routed;    // per expert, hard gating
  std::vector<ExpertCache> expert_caches;  // per expert
  std::vector<Batch3> expert_outputs;      // per expert, soft gating
  Batch3 features;
  MapperCache mapper;
};

// ---------------------------------------------------------------------------
// classifier

RowMat classifier_forward_batch(const ClassifierParams& params, const Batch3& in, Mode mode,
                                ClassifierCache* cache, Instrumentation* instr) {
  ClassifierCache local;
  ClassifierCache& c = cache != nullptr ? *cache : local;
  c.mode = mode;
  conv_forward(params.conv1, in, c.z1, &c.col1, instr);
  if (mode == Mode::kTrain)
    bn_forward_train(params.bn1, c.z1, c.b1, c.bn1);
  else
    bn_forward_eval(params.bn1, c.z1, c.b1);
  relu_forward(c.b1, c.a1);
  conv_forward(params.conv2, c.a1, c.z2, &c.col2, instr);
  if (mode == Mode::kTrain)
    bn_forward_train(params.bn2, c.z2, c.b2, c.bn2);
  else
    bn_forward_eval(params.bn2, c.z2, c.b2);
  relu_forward(c.b2, c.a2);
  gap_forward(c.a2, c.gap);
  dense_forward(params.head, c.gap, c.logits, instr);
  c.probs = softmax_rows(c.logits);
  return c.probs;
}

namespace {

// dlogits -> parameter gradients (classifier input gradient is not needed).
void classifier_backward(const ClassifierParams& params, const ClassifierCache& c,
                         const RowMat& dlogits, ClassifierParams& grad) {
  if (c.mode != Mode::kTrain)
    throw std::logic_error("classifier_backward: forward must have run in train mode");
  RowMat dgap;
  dense_backward(params.head, c.gap, dlogits, grad.head, &dgap);
  Batch3 da2;
  gap_backward(c.a2, dgap, da2);
  Batch3 db2;
  relu_backward(c.a2, da2, db2);
  Batch3 dz2;
  bn_backward(params.bn2, c.bn2, db2, grad.bn2, dz2);
  Batch3 da1;
  conv_backward(params.conv2, c.col2, c.a1, dz2, grad.conv2, &da1);
  Batch3 db1;
  relu_backward(c.a1, da1, db1);
  Batch3 dz1;
  bn_backward(params.bn1, c.bn1, db1, grad.bn1, dz1);
  conv_backward(params.conv1, c.col1, c.z1, dz1, grad.conv1, nullptr);
}

}  // namespace

GateOutput classifier_forward(const std::vector<double>& tensor, const ModelShape& shape,
                              const ClassifierParams& params, Mode mode) {
  const Batch3 in = single_sample_batch(tensor, shape.q1, shape.q2, 2);
  const RowMat probs = classifier_forward_batch(params, in, mode, nullptr, nullptr);
  GateOutput out;
  out.probabilities = probs.row(0).transpose();
  out.hard_choice = argmax_lowest(probs.row(0)) + 1;
  return out;
}

// ---------------------------------------------------------------------------
// expert

Batch3 expert_forward_batch(const ExpertParams& params, const Batch3& in, Mode mode,
                            ExpertCache* cache, Instrumentation* instr) {
  ExpertCache local;
  ExpertCache& c = cache != nullptr ? *cache : local;
  c.mode = mode;
  const Batch3* x = &in;
  for (int i = 0; i < 3; ++i) {
    conv_forward(params.conv[i], *x, c.z[i], &c.col[i], instr);
    if (mode == Mode::kTrain)
      bn_forward_train(params.bn[i], c.z[i], c.b[i], c.bn_cache[i]);
    else
      bn_forward_eval(params.bn[i], c.z[i], c.b[i]);
    relu_forward(c.b[i], c.a[i]);
    x = &c.a[i];
  }
  return c.a[2];
}

namespace {

// dout w.r.t. the expert output; din optional.
void expert_backward(const ExpertParams& params, const ExpertCache& c, const Batch3& dout,
                     ExpertParams& grad, Batch3* din) {
  if (c.mode != Mode::kTrain)
    throw std::logic_error("expert_backward: forward must have run in train mode");
  Batch3 da = dout;
  for (int i = 2; i >= 0; --i) {
    Batch3 db;
    relu_backward(c.a[i], da, db);
    Batch3 dz;
    bn_backward(params.bn[i], c.bn_cache[i], db, grad.bn[i], dz);
    if (i > 0) {
      conv_backward(params.conv[i], c.col[i], c.a[i - 1], dz, grad.conv[i], &da);
    } else {
      conv_backward(params.conv[0], c.col[0], c.z[0], dz, grad.conv[0], din);
    }
  }
}

}  // namespace

std::vector<double> expert_forward(const std::vector<double>& tensor, const ModelShape& shape,
                                   const ExpertParams& params, Mode mode) {
  const Batch3 in = single_sample_batch(tensor, shape.q1, shape.q2, 2);
  const Batch3 out = expert_forward_batch(params, in, mode, nullptr, nullptr);
  return {out.m.data(), out.m.data() + out.m.size()};
}

// ---------------------------------------------------------------------------
// mapper

RowMat mapper_forward_batch(const MapperParams& params, const Batch3& features, MapperCache* cache,
                            Instrumentation* instr) {
  MapperCache local;
  MapperCache& c = cache != nullptr ? *cache : local;
  conv_forward(params.pointwise, features, c.p, &c.col, instr);
  RowMat out;
  dense_forward(params.readout, c.p.flat(), out, instr);
  return out;
}

namespace {

void mapper_backward(const MapperParams& params, const MapperCache& c, const RowMat& dout,
                     MapperParams& grad, Batch3& dfeatures) {
  RowMat dflat;
  dense_backward(params.readout, c.p.flat(), dout, grad.readout, &dflat);
  Batch3 dp;
  dp.resize(c.p.n, c.p.h, c.p.w, c.p.c);
  dp.m = Eigen::Map<const RowMat>(dflat.data(), dp.pixels(), dp.c);
  conv_backward(params.pointwise, c.col, c.p, dp, grad.pointwise, &dfeatures);
}

}  // namespace

Eigen::VectorXcd unpack_complex(const Eigen::Ref<const Eigen::RowVectorXd>& packed) {
  const Eigen::Index d = packed.size() / 2;
  Eigen::VectorXcd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = {packed[i], packed[d + i]};
  return v;
}

Eigen::RowVectorXd pack_complex(const Eigen::VectorXcd& v) {
  Eigen::RowVectorXd packed(2 * v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    packed[i] = v[i].real();
    packed[v.size() + i] = v[i].imag();
  }
  return packed;
}

Eigen::VectorXcd mapper_forward(const std::vector<double>& features, const ModelShape& shape,
                                const MapperParams& params) {
  Batch3 in = single_sample_batch(features, shape.q1, shape.q2, shape.expert_channels);
  const RowMat out = mapper_forward_batch(params, in, nullptr, nullptr);
  return unpack_complex(out.row(0));
}

// ---------------------------------------------------------------------------
// estimator

EstimatorBatchResult estimator_forward_batch(const ModelParams& model, const Batch3& in,
                                             Gating gating, Mode expert_mode, Mode classifier_mode,
                                             EstimatorCache* cache, Instrumentation* instr) {
  EstimatorCache local;
  EstimatorCache& c = cache != nullptr ? *cache : local;
  c.gating = gating;
  const int r = model.shape.regions;
  if (instr != nullptr && instr->expert_invocations.size() != static_cast<std::size_t>(r))
    instr->expert_invocations.assign(r, 0);

  EstimatorBatchResult res;
  res.gate_probs = classifier_forward_batch(model.classifier, in, classifier_mode, &c.cls, instr);
  res.hard_choice.resize(in.n);
  for (int i = 0; i < in.n; ++i) res.hard_choice[i] = argmax_lowest(res.gate_probs.row(i)) + 1;

  c.expert_caches.assign(r, ExpertCache{});
  c.features.resize(in.n, in.h, in.w, model.shape.expert_channels);
  const Eigen::Index hw = static_cast<Eigen::Index>(in.h) * in.w;

  if (gating == Gating::kHard) {
    c.routed.assign(r, {});
    for (int i = 0; i < in.n; ++i) c.routed[res.hard_choice[i] - 1].push_back(i);
    for (int e = 0; e < r; ++e) {
      if (c.routed[e].empty()) continue;
      const Batch3 sub = in.gather(c.routed[e]);
      const Batch3 out = expert_forward_batch(model.experts[e], sub, expert_mode,
                                              &c.expert_caches[e], instr);
      if (instr != nullptr) ++instr->expert_invocations[e];
      for (std::size_t j = 0; j < c.routed[e].size(); ++j)
        c.features.m.middleRows(static_cast<Eigen::Index>(c.routed[e][j]) * hw, hw) =
            out.m.middleRows(static_cast<Eigen::Index>(j) * hw, hw);
    }
  } else {
    c.expert_outputs.assign(r, Batch3{});
    c.features.m.setZero();
    for (int e = 0; e < r; ++e) {
      c.expert_outputs[e] =
          expert_forward_batch(model.experts[e], in, expert_mode, &c.expert_caches[e], instr);
      if (instr != nullptr) ++instr->expert_invocations[e];
      for (int i = 0; i < in.n; ++i)
        c.features.m.middleRows(static_cast<Eigen::Index>(i) * hw, hw) +=
            res.gate_probs(i, e) *
            c.expert_outputs[e].m.middleRows(static_cast<Eigen::Index>(i) * hw, hw);
    }
  }

  res.outputs = mapper_forward_batch(model.mapper, c.features, &c.mapper, instr);
  return res;
}

std::pair<Eigen::VectorXcd, GateOutput> estimator_forward(const std::vector<double>& tensor,
                                                          const ModelParams& model, Gating gating,
                                                          Mode mode) {
  const Batch3 in = single_sample_batch(tensor, model.shape.q1, model.shape.q2, 2);
  const EstimatorBatchResult res =
      estimator_forward_batch(model, in, gating, mode, mode, nullptr, nullptr);
  GateOutput gate;
  gate.probabilities = res.gate_probs.row(0).transpose();
  gate.hard_choice = res.hard_choice[0];
  return {unpack_complex(res.outputs.row(0)), gate};
}

// ---------------------------------------------------------------------------
// losses

double estimation_loss(const RowMat& outputs, const RowMat& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw std::invalid_argument("estimation_loss: shape mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    const double denom = targets.row(i).squaredNorm();
    if (!(denom > 0.0)) throw std::invalid_argument("estimation_loss: zero target");
    acc += (outputs.row(i) - targets.row(i)).squaredNorm() / denom;
  }
  return acc / static_cast<double>(outputs.rows());
}

RowMat estimation_loss_grad(const RowMat& outputs, const RowMat& targets) {
  RowMat g(outputs.rows(), outputs.cols());
  const double inv_b = 1.0 / static_cast<double>(outputs.rows());
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    const double denom = targets.row(i).squaredNorm();
    g.row(i) = 2.0 * inv_b / denom * (outputs.row(i) - targets.row(i));
  }
  return g;
}

double classification_loss(const RowMat& probs, const std::vector<int>& labels) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("classification_loss: label count mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int lbl = labels[i] - 1;
    if (lbl < 0 || lbl >= probs.cols()) throw std::invalid_argument("classification_loss: bad label");
    acc -= std::log(std::max(probs(i, lbl), 1e-12));
  }
  return acc / static_cast<double>(probs.rows());
}

// ---------------------------------------------------------------------------
// backward entry points

namespace {

void collect_bn_stats(const ModelParams& model, const EstimatorCache* est,
                      const ClassifierCache* cls, BnStats& stats) {
  const int r = model.shape.regions;
  stats.entries.assign(2 + 3 * static_cast<std::size_t>(r), BnStatEntry{});
  auto put = [&](std::size_t slot, const BnCache& cache) {
    if (cache.count <= 0) return;
    stats.entries[slot].mean = cache.batch_mean;
    stats.entries[slot].var = cache.batch_var;
    stats.entries[slot].weight = cache.count;
  };
  const ClassifierCache* cc = cls != nullptr ? cls : (est != nullptr ? &est->cls : nullptr);
  if (cc != nullptr && cc->mode == Mode::kTrain) {
    put(0, cc->bn1);
    put(1, cc->bn2);
  }
  if (est != nullptr) {
    for (int e = 0; e < r; ++e) {
      const ExpertCache& ec = est->expert_caches[e];
      if (ec.mode != Mode::kTrain) continue;
      for (int i = 0; i < 3; ++i) put(2 + 3 * static_cast<std::size_t>(e) + i, ec.bn_cache[i]);
    }
  }
}

}  // namespace

void apply_bn_stats(ModelParams& model, const BnStats& stats) {
  const int r = model.shape.regions;
  if (stats.entries.size() != 2 + 3 * static_cast<std::size_t>(r))
    throw std::invalid_argument("apply_bn_stats: entry count mismatch");
  auto upd = [&](BnLayer& layer, const BnStatEntry& e) {
    if (e.weight <= 0) return;
    bn_update_running(layer, e.mean, e.var);
  };
  upd(model.classifier.bn1, stats.entries[0]);
  upd(model.classifier.bn2, stats.entries[1]);
  for (int e = 0; e < r; ++e)
    for (int i = 0; i < 3; ++i)
      upd(model.experts[e].bn[i], stats.entries[2 + 3 * static_cast<std::size_t>(e) + i]);
}

BnStats merge_bn_stats(const std::vector<BnStats>& parts, const std::vector<double>& weights) {
  if (parts.empty() || parts.size() != weights.size())
    throw std::invalid_argument("merge_bn_stats: empty or mismatched inputs");
  BnStats out;
  out.entries.assign(parts.front().entries.size(), BnStatEntry{});
  for (std::size_t slot = 0; slot < out.entries.size(); ++slot) {
    double total = 0.0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const BnStatEntry& e = parts[p].entries[slot];
      if (e.weight <= 0) continue;
      const double w = weights[p] * e.weight;
      if (total == 0.0) {
        out.entries[slot].mean = w * e.mean;
        out.entries[slot].var = w * e.var;
      } else {
        out.entries[slot].mean += w * e.mean;
        out.entries[slot].var += w * e.var;
      }
      total += w;
    }
    if (total > 0.0) {
      out.entries[slot].mean /= total;
      out.entries[slot].var /= total;
      out.entries[slot].weight = total;
    }
  }
  return out;
}

double estimation_loss_gradients(const ModelParams& model, const Batch3& in, const RowMat& targets,
                                 Gating gating, Mode classifier_mode, ModelParams& grads,
                                 BnStats* stats, double* out_gate_accuracy,
                                 const std::vector<int>* labels) {
  EstimatorCache cache;
  const EstimatorBatchResult res =
      estimator_forward_batch(model, in, gating, Mode::kTrain, classifier_mode, &cache, nullptr);
  const double loss = estimation_loss(res.outputs, targets);
  const RowMat dout = estimation_loss_grad(res.outputs, targets);

  Batch3 dfeatures;
  mapper_backward(model.mapper, cache.mapper, dout, grads.mapper, dfeatures);

  const int r = model.shape.regions;
  const Eigen::Index hw = static_cast<Eigen::Index>(in.h) * in.w;

  if (gating == Gating::kHard) {
    for (int e = 0; e < r; ++e) {
      if (cache.routed[e].empty()) continue;
      Batch3 dsub;
      dsub.resize(static_cast<int>(cache.routed[e].size()), in.h, in.w,
                  model.shape.expert_channels);
      for (std::size_t j = 0; j < cache.routed[e].size(); ++j)
        dsub.m.middleRows(static_cast<Eigen::Index>(j) * hw, hw) =
            dfeatures.m.middleRows(static_cast<Eigen::Index>(cache.routed[e][j]) * hw, hw);
      expert_backward(model.experts[e], cache.expert_caches[e], dsub, grads.experts[e], nullptr);
    }
    // Routing by argmax is locally constant: no classifier gradient.
  } else {
    RowMat dprobs = RowMat::Zero(in.n, r);
    for (int e = 0; e < r; ++e) {
      Batch3 dexp;
      dexp.resize(in.n, in.h, in.w, model.shape.expert_channels);
      for (int i = 0; i < in.n; ++i) {
        const auto df = dfeatures.m.middleRows(static_cast<Eigen::Index>(i) * hw, hw);
        const auto eo = cache.expert_outputs[e].m.middleRows(static_cast<Eigen::Index>(i) * hw, hw);
        dexp.m.middleRows(static_cast<Eigen::Index>(i) * hw, hw) = res.gate_probs(i, e) * df;
        dprobs(i, e) = (df.array() * eo.array()).sum();
      }
      expert_backward(model.experts[e], cache.expert_caches[e], dexp, grads.experts[e], nullptr);
    }
    if (classifier_mode == Mode::kTrain) {
      const RowMat dlogits = softmax_backward_rows(res.gate_probs, dprobs);
      classifier_backward(model.classifier, cache.cls, dlogits, grads.classifier);
    }
  }

  if (stats != nullptr) collect_bn_stats(model, &cache, nullptr, *stats);
  if (out_gate_accuracy != nullptr && labels != nullptr) {
    int correct = 0;
    for (int i = 0; i < in.n; ++i)
      if (res.hard_choice[i] == (*labels)[i]) ++correct;
    *out_gate_accuracy = static_cast<double>(correct) / in.n;
  }
  return loss;
}

double classification_loss_gradients(const ModelParams& model, const Batch3& in,
                                     const std::vector<int>& labels, ModelParams& grads,
                                     BnStats* stats) {
  ClassifierCache cache;
  const RowMat probs =
      classifier_forward_batch(model.classifier, in, Mode::kTrain, &cache, nullptr);
  const double loss = classification_loss(probs, labels);

  RowMat dlogits = RowMat::Zero(probs.rows(), probs.cols());
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int lbl = labels[i] - 1;
    if (probs(i, lbl) < 1e-12) continue;  // clamped: locally constant
    dlogits.row(i) = probs.row(i) * inv_b;
    dlogits(i, lbl) -= inv_b;
  }
  classifier_backward(model.classifier, cache, dlogits, grads.classifier);
  if (stats != nullptr) collect_bn_stats(model, nullptr, &cache, *stats);
  return loss;
}

// ---------------------------------------------------------------------------
// complexity

MacBreakdown mac_count(const ModelShape& shape) {
  const unsigned long long px = static_cast<unsigned long long>(shape.q1) * shape.q2;
  const unsigned long long cc = shape.classifier_channels;
  const unsigned long long ec = shape.expert_channels;
  MacBreakdown b;
  b.classifier_conv = px * 9ULL * (2 * cc + cc * cc);
  b.classifier_dense = cc * static_cast<unsigned long long>(shape.regions);
  b.expert_conv = px * 9ULL * (2 * ec + ec * ec + ec * ec);
  b.mapper_pointwise = px * ec * ec;
  b.mapper_dense = px * ec * 2ULL * shape.d;
  b.total =
      b.classifier_conv + b.classifier_dense + b.expert_conv + b.mapper_pointwise + b.mapper_dense;
  return b;
}

}  // namespace riscade
