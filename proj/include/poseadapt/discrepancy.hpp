// All loss functions: heatmap MSE, OKS similarity/loss, per-keypoint MMD,
// the three relation terms and their aggregation/segregation composition,
// and the ground-false maximization target. Every differentiable quantity
// comes with an explicit gradient routine (accumulating, scaled).
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "poseadapt/codec.hpp"
#include "poseadapt/common.hpp"
#include "poseadapt/tensor.hpp"

namespace poseadapt {

// ---------------------------------------------------------------------------
// Configuration records
// ---------------------------------------------------------------------------

struct KernelConfig {
  int kernel_count = 5;                // Gaussians per evaluation
  real bandwidth_multiplier = 2.0;     // geometric spacing between bandwidths
  bool median_bandwidth = true;        // median-heuristic base bandwidth
  real fixed_base_bandwidth = 1.0;     // used when median_bandwidth is false
  bool unbiased = false;               // estimator choice (biased by default)
};

struct OksConfig {
  std::vector<real> falloff;       // per-keypoint k_i; empty -> default_falloff
  real default_falloff = 0.1;
  real area = 256.0;               // the scale s (heatmap cell count)
  bool squared_distance = false;   // printed form uses plain Euclidean distance

  real falloff_for(int k) const {
    return size_t(k) < falloff.size() ? falloff[size_t(k)] : default_falloff;
  }
};

enum class DlVariant { mmd, mse, kl };

struct RelationMask {
  bool r1 = true, r2 = true, r3 = true;
  bool any() const { return r1 || r2 || r3; }
};

struct DiscrepancyConfig {
  KernelConfig kernel;
  DlVariant variant = DlVariant::mmd;
  RelationMask mask;
  bool use_inter = true;       // aggregation component on/off
  bool use_spec = true;        // segregation component on/off
  bool symmetrize_r2 = false;  // also average intra-hypothesis pairs of side b
};

// The r1/r2/r3 relation terms of the aggregation component, the two
// component totals, and their difference. The identities
// inter = r1 + r2 - r3 and dl = inter - spec hold by construction
// (same arithmetic, bit for bit).
struct DiscrepancyReport {
  real r1 = 0, r2 = 0, r3 = 0;
  real inter = 0, spec = 0, dl = 0;
};

// ---------------------------------------------------------------------------
// mse_heatmap: mean squared difference over every element.
// ---------------------------------------------------------------------------
inline real mse_heatmap(const Tensor& a, const Tensor& b) {
  POSEADAPT_CHECK(a.same_shape(b), "mse_heatmap: shape mismatch");
  POSEADAPT_CHECK(a.numel() > 0, "mse_heatmap: empty input");
  real s = 0;
  const real* pa = a.data();
  const real* pb = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const real d = pa[i] - pb[i];
    s += d * d;
  }
  return s / real(a.numel());
}

// Accumulates lambda * d(mse)/d{a,b} into the provided gradients.
inline real mse_heatmap_grad(const Tensor& a, const Tensor& b, real lambda,
                             Tensor* ga, Tensor* gb) {
  POSEADAPT_CHECK(a.same_shape(b), "mse_heatmap_grad: shape mismatch");
  POSEADAPT_CHECK(a.numel() > 0, "mse_heatmap_grad: empty input");
  const real scale = 2 * lambda / real(a.numel());
  real s = 0;
  const real* pa = a.data();
  const real* pb = b.data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const real d = pa[i] - pb[i];
    s += d * d;
    if (ga) (*ga)[i] += scale * d;
    if (gb) (*gb)[i] -= scale * d;
  }
  return s / real(a.numel());
}

// ---------------------------------------------------------------------------
// OKS: sum over mutually visible joints of exp(-dist / (2 * s * k_i)).
// The printed form uses the plain Euclidean distance; squared_distance
// switches to the conventional squared form.
// ---------------------------------------------------------------------------
inline real oks_similarity(const KeypointSet& pred, const KeypointSet& target,
                           const OksConfig& cfg) {
  POSEADAPT_CHECK(pred.joint_count() == target.joint_count(),
                  "oks_similarity: joint count mismatch");
  POSEADAPT_CHECK(cfg.area > 0, "oks_similarity: area must be positive");
  int visible = 0;
  real sim = 0;
  for (int k = 0; k < pred.joint_count(); ++k) {
    if (!pred.visibility[size_t(k)] || !target.visibility[size_t(k)]) continue;
    ++visible;
    const real dx = pred.coords[size_t(k)].first - target.coords[size_t(k)].first;
    const real dy = pred.coords[size_t(k)].second - target.coords[size_t(k)].second;
    const real d2 = dx * dx + dy * dy;
    const real dist = cfg.squared_distance ? d2 : std::sqrt(d2);
    sim += std::exp(-dist / (2 * cfg.area * cfg.falloff_for(k)));
  }
  POSEADAPT_CHECK(visible > 0, "oks_similarity: no mutually visible joints");
  return sim;
}

inline real oks_loss(const KeypointSet& pred, const KeypointSet& target,
                     const OksConfig& cfg) {
  int visible = 0;
  for (int k = 0; k < pred.joint_count(); ++k)
    if (pred.visibility[size_t(k)] && target.visibility[size_t(k)]) ++visible;
  POSEADAPT_CHECK(visible > 0, "oks_loss: no mutually visible joints");
  return 1 - oks_similarity(pred, target, cfg) / real(visible);
}

// Batched differentiable OKS loss over (B, K, 2) coordinate tensors with a
// (B, K) visibility mask (empty mask = all visible). Returns the batch-mean
// loss and accumulates lambda * gradient into dpred / dtarget.
inline real oks_loss_batch_grad(const Tensor& pred, const Tensor& target,
                                const Tensor& vis, const OksConfig& cfg,
                                real lambda, Tensor* dpred, Tensor* dtarget) {
  POSEADAPT_CHECK(pred.same_shape(target), "oks batch: shape mismatch");
  POSEADAPT_CHECK(pred.rank() == 3 && pred.dim(2) == 2,
                  "oks batch: expect (B, K, 2)");
  const int B = pred.dim(0), K = pred.dim(1);
  const bool masked = !vis.empty();
  if (masked)
    POSEADAPT_CHECK(vis.dim(0) == B && vis.dim(1) == K,
                    "oks batch: visibility shape mismatch");
  real total = 0;
  for (int b = 0; b < B; ++b) {
    int visible = 0;
    for (int k = 0; k < K; ++k)
      if (!masked || vis.at(b, k) != 0) ++visible;
    POSEADAPT_CHECK(visible > 0, "oks batch: sample with no visible joints");
    real sim = 0;
    for (int k = 0; k < K; ++k) {
      if (masked && vis.at(b, k) == 0) continue;
      const real dx = pred.at(b, k, 0) - target.at(b, k, 0);
      const real dy = pred.at(b, k, 1) - target.at(b, k, 1);
      const real d2 = dx * dx + dy * dy;
      const real denom = 2 * cfg.area * cfg.falloff_for(k);
      const real dist = cfg.squared_distance ? d2 : std::sqrt(d2);
      const real e = std::exp(-dist / denom);
      sim += e;
      if (dpred || dtarget) {
        // d(loss)/d(pred) = -(1/(B*visible)) * d(sim)/d(pred).
        real gx = 0, gy = 0;
        if (cfg.squared_distance) {
          gx = e * (-2 * dx / denom);
          gy = e * (-2 * dy / denom);
        } else if (d2 > 1e-24) {
          const real d = std::sqrt(d2);
          gx = e * (-dx / (d * denom));
          gy = e * (-dy / (d * denom));
        }  // at the cusp (pred == target) the similarity is maximal: grad 0
        const real w = -lambda / (real(B) * real(visible));
        if (dpred) {
          dpred->at(b, k, 0) += w * gx;
          dpred->at(b, k, 1) += w * gy;
        }
        if (dtarget) {
          dtarget->at(b, k, 0) -= w * gx;
          dtarget->at(b, k, 1) -= w * gy;
        }
      }
    }
    total += 1 - sim / real(visible);
  }
  return total / real(B);
}

// ---------------------------------------------------------------------------
// Multi-kernel Gaussian MMD^2 between two sample sets (rows = samples).
// Kernels are exp(-d^2 / (2 * bw_j)) with bw_j = base * multiplier^e_j and
// exponents e_j centered on zero. The median-heuristic base bandwidth is the
// median pairwise squared distance of the pooled samples and is treated as a
// constant (no gradient), falling back to 1.0 when degenerate.
// ---------------------------------------------------------------------------
namespace detail {

inline std::vector<real> kernel_bandwidths(const KernelConfig& cfg, real base) {
  POSEADAPT_CHECK(cfg.kernel_count >= 1, "kernel_count must be >= 1");
  POSEADAPT_CHECK(cfg.kernel_count == 1 || cfg.bandwidth_multiplier > 1,
                  "bandwidth_multiplier must exceed 1 for multiple kernels");
  std::vector<real> bw(size_t(cfg.kernel_count));
  const real center = real(cfg.kernel_count - 1) / 2;
  for (int j = 0; j < cfg.kernel_count; ++j)
    bw[size_t(j)] = base * std::pow(cfg.bandwidth_multiplier, real(j) - center);
  return bw;
}

// Squared-distance blocks between row sets.
inline MatrixRM pairwise_sq_dists(const MatrixRM& x, const MatrixRM& y) {
  Eigen::VectorXd nx = x.rowwise().squaredNorm();
  Eigen::VectorXd ny = y.rowwise().squaredNorm();
  MatrixRM d2 = (-2.0 * (x * y.transpose()));
  d2.colwise() += nx;
  d2.rowwise() += ny.transpose();
  return d2.cwiseMax(0.0);
}

// Median of the pooled pairwise squared distances (distinct unordered pairs
// within and across the two sets). Returns the upper-middle order statistic.
inline real median_base_bandwidth(const MatrixRM& daa, const MatrixRM& dbb,
                                  const MatrixRM& dab) {
  std::vector<real> pool;
  pool.reserve(size_t(daa.rows()) * size_t(daa.rows()) / 2 +
               size_t(dbb.rows()) * size_t(dbb.rows()) / 2 +
               size_t(dab.size()));
  for (int i = 0; i < daa.rows(); ++i)
    for (int j = i + 1; j < daa.cols(); ++j) pool.push_back(daa(i, j));
  for (int i = 0; i < dbb.rows(); ++i)
    for (int j = i + 1; j < dbb.cols(); ++j) pool.push_back(dbb(i, j));
  for (int i = 0; i < dab.rows(); ++i)
    for (int j = 0; j < dab.cols(); ++j) pool.push_back(dab(i, j));
  if (pool.empty()) return 1.0;
  auto mid = pool.begin() + std::ptrdiff_t(pool.size() / 2);
  std::nth_element(pool.begin(), mid, pool.end());
  const real med = *mid;
  if (!(med > 0) || !std::isfinite(med)) return 1.0;  // degenerate pool
  return med;
}

// Averaged kernel matrix K and, when needed, the coefficient matrix
// C(i,j) = (1/J) sum_j kappa_j(d2) / bw_j that drives the gradients.
inline void kernel_sums(const MatrixRM& d2, const std::vector<real>& bw,
                        MatrixRM* kavg, MatrixRM* coeff) {
  const real inv_j = real(1) / real(bw.size());
  *kavg = MatrixRM::Zero(d2.rows(), d2.cols());
  if (coeff) *coeff = MatrixRM::Zero(d2.rows(), d2.cols());
  for (real b : bw) {
    MatrixRM k = (-d2 / (2 * b)).array().exp();
    *kavg += inv_j * k;
    if (coeff) *coeff += (inv_j / b) * k;
  }
}

}  // namespace detail

// Value plus optional scaled gradient accumulation (lambda * d(mmd)/d{a,b}).
inline real mmd_keypoint_grad(const MatrixRM& a, const MatrixRM& b,
                              const KernelConfig& cfg, real lambda,
                              MatrixRM* ga, MatrixRM* gb) {
  POSEADAPT_CHECK(a.rows() > 0 && b.rows() > 0, "mmd: empty batch");
  POSEADAPT_CHECK(a.cols() == b.cols(), "mmd: feature dimension mismatch");
  const int na = int(a.rows()), nb = int(b.rows());
  if (cfg.unbiased)
    POSEADAPT_CHECK(na >= 2 && nb >= 2,
                    "mmd: unbiased estimator needs batch size >= 2");

  MatrixRM daa = detail::pairwise_sq_dists(a, a);
  MatrixRM dbb = detail::pairwise_sq_dists(b, b);
  MatrixRM dab = detail::pairwise_sq_dists(a, b);

  const real base = cfg.median_bandwidth
                        ? detail::median_base_bandwidth(daa, dbb, dab)
                        : cfg.fixed_base_bandwidth;
  POSEADAPT_CHECK(base > 0, "mmd: base bandwidth must be positive");
  const std::vector<real> bw = detail::kernel_bandwidths(cfg, base);

  const bool want_grad = (ga != nullptr || gb != nullptr) && lambda != 0;
  MatrixRM kaa, kbb, kab, caa, cbb, cab;
  detail::kernel_sums(daa, bw, &kaa, want_grad ? &caa : nullptr);
  detail::kernel_sums(dbb, bw, &kbb, want_grad ? &cbb : nullptr);
  detail::kernel_sums(dab, bw, &kab, want_grad ? &cab : nullptr);

  real value = 0;
  if (cfg.unbiased) {
    const real saa = kaa.sum() - kaa.trace();
    const real sbb = kbb.sum() - kbb.trace();
    value = saa / (real(na) * real(na - 1)) + sbb / (real(nb) * real(nb - 1)) -
            2 * kab.sum() / (real(na) * real(nb));
  } else {
    value = kaa.sum() / (real(na) * real(na)) +
            kbb.sum() / (real(nb) * real(nb)) -
            2 * kab.sum() / (real(na) * real(nb));
  }

  if (want_grad) {
    // d kappa(x, y)/dx = -coeff * (x - y); the within-set diagonal contributes
    // zero (x - x), so the biased/unbiased distinction only changes weights.
    const real waa = cfg.unbiased ? real(1) / (real(na) * real(na - 1))
                                  : real(1) / (real(na) * real(na));
    const real wbb = cfg.unbiased ? real(1) / (real(nb) * real(nb - 1))
                                  : real(1) / (real(nb) * real(nb));
    const real wab = real(2) / (real(na) * real(nb));
    if (ga) {
      // within-a: -2 [diag(rowsum(Caa)) A - Caa A]; cross: +wab [...] with
      // sign flipped by the leading -2/(na nb) of the cross term.
      Eigen::VectorXd ra = caa.rowwise().sum();
      ga->noalias() += lambda * (-2 * waa) * (ra.asDiagonal() * a - caa * a);
      Eigen::VectorXd rc = cab.rowwise().sum();
      ga->noalias() += lambda * wab * (rc.asDiagonal() * a - cab * b);
    }
    if (gb) {
      Eigen::VectorXd rb = cbb.rowwise().sum();
      gb->noalias() += lambda * (-2 * wbb) * (rb.asDiagonal() * b - cbb * b);
      Eigen::VectorXd cc = cab.colwise().sum();
      gb->noalias() += lambda * wab * (cc.asDiagonal() * b - cab.transpose() * a);
    }
  }
  return value;
}

inline real mmd_keypoint(const MatrixRM& a, const MatrixRM& b,
                         const KernelConfig& cfg) {
  return mmd_keypoint_grad(a, b, cfg, 0, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// Pair measures over batch tensors (B, K, H, W): the relation terms choose
// channel pairs; the measure between two channels is MMD on raw flattened
// channels, or MSE / KL on spatially softmax-normalized channels.
// ---------------------------------------------------------------------------
namespace detail {

// Copy channel m of a (B, K, H, W) tensor into a (B, H*W) matrix.
inline MatrixRM channel_matrix(const Tensor& t, int m) {
  const int B = t.dim(0), K = t.dim(1);
  const int D = t.dim(2) * t.dim(3);
  MatrixRM out(B, D);
  for (int b = 0; b < B; ++b)
    std::copy(t.data() + (std::size_t(b) * K + std::size_t(m)) * D,
              t.data() + (std::size_t(b) * K + std::size_t(m) + 1) * D,
              out.row(b).data());
  return out;
}

inline void accumulate_channel(Tensor* g, int m, const MatrixRM& grad) {
  if (!g) return;
  const int B = g->dim(0), K = g->dim(1);
  const int D = g->dim(2) * g->dim(3);
  for (int b = 0; b < B; ++b) {
    real* dst = g->data() + (std::size_t(b) * K + std::size_t(m)) * D;
    const real* src = grad.row(b).data();
    for (int i = 0; i < D; ++i) dst[i] += src[i];
  }
}

// Row-wise spatial softmax with cached log-probabilities.
struct SoftmaxedChannels {
  std::vector<MatrixRM> probs;      // per channel: (B, D)
  std::vector<MatrixRM> log_probs;  // per channel: (B, D)
};

inline SoftmaxedChannels softmax_channels(const Tensor& t) {
  const int K = t.dim(1);
  SoftmaxedChannels out;
  out.probs.reserve(size_t(K));
  out.log_probs.reserve(size_t(K));
  for (int m = 0; m < K; ++m) {
    MatrixRM x = channel_matrix(t, m);
    MatrixRM lp(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
      const real mx = x.row(r).maxCoeff();
      real z = 0;
      for (int c = 0; c < x.cols(); ++c) z += std::exp(x(r, c) - mx);
      const real lz = std::log(z) + mx;
      for (int c = 0; c < x.cols(); ++c) lp(r, c) = x(r, c) - lz;
    }
    out.log_probs.push_back(lp);
    out.probs.push_back(lp.array().exp().matrix());
  }
  return out;
}

// Pull a per-probability gradient back through the row-wise softmax:
// d/dx_j = p_j * (g_j - sum_i p_i g_i).
inline MatrixRM softmax_backward(const MatrixRM& probs, const MatrixRM& gp) {
  MatrixRM gx(probs.rows(), probs.cols());
  for (int r = 0; r < probs.rows(); ++r) {
    const real dot = probs.row(r).dot(gp.row(r));
    gx.row(r) = probs.row(r).cwiseProduct(
        (gp.row(r).array() - dot).matrix());
  }
  return gx;
}

// Evaluates the configured base measure between channel m of side sa and
// channel n of side sb, accumulating lambda-scaled gradients into the raw
// tensors' gradient buffers. Sides: 0 = first tensor, 1 = second tensor.
class PairMeasure {
 public:
  PairMeasure(const Tensor& a, const Tensor& b, const DiscrepancyConfig& cfg)
      : a_(a), b_(b), cfg_(cfg) {
    POSEADAPT_CHECK(a.rank() == 4 && b.rank() == 4,
                    "discrepancy: expect (B, K, H, W) tensors");
    POSEADAPT_CHECK(a.same_shape(b), "discrepancy: branch shape mismatch");
    if (cfg.variant != DlVariant::mmd) {
      soft_a_ = softmax_channels(a);
      soft_b_ = softmax_channels(b);
    }
  }

  int channels() const { return a_.dim(1); }

  real eval(int sa, int m, int sb, int n, real lambda, Tensor* ga, Tensor* gb) {
    switch (cfg_.variant) {
      case DlVariant::mmd: return eval_mmd(sa, m, sb, n, lambda, ga, gb);
      case DlVariant::mse: return eval_mse(sa, m, sb, n, lambda, ga, gb);
      case DlVariant::kl: return eval_kl(sa, m, sb, n, lambda, ga, gb);
    }
    throw Error("dl_loss: unknown variant");
  }

 private:
  const Tensor& side(int s) const { return s == 0 ? a_ : b_; }
  Tensor* grad_side(int s, Tensor* ga, Tensor* gb) const {
    return s == 0 ? ga : gb;
  }
  const SoftmaxedChannels& soft(int s) const {
    return s == 0 ? soft_a_ : soft_b_;
  }

  real eval_mmd(int sa, int m, int sb, int n, real lambda, Tensor* ga,
                Tensor* gb) {
    MatrixRM x = channel_matrix(side(sa), m);
    MatrixRM y = channel_matrix(side(sb), n);
    Tensor* gx_t = grad_side(sa, ga, gb);
    Tensor* gy_t = grad_side(sb, ga, gb);
    if (lambda == 0 || (!gx_t && !gy_t))
      return mmd_keypoint(x, y, cfg_.kernel);
    MatrixRM gx = MatrixRM::Zero(x.rows(), x.cols());
    MatrixRM gy = MatrixRM::Zero(y.rows(), y.cols());
    const real v = mmd_keypoint_grad(x, y, cfg_.kernel, lambda, &gx, &gy);
    accumulate_channel(gx_t, m, gx);
    accumulate_channel(gy_t, n, gy);
    return v;
  }

  real eval_mse(int sa, int m, int sb, int n, real lambda, Tensor* ga,
                Tensor* gb) {
    const MatrixRM& p = soft(sa).probs[size_t(m)];
    const MatrixRM& q = soft(sb).probs[size_t(n)];
    const real inv_bd = real(1) / real(p.size());
    const MatrixRM diff = p - q;
    const real v = diff.squaredNorm() * inv_bd;
    Tensor* gx_t = grad_side(sa, ga, gb);
    Tensor* gy_t = grad_side(sb, ga, gb);
    if (lambda != 0 && (gx_t || gy_t)) {
      const MatrixRM gp = (2 * inv_bd * lambda) * diff;
      if (gx_t) accumulate_channel(gx_t, m, softmax_backward(p, gp));
      if (gy_t) accumulate_channel(gy_t, n, softmax_backward(q, -gp));
    }
    return v;
  }

  real eval_kl(int sa, int m, int sb, int n, real lambda, Tensor* ga,
               Tensor* gb) {
    const MatrixRM& p = soft(sa).probs[size_t(m)];
    const MatrixRM& lp = soft(sa).log_probs[size_t(m)];
    const MatrixRM& q = soft(sb).probs[size_t(n)];
    const MatrixRM& lq = soft(sb).log_probs[size_t(n)];
    const real inv_b = real(1) / real(p.rows());
    const MatrixRM ell = lp - lq;
    const real v = p.cwiseProduct(ell).sum() * inv_b;
    Tensor* gx_t = grad_side(sa, ga, gb);
    Tensor* gy_t = grad_side(sb, ga, gb);
    if (lambda != 0 && (gx_t || gy_t)) {
      if (gx_t) {
        // d/d a = p ∘ (ell - sum(p ∘ ell)) per row, scaled by 1/B.
        accumulate_channel(gx_t, m,
                           (lambda * inv_b) * softmax_backward(p, ell));
      }
      if (gy_t) {
        // d/d(log q) = -p, pulled through softmax: q - p per row.
        accumulate_channel(gy_t, n, (lambda * inv_b) * (q - p));
      }
    }
    return v;
  }

  const Tensor& a_;
  const Tensor& b_;
  DiscrepancyConfig cfg_;
  SoftmaxedChannels soft_a_, soft_b_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Relation terms. With measure D over channel pairs (sides a, b):
//   r1 = (1/K)        sum_m            D(a_m, b_m)
//   r2 = (1/(K(K-1))) sum_{m != n}     D(a_m, a_n)      (ordered pairs)
//   r3 = (1/(K(K-1))) sum_{m != n}     D(a_m, b_n)      (ordered pairs)
// The composed discrepancy is r1 + r2 - r3; `lambda` scales the gradient of
// that composition as accumulated into ga / gb. Masked terms are skipped
// entirely (value 0, no gradient).
// ---------------------------------------------------------------------------
struct RelationTerms {
  real r1 = 0, r2 = 0, r3 = 0;
  real composed() const { return r1 + r2 - r3; }
};

inline RelationTerms relation_terms_grad(const Tensor& a, const Tensor& b,
                                         const DiscrepancyConfig& cfg,
                                         real lambda, Tensor* ga, Tensor* gb) {
  detail::PairMeasure measure(a, b, cfg);
  const int K = measure.channels();
  RelationTerms out;
  if (K < 2 && (cfg.mask.r2 || cfg.mask.r3))
    warn("relation terms r2/r3 are empty pair sums for K < 2");
  if (cfg.mask.r1) {
    const real w = lambda / real(K);
    for (int m = 0; m < K; ++m)
      out.r1 += measure.eval(0, m, 1, m, w, ga, gb);
    out.r1 /= real(K);
  }
  if (cfg.mask.r2 && K >= 2) {
    const int pair_sets = cfg.symmetrize_r2 ? 2 : 1;
    const real norm = real(K) * real(K - 1) * real(pair_sets);
    const real w = lambda / norm;
    for (int m = 0; m < K; ++m)
      for (int n = 0; n < K; ++n) {
        if (m == n) continue;
        out.r2 += measure.eval(0, m, 0, n, w, ga, gb);
        if (cfg.symmetrize_r2) out.r2 += measure.eval(1, m, 1, n, w, ga, gb);
      }
    out.r2 /= norm;
  }
  if (cfg.mask.r3 && K >= 2) {
    const real norm = real(K) * real(K - 1);
    const real w = -lambda / norm;  // enters the composition with a minus sign
    for (int m = 0; m < K; ++m)
      for (int n = 0; n < K; ++n) {
        if (m == n) continue;
        out.r3 += measure.eval(0, m, 1, n, w, ga, gb);
      }
    out.r3 /= norm;
  }
  return out;
}

inline RelationTerms relation_terms(const Tensor& a, const Tensor& b,
                                    const DiscrepancyConfig& cfg) {
  return relation_terms_grad(a, b, cfg, 0, nullptr, nullptr);
}

// Aggregation component (between the two branches' intermediate outputs).
inline real inter_discrepancy(const Tensor& inter_a, const Tensor& inter_b,
                              const DiscrepancyConfig& cfg) {
  return relation_terms(inter_a, inter_b, cfg).composed();
}

// Segregation component (between the two branches' specific outputs).
inline real spec_discrepancy(const Tensor& spec_a, const Tensor& spec_b,
                             const DiscrepancyConfig& cfg) {
  return relation_terms(spec_a, spec_b, cfg).composed();
}

// ---------------------------------------------------------------------------
// dl_loss: the full disentanglement objective dl = inter - spec, with
// per-component gradient weights (w_inter scales d(inter), w_spec scales
// d(spec) as accumulated; the minus sign of the composition is NOT folded
// into w_spec — callers pass the signs their stage needs).
// Pass null spec tensors for the two-head baseline: spec contributes 0.
// ---------------------------------------------------------------------------
inline DiscrepancyReport dl_loss_grad(
    const Tensor& inter_a, const Tensor& inter_b, const Tensor* spec_a,
    const Tensor* spec_b, const DiscrepancyConfig& cfg, real w_inter,
    real w_spec, Tensor* g_inter_a, Tensor* g_inter_b, Tensor* g_spec_a,
    Tensor* g_spec_b) {
  POSEADAPT_CHECK(cfg.mask.any(), "dl_loss: empty relation mask");
  DiscrepancyReport rep;
  if (cfg.use_inter) {
    RelationTerms t = relation_terms_grad(inter_a, inter_b, cfg, w_inter,
                                          g_inter_a, g_inter_b);
    rep.r1 = t.r1;
    rep.r2 = t.r2;
    rep.r3 = t.r3;
    rep.inter = t.r1 + t.r2 - t.r3;
  }
  if (cfg.use_spec && spec_a != nullptr && spec_b != nullptr) {
    RelationTerms t = relation_terms_grad(*spec_a, *spec_b, cfg, w_spec,
                                          g_spec_a, g_spec_b);
    rep.spec = t.r1 + t.r2 - t.r3;
  }
  rep.dl = rep.inter - rep.spec;
  return rep;
}

inline DiscrepancyReport dl_loss(const Tensor& inter_a, const Tensor& inter_b,
                                 const Tensor* spec_a, const Tensor* spec_b,
                                 const DiscrepancyConfig& cfg) {
  return dl_loss_grad(inter_a, inter_b, spec_a, spec_b, cfg, 0, 0, nullptr,
                      nullptr, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// ground_false_heatmap: per channel, softmax-normalize to pi and return
// q = (1 - pi)/(N - 1). Each output channel is a probability distribution
// that is smallest where the prediction peaks; used as a constant target.
// ---------------------------------------------------------------------------
inline Tensor ground_false_heatmap(const Tensor& p) {
  POSEADAPT_CHECK(p.rank() == 4, "ground_false_heatmap: expect (B, K, H, W)");
  const int B = p.dim(0), K = p.dim(1);
  const int N = p.dim(2) * p.dim(3);
  POSEADAPT_CHECK(N >= 2, "ground_false_heatmap: needs at least two cells");
  Tensor q(p.shape());
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      const real* src = p.data() + (std::size_t(b) * K + std::size_t(k)) * N;
      real* dst = q.data() + (std::size_t(b) * K + std::size_t(k)) * N;
      real mx = src[0];
      for (int i = 1; i < N; ++i) mx = std::max(mx, src[i]);
      POSEADAPT_CHECK(std::isfinite(mx), "ground_false_heatmap: non-finite input");
      real z = 0;
      for (int i = 0; i < N; ++i) {
        dst[i] = std::exp(src[i] - mx);
        z += dst[i];
      }
      for (int i = 0; i < N; ++i) dst[i] = (1 - dst[i] / z) / real(N - 1);
    }
  }
  return q;
}

// Single-stack convenience matching the codec-level types.
inline HeatmapStack ground_false_heatmap(const HeatmapStack& p) {
  Tensor batch({1, p.joint_count(), p.height(), p.width()});
  std::copy(p.values.data(), p.values.data() + p.values.numel(), batch.data());
  Tensor q = ground_false_heatmap(batch);
  HeatmapStack out(p.joint_count(), p.height(), p.width());
  std::copy(q.data(), q.data() + q.numel(), out.values.data());
  return out;
}

}  // namespace poseadapt
