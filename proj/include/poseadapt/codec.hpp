// Bidirectional transforms between keypoint coordinates and heatmaps:
// Gaussian encoding, hard argmax decoding, and the differentiable
// soft-argmax decoder used inside training losses.
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "poseadapt/common.hpp"
#include "poseadapt/tensor.hpp"

namespace poseadapt {

// K keypoints in heatmap-grid pixel units. coords[k] = (x, y).
struct KeypointSet {
  std::vector<std::pair<real, real>> coords;
  std::vector<bool> visibility;

  KeypointSet() = default;
  explicit KeypointSet(int k)
      : coords(size_t(k), {real(0), real(0)}), visibility(size_t(k), true) {}

  int joint_count() const { return int(coords.size()); }
};

// K spatial maps over an H' x W' grid. For encoded stacks each visible
// channel's maximum equals peak_amplitude at the cell nearest the source
// coordinate.
struct HeatmapStack {
  Tensor values;  // (K, H', W')
  real peak_amplitude = 1.0;

  HeatmapStack() = default;
  HeatmapStack(int k, int h, int w) : values({k, h, w}) {}

  int joint_count() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
};

struct CodecConfig {
  real sigma = 2.0;                  // Gaussian std in heatmap pixels
  real soft_argmax_temperature = 1.0;
  int heatmap_height = 16;
  int heatmap_width = 16;
};

// ---------------------------------------------------------------------------
// encode: coordinates -> Gaussian heatmaps.
// Channel k holds exp(-((x-x_k)^2 + (y-y_k)^2) / (2 sigma^2)) at every grid
// cell, rescaled so the cell nearest (x_k, y_k) reads exactly peak_amplitude.
// Invisible joints produce all-zero channels. Visible coordinates outside
// [0, W') x [0, H') are rejected.
// ---------------------------------------------------------------------------
inline HeatmapStack encode(const KeypointSet& keypoints,
                           const CodecConfig& cfg) {
  POSEADAPT_CHECK(cfg.sigma > 0, "encode: sigma must be positive");
  const int K = keypoints.joint_count();
  const int H = cfg.heatmap_height;
  const int W = cfg.heatmap_width;
  HeatmapStack stack(K, H, W);

  const real inv_two_sigma2 = real(1) / (2 * cfg.sigma * cfg.sigma);
  for (int k = 0; k < K; ++k) {
    if (!keypoints.visibility[size_t(k)]) continue;  // zero channel
    const real x = keypoints.coords[size_t(k)].first;
    const real y = keypoints.coords[size_t(k)].second;
    POSEADAPT_CHECK(std::isfinite(x) && std::isfinite(y),
                    "encode: non-finite keypoint coordinate");
    POSEADAPT_CHECK(x >= 0 && x < real(W) && y >= 0 && y < real(H),
                    "encode: visible keypoint outside heatmap bounds");
    // Rescale so the nearest grid cell carries the full peak amplitude.
    const real cx = std::min(real(W - 1), std::max(real(0), std::round(x)));
    const real cy = std::min(real(H - 1), std::max(real(0), std::round(y)));
    const real peak_arg =
        ((cx - x) * (cx - x) + (cy - y) * (cy - y)) * inv_two_sigma2;
    const real scale = stack.peak_amplitude * std::exp(peak_arg);
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const real d2 = (real(j) - x) * (real(j) - x) +
                        (real(i) - y) * (real(i) - y);
        stack.values.at(k, i, j) = scale * std::exp(-d2 * inv_two_sigma2);
      }
    }
  }
  return stack;
}

// Encode a whole batch into a (B, K, H', W') tensor.
inline Tensor encode_batch(const std::vector<KeypointSet>& batch,
                           const CodecConfig& cfg) {
  POSEADAPT_CHECK(!batch.empty(), "encode_batch: empty batch");
  const int B = int(batch.size());
  const int K = batch[0].joint_count();
  Tensor out({B, K, cfg.heatmap_height, cfg.heatmap_width});
  for (int b = 0; b < B; ++b) {
    POSEADAPT_CHECK(batch[size_t(b)].joint_count() == K,
                    "encode_batch: inconsistent joint counts");
    HeatmapStack s = encode(batch[size_t(b)], cfg);
    std::copy(s.values.data(), s.values.data() + s.values.numel(),
              out.data() + std::size_t(b) * s.values.numel());
  }
  return out;
}

// ---------------------------------------------------------------------------
// decode_argmax: per channel, the (x, y) of the maximum cell. Ties break to
// the lowest row-major index. A channel with no finite value is an error.
// ---------------------------------------------------------------------------
inline KeypointSet decode_argmax(const HeatmapStack& stack) {
  const int K = stack.joint_count();
  const int H = stack.height();
  const int W = stack.width();
  KeypointSet out(K);
  for (int k = 0; k < K; ++k) {
    real best = real(0);
    int best_i = -1, best_j = -1;
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const real v = stack.values.at(k, i, j);
        if (!std::isfinite(v)) continue;
        if (best_i < 0 || v > best) {
          best = v;
          best_i = i;
          best_j = j;
        }
      }
    }
    POSEADAPT_CHECK(best_i >= 0, "decode_argmax: channel has no finite value");
    out.coords[size_t(k)] = {real(best_j), real(best_i)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Soft-argmax: spatial softmax at a temperature, then the probability-
// weighted mean of grid coordinates. Differentiable; the context caches the
// softmax so the backward pass is exact.
//
// For one channel with probabilities p_j at grid coords (gx_j, gy_j) and
// mean (mx, my), the pullback of (d_mx, d_my) is
//   d v_j = (p_j / tau) * ((gx_j - mx) d_mx + (gy_j - my) d_my).
// ---------------------------------------------------------------------------
struct SoftArgmaxContext {
  Tensor probs;   // same shape as the input values
  Tensor coords;  // (..., 2): x then y per channel
  real temperature = 1.0;
  int height = 0, width = 0;
};

namespace detail {

// values: flat (rows, H*W) view where each row is one channel; fills
// probs (same layout) and coords (rows, 2).
inline void soft_argmax_rows(const real* values, int rows, int h, int w,
                             real temperature, real* probs, real* coords) {
  POSEADAPT_CHECK(temperature > 0, "soft_argmax: temperature must be positive");
  const int n = h * w;
  const real inv_t = real(1) / temperature;
  for (int r = 0; r < rows; ++r) {
    const real* v = values + std::size_t(r) * n;
    real* p = probs + std::size_t(r) * n;
    real vmax = v[0];
    for (int j = 1; j < n; ++j) vmax = std::max(vmax, v[j]);
    POSEADAPT_CHECK(std::isfinite(vmax), "soft_argmax: non-finite input");
    real z = 0;
    for (int j = 0; j < n; ++j) {
      p[j] = std::exp((v[j] - vmax) * inv_t);
      z += p[j];
    }
    real mx = 0, my = 0;
    for (int i = 0; i < h; ++i) {
      for (int jx = 0; jx < w; ++jx) {
        const int j = i * w + jx;
        p[j] /= z;
        mx += p[j] * real(jx);
        my += p[j] * real(i);
      }
    }
    coords[std::size_t(r) * 2 + 0] = mx;
    coords[std::size_t(r) * 2 + 1] = my;
  }
}

}  // namespace detail

// Batched forward over a (B, K, H, W) tensor; coords come back as (B, K, 2).
inline SoftArgmaxContext soft_argmax_forward(const Tensor& values,
                                             real temperature) {
  POSEADAPT_CHECK(values.rank() == 4, "soft_argmax_forward: expect B,K,H,W");
  const int B = values.dim(0), K = values.dim(1);
  const int H = values.dim(2), W = values.dim(3);
  SoftArgmaxContext ctx;
  ctx.probs = Tensor({B, K, H, W});
  ctx.coords = Tensor({B, K, 2});
  ctx.temperature = temperature;
  ctx.height = H;
  ctx.width = W;
  detail::soft_argmax_rows(values.data(), B * K, H, W, temperature,
                           ctx.probs.data(), ctx.coords.data());
  return ctx;
}

// Pullback: gradient w.r.t. coords (B, K, 2) -> gradient w.r.t. values.
inline Tensor soft_argmax_backward(const SoftArgmaxContext& ctx,
                                   const Tensor& dcoords) {
  POSEADAPT_CHECK(dcoords.same_shape(ctx.coords),
                  "soft_argmax_backward: coord grad shape mismatch");
  Tensor dvalues(ctx.probs.shape());
  const int rows = int(ctx.probs.numel() / std::size_t(ctx.height * ctx.width));
  const int h = ctx.height, w = ctx.width;
  const real inv_t = real(1) / ctx.temperature;
  for (int r = 0; r < rows; ++r) {
    const real* p = ctx.probs.data() + std::size_t(r) * h * w;
    real* dv = dvalues.data() + std::size_t(r) * h * w;
    const real mx = ctx.coords[std::size_t(r) * 2 + 0];
    const real my = ctx.coords[std::size_t(r) * 2 + 1];
    const real dmx = dcoords[std::size_t(r) * 2 + 0];
    const real dmy = dcoords[std::size_t(r) * 2 + 1];
    for (int i = 0; i < h; ++i) {
      for (int jx = 0; jx < w; ++jx) {
        const int j = i * w + jx;
        dv[j] = p[j] * inv_t *
                ((real(jx) - mx) * dmx + (real(i) - my) * dmy);
      }
    }
  }
  return dvalues;
}

// Single-stack decoder per the codec contract. All joints come back visible;
// visibility bookkeeping belongs to the ground truth it is compared against.
inline KeypointSet decode_soft_argmax(const HeatmapStack& stack,
                                      real temperature) {
  const int K = stack.joint_count();
  KeypointSet out(K);
  Tensor probs(stack.values.shape());
  Tensor coords({K, 2});
  detail::soft_argmax_rows(stack.values.data(), K, stack.height(),
                           stack.width(), temperature, probs.data(),
                           coords.data());
  for (int k = 0; k < K; ++k)
    out.coords[size_t(k)] = {coords.at(k, 0), coords.at(k, 1)};
  return out;
}

}  // namespace poseadapt
