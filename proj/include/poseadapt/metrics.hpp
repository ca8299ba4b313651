#pragma once
// Keypoint accuracy metrics: PCK at a configurable threshold with per-joint
// and named-group breakdowns, plus whole-dataset model evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "poseadapt/codec.hpp"
#include "poseadapt/common.hpp"
#include "poseadapt/config.hpp"
#include "poseadapt/dataset.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/tensor.hpp"

namespace poseadapt {

using JointGroups = std::map<std::string, std::vector<int>>;

// Accuracy figures from one evaluation pass. `overall` is the mean over all
// evaluated (ground-truth-visible) joint instances; group figures are means
// over their member joints' instances, not means of per-joint means, so
// joints with more visible instances weigh more.
struct PckResult {
  std::vector<real> per_joint;
  std::map<std::string, real> per_group;
  real overall = 0;
  real threshold_ratio = 0.05;
  int sample_count = 0;
};

// pck: fraction of joint instances with ||pred - gt||_2 <= threshold_ratio *
// norm_size (inclusive at the boundary). Coordinates and norm_size must be
// expressed in one shared unit. Instances whose ground truth is invisible
// are excluded; a joint or group left with no evaluated instances is an
// error rather than a silent zero, as is an empty batch.
inline PckResult pck(const std::vector<KeypointSet>& preds,
                     const std::vector<KeypointSet>& gts, real threshold_ratio,
                     real norm_size, const JointGroups& groups = {}) {
  POSEADAPT_CHECK(preds.size() == gts.size(), "pck: batch size mismatch");
  POSEADAPT_CHECK(!preds.empty(), "pck: empty batch");
  POSEADAPT_CHECK(norm_size > 0, "pck: norm_size must be positive");
  POSEADAPT_CHECK(threshold_ratio >= 0, "pck: negative threshold_ratio");
  const int K = preds.front().joint_count();
  POSEADAPT_CHECK(K > 0, "pck: zero joints");

  std::vector<long> correct(std::size_t(K), 0), evaluated(std::size_t(K), 0);
  const real limit = threshold_ratio * norm_size;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    POSEADAPT_CHECK(preds[i].joint_count() == K && gts[i].joint_count() == K,
                    "pck: joint count mismatch");
    for (int k = 0; k < K; ++k) {
      if (!gts[i].visibility[std::size_t(k)]) continue;
      const real dx = preds[i].coords[std::size_t(k)].first -
                      gts[i].coords[std::size_t(k)].first;
      const real dy = preds[i].coords[std::size_t(k)].second -
                      gts[i].coords[std::size_t(k)].second;
      ++evaluated[std::size_t(k)];
      if (std::hypot(dx, dy) <= limit) ++correct[std::size_t(k)];
    }
  }

  PckResult res;
  res.threshold_ratio = threshold_ratio;
  res.sample_count = int(preds.size());
  res.per_joint.resize(std::size_t(K));
  long total_correct = 0, total_evaluated = 0;
  for (int k = 0; k < K; ++k) {
    POSEADAPT_CHECK(evaluated[std::size_t(k)] > 0,
                    "pck: joint " + std::to_string(k) +
                        " has no evaluated instances");
    res.per_joint[std::size_t(k)] =
        real(correct[std::size_t(k)]) / real(evaluated[std::size_t(k)]);
    total_correct += correct[std::size_t(k)];
    total_evaluated += evaluated[std::size_t(k)];
  }
  res.overall = real(total_correct) / real(total_evaluated);
  for (const auto& [name, members] : groups) {
    long group_correct = 0, group_evaluated = 0;
    for (int k : members) {
      POSEADAPT_CHECK(k >= 0 && k < K,
                      "pck: group '" + name + "' references joint " +
                          std::to_string(k));
      group_correct += correct[std::size_t(k)];
      group_evaluated += evaluated[std::size_t(k)];
    }
    POSEADAPT_CHECK(group_evaluated > 0,
                    "pck: group '" + name + "' has no evaluated instances");
    res.per_group[name] = real(group_correct) / real(group_evaluated);
  }
  return res;
}

// evaluate_model: hard-argmax decode of the inference branch over a whole
// dataset, scored against the stored labels in image pixels (both sides are
// scaled up by the dataset's label_downscale; norm_size and threshold come
// from cfg.eval). Deterministic: samples are visited in index order with
// forward passes only.
inline PckResult evaluate_model(PoseModel& model, const Dataset& ds,
                                const ExperimentConfig& cfg) {
  POSEADAPT_CHECK(!ds.samples.empty(), "evaluate_model: empty dataset");
  const int n = int(ds.samples.size());
  const int bs = cfg.batch_size;
  std::vector<KeypointSet> preds, gts;
  preds.reserve(ds.samples.size());
  gts.reserve(ds.samples.size());
  for (int start = 0; start < n; start += bs) {
    const int stop = std::min(n, start + bs);
    std::vector<std::size_t> idx;
    idx.reserve(std::size_t(stop - start));
    for (int i = start; i < stop; ++i) idx.push_back(std::size_t(i));
    const Tensor images = gather_images(ds, idx);
    const HeadOutputs out = model.forward(images);
    const int K = out.inference.dim(1);
    const int H = out.inference.dim(2);
    const int W = out.inference.dim(3);
    const std::size_t chw = std::size_t(K) * std::size_t(H) * std::size_t(W);
    for (int b = 0; b < stop - start; ++b) {
      HeatmapStack stack(K, H, W);
      const real* src = out.inference.data() + std::size_t(b) * chw;
      std::copy(src, src + chw, stack.values.data());
      KeypointSet pred = decode_argmax(stack);
      for (auto& c : pred.coords) {
        c.first *= ds.label_downscale;
        c.second *= ds.label_downscale;
      }
      preds.push_back(std::move(pred));
      KeypointSet gt = ds.samples[std::size_t(start + b)].keypoints;
      for (auto& c : gt.coords) {
        c.first *= ds.label_downscale;
        c.second *= ds.label_downscale;
      }
      gts.push_back(std::move(gt));
    }
  }
  return pck(preds, gts, cfg.eval.threshold_ratio, cfg.eval.norm_size,
             cfg.eval.groups);
}

}  // namespace poseadapt
