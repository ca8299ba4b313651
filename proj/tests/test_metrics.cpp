// PCK metrics: hand-counted accuracy tables, boundary inclusivity,
// visibility exclusion, scale consistency, monotonicity, and whole-dataset
// model evaluation incl. the label rescaling contract.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "poseadapt/engine.hpp"
#include "poseadapt/metrics.hpp"
#include "poseadapt/synth.hpp"

#include "test_util.hpp"

using namespace poseadapt;

namespace {

SkeletonSpec tiny_skeleton() {
  SkeletonSpec s;
  s.joint_count = 3;
  s.joint_names = {"root", "mid", "tip"};
  s.bones = {{0, 1}, {1, 2}};
  s.bone_length_ranges = {{2.0, 3.0}, {2.0, 3.0}};
  s.bone_angle_ranges = {{-2.8, 2.8}, {-2.8, 2.8}};
  s.root_range = {6.0, 10.0, 6.0, 10.0};
  return s;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.batch_size = 4;
  cfg.backbone.feature_channels = 8;
  cfg.backbone.depth = 2;
  cfg.codec.sigma = 1.5;
  cfg.data.skeleton = tiny_skeleton();
  cfg.data.render.image_size = 16;
  cfg.data.render.label_downscale = 1.0;
  cfg.data.render.bounds_margin = 1.0;
  cfg.data.source_count = 8;
  cfg.data.target_count = 8;
  cfg.data.eval_count = 4;
  cfg.data.source = source_shift();
  cfg.data.target.global_scale = {1.05, 1.2};
  cfg.data.target.rotation = {-0.3, 0.3};
  cfg.data.target.background = "clutter";
  cfg.data.target.noise_std = 0.05;
  cfg.eval.norm_size = 16.0;
  cfg.eval.groups = {{"all", {0, 1, 2}}};
  cfg.finalize();
  return cfg;
}

Dataset tiny_dataset(const ExperimentConfig& cfg, const DomainShift& shift,
                     int n, std::uint64_t seed, const std::string& domain) {
  return make_dataset(
      generate_samples(cfg.data.skeleton, shift, cfg.data.render, n, seed,
                       domain),
      cfg.data.render);
}

// A batch where sample i, joint k predicts gt + (err[i][k], 0).
std::pair<std::vector<KeypointSet>, std::vector<KeypointSet>> offset_batch(
    const std::vector<std::vector<real>>& errors) {
  std::vector<KeypointSet> preds, gts;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const int K = int(errors[i].size());
    KeypointSet gt(K), pred(K);
    for (int k = 0; k < K; ++k) {
      gt.coords[std::size_t(k)] = {real(10 + 3 * k), real(20 + 2 * k)};
      pred.coords[std::size_t(k)] = {
          gt.coords[std::size_t(k)].first + errors[i][std::size_t(k)],
          gt.coords[std::size_t(k)].second};
    }
    preds.push_back(pred);
    gts.push_back(gt);
  }
  return {preds, gts};
}

bool same_result(const PckResult& a, const PckResult& b) {
  return a.per_joint == b.per_joint && a.per_group == b.per_group &&
         a.overall == b.overall && a.sample_count == b.sample_count;
}

}  // namespace

TEST_CASE("pck counts instances per joint, per group, and overall") {
  // One sample, four joints, errors 0/10/13/20 px at threshold
  // 0.05 * 256 = 12.8 px: the first two are correct.
  auto [preds, gts] = offset_batch({{0, 10, 13, 20}});
  const PckResult r =
      pck(preds, gts, 0.05, 256, {{"near", {0, 1}}, {"far", {2, 3}}});
  CHECK(r.overall == 0.5);
  CHECK(r.per_joint == std::vector<real>{1, 1, 0, 0});
  CHECK(r.per_group.at("near") == 1.0);
  CHECK(r.per_group.at("far") == 0.0);
  CHECK(r.sample_count == 1);
  CHECK(r.threshold_ratio == 0.05);

  SECTION("the threshold boundary is inclusive") {
    // 12.8 as a double equals 0.05 * 256 exactly (the scaling by a power of
    // two is exact), so this probes the boundary itself.
    auto [p2, g2] = offset_batch({{12.8, 12.8000001}});
    const PckResult b = pck(p2, g2, 0.05, 256);
    CHECK(b.per_joint == std::vector<real>{1, 0});
  }

  SECTION("perfect predictions score 1.0") {
    auto [p2, g2] = offset_batch({{0, 0, 0}, {0, 0, 0}});
    CHECK(pck(p2, g2, 0.05, 256).overall == 1.0);
  }

  SECTION("group means are instance means, and partitions recombine") {
    // 4 samples x 4 joints, full visibility: every joint has 4 instances,
    // so equal-sized groups weigh equally and their mean is the overall.
    auto [p2, g2] = offset_batch({{0, 0, 20, 0},
                                  {0, 20, 20, 0},
                                  {20, 0, 0, 0},
                                  {0, 0, 20, 20}});
    const PckResult r2 =
        pck(p2, g2, 0.05, 256, {{"left", {0, 1}}, {"right", {2, 3}}});
    CHECK(r2.per_group.at("left") == 0.75);
    CHECK(r2.per_group.at("right") == 0.5);
    // Counts are small powers of two, so the arithmetic is exact.
    CHECK((r2.per_group.at("left") + r2.per_group.at("right")) / 2 ==
          r2.overall);
  }
}

TEST_CASE("pck excludes invisible ground truth and rejects empty coverage") {
  auto [preds, gts] = offset_batch({{0, 20}, {0, 0}});

  SECTION("invisible instances drop out of every figure") {
    gts[0].visibility[1] = false;  // joint 1 evaluated once, correctly
    const PckResult r = pck(preds, gts, 0.05, 256, {{"j1", {1}}});
    CHECK(r.per_joint == std::vector<real>{1, 1});
    CHECK(r.per_group.at("j1") == 1.0);
    CHECK(r.overall == 1.0);
    // Visibility of the *prediction* is irrelevant.
    preds[0].visibility[0] = false;
    CHECK(same_result(pck(preds, gts, 0.05, 256, {{"j1", {1}}}), r));
  }

  SECTION("a joint with no evaluated instances is an error") {
    gts[0].visibility[1] = false;
    gts[1].visibility[1] = false;
    REQUIRE_THROWS_WITH(pck(preds, gts, 0.05, 256),
                        Catch::Matchers::ContainsSubstring("joint 1"));
  }

  SECTION("bad batches and bad groups are errors") {
    REQUIRE_THROWS_WITH(pck({}, {}, 0.05, 256),
                        Catch::Matchers::ContainsSubstring("empty"));
    auto short_gts = gts;
    short_gts.pop_back();
    REQUIRE_THROWS_WITH(pck(preds, short_gts, 0.05, 256),
                        Catch::Matchers::ContainsSubstring("batch size"));
    REQUIRE_THROWS_WITH(pck(preds, gts, 0.05, 256, {{"bad", {7}}}),
                        Catch::Matchers::ContainsSubstring("7"));
    REQUIRE_THROWS_WITH(pck(preds, gts, 0.05, 0),
                        Catch::Matchers::ContainsSubstring("norm_size"));
    REQUIRE_THROWS_WITH(pck(preds, gts, -0.05, 256),
                        Catch::Matchers::ContainsSubstring("threshold"));
  }
}

TEST_CASE("pck is scale consistent and monotone in the errors") {
  Rng rng(7, "pck-prop");
  const int B = 6, K = 5;
  std::vector<KeypointSet> preds, gts;
  for (int i = 0; i < B; ++i) {
    KeypointSet p(K), g(K);
    for (int k = 0; k < K; ++k) {
      g.coords[std::size_t(k)] = {rng.uniform(0, 100), rng.uniform(0, 100)};
      p.coords[std::size_t(k)] = {
          g.coords[std::size_t(k)].first + rng.uniform(-15, 15),
          g.coords[std::size_t(k)].second + rng.uniform(-15, 15)};
    }
    preds.push_back(p);
    gts.push_back(g);
  }
  const JointGroups groups{{"a", {0, 1}}, {"b", {2, 3, 4}}};
  const PckResult base = pck(preds, gts, 0.05, 200, groups);

  SECTION("scaling coordinates and normalizer together changes nothing") {
    for (const real s : {4.0, 1.7}) {
      auto sp = preds;
      auto sg = gts;
      for (auto& batch : {&sp, &sg})
        for (KeypointSet& k : *batch)
          for (auto& c : k.coords) {
            c.first *= s;
            c.second *= s;
          }
      CHECK(same_result(pck(sp, sg, 0.05, 200 * s, groups), base));
    }
  }

  SECTION("shrinking every error never lowers any accuracy") {
    auto closer = preds;
    for (std::size_t i = 0; i < closer.size(); ++i)
      for (int k = 0; k < K; ++k) {
        auto& c = closer[i].coords[std::size_t(k)];
        const auto& g = gts[i].coords[std::size_t(k)];
        c.first = g.first + (c.first - g.first) / 2;
        c.second = g.second + (c.second - g.second) / 2;
      }
    const PckResult better = pck(closer, gts, 0.05, 200, groups);
    CHECK(better.overall >= base.overall);
    for (int k = 0; k < K; ++k)
      CHECK(better.per_joint[std::size_t(k)] >= base.per_joint[std::size_t(k)]);
    for (const auto& [name, v] : base.per_group)
      CHECK(better.per_group.at(name) >= v);
  }

  SECTION("raising the threshold never lowers any accuracy") {
    const PckResult looser = pck(preds, gts, 0.1, 200, groups);
    CHECK(looser.overall >= base.overall);
    for (int k = 0; k < K; ++k)
      CHECK(looser.per_joint[std::size_t(k)] >= base.per_joint[std::size_t(k)]);
  }
}

TEST_CASE("evaluate_model decodes the inference branch over a dataset") {
  ExperimentConfig cfg = tiny_config();
  cfg.seed = 3;
  const Dataset eval_ds = tiny_dataset(cfg, cfg.data.target, 7, 91, "eval");

  SECTION("evaluating twice is bit-identical, partial batches included") {
    Trainer tr(cfg);  // 7 samples over batch size 4: one partial batch
    const PckResult a = evaluate_model(tr.model(), eval_ds, cfg);
    const PckResult b = evaluate_model(tr.model(), eval_ds, cfg);
    CHECK(same_result(a, b));
    CHECK(a.sample_count == 7);
  }

  SECTION("the result equals a by-hand decode of the same forward passes") {
    Trainer tr(cfg);
    PoseModel& m = tr.model();
    std::vector<KeypointSet> preds, gts;
    for (std::size_t start = 0; start < eval_ds.samples.size(); start += 4) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start;
           i < std::min(eval_ds.samples.size(), start + 4); ++i)
        idx.push_back(i);
      const Tensor images = gather_images(eval_ds, idx);
      const HeadOutputs out = m.forward(images);
      const int K = out.inference.dim(1), H = out.inference.dim(2),
                W = out.inference.dim(3);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        HeatmapStack stack(K, H, W);
        const real* src =
            out.inference.data() + b * std::size_t(K * H * W);
        std::copy(src, src + std::size_t(K * H * W), stack.values.data());
        preds.push_back(decode_argmax(stack));
        gts.push_back(eval_ds.samples[idx[b]].keypoints);
      }
    }
    // label_downscale is 1 here, so no rescaling enters the comparison.
    const PckResult by_hand = pck(preds, gts, cfg.eval.threshold_ratio,
                                  cfg.eval.norm_size, cfg.eval.groups);
    CHECK(same_result(evaluate_model(tr.model(), eval_ds, cfg), by_hand));
  }

  SECTION("decoded coordinates are rescaled into image pixels") {
    // A 32x32 world with label_downscale 2: stored labels live on the 16x16
    // heatmap grid, and PCK must see both sides scaled back up by 2.
    ExperimentConfig big = tiny_config();
    big.data.render.image_size = 32;
    big.data.render.label_downscale = 2.0;
    big.backbone.depth = 3;
    big.eval.norm_size = 32.0;
    big.finalize();
    const Dataset ds = tiny_dataset(big, big.data.target, 5, 92, "eval");
    REQUIRE(ds.label_downscale == 2.0);
    Trainer tr(big);
    PoseModel& m = tr.model();
    std::vector<KeypointSet> preds, gts;
    for (std::size_t start = 0; start < ds.samples.size(); start += 4) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(ds.samples.size(), start + 4);
           ++i)
        idx.push_back(i);
      const Tensor images = gather_images(ds, idx);
      const HeadOutputs out = m.forward(images);
      const int K = out.inference.dim(1), H = out.inference.dim(2),
                W = out.inference.dim(3);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        HeatmapStack stack(K, H, W);
        const real* src = out.inference.data() + b * std::size_t(K * H * W);
        std::copy(src, src + std::size_t(K * H * W), stack.values.data());
        KeypointSet pred = decode_argmax(stack);
        KeypointSet gt = ds.samples[idx[b]].keypoints;
        for (auto* kp : {&pred, &gt})
          for (auto& c : kp->coords) {
            c.first *= 2.0;
            c.second *= 2.0;
          }
        preds.push_back(std::move(pred));
        gts.push_back(std::move(gt));
      }
    }
    const PckResult by_hand = pck(preds, gts, big.eval.threshold_ratio,
                                  big.eval.norm_size, big.eval.groups);
    CHECK(same_result(evaluate_model(tr.model(), ds, big), by_hand));
  }

  SECTION("empty datasets are rejected") {
    Trainer tr(cfg);
    REQUIRE_THROWS_WITH(evaluate_model(tr.model(), Dataset{}, cfg),
                        Catch::Matchers::ContainsSubstring("empty"));
  }
}

TEST_CASE("a model trained on the target domain outscores a source model") {
  ExperimentConfig cfg = tiny_config();
  cfg.seed = 11;
  cfg.pretrain.epochs = 60;
  cfg.pretrain.decay_epochs = {45};
  const Dataset source = tiny_dataset(cfg, cfg.data.source, 16, 101, "source");
  const Dataset target = tiny_dataset(cfg, cfg.data.target, 16, 102, "target");
  const Dataset eval_ds = tiny_dataset(cfg, cfg.data.target, 16, 103, "eval");
  cfg.data.source_count = 16;
  cfg.data.target_count = 16;

  Trainer source_only(cfg);
  source_only.pretrain(source);
  Trainer oracle(cfg);
  oracle.pretrain(target);  // same schedule, target labels

  const real src_pck = evaluate_model(source_only.model(), eval_ds, cfg).overall;
  const real orc_pck = evaluate_model(oracle.model(), eval_ds, cfg).overall;
  INFO("source-only " << src_pck << " vs target-trained " << orc_pck);
  CHECK(orc_pck > src_pck);
}
