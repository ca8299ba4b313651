// The training procedure: supervised source pretraining and the three-stage
// adversarial adaptation loop.
//
// One adaptation iteration runs three stages on freshly drawn batches (one
// source batch, then one target batch shared by the last two stages):
//   Stage A (update extractor + inference heads + main adversarial head):
//     supervised heatmap MSE on source
//     + alpha1 * MSE(main inference head, auxiliary inference head)
//     + alpha2 * MSE(main inference head, main adversarial head);
//     the auxiliary adversarial head stays untouched.
//   Stage B (update both adversarial heads only):
//     MSE(main adversarial head, ground-false(main inference head))
//     - beta * discrepancy(inference branch reps, adversarial branch reps);
//     i.e. the heads are pushed to disagree across branches.
//   Stage C (update the extractor only):
//     MSE(main inference, main adversarial)
//     + keypoint-similarity loss between both branches' decoded coordinates
//     + gamma * discrepancy(...);
//     i.e. the extractor is pushed to make the branches agree.
// Learning rates follow a polynomial decay in the iteration index; parameter
// freezing per stage is enforced by stepping only the listed groups.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/checkpoint.hpp"
#include "poseadapt/codec.hpp"
#include "poseadapt/config.hpp"
#include "poseadapt/dataset.hpp"
#include "poseadapt/discrepancy.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/optim.hpp"

namespace poseadapt {

// One logged step: phase name, iteration index, and named scalar values.
struct TrainRecord {
  std::string phase;
  std::uint64_t iteration = 0;
  std::map<std::string, real> values;
};

inline void to_json(nlohmann::json& j, const TrainRecord& r) {
  j = {{"phase", r.phase}, {"iteration", r.iteration}, {"values", r.values}};
}

inline void from_json(const nlohmann::json& j, TrainRecord& r) {
  j.at("phase").get_to(r.phase);
  j.at("iteration").get_to(r.iteration);
  j.at("values").get_to(r.values);
}

class TrainLog {
 public:
  void append(TrainRecord rec) {
    for (const auto& [key, value] : rec.values)
      POSEADAPT_CHECK(std::isfinite(value),
                      "non-finite value logged for '" + key + "' in phase " +
                          rec.phase);
    records_.push_back(std::move(rec));
  }

  const std::vector<TrainRecord>& records() const { return records_; }

  std::vector<real> series(const std::string& phase,
                           const std::string& key) const {
    std::vector<real> out;
    for (const TrainRecord& r : records_)
      if (r.phase == phase && r.values.count(key))
        out.push_back(r.values.at(key));
    return out;
  }

  void write_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    POSEADAPT_CHECK(out.good(), "cannot write train log: " + path);
    for (const TrainRecord& r : records_) out << nlohmann::json(r).dump() << '\n';
  }

  static TrainLog read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    POSEADAPT_CHECK(in.good(), "cannot read train log: " + path);
    TrainLog log;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        log.records_.push_back(nlohmann::json::parse(line).get<TrainRecord>());
      } catch (const nlohmann::json::exception& e) {
        throw Error("train log " + path + " line " + std::to_string(lineno) +
                    ": " + e.what());
      }
    }
    return log;
  }

 private:
  std::vector<TrainRecord> records_;
};

// Scalar summary of one optimization step.
struct StageRecord {
  std::map<std::string, real> values;
  real total = 0;
};

class Trainer {
 public:
  explicit Trainer(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.finalize();
    disc_cfg_ = cfg_.discrepancy();
    model_ = std::make_unique<PoseModel>(
        cfg_.backbone, cfg_.variant, cfg_.data.skeleton.joint_count,
        cfg_.codec.heatmap_height, cfg_.codec.heatmap_width, cfg_.seed);
    build_optimizers();
  }

  PoseModel& model() { return *model_; }
  const ExperimentConfig& config() const { return cfg_; }
  TrainLog& log() { return log_; }
  std::uint64_t dl_evaluations() const { return dl_evaluations_; }

  // Called once per adaptation epoch (after it completes) when set; the
  // returned scalars are logged under phase "eval".
  std::function<std::map<std::string, real>()> eval_hook;
  // When set, a checkpoint lands here after every pretrain/adapt epoch; a
  // non-finite loss aborts WITHOUT overwriting it, so the last good epoch
  // survives.
  std::optional<std::string> checkpoint_path;

  // -------------------------------------------------------------------------
  // Pretraining: heatmap MSE + keypoint-similarity loss on decoded
  // coordinates, updating the extractor and the main inference head.
  // -------------------------------------------------------------------------

  StageRecord pretrain_step(const Tensor& images,
                            const std::vector<KeypointSet>& keypoints) {
    HeadOutputs out = model_->forward(images);
    const Tensor target = encode_batch(keypoints, cfg_.codec);

    BranchGrads raw;
    raw.inference = Tensor(out.inference.shape());
    StageRecord rec;
    rec.values["mse"] =
        mse_heatmap_grad(out.inference, target, 1.0, &raw.inference, nullptr);
    rec.values["oks"] = coordinate_loss_grad(out.inference, keypoints,
                                             &raw.inference);
    rec.total = rec.values["mse"] + rec.values["oks"];
    rec.values["total"] = rec.total;
    check_finite(rec, "pretrain");

    model_->zero_grad();
    model_->backward(raw, /*into_extractor=*/true);
    pretrain_opt_->step();
    return rec;
  }

  void pretrain(const Dataset& source) {
    const int steps_per_epoch = int(source.size()) / cfg_.batch_size;
    POSEADAPT_CHECK(steps_per_epoch > 0, "source dataset smaller than a batch");
    BatchCycler cycler(source, cfg_.batch_size, cfg_.seed, "pretrain");
    std::uint64_t iter = 0;
    for (int epoch = 0; epoch < cfg_.pretrain.epochs; ++epoch) {
      pretrain_opt_->set_lr(step_decay(cfg_.pretrain.lr, epoch,
                                       cfg_.pretrain.decay_epochs,
                                       cfg_.pretrain.decay_factor));
      for (int s = 0; s < steps_per_epoch; ++s) {
        const auto idx = cycler.next_indices();
        StageRecord rec =
            pretrain_step(gather_images(source, idx), gather_keypoints(source, idx));
        log_.append({"pretrain", iter++, rec.values});
      }
      write_checkpoint();
    }
  }

  // -------------------------------------------------------------------------
  // Stage A: supervised source step that also warms the auxiliary inference
  // head and the main adversarial head toward the main inference head.
  // -------------------------------------------------------------------------

  StageRecord stage_a_step(const Tensor& images,
                           const std::vector<KeypointSet>& keypoints) {
    HeadOutputs out = model_->forward(images);
    const Tensor target = encode_batch(keypoints, cfg_.codec);

    BranchGrads raw;
    raw.inference = Tensor(out.inference.shape());
    StageRecord rec;
    rec.values["mse"] =
        mse_heatmap_grad(out.inference, target, 1.0, &raw.inference, nullptr);

    if (model_->has_aux_heads() && cfg_.alpha1 > 0) {
      raw.inference_aux = Tensor(out.inference.shape());
      rec.values["aux_align"] =
          cfg_.alpha1 * mse_heatmap_grad(out.inference,
                                         model_->inference_aux_raw(out),
                                         cfg_.alpha1, &raw.inference,
                                         &raw.inference_aux);
    } else {
      rec.values["aux_align"] = 0;
    }
    if (cfg_.alpha2 > 0) {
      raw.adversarial = Tensor(out.inference.shape());
      rec.values["adv_align"] =
          cfg_.alpha2 * mse_heatmap_grad(out.inference, out.adversarial,
                                         cfg_.alpha2, &raw.inference,
                                         &raw.adversarial);
    } else {
      rec.values["adv_align"] = 0;
    }
    rec.total =
        rec.values["mse"] + rec.values["aux_align"] + rec.values["adv_align"];
    rec.values["total"] = rec.total;
    check_finite(rec, "stage_a");

    model_->zero_grad();
    model_->backward(raw, /*into_extractor=*/true);
    step_groups({ParamGroup::extractor, ParamGroup::inference_head,
                 ParamGroup::inference_aux_head, ParamGroup::adversarial_head});
    return rec;
  }

  // -------------------------------------------------------------------------
  // Stage B: adversarial heads chase the ground-false surrogate and push the
  // branch representations apart. Inference branch and extractor frozen.
  // -------------------------------------------------------------------------

  StageRecord stage_b_step(const Tensor& images) {
    HeadOutputs out = model_->forward(images);

    BranchGrads raw;
    raw.adversarial = Tensor(out.adversarial.shape());
    StageRecord rec;
    if (cfg_.adapt.ground_false) {
      const Tensor gf = ground_false_heatmap(out.inference);
      rec.values["adv_mse"] =
          mse_heatmap_grad(out.adversarial, gf, 1.0, &raw.adversarial, nullptr);
    } else {
      // Pure negation: maximize agreement-MSE with the (frozen) inference
      // branch by minimizing its negative.
      rec.values["adv_mse"] = -mse_heatmap_grad(out.adversarial, out.inference,
                                                -1.0, &raw.adversarial, nullptr);
    }

    DiscrepancyReport report = apply_dl(out, &raw, -cfg_.beta,
                                        /*inference_side=*/false);
    if (dl_active(cfg_.beta)) record_report(rec, report);
    rec.total = rec.values["adv_mse"] - cfg_.beta * report.dl;
    rec.values["total"] = rec.total;
    check_finite(rec, "stage_b");

    model_->zero_grad();
    model_->backward(raw, /*into_extractor=*/false);
    step_groups({ParamGroup::adversarial_head, ParamGroup::adversarial_aux_head});
    return rec;
  }

  // -------------------------------------------------------------------------
  // Stage C: the extractor alone pulls the two branches back together.
  // -------------------------------------------------------------------------

  StageRecord stage_c_step(const Tensor& images) {
    HeadOutputs out = model_->forward(images);

    BranchGrads raw;
    raw.inference = Tensor(out.inference.shape());
    raw.adversarial = Tensor(out.adversarial.shape());
    StageRecord rec;
    rec.values["branch_mse"] = mse_heatmap_grad(
        out.inference, out.adversarial, 1.0, &raw.inference, &raw.adversarial);
    rec.values["branch_oks"] = branch_coordinate_loss_grad(out, &raw);

    DiscrepancyReport report = apply_dl(out, &raw, cfg_.gamma,
                                        /*inference_side=*/true);
    if (dl_active(cfg_.gamma)) record_report(rec, report);
    rec.total = rec.values["branch_mse"] + rec.values["branch_oks"] +
                cfg_.gamma * report.dl;
    rec.values["total"] = rec.total;
    check_finite(rec, "stage_c");

    model_->zero_grad();
    model_->backward(raw, /*into_extractor=*/true);
    step_groups({ParamGroup::extractor});
    return rec;
  }

  // -------------------------------------------------------------------------
  // The A/B/C loop.
  // -------------------------------------------------------------------------

  void adapt(const Dataset& source, const Dataset& target) {
    const int iters_per_epoch = int(target.size()) / cfg_.batch_size;
    POSEADAPT_CHECK(iters_per_epoch > 0, "target dataset smaller than a batch");
    BatchCycler source_cycler(source, cfg_.batch_size, cfg_.seed, "adapt-source");
    BatchCycler target_cycler(target, cfg_.batch_size, cfg_.seed, "adapt-target");

    for (int epoch = 0; epoch < cfg_.adapt.epochs; ++epoch) {
      for (int s = 0; s < iters_per_epoch; ++s) {
        set_adapt_lrs();
        const auto src_idx = source_cycler.next_indices();
        const auto tgt_idx = target_cycler.next_indices();
        const Tensor src_images = gather_images(source, src_idx);
        const Tensor tgt_images = gather_images(target, tgt_idx);

        StageRecord a =
            stage_a_step(src_images, gather_keypoints(source, src_idx));
        StageRecord b = stage_b_step(tgt_images);
        StageRecord c = stage_c_step(tgt_images);
        log_.append({"stage_a", adapt_iteration_, a.values});
        log_.append({"stage_b", adapt_iteration_, b.values});
        log_.append({"stage_c", adapt_iteration_, c.values});
        ++adapt_iteration_;
      }
      if (eval_hook) log_.append({"eval", adapt_iteration_, eval_hook()});
      write_checkpoint();
    }
  }

 private:
  void build_optimizers() {
    std::vector<Param*> pre;
    for (ParamGroup g :
         {ParamGroup::extractor, ParamGroup::inference_head})
      for (Param* p : model_->group_params(g)) pre.push_back(p);
    pretrain_opt_ = std::make_unique<Adam>(pre, cfg_.pretrain.lr);

    for (ParamGroup g : model_->groups()) {
      const real lr = g == ParamGroup::extractor ? cfg_.adapt.extractor_lr
                                                 : cfg_.adapt.head_lr;
      adapt_opts_[g] = std::make_unique<SgdMomentum>(
          model_->group_params(g), lr, cfg_.adapt.momentum,
          cfg_.adapt.weight_decay);
    }
  }

  void set_adapt_lrs() {
    for (auto& [g, opt] : adapt_opts_) {
      const real lr0 = g == ParamGroup::extractor ? cfg_.adapt.extractor_lr
                                                  : cfg_.adapt.head_lr;
      opt->set_lr(poly_decay(lr0, long(adapt_iteration_), cfg_.adapt.poly_gamma,
                             cfg_.adapt.poly_power));
    }
  }

  void step_groups(std::initializer_list<ParamGroup> groups) {
    for (ParamGroup g : groups) {
      auto it = adapt_opts_.find(g);
      if (it != adapt_opts_.end()) it->second->step();
    }
  }

  // Keypoint-similarity loss between decoded predictions and labels,
  // accumulating the pullback into the raw inference-head gradient.
  real coordinate_loss_grad(const Tensor& heatmaps,
                            const std::vector<KeypointSet>& keypoints,
                            Tensor* d_heatmaps) {
    SoftArgmaxContext ctx =
        soft_argmax_forward(heatmaps, cfg_.codec.soft_argmax_temperature);
    const Tensor& pred = ctx.coords;
    const int B = heatmaps.dim(0), K = heatmaps.dim(1);
    Tensor target({B, K, 2});
    Tensor vis({B, K});
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < K; ++k) {
        target.at(b, k, 0) = keypoints[std::size_t(b)].coords[std::size_t(k)].first;
        target.at(b, k, 1) = keypoints[std::size_t(b)].coords[std::size_t(k)].second;
        vis.at(b, k) =
            keypoints[std::size_t(b)].visibility[std::size_t(k)] ? 1.0 : 0.0;
      }
    Tensor dpred(pred.shape());
    const real loss =
        oks_loss_batch_grad(pred, target, vis, cfg_.oks, 1.0, &dpred, nullptr);
    Tensor dh = soft_argmax_backward(ctx, dpred);
    add_scaled(*d_heatmaps, dh, 1.0);
    return loss;
  }

  // Keypoint-similarity loss between the two branches' decoded coordinates;
  // both sides receive gradient (both flow into the extractor).
  real branch_coordinate_loss_grad(const HeadOutputs& out, BranchGrads* raw) {
    SoftArgmaxContext ctx_inf = soft_argmax_forward(
        out.inference, cfg_.codec.soft_argmax_temperature);
    SoftArgmaxContext ctx_adv = soft_argmax_forward(
        out.adversarial, cfg_.codec.soft_argmax_temperature);
    const Tensor& pred = ctx_inf.coords;
    const Tensor& ref = ctx_adv.coords;
    Tensor dpred(pred.shape()), dref(ref.shape());
    const real loss = oks_loss_batch_grad(pred, ref, Tensor(), cfg_.oks, 1.0,
                                          &dpred, &dref);
    Tensor dh_inf = soft_argmax_backward(ctx_inf, dpred);
    Tensor dh_adv = soft_argmax_backward(ctx_adv, dref);
    add_scaled(raw->inference, dh_inf, 1.0);
    add_scaled(raw->adversarial, dh_adv, 1.0);
    return loss;
  }

  // Shared discrepancy plumbing for stages B and C. `weight` multiplies the
  // composed loss in the objective; gradients flow into the adversarial-side
  // representations always, and into the inference side only in stage C
  // (where the extractor is being updated through both branches).
  // Whether the discrepancy term is actually evaluated at this weight; record
  // keys appear in stage logs only when it is, so "absent" means "not
  // computed" rather than "computed as zero".
  bool dl_active(real weight) const {
    return weight != 0 && cfg_.dl_enabled();
  }

  DiscrepancyReport apply_dl(const HeadOutputs& out, BranchGrads* raw,
                             real weight, bool inference_side) {
    if (!dl_active(weight)) return DiscrepancyReport{};
    ++dl_evaluations_;

    RepresentationGrads rep;
    rep.adversarial_intermediate = Tensor(out.adversarial.shape());
    if (inference_side) rep.intermediate = Tensor(out.inference.shape());
    Tensor* g_spec_a = nullptr;
    Tensor* g_spec_b = nullptr;
    const Tensor* spec_a = nullptr;
    const Tensor* spec_b = nullptr;
    if (model_->has_aux_heads() && disc_cfg_.use_spec) {
      spec_a = &out.inference_specific;
      spec_b = &out.adversarial_specific;
      rep.adversarial_specific = Tensor(out.adversarial.shape());
      g_spec_b = &rep.adversarial_specific;
      if (inference_side) {
        rep.specific = Tensor(out.inference.shape());
        g_spec_a = &rep.specific;
      }
    }
    // weight * dl = weight * inter - weight * spec.
    DiscrepancyReport report = dl_loss_grad(
        out.intermediate, out.adversarial_intermediate, spec_a, spec_b,
        disc_cfg_, weight, -weight,
        inference_side ? &rep.intermediate : nullptr,
        &rep.adversarial_intermediate, g_spec_a, g_spec_b);
    model_->route_representation_grads(rep, raw);
    return report;
  }

  void record_report(StageRecord& rec, const DiscrepancyReport& report) {
    rec.values["r1"] = report.r1;
    rec.values["r2"] = report.r2;
    rec.values["r3"] = report.r3;
    rec.values["inter"] = report.inter;
    rec.values["spec"] = report.spec;
    rec.values["dl"] = report.dl;
  }

  void check_finite(const StageRecord& rec, const char* phase) {
    for (const auto& [key, value] : rec.values)
      POSEADAPT_CHECK(std::isfinite(value),
                      std::string("non-finite '") + key + "' in " + phase +
                          "; aborting (last checkpoint kept)");
  }

  void write_checkpoint() {
    if (!checkpoint_path) return;
    save_checkpoint(*model_, nlohmann::json(cfg_), *checkpoint_path);
  }

  ExperimentConfig cfg_;
  std::unique_ptr<PoseModel> model_;
  DiscrepancyConfig disc_cfg_;
  std::unique_ptr<Adam> pretrain_opt_;
  std::map<ParamGroup, std::unique_ptr<SgdMomentum>> adapt_opts_;
  TrainLog log_;
  std::uint64_t adapt_iteration_ = 0;
  std::uint64_t dl_evaluations_ = 0;
};

}  // namespace poseadapt
