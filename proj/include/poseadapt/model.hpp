// The pose network: a shared convolutional feature extractor plus two
// regression branches, each with a main head and (variant-dependent) an
// auxiliary head. Variants differ in what the auxiliary head represents:
//   idf      — auxiliary heads regress the domain-specific representation;
//              the intermediate representation is main - auxiliary.
//   aidf     — auxiliary heads regress the intermediate representation
//              directly; the specific representation is main - auxiliary.
//   baseline — no auxiliary heads; the intermediate representation is the
//              main output and the specific representation is zero.
// Parameter groups are addressable for stage-wise optimization.
#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "poseadapt/layers.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/tensor.hpp"

namespace poseadapt {

enum class VariantTag { baseline, aidf, idf };

inline const char* to_string(VariantTag v) {
  switch (v) {
    case VariantTag::baseline: return "baseline";
    case VariantTag::aidf: return "aidf";
    case VariantTag::idf: return "idf";
  }
  return "?";
}

enum class ParamGroup {
  extractor = 0,
  inference_head = 1,
  inference_aux_head = 2,
  adversarial_head = 3,
  adversarial_aux_head = 4,
};

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::extractor: return "extractor";
    case ParamGroup::inference_head: return "inference_head";
    case ParamGroup::inference_aux_head: return "inference_aux_head";
    case ParamGroup::adversarial_head: return "adversarial_head";
    case ParamGroup::adversarial_aux_head: return "adversarial_aux_head";
  }
  return "?";
}

struct BackboneSpec {
  int in_channels = 1;
  int in_height = 64;
  int in_width = 64;
  int feature_channels = 48;  // channels after the last downsampling block
  int depth = 4;              // number of stride-2 conv blocks
};

// All outputs of one forward pass, (B, K, H', W') each. The derived
// representations satisfy, exactly:
//   intermediate            = inference   - inference_specific
//   adversarial_intermediate = adversarial - adversarial_specific
struct HeadOutputs {
  Tensor inference;                 // main inference-branch output
  Tensor inference_specific;        // domain-specific part of that branch
  Tensor adversarial;               // main adversarial-branch output
  Tensor adversarial_specific;
  Tensor intermediate;              // aggregated (domain-invariant) part
  Tensor adversarial_intermediate;
};

// Gradients with respect to the RAW head outputs (what each head literally
// produced). Empty tensors mean "no gradient from this head".
struct BranchGrads {
  Tensor inference;
  Tensor inference_aux;
  Tensor adversarial;
  Tensor adversarial_aux;
};

// Gradients with respect to the derived representations, to be routed into
// raw-head gradients according to the variant's algebra.
struct RepresentationGrads {
  Tensor intermediate;
  Tensor adversarial_intermediate;
  Tensor specific;
  Tensor adversarial_specific;
};

class PoseModel {
 public:
  PoseModel(const BackboneSpec& spec, VariantTag variant, int joints,
            int heatmap_h, int heatmap_w, std::uint64_t seed)
      : spec_(spec), variant_(variant), joints_(joints) {
    POSEADAPT_CHECK(spec.depth >= 2, "backbone depth must be >= 2");
    const int feat_h = spec.in_height >> spec.depth;
    const int feat_w = spec.in_width >> spec.depth;
    POSEADAPT_CHECK(feat_h > 0 && feat_w > 0,
                    "backbone depth too large for the input size");
    POSEADAPT_CHECK(feat_h * 4 == heatmap_h && feat_w * 4 == heatmap_w,
                    "head upsampling (x4) must map features onto the heatmap");

    // Extractor: depth stride-2 conv blocks, widths doubling up to
    // feature_channels. Initialization streams are keyed by
    // (seed, group, layer) so shared groups are bit-identical across
    // variants with the same seed.
    int cin = spec.in_channels;
    for (int i = 0; i < spec.depth; ++i) {
      const int cout = std::max(8, spec.feature_channels >> (spec.depth - 1 - i));
      Rng rng(seed, "init", std::uint64_t(ParamGroup::extractor),
              std::uint64_t(i));
      backbone_.add("conv" + std::to_string(i),
                    std::make_unique<Conv2d>(cin, cout, 3, 2, 1, rng));
      backbone_.add("relu" + std::to_string(i), std::make_unique<ReLU>());
      cin = cout;
    }

    for (ParamGroup g : head_groups())
      heads_[g] = build_head(seed, g);
  }

  VariantTag variant() const { return variant_; }
  int joints() const { return joints_; }
  const BackboneSpec& backbone_spec() const { return spec_; }
  bool has_aux_heads() const { return variant_ != VariantTag::baseline; }

  // The literal output of the auxiliary head on each branch (which derived
  // field that is depends on the variant's wiring).
  const Tensor& inference_aux_raw(const HeadOutputs& out) const {
    POSEADAPT_CHECK(has_aux_heads(), "baseline variant has no auxiliary heads");
    return variant_ == VariantTag::idf ? out.inference_specific
                                       : out.intermediate;
  }
  const Tensor& adversarial_aux_raw(const HeadOutputs& out) const {
    POSEADAPT_CHECK(has_aux_heads(), "baseline variant has no auxiliary heads");
    return variant_ == VariantTag::idf ? out.adversarial_specific
                                       : out.adversarial_intermediate;
  }

  std::vector<ParamGroup> groups() const {
    std::vector<ParamGroup> out = {ParamGroup::extractor};
    for (ParamGroup g : head_groups()) out.push_back(g);
    return out;
  }

  HeadOutputs forward(const Tensor& images) {
    POSEADAPT_CHECK(images.rank() == 4 && images.dim(1) == spec_.in_channels &&
                        images.dim(2) == spec_.in_height &&
                        images.dim(3) == spec_.in_width,
                    "model forward: image batch shape mismatch");
    features_ = backbone_.forward(images);
    HeadOutputs out;
    out.inference = heads_[ParamGroup::inference_head]->forward(features_);
    out.adversarial = heads_[ParamGroup::adversarial_head]->forward(features_);
    if (has_aux_heads()) {
      Tensor inf_aux =
          heads_[ParamGroup::inference_aux_head]->forward(features_);
      Tensor adv_aux =
          heads_[ParamGroup::adversarial_aux_head]->forward(features_);
      if (variant_ == VariantTag::idf) {
        out.inference_specific = inf_aux;
        out.adversarial_specific = adv_aux;
        out.intermediate = out.inference - out.inference_specific;
        out.adversarial_intermediate =
            out.adversarial - out.adversarial_specific;
      } else {  // aidf: auxiliary heads ARE the intermediates
        out.intermediate = inf_aux;
        out.adversarial_intermediate = adv_aux;
        out.inference_specific = out.inference - out.intermediate;
        out.adversarial_specific =
            out.adversarial - out.adversarial_intermediate;
      }
    } else {
      out.inference_specific = Tensor(out.inference.shape());
      out.adversarial_specific = Tensor(out.adversarial.shape());
      out.intermediate = out.inference;
      out.adversarial_intermediate = out.adversarial;
    }
    return out;
  }

  // Routes derived-representation gradients into raw-head gradients
  // (accumulating into any grads already present in `raw`):
  //   idf:  d(main) += d(intermediate);            d(aux) += d(specific) - d(intermediate)
  //   aidf: d(main) += d(specific);                d(aux) += d(intermediate) - d(specific)
  //   baseline: d(main) += d(intermediate); specific grads must be absent.
  void route_representation_grads(const RepresentationGrads& rep,
                                  BranchGrads* raw) const {
    route_side(rep.intermediate, rep.specific, &raw->inference,
               &raw->inference_aux);
    route_side(rep.adversarial_intermediate, rep.adversarial_specific,
               &raw->adversarial, &raw->adversarial_aux);
  }

  // Accumulates parameter gradients for every head with a raw gradient and,
  // when into_extractor is set, continues into the backbone.
  void backward(const BranchGrads& raw, bool into_extractor) {
    Tensor dfeat(features_.shape());
    bool any = false;
    auto run = [&](ParamGroup g, const Tensor& dy) {
      if (dy.empty()) return;
      POSEADAPT_CHECK(heads_.count(g), "backward: variant lacks this head");
      dfeat += heads_[g]->backward(dy);
      any = true;
    };
    run(ParamGroup::inference_head, raw.inference);
    run(ParamGroup::inference_aux_head, raw.inference_aux);
    run(ParamGroup::adversarial_head, raw.adversarial);
    run(ParamGroup::adversarial_aux_head, raw.adversarial_aux);
    if (into_extractor && any) backbone_.backward(dfeat);
  }

  // Fully-qualified (group/layer/param, Param*) pairs for one group.
  // Auxiliary groups of the baseline variant are empty (not an error).
  std::vector<std::pair<std::string, Param*>> named_params(ParamGroup g) {
    std::vector<std::pair<std::string, Param*>> out;
    Sequential* seq = nullptr;
    if (g == ParamGroup::extractor) {
      seq = &backbone_;
    } else {
      auto it = heads_.find(g);
      if (it == heads_.end()) return out;  // baseline aux group
      seq = it->second.get();
    }
    const std::string prefix = std::string(to_string(g)) + "/";
    for (auto& [layer, p] : seq->named_params())
      out.emplace_back(prefix + layer + "/" + p->name, p);
    return out;
  }

  std::vector<Param*> group_params(ParamGroup g) {
    std::vector<Param*> out;
    for (auto& [name, p] : named_params(g)) out.push_back(p);
    return out;
  }

  std::vector<std::pair<std::string, Param*>> all_named_params() {
    std::vector<std::pair<std::string, Param*>> out;
    for (ParamGroup g : groups())
      for (auto& np : named_params(g)) out.push_back(np);
    return out;
  }

  void zero_grad() {
    backbone_.zero_grad();
    for (auto& [g, h] : heads_) h->zero_grad();
  }

 private:
  std::vector<ParamGroup> head_groups() const {
    if (variant_ == VariantTag::baseline)
      return {ParamGroup::inference_head, ParamGroup::adversarial_head};
    return {ParamGroup::inference_head, ParamGroup::inference_aux_head,
            ParamGroup::adversarial_head, ParamGroup::adversarial_aux_head};
  }

  std::unique_ptr<Sequential> build_head(std::uint64_t seed, ParamGroup g) {
    // Identical architecture for every head: two stride-2 transposed convs
    // then a 1x1 projection to the joint channels.
    auto head = std::make_unique<Sequential>();
    const int c0 = spec_.feature_channels;
    const int c1 = std::max(8, c0 / 2);
    const int c2 = std::max(8, c0 / 4);
    {
      Rng rng(seed, "init", std::uint64_t(g), 0);
      head->add("deconv0",
                std::make_unique<ConvTranspose2d>(c0, c1, 4, 2, 1, rng));
    }
    head->add("relu0", std::make_unique<ReLU>());
    {
      Rng rng(seed, "init", std::uint64_t(g), 1);
      head->add("deconv1",
                std::make_unique<ConvTranspose2d>(c1, c2, 4, 2, 1, rng));
    }
    head->add("relu1", std::make_unique<ReLU>());
    {
      Rng rng(seed, "init", std::uint64_t(g), 2);
      head->add("proj", std::make_unique<Conv2d>(c2, joints_, 1, 1, 0, rng));
    }
    return head;
  }

  void route_side(const Tensor& d_inter, const Tensor& d_spec, Tensor* d_main,
                  Tensor* d_aux) const {
    auto ensure = [](Tensor* t, const std::vector<int>& shape) {
      if (t->empty()) *t = Tensor(shape);
    };
    if (variant_ == VariantTag::baseline) {
      POSEADAPT_CHECK(d_spec.empty(),
                      "baseline variant has no specific representation");
      if (!d_inter.empty()) {
        ensure(d_main, d_inter.shape());
        *d_main += d_inter;
      }
      return;
    }
    if (variant_ == VariantTag::idf) {
      if (!d_inter.empty()) {
        ensure(d_main, d_inter.shape());
        *d_main += d_inter;
        ensure(d_aux, d_inter.shape());
        *d_aux -= d_inter;
      }
      if (!d_spec.empty()) {
        ensure(d_aux, d_spec.shape());
        *d_aux += d_spec;
      }
    } else {  // aidf
      if (!d_spec.empty()) {
        ensure(d_main, d_spec.shape());
        *d_main += d_spec;
        ensure(d_aux, d_spec.shape());
        *d_aux -= d_spec;
      }
      if (!d_inter.empty()) {
        ensure(d_aux, d_inter.shape());
        *d_aux += d_inter;
      }
    }
  }

  BackboneSpec spec_;
  VariantTag variant_;
  int joints_;
  Sequential backbone_;
  std::map<ParamGroup, std::unique_ptr<Sequential>> heads_;
  Tensor features_;
};

}  // namespace poseadapt
