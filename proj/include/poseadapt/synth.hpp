// Procedural stick-figure pose data with a controllable domain gap.
//
// Poses are sampled by forward kinematics over a bone tree, transformed by a
// per-domain geometric shift (labels transformed identically, so they stay
// exact), then rendered with anti-aliased capsule limbs and bright Gaussian
// joint discs before appearance effects (clutter, brightness, noise) are
// applied. Every sample's randomness derives from (seed, sample_id, attempt),
// so generation order and parallelism cannot change the bytes produced.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/codec.hpp"
#include "poseadapt/common.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/tensor.hpp"

namespace poseadapt {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

// A bone tree plus per-bone length and absolute-angle ranges (radians,
// measured from +x with +y pointing down the image).
struct SkeletonSpec {
  int joint_count = 0;
  std::vector<std::string> joint_names;
  std::vector<std::pair<int, int>> bones;  // (parent, child)
  std::vector<std::pair<real, real>> bone_length_ranges;   // pixels
  std::vector<std::pair<real, real>> bone_angle_ranges;    // radians
  std::array<real, 4> root_range{};  // {x_min, x_max, y_min, y_max} pixels

  int root_joint() const {
    std::vector<bool> is_child(std::size_t(joint_count), false);
    for (const auto& b : bones) is_child[std::size_t(b.second)] = true;
    for (int j = 0; j < joint_count; ++j)
      if (!is_child[std::size_t(j)]) return j;
    throw Error("skeleton has no root joint");
  }

  void validate() const {
    POSEADAPT_CHECK(joint_count >= 2, "skeleton needs at least two joints");
    POSEADAPT_CHECK(int(bones.size()) == joint_count - 1,
                    "a bone tree over K joints has exactly K-1 bones");
    POSEADAPT_CHECK(bone_length_ranges.size() == bones.size() &&
                        bone_angle_ranges.size() == bones.size(),
                    "per-bone ranges must match the bone list");
    POSEADAPT_CHECK(joint_names.empty() ||
                        int(joint_names.size()) == joint_count,
                    "joint_names must be empty or name every joint");
    std::vector<int> child_count(std::size_t(joint_count), 0);
    std::vector<bool> placed(std::size_t(joint_count), false);
    placed[std::size_t(root_joint())] = true;
    for (std::size_t i = 0; i < bones.size(); ++i) {
      const auto [p, c] = bones[i];
      POSEADAPT_CHECK(p >= 0 && p < joint_count && c >= 0 && c < joint_count,
                      "bone joint index out of range");
      POSEADAPT_CHECK(placed[std::size_t(p)],
                      "bones must be listed parent-before-child");
      POSEADAPT_CHECK(!placed[std::size_t(c)], "joint has two parents");
      placed[std::size_t(c)] = true;
      ++child_count[std::size_t(c)];
      POSEADAPT_CHECK(bone_length_ranges[i].first > 0 &&
                          bone_length_ranges[i].second >=
                              bone_length_ranges[i].first,
                      "bone lengths must be positive ordered ranges");
      POSEADAPT_CHECK(bone_angle_ranges[i].second >= bone_angle_ranges[i].first,
                      "bone angle ranges must be ordered");
    }
    for (bool p : placed) POSEADAPT_CHECK(p, "bone list does not span a tree");
    POSEADAPT_CHECK(root_range[1] >= root_range[0] &&
                        root_range[3] >= root_range[2],
                    "root_range must be ordered");
  }
};

// How one domain differs from the canonical rendering: geometry (scale,
// rotation), figure weight, and appearance (background, noise, brightness).
struct DomainShift {
  std::pair<real, real> global_scale{1.0, 1.0};
  std::pair<real, real> rotation{0.0, 0.0};  // radians about image center
  std::pair<real, real> limb_thickness{1.5, 2.5};
  std::string background = "plain";  // "plain" | "clutter"
  real noise_std = 0.0;
  std::pair<real, real> brightness_shift{0.0, 0.0};

  void validate() const {
    POSEADAPT_CHECK(global_scale.first > 0 &&
                        global_scale.second >= global_scale.first,
                    "global_scale must be a positive ordered range");
    POSEADAPT_CHECK(rotation.second >= rotation.first,
                    "rotation range must be ordered");
    POSEADAPT_CHECK(limb_thickness.first > 0 &&
                        limb_thickness.second >= limb_thickness.first,
                    "limb_thickness must be a positive ordered range");
    POSEADAPT_CHECK(background == "plain" || background == "clutter",
                    "background must be 'plain' or 'clutter'");
    POSEADAPT_CHECK(noise_std >= 0, "noise_std must be non-negative");
    POSEADAPT_CHECK(brightness_shift.second >= brightness_shift.first,
                    "brightness_shift range must be ordered");
  }
};

struct RenderConfig {
  int image_size = 64;
  real label_downscale = 4.0;  // image px per heatmap-grid unit
  real bounds_margin = 2.0;    // px; keeps discs renderable and labels encodable
  real limb_intensity = 0.6;
  real disc_amplitude = 1.0;

  void validate() const {
    POSEADAPT_CHECK(image_size >= 8, "image_size too small");
    POSEADAPT_CHECK(label_downscale > 0, "label_downscale must be positive");
    POSEADAPT_CHECK(bounds_margin >= 0, "bounds_margin must be non-negative");
  }
};

// One labeled image. Keypoints are stored in heatmap-grid units
// (image px / label_downscale), ready for the heatmap codec.
struct PoseSample {
  Tensor image;  // (1, H, W), values in [0, 1]
  KeypointSet keypoints;
  std::string domain;  // "source" | "target" | "unseen"
};

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline SkeletonSpec default_skeleton() {
  SkeletonSpec s;
  s.joint_count = 8;
  s.joint_names = {"head",    "neck",    "elbow_r", "elbow_l",
                   "wrist_r", "wrist_l", "hip",     "ankle"};
  const real hpi = 1.5707963267948966;
  s.bones = {{1, 0}, {1, 2}, {1, 3}, {2, 4}, {3, 5}, {1, 6}, {6, 7}};
  s.bone_length_ranges = {{5, 8}, {7, 11}, {7, 11}, {6, 9},
                          {6, 9}, {9, 13}, {8, 12}};
  s.bone_angle_ranges = {{-hpi - 0.35, -hpi + 0.35}, {hpi - 1.25, hpi - 0.35},
                         {hpi + 0.35, hpi + 1.25},   {hpi - 1.45, hpi - 0.10},
                         {hpi + 0.10, hpi + 1.45},   {hpi - 0.12, hpi + 0.12},
                         {hpi - 0.45, hpi + 0.45}};
  s.root_range = {26.0, 38.0, 18.0, 24.0};
  return s;
}

inline DomainShift source_shift() {
  DomainShift d;
  d.global_scale = {0.95, 1.05};
  d.rotation = {-0.08, 0.08};
  d.limb_thickness = {1.5, 2.5};
  d.background = "plain";
  d.noise_std = 0.0;
  return d;
}

inline DomainShift target_shift() {
  DomainShift d;
  d.global_scale = {1.2, 1.5};
  d.rotation = {-0.4, 0.4};
  d.limb_thickness = {1.8, 3.0};
  d.background = "clutter";
  d.noise_std = 0.05;
  return d;
}

// A third domain whose parameter ranges are disjoint from the target's, for
// generalization probes.
inline DomainShift unseen_shift() {
  DomainShift d;
  d.global_scale = {0.75, 0.95};
  d.rotation = {0.45, 0.75};
  d.limb_thickness = {1.0, 1.6};
  d.background = "clutter";
  d.noise_std = 0.08;
  d.brightness_shift = {-0.15, -0.05};
  return d;
}

// ---------------------------------------------------------------------------
// Pose sampling
// ---------------------------------------------------------------------------

using PointList = std::vector<std::pair<real, real>>;

namespace detail {

// One forward-kinematics draw (no bounds check), in image pixels.
inline PointList forward_kinematics(const SkeletonSpec& spec, Rng& rng) {
  PointList joints(std::size_t(spec.joint_count), {0, 0});
  const int root = spec.root_joint();
  joints[std::size_t(root)] = {
      rng.uniform(spec.root_range[0], spec.root_range[1]),
      rng.uniform(spec.root_range[2], spec.root_range[3])};
  for (std::size_t i = 0; i < spec.bones.size(); ++i) {
    const auto [p, c] = spec.bones[i];
    const real len = rng.uniform(spec.bone_length_ranges[i].first,
                                 spec.bone_length_ranges[i].second);
    const real ang = rng.uniform(spec.bone_angle_ranges[i].first,
                                 spec.bone_angle_ranges[i].second);
    joints[std::size_t(c)] = {
        joints[std::size_t(p)].first + len * std::cos(ang),
        joints[std::size_t(p)].second + len * std::sin(ang)};
  }
  return joints;
}

inline bool in_bounds(const PointList& pts, int image_size, real margin) {
  const real lo = margin;
  const real hi = real(image_size - 1) - margin;
  for (const auto& [x, y] : pts)
    if (!(x >= lo && x <= hi && y >= lo && y <= hi)) return false;
  return true;
}

}  // namespace detail

// Scale about the image center, then rotate about it; the same map is applied
// to pixels-to-be-drawn and labels, so labels stay exact.
inline PointList transform_points(const PointList& pts, real scale,
                                  real rotation, real center) {
  const real c = std::cos(rotation);
  const real s = std::sin(rotation);
  PointList out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const real dx = scale * (pts[i].first - center);
    const real dy = scale * (pts[i].second - center);
    out[i] = {c * dx - s * dy + center, s * dx + c * dy + center};
  }
  return out;
}

// Rejection-sampled raw pose (no domain shift applied): deterministic per
// seed, all joints inside the margin-shrunk frame.
inline PointList sample_pose(const SkeletonSpec& spec, const RenderConfig& rc,
                             std::uint64_t seed) {
  spec.validate();
  rc.validate();
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(seed, "pose", 0, std::uint64_t(attempt));
    PointList joints = detail::forward_kinematics(spec, rng);
    if (detail::in_bounds(joints, rc.image_size, rc.bounds_margin))
      return joints;
  }
  throw Error("pose rejection limit exceeded: skeleton spec too tight");
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline real& pixel(Tensor& img, int r, int c) {
  return img[std::size_t(r) * std::size_t(img.dim(2)) + std::size_t(c)];
}

// Anti-aliased capsule (segment with round caps): 1-px linear coverage ramp
// at the boundary, max-blended onto the canvas.
inline void draw_capsule(Tensor& img, std::pair<real, real> a,
                         std::pair<real, real> b, real radius, real intensity) {
  const int H = img.dim(1), W = img.dim(2);
  const real pad = radius + 1.5;
  const int r0 = std::max(0, int(std::floor(std::min(a.second, b.second) - pad)));
  const int r1 = std::min(H - 1, int(std::ceil(std::max(a.second, b.second) + pad)));
  const int c0 = std::max(0, int(std::floor(std::min(a.first, b.first) - pad)));
  const int c1 = std::min(W - 1, int(std::ceil(std::max(a.first, b.first) + pad)));
  const real ux = b.first - a.first;
  const real uy = b.second - a.second;
  const real len2 = ux * ux + uy * uy;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const real px = real(c) - a.first;
      const real py = real(r) - a.second;
      real t = len2 > 0 ? (px * ux + py * uy) / len2 : 0.0;
      t = std::clamp(t, real(0), real(1));
      const real dx = px - t * ux;
      const real dy = py - t * uy;
      const real d = std::sqrt(dx * dx + dy * dy);
      const real alpha = std::clamp(radius - d + real(0.5), real(0), real(1));
      if (alpha > 0) {
        real& v = pixel(img, r, c);
        v = std::max(v, intensity * alpha);
      }
    }
  }
}

// Radially peaked joint disc: a Gaussian blob whose brightest point is the
// (sub-pixel) joint location, max-blended.
inline void draw_gaussian_disc(Tensor& img, std::pair<real, real> center,
                               real sigma, real amplitude) {
  const int H = img.dim(1), W = img.dim(2);
  const real pad = real(3.5) * sigma + 1;
  const int r0 = std::max(0, int(std::floor(center.second - pad)));
  const int r1 = std::min(H - 1, int(std::ceil(center.second + pad)));
  const int c0 = std::max(0, int(std::floor(center.first - pad)));
  const int c1 = std::min(W - 1, int(std::ceil(center.first + pad)));
  const real inv = real(1) / (2 * sigma * sigma);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const real dx = real(c) - center.first;
      const real dy = real(r) - center.second;
      const real v = amplitude * std::exp(-(dx * dx + dy * dy) * inv);
      real& px = pixel(img, r, c);
      px = std::max(px, v);
    }
  }
}

inline void draw_clutter(Tensor& img, Rng& rng) {
  const real size = real(img.dim(2) - 1);
  const int count = 6 + int(rng.index(7));  // 6..12 distractors
  for (int i = 0; i < count; ++i) {
    const bool disc = rng.uniform() < 0.5;
    const real intensity = rng.uniform(0.15, 0.35);
    const real x = rng.uniform(0.0, size);
    const real y = rng.uniform(0.0, size);
    if (disc) {
      const real radius = rng.uniform(1.5, 4.0);
      draw_capsule(img, {x, y}, {x, y}, radius, intensity);
    } else {
      const real ang = rng.uniform(0.0, 6.283185307179586);
      const real len = rng.uniform(6.0, 18.0);
      const real radius = rng.uniform(0.5, 1.0);
      draw_capsule(img, {x, y},
                   {x + len * std::cos(ang), y + len * std::sin(ang)}, radius,
                   intensity);
    }
  }
}

// Quantize to the 8-bit grid PNGs store, so in-memory samples match reloaded
// ones byte-for-byte.
inline void quantize_to_bytes(Tensor& img) {
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const real v = std::clamp(img[i], real(0), real(1));
    img[i] = std::round(v * 255.0) / 255.0;
  }
}

inline Tensor render_appearance(const SkeletonSpec& spec,
                                const DomainShift& shift,
                                const RenderConfig& rc, const PointList& pts,
                                Rng& rng) {
  Tensor img({1, rc.image_size, rc.image_size});
  const real thickness = rng.uniform(shift.limb_thickness.first,
                                     shift.limb_thickness.second);
  if (shift.background == "clutter") draw_clutter(img, rng);
  for (const auto& [p, c] : spec.bones)
    draw_capsule(img, pts[std::size_t(p)], pts[std::size_t(c)], thickness / 2,
                 rc.limb_intensity);
  const real disc_sigma = (thickness / 2 + 1.0) / 1.8;
  for (const auto& pt : pts)
    draw_gaussian_disc(img, pt, disc_sigma, rc.disc_amplitude);
  const real brightness = rng.uniform(shift.brightness_shift.first,
                                      shift.brightness_shift.second);
  if (brightness != 0)
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] += brightness;
  if (shift.noise_std > 0)
    for (std::size_t i = 0; i < img.numel(); ++i)
      img[i] += rng.normal(0.0, shift.noise_std);
  quantize_to_bytes(img);
  return img;
}

}  // namespace detail

// Builds one labeled sample: pose, geometric shift (labels move with it,
// exactly), bounds check with rejection, then appearance. All randomness is a
// pure function of (seed, sample_id, attempt).
inline PoseSample make_sample(const SkeletonSpec& spec, const DomainShift& shift,
                              const RenderConfig& rc, std::uint64_t seed,
                              std::uint64_t sample_id, std::string domain,
                              int* attempt_out = nullptr) {
  spec.validate();
  shift.validate();
  rc.validate();
  const real center = real(rc.image_size - 1) / 2;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng pose_rng(seed, "pose", sample_id, std::uint64_t(attempt));
    const PointList raw = detail::forward_kinematics(spec, pose_rng);
    Rng shift_rng(seed, "shift", sample_id, std::uint64_t(attempt));
    const real scale =
        shift_rng.uniform(shift.global_scale.first, shift.global_scale.second);
    const real rotation =
        shift_rng.uniform(shift.rotation.first, shift.rotation.second);
    const PointList pts = transform_points(raw, scale, rotation, center);
    if (!detail::in_bounds(pts, rc.image_size, rc.bounds_margin)) continue;

    Rng app_rng(seed, "appearance", sample_id, std::uint64_t(attempt));
    PoseSample sample;
    sample.image = detail::render_appearance(spec, shift, rc, pts, app_rng);
    sample.domain = std::move(domain);
    sample.keypoints.coords.reserve(pts.size());
    for (const auto& [x, y] : pts)
      sample.keypoints.coords.push_back(
          {x / rc.label_downscale, y / rc.label_downscale});
    sample.keypoints.visibility.assign(pts.size(), true);
    if (attempt_out) *attempt_out = attempt;
    return sample;
  }
  throw Error("sample rejection limit exceeded: shift/skeleton too tight");
}

inline std::vector<PoseSample> generate_samples(const SkeletonSpec& spec,
                                                const DomainShift& shift,
                                                const RenderConfig& rc, int n,
                                                std::uint64_t seed,
                                                const std::string& domain) {
  POSEADAPT_CHECK(n > 0, "sample count must be positive");
  std::vector<PoseSample> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i)
    out.push_back(make_sample(spec, shift, rc, seed, std::uint64_t(i), domain));
  return out;
}

// ---------------------------------------------------------------------------
// JSON (for manifests and experiment configs)
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const SkeletonSpec& s) {
  j = nlohmann::json{{"joint_count", s.joint_count},
                     {"joint_names", s.joint_names},
                     {"bones", s.bones},
                     {"bone_length_ranges", s.bone_length_ranges},
                     {"bone_angle_ranges", s.bone_angle_ranges},
                     {"root_range", s.root_range}};
}

inline void from_json(const nlohmann::json& j, SkeletonSpec& s) {
  j.at("joint_count").get_to(s.joint_count);
  j.at("joint_names").get_to(s.joint_names);
  j.at("bones").get_to(s.bones);
  j.at("bone_length_ranges").get_to(s.bone_length_ranges);
  j.at("bone_angle_ranges").get_to(s.bone_angle_ranges);
  j.at("root_range").get_to(s.root_range);
  s.validate();
}

inline void to_json(nlohmann::json& j, const DomainShift& d) {
  j = nlohmann::json{{"global_scale", d.global_scale},
                     {"rotation", d.rotation},
                     {"limb_thickness", d.limb_thickness},
                     {"background", d.background},
                     {"noise_std", d.noise_std},
                     {"brightness_shift", d.brightness_shift}};
}

inline void from_json(const nlohmann::json& j, DomainShift& d) {
  j.at("global_scale").get_to(d.global_scale);
  j.at("rotation").get_to(d.rotation);
  j.at("limb_thickness").get_to(d.limb_thickness);
  j.at("background").get_to(d.background);
  j.at("noise_std").get_to(d.noise_std);
  j.at("brightness_shift").get_to(d.brightness_shift);
  d.validate();
}

inline void to_json(nlohmann::json& j, const RenderConfig& r) {
  j = nlohmann::json{{"image_size", r.image_size},
                     {"label_downscale", r.label_downscale},
                     {"bounds_margin", r.bounds_margin},
                     {"limb_intensity", r.limb_intensity},
                     {"disc_amplitude", r.disc_amplitude}};
}

inline void from_json(const nlohmann::json& j, RenderConfig& r) {
  j.at("image_size").get_to(r.image_size);
  j.at("label_downscale").get_to(r.label_downscale);
  j.at("bounds_margin").get_to(r.bounds_margin);
  j.at("limb_intensity").get_to(r.limb_intensity);
  j.at("disc_amplitude").get_to(r.disc_amplitude);
  r.validate();
}

}  // namespace poseadapt
