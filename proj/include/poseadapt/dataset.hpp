// Dataset file I/O (PNG images + CSV labels + JSON manifest) and in-memory
// batching utilities.
//
// Layout under a dataset directory:
//   images/000000.png ...   8-bit grayscale frames
//   labels.csv              header: sample_id,joint_id,x,y,visible
//   manifest.json           {spec, shift, seed, count, sha256}
// The sha256 digests labels.csv followed by every image in sample order, so
// "same manifest hash" means "same dataset bytes".
#pragma once

#include <openssl/evp.h>

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/png_io.hpp"
#include "poseadapt/synth.hpp"

namespace poseadapt {

namespace detail {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    POSEADAPT_CHECK(ctx_ != nullptr, "EVP_MD_CTX_new failed");
    POSEADAPT_CHECK(EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) == 1,
                    "sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    POSEADAPT_CHECK(EVP_DigestUpdate(ctx_, data, n) == 1,
                    "sha256 update failed");
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update(const std::vector<unsigned char>& v) {
    update(v.data(), v.size());
  }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    POSEADAPT_CHECK(EVP_DigestFinal_ex(ctx_, digest, &len) == 1,
                    "sha256 final failed");
    static const char* k = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(k[digest[i] >> 4]);
      out.push_back(k[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string image_name(int sample_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.png", sample_id);
  return buf;
}

// Shortest decimal form that parses back to the same double: exact round-trip
// without the 17-digit tails %.17g would print for values like 0.35.
inline std::string format_real(real v) {
  char buf[48];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<unsigned char> image_bytes(const Tensor& img) {
  std::vector<unsigned char> bytes(img.numel());
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const real v = std::clamp(img[i], real(0), real(1));
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  return bytes;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  POSEADAPT_CHECK(in.good(), "cannot read: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// In-memory dataset + batching
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<PoseSample> samples;
  int joint_count = 0;
  int image_size = 0;
  real label_downscale = 4.0;

  std::size_t size() const { return samples.size(); }
};

inline Dataset make_dataset(std::vector<PoseSample> samples,
                            const RenderConfig& rc) {
  POSEADAPT_CHECK(!samples.empty(), "dataset must not be empty");
  Dataset ds;
  ds.joint_count = samples.front().keypoints.joint_count();
  ds.image_size = rc.image_size;
  ds.label_downscale = rc.label_downscale;
  ds.samples = std::move(samples);
  for (const PoseSample& s : ds.samples)
    POSEADAPT_CHECK(s.keypoints.joint_count() == ds.joint_count,
                    "inconsistent joint counts in dataset");
  return ds;
}

// Stacks the indexed images into a (B, 1, H, W) batch tensor.
inline Tensor gather_images(const Dataset& ds,
                            const std::vector<std::size_t>& indices) {
  POSEADAPT_CHECK(!indices.empty(), "empty batch");
  const Tensor& first = ds.samples.front().image;
  Tensor out({int(indices.size()), first.dim(0), first.dim(1), first.dim(2)});
  const std::size_t per = first.numel();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& img = ds.samples[indices[b]].image;
    POSEADAPT_CHECK(img.numel() == per, "inconsistent image sizes");
    std::copy(img.data(), img.data() + per, out.data() + b * per);
  }
  return out;
}

inline std::vector<KeypointSet> gather_keypoints(
    const Dataset& ds, const std::vector<std::size_t>& indices) {
  std::vector<KeypointSet> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(ds.samples[i].keypoints);
  return out;
}

// Endlessly yields shuffled minibatches; each epoch's permutation is a pure
// function of (seed, tag, epoch), so runs replay exactly.
class BatchCycler {
 public:
  BatchCycler(const Dataset& ds, int batch_size, std::uint64_t seed,
              std::string tag)
      : ds_(&ds), batch_(batch_size), seed_(seed), tag_(std::move(tag)) {
    POSEADAPT_CHECK(batch_size > 0, "batch size must be positive");
    POSEADAPT_CHECK(ds.size() >= std::size_t(batch_size),
                    "dataset smaller than one batch");
    reshuffle();
  }

  std::vector<std::size_t> next_indices() {
    if (cursor_ + std::size_t(batch_) > order_.size()) {
      ++epoch_;
      reshuffle();
    }
    std::vector<std::size_t> idx(order_.begin() + long(cursor_),
                                 order_.begin() + long(cursor_) + batch_);
    cursor_ += std::size_t(batch_);
    return idx;
  }

  std::uint64_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_.resize(ds_->size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(seed_, tag_, epoch_);
    rng.shuffle(order_.begin(), order_.end());
    cursor_ = 0;
  }

  const Dataset* ds_;
  int batch_;
  std::uint64_t seed_;
  std::string tag_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// On-disk datasets
// ---------------------------------------------------------------------------

// Generates n samples, writes images/labels/manifest under out_dir, and
// returns the dataset's sha256. Regenerating with the same arguments
// reproduces identical bytes.
inline std::string generate_dataset(const SkeletonSpec& spec,
                                    const DomainShift& shift,
                                    const RenderConfig& rc, int n,
                                    std::uint64_t seed,
                                    const std::string& out_dir,
                                    const std::string& domain = "source") {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  POSEADAPT_CHECK(!ec, "cannot create dataset directory: " + out_dir);

  std::string csv = "sample_id,joint_id,x,y,visible\n";
  std::vector<std::vector<unsigned char>> images;
  images.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    PoseSample s = make_sample(spec, shift, rc, seed, std::uint64_t(i), domain);
    for (int j = 0; j < s.keypoints.joint_count(); ++j) {
      csv += std::to_string(i);
      csv += ',';
      csv += std::to_string(j);
      csv += ',';
      csv += detail::format_real(s.keypoints.coords[std::size_t(j)].first);
      csv += ',';
      csv += detail::format_real(s.keypoints.coords[std::size_t(j)].second);
      csv += ',';
      csv += s.keypoints.visibility[std::size_t(j)] ? '1' : '0';
      csv += '\n';
    }
    images.push_back(detail::image_bytes(s.image));
    const std::string path =
        (fs::path(out_dir) / "images" / detail::image_name(i)).string();
    write_gray_png(path, rc.image_size, rc.image_size, images.back());
  }

  {
    std::ofstream out(fs::path(out_dir) / "labels.csv", std::ios::binary);
    POSEADAPT_CHECK(out.good(), "cannot write labels.csv in " + out_dir);
    out << csv;
  }

  detail::Sha256 sha;
  sha.update(csv);
  for (const auto& img : images) sha.update(img);
  const std::string digest = sha.hex();

  nlohmann::json manifest;
  manifest["spec"] = nlohmann::json{{"skeleton", spec}, {"render", rc}};
  manifest["shift"] = shift;
  manifest["seed"] = seed;
  manifest["count"] = n;
  manifest["sha256"] = digest;
  {
    std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
    POSEADAPT_CHECK(out.good(), "cannot write manifest.json in " + out_dir);
    out << manifest.dump(2) << '\n';
  }
  return digest;
}

// Loads a dataset directory written by generate_dataset, verifying the
// manifest checksum against the bytes on disk.
inline Dataset load_dataset(const std::string& dir,
                            const std::string& domain = "source") {
  namespace fs = std::filesystem;
  const std::string manifest_text =
      detail::read_file_bytes((fs::path(dir) / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(manifest_text);
  const SkeletonSpec spec = manifest.at("spec").at("skeleton");
  const RenderConfig rc = manifest.at("spec").at("render");
  const int count = manifest.at("count").get<int>();
  const std::string recorded_sha = manifest.at("sha256").get<std::string>();
  POSEADAPT_CHECK(count > 0, "manifest count must be positive");

  const std::string csv =
      detail::read_file_bytes((fs::path(dir) / "labels.csv").string());
  detail::Sha256 sha;
  sha.update(csv);

  // Parse labels: sample_id,joint_id,x,y,visible.
  std::vector<KeypointSet> keypoints(static_cast<std::size_t>(count));
  for (auto& k : keypoints) {
    k.coords.assign(std::size_t(spec.joint_count), {0, 0});
    k.visibility.assign(std::size_t(spec.joint_count), false);
  }
  std::istringstream lines(csv);
  std::string line;
  POSEADAPT_CHECK(std::getline(lines, line) &&
                      line == "sample_id,joint_id,x,y,visible",
                  "labels.csv header mismatch in " + dir);
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    int sid = 0, jid = 0, vis = 0;
    double x = 0, y = 0;
    POSEADAPT_CHECK(std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%d", &sid, &jid,
                                &x, &y, &vis) == 5,
                    "malformed labels.csv row: " + line);
    POSEADAPT_CHECK(sid >= 0 && sid < count && jid >= 0 &&
                        jid < spec.joint_count,
                    "labels.csv row out of range: " + line);
    keypoints[std::size_t(sid)].coords[std::size_t(jid)] = {x, y};
    keypoints[std::size_t(sid)].visibility[std::size_t(jid)] = vis != 0;
    ++rows;
  }
  POSEADAPT_CHECK(rows == std::size_t(count) * std::size_t(spec.joint_count),
                  "labels.csv row count mismatch in " + dir);

  std::vector<PoseSample> samples(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::string path =
        (fs::path(dir) / "images" / detail::image_name(i)).string();
    int rows_px = 0, cols_px = 0;
    std::vector<unsigned char> bytes;
    read_gray_png(path, &rows_px, &cols_px, &bytes);
    POSEADAPT_CHECK(rows_px == rc.image_size && cols_px == rc.image_size,
                    "image size mismatch: " + path);
    sha.update(bytes);
    Tensor img({1, rows_px, cols_px});
    for (std::size_t p = 0; p < bytes.size(); ++p)
      img[p] = real(bytes[p]) / 255.0;
    samples[std::size_t(i)].image = std::move(img);
    samples[std::size_t(i)].keypoints = std::move(keypoints[std::size_t(i)]);
    samples[std::size_t(i)].domain = domain;
  }

  POSEADAPT_CHECK(sha.hex() == recorded_sha,
                  "dataset checksum mismatch in " + dir);
  return make_dataset(std::move(samples), rc);
}

}  // namespace poseadapt
