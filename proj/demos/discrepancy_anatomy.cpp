// What the relation-based discrepancy actually measures. Two batches of
// keypoint constellations are rendered to Gaussian heatmaps; one batch then
// drifts away from the other, and the table shows the three relation terms
// (within-pair distance r1, cross-pair r2, mixed r3) and the aggregation
// total inter = r1 + r2 - r3 responding to the drift.

#include <cmath>
#include <iomanip>
#include <iostream>
#include <vector>

#include <poseadapt/poseadapt.hpp>

using namespace poseadapt;

namespace {

// A ring of joints around the heatmap center, jittered per sample, with the
// whole constellation displaced horizontally by `shift` cells.
std::vector<KeypointSet> ring_batch(int batch, int joints, Rng& rng,
                                    real shift) {
  const real two_pi = 6.283185307179586;
  std::vector<KeypointSet> out;
  out.reserve(std::size_t(batch));
  for (int b = 0; b < batch; ++b) {
    KeypointSet k(joints);
    for (int j = 0; j < joints; ++j) {
      const real angle = two_pi * j / joints;
      // Radius 3 around center 8 plus a shift of at most 2.5 and small
      // jitter keeps every peak inside the 16-cell grid.
      k.coords[std::size_t(j)] = {
          8.0 + 3.0 * std::cos(angle) + shift + 0.3 * rng.normal(),
          8.0 + 3.0 * std::sin(angle) + 0.3 * rng.normal()};
    }
    out.push_back(std::move(k));
  }
  return out;
}

}  // namespace

int main() {
  CodecConfig codec;  // 16x16 heatmaps, sigma 2
  DiscrepancyConfig disc;
  disc.use_spec = false;  // no disentangling heads here: aggregation only

  Rng rng(7, "discrepancy-demo");
  const Tensor anchor = encode_batch(ring_batch(16, 4, rng, 0.0), codec);

  std::cout << "peak drift of batch B against a fixed batch A "
               "(16 samples, 4 joints)\n\n";
  std::cout << std::fixed << std::setprecision(4);
  std::cout << std::setw(6) << "shift" << std::setw(9) << "r1" << std::setw(9)
            << "r2" << std::setw(9) << "r3" << std::setw(9) << "inter"
            << "\n";
  for (const real shift : {0.0, 0.5, 1.0, 1.5, 2.5}) {
    const Tensor moved = encode_batch(ring_batch(16, 4, rng, shift), codec);
    const DiscrepancyReport r =
        dl_loss(anchor, moved, nullptr, nullptr, disc);
    std::cout << std::setw(6) << std::setprecision(1) << shift
              << std::setprecision(4) << std::setw(9) << r.r1 << std::setw(9)
              << r.r2 << std::setw(9) << r.r3 << std::setw(9) << r.inter
              << "\n";
  }
  std::cout << "\ninter = r1 + r2 - r3 rises as the distributions separate;\n"
               "at zero shift only sampling jitter remains.\n";
  return 0;
}
