#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "attributes.hpp"
#include "tensor.hpp"

namespace catface {

// Latent geometry parameters, each drawn uniform in [0,1]. Attributes are
// thresholds on these, so labels are exact functions of the latent code and
// survive any amount of pixel degradation.
enum FaceParam {
  kEyeSpacing = 0,
  kEyeSize,
  kNoseSize,
  kFaceWidth,
  kBaldLevel,
  kBrowShape,
  kGender,
  kNumFaceParams
};

struct IdentitySpec {
  int id = 0;
  std::array<double, kNumFaceParams> params{};
  std::array<bool, kNumAttributes> attributes{};  // canonical order
};

// Bald: bald level above 0.7. BigNose / Chubby: nose size / face width above
// their 70th percentile (0.7 for uniform latents). Male: gender style above
// 0.5. NarrowEye: eye size below its 30th percentile.
std::array<bool, kNumAttributes> derive_attributes(
    const std::array<double, kNumFaceParams>& params);

IdentitySpec make_identity(int id, uint64_t base_seed);

// Procedural face: head outline, hair, brows, eyes, nose, mouth as soft
// ellipses/bars whose geometry encodes the latent params. Variation between
// renders of one identity comes only from the seed: a small whole-face
// offset plus illumination changes. Pixels in [0,1], shape H×W×ch.
Tensor render(const IdentitySpec& spec, uint64_t variation_seed, int height = 32,
              int width = 32, int channels = 1);

struct PixelBox {
  int x0, x1, y0, y1;  // inclusive
};

// Conservative region containing every nose rendering (all nose sizes, the
// full jitter range, soft-edge halos). Two renders with the same seed that
// differ only in nose size differ only inside this box.
PixelBox nose_pixel_bounds(int height, int width);

enum class DegradationKind { GanProxy, WarpProxy };

struct DegradationConfig {
  // Used by degrade() directly.
  DegradationKind kind = DegradationKind::GanProxy;
  double strength = 1.0;

  // Used by batch/pair construction: fraction of samples sent through the
  // GAN proxy (the rest get the warp proxy), and per-sample strength
  // sampling. With sample_strength off every sample uses `strength`.
  double gan_fraction = 0.5;
  bool sample_strength = true;
  double strength_min = 0.25;
  double strength_max = 2.0;
};

// GAN proxy: Gaussian blur, downsample/upsample resampling, additive noise.
// Warp proxy: smooth random displacement field scaled by strength plus mild
// blur. Strength 0 is the identity map; output clamped to [0,1].
Tensor degrade(const Tensor& img, const DegradationConfig& cfg, uint64_t seed);

struct DatasetConfig {
  int height = 32;
  int width = 32;
  int channels = 1;
  int n_train_identities = 0;
  int n_eval_identities = 0;
  uint64_t seed = 0;
};

// Train identities take ids 0..n_train-1 (doubling as classifier class
// indices); eval identities continue from n_train, so the splits are
// disjoint by construction.
struct Dataset {
  DatasetConfig config;
  std::vector<IdentitySpec> train;
  std::vector<IdentitySpec> eval;
};

Dataset make_dataset(const DatasetConfig& cfg);

struct PairedBatch {
  Tensor hq;    // B×H×W×ch
  Tensor lq;    // same sample degraded
  Tensor ids;   // B
  Tensor attrs; // B×5, canonical order
  std::vector<int> id_list;            // integer view of ids
  std::vector<DegradationKind> kinds;  // per-sample proxy used for lq
};

// Draws B distinct train identities, renders each once, degrades the render.
// The GAN/warp assignment uses a deterministic count: round(B·gan_fraction)
// samples of a seeded shuffle take the GAN proxy.
PairedBatch make_batch(const Dataset& ds, int batch, const DegradationConfig& cfg,
                       uint64_t seed);

struct EvalPair {
  Tensor a;
  Tensor b;
  bool same = false;
  int id_a = -1;
  int id_b = -1;
};

// Verification pairs over the eval identities only. Positive pairs are two
// variations of one identity, negatives two distinct identities. When deg is
// given both images are degraded (kind per gan_fraction, strength per the
// sampling fields).
std::vector<EvalPair> make_eval_pairs(const Dataset& ds, int n_pairs = 10000,
                                      double positive_fraction = 0.5,
                                      const DegradationConfig* deg = nullptr,
                                      uint64_t seed = 0);

// One line per identity: id, five attribute bits in canonical order, the
// identity's derived parameter seed. '#' lines carry split metadata.
void export_manifest(const Dataset& ds, const std::string& path);

}  // namespace catface
