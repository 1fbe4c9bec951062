#pragma once

// Training-time augmentation: CutMix for clip batches and a frame-level
// transform policy. Frames are [3,H,W] float in [0,1]; clips are [3,T,H,W].

#include <cstdint>
#include <vector>

#include "dfe/random.hpp"
#include "dfe/tensor.hpp"

namespace dfe {

// Half-open pixel rectangle [x1,x2) x [y1,y2). x1 == x2 or y1 == y2 is empty.
struct CutBox {
  std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  std::size_t area() const { return (x2 - x1) * (y2 - y1); }
  bool contains(std::size_t x, std::size_t y) const {
    return x >= x1 && x < x2 && y >= y1 && y < y2;
  }
  bool operator==(const CutBox&) const = default;
};

struct CutMixResult {
  Tensor<float> mixed;
  std::vector<float> labels;  // lambda * label_r + (1 - lambda) * label_d
  double lambda = 1.0;        // (frame_area - box_area) / frame_area
  CutBox box;
};

// Area ratio uniform in [min_ratio, max_ratio], square box, uniform centre,
// clipped to the frame (so the realized ratio can be smaller).
CutBox sample_cutmix_box(std::size_t height, std::size_t width, Rng& rng, double min_ratio = 0.1,
                         double max_ratio = 0.4);

// Batches [N,C,H,W] or [N,C,T,H,W]; the box covers the last two axes and is
// cut from every sample, channel and frame alike.
CutMixResult cutmix_with_box(const Tensor<float>& recipient, const Tensor<float>& donor,
                             const std::vector<float>& labels_r,
                             const std::vector<float>& labels_d, const CutBox& box);
CutMixResult cutmix(const Tensor<float>& recipient, const Tensor<float>& donor,
                    const std::vector<float>& labels_r, const std::vector<float>& labels_d,
                    Rng& rng);

struct AugPolicy {
  double p_downscale = 0.3;
  double min_scale = 0.5;  // downscale factor drawn from [min_scale, 1)
  double p_flip = 0.5;
  double p_brightness_contrast = 0.5;
  double brightness = 0.2;  // additive shift in [-b, b]
  double contrast = 0.2;    // gain 1 + c, c in [-contrast, contrast], about 0.5
  double p_hue_saturation = 0.3;
  double hue = 0.1;         // hue rotation, fraction of the colour wheel
  double saturation = 0.1;  // saturation gain 1 + s
  double p_shear = 0.3;
  double shear_degrees = 10.0;
  double p_rotate = 0.3;
  double rotate_degrees = 15.0;
  double p_noise = 0.3;
  double noise_sigma = 0.05;  // sigma drawn from [0, noise_sigma]
  float mean = 0.5f;
  float stdev = 0.5f;

  void validate() const;
  // Every probability 0: only normalization remains.
  static AugPolicy identity();
};

// One draw of the policy. A clip shares a single draw across its frames so
// that augmentation never injects temporal artifacts of its own.
struct AugDraw {
  double scale = 1.0;
  bool flip = false;
  double brightness = 0.0;
  double contrast = 0.0;
  double hue = 0.0;
  double saturation = 0.0;
  double shear_degrees = 0.0;
  double rotate_degrees = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

AugDraw sample_aug(const AugPolicy& policy, Rng& rng);

// The individual transforms, [3,H,W] in and out. Geometric ones resample with
// nearest neighbour and replicate the border.
Tensor<float> downscale(const Tensor<float>& frame, double scale);
Tensor<float> hflip(const Tensor<float>& frame);
Tensor<float> shear(const Tensor<float>& frame, double degrees);
Tensor<float> rotate(const Tensor<float>& frame, double degrees);
Tensor<float> brightness_contrast(const Tensor<float>& frame, double brightness, double contrast);
Tensor<float> hue_saturation(const Tensor<float>& frame, double hue, double saturation);
Tensor<float> add_noise(const Tensor<float>& frame, double sigma, Rng& rng);
Tensor<float> clamp01(const Tensor<float>& frame);
Tensor<float> normalize(const Tensor<float>& frame, float mean = 0.5f, float stdev = 0.5f);

// downscale, flip, shear, rotate, brightness/contrast, hue/saturation, noise,
// clamp to [0,1], normalize.
Tensor<float> apply_aug(const Tensor<float>& frame, const AugDraw& draw, const AugPolicy& policy);
Tensor<float> augment_frame(const Tensor<float>& frame, const AugPolicy& policy, Rng& rng);
Tensor<float> augment_clip(const Tensor<float>& clip, const AugPolicy& policy, Rng& rng);

// Clip [3,T,H,W] <-> frame t [3,H,W].
Tensor<float> clip_frame(const Tensor<float>& clip, std::size_t t);
void set_clip_frame(Tensor<float>& clip, std::size_t t, const Tensor<float>& frame);

}  // namespace dfe
