#include "dfe/augment.hpp"

#include <algorithm>
#include <cmath>

namespace dfe {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_frame(const char* op, const Tensor<float>& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError(std::string(op) + ": expected a [3,H,W] frame, got " +
                         shape_str(frame.shape()));
  }
}

void check_probability(const char* name, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("augment: ") + name + " must lie in [0,1], got " +
                      std::to_string(p));
  }
}

void check_nonnegative(const char* name, double v) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string("augment: ") + name + " must be >= 0, got " + std::to_string(v));
  }
}

std::size_t clamp_index(double v, std::size_t n) {
  const double r = std::nearbyint(v);
  if (r <= 0.0) return 0;
  if (r >= static_cast<double>(n - 1)) return n - 1;
  return static_cast<std::size_t>(r);
}

// src(x, y) for every output pixel, border replicated.
template <typename Map>
Tensor<float> remap(const Tensor<float>& frame, Map map) {
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  Tensor<float> out(frame.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double sx, sy;
      map(static_cast<double>(x), static_cast<double>(y), sx, sy);
      const std::size_t ix = clamp_index(sx, w), iy = clamp_index(sy, h);
      for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = frame[(c * h + iy) * w + ix];
    }
  }
  return out;
}

void rgb_to_hsv(float r, float g, float b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0 + (b - r) / d;
  } else {
    h = 4.0 + (r - g) / d;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, float& r, float& g, float& b) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int sector = std::min(static_cast<int>(hh), 5);
  const double f = hh - sector;
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  double rr, gg, bb;
  switch (sector) {
    case 0: rr = v, gg = t, bb = p; break;
    case 1: rr = q, gg = v, bb = p; break;
    case 2: rr = p, gg = v, bb = t; break;
    case 3: rr = p, gg = q, bb = v; break;
    case 4: rr = t, gg = p, bb = v; break;
    default: rr = v, gg = p, bb = q; break;
  }
  r = static_cast<float>(rr);
  g = static_cast<float>(gg);
  b = static_cast<float>(bb);
}

}  // namespace

CutBox sample_cutmix_box(std::size_t height, std::size_t width, Rng& rng, double min_ratio,
                         double max_ratio) {
  if (height == 0 || width == 0) throw DimensionError("cutmix: empty frame");
  if (!(min_ratio >= 0.0 && min_ratio <= max_ratio && max_ratio <= 1.0)) {
    throw ConfigError("cutmix: area ratio range must satisfy 0 <= min <= max <= 1");
  }
  const double ratio = uniform(rng, min_ratio, max_ratio);
  const double side = std::sqrt(ratio);
  const auto bw = static_cast<std::size_t>(std::nearbyint(side * static_cast<double>(width)));
  const auto bh = static_cast<std::size_t>(std::nearbyint(side * static_cast<double>(height)));
  const auto cx = static_cast<std::ptrdiff_t>(uniform_index(rng, width));
  const auto cy = static_cast<std::ptrdiff_t>(uniform_index(rng, height));
  auto clip = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n)));
  };
  CutBox box;
  box.x1 = clip(cx - static_cast<std::ptrdiff_t>(bw / 2), width);
  box.x2 = clip(cx - static_cast<std::ptrdiff_t>(bw / 2) + static_cast<std::ptrdiff_t>(bw), width);
  box.y1 = clip(cy - static_cast<std::ptrdiff_t>(bh / 2), height);
  box.y2 = clip(cy - static_cast<std::ptrdiff_t>(bh / 2) + static_cast<std::ptrdiff_t>(bh), height);
  return box;
}

CutMixResult cutmix_with_box(const Tensor<float>& recipient, const Tensor<float>& donor,
                             const std::vector<float>& labels_r,
                             const std::vector<float>& labels_d, const CutBox& box) {
  if (recipient.shape() != donor.shape()) {
    throw DimensionError("cutmix: recipient " + shape_str(recipient.shape()) + " and donor " +
                         shape_str(donor.shape()) + " differ");
  }
  if (recipient.rank() != 4 && recipient.rank() != 5) {
    throw DimensionError("cutmix: expected a [N,C,H,W] or [N,C,T,H,W] batch, got " +
                         shape_str(recipient.shape()));
  }
  const std::size_t n = recipient.dim(0);
  expect_dim("cutmix", "labels_r", labels_r.size(), n);
  expect_dim("cutmix", "labels_d", labels_d.size(), n);
  const std::size_t h = recipient.dim(recipient.rank() - 2), w = recipient.dim(recipient.rank() - 1);
  if (box.x1 > box.x2 || box.y1 > box.y2 || box.x2 > w || box.y2 > h) {
    throw DimensionError("cutmix: box outside the " + std::to_string(h) + "x" + std::to_string(w) +
                         " frame");
  }
  const std::size_t planes = recipient.numel() / (h * w);

  CutMixResult r;
  r.box = box;
  const std::size_t frame_area = h * w;
  r.lambda = static_cast<double>(frame_area - box.area()) / static_cast<double>(frame_area);
  r.mixed = recipient;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = box.y1; y < box.y2; ++y) {
      const std::size_t row = (p * h + y) * w;
      std::copy(donor.data() + row + box.x1, donor.data() + row + box.x2,
                r.mixed.data() + row + box.x1);
    }
  }
  r.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.labels[i] = static_cast<float>(r.lambda * labels_r[i] + (1.0 - r.lambda) * labels_d[i]);
  }
  return r;
}

CutMixResult cutmix(const Tensor<float>& recipient, const Tensor<float>& donor,
                    const std::vector<float>& labels_r, const std::vector<float>& labels_d,
                    Rng& rng) {
  if (recipient.rank() < 2) throw DimensionError("cutmix: batch rank below 2");
  const std::size_t h = recipient.dim(recipient.rank() - 2), w = recipient.dim(recipient.rank() - 1);
  return cutmix_with_box(recipient, donor, labels_r, labels_d, sample_cutmix_box(h, w, rng));
}

void AugPolicy::validate() const {
  check_probability("p_downscale", p_downscale);
  check_probability("p_flip", p_flip);
  check_probability("p_brightness_contrast", p_brightness_contrast);
  check_probability("p_hue_saturation", p_hue_saturation);
  check_probability("p_shear", p_shear);
  check_probability("p_rotate", p_rotate);
  check_probability("p_noise", p_noise);
  if (!(min_scale > 0.0 && min_scale <= 1.0)) throw ConfigError("augment: min_scale must lie in (0,1]");
  check_nonnegative("brightness", brightness);
  check_nonnegative("contrast", contrast);
  check_nonnegative("hue", hue);
  check_nonnegative("saturation", saturation);
  check_nonnegative("shear_degrees", shear_degrees);
  check_nonnegative("rotate_degrees", rotate_degrees);
  check_nonnegative("noise_sigma", noise_sigma);
  if (contrast >= 1.0) throw ConfigError("augment: contrast must be < 1");
  if (!(stdev > 0.0f)) throw ConfigError("augment: stdev must be > 0");
}

AugPolicy AugPolicy::identity() {
  AugPolicy p;
  p.p_downscale = p.p_flip = p.p_brightness_contrast = p.p_hue_saturation = 0.0;
  p.p_shear = p.p_rotate = p.p_noise = 0.0;
  return p;
}

AugDraw sample_aug(const AugPolicy& policy, Rng& rng) {
  AugDraw d;
  // A fixed number of draws per transform keeps streams aligned whatever fires.
  auto fire = [&](double p) { return uniform01(rng) < p; };
  const bool ds = fire(policy.p_downscale);
  const double scale = uniform(rng, policy.min_scale, 1.0);
  if (ds) d.scale = scale;
  d.flip = fire(policy.p_flip);
  const bool bc = fire(policy.p_brightness_contrast);
  const double b = uniform(rng, -policy.brightness, policy.brightness);
  const double c = uniform(rng, -policy.contrast, policy.contrast);
  if (bc) {
    d.brightness = b;
    d.contrast = c;
  }
  const bool hs = fire(policy.p_hue_saturation);
  const double hue = uniform(rng, -policy.hue, policy.hue);
  const double sat = uniform(rng, -policy.saturation, policy.saturation);
  if (hs) {
    d.hue = hue;
    d.saturation = sat;
  }
  const bool sh = fire(policy.p_shear);
  const double shear_deg = uniform(rng, -policy.shear_degrees, policy.shear_degrees);
  if (sh) d.shear_degrees = shear_deg;
  const bool ro = fire(policy.p_rotate);
  const double rot = uniform(rng, -policy.rotate_degrees, policy.rotate_degrees);
  if (ro) d.rotate_degrees = rot;
  const bool no = fire(policy.p_noise);
  const double sigma = uniform(rng, 0.0, policy.noise_sigma);
  if (no) d.noise_sigma = sigma;
  d.noise_seed = rng();
  return d;
}

Tensor<float> downscale(const Tensor<float>& frame, double scale) {
  check_frame("downscale", frame);
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("downscale: scale must lie in (0,1]");
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  const std::size_t sh = std::max<std::size_t>(1, static_cast<std::size_t>(scale * h));
  const std::size_t sw = std::max<std::size_t>(1, static_cast<std::size_t>(scale * w));
  if (sh == h && sw == w) return frame;
  // Nearest down to (sh, sw), nearest back up: composed index maps.
  Tensor<float> out(frame.shape());
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ly = (2 * y + 1) * sh / (2 * h);
    const std::size_t sy = (2 * ly + 1) * h / (2 * sh);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t lx = (2 * x + 1) * sw / (2 * w);
      const std::size_t sx = (2 * lx + 1) * w / (2 * sw);
      for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = frame[(c * h + sy) * w + sx];
    }
  }
  return out;
}

Tensor<float> hflip(const Tensor<float>& frame) {
  check_frame("hflip", frame);
  const std::size_t w = frame.dim(2);
  Tensor<float> out(frame.shape());
  for (std::size_t row = 0; row < 3 * frame.dim(1); ++row) {
    const float* src = frame.data() + row * w;
    float* dst = out.data() + row * w;
    for (std::size_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
  }
  return out;
}

Tensor<float> shear(const Tensor<float>& frame, double degrees) {
  check_frame("shear", frame);
  if (degrees == 0.0) return frame;
  const double k = std::tan(degrees * kPi / 180.0);
  const double cy = (static_cast<double>(frame.dim(1)) - 1.0) / 2.0;
  return remap(frame, [&](double x, double y, double& sx, double& sy) {
    sx = x + k * (y - cy);
    sy = y;
  });
}

Tensor<float> rotate(const Tensor<float>& frame, double degrees) {
  check_frame("rotate", frame);
  if (degrees == 0.0) return frame;
  const double a = degrees * kPi / 180.0, ca = std::cos(a), sa = std::sin(a);
  const double cx = (static_cast<double>(frame.dim(2)) - 1.0) / 2.0;
  const double cy = (static_cast<double>(frame.dim(1)) - 1.0) / 2.0;
  return remap(frame, [&](double x, double y, double& sx, double& sy) {
    const double dx = x - cx, dy = y - cy;
    sx = ca * dx + sa * dy + cx;
    sy = -sa * dx + ca * dy + cy;
  });
}

Tensor<float> brightness_contrast(const Tensor<float>& frame, double brightness, double contrast) {
  check_frame("brightness_contrast", frame);
  Tensor<float> out(frame.shape());
  const double gain = 1.0 + contrast;
  for (std::size_t i = 0; i < frame.numel(); ++i) {
    out[i] = static_cast<float>((frame[i] - 0.5) * gain + 0.5 + brightness);
  }
  return out;
}

Tensor<float> hue_saturation(const Tensor<float>& frame, double hue, double saturation) {
  check_frame("hue_saturation", frame);
  if (hue == 0.0 && saturation == 0.0) return frame;
  const std::size_t plane = frame.dim(1) * frame.dim(2);
  Tensor<float> out(frame.shape());
  for (std::size_t i = 0; i < plane; ++i) {
    const float r = std::clamp(frame[i], 0.0f, 1.0f);
    const float g = std::clamp(frame[plane + i], 0.0f, 1.0f);
    const float b = std::clamp(frame[2 * plane + i], 0.0f, 1.0f);
    double h, s, v;
    rgb_to_hsv(r, g, b, h, s, v);
    h += hue;
    s = std::clamp(s * (1.0 + saturation), 0.0, 1.0);
    hsv_to_rgb(h, s, v, out[i], out[plane + i], out[2 * plane + i]);
  }
  return out;
}

Tensor<float> add_noise(const Tensor<float>& frame, double sigma, Rng& rng) {
  Tensor<float> out = frame;
  if (sigma <= 0.0) return out;
  for (auto& v : out.values()) v = static_cast<float>(v + sigma * normal01(rng));
  return out;
}

Tensor<float> clamp01(const Tensor<float>& frame) {
  Tensor<float> out = frame;
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Tensor<float> normalize(const Tensor<float>& frame, float mean, float stdev) {
  Tensor<float> out = frame;
  for (auto& v : out.values()) v = (v - mean) / stdev;
  return out;
}

Tensor<float> apply_aug(const Tensor<float>& frame, const AugDraw& draw, const AugPolicy& policy) {
  check_frame("augment", frame);
  Tensor<float> x = frame;
  if (draw.scale < 1.0) x = downscale(x, draw.scale);
  if (draw.flip) x = hflip(x);
  if (draw.shear_degrees != 0.0) x = shear(x, draw.shear_degrees);
  if (draw.rotate_degrees != 0.0) x = rotate(x, draw.rotate_degrees);
  if (draw.brightness != 0.0 || draw.contrast != 0.0) {
    x = brightness_contrast(x, draw.brightness, draw.contrast);
  }
  if (draw.hue != 0.0 || draw.saturation != 0.0) x = hue_saturation(x, draw.hue, draw.saturation);
  if (draw.noise_sigma > 0.0) {
    Rng noise(draw.noise_seed);
    x = add_noise(x, draw.noise_sigma, noise);
  }
  return normalize(clamp01(x), policy.mean, policy.stdev);
}

Tensor<float> augment_frame(const Tensor<float>& frame, const AugPolicy& policy, Rng& rng) {
  return apply_aug(frame, sample_aug(policy, rng), policy);
}

Tensor<float> clip_frame(const Tensor<float>& clip, std::size_t t) {
  if (clip.rank() != 4) throw DimensionError("clip_frame: expected [C,T,H,W], got " + shape_str(clip.shape()));
  const std::size_t c = clip.dim(0), frames = clip.dim(1), plane = clip.dim(2) * clip.dim(3);
  if (t >= frames) throw DimensionError("clip_frame: frame index out of range");
  Tensor<float> out({c, clip.dim(2), clip.dim(3)});
  for (std::size_t k = 0; k < c; ++k) {
    std::copy_n(clip.data() + (k * frames + t) * plane, plane, out.data() + k * plane);
  }
  return out;
}

void set_clip_frame(Tensor<float>& clip, std::size_t t, const Tensor<float>& frame) {
  const std::size_t c = clip.dim(0), frames = clip.dim(1), plane = clip.dim(2) * clip.dim(3);
  if (frame.numel() != c * plane || t >= frames) {
    throw DimensionError("set_clip_frame: frame " + shape_str(frame.shape()) +
                         " does not fit clip " + shape_str(clip.shape()));
  }
  for (std::size_t k = 0; k < c; ++k) {
    std::copy_n(frame.data() + k * plane, plane, clip.data() + (k * frames + t) * plane);
  }
}

Tensor<float> augment_clip(const Tensor<float>& clip, const AugPolicy& policy, Rng& rng) {
  if (clip.rank() != 4 || clip.dim(0) != 3) {
    throw DimensionError("augment_clip: expected a [3,T,H,W] clip, got " + shape_str(clip.shape()));
  }
  AugDraw draw = sample_aug(policy, rng);
  Tensor<float> out(clip.shape());
  const std::uint64_t noise_root = draw.noise_seed;
  for (std::size_t t = 0; t < clip.dim(1); ++t) {
    draw.noise_seed = derive_seed(noise_root, t);
    set_clip_frame(out, t, apply_aug(clip_frame(clip, t), draw, policy));
  }
  return out;
}

}  // namespace dfe
