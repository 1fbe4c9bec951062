#include "dfe/synthvid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "dfe/errors.hpp"
#include "dfe/keyvalue.hpp"

namespace dfe {

namespace {

constexpr double kTwoPi = 6.283185307179586;

std::uint8_t quantize(double v) {
  const double r = std::nearbyint(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

// Zero-mean triangular noise with standard deviation sigma.
double triangular(Rng& rng, double sigma) {
  return (uniform01(rng) + uniform01(rng) - 1.0) * sigma * 2.449489742783178;
}

struct Grating {
  double kx, ky, phase, amplitude;
};

Grating random_grating(Rng& rng, double kmin, double kmax, double amin, double amax) {
  const double k = uniform(rng, kmin, kmax), dir = uniform(rng, 0.0, kTwoPi);
  return {k * std::cos(dir), k * std::sin(dir), uniform(rng, 0.0, kTwoPi), uniform(rng, amin, amax)};
}

FaceBox grow_box(const FaceBox& b, double margin, std::size_t width, std::size_t height) {
  const double mx = margin * static_cast<double>(b.w), my = margin * static_cast<double>(b.h);
  const double x0 = std::max(0.0, std::floor(static_cast<double>(b.x) - mx));
  const double y0 = std::max(0.0, std::floor(static_cast<double>(b.y) - my));
  const double x1 = std::min(static_cast<double>(width), std::ceil(static_cast<double>(b.x + b.w) + mx));
  const double y1 = std::min(static_cast<double>(height), std::ceil(static_cast<double>(b.y + b.h) + my));
  return {static_cast<std::size_t>(x0), static_cast<std::size_t>(y0),
          static_cast<std::size_t>(x1 - x0), static_cast<std::size_t>(y1 - y0)};
}

VideoClip render_video(const RenderConfig& cfg, Rng& rng, const std::string& video_id,
                       double brightness_limit) {
  cfg.validate();
  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width;
  const double dw = static_cast<double>(W), dh = static_cast<double>(H);
  VideoClip v;
  v.video_id = video_id;
  v.frames = T;
  v.height = H;
  v.width = W;
  v.pixels.resize(T * H * W * 3);
  v.face_boxes.resize(T);
  v.detections.resize(T);

  // Background: base colour, static per-pixel texture, two soft gratings.
  std::array<double, 3> bg_base;
  for (auto& c : bg_base) c = uniform(rng, 50.0, 200.0);
  std::vector<double> background(H * W * 3);
  const Grating bg1 = random_grating(rng, 0.02, 0.12, 4.0, 12.0);
  const Grating bg2 = random_grating(rng, 0.02, 0.12, 4.0, 12.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double low = bg1.amplitude * std::sin(bg1.kx * x + bg1.ky * y + bg1.phase) +
                         bg2.amplitude * std::sin(bg2.kx * x + bg2.ky * y + bg2.phase);
      for (std::size_t c = 0; c < 3; ++c) {
        background[(y * W + x) * 3 + c] = bg_base[c] + low + uniform(rng, -20.0, 20.0);
      }
    }
  }

  // Face: size, path, skin, texture, features, lighting.
  const double rx = uniform(rng, 0.16, 0.22) * dw;
  const double ry = rx * uniform(rng, 1.1, 1.3);
  const double ax = uniform(rng, 0.0, std::max(0.0, dw / 2 - 1.5 * rx - 2.0));
  const double ay = uniform(rng, 0.0, std::max(0.0, dh / 2 - 1.5 * ry - 2.0));
  const double px = uniform(rng, 20.0, 60.0), py = uniform(rng, 20.0, 60.0);
  const double phx = uniform(rng, 0.0, kTwoPi), phy = uniform(rng, 0.0, kTwoPi);
  const std::array<double, 3> skin = {uniform(rng, 120.0, 200.0), uniform(rng, 80.0, 150.0),
                                      uniform(rng, 60.0, 130.0)};
  std::array<Grating, 3> tex;
  for (auto& g : tex) g = random_grating(rng, 0.15, 0.6, 3.0, 8.0);
  const double shade = uniform(rng, 20.0, 40.0);
  const double eye_dark = uniform(rng, 50.0, 80.0), mouth_dark = uniform(rng, 40.0, 70.0);
  const double brightness = uniform(rng, -brightness_limit, brightness_limit);
  const double drift_amp = uniform(rng, 0.0, 4.0), drift_period = uniform(rng, 24.0, 64.0);
  const double drift_phase = uniform(rng, 0.0, kTwoPi);

  for (std::size_t t = 0; t < T; ++t) {
    const double dt = static_cast<double>(t);
    const double cx = dw / 2 + ax * std::sin(kTwoPi * dt / px + phx);
    const double cy = dh / 2 + ay * std::sin(kTwoPi * dt / py + phy);
    const double light = brightness + drift_amp * std::sin(kTwoPi * dt / drift_period + drift_phase);
    const double x0 = std::max(0.0, std::floor(cx - rx)), x1 = std::min(dw, std::ceil(cx + rx));
    const double y0 = std::max(0.0, std::floor(cy - ry)), y1 = std::min(dh, std::ceil(cy + ry));
    FaceBox box{static_cast<std::size_t>(x0), static_cast<std::size_t>(y0),
                static_cast<std::size_t>(x1 - x0), static_cast<std::size_t>(y1 - y0)};
    v.face_boxes[t] = box;

    std::uint8_t* f = v.frame_data(t);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double* bg = &background[(y * W + x) * 3];
        std::array<double, 3> px_val = {bg[0], bg[1], bg[2]};
        const double lx = static_cast<double>(x) + 0.5 - cx, ly = static_cast<double>(y) + 0.5 - cy;
        const double u = lx / rx, w = ly / ry, r2 = u * u + w * w;
        if (r2 <= 1.0) {
          double d = light + shade * (std::sqrt(1.0 - r2) - 0.6);
          for (const auto& g : tex) d += g.amplitude * std::sin(g.kx * lx + g.ky * ly + g.phase);
          for (const double ex : {-0.35, 0.35}) {
            const double eu = (u - ex) / 0.14, ev = (w + 0.25) / 0.09;
            if (eu * eu + ev * ev <= 1.0) d -= eye_dark;
          }
          const double mu = u / 0.35, mv = (w - 0.45) / 0.08;
          if (mu * mu + mv * mv <= 1.0) d -= mouth_dark;
          for (std::size_t c = 0; c < 3; ++c) px_val[c] = skin[c] + d;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          f[(y * W + x) * 3 + c] = quantize(px_val[c] + triangular(rng, cfg.sensor_noise));
        }
      }
    }

    // Simulated detector: the grown true box plus lower-confidence decoys.
    auto& dets = v.detections[t];
    const double conf = uniform(rng, 0.85, 0.99);
    dets.push_back({grow_box(box, cfg.detection_margin, W, H), conf});
    const std::size_t decoys = uniform_index(rng, cfg.max_decoys + 1);
    for (std::size_t k = 0; k < decoys; ++k) {
      const auto side = static_cast<std::size_t>(uniform(rng, 0.2, 0.45) * std::min(dw, dh));
      const std::size_t dx = uniform_index(rng, W - side + 1), dy = uniform_index(rng, H - side + 1);
      dets.push_back({{dx, dy, side, side}, uniform(rng, 0.05, 0.8)});
    }
    // Decoys anywhere in the list, so index order is not a shortcut.
    std::rotate(dets.begin(), dets.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, dets.size())),
                dets.end());
  }
  return v;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + name + "'");
}

const char* artifact_mode_name(ArtifactMode m) {
  switch (m) {
    case ArtifactMode::none: return "none";
    case ArtifactMode::seam: return "seam";
    case ArtifactMode::flicker: return "flicker";
    case ArtifactMode::both: return "both";
  }
  return "?";
}

ArtifactMode parse_artifact_mode(const std::string& name) {
  if (name == "none") return ArtifactMode::none;
  if (name == "seam") return ArtifactMode::seam;
  if (name == "flicker") return ArtifactMode::flicker;
  if (name == "both") return ArtifactMode::both;
  throw DataError("unknown artifact mode '" + name + "'");
}

void ArtifactConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("artifacts: ") + name + " must be >= 0");
    }
  };
  nonneg(spatial_seam_strength, "spatial_seam_strength");
  nonneg(temporal_flicker_amplitude, "temporal_flicker_amplitude");
  nonneg(blend_softness, "blend_softness");
  nonneg(seam_weight, "seam_weight");
  nonneg(flicker_weight, "flicker_weight");
  nonneg(both_weight, "both_weight");
  if (flicker_period < 2) throw ConfigError("artifacts: flicker_period must be >= 2 frames");
  if (seam_width == 0) throw ConfigError("artifacts: seam_width must be >= 1");
  if (seam_weight + flicker_weight + both_weight <= 0.0) {
    throw ConfigError("artifacts: at least one mode weight must be positive");
  }
  if (!(strength_jitter >= 0.0 && strength_jitter < 1.0)) {
    throw ConfigError("artifacts: strength_jitter must lie in [0,1)");
  }
}

ArtifactDraw sample_artifacts(const ArtifactConfig& cfg, Rng& rng) {
  cfg.validate();
  ArtifactDraw d;
  const double total = cfg.seam_weight + cfg.flicker_weight + cfg.both_weight;
  const double u = uniform01(rng) * total;
  d.mode = u < cfg.seam_weight                      ? ArtifactMode::seam
           : u < cfg.seam_weight + cfg.flicker_weight ? ArtifactMode::flicker
                                                      : ArtifactMode::both;
  const double js = uniform(rng, 1.0 - cfg.strength_jitter, 1.0 + cfg.strength_jitter);
  const double jf = uniform(rng, 1.0 - cfg.strength_jitter, 1.0 + cfg.strength_jitter);
  d.flicker_phase = uniform(rng, 0.0, kTwoPi);
  d.flicker_period = cfg.flicker_period;
  d.seam_width = cfg.seam_width;
  d.blend_softness = cfg.blend_softness;
  if (d.mode != ArtifactMode::flicker) d.seam_strength = cfg.spatial_seam_strength * js;
  if (d.mode != ArtifactMode::seam) d.flicker_amplitude = cfg.temporal_flicker_amplitude * jf;
  return d;
}

Image VideoClip::frame(std::size_t t) const {
  if (t >= frames) throw UsageError(video_id + ": frame " + std::to_string(t) + " out of range");
  Image img{width, height, 3, {}};
  img.pixels.assign(frame_data(t), frame_data(t) + height * width * 3);
  return img;
}

void VideoClip::validate() const {
  if (label != 0 && label != 1) throw DataError(video_id + ": label must be 0 or 1");
  if (frames == 0 || height == 0 || width == 0) throw DataError(video_id + ": empty video");
  if (pixels.size() != frames * height * width * 3) throw DataError(video_id + ": pixel count mismatch");
  if (face_boxes.size() != frames || detections.size() != frames) {
    throw DataError(video_id + ": per-frame box lists do not match the frame count");
  }
  auto inside = [&](const FaceBox& b) {
    return b.w > 0 && b.h > 0 && b.x + b.w <= width && b.y + b.h <= height;
  };
  for (std::size_t t = 0; t < frames; ++t) {
    if (!inside(face_boxes[t])) {
      throw DataError(video_id + ": face box of frame " + std::to_string(t) + " leaves the frame");
    }
    for (const auto& d : detections[t]) {
      if (!inside(d.box)) {
        throw DataError(video_id + ": detection in frame " + std::to_string(t) + " leaves the frame");
      }
    }
  }
}

void RenderConfig::validate() const {
  if (frames < 1) throw ConfigError("render: frames must be >= 1");
  if (height < 32 || width < 32) throw ConfigError("render: frames must be at least 32x32");
  if (!(brightness_offset >= 0.0)) throw ConfigError("render: brightness_offset must be >= 0");
  if (!(sensor_noise >= 0.0)) throw ConfigError("render: sensor_noise must be >= 0");
  if (!(detection_margin >= 0.0 && detection_margin <= 1.0)) {
    throw ConfigError("render: detection_margin must lie in [0,1]");
  }
}

VideoClip render_real_video(const RenderConfig& cfg, Rng& rng, const std::string& video_id) {
  return render_video(cfg, rng, video_id, cfg.brightness_offset);
}

bool in_face_ellipse(const FaceBox& box, std::size_t x, std::size_t y) {
  const double u = (static_cast<double>(x) + 0.5 - static_cast<double>(box.x)) / static_cast<double>(box.w) * 2.0 - 1.0;
  const double v = (static_cast<double>(y) + 0.5 - static_cast<double>(box.y)) / static_cast<double>(box.h) * 2.0 - 1.0;
  return u * u + v * v <= 1.0;
}

double seam_weight(const FaceBox& box, std::size_t x, std::size_t y, std::size_t width,
                   double softness) {
  if (x < box.x || y < box.y || x >= box.x + box.w || y >= box.y + box.h) return 0.0;
  const std::size_t d = std::min({x - box.x, box.x + box.w - 1 - x, y - box.y, box.y + box.h - 1 - y});
  if (d < width) return 1.0;
  if (softness <= 0.0) return 0.0;
  return std::max(0.0, 1.0 - static_cast<double>(d - width + 1) / (softness + 1.0));
}

VideoClip inject_fake_artifacts(const VideoClip& video, const ArtifactDraw& draw) {
  VideoClip out = video;
  out.artifacts = draw;
  const bool seam = draw.mode == ArtifactMode::seam || draw.mode == ArtifactMode::both;
  const bool flicker = draw.mode == ArtifactMode::flicker || draw.mode == ArtifactMode::both;
  const double s = seam ? draw.seam_strength : 0.0;
  const double a = flicker ? draw.flicker_amplitude : 0.0;
  if (s == 0.0 && a == 0.0) return out;
  if (draw.flicker_period == 0) throw ConfigError("inject_fake_artifacts: flicker period is zero");
  for (std::size_t t = 0; t < video.frames; ++t) {
    const FaceBox& box = video.face_boxes[t];
    const double f = a * std::sin(kTwoPi * static_cast<double>(t) /
                                      static_cast<double>(draw.flicker_period) +
                                  draw.flicker_phase);
    std::uint8_t* px = out.frame_data(t);
    for (std::size_t y = box.y; y < box.y + box.h; ++y) {
      for (std::size_t x = box.x; x < box.x + box.w; ++x) {
        double delta = 0.0;
        if (s != 0.0) delta += s * seam_weight(box, x, y, draw.seam_width, draw.blend_softness);
        if (a != 0.0 && in_face_ellipse(box, x, y)) delta += f;
        if (delta == 0.0) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          auto& p = px[(y * video.width + x) * 3 + c];
          p = quantize(static_cast<double>(p) + delta);
        }
      }
    }
  }
  return out;
}

VideoClip inject_fake_artifacts(const VideoClip& video, const ArtifactConfig& cfg, Rng& rng) {
  return inject_fake_artifacts(video, sample_artifacts(cfg, rng));
}

void CorpusSpec::validate() const {
  if (n_real < 1 || n_fake < 1) throw ConfigError("corpus: n_real and n_fake must be >= 1");
  render.validate();
  artifacts.validate();
  if (!(train_fraction > 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0)) {
    throw ConfigError("corpus: split fractions must satisfy train > 0, val >= 0, train + val <= 1");
  }
}

std::size_t CorpusManifest::count(int label) const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [&](const ManifestRow& r) { return r.label == label; }));
}

std::size_t CorpusManifest::count(int label, Split split) const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const ManifestRow& r) {
    return r.label == label && r.split == split;
  }));
}

std::string video_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "vid%05zu", index);
  return buf;
}

std::vector<ManifestRow> plan_corpus(const CorpusSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_real + spec.n_fake;
  std::vector<ManifestRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].video_id = video_id_for(i);
    rows[i].path = "videos/" + rows[i].video_id;
    rows[i].label = i < spec.n_real ? 0 : 1;
  }
  for (int label = 0; label <= 1; ++label) {
    const std::size_t first = label == 0 ? 0 : spec.n_real;
    const std::size_t count = label == 0 ? spec.n_real : spec.n_fake;
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), first);
    Rng rng(derive_seed(spec.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(label)));
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    const auto n_train = static_cast<std::size_t>(std::nearbyint(spec.train_fraction * count));
    const auto n_val = std::min(count - n_train,
                                static_cast<std::size_t>(std::nearbyint(spec.val_fraction * count)));
    for (std::size_t i = 0; i < count; ++i) {
      rows[order[i]].split = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
    }
  }
  return rows;
}

VideoClip synthesize_video(const CorpusSpec& spec, std::size_t index) {
  const std::vector<ManifestRow> plan = plan_corpus(spec);
  if (index >= plan.size()) throw UsageError("synthesize_video: index out of range");
  const ManifestRow& row = plan[index];
  Rng rng(derive_seed(spec.seed, index));
  VideoClip v;
  if (row.label == 1) {
    const ArtifactDraw draw = sample_artifacts(spec.artifacts, rng);
    // Flickered faces stay inside the real brightness range frame by frame.
    const double limit = std::max(0.0, spec.render.brightness_offset - draw.flicker_amplitude);
    v = inject_fake_artifacts(render_video(spec.render, rng, row.video_id, limit), draw);
  } else {
    v = render_real_video(spec.render, rng, row.video_id);
  }
  v.label = row.label;
  v.split = row.split;
  return v;
}

std::string encode_manifest(const CorpusManifest& manifest) {
  std::string out = "video_id,path,label,split\n";
  for (const auto& r : manifest.rows) {
    out += r.video_id + "," + r.path + "," + std::to_string(r.label) + "," + split_name(r.split) + "\n";
  }
  return out;
}

CorpusManifest decode_manifest(const std::string& text) {
  CorpusManifest m;
  const auto lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]) != "video_id,path,label,split") {
    throw DataError("manifest: missing header 'video_id,path,label,split'");
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw DataError("manifest line " + std::to_string(i + 1) + ": expected 4 fields");
    ManifestRow r{f[0], f[1], 0, parse_split(f[3])};
    if (f[2] == "0" || f[2] == "1") {
      r.label = f[2] == "1";
    } else {
      throw DataError("manifest line " + std::to_string(i + 1) + ": label must be 0 or 1");
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  return decode_manifest(read_file(path));
}

namespace {

std::string box_text(const FaceBox& b) {
  return std::to_string(b.x) + " " + std::to_string(b.y) + " " + std::to_string(b.w) + " " +
         std::to_string(b.h);
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  for (auto& w : split(trim(s), ' ')) {
    if (!w.empty()) out.push_back(w);
  }
  return out;
}

FaceBox parse_box(const std::vector<std::string>& w, std::size_t at) {
  return {parse_u64_strict(w.at(at)), parse_u64_strict(w.at(at + 1)), parse_u64_strict(w.at(at + 2)),
          parse_u64_strict(w.at(at + 3))};
}

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.ppm", t);
  return buf;
}

}  // namespace

std::string encode_video_header(const VideoClip& v) {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& val) { out += k + " = " + val + "\n"; };
  kv("video_id", v.video_id);
  kv("label", std::to_string(v.label));
  kv("split", split_name(v.split));
  kv("frames", std::to_string(v.frames));
  kv("height", std::to_string(v.height));
  kv("width", std::to_string(v.width));
  kv("artifact.mode", artifact_mode_name(v.artifacts.mode));
  kv("artifact.seam_strength", format_double(v.artifacts.seam_strength));
  kv("artifact.flicker_amplitude", format_double(v.artifacts.flicker_amplitude));
  kv("artifact.flicker_period", std::to_string(v.artifacts.flicker_period));
  kv("artifact.flicker_phase", format_double(v.artifacts.flicker_phase));
  kv("artifact.seam_width", std::to_string(v.artifacts.seam_width));
  kv("artifact.blend_softness", format_double(v.artifacts.blend_softness));
  for (std::size_t t = 0; t < v.frames; ++t) {
    kv("face_box." + std::to_string(t), box_text(v.face_boxes[t]));
    std::string dets;
    for (std::size_t k = 0; k < v.detections[t].size(); ++k) {
      if (k) dets += " | ";
      dets += box_text(v.detections[t][k].box) + " " + format_double(v.detections[t][k].confidence);
    }
    kv("detections." + std::to_string(t), dets);
  }
  return out;
}

void write_video(const VideoClip& video, const std::filesystem::path& dir) {
  video.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  write_file(dir / "header.txt", encode_video_header(video));
  for (std::size_t t = 0; t < video.frames; ++t) write_ppm(dir / frame_name(t), video.frame(t));
}

VideoClip read_video(const std::filesystem::path& dir) {
  const std::string source = (dir / "header.txt").string();
  const auto entries = parse_kv(read_file(dir / "header.txt"), source);
  std::map<std::string, std::string> kv;
  for (const auto& e : entries) kv[e.key] = e.value;
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw DataError(source + ": missing key '" + k + "'");
    return it->second;
  };
  VideoClip v;
  try {
    v.video_id = get("video_id");
    v.label = static_cast<int>(parse_u64_strict(get("label")));
    v.split = parse_split(get("split"));
    v.frames = parse_u64_strict(get("frames"));
    v.height = parse_u64_strict(get("height"));
    v.width = parse_u64_strict(get("width"));
    v.artifacts.mode = parse_artifact_mode(get("artifact.mode"));
    v.artifacts.seam_strength = parse_double_strict(get("artifact.seam_strength"));
    v.artifacts.flicker_amplitude = parse_double_strict(get("artifact.flicker_amplitude"));
    v.artifacts.flicker_period = parse_u64_strict(get("artifact.flicker_period"));
    v.artifacts.flicker_phase = parse_double_strict(get("artifact.flicker_phase"));
    v.artifacts.seam_width = parse_u64_strict(get("artifact.seam_width"));
    v.artifacts.blend_softness = parse_double_strict(get("artifact.blend_softness"));
    v.face_boxes.resize(v.frames);
    v.detections.resize(v.frames);
    for (std::size_t t = 0; t < v.frames; ++t) {
      v.face_boxes[t] = parse_box(words(get("face_box." + std::to_string(t))), 0);
      const std::string& dets = get("detections." + std::to_string(t));
      if (trim(dets).empty()) continue;
      for (const auto& part : split(dets, '|')) {
        const auto w = words(part);
        if (w.size() != 5) throw std::invalid_argument("detection needs 'x y w h confidence'");
        v.detections[t].push_back({parse_box(w, 0), parse_double_strict(w[4])});
      }
    }
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": " + e.what());
  } catch (const std::out_of_range&) {
    throw DataError(source + ": malformed box");
  }
  v.pixels.resize(v.frames * v.height * v.width * 3);
  for (std::size_t t = 0; t < v.frames; ++t) {
    const Image img = read_pnm(dir / frame_name(t));
    if (img.width != v.width || img.height != v.height || img.channels != 3) {
      throw DataError((dir / frame_name(t)).string() + ": frame size disagrees with the header");
    }
    std::copy(img.pixels.begin(), img.pixels.end(), v.frame_data(t));
  }
  v.validate();
  return v;
}

CorpusManifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  CorpusManifest m;
  m.rows = plan_corpus(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create corpus directory " + out_dir.string() +
                  (ec ? ": " + ec.message() : std::string()));
  }
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    write_video(synthesize_video(spec, i), out_dir / m.rows[i].path);
  }
  write_file(out_dir / "manifest.csv", encode_manifest(m));
  return m;
}

Image resize_nearest(const Image& src, const FaceBox& region, std::size_t out_w, std::size_t out_h) {
  if (region.w == 0 || region.h == 0 || region.x + region.w > src.width ||
      region.y + region.h > src.height) {
    throw DimensionError("resize_nearest: region outside the image");
  }
  Image out{out_w, out_h, src.channels, std::vector<std::uint8_t>(out_w * out_h * src.channels)};
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = region.y + (2 * y + 1) * region.h / (2 * out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = region.x + (2 * x + 1) * region.w / (2 * out_w);
      for (std::size_t c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(sy, sx, c);
    }
  }
  return out;
}

FaceCrop extract_face(const Image& frame, const std::vector<Detection>& candidates, std::size_t size) {
  if (candidates.empty()) throw ExtractionError("extract_face: no candidate boxes");
  if (size == 0) throw ConfigError("extract_face: crop size must be positive");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].confidence > candidates[best].confidence) best = i;
  }
  const FaceBox& b = candidates[best].box;
  if (b.w == 0 || b.h == 0) throw ExtractionError("extract_face: empty candidate box");
  // Square about the box centre, shifted inside the frame, clipped if larger.
  auto place = [](std::size_t start, std::size_t len, std::size_t side, std::size_t limit,
                  std::size_t& out_start, std::size_t& out_len) {
    auto s = static_cast<std::ptrdiff_t>(start) - static_cast<std::ptrdiff_t>((side - len) / 2);
    if (side >= limit) {
      out_start = 0;
      out_len = limit;
      return;
    }
    s = std::clamp<std::ptrdiff_t>(s, 0, static_cast<std::ptrdiff_t>(limit - side));
    out_start = static_cast<std::size_t>(s);
    out_len = side;
  };
  const std::size_t side = std::max(b.w, b.h);
  FaceCrop out;
  place(b.x, b.w, side, frame.width, out.region.x, out.region.w);
  place(b.y, b.h, side, frame.height, out.region.y, out.region.h);
  out.crop = resize_nearest(frame, out.region, size, size);
  out.confidence = candidates[best].confidence;
  out.index = best;
  return out;
}

FaceBox map_to_crop(const FaceBox& box, const FaceBox& region, std::size_t size) {
  auto map = [&](std::size_t v, std::size_t origin, std::size_t extent, bool up) {
    const double rel = (static_cast<double>(v) - static_cast<double>(origin)) * static_cast<double>(size) /
                       static_cast<double>(extent);
    const double r = up ? std::ceil(rel) : std::floor(rel);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(size)));
  };
  const std::size_t x0 = map(box.x, region.x, region.w, false);
  const std::size_t x1 = map(box.x + box.w, region.x, region.w, true);
  const std::size_t y0 = map(box.y, region.y, region.h, false);
  const std::size_t y1 = map(box.y + box.h, region.y, region.h, true);
  return {x0, y0, x1 - x0, y1 - y0};
}

std::vector<std::size_t> sample_frames(std::size_t frame_count, std::size_t k) {
  if (k < 1) throw UsageError("sample_frames: k must be >= 1");
  if (frame_count < 1) throw UsageError("sample_frames: video has no frames");
  std::vector<std::size_t> idx(k);
  if (frame_count < k) {
    for (std::size_t i = 0; i < k; ++i) idx[i] = i % frame_count;
    return idx;
  }
  if (k == 1) return {0};
  for (std::size_t i = 0; i < k; ++i) {
    idx[i] = (2 * i * (frame_count - 1) + (k - 1)) / (2 * (k - 1));
  }
  return idx;
}

FaceTrack extract_track(const VideoClip& video, std::size_t size) {
  FaceTrack tr;
  tr.video_id = video.video_id;
  tr.label = video.label;
  tr.split = video.split;
  tr.size = size;
  tr.artifacts = video.artifacts;
  tr.crops.reserve(video.frames);
  for (std::size_t t = 0; t < video.frames; ++t) {
    FaceCrop c = extract_face(video.frame(t), video.detections[t], size);
    tr.artifact_box.push_back(map_to_crop(video.face_boxes[t], c.region, size));
    tr.crops.push_back(std::move(c.crop));
  }
  return tr;
}

void image_to_tensor(const Image& img, float* dst) {
  const std::size_t plane = img.width * img.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) {
      dst[c * plane + i] = static_cast<float>(img.pixels[i * img.channels + c]) / 255.0f;
    }
  }
}

Tensor<float> image_to_tensor(const Image& img) {
  Tensor<float> t({img.channels, img.height, img.width});
  image_to_tensor(img, t.data());
  return t;
}

double ks_statistic(const Image& a, const Image& b) {
  auto hist = [](const Image& img) {
    std::array<double, 256> h{};
    const std::size_t n = img.width * img.height;
    for (std::size_t i = 0; i < n; ++i) {
      unsigned y;
      if (img.channels == 3) {
        const auto* p = &img.pixels[i * 3];
        y = (77u * p[0] + 150u * p[1] + 29u * p[2]) >> 8;
      } else {
        y = img.pixels[i * img.channels];
      }
      h[y] += 1.0;
    }
    for (auto& v : h) v /= static_cast<double>(n);
    return h;
  };
  const auto ha = hist(a), hb = hist(b);
  double ca = 0.0, cb = 0.0, d = 0.0;
  for (std::size_t i = 0; i < 256; ++i) {
    ca += ha[i];
    cb += hb[i];
    d = std::max(d, std::abs(ca - cb));
  }
  return d;
}

}  // namespace dfe
