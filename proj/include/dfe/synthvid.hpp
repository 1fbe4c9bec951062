#pragma once

// Synthetic face-video corpus, face extraction and frame sampling.
//
// A real video is a textured ellipsoidal face (eyes, mouth, per-video skin
// tone, texture and brightness) that drifts along a sinusoidal path over a
// static noise background, with per-frame sensor noise. A fake is a real video
// passed through inject_fake_artifacts:
//
//   seam     +s on a band just inside the face box, every frame (spatial)
//   flicker  +a*sin(2*pi*t/P + phi) over the face ellipse (temporal only)
//
// Each fake draws one mode (seam only, flicker only, both) from the configured
// weights and scales its strengths by an independent factor from
// [1 - jitter, 1 + jitter]. Real videos carry a brightness offset at least as
// wide as the flicker swing, so a single flickered frame looks real.
//
// Every video derives its own stream from (seed, index); generation order
// cannot change the output bytes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfe/image_io.hpp"
#include "dfe/random.hpp"
#include "dfe/tensor.hpp"

namespace dfe {

struct FaceBox {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  bool operator==(const FaceBox&) const = default;
};

struct Detection {
  FaceBox box;
  double confidence = 0.0;
  bool operator==(const Detection&) const = default;
};

enum class Split { train, val, test };
const char* split_name(Split s);
Split parse_split(const std::string& name);

enum class ArtifactMode { none, seam, flicker, both };
const char* artifact_mode_name(ArtifactMode m);
ArtifactMode parse_artifact_mode(const std::string& name);

// Concrete artifact parameters of one fake.
struct ArtifactDraw {
  ArtifactMode mode = ArtifactMode::none;
  double seam_strength = 0.0;      // intensity levels
  double flicker_amplitude = 0.0;  // intensity levels
  std::size_t flicker_period = 4;  // frames
  double flicker_phase = 0.0;      // radians
  std::size_t seam_width = 2;      // full-strength band, pixels
  double blend_softness = 0.0;     // linear fall-off beyond the band, pixels
  bool operator==(const ArtifactDraw&) const = default;
};

struct ArtifactConfig {
  double spatial_seam_strength = 40.0;
  double temporal_flicker_amplitude = 10.0;
  std::size_t flicker_period = 4;
  double blend_softness = 2.0;
  std::size_t seam_width = 3;
  // Relative weights of the three fake modes.
  double seam_weight = 1.0;
  double flicker_weight = 1.0;
  double both_weight = 1.0;
  double strength_jitter = 0.5;  // in [0,1)

  void validate() const;
};

ArtifactDraw sample_artifacts(const ArtifactConfig& cfg, Rng& rng);

struct VideoClip {
  std::string video_id;
  int label = 0;
  Split split = Split::train;
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;          // T x H x W x 3
  std::vector<FaceBox> face_boxes;           // true face box per frame
  std::vector<std::vector<Detection>> detections;  // simulated detector, per frame
  ArtifactDraw artifacts;                    // mode none for real videos

  std::uint8_t* frame_data(std::size_t t) { return pixels.data() + t * height * width * 3; }
  const std::uint8_t* frame_data(std::size_t t) const {
    return pixels.data() + t * height * width * 3;
  }
  Image frame(std::size_t t) const;
  void validate() const;
  bool operator==(const VideoClip&) const = default;
};

struct RenderConfig {
  std::size_t frames = 32;
  std::size_t height = 128;
  std::size_t width = 128;
  double brightness_offset = 30.0;  // real per-video face brightness in [-b, b]
  double sensor_noise = 3.0;        // per-frame noise sigma (triangular), intensity levels
  double detection_margin = 0.25;   // detector box = face box grown by this fraction per side
  std::size_t max_decoys = 2;

  void validate() const;
};

VideoClip render_real_video(const RenderConfig& cfg, Rng& rng, const std::string& video_id);

// Applies the draw to a copy of `video` (pixels only; boxes and detections are
// untouched). Mode none, or zero strengths, is the identity.
VideoClip inject_fake_artifacts(const VideoClip& video, const ArtifactDraw& draw);
VideoClip inject_fake_artifacts(const VideoClip& video, const ArtifactConfig& cfg, Rng& rng);

// Ellipse inscribed in the face box, the region flicker modulates.
bool in_face_ellipse(const FaceBox& box, std::size_t x, std::size_t y);
// Seam weight of pixel (x,y) in [0,1]: 1 on the band, linear fall-off inward.
double seam_weight(const FaceBox& box, std::size_t x, std::size_t y, std::size_t width,
                   double softness);

struct CorpusSpec {
  std::size_t n_real = 120;
  std::size_t n_fake = 480;
  RenderConfig render;
  ArtifactConfig artifacts;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ManifestRow {
  std::string video_id;
  std::string path;  // relative to the corpus root: the video directory
  int label = 0;
  Split split = Split::train;
  bool operator==(const ManifestRow&) const = default;
};

struct CorpusManifest {
  std::vector<ManifestRow> rows;
  std::size_t count(int label) const;
  std::size_t count(int label, Split split) const;
};

std::string video_id_for(std::size_t index);
// Label and split of every video index: reals are indices [0, n_real), fakes
// follow; each class is shuffled and cut train / val / test by fraction.
std::vector<ManifestRow> plan_corpus(const CorpusSpec& spec);
// Video `index` of the corpus, identical to what generate_corpus writes.
VideoClip synthesize_video(const CorpusSpec& spec, std::size_t index);

CorpusManifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

std::string encode_manifest(const CorpusManifest& manifest);
CorpusManifest decode_manifest(const std::string& text);
CorpusManifest read_manifest(const std::filesystem::path& path);

// Per-video header: key = value lines.
std::string encode_video_header(const VideoClip& video);
void write_video(const VideoClip& video, const std::filesystem::path& dir);
VideoClip read_video(const std::filesystem::path& dir);

struct FaceCrop {
  Image crop;           // size x size RGB
  double confidence = 0.0;
  std::size_t index = 0;  // chosen candidate
  FaceBox region;         // square-ish region actually cropped, inside the frame
};

// Highest confidence wins, the lower index on ties. The box is grown to a
// square about its centre (shorter side padded), shifted inside the frame,
// clipped if still larger than the frame, and resized by nearest neighbour.
FaceCrop extract_face(const Image& frame, const std::vector<Detection>& candidates,
                      std::size_t size = 64);
Image resize_nearest(const Image& src, const FaceBox& region, std::size_t out_w,
                     std::size_t out_h);
// `box` in frame coordinates mapped into the crop of `region` (size x size).
FaceBox map_to_crop(const FaceBox& box, const FaceBox& region, std::size_t size);

// round(i*(T-1)/(k-1)) with halves rounded up; cyclic 0..T-1 repeats if T < k.
std::vector<std::size_t> sample_frames(std::size_t frame_count, std::size_t k);

// All per-frame face crops of one video, the unit both branches consume.
struct FaceTrack {
  std::string video_id;
  int label = 0;
  Split split = Split::train;
  std::size_t size = 64;
  std::vector<Image> crops;           // one per frame
  std::vector<FaceBox> artifact_box;  // true face box in crop coordinates, per frame
  ArtifactDraw artifacts;
};

FaceTrack extract_track(const VideoClip& video, std::size_t size = 64);

// Crop -> [3,S,S] in [0,1].
Tensor<float> image_to_tensor(const Image& img);
void image_to_tensor(const Image& img, float* dst);

// Two-sample Kolmogorov-Smirnov statistic of 8-bit luma histograms.
double ks_statistic(const Image& a, const Image& b);

}  // namespace dfe
