#include "dfe/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>

#include "CLI11.hpp"
#include "dfe/checkpoint.hpp"
#include "dfe/errors.hpp"
#include "dfe/keyvalue.hpp"

namespace dfe {

namespace {

using Setter = std::function<void(RunConfig&, const KvEntry&, const std::string&)>;
using SectionTable = std::map<std::string, Setter>;

std::string where(const KvEntry& e, const std::string& source) {
  return source + ":" + std::to_string(e.line) + ": ";
}

std::size_t kv_size(const KvEntry& e, const std::string& src) {
  return static_cast<std::size_t>(kv_u64(e, src));
}

std::vector<std::size_t> kv_size_list(const KvEntry& e, const std::string& src) {
  std::vector<std::size_t> out;
  for (const auto& part : split(e.value, ',')) {
    KvEntry item = e;
    item.value = trim(part);
    out.push_back(kv_size(item, src));
  }
  if (out.empty()) throw ConfigError(where(e, src) + "key '" + e.key + "' expects a list");
  return out;
}

// "24/2, 48/2, 96/2": out_channels/stride per MBConv block.
std::vector<MBConvPlan> kv_blocks(const KvEntry& e, const std::string& src) {
  std::vector<MBConvPlan> out;
  for (const auto& part : split(e.value, ',')) {
    const auto cs = split(trim(part), '/');
    if (cs.size() != 2) {
      throw ConfigError(where(e, src) + "key 'blocks' expects channels/stride pairs, got '" + e.value + "'");
    }
    KvEntry c = e, s = e;
    c.value = trim(cs[0]);
    s.value = trim(cs[1]);
    out.push_back({kv_size(c, src), kv_size(s, src)});
  }
  return out;
}

template <typename F>
Setter set_double(F field) {
  return [field](RunConfig& cfg, const KvEntry& e, const std::string& src) { field(cfg) = kv_double(e, src); };
}
template <typename F>
Setter set_size(F field) {
  return [field](RunConfig& cfg, const KvEntry& e, const std::string& src) { field(cfg) = kv_size(e, src); };
}
template <typename F>
Setter set_bool(F field) {
  return [field](RunConfig& cfg, const KvEntry& e, const std::string& src) { field(cfg) = kv_bool(e, src); };
}

// Keys shared by both training sections.
void add_train_keys(SectionTable& t, TrainConfig& (*pick)(RunConfig&)) {
  t["learning_rate"] = set_double([pick](RunConfig& c) -> double& { return pick(c).learning_rate; });
  t["beta1"] = set_double([pick](RunConfig& c) -> double& { return pick(c).beta1; });
  t["beta2"] = set_double([pick](RunConfig& c) -> double& { return pick(c).beta2; });
  t["epsilon"] = set_double([pick](RunConfig& c) -> double& { return pick(c).epsilon; });
  t["prob_clip"] = set_double([pick](RunConfig& c) -> double& { return pick(c).prob_clip; });
  t["batch_size"] = set_size([pick](RunConfig& c) -> std::size_t& { return pick(c).batch_size; });
  t["epochs"] = set_size([pick](RunConfig& c) -> std::size_t& { return pick(c).epochs; });
  t["frames_per_video"] = set_size([pick](RunConfig& c) -> std::size_t& { return pick(c).frames_per_video; });
  t["balanced"] = set_bool([pick](RunConfig& c) -> bool& { return pick(c).balanced; });
  t["augment"] = set_bool([pick](RunConfig& c) -> bool& { return pick(c).augment; });
}

const std::map<std::string, SectionTable>& sections() {
  static const std::map<std::string, SectionTable> table = [] {
    std::map<std::string, SectionTable> s;

    auto& c = s["corpus"];
    c["n_real"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.n_real; });
    c["n_fake"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.n_fake; });
    c["train_fraction"] = set_double([](RunConfig& r) -> double& { return r.corpus.train_fraction; });
    c["val_fraction"] = set_double([](RunConfig& r) -> double& { return r.corpus.val_fraction; });
    c["frames"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.render.frames; });
    c["height"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.render.height; });
    c["width"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.render.width; });
    c["brightness_offset"] = set_double([](RunConfig& r) -> double& { return r.corpus.render.brightness_offset; });
    c["sensor_noise"] = set_double([](RunConfig& r) -> double& { return r.corpus.render.sensor_noise; });
    c["detection_margin"] = set_double([](RunConfig& r) -> double& { return r.corpus.render.detection_margin; });
    c["max_decoys"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.render.max_decoys; });
    c["seam_strength"] = set_double([](RunConfig& r) -> double& { return r.corpus.artifacts.spatial_seam_strength; });
    c["flicker_amplitude"] =
        set_double([](RunConfig& r) -> double& { return r.corpus.artifacts.temporal_flicker_amplitude; });
    c["flicker_period"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.artifacts.flicker_period; });
    c["blend_softness"] = set_double([](RunConfig& r) -> double& { return r.corpus.artifacts.blend_softness; });
    c["seam_width"] = set_size([](RunConfig& r) -> std::size_t& { return r.corpus.artifacts.seam_width; });
    c["seam_weight"] = set_double([](RunConfig& r) -> double& { return r.corpus.artifacts.seam_weight; });
    c["flicker_weight"] = set_double([](RunConfig& r) -> double& { return r.corpus.artifacts.flicker_weight; });
    c["both_weight"] = set_double([](RunConfig& r) -> double& { return r.corpus.artifacts.both_weight; });
    c["strength_jitter"] = set_double([](RunConfig& r) -> double& { return r.corpus.artifacts.strength_jitter; });
    c["crop_size"] = set_size([](RunConfig& r) -> std::size_t& { return r.crop_size; });

    auto& t2 = s["train2d"];
    add_train_keys(t2, [](RunConfig& r) -> TrainConfig& { return r.train2d.train; });
    t2["faces_per_video"] = set_size([](RunConfig& r) -> std::size_t& { return r.train2d.train.faces_per_video; });
    t2["stem_channels"] = set_size([](RunConfig& r) -> std::size_t& { return r.train2d.arch.stem_channels; });
    t2["expansion"] = set_size([](RunConfig& r) -> std::size_t& { return r.train2d.arch.expansion; });
    t2["attention_after_block"] =
        set_size([](RunConfig& r) -> std::size_t& { return r.train2d.arch.attention_after_block; });
    t2["attention_bias"] = set_bool([](RunConfig& r) -> bool& { return r.train2d.arch.attention_bias; });
    t2["blocks"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      r.train2d.arch.blocks = kv_blocks(e, src);
    };

    auto& t3 = s["train3d"];
    add_train_keys(t3, [](RunConfig& r) -> TrainConfig& { return r.train3d.train; });
    t3["clip_length"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      r.train3d.arch.clip_length = r.train3d.train.clip_length = kv_size(e, src);
    };
    t3["cutmix"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      if (e.value == "auto") {
        r.train3d.cutmix.reset();
      } else {
        r.train3d.cutmix = kv_bool(e, src);
      }
    };
    t3["cutmix_probability"] = set_double([](RunConfig& r) -> double& { return r.train3d.train.cutmix_probability; });
    t3["stem_channels"] = set_size([](RunConfig& r) -> std::size_t& { return r.train3d.arch.stem_channels; });
    t3["temporal_kernel"] = set_size([](RunConfig& r) -> std::size_t& { return r.train3d.arch.temporal_kernel; });
    t3["stage_channels"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      r.train3d.arch.stage_channels = kv_size_list(e, src);
    };
    t3["inception_branch_channels"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      r.train3d.arch.inception_branch_channels = kv_size_list(e, src);
    };

    auto& a = s["augment"];
    a["p_downscale"] = set_double([](RunConfig& r) -> double& { return r.augment.p_downscale; });
    a["min_scale"] = set_double([](RunConfig& r) -> double& { return r.augment.min_scale; });
    a["p_flip"] = set_double([](RunConfig& r) -> double& { return r.augment.p_flip; });
    a["p_brightness_contrast"] = set_double([](RunConfig& r) -> double& { return r.augment.p_brightness_contrast; });
    a["brightness"] = set_double([](RunConfig& r) -> double& { return r.augment.brightness; });
    a["contrast"] = set_double([](RunConfig& r) -> double& { return r.augment.contrast; });
    a["p_hue_saturation"] = set_double([](RunConfig& r) -> double& { return r.augment.p_hue_saturation; });
    a["hue"] = set_double([](RunConfig& r) -> double& { return r.augment.hue; });
    a["saturation"] = set_double([](RunConfig& r) -> double& { return r.augment.saturation; });
    a["p_shear"] = set_double([](RunConfig& r) -> double& { return r.augment.p_shear; });
    a["shear_degrees"] = set_double([](RunConfig& r) -> double& { return r.augment.shear_degrees; });
    a["p_rotate"] = set_double([](RunConfig& r) -> double& { return r.augment.p_rotate; });
    a["rotate_degrees"] = set_double([](RunConfig& r) -> double& { return r.augment.rotate_degrees; });
    a["p_noise"] = set_double([](RunConfig& r) -> double& { return r.augment.p_noise; });
    a["noise_sigma"] = set_double([](RunConfig& r) -> double& { return r.augment.noise_sigma; });
    a["mean"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      r.augment.mean = static_cast<float>(kv_double(e, src));
    };
    a["stdev"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      r.augment.stdev = static_cast<float>(kv_double(e, src));
    };

    auto& en = s["ensemble"];
    en["w3d"] = set_double([](RunConfig& r) -> double& { return r.ensemble.w3d; });
    en["w2d"] = set_double([](RunConfig& r) -> double& { return r.ensemble.w2d; });
    en["grid_step"] = set_double([](RunConfig& r) -> double& { return r.ensemble.grid_step; });
    en["frames_per_video"] = set_size([](RunConfig& r) -> std::size_t& { return r.ensemble.frames_per_video; });
    en["clip_length"] = set_size([](RunConfig& r) -> std::size_t& { return r.ensemble.clip_length; });
    en["vote"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      try {
        r.ensemble.vote_mode = parse_vote_mode(e.value);
      } catch (const Error& ex) {
        throw ConfigError(where(e, src) + ex.what());
      }
    };
    en["weight_fit"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      try {
        r.ensemble.weight_fit = parse_weight_fit(e.value);
      } catch (const Error& ex) {
        throw ConfigError(where(e, src) + ex.what());
      }
    };

    auto& rp = s["report"];
    rp["split"] = [](RunConfig& r, const KvEntry& e, const std::string& src) {
      try {
        r.report.split = parse_split(e.value);
      } catch (const Error& ex) {
        throw ConfigError(where(e, src) + ex.what());
      }
    };
    rp["title"] = [](RunConfig& r, const KvEntry& e, const std::string&) { r.report.title = e.value; };
    return s;
  }();
  return table;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void RunConfig::validate() const {
  corpus.validate();
  if (crop_size < 8) throw ConfigError("corpus: crop_size must be >= 8");
  train2d.train.validate();
  train2d.arch.validate();
  train3d.train.validate();
  train3d.arch.validate();
  augment.validate();
  ensemble.validate();
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  for (const auto& e : parse_kv(text, source)) {
    if (e.section.empty()) {
      throw ConfigError(where(e, source) + "key '" + e.key + "' outside any [section]");
    }
    const auto sec = sections().find(e.section);
    if (sec == sections().end()) {
      throw ConfigError(where(e, source) + "unknown section [" + e.section + "]");
    }
    const auto key = sec->second.find(e.key);
    if (key == sec->second.end()) {
      throw ConfigError(where(e, source) + "unknown key '" + e.key + "' in [" + e.section + "]");
    }
    const auto [it, fresh] = seen.emplace(std::make_pair(e.section, e.key), e.line);
    if (!fresh) {
      throw ConfigError(where(e, source) + "key '" + e.key + "' repeats line " + std::to_string(it->second));
    }
    key->second(cfg, e, source);
  }
  cfg.train2d.arch.input_size = cfg.crop_size;
  cfg.train3d.arch.input_size = cfg.crop_size;
  try {
    cfg.validate();
  } catch (const ConfigError& ex) {
    throw ConfigError(source + ": " + ex.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw IoError("cannot read config file " + path.string());
  }
  return parse_run_config(text, path.string());
}

std::uint64_t corpus_seed(std::uint64_t root) { return derive_seed(root, fnv1a("corpus")); }
std::uint64_t model_seed(std::uint64_t root, const std::string& arch) {
  return derive_seed(root, fnv1a("model:" + arch));
}

bool is_known_arch(const std::string& arch) { return arch == kAttention2DArch || is_arch3d_name(arch); }

Branch arch_branch(const std::string& arch) {
  if (arch == kAttention2DArch) return Branch::two_d;
  if (is_arch3d_name(arch)) return Branch::three_d;
  throw ConfigError("unknown architecture '" + arch +
                    "' (expected attention2d, i3d_lite, res3d_lite, mc3_lite or r2p1d_lite)");
}

Model<float> build_arch(const std::string& arch, const RunConfig& cfg, std::uint64_t seed) {
  if (arch_branch(arch) == Branch::two_d) {
    Attention2DConfig a = cfg.train2d.arch;
    a.input_size = cfg.crop_size;
    return build_attention2d(a, seed);
  }
  Arch3D a = cfg.train3d.arch;
  a.kind = parse_arch3d(arch);
  a.input_size = cfg.crop_size;
  return build_3d(a, seed);
}

TrainConfig train_config_for(const std::string& arch, const RunConfig& cfg, std::uint64_t root) {
  TrainConfig tc;
  if (arch_branch(arch) == Branch::two_d) {
    tc = cfg.train2d.train;
    tc.cutmix = false;
  } else {
    tc = cfg.train3d.train;
    const Arch3DKind k = parse_arch3d(arch);
    tc.cutmix = cfg.train3d.cutmix.value_or(k == Arch3DKind::i3d_lite || k == Arch3DKind::r2p1d_lite);
    tc.clip_length = cfg.train3d.arch.clip_length;
  }
  tc.seed = model_seed(root, arch);
  return tc;
}

TrainResult train_arch(const std::string& arch, std::span<const FaceTrack> tracks, const RunConfig& cfg,
                       std::uint64_t root, const EpochCallback& on_epoch) {
  const TrainConfig tc = train_config_for(arch, cfg, root);
  return train(build_arch(arch, cfg, tc.seed), tracks, arch_branch(arch), tc, cfg.augment, on_epoch);
}

Model<float> load_model(const std::filesystem::path& checkpoint, const RunConfig& cfg) {
  if (!std::filesystem::is_regular_file(checkpoint)) {
    throw ConfigError("missing checkpoint " + checkpoint.string());
  }
  const auto records = read_checkpoint(checkpoint);
  const std::string arch = checkpoint_arch(records);
  if (!is_known_arch(arch)) {
    throw ConfigError(checkpoint.string() + ": unknown architecture '" + arch + "'");
  }
  Model<float> model = build_arch(arch, cfg, 0);
  try {
    assign_parameters(model, records);
  } catch (const Error& ex) {
    throw ConfigError(checkpoint.string() + " does not match the configured " + arch + ": " + ex.what());
  }
  return model;
}

std::vector<FaceTrack> load_tracks(const std::filesystem::path& corpus_dir, std::size_t crop_size,
                                   std::span<const Split> splits, std::ostream* warn) {
  const auto manifest_path = corpus_dir / "manifest.csv";
  if (!std::filesystem::is_regular_file(manifest_path)) {
    throw DataError("no manifest at " + manifest_path.string());
  }
  const CorpusManifest m = read_manifest(manifest_path);
  std::vector<FaceTrack> tracks;
  for (const auto& row : m.rows) {
    if (!splits.empty() && std::find(splits.begin(), splits.end(), row.split) == splits.end()) continue;
    const auto dir = corpus_dir / row.path;
    if (!std::filesystem::is_directory(dir)) {
      throw DataError(manifest_path.string() + ": video directory " + dir.string() + " does not exist");
    }
    VideoClip v = read_video(dir);
    if (v.video_id != row.video_id || v.label != row.label) {
      throw DataError(dir.string() + ": header disagrees with the manifest row of " + row.video_id);
    }
    v.split = row.split;
    try {
      tracks.push_back(extract_track(v, crop_size));
    } catch (const ExtractionError& ex) {
      if (warn) *warn << "warning: skipping " << row.video_id << ": " << ex.what() << "\n";
    }
  }
  return tracks;
}

namespace {

struct Reference {
  const char* name;
  double auc, logloss;
};

// Published DFDC results, shown for orientation only.
constexpr Reference kReference[] = {
    {"XN", 0.8784, 0.4897},     {"E4", 0.8766, 0.4819},          {"E4A", 0.8642, 0.5133},
    {"E4+E4A", 0.8785, 0.4731}, {"E4AS", 0.836, 0.5507},         {"E4+E4A+E4AS", 0.8751, 0.4717},
    {"3D", 0.8821, 0.4741},     {"2D", 0.8796, 0.4691},          {"3D+2D", 0.8969, 0.4641},
};

const Reference* reference(const std::string& name) {
  for (const auto& r : kReference) {
    if (name == r.name) return &r;
  }
  return nullptr;
}

std::string fixed4(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? fixed4(v) : "-"; }

constexpr const char* kPaperColumn = "paper (DFDC, not reproduced)";

}  // namespace

ReportTable make_report(const EnsembleResult& result, std::span<const NamedModel> models,
                        const std::string& title) {
  ReportTable t;
  t.title = title;
  const auto& per = result.report.per_model;
  if (per.size() != models.size() + 2) throw UsageError("make_report: result does not match the models");
  std::size_t n2 = 0, n3 = 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    ReportRow row{models[i].name, per[i].auc, per[i].logloss, {}, {}};
    if (models[i].branch == Branch::two_d) {
      ++n2;
      if (models[i].name == kAttention2DArch) {
        row.paper_auc = reference("2D")->auc;
        row.paper_logloss = reference("2D")->logloss;
      }
    } else {
      ++n3;
    }
    t.measured.push_back(row);
  }
  const ModelMetrics& b2 = per[models.size()];
  const ModelMetrics& b3 = per[models.size() + 1];
  if (n3 >= 2) t.measured.push_back({"3D branch", b3.auc, b3.logloss, reference("3D")->auc, reference("3D")->logloss});
  if (n2 >= 2) t.measured.push_back({"2D branch", b2.auc, b2.logloss, reference("2D")->auc, reference("2D")->logloss});
  if (n2 > 0 && n3 > 0) {
    t.measured.push_back({"fused 3D + 2D", result.report.auc, result.report.logloss, reference("3D+2D")->auc,
                          reference("3D+2D")->logloss});
  }
  for (const auto& r : kReference) t.reference.push_back({r.name, {}, {}, r.auc, r.logloss});
  return t;
}

std::string ReportTable::markdown() const {
  std::string s = "# " + title + "\n\n";
  s += std::string("| combination | AUC | LogLoss | ") + kPaperColumn + " AUC | " + kPaperColumn + " LogLoss |\n";
  s += "|---|---|---|---|---|\n";
  for (const auto& r : measured) {
    s += "| " + r.combination + " | " + cell(r.auc) + " | " + cell(r.logloss) + " | " + cell(r.paper_auc) + " | " +
         cell(r.paper_logloss) + " |\n";
  }
  s += std::string("\n## ") + kPaperColumn + "\n\n";
  s += "| combination | AUC | LogLoss |\n|---|---|---|\n";
  for (const auto& r : reference) {
    s += "| " + r.combination + " | " + cell(r.paper_auc) + " | " + cell(r.paper_logloss) + " |\n";
  }
  return s;
}

std::string ReportTable::csv() const {
  std::string s = "section,combination,auc,logloss,paper_auc,paper_logloss\n";
  auto emit = [&](const char* section, const ReportRow& r) {
    s += std::string(section) + "," + r.combination + "," + fixed4(r.auc) + "," + fixed4(r.logloss) + "," +
         fixed4(r.paper_auc) + "," + fixed4(r.paper_logloss) + "\n";
  };
  for (const auto& r : measured) emit("measured", r);
  for (const auto& r : reference) emit("reference", r);
  return s;
}

namespace cli {

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool verbose = false;
};

RunConfig config_of(const Globals& g) {
  if (g.config.empty()) {
    RunConfig cfg;
    cfg.validate();
    return cfg;
  }
  return load_run_config(g.config);
}

// Writes and reads back; a mismatch is an I/O failure.
void write_checked(const std::filesystem::path& path, const std::string& bytes) {
  write_file(path, bytes);
  if (read_file(path) != bytes) throw IoError("verification of " + path.string() + " failed");
}

struct LoadedModels {
  std::vector<Model<float>> models;
  std::vector<NamedModel> named;
};

LoadedModels load_models(const std::vector<std::string>& paths, const RunConfig& cfg) {
  LoadedModels lm;
  lm.models.reserve(paths.size());
  for (const auto& p : paths) lm.models.push_back(load_model(p, cfg));
  for (const auto& m : lm.models) lm.named.push_back({m.arch, &m, arch_branch(m.arch)});
  return lm;
}

void print_metrics(std::ostream& out, const std::string& name, double auc_v, double ll) {
  out << name << " auc " << fixed4(auc_v) << " logloss " << fixed4(ll) << "\n";
}

int cmd_generate(const Globals& g, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  RunConfig cfg = config_of(g);
  cfg.corpus.seed = corpus_seed(g.seed);
  if (g.verbose) err << "generating " << cfg.corpus.n_real + cfg.corpus.n_fake << " videos into " << out_dir << "\n";
  const CorpusManifest m = generate_corpus(cfg.corpus, out_dir);
  const CorpusManifest back = read_manifest(std::filesystem::path(out_dir) / "manifest.csv");
  if (back.rows != m.rows) throw IoError("verification of " + out_dir + "/manifest.csv failed");
  out << "wrote " << m.rows.size() << " videos (" << m.count(0) << " real, " << m.count(1) << " fake) to " << out_dir
      << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& corpus, const std::string& branch, const std::string& arch,
              const std::string& checkpoint, std::string history, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_of(g);
  const Branch b = parse_branch(branch);
  if (arch_branch(arch) != b) {
    throw UsageError("architecture " + arch + " belongs to the " + branch_name(arch_branch(arch)) + " branch, not " +
                     branch);
  }
  const auto tracks = load_tracks(corpus, cfg.crop_size, {}, &err);
  const TrainConfig tc = train_config_for(arch, cfg, g.seed);
  if (g.verbose) {
    err << "training " << arch << ": " << tracks.size() << " videos, " << tc.epochs << " epochs, cutmix "
        << (tc.cutmix ? "on" : "off") << "\n";
  }
  const TrainResult res = train_arch(arch, tracks, cfg, g.seed, [&](const HistoryRow& r) {
    if (g.verbose) {
      err << "epoch " << r.epoch << " train " << fixed4(r.train_logloss) << " val " << fixed4(r.val_logloss)
          << " auc " << fixed4(r.val_auc) << "\n";
    }
  });
  write_checkpoint(res.model, checkpoint);
  const auto back = read_checkpoint(checkpoint);
  const auto want = model_parameters(res.model);
  bool same = back.size() == want.size();
  for (std::size_t i = 0; same && i < back.size(); ++i) {
    same = back[i].name == want[i].name && back[i].value == want[i].value;
  }
  if (!same) throw IoError("verification of " + checkpoint + " failed");
  if (history.empty()) history = checkpoint + ".history.csv";
  write_checked(history, res.history.csv());
  out << "trained " << arch << ": best epoch " << res.best_epoch << ", val logloss "
      << fixed4(res.best_val_logloss) << "\n";
  out << "wrote " << checkpoint << " and " << history << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& corpus, const std::string& checkpoint, const std::string& split,
             const std::string& out_csv, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_of(g);
  const Split s = split.empty() ? cfg.report.split : parse_split(split);
  const Model<float> model = load_model(checkpoint, cfg);
  const Branch b = arch_branch(model.arch);
  const Split only[] = {s};
  const auto tracks = load_tracks(corpus, cfg.crop_size, only, &err);
  TrainConfig tc = b == Branch::two_d ? cfg.train2d.train : cfg.train3d.train;
  tc.frames_per_video = cfg.ensemble.frames_per_video;
  tc.clip_length = cfg.ensemble.clip_length;
  const auto recs = score_split(model, tracks, s, b, tc);
  const MetricsReport rep = evaluate_records(recs, tc.prob_clip);
  print_metrics(out, model.arch + " (" + split_name(s) + ")", rep.auc, rep.logloss);
  if (!out_csv.empty()) {
    std::string csv = "video_id,probability,label\n";
    for (const auto& r : recs) csv += r.video_id + "," + format_double(r.probability) + "," + std::to_string(r.label) + "\n";
    write_checked(out_csv, csv);
  }
  return 0;
}

EnsembleResult run_ensemble(const RunConfig& cfg, const std::string& corpus, Split s, const LoadedModels& lm,
                            std::ostream& err) {
  std::vector<Split> splits = {s};
  if (cfg.ensemble.weight_fit == WeightFit::adaptive && s != Split::val) splits.push_back(Split::val);
  const auto tracks = load_tracks(corpus, cfg.crop_size, splits, &err);
  return evaluate_ensemble(tracks, s, lm.named, cfg.ensemble);
}

int cmd_ensemble(const Globals& g, const std::string& corpus, const std::vector<std::string>& checkpoints,
                 const std::string& split, const std::string& out_csv, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_of(g);
  const Split s = split.empty() ? cfg.report.split : parse_split(split);
  const LoadedModels lm = load_models(checkpoints, cfg);
  const EnsembleResult res = run_ensemble(cfg, corpus, s, lm, err);
  for (const auto& m : res.report.per_model) print_metrics(out, m.name, m.auc, m.logloss);
  print_metrics(out, "fused", res.report.auc, res.report.logloss);
  out << "weights w3d " << format_double(res.w3d) << " w2d " << format_double(res.w2d) << "\n";
  write_checked(out_csv, res.table.csv());
  return 0;
}

int cmd_report(const Globals& g, const std::string& corpus, const std::vector<std::string>& checkpoints,
               const std::string& split, const std::string& prefix, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_of(g);
  const Split s = split.empty() ? cfg.report.split : parse_split(split);
  const LoadedModels lm = load_models(checkpoints, cfg);
  const EnsembleResult res = run_ensemble(cfg, corpus, s, lm, err);
  const ReportTable table = make_report(res, lm.named, cfg.report.title);
  write_checked(prefix + ".md", table.markdown());
  write_checked(prefix + ".csv", table.csv());
  out << table.markdown();
  return 0;
}

int cmd_attention_map(const Globals& g, const std::string& checkpoint, const std::string& video, std::size_t frame,
                      const std::string& out_path, std::ostream& out) {
  const RunConfig cfg = config_of(g);
  if (!std::filesystem::is_regular_file(checkpoint)) throw ConfigError("missing checkpoint " + checkpoint);
  const std::string arch = checkpoint_arch(read_checkpoint(checkpoint));
  if (arch != kAttention2DArch) {
    throw UsageError("attention-map needs an attention2d checkpoint, " + checkpoint + " holds " + arch);
  }
  const Model<float> model = load_model(checkpoint, cfg);
  const VideoClip v = read_video(video);
  if (frame >= v.frames) {
    throw UsageError("frame " + std::to_string(frame) + " out of range (video has " + std::to_string(v.frames) + ")");
  }
  const FaceCrop crop = extract_face(v.frame(frame), v.detections[frame], cfg.crop_size);
  const Tensor<float> face = normalize(image_to_tensor(crop.crop));
  export_attention_map(model, face, out_path);
  const Image back = read_pnm(out_path);
  if (back.width != cfg.crop_size || back.height != cfg.crop_size || back.channels != 1) {
    throw IoError("verification of " + out_path + " failed");
  }
  out << "wrote " << out_path << " (" << back.width << "x" << back.height << ")\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deepfake detection toolkit: synthetic corpus, 2D/3D training, ensembles and reports", "dfe"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run config file")->type_name("PATH");
  app.add_option("--seed", g.seed, "root seed")->type_name("U64");
  app.add_flag("--verbose", g.verbose, "progress on stderr");

  std::string out_dir, corpus, branch, arch, checkpoint, history, split, out_path, video;
  std::vector<std::string> checkpoints;
  std::size_t frame = 0;

  auto* gen = app.add_subcommand("generate", "render a synthetic corpus");
  gen->add_option("--out", out_dir, "corpus directory")->required();

  auto* tr = app.add_subcommand("train", "train one model");
  tr->add_option("--corpus", corpus, "corpus directory")->required();
  tr->add_option("--branch", branch, "2d or 3d")->required()->check(CLI::IsMember({"2d", "3d"}));
  tr->add_option("--arch", arch, "attention2d, i3d_lite, res3d_lite, mc3_lite, r2p1d_lite")->required();
  tr->add_option("--out-checkpoint", checkpoint, "DFE1 checkpoint to write")->required();
  tr->add_option("--history", history, "history CSV (default <checkpoint>.history.csv)");

  auto* ev = app.add_subcommand("eval", "score one checkpoint");
  ev->add_option("--corpus", corpus, "corpus directory")->required();
  ev->add_option("--checkpoint", checkpoint, "DFE1 checkpoint")->required();
  ev->add_option("--split", split, "train, val or test (default from config)")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", out_path, "per-video probability CSV");

  auto* en = app.add_subcommand("ensemble", "fuse checkpoints into per-video verdicts");
  en->add_option("--corpus", corpus, "corpus directory")->required();
  en->add_option("--checkpoints", checkpoints, "member checkpoints")->required()->expected(1, -1);
  en->add_option("--split", split, "train, val or test (default from config)")
      ->check(CLI::IsMember({"train", "val", "test"}));
  en->add_option("--out", out_path, "verdict CSV")->required();

  auto* rp = app.add_subcommand("report", "markdown + CSV table of model combinations");
  rp->add_option("--corpus", corpus, "corpus directory")->required();
  rp->add_option("--checkpoints", checkpoints, "member checkpoints")->required()->expected(1, -1);
  rp->add_option("--split", split, "train, val or test (default from config)")
      ->check(CLI::IsMember({"train", "val", "test"}));
  rp->add_option("--out", out_path, "output prefix (<prefix>.md, <prefix>.csv)")->required();

  auto* am = app.add_subcommand("attention-map", "export the attention map of one face as PGM");
  am->add_option("--checkpoint", checkpoint, "attention2d checkpoint")->required();
  am->add_option("--video", video, "video directory")->required();
  am->add_option("--frame", frame, "frame index");
  am->add_option("--out", out_path, "PGM file")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return cmd_generate(g, out_dir, out, err);
    if (*tr) return cmd_train(g, corpus, branch, arch, checkpoint, history, out, err);
    if (*ev) return cmd_eval(g, corpus, checkpoint, split, out_path, out, err);
    if (*en) return cmd_ensemble(g, corpus, checkpoints, split, out_path, out, err);
    if (*rp) return cmd_report(g, corpus, checkpoints, split, out_path, out, err);
    if (*am) return cmd_attention_map(g, checkpoint, video, frame, out_path, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cli

}  // namespace dfe
