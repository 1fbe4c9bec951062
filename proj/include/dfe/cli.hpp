#pragma once

// Run configuration and the `dfe` command surface.
//
// A run config is sectioned key = value text ([corpus], [train2d], [train3d],
// [augment], [ensemble], [report]); every key is optional and unknown keys are
// rejected. Together with the root seed it determines every artifact.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dfe/attention2d.hpp"
#include "dfe/augment.hpp"
#include "dfe/ensemble.hpp"
#include "dfe/synthvid.hpp"
#include "dfe/trainer.hpp"
#include "dfe/zoo3d.hpp"

namespace dfe {

struct Train2DSettings {
  TrainConfig train;
  Attention2DConfig arch;
};

struct Train3DSettings {
  TrainConfig train;
  Arch3D arch;  // kind is picked per command
  // Unset: on for i3d_lite and r2p1d_lite, off for res3d_lite and mc3_lite.
  std::optional<bool> cutmix;
};

struct ReportSettings {
  Split split = Split::test;
  std::string title = "Model combinations";
};

struct RunConfig {
  CorpusSpec corpus;  // seed comes from the root seed
  std::size_t crop_size = 64;
  Train2DSettings train2d;
  Train3DSettings train3d;
  AugPolicy augment;
  EnsembleConfig ensemble;
  ReportSettings report;

  void validate() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& source);
// IoError naming the path when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

// Seeds of one run, all derived from the root seed.
std::uint64_t corpus_seed(std::uint64_t root);
std::uint64_t model_seed(std::uint64_t root, const std::string& arch);

bool is_known_arch(const std::string& arch);
Branch arch_branch(const std::string& arch);  // ConfigError on unknown names

// Fresh model of `arch` sized by the config (input = crop_size).
Model<float> build_arch(const std::string& arch, const RunConfig& cfg, std::uint64_t seed);
// Trainer settings of `arch`, with the per-arch CutMix default applied.
TrainConfig train_config_for(const std::string& arch, const RunConfig& cfg, std::uint64_t root);

TrainResult train_arch(const std::string& arch, std::span<const FaceTrack> tracks,
                       const RunConfig& cfg, std::uint64_t root, const EpochCallback& on_epoch = {});

// Rebuilds the architecture named by the checkpoint and loads its tensors.
Model<float> load_model(const std::filesystem::path& checkpoint, const RunConfig& cfg);

// Reads the manifest and extracts the face track of every listed video of
// `splits` (empty = all). Videos without a detection are skipped with a
// warning on `warn`.
std::vector<FaceTrack> load_tracks(const std::filesystem::path& corpus_dir, std::size_t crop_size,
                                   std::span<const Split> splits, std::ostream* warn);

struct ReportRow {
  std::string combination;
  std::optional<double> auc, logloss;  // measured; empty on reference rows
  std::optional<double> paper_auc, paper_logloss;
};

struct ReportTable {
  std::string title;
  std::vector<ReportRow> measured;
  std::vector<ReportRow> reference;
  std::string markdown() const;
  // section,combination,auc,logloss,paper_auc,paper_logloss
  std::string csv() const;
};

// One row per member, then "3D branch" / "2D branch" when that branch holds
// two or more models, then "fused 3D + 2D" when both branches are present.
ReportTable make_report(const EnsembleResult& result, std::span<const NamedModel> models,
                        const std::string& title);

namespace cli {

// argv without the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cli

}  // namespace dfe
