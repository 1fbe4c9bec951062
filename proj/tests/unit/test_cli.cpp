#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "doctest.h"
#include "dfe/checkpoint.hpp"
#include "dfe/cli.hpp"
#include "dfe/errors.hpp"
#include "dfe/keyvalue.hpp"

using namespace dfe;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(# tiny corpus for the command tests
[corpus]
n_real = 5
n_fake = 10
frames = 8
height = 48
width = 48
crop_size = 16

[train2d]
epochs = 2
batch_size = 4
faces_per_video = 2
frames_per_video = 4
learning_rate = 1e-3

[train3d]
epochs = 1
batch_size = 4
clip_length = 4
stem_channels = 2
stage_channels = 4, 4, 4

[ensemble]
frames_per_video = 4
clip_length = 4

[report]
title = Tiny table
)";

struct Run {
  int code = 0;
  std::string out, err;
};

Run dfe_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dfe_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    write_file(d / "tiny.cfg", kTinyConfig);
    return d;
  }();
  return dir;
}

std::string cfg() { return (workdir() / "tiny.cfg").string(); }

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

// Corpus shared by the train / eval / report cases.
const fs::path& corpus() {
  static const fs::path dir = [] {
    const fs::path d = workdir() / "corpus";
    REQUIRE(dfe_run({"--config", cfg(), "--seed", "3", "generate", "--out", d.string()}).code == 0);
    return d;
  }();
  return dir;
}

const fs::path& checkpoint(const std::string& arch) {
  static std::map<std::string, fs::path> done;
  auto it = done.find(arch);
  if (it != done.end()) return it->second;
  const fs::path p = workdir() / (arch + ".dfe");
  const std::string branch = arch == "attention2d" ? "2d" : "3d";
  const Run r = dfe_run({"--config", cfg(), "--seed", "3", "train", "--corpus", corpus().string(), "--branch", branch,
                         "--arch", arch, "--out-checkpoint", p.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  return done.emplace(arch, p).first->second;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config parser") {
    const RunConfig c = parse_run_config(kTinyConfig, "tiny.cfg");
    CHECK(c.corpus.n_real == 5);
    CHECK(c.crop_size == 16);
    CHECK(c.train2d.arch.input_size == 16);
    CHECK(c.train3d.arch.input_size == 16);
    CHECK(c.train3d.arch.stage_channels == std::vector<std::size_t>{4, 4, 4});
    CHECK(c.report.title == "Tiny table");
    auto fails_at = [](const std::string& text, const std::string& where) {
      try {
        parse_run_config(text, "x.cfg");
      } catch (const ConfigError& e) {
        const std::string what = e.what();
        INFO(what);
        CHECK(what.find(where) != std::string::npos);
        return;
      }
      FAIL("no ConfigError for: " << text);
    };
    fails_at("[corpus]\nn_rael = 3\n", "x.cfg:2");
    fails_at("[corpus]\nn_real = 3\nn_real = 4\n", "x.cfg:3");
    fails_at("[models]\nx = 1\n", "x.cfg:2: unknown section");
    fails_at("n_real = 3\n", "x.cfg:1");
    fails_at("[train2d]\nlearning_rate = fast\n", "learning_rate");
    fails_at("[train3d]\ncutmix = sometimes\n", "cutmix");
    fails_at("[ensemble]\nw3d = 0.7\nw2d = 0.4\n", "weights");
    CHECK(parse_run_config("", "empty").corpus.n_fake == CorpusSpec{}.n_fake);
  }

  TEST_CASE("missing config names the path") {
    const std::string path = (workdir() / "nope.cfg").string();
    const Run r = dfe_run({"--config", path, "generate", "--out", (workdir() / "x").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find(path) != std::string::npos);
    CHECK_THROWS_AS(load_run_config(path), IoError);
  }

  TEST_CASE("seeds and arch table") {
    CHECK(corpus_seed(1) != corpus_seed(2));
    CHECK(model_seed(1, "res3d_lite") != model_seed(1, "mc3_lite"));
    CHECK(arch_branch("attention2d") == Branch::two_d);
    CHECK(arch_branch("r2p1d_lite") == Branch::three_d);
    CHECK_FALSE(is_known_arch("xception"));
    CHECK_THROWS_AS(arch_branch("xception"), ConfigError);
  }

  TEST_CASE("cutmix defaults per arch") {
    RunConfig c = parse_run_config(kTinyConfig, "tiny.cfg");
    CHECK(train_config_for("i3d_lite", c, 1).cutmix);
    CHECK(train_config_for("r2p1d_lite", c, 1).cutmix);
    CHECK_FALSE(train_config_for("res3d_lite", c, 1).cutmix);
    CHECK_FALSE(train_config_for("mc3_lite", c, 1).cutmix);
    CHECK_FALSE(train_config_for("attention2d", c, 1).cutmix);
    c = parse_run_config("[train3d]\ncutmix = true\n", "t");
    CHECK(train_config_for("res3d_lite", c, 1).cutmix);
    c = parse_run_config("[train3d]\ncutmix = false\n", "t");
    CHECK_FALSE(train_config_for("r2p1d_lite", c, 1).cutmix);
  }

  TEST_CASE("generate: row count and identical trees") {
    const fs::path again = workdir() / "corpus_again";
    const Run r = dfe_run({"--config", cfg(), "--seed", "3", "generate", "--out", again.string()});
    CHECK(r.code == 0);
    const auto m = read_manifest(corpus() / "manifest.csv");
    CHECK(m.rows.size() == 15);
    CHECK(m.count(0) == 5);
    CHECK(tree(corpus()) == tree(again));
    const fs::path other = workdir() / "corpus_other";
    CHECK(dfe_run({"--config", cfg(), "--seed", "4", "generate", "--out", other.string()}).code == 0);
    CHECK(tree(corpus()) != tree(other));
    fs::remove_all(again);
    fs::remove_all(other);
  }

  TEST_CASE("train: checkpoint round trip and history rows") {
    const fs::path& ck = checkpoint("attention2d");
    const auto records = read_checkpoint(ck);
    CHECK(checkpoint_arch(records) == "attention2d");
    const RunConfig c = load_run_config(cfg());
    const Model<float> m = load_model(ck, c);
    const std::string bytes = read_file(ck);
    CHECK(encode_checkpoint(model_parameters(m)) == std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    const std::string hist = read_file(ck.string() + ".history.csv");
    CHECK(hist.starts_with("epoch,train_logloss,val_logloss,val_auc\n"));
    CHECK(count_lines(hist) == 1 + 2);
    const fs::path& ck3 = checkpoint("r2p1d_lite");
    CHECK(count_lines(read_file(ck3.string() + ".history.csv")) == 1 + 1);
  }

  TEST_CASE("train: determinism and usage errors") {
    const fs::path p = workdir() / "again.dfe";
    const Run r = dfe_run({"--config", cfg(), "--seed", "3", "train", "--corpus", corpus().string(), "--branch", "2d",
                           "--arch", "attention2d", "--out-checkpoint", p.string()});
    REQUIRE(r.code == 0);
    CHECK(read_file(p) == read_file(checkpoint("attention2d")));
    CHECK(read_file(p.string() + ".history.csv") == read_file(checkpoint("attention2d").string() + ".history.csv"));
    const Run wrong = dfe_run({"--config", cfg(), "train", "--corpus", corpus().string(), "--branch", "2d", "--arch",
                               "res3d_lite", "--out-checkpoint", p.string()});
    CHECK(wrong.code == 2);
    const Run no_corpus = dfe_run({"--config", cfg(), "train", "--corpus", (workdir() / "none").string(), "--branch",
                                   "2d", "--arch", "attention2d", "--out-checkpoint", p.string()});
    CHECK(no_corpus.code == 1);
    CHECK(no_corpus.err.find("manifest") != std::string::npos);
    CHECK(dfe_run({"--config", cfg(), "train", "--branch", "4d"}).code != 0);
    CHECK(dfe_run({}).code != 0);
  }

  TEST_CASE("eval and ensemble write their CSVs") {
    const fs::path out = workdir() / "eval.csv";
    const Run e = dfe_run({"--config", cfg(), "eval", "--corpus", corpus().string(), "--checkpoint",
                           checkpoint("attention2d").string(), "--split", "test", "--out", out.string()});
    REQUIRE(e.code == 0);
    CHECK(read_file(out).starts_with("video_id,probability,label\n"));
    const auto m = read_manifest(corpus() / "manifest.csv");
    CHECK(count_lines(read_file(out)) == 1 + m.count(0, Split::test) + m.count(1, Split::test));

    const fs::path v = workdir() / "verdicts.csv";
    const Run en = dfe_run({"--config", cfg(), "ensemble", "--corpus", corpus().string(), "--checkpoints",
                            checkpoint("attention2d").string(), checkpoint("r2p1d_lite").string(), "--out", v.string()});
    REQUIRE(en.code == 0);
    CHECK(read_file(v).starts_with("video_id,p2d,p3d,fused,label,pred\n"));
    CHECK(en.out.find("fused auc") != std::string::npos);
    const Run missing = dfe_run({"--config", cfg(), "ensemble", "--corpus", corpus().string(), "--checkpoints",
                                 (workdir() / "gone.dfe").string(), "--out", v.string()});
    CHECK(missing.code != 0);
    CHECK(missing.err.find("gone.dfe") != std::string::npos);
    CHECK(dfe_run({"--config", cfg(), "eval", "--corpus", corpus().string(), "--checkpoint",
                   checkpoint("attention2d").string(), "--split", "holdout"})
              .code != 0);
  }

  TEST_CASE("report: one row per model, the reference column, CSV equals markdown") {
    const std::string prefix = (workdir() / "single").string();
    const Run r = dfe_run({"--config", cfg(), "report", "--corpus", corpus().string(), "--checkpoints",
                           checkpoint("attention2d").string(), "--out", prefix});
    REQUIRE(r.code == 0);
    const std::string csv = read_file(prefix + ".csv"), md = read_file(prefix + ".md");
    std::size_t measured = 0;
    for (const auto& line : split(csv, '\n')) measured += line.starts_with("measured,");
    CHECK(measured == 1);
    CHECK(csv.find("reference,XN,,,0.8784,0.4897") != std::string::npos);
    CHECK(md.find("paper (DFDC, not reproduced)") != std::string::npos);
    CHECK(md.starts_with("# Tiny table\n"));
    // Every numeric cell of the CSV appears in the markdown row of the same combination.
    for (const auto& line : split(csv, '\n')) {
      if (line.empty() || line.starts_with("section,")) continue;
      const auto f = split(line, ',');
      std::string row = "| " + f[1] + " |";
      for (std::size_t i = 2; i < f.size(); ++i) {
        if (f[0] == "reference" && i < 4) continue;
        row += " " + (f[i].empty() ? std::string("-") : f[i]) + " |";
      }
      INFO(row);
      CHECK(md.find(row) != std::string::npos);
    }

    const std::string full = (workdir() / "full").string();
    const Run f = dfe_run({"--config", cfg(), "report", "--corpus", corpus().string(), "--checkpoints",
                           checkpoint("attention2d").string(), checkpoint("r2p1d_lite").string(),
                           checkpoint("res3d_lite").string(), "--out", full});
    REQUIRE(f.code == 0);
    const std::string fcsv = read_file(full + ".csv");
    CHECK(fcsv.find("measured,3D branch,") != std::string::npos);
    CHECK(fcsv.find("measured,fused 3D + 2D,") != std::string::npos);
    CHECK(fcsv.find("measured,2D branch,") == std::string::npos);
    CHECK(fcsv.find("0.8969,0.4641") != std::string::npos);
    const Run again = dfe_run({"--config", cfg(), "report", "--corpus", corpus().string(), "--checkpoints",
                               checkpoint("attention2d").string(), checkpoint("r2p1d_lite").string(),
                               checkpoint("res3d_lite").string(), "--out", full + "2"});
    CHECK(read_file(full + "2.csv") == fcsv);
  }

  TEST_CASE("attention-map: gray zero-head map, size, usage error") {
    const RunConfig c = load_run_config(cfg());
    Attention2DConfig a = c.train2d.arch;
    a.zero_heads = true;
    const fs::path zero = workdir() / "zero.dfe";
    write_checkpoint(build_attention2d(a, 1), zero);
    const std::string video = (corpus() / read_manifest(corpus() / "manifest.csv").rows[0].path).string();
    const fs::path pgm = workdir() / "map.pgm";
    const Run r = dfe_run({"--config", cfg(), "attention-map", "--checkpoint", zero.string(), "--video", video,
                           "--frame", "2", "--out", pgm.string()});
    REQUIRE(r.code == 0);
    const Image img = read_pnm(pgm);
    CHECK(img.width == 16);
    CHECK(img.height == 16);
    CHECK(img.channels == 1);
    for (const auto p : img.pixels) CHECK(p == 128);
    CHECK(dfe_run({"--config", cfg(), "attention-map", "--checkpoint", checkpoint("attention2d").string(), "--video",
                   video, "--out", pgm.string()})
              .code == 0);
    const Run wrong = dfe_run({"--config", cfg(), "attention-map", "--checkpoint", checkpoint("res3d_lite").string(),
                               "--video", video, "--out", pgm.string()});
    CHECK(wrong.code == 2);
    CHECK(wrong.err.find("attention2d") != std::string::npos);
  }

  TEST_CASE("the installed binary reports exit codes") {
    const std::string tool = DFE_TOOL_PATH;
    const std::string log = (workdir() / "tool.log").string();
    CHECK(std::system((tool + " --help > " + log + " 2>&1").c_str()) == 0);
    CHECK(read_file(log).find("generate") != std::string::npos);
    const int missing = std::system((tool + " --config /nonexistent/dfe.cfg generate --out " +
                                     (workdir() / "y").string() + " > " + log + " 2>&1").c_str());
    CHECK(missing != 0);
    CHECK(read_file(log).find("/nonexistent/dfe.cfg") != std::string::npos);
  }
}
