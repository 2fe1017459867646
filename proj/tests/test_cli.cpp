#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmfa/commands.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "mmfa_cli_test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(std::initializer_list<std::string> args) {
  return mmfa::cli::dispatch(std::vector<std::string>(args));
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

constexpr const char* kQuickConfig =
    "train.epochs = 2\n"
    "train.warmup_epochs = 2\n"
    "data.identities_per_domain = 8\n"
    "eval.trials = 2\n";

}  // namespace

TEST_CASE("full pipeline through the command surface") {
  TempDir tmp;
  const std::string cfg = tmp / "run.cfg";
  write_file(cfg, kQuickConfig);
  const std::string dataset = tmp / "corpus.mmfa";
  const std::string out_dir = tmp / "run_out";

  REQUIRE(run({"gen-data", cfg, dataset}) == 0);
  REQUIRE(fs::exists(dataset));

  REQUIRE(run({"train", cfg, dataset, out_dir}) == 0);
  CHECK(fs::exists(out_dir + "/metrics.csv"));
  CHECK(fs::exists(out_dir + "/model_final.ckpt"));
  CHECK(fs::exists(out_dir + "/provenance.cfg"));

  const std::string features = tmp / "codes.csv";
  REQUIRE(run({"extract", out_dir + "/model_final.ckpt", dataset, features}) == 0);
  const std::string feature_text = file_bytes(features);
  CHECK(feature_text.find("index,identity,domain,h0") != std::string::npos);

  const std::string report = tmp / "report";
  REQUIRE(run({"eval", out_dir + "/model_final.ckpt", dataset, report, cfg}) == 0);
  CHECK(fs::exists(report + ".json"));
  CHECK(fs::exists(report + ".csv"));
}

TEST_CASE("reruns under the same config are byte-identical, including via provenance") {
  TempDir tmp;
  const std::string cfg = tmp / "run.cfg";
  write_file(cfg, kQuickConfig);
  const std::string dataset = tmp / "corpus.mmfa";
  REQUIRE(run({"gen-data", cfg, dataset}) == 0);

  const std::string out1 = tmp / "out1";
  const std::string out2 = tmp / "out2";
  REQUIRE(run({"train", cfg, dataset, out1}) == 0);
  REQUIRE(run({"train", cfg, dataset, out2}) == 0);
  CHECK(file_bytes(out1 + "/metrics.csv") == file_bytes(out2 + "/metrics.csv"));
  CHECK(file_bytes(out1 + "/model_final.ckpt") == file_bytes(out2 + "/model_final.ckpt"));

  // the provenance block is itself a valid config reproducing the run
  const std::string out3 = tmp / "out3";
  REQUIRE(run({"train", out1 + "/provenance.cfg", dataset, out3}) == 0);
  CHECK(file_bytes(out1 + "/metrics.csv") == file_bytes(out3 + "/metrics.csv"));
  CHECK(file_bytes(out1 + "/model_final.ckpt") == file_bytes(out3 + "/model_final.ckpt"));

  const std::string data2 = tmp / "corpus2.mmfa";
  REQUIRE(run({"gen-data", out1 + "/provenance.cfg", data2}) == 0);
  CHECK(file_bytes(dataset) == file_bytes(data2));
}

TEST_CASE("grad-check passes on a small config") {
  TempDir tmp;
  const std::string cfg = tmp / "run.cfg";
  write_file(cfg,
             "model.input_dim = 6\n"
             "model.block_widths = 8 8\n"
             "model.hidden_dim = 4\n"
             "data.identities_per_domain = 4\n"
             "model.in_blocks = 1\n");
  CHECK(run({"grad-check", cfg}) == 0);
}

TEST_CASE("validation failures exit 1 with the offending token named") {
  TempDir tmp;
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({}) == 1);
  CHECK(run({"train", "a", "b"}) == 1);  // wrong arity

  const std::string bad_cfg = tmp / "bad.cfg";
  write_file(bad_cfg, "train.epocs = 5\n");
  CHECK(run({"gen-data", bad_cfg, tmp / "x.mmfa"}) == 1);
}

TEST_CASE("missing files exit 2") {
  TempDir tmp;
  CHECK(run({"gen-data", tmp / "nonexistent.cfg", tmp / "x.mmfa"}) == 2);
  const std::string cfg = tmp / "ok.cfg";
  write_file(cfg, kQuickConfig);
  CHECK(run({"train", cfg, tmp / "missing.mmfa", tmp / "out"}) == 2);
}

TEST_CASE("checkpoint/dataset dimension mismatch is a named validation error") {
  TempDir tmp;
  const std::string cfg = tmp / "run.cfg";
  write_file(cfg, kQuickConfig);
  const std::string dataset = tmp / "corpus.mmfa";
  const std::string out_dir = tmp / "out";
  REQUIRE(run({"gen-data", cfg, dataset}) == 0);
  REQUIRE(run({"train", cfg, dataset, out_dir}) == 0);

  const std::string other_cfg = tmp / "wide.cfg";
  write_file(other_cfg, std::string(kQuickConfig) + "model.input_dim = 24\n");
  const std::string wide_data = tmp / "wide.mmfa";
  REQUIRE(run({"gen-data", other_cfg, wide_data}) == 0);

  CHECK(run({"eval", out_dir + "/model_final.ckpt", wide_data, tmp / "rep"}) == 1);
}

TEST_CASE("ablate writes one report per toggle row plus a summary") {
  TempDir tmp;
  const std::string cfg = tmp / "run.cfg";
  write_file(cfg,
             "train.epochs = 2\n"
             "train.warmup_epochs = 2\n"
             "data.identities_per_domain = 6\n"
             "eval.trials = 1\n");
  const std::string out_dir = tmp / "ablation";
  REQUIRE(run({"ablate", cfg, out_dir}) == 0);

  for (const char* row : {"baseline", "in", "in_triplet", "in_triplet_aae", "full"}) {
    CAPTURE(row);
    CHECK(fs::exists(out_dir + "/" + row + "/report.json"));
    CHECK(fs::exists(out_dir + "/" + row + "/metrics.csv"));
    CHECK(fs::exists(out_dir + "/" + row + "/provenance.cfg"));
  }
  const std::string summary = file_bytes(out_dir + "/summary.csv");
  CHECK(summary.find("row,rank1,rank5,mAP,domain_probe_accuracy") == 0);
  CHECK(summary.find("full,") != std::string::npos);
}

TEST_CASE("image-mode pipeline works end to end") {
  TempDir tmp;
  const std::string cfg = tmp / "img.cfg";
  write_file(cfg,
             "model.mode = image\n"
             "model.image_channels = 1\n"
             "model.image_height = 6\n"
             "model.image_width = 6\n"
             "model.block_widths = 4 4\n"
             "model.in_blocks = 1\n"
             "model.hidden_dim = 4\n"
             "train.epochs = 2\n"
             "train.warmup_epochs = 2\n"
             "train.batch_p = 4\n"
             "train.batch_k = 3\n"
             "data.identities_per_domain = 6\n"
             "eval.trials = 1\n");
  const std::string dataset = tmp / "img.mmfa";
  const std::string out_dir = tmp / "img_out";
  REQUIRE(run({"gen-data", cfg, dataset}) == 0);
  REQUIRE(run({"train", cfg, dataset, out_dir}) == 0);
  REQUIRE(run({"eval", out_dir + "/model_final.ckpt", dataset, tmp / "img_report", cfg}) == 0);
  CHECK(fs::exists(tmp / "img_report.json"));
}

TEST_CASE("help prints the config reference and exits 0") {
  CHECK(run({"help"}) == 0);
  CHECK(mmfa::cli::usage().find("model.hidden_dim") != std::string::npos);
}
