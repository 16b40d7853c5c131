#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "csi/config.hpp"
#include "csi/pipeline.hpp"

using namespace csi;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csi_test_pipeline_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

// Small enough that every command finishes in seconds.
ExperimentConfig tiny_config(const fs::path& root) {
  ExperimentConfig c;
  c.seed = 17;
  c.geometry.rows = c.geometry.cols = 32;
  c.geometry.pixel_mm = 9.28;
  c.phantom.count = 5;
  c.phantom.grid = {32, 5.0};
  c.phantom.supersample = 1;
  c.model.channels = {4, 8};
  c.model.time_features = 4;
  c.model.embed_dim = 8;
  c.train.steps = 4;
  c.train.batch = 2;
  c.train.lr = 1e-3;
  c.sampler.n_steps = 4;
  c.eval.max_images = 3;
  c.eval.batch = 2;
  c.eval.ablate_images = 2;
  c.eval.ablate_steps = {2, 4, 8};
  c.paths.root = root.string();
  set_master_seed(c, c.seed);
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Checksum list without the config copy, which records the output root.
std::string data_checksums(const fs::path& data) {
  std::istringstream in(slurp(data / "checksums.txt"));
  std::string out;
  for (std::string line; std::getline(in, line);)
    if (line.find("config.json") == std::string::npos) out += line + '\n';
  return out;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CSI_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// One dataset and checkpoint shared by the read-only cases below.
const ExperimentConfig& shared_run() {
  static const ExperimentConfig cfg = [] {
    ExperimentConfig c = tiny_config(scratch("shared"));
    cmd_datagen(c, false);
    cmd_train(c, false, false);
    return c;
  }();
  return cfg;
}

}  // namespace

TEST_CASE("shipped configs load") {
  const ExperimentConfig desk = load_config(fs::path(CSI_CONFIG_DIR) / "desk.json");
  CHECK(desk.geometry.rows == 64);
  CHECK(desk.phantom.count == 10);
  const ExperimentConfig full = load_config(fs::path(CSI_CONFIG_DIR) / "full.json");
  CHECK(full.geometry.rows == 256);
  CHECK(full.geometry.cols == 256);
  CHECK(full.phantom.count == 50);
  CHECK(full.sampler.n_steps == 1000);
  CHECK(full.geometry.cols * full.geometry.pixel_mm == doctest::Approx(desk.geometry.cols * desk.geometry.pixel_mm));
}

TEST_CASE("config round trip and rejections") {
  ExperimentConfig c = tiny_config("/tmp/x");
  c.eval.families = {"metal", "vrect"};
  c.sampler.snr = 0.25;
  const ExperimentConfig back = parse_config(emit_config(c));
  CHECK(back == c);
  CHECK(parse_config(emit_config(ExperimentConfig{})) == ExperimentConfig{});

  nlohmann::json j = nlohmann::json::parse(emit_config(c));
  j["sampler"]["snr"] = -1.0;
  CHECK_THROWS(parse_config(j.dump()));
  j = nlohmann::json::parse(emit_config(c));
  j["phantom"]["bogus"] = 1;
  CHECK_THROWS(parse_config(j.dump()));
  j = nlohmann::json::parse(emit_config(c));
  j["eval"]["families"] = {"square"};
  CHECK_THROWS(parse_config(j.dump()));
  j = nlohmann::json::parse(emit_config(c));
  j["train"]["optimizer"] = "lbfgs";
  CHECK_THROWS(parse_config(j.dump()));
  CHECK_THROWS(parse_config("{not json"));

  ExperimentConfig s = c;
  set_master_seed(s, 99);
  CHECK(s.seed == 99);
  CHECK(s.model.seed == 99);
  CHECK(s.sampler.seed == 99);
}

TEST_CASE("datagen writes a by-volume split and is reproducible") {
  const ExperimentConfig a = tiny_config(scratch("dg_a"));
  const auto s = cmd_datagen(a, false);
  CHECK(s.volumes == 5);
  CHECK(s.train_projections + s.test_projections == 5 * 60);
  CHECK(s.test_projections == 60);
  const fs::path data = a.resolve(a.paths.data);
  const DatasetManifest man = read_dataset_manifest(data);
  CHECK(man.train.size() == 240);
  CHECK(man.test.size() == 60);
  CHECK(man.views_per_volume == 60);
  std::set<int> vols(man.train_volumes.begin(), man.train_volumes.end());
  for (int v : man.test_volumes) CHECK(vols.count(v) == 0);
  for (const auto& name : man.test) {
    const int v = std::stoi(name.substr(1, 3));
    CHECK(std::find(man.test_volumes.begin(), man.test_volumes.end(), v) != man.test_volumes.end());
  }
  CHECK(count_files(data / "projections", ".raw") == 300);
  for (const char* f : {"metal", "circle", "hrect", "vrect"}) {
    CHECK(count_files(data / "masks" / f, ".raw") == 60);
    CHECK(count_files(data / "masks" / f, ".pgm") == 60);
  }
  // Normalized training projections peak at exactly 1.
  float peak = 0;
  for (const auto& name : man.train) peak = std::max(peak, load_normalized(data / "projections" / (name + ".raw")).max());
  CHECK(peak == doctest::Approx(1.0f));

  ExperimentConfig b = a;
  b.paths.root = scratch("dg_b").string();
  cmd_datagen(b, false);
  const std::string sums = data_checksums(data);
  CHECK(sums.find("manifest.json") != std::string::npos);
  CHECK(sums == data_checksums(b.resolve(b.paths.data)));

  SUBCASE("existing output is not overwritten without force") {
    CHECK_THROWS(cmd_datagen(a, false));
    CHECK_NOTHROW(cmd_datagen(a, true));
  }
  SUBCASE("a locked directory is refused") {
    DirLock lock(data);
    CHECK_THROWS(cmd_datagen(a, true));
  }
}

TEST_CASE("train writes a checkpoint and loss trace and resumes bit for bit") {
  const ExperimentConfig& base = shared_run();
  const fs::path data = base.resolve(base.paths.data);

  ExperimentConfig zero = base;
  zero.paths.checkpoint = scratch("ck_zero").string();
  zero.paths.data = data.string();
  zero.train.steps = 0;
  cmd_train(zero, false, false);
  const auto init = load_checkpoint(zero.paths.checkpoint);
  CHECK(init.net.flat_params() == DenoiserNet(zero.model, zero.schedule).flat_params());
  CHECK(slurp(fs::path(zero.paths.checkpoint) / "loss.csv") == "step,loss\n");

  ExperimentConfig straight = zero;
  straight.paths.checkpoint = scratch("ck_straight").string();
  straight.train.steps = 6;
  cmd_train(straight, false, false);
  const std::string csv = slurp(fs::path(straight.paths.checkpoint) / "loss.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6);

  ExperimentConfig part = straight;
  part.paths.checkpoint = scratch("ck_part").string();
  part.train.steps = 2;
  cmd_train(part, false, false);
  CHECK_THROWS(cmd_train(part, false, false));
  part.train.steps = 6;
  const auto s = cmd_train(part, false, true);
  CHECK(s.start_step == 2);
  CHECK(s.end_step == 6);
  for (const char* f : {"params.bin", "optimizer.bin", "loss.csv"})
    CHECK(slurp(fs::path(part.paths.checkpoint) / f) == slurp(fs::path(straight.paths.checkpoint) / f));

  ExperimentConfig other = part;
  other.model.channels = {4, 4};
  other.train.steps = 8;
  CHECK_THROWS(cmd_train(other, false, true));
}

TEST_CASE("inpaint writes predictions for each family with exact known pixels") {
  ExperimentConfig c = shared_run();
  c.paths.inpaint = scratch("inp").string();
  const auto s = cmd_inpaint(c, {"metal", "circle"}, false);
  CHECK(s.failed == 0);
  CHECK(s.succeeded + s.skipped == 2 * 3);
  const fs::path data = c.resolve(c.paths.data);
  const DatasetManifest man = read_dataset_manifest(data);
  for (const char* f : {"metal", "circle"}) {
    const fs::path dir = fs::path(c.paths.inpaint) / "pred" / kMethodScore / f;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() != ".raw") continue;
      const std::string stem = e.path().stem().string();
      const Image2D pred = read_image(e.path());
      const Image2D label = load_normalized(data / "projections" / (stem + ".raw"));
      const Image2D m = read_image(data / "masks" / f / (stem + ".raw"));
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] == 1.0f) CHECK(pred[i] == label[i]);
      CHECK(fs::exists(fs::path(c.paths.inpaint) / "pred" / kMethodInterp / f / (stem + ".raw")));
    }
    CHECK(count_files(dir, ".raw") == count_files(fs::path(c.paths.inpaint) / "pred" / kMethodInterp / f, ".raw"));
  }
  // Circle masks always mask something, so all three are written.
  CHECK(count_files(fs::path(c.paths.inpaint) / "pred" / kMethodScore / "circle", ".raw") == 3);
  CHECK_THROWS(cmd_inpaint(c, {"metal"}, false));
  CHECK_THROWS(cmd_inpaint(c, {"square"}, true));

  ExperimentConfig again = c;
  again.paths.inpaint = scratch("inp2").string();
  cmd_inpaint(again, {"circle"}, false);
  const auto stem = man.test[0];
  CHECK(slurp(fs::path(c.paths.inpaint) / "pred" / kMethodScore / "circle" / (stem + ".raw")) ==
        slurp(fs::path(again.paths.inpaint) / "pred" / kMethodScore / "circle" / (stem + ".raw")));
}

TEST_CASE("eval aligns predictions with labels and masks") {
  ExperimentConfig c = shared_run();
  const fs::path data = c.resolve(c.paths.data);
  const DatasetManifest man = read_dataset_manifest(data);
  const fs::path pred = scratch("eval_pred");
  const std::string stem = man.test[1];
  fs::create_directories(pred / "interpolation" / "circle");
  const Image2D label = load_normalized(data / "projections" / (stem + ".raw"));
  write_image(pred / "interpolation" / "circle" / (stem + ".raw"), label * 0.9f);

  const fs::path out = scratch("eval_out");
  const auto s = cmd_eval(c, pred, data / "projections", data / "masks", out, false);
  REQUIRE(s.rows.size() == 1);
  CHECK(s.rows[0].family == "circle");
  CHECK(s.rows[0].report.per_image.size() == 1);
  CHECK(fs::exists(out / "report.csv"));
  CHECK(fs::exists(out / "table.txt"));
  CHECK(s.table.find("Circle") != std::string::npos);

  SUBCASE("predictions without labels are rejected") {
    write_image(pred / "interpolation" / "circle" / "v999_a000.raw", label);
    CHECK_THROWS(cmd_eval(c, pred, data / "projections", data / "masks", scratch("eval_out2"), false));
  }
  SUBCASE("empty prediction tree is rejected") {
    const fs::path empty = scratch("eval_empty");
    fs::create_directories(empty / "interpolation" / "circle");
    CHECK_THROWS(cmd_eval(c, empty, data / "projections", data / "masks", scratch("eval_out3"), false));
  }
}

TEST_CASE("ablation emits the full grid and a timing row") {
  ExperimentConfig c = shared_run();
  c.eval.ablate_family = "circle";
  c.paths.ablate = scratch("abl").string();
  const auto s = cmd_ablate(c, false);
  CHECK(s.failed == 0);
  CHECK(s.cells.size() == 9);
  const std::string grid = slurp(fs::path(c.paths.ablate) / "grid.csv");
  CHECK(std::count(grid.begin(), grid.end(), '\n') == 1 + 9);
  CHECK(s.table.find("time per image(s)") != std::string::npos);
  CHECK(std::count(s.table.begin(), s.table.end(), '\n') == 2 + 3 + 1);

  ExperimentConfig again = c;
  again.paths.ablate = scratch("abl2").string();
  cmd_ablate(again, false);
  CHECK(slurp(fs::path(again.paths.ablate) / "grid.csv") == grid);
}

TEST_CASE("ablation table marks missing cells") {
  std::vector<AblationCell> cells{{0.2, 10, true, 0.1, 30.0, 20.0, 1.0, ""}, {0.2, 20, false, 0, 0, 0, 0, "boom"}};
  const std::string t = format_ablation_table(cells, {0.2, 0.4}, {10, 20});
  CHECK(t.find("failed") != std::string::npos);
  CHECK(t.find("-") != std::string::npos);
  CHECK(t.find("eta=0.40") != std::string::npos);
}

TEST_CASE("CLI exit codes") {
  const fs::path root = scratch("cli");
  fs::create_directories(root);
  const fs::path cfg_path = root / "cfg.json";
  {
    std::ofstream(cfg_path) << emit_config(tiny_config(root / "run"));
  }
  const std::string cfg = "--config " + cfg_path.string();
  CHECK(run_cli("") != 0);
  CHECK(run_cli("frobnicate") != 0);
  CHECK(run_cli("train " + cfg) == 1);  // no dataset yet
  CHECK(run_cli("datagen " + cfg) == 0);
  CHECK(run_cli("datagen " + cfg) == 1);  // refuses to overwrite
  CHECK(run_cli("datagen --force " + cfg) == 0);
  CHECK(run_cli("train " + cfg) == 0);
  CHECK(run_cli("inpaint --family circle " + cfg) == 0);
  CHECK(run_cli("inpaint --family nope --force " + cfg) == 1);
  CHECK(run_cli("eval " + cfg) == 0);
  CHECK(run_cli("eval --pred " + (root / "missing").string() + " --force " + cfg) == 1);
  CHECK(run_cli("datagen --config " + (root / "absent.json").string()) == 1);

  // Single job with paths relative to the job file.
  const fs::path data = root / "run" / "data";
  const DatasetManifest man = read_dataset_manifest(data);
  nlohmann::json job{{"projection", "run/data/projections/" + man.test[0] + ".raw"},
                     {"mask", "run/data/masks/circle/" + man.test[0] + ".raw"},
                     {"checkpoint", "run/checkpoint"},
                     {"sampler", {{"n_steps", 3}, {"snr", 0.4}, {"corrector_iters", 1}, {"seed", 5}}},
                     {"output", "job_out/pred"}};
  std::ofstream(root / "job.json") << job.dump(2);
  CHECK(run_cli("inpaint --job " + (root / "job.json").string()) == 0);
  CHECK(fs::exists(root / "job_out" / "pred.raw"));
  CHECK(fs::exists(root / "job_out" / "pred.pgm"));
  CHECK(run_cli("inpaint --job " + (root / "job.json").string()) == 1);
}
