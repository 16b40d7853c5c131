// Command-line driver: datagen, train, inpaint, ablate, eval.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csi/config.hpp"
#include "csi/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "Master seed; overrides the config");
  cmd->add_option("--out", c.out, "Output root; overrides paths.root");
  cmd->add_flag("--force", c.force, "Replace existing outputs");
}

csi::ExperimentConfig resolve_config(const Common& c) {
  csi::ExperimentConfig cfg = c.config.empty() ? csi::ExperimentConfig{} : csi::load_config(c.config);
  if (c.seed) csi::set_master_seed(cfg, *c.seed);
  if (!c.out.empty()) cfg.paths.root = c.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-based inpainting of cone-beam projections"};
  app.require_subcommand(1);

  Common datagen_opts, train_opts, inpaint_opts, ablate_opts, eval_opts;
  bool resume = false;
  std::vector<std::string> families;
  std::string job;
  std::string pred_dir, label_dir, mask_dir;

  auto* datagen = app.add_subcommand("datagen", "Generate phantoms, projections, masks and the split manifest");
  add_common(datagen, datagen_opts);

  auto* train = app.add_subcommand("train", "Train the score network on the training split");
  add_common(train, train_opts);
  train->add_flag("--resume", resume, "Continue from an existing checkpoint");

  auto* inpaint = app.add_subcommand("inpaint", "Inpaint the test split (or a single job)");
  add_common(inpaint, inpaint_opts);
  inpaint->add_option("--family", families, "Mask families (metal, circle, hrect, vrect); default from config");
  inpaint->add_option("--job", job, "Single inpainting job JSON");

  auto* ablate = app.add_subcommand("ablate", "SNR x step-count grid with timing");
  add_common(ablate, ablate_opts);

  auto* eval = app.add_subcommand("eval", "Score predictions against labels");
  add_common(eval, eval_opts);
  eval->add_option("--pred", pred_dir, "Prediction root (<method>/<family>/); default <inpaint>/pred");
  eval->add_option("--labels", label_dir, "Label directory; default <data>/projections");
  eval->add_option("--masks", mask_dir, "Mask root (<family>/); default <data>/masks");

  CLI11_PARSE(app, argc, argv);
  csi::tune_allocator();

  try {
    if (datagen->parsed()) {
      const auto cfg = resolve_config(datagen_opts);
      const auto s = csi::cmd_datagen(cfg, datagen_opts.force);
      std::cout << "datagen: " << s.volumes << " volumes, " << s.train_projections << " train / "
                << s.test_projections << " test projections, normalization " << s.normalization << '\n';
    } else if (train->parsed()) {
      const auto cfg = resolve_config(train_opts);
      const auto s = csi::cmd_train(cfg, train_opts.force, resume);
      std::cout << "train: steps " << s.start_step << " -> " << s.end_step;
      if (s.last_loss) std::cout << ", last loss " << *s.last_loss;
      std::cout << '\n';
    } else if (inpaint->parsed()) {
      if (!job.empty()) {
        csi::run_inpaint_job(job, inpaint_opts.force);
        std::cout << "inpaint: job done\n";
        return 0;
      }
      const auto cfg = resolve_config(inpaint_opts);
      const auto s = csi::cmd_inpaint(cfg, families.empty() ? cfg.eval.families : families, inpaint_opts.force);
      std::cout << "inpaint: " << s.succeeded << " done, " << s.skipped << " skipped, " << s.failed << " failed\n";
      return s.failed > 0 ? 1 : 0;
    } else if (ablate->parsed()) {
      const auto cfg = resolve_config(ablate_opts);
      const auto s = csi::cmd_ablate(cfg, ablate_opts.force);
      std::cout << s.table;
      return s.failed > 0 ? 1 : 0;
    } else if (eval->parsed()) {
      const auto cfg = resolve_config(eval_opts);
      const auto data = cfg.resolve(cfg.paths.data);
      const csi::fs::path pred = pred_dir.empty() ? cfg.resolve(cfg.paths.inpaint) / "pred" : csi::fs::path(pred_dir);
      const csi::fs::path labels = label_dir.empty() ? data / "projections" : csi::fs::path(label_dir);
      const csi::fs::path masks = mask_dir.empty() ? data / "masks" : csi::fs::path(mask_dir);
      const auto s = csi::cmd_eval(cfg, pred, labels, masks, cfg.resolve(cfg.paths.eval), eval_opts.force);
      std::cout << s.table;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
