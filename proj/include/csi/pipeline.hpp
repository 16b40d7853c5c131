#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "csi/config.hpp"
#include "csi/eval.hpp"
#include "csi/image.hpp"

namespace csi {

namespace fs = std::filesystem;

/// Keeps large activation buffers in the heap instead of mapping and
/// unmapping them on every allocation (glibc only; no-op elsewhere).
void tune_allocator();

/// Exclusive ownership of an output directory via an O_EXCL lock file.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path file_;
};

/// Creates `dir`, or empties it when `force` is set. Throws when it already
/// holds files and `force` is not set.
void prepare_output_dir(const fs::path& dir, bool force);

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_checksum(const fs::path& path);

struct DatasetManifest {
  double normalization = 1.0;
  double mask_threshold = 0.0;
  int rows = 0, cols = 0;
  int views_per_volume = 0;
  std::vector<int> train_volumes, test_volumes;
  std::vector<std::string> train, test;  // projection stems
};

DatasetManifest read_dataset_manifest(const fs::path& data_dir);

/// "v003_a017"
std::string projection_name(int volume, int view);

/// Reads a raw image and divides by the normalization stored in its sidecar, if any.
Image2D load_normalized(const fs::path& raw_path);

struct DatagenSummary {
  int volumes = 0;
  int train_projections = 0;
  int test_projections = 0;
  double normalization = 0.0;
};
DatagenSummary cmd_datagen(const ExperimentConfig& cfg, bool force);

struct TrainSummary {
  std::int64_t start_step = 0;
  std::int64_t end_step = 0;
  std::optional<double> last_loss;
};
/// Trains to cfg.train.steps. An existing checkpoint is continued when
/// `resume` is set and replaced when `force` is set; otherwise it is an error.
TrainSummary cmd_train(const ExperimentConfig& cfg, bool force, bool resume);

struct InpaintSummary {
  int succeeded = 0;
  int skipped = 0;  // masks without masked pixels
  int failed = 0;
};
/// Inpaints the test split for each family with the trained model and the
/// interpolation baseline under <inpaint>/pred/<method>/<family>/.
InpaintSummary cmd_inpaint(const ExperimentConfig& cfg, const std::vector<std::string>& families, bool force);

/// Single job from JSON: {"projection", "mask", "checkpoint", "sampler", "output"}.
/// Writes <output>.raw, its sidecar and <output>.pgm.
void run_inpaint_job(const fs::path& job_path, bool force);

inline constexpr const char* kMethodScore = "score-sde";
inline constexpr const char* kMethodInterp = "interpolation";

struct AblationCell {
  double snr = 0.0;
  int n_steps = 0;
  bool ok = false;
  double mae = 0.0, psnr = 0.0, psnr_masked = 0.0;
  double seconds_per_image = 0.0;
  std::string error;
};
struct AblateSummary {
  std::vector<AblationCell> cells;
  int failed = 0;
  std::string table;
};
/// Writes grid.csv (metrics), timing.csv and table.txt (wall-clock) under <ablate>/.
AblateSummary cmd_ablate(const ExperimentConfig& cfg, bool force);

struct EvalSummary {
  std::vector<ReportRow> rows;
  std::string table;
};
/// pred_dir/<method>/<family>/<stem>.raw scored against label_dir/<stem>.raw
/// and mask_dir/<family>/<stem>.raw. Writes report.csv, per_image.csv, table.txt.
EvalSummary cmd_eval(const ExperimentConfig& cfg, const fs::path& pred_dir, const fs::path& label_dir,
                     const fs::path& mask_dir, const fs::path& out_dir, bool force);

/// Ablation grid in the layout of rows = snr, column groups = N, plus a timing row.
std::string format_ablation_table(const std::vector<AblationCell>& cells, const std::vector<double>& snrs,
                                  const std::vector<int>& steps);

}  // namespace csi
