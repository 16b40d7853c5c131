#include "csi/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "csi/inpaint.hpp"
#include "csi/json_io.hpp"
#include "csi/masks.hpp"
#include "csi/phantom.hpp"
#include "csi/rng.hpp"

namespace csi {

using nlohmann::json;

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace {

// A lock left behind by a process that no longer exists (e.g. killed).
bool lock_is_stale(const fs::path& lock_file) {
  std::ifstream in(lock_file);
  long pid = 0;
  if (!(in >> pid) || pid <= 0) return false;
  return ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH;
}

void clear_stale_lock(const fs::path& dir) {
  const fs::path f = dir / ".lock";
  if (fs::exists(f) && lock_is_stale(f)) fs::remove(f);
}

}  // namespace

DirLock::DirLock(const fs::path& dir) : file_(dir / ".lock") {
  fs::create_directories(dir);
  clear_stale_lock(dir);
  const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw std::runtime_error(dir.string() + " is locked by another command (" + file_.string() + ")");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

void prepare_output_dir(const fs::path& dir, bool force) {
  clear_stale_lock(dir);
  if (fs::exists(dir / ".lock")) throw std::runtime_error(dir.string() + " is locked by another command");
  if (fs::exists(dir) && !fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw std::runtime_error(dir.string() + " already has contents; pass --force to replace them");
    for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
  }
  fs::create_directories(dir);
  const fs::path probe = dir / ".write-probe";
  {
    std::ofstream out(probe);
    if (!out) throw std::runtime_error(dir.string() + " is not writable");
  }
  fs::remove(probe);
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string projection_name(int volume, int view) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%03d_a%03d", volume, view);
  return buf;
}

Image2D load_normalized(const fs::path& raw_path) {
  ImageSidecar meta;
  Image2D img = read_image(raw_path, &meta);
  if (meta.normalization) {
    if (!(*meta.normalization > 0.0)) throw std::runtime_error("bad normalization in " + raw_path.string());
    const auto inv = static_cast<float>(1.0 / *meta.normalization);
    img *= inv;
  }
  return img;
}

namespace {

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::string exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_checksums(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "checksums.txt" && e.path().filename() != ".lock")
      files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  std::ostringstream os;
  for (const auto& f : files) os << file_checksum(root / f) << "  " << f.generic_string() << '\n';
  write_text(root / "checksums.txt", os.str());
}

json manifest_json(const DatasetManifest& m, const ExperimentConfig& cfg) {
  return {{"normalization", m.normalization},
          {"mask_threshold", m.mask_threshold},
          {"image_shape", {m.rows, m.cols}},
          {"views_per_volume", m.views_per_volume},
          {"geometry", cfg.geometry},
          {"seed", cfg.seed},
          {"split", {{"train_volumes", m.train_volumes},
                     {"test_volumes", m.test_volumes},
                     {"train", m.train},
                     {"test", m.test}}}};
}

std::vector<int> volume_split_test(int count, double test_fraction, std::uint64_t seed) {
  if (count < 2) throw std::invalid_argument("datagen: at least 2 volumes are needed for a train/test split");
  const int n_test = std::clamp(static_cast<int>(std::lround(count * test_fraction)), 1, count - 1);
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> test(order.begin(), order.begin() + n_test);
  std::sort(test.begin(), test.end());
  return test;
}

bool has_masked_pixel(const Image2D& m) {
  return std::find(m.data().begin(), m.data().end(), 0.0f) != m.data().end();
}

void write_prediction(const fs::path& stem, const Image2D& img) {
  write_image(fs::path(stem).replace_extension(".raw"), img);
  write_pgm(fs::path(stem).replace_extension(".pgm"), img, 0.0f, 1.0f);
}

std::vector<std::string> sorted_stems(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".raw") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

SamplerConfig job_sampler(const ExperimentConfig& cfg, MaskFamily family, std::size_t index) {
  SamplerConfig s = cfg.sampler;
  s.seed = derive_seed(cfg.seed, "sample", static_cast<std::uint64_t>(family), index);
  return s;
}

// Runs problems in batches; a failing batch is retried one job at a time so a
// single bad job does not take its neighbours down.
std::vector<std::optional<Image2D>> run_inpaint_jobs(const std::vector<InpaintProblem>& problems,
                                                     const ScoreModel& model, int batch,
                                                     const std::vector<std::string>& names) {
  std::vector<std::optional<Image2D>> out(problems.size());
  for (std::size_t start = 0; start < problems.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(problems.size(), start + static_cast<std::size_t>(batch));
    try {
      auto res = inpaint_batch(std::span<const InpaintProblem>(problems.data() + start, end - start), model);
      for (std::size_t k = start; k < end; ++k) out[k] = std::move(res[k - start]);
    } catch (const std::exception&) {
      for (std::size_t k = start; k < end; ++k) {
        try {
          out[k] = inpaint(problems[k], model);
        } catch (const std::exception& e) {
          log("inpaint " + names[k] + ": " + e.what());
        }
      }
    }
  }
  return out;
}

}  // namespace

DatasetManifest read_dataset_manifest(const fs::path& data_dir) {
  std::ifstream in(data_dir / "manifest.json");
  if (!in) throw std::runtime_error("no dataset manifest in " + data_dir.string() + " (run datagen first)");
  const json j = json::parse(in);
  DatasetManifest m;
  m.normalization = j.at("normalization").get<double>();
  m.mask_threshold = j.at("mask_threshold").get<double>();
  const auto shape = j.at("image_shape").get<std::array<int, 2>>();
  m.rows = shape[0];
  m.cols = shape[1];
  m.views_per_volume = j.at("views_per_volume").get<int>();
  const auto& s = j.at("split");
  m.train_volumes = s.at("train_volumes").get<std::vector<int>>();
  m.test_volumes = s.at("test_volumes").get<std::vector<int>>();
  m.train = s.at("train").get<std::vector<std::string>>();
  m.test = s.at("test").get<std::vector<std::string>>();
  return m;
}

DatagenSummary cmd_datagen(const ExperimentConfig& cfg, bool force) {
  cfg.validate();
  const fs::path data = cfg.resolve(cfg.paths.data);
  prepare_output_dir(data, force);
  DirLock lock(data);
  const fs::path proj_dir = data / "projections", metal_dir = data / "metal";
  fs::create_directories(proj_dir);
  fs::create_directories(metal_dir);

  const auto angles = trajectory_angles(cfg.geometry);
  const std::vector<int> test_vols = volume_split_test(cfg.phantom.count, cfg.phantom.test_fraction, cfg.seed);
  const std::set<int> test_set(test_vols.begin(), test_vols.end());

  KneePhantomOptions opts;
  opts.grid = cfg.phantom.grid;
  opts.supersample = cfg.phantom.supersample;
  opts.implants_min = cfg.phantom.implants_min;
  opts.implants_max = cfg.phantom.implants_max;

  DatasetManifest man;
  man.rows = cfg.geometry.rows;
  man.cols = cfg.geometry.cols;
  man.views_per_volume = static_cast<int>(angles.size());
  double train_max = 0.0, metal_max = 0.0;
  for (int v = 0; v < cfg.phantom.count; ++v) {
    const PhantomVolumes vols = build_phantom(random_knee_phantom(derive_seed(cfg.seed, "datagen", v), opts));
    const bool is_test = test_set.count(v) > 0;
    (is_test ? man.test_volumes : man.train_volumes).push_back(v);
    for (std::size_t a = 0; a < angles.size(); ++a) {
      const std::string name = projection_name(v, static_cast<int>(a));
      const Image2D tissue = forward_project(vols.tissue, cfg.geometry, angles[a]);
      const Image2D metal = forward_project(vols.metal, cfg.geometry, angles[a]);
      if (!is_test) train_max = std::max(train_max, static_cast<double>(tissue.max()));
      metal_max = std::max(metal_max, static_cast<double>(metal.max()));
      write_image(proj_dir / (name + ".raw"), tissue);
      write_image(metal_dir / (name + ".raw"), metal);
      (is_test ? man.test : man.train).push_back(name);
    }
    log("datagen: volume " + std::to_string(v + 1) + "/" + std::to_string(cfg.phantom.count) +
        (is_test ? " (test)" : " (train)"));
  }
  if (!(train_max > 0.0)) throw std::runtime_error("datagen: training projections are all zero");
  man.normalization = train_max;
  // With no metal anywhere every mask is background; any positive threshold works.
  man.mask_threshold = cfg.phantom.mask_threshold_rel * (metal_max > 0.0 ? metal_max : 1.0);

  // Second pass: record the dataset normalization in every projection sidecar.
  for (const auto& names : {man.train, man.test})
    for (const auto& name : names) {
      const fs::path p = proj_dir / (name + ".raw");
      write_image(p, read_image(p), man.normalization);
    }

  for (const auto family : {MaskFamily::Metal, MaskFamily::Circle, MaskFamily::HRect, MaskFamily::VRect}) {
    const fs::path dir = data / "masks" / to_string(family);
    fs::create_directories(dir);
    for (std::size_t j = 0; j < man.test.size(); ++j) {
      const std::string& name = man.test[j];
      Image2D m;
      if (family == MaskFamily::Metal) {
        m = threshold_mask(read_image(metal_dir / (name + ".raw")), man.mask_threshold);
      } else {
        Rng rng(derive_seed(cfg.seed, "mask", static_cast<std::uint64_t>(family), j));
        const int size = sample_mask_size(family, man.rows, man.cols, rng);
        m = synthetic_mask(family, size, derive_seed(cfg.seed, "mask-place", static_cast<std::uint64_t>(family), j),
                           man.rows, man.cols);
      }
      write_image(dir / (name + ".raw"), m);
      write_pgm(dir / (name + ".pgm"), m);
    }
  }

  write_text(data / "manifest.json", manifest_json(man, cfg).dump(2) + "\n");
  write_text(data / "config.json", emit_config(cfg));
  write_checksums(data);
  return {cfg.phantom.count, static_cast<int>(man.train.size()), static_cast<int>(man.test.size()), man.normalization};
}

TrainSummary cmd_train(const ExperimentConfig& cfg, bool force, bool resume) {
  cfg.validate();
  const fs::path data = cfg.resolve(cfg.paths.data);
  const fs::path ck = cfg.resolve(cfg.paths.checkpoint);
  const DatasetManifest man = read_dataset_manifest(data);
  const bool exists = fs::exists(ck / "manifest.json");
  if (exists && !resume && !force)
    throw std::runtime_error("checkpoint " + ck.string() + " exists; pass --resume to continue or --force to replace");
  if (!exists || !resume) prepare_output_dir(ck, force);
  DirLock lock(ck);

  std::vector<Image2D> images;
  images.reserve(man.train.size());
  for (const auto& name : man.train) images.push_back(load_normalized(data / "projections" / (name + ".raw")));

  std::optional<DenoiserNet> net;
  AdamState adam;
  std::vector<double> losses;
  if (exists && resume) {
    LoadedCheckpoint loaded = load_checkpoint(ck);
    if (!(loaded.meta.model == cfg.model) || !(loaded.meta.schedule == cfg.schedule))
      throw std::runtime_error("checkpoint architecture or schedule differs from the config");
    net.emplace(std::move(loaded.net));
    adam = std::move(loaded.adam);
    std::ifstream in(ck / "loss.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line) && static_cast<std::int64_t>(losses.size()) < adam.step)
      losses.push_back(std::stod(line.substr(line.find(',') + 1)));
    if (static_cast<std::int64_t>(losses.size()) != adam.step)
      throw std::runtime_error("loss.csv in " + ck.string() + " does not cover the checkpoint's steps");
  } else {
    net.emplace(cfg.model, cfg.schedule);
  }
  if (man.rows % net->core().size_divisor() != 0 || man.cols % net->core().size_divisor() != 0)
    throw std::runtime_error("image size is not divisible by the model's pooling factor");

  TrainOptions opts;
  opts.lr = cfg.train.lr;
  opts.steps = cfg.train.steps;
  opts.batch = cfg.train.batch;
  opts.seed = cfg.seed;
  opts.grad_clip = cfg.train.grad_clip;
  opts.on_step = [&](std::int64_t step, double loss) {
    if ((step + 1) % 100 == 0 || step + 1 == opts.steps)
      log("train: step " + std::to_string(step + 1) + "/" + std::to_string(opts.steps) + " loss " + exact(loss));
  };
  TrainSummary summary;
  summary.start_step = adam.step;
  const TrainResult res = train(*net, adam, images, opts);
  losses.insert(losses.end(), res.loss_trace.begin(), res.loss_trace.end());
  summary.end_step = adam.step;
  if (!losses.empty()) summary.last_loss = losses.back();

  Checkpoint meta{cfg.model, cfg.schedule, man.normalization, man.rows, man.cols, cfg.seed};
  save_checkpoint(ck, *net, adam, meta);
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) csv << i << ',' << exact(losses[i]) << '\n';
  write_text(ck / "loss.csv", csv.str());
  return summary;
}

InpaintSummary cmd_inpaint(const ExperimentConfig& cfg, const std::vector<std::string>& families, bool force) {
  cfg.validate();
  const fs::path data = cfg.resolve(cfg.paths.data);
  const fs::path out = cfg.resolve(cfg.paths.inpaint);
  const DatasetManifest man = read_dataset_manifest(data);
  const LoadedCheckpoint ck = load_checkpoint(cfg.resolve(cfg.paths.checkpoint));
  if (ck.meta.normalization != man.normalization)
    throw std::runtime_error("checkpoint was trained on a dataset with a different normalization");

  std::vector<MaskFamily> kinds;
  for (const auto& f : families) {
    const auto k = parse_mask_family(f);
    if (!k) throw std::invalid_argument("unknown mask family '" + f + "'");
    kinds.push_back(*k);
  }
  for (const auto k : kinds)
    for (const char* method : {kMethodScore, kMethodInterp})
      prepare_output_dir(out / "pred" / method / to_string(k), force);
  DirLock lock(out);

  std::vector<std::string> names = man.test;
  if (cfg.eval.max_images > 0 && static_cast<int>(names.size()) > cfg.eval.max_images)
    names.resize(static_cast<std::size_t>(cfg.eval.max_images));

  InpaintSummary summary;
  for (const auto kind : kinds) {
    const std::string family = to_string(kind);
    const fs::path score_dir = out / "pred" / kMethodScore / family;
    const fs::path interp_dir = out / "pred" / kMethodInterp / family;
    std::vector<InpaintProblem> problems;
    std::vector<std::string> job_names;
    for (std::size_t j = 0; j < names.size(); ++j) {
      const Image2D label = load_normalized(data / "projections" / (names[j] + ".raw"));
      const Image2D m = read_image(data / "masks" / family / (names[j] + ".raw"));
      if (!has_masked_pixel(m)) {
        log("inpaint " + family + "/" + names[j] + ": mask has no masked pixels, skipped");
        ++summary.skipped;
        continue;
      }
      Image2D y = label;
      for (std::size_t p = 0; p < y.size(); ++p) y[p] *= m[p];
      try {
        write_prediction(interp_dir / names[j], interpolate_baseline(y, m));
      } catch (const std::exception& e) {
        log("interpolation " + family + "/" + names[j] + ": " + e.what());
        ++summary.failed;
      }
      problems.push_back({std::move(y), m, cfg.schedule, job_sampler(cfg, kind, j), true});
      job_names.push_back(names[j]);
    }
    const auto results = run_inpaint_jobs(problems, ck.net, cfg.eval.batch, job_names);
    for (std::size_t k = 0; k < results.size(); ++k) {
      if (!results[k]) {
        ++summary.failed;
        continue;
      }
      write_prediction(score_dir / job_names[k], *results[k]);
      ++summary.succeeded;
    }
    log("inpaint: " + family + " done (" + std::to_string(job_names.size()) + " images)");
  }
  return summary;
}

void run_inpaint_job(const fs::path& job_path, bool force) {
  std::ifstream in(job_path);
  if (!in) throw std::runtime_error("cannot read job " + job_path.string());
  const json j = json::parse(in);
  const fs::path base = job_path.parent_path();
  auto path_of = [&](const char* key) {
    const fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  const fs::path output = path_of("output");
  const fs::path raw_out = fs::path(output).replace_extension(".raw");
  if (fs::exists(raw_out) && !force)
    throw std::runtime_error(raw_out.string() + " exists; pass --force to replace it");
  const LoadedCheckpoint ck = load_checkpoint(path_of("checkpoint"));
  InpaintProblem problem;
  problem.m = read_image(path_of("mask"));
  problem.y = load_normalized(path_of("projection"));
  require_same_shape(problem.y, problem.m, "inpaint job");
  for (std::size_t p = 0; p < problem.y.size(); ++p) problem.y[p] *= problem.m[p];
  problem.sched = ck.meta.schedule;
  problem.cfg = j.contains("sampler") ? j["sampler"].get<SamplerConfig>() : SamplerConfig{};
  if (raw_out.has_parent_path()) fs::create_directories(raw_out.parent_path());
  write_prediction(output, inpaint(problem, ck.net));
}

std::string format_ablation_table(const std::vector<AblationCell>& cells, const std::vector<double>& snrs,
                                  const std::vector<int>& steps) {
  auto find = [&](double s, int n) -> const AblationCell* {
    for (const auto& c : cells)
      if (c.snr == s && c.n_steps == n) return &c;
    return nullptr;
  };
  constexpr int kLabel = 18, kCell = 10;
  std::ostringstream os;
  os << std::left << std::setw(kLabel) << "";
  for (int n : steps) os << "| " << std::setw(2 * kCell) << ("N=" + std::to_string(n));
  os << '\n' << std::setw(kLabel) << "Metric";
  for (std::size_t i = 0; i < steps.size(); ++i) os << "| " << std::setw(kCell) << "MAE" << std::setw(kCell) << "PSNR";
  os << '\n';
  for (double s : snrs) {
    os << std::setw(kLabel) << ("eta=" + format_metric(s, 2));
    for (int n : steps) {
      const AblationCell* c = find(s, n);
      if (c && c->ok)
        os << "| " << std::setw(kCell) << format_metric(c->mae, 4) << std::setw(kCell) << format_metric(c->psnr, 2);
      else
        os << "| " << std::setw(2 * kCell) << (c ? "failed" : "-");
    }
    os << '\n';
  }
  os << std::setw(kLabel) << "time per image(s)";
  for (int n : steps) {
    double sum = 0.0;
    int count = 0;
    for (double s : snrs)
      if (const AblationCell* c = find(s, n); c && c->ok) {
        sum += c->seconds_per_image;
        ++count;
      }
    os << "| " << std::setw(2 * kCell) << (count ? format_metric(sum / count, 3) : "-");
  }
  os << '\n';
  return os.str();
}

AblateSummary cmd_ablate(const ExperimentConfig& cfg, bool force) {
  cfg.validate();
  const fs::path data = cfg.resolve(cfg.paths.data);
  const fs::path out = cfg.resolve(cfg.paths.ablate);
  const DatasetManifest man = read_dataset_manifest(data);
  const LoadedCheckpoint ck = load_checkpoint(cfg.resolve(cfg.paths.checkpoint));
  prepare_output_dir(out, force);
  DirLock lock(out);

  const MaskFamily kind = *parse_mask_family(cfg.eval.ablate_family);
  const std::string family = to_string(kind);
  std::vector<EvalPair> pairs;
  std::vector<Image2D> ys;
  std::vector<std::size_t> indices;
  for (std::size_t j = 0; j < man.test.size() && static_cast<int>(pairs.size()) < cfg.eval.ablate_images; ++j) {
    const Image2D m = read_image(data / "masks" / family / (man.test[j] + ".raw"));
    if (!has_masked_pixel(m)) continue;
    const Image2D label = load_normalized(data / "projections" / (man.test[j] + ".raw"));
    Image2D y = label;
    for (std::size_t p = 0; p < y.size(); ++p) y[p] *= m[p];
    ys.push_back(std::move(y));
    pairs.push_back({man.test[j], Image2D{}, label, m});
    indices.push_back(j);
  }
  if (pairs.empty()) throw std::runtime_error("ablate: no test projection has a non-empty " + family + " mask");

  AblateSummary summary;
  for (double snr : cfg.eval.ablate_snr)
    for (int n : cfg.eval.ablate_steps) {
      AblationCell cell;
      cell.snr = snr;
      cell.n_steps = n;
      try {
        std::vector<InpaintProblem> problems;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          SamplerConfig s = job_sampler(cfg, kind, indices[k]);
          s.snr = snr;
          s.n_steps = n;
          problems.push_back({ys[k], pairs[k].mask, cfg.schedule, s, true});
        }
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Image2D> preds;
        for (std::size_t start = 0; start < problems.size(); start += static_cast<std::size_t>(cfg.eval.batch)) {
          const std::size_t end = std::min(problems.size(), start + static_cast<std::size_t>(cfg.eval.batch));
          auto res = inpaint_batch(std::span<const InpaintProblem>(problems.data() + start, end - start), ck.net);
          for (auto& r : res) preds.push_back(std::move(r));
        }
        const auto t1 = std::chrono::steady_clock::now();
        cell.seconds_per_image = std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(preds.size());
        std::vector<EvalPair> scored = pairs;
        for (std::size_t k = 0; k < scored.size(); ++k) scored[k].pred = std::move(preds[k]);
        const MetricReport rep = evaluate_set(scored, cfg.eval.peak);
        cell.mae = rep.mae;
        cell.psnr = rep.psnr;
        cell.psnr_masked = rep.psnr_masked;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
        ++summary.failed;
        log("ablate: eta=" + format_metric(snr, 2) + " N=" + std::to_string(n) + " failed: " + e.what());
      }
      log("ablate: eta=" + format_metric(snr, 2) + " N=" + std::to_string(n) + " done");
      summary.cells.push_back(std::move(cell));
    }

  std::ostringstream grid, timing;
  grid << "snr,n_steps,status,mae,psnr,psnr_masked\n";
  timing << "snr,n_steps,seconds_per_image\n";
  for (const auto& c : summary.cells) {
    grid << exact(c.snr) << ',' << c.n_steps << ',' << (c.ok ? "ok" : "failed") << ','
         << (c.ok ? exact(c.mae) : "") << ',' << (c.ok ? exact(c.psnr) : "") << ','
         << (c.ok ? exact(c.psnr_masked) : "") << '\n';
    timing << exact(c.snr) << ',' << c.n_steps << ',' << (c.ok ? exact(c.seconds_per_image) : "") << '\n';
  }
  summary.table = format_ablation_table(summary.cells, cfg.eval.ablate_snr, cfg.eval.ablate_steps);
  write_text(out / "grid.csv", grid.str());
  write_text(out / "timing.csv", timing.str());
  write_text(out / "table.txt", summary.table);
  return summary;
}

EvalSummary cmd_eval(const ExperimentConfig& cfg, const fs::path& pred_dir, const fs::path& label_dir,
                     const fs::path& mask_dir, const fs::path& out_dir, bool force) {
  if (!fs::is_directory(pred_dir)) throw std::runtime_error("no prediction directory " + pred_dir.string());
  std::vector<std::string> methods;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_directory()) methods.push_back(e.path().filename().string());
  std::sort(methods.begin(), methods.end(), [](const std::string& a, const std::string& b) {
    const bool ai = a == kMethodInterp, bi = b == kMethodInterp;
    return ai != bi ? ai : a < b;
  });
  const std::vector<std::string> canonical{"metal", "circle", "hrect", "vrect"};

  EvalSummary summary;
  for (const auto& method : methods) {
    std::vector<std::string> families;
    for (const auto& e : fs::directory_iterator(pred_dir / method))
      if (e.is_directory()) families.push_back(e.path().filename().string());
    std::sort(families.begin(), families.end(), [&](const std::string& a, const std::string& b) {
      const auto ia = std::find(canonical.begin(), canonical.end(), a) - canonical.begin();
      const auto ib = std::find(canonical.begin(), canonical.end(), b) - canonical.begin();
      return ia != ib ? ia < ib : a < b;
    });
    for (const auto& family : families) {
      const auto preds = sorted_stems(pred_dir / method / family);
      if (preds.empty()) continue;
      std::vector<std::string> missing;
      std::vector<EvalPair> pairs;
      for (const auto& stem : preds) {
        const fs::path label = label_dir / (stem + ".raw");
        const fs::path mask = mask_dir / family / (stem + ".raw");
        if (!fs::exists(label) || !fs::exists(mask)) {
          missing.push_back(stem);
          continue;
        }
        pairs.push_back({stem, read_image(pred_dir / method / family / (stem + ".raw")), load_normalized(label),
                         read_image(mask)});
      }
      if (pairs.empty())
        throw std::runtime_error("eval: no prediction in " + method + "/" + family + " has a label and mask");
      if (!missing.empty())
        throw std::runtime_error("eval: " + std::to_string(missing.size()) + " prediction(s) in " + method + "/" +
                                 family + " have no matching label or mask (first: " + missing.front() + ")");
      summary.rows.push_back({method, family, evaluate_set(pairs, cfg.eval.peak)});
    }
  }
  if (summary.rows.empty()) throw std::runtime_error("eval: no predictions found under " + pred_dir.string());

  prepare_output_dir(out_dir, force);
  DirLock lock(out_dir);
  write_report_csv(out_dir / "report.csv", summary.rows);
  write_per_image_csv(out_dir / "per_image.csv", summary.rows);
  summary.table = format_comparison_table(summary.rows);
  write_text(out_dir / "table.txt", summary.table);
  return summary;
}

}  // namespace csi
