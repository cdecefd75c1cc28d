// lithoseg: command-line surface over the dataset generator, trainer,
// evaluator, single-frame inference, timing benchmark and plot emitters.
//
// Conventions shared by all subcommands:
//   - exit code 0 on success; any failure prints exactly one line
//     "error: <message>" to stderr and exits nonzero;
//   - relative output paths are placed under $LITHOSEG_OUTPUT_ROOT when that
//     variable is set (absolute paths are used as given);
//   - every emitted CSV uses comma delimiter, dot decimal, UTF-8.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lithoseg/data/synth.hpp"
#include "lithoseg/pipeline/pipeline.hpp"
#include "lithoseg/plot/plot.hpp"

namespace fs = std::filesystem;
using namespace lithoseg;

namespace {

std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("LITHOSEG_OUTPUT_ROOT");
  if (!root || !*root) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(root) / p).string();
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int count = 100;
  std::string preset = "vitro";
  uint64_t seed = 0;
  int size = 256;
};

void cmd_synth(const SynthArgs& a) {
  SceneParams p = a.preset == "vivo" ? SceneParams::vivo() : SceneParams::vitro();
  p.size = a.size;
  std::string root = resolve_out(a.out);
  auto rows = generate_synthetic_dataset(root, a.count, p, a.seed, std::cerr);
  double stone = 0, laser = 0;
  int n_train = 0, n_val = 0, n_test = 0;
  for (const auto& r : rows) {
    stone += r.stone_area;
    laser += r.laser_area;
    n_train += r.split == "train";
    n_val += r.split == "val";
    n_test += r.split == "test";
  }
  std::printf("wrote %zu clips (train %d / val %d / test %d) under %s\n", rows.size(), n_train,
              n_val, n_test, root.c_str());
  std::printf("mean stone area %.4f, mean laser area %.4f\n", stone / double(rows.size()),
              laser / double(rows.size()));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config_path, data_root, out_dir = "run";
  std::string scale = "paper";
  int epochs = 0, batch_size = 0, base_width = 0;
  double lr = 0;
  uint64_t seed = 0;
  std::string wiring, augmentation, variant;
  bool attention = false, aspp = false, detach = false;
  const CLI::App* cmd = nullptr;  // for has-flag queries
};

void cmd_train(const TrainArgs& a) {
  // Precedence: config file > flags > defaults. The scale preset picks the
  // defaults; explicitly passed flags override them; a config file, when
  // given, overrides everything it mentions.
  PipelineConfig cfg =
      a.scale == "desk" ? PipelineConfig::desk_scale() : PipelineConfig{};
  auto passed = [&a](const std::string& flag) { return a.cmd->count(flag) > 0; };
  if (passed("--epochs")) cfg.epochs = a.epochs;
  if (passed("--batch-size")) cfg.batch_size = a.batch_size;
  if (passed("--lr")) cfg.lr = a.lr;
  if (passed("--seed")) cfg.seed = a.seed;
  if (passed("--wiring")) cfg.wiring = PipelineConfig::parse_wiring(a.wiring);
  if (passed("--augmentation")) cfg.augmentation = a.augmentation;
  if (passed("--base-width")) cfg.seg1.base_width = cfg.seg2.base_width = a.base_width;
  if (passed("--variant")) {
    auto v = SegNetConfig::parse_variant(a.variant);
    cfg.seg1.variant = cfg.seg2.variant = v;
  }
  if (passed("--attention")) cfg.seg1.use_attention = cfg.seg2.use_attention = true;
  if (passed("--aspp")) cfg.seg1.use_aspp = cfg.seg2.use_aspp = true;
  if (passed("--detach")) cfg.end_to_end = false;

  std::string root = a.data_root, out_dir = a.out_dir;
  if (!a.config_path.empty()) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(a.config_path));
    if (j.contains("dataset_root")) {
      root = j.at("dataset_root").get<std::string>();
      j.erase("dataset_root");
    }
    if (j.contains("output_dir")) {
      out_dir = j.at("output_dir").get<std::string>();
      j.erase("output_dir");
    }
    cfg = pipeline_config_from_json(j, cfg);
  }
  check(!root.empty(), "train: no dataset root (pass --data or set dataset_root in --config)");

  // Fail on an invalid configuration before touching the output directory.
  PipelineConfig resolved = cfg.normalized();
  resolved.validate();

  out_dir = resolve_out(out_dir);
  fs::create_directories(out_dir);
  nlohmann::json snap = to_json(resolved);
  snap["dataset_root"] = root;
  snap["output_dir"] = out_dir;
  write_text_file((fs::path(out_dir) / "config.json").string(), snap.dump(2) + "\n");

  TrainOutput<float> result = train<float>(cfg, root, out_dir, std::cerr);
  std::string bundle_path = (fs::path(out_dir) / "bundle.lsb").string();
  save_bundle(result.bundle, bundle_path);

  std::string summary =
      plot_losses_csv(result.losses_csv, (fs::path(out_dir) / "loss_curves.png").string());
  write_text_file((fs::path(out_dir) / "trend_summary.csv").string(), summary);
  plot_val_metrics_csv(result.val_csv, (fs::path(out_dir) / "val_curves.png").string());

  double best = result.val_curve.empty() ? 0.0
                                         : result.val_curve[size_t(result.bundle.best_epoch - 1)];
  std::printf("best epoch %d/%d, validation mean dsc/ji %.4f\n", result.bundle.best_epoch,
              resolved.epochs, best);
  std::printf("bundle -> %s\n", bundle_path.c_str());
}

// ---------------------------------------------------------------------------
// eval / infer / bench
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string bundle, data, split = "test", out;
};

void cmd_eval(const EvalArgs& a) {
  TrainedBundle<float> b = load_bundle<float>(a.bundle);
  auto clips = load_clip_dataset(a.data, a.split);
  MetricsReport rep = validate_bundle(b, clips);
  std::string csv = rep.to_csv();
  if (a.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::string path = resolve_out(a.out);
    write_text_file(path, csv);
    std::printf("mean dsc/ji %.4f over %zu clips -> %s\n", rep.mean_dsc_ji(), clips.size(),
                path.c_str());
  }
}

struct InferArgs {
  std::string bundle, image, out;
};

void cmd_infer(const InferArgs& a) {
  TrainedBundle<float> b = load_bundle<float>(a.bundle);
  RawImage raw = read_png(a.image);
  if (raw.channels != 3)
    throw std::runtime_error("infer: " + a.image + " must be RGB, got " +
                             std::to_string(raw.channels) + " channel(s)");
  FrameInference<float> res = infer_frame(b, image_from_raw(raw));
  std::string path = resolve_out(a.out);
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_png(path, raw_from_mask(res.mask));
  Eigen::Index counts[3] = {0, 0, 0};
  for (Eigen::Index i = 0; i < res.mask.size(); ++i) ++counts[res.mask.data[i]];
  std::printf("wrote %s (%dx%d; background %lld, stone %lld, laser %lld px)\n", path.c_str(),
              raw.width, raw.height, (long long)counts[0], (long long)counts[1],
              (long long)counts[2]);
}

struct BenchArgs {
  std::string bundle, image;
  int n = 10;
  int size = 256;
  uint64_t seed = 0;
};

void cmd_bench(const BenchArgs& a) {
  TrainedBundle<float> b = load_bundle<float>(a.bundle);
  ImageF frame;
  if (!a.image.empty()) {
    RawImage raw = read_png(a.image);
    if (raw.channels != 3)
      throw std::runtime_error("bench: " + a.image + " must be RGB, got " +
                               std::to_string(raw.channels) + " channel(s)");
    frame = image_from_raw(raw);
  } else {
    SceneParams p;
    p.size = a.size;
    std::ostringstream sink;
    frame = generate_synthetic_clip(a.seed, p, sink).frames[4];
  }
  BenchmarkResult r = benchmark_inference(b, frame, a.n);
  std::printf("%-12s %8.4f s / %d images (%.2f fps)\n",
              SegNetConfig::variant_name(b.cfg.seg2.variant).c_str(), r.seconds, r.frames, r.fps);
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string losses, val, manifest, metrics, out = ".";
  int windows = 15;
};

void cmd_plot(const PlotArgs& a) {
  check(!a.losses.empty() || !a.val.empty() || !a.manifest.empty() || !a.metrics.empty(),
        "plot: provide at least one of --losses-csv, --val-csv, --manifest, --metrics-csv");
  std::string out_dir = resolve_out(a.out);
  fs::create_directories(out_dir);
  auto path = [&out_dir](const char* name) { return (fs::path(out_dir) / name).string(); };
  if (!a.losses.empty()) {
    std::string summary = plot_losses_csv(read_text_file(a.losses), path("loss_curves.png"),
                                          a.windows);
    write_text_file(path("trend_summary.csv"), summary);
    std::fputs(summary.c_str(), stdout);
    std::printf("wrote %s and %s\n", path("loss_curves.png").c_str(),
                path("trend_summary.csv").c_str());
  }
  if (!a.val.empty()) {
    plot_val_metrics_csv(read_text_file(a.val), path("val_curves.png"));
    std::printf("wrote %s\n", path("val_curves.png").c_str());
  }
  if (!a.manifest.empty()) {
    plot_manifest_boxes_csv(read_text_file(a.manifest), path("size_boxplot.png"));
    std::printf("wrote %s\n", path("size_boxplot.png").c_str());
  }
  if (!a.metrics.empty()) {
    plot_metrics_csv(read_text_file(a.metrics), path("class_scores.png"));
    std::printf("wrote %s\n", path("class_scores.png").c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "lithoseg: motion-aware multi-class segmentation of ureteroscopy video\n"
      "Relative output paths go under $LITHOSEG_OUTPUT_ROOT when it is set."};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::simple);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic clip dataset (60/20/20 split)");
  synth->add_option("--out", sa.out, "Dataset root directory to create")->required();
  synth->add_option("--count", sa.count, "Number of clips [100]")->check(CLI::PositiveNumber);
  synth->add_option("--preset", sa.preset, "Scene preset [vitro]")
      ->check(CLI::IsMember({"vitro", "vivo"}));
  synth->add_option("--seed", sa.seed, "Master seed [0]");
  synth->add_option("--size", sa.size, "Frame size in pixels, min 32 [256]");
  synth->callback([&sa] { cmd_synth(sa); });

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train the dual-branch pipeline on a clip dataset");
  ta.cmd = tr;
  tr->add_option("--config", ta.config_path,
                 "JSON run config; its keys override flags (may also set dataset_root, "
                 "output_dir)")
      ->check(CLI::ExistingFile);
  tr->add_option("--data", ta.data_root, "Dataset root with train/ and val/ splits");
  tr->add_option("--out", ta.out_dir, "Output directory for bundle, CSVs and plots [run]");
  tr->add_option("--scale", ta.scale,
                 "Default preset: paper (width 64, 100 epochs) or desk (width 32, 15 epochs) "
                 "[paper]")
      ->check(CLI::IsMember({"paper", "desk"}));
  tr->add_option("--epochs", ta.epochs, "Training epochs")->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", ta.batch_size, "Clips per step [2]")->check(CLI::PositiveNumber);
  tr->add_option("--lr", ta.lr, "Learning rate [1e-3]");
  tr->add_option("--seed", ta.seed, "Run seed [0]");
  tr->add_option("--wiring", ta.wiring, "Motion-branch input: dvf_input or warped_input")
      ->check(CLI::IsMember({"dvf_input", "warped_input"}));
  tr->add_option("--augmentation", ta.augmentation,
                 "Augmentation preset: none, rbc_equalize, rbc_clahe or full [rbc_equalize]");
  tr->add_option("--base-width", ta.base_width, "First-stage channel count of both seg nets")
      ->check(CLI::PositiveNumber);
  tr->add_option("--variant", ta.variant,
                 "Segmentation backbone: unet, hybresunet, deepresunet or r2unet [hybresunet]");
  tr->add_flag("--attention", ta.attention, "Enable attention gates on the skip connections");
  tr->add_flag("--aspp", ta.aspp, "Enable the dilated multi-scale bottleneck");
  tr->add_flag("--detach", ta.detach,
               "Stop segmentation gradients at the motion branch input (default end-to-end)");
  tr->callback([&ta] { cmd_train(ta); });

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score a trained bundle against a dataset split");
  ev->add_option("--bundle", ea.bundle, "Trained bundle file")->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--data", ea.data, "Dataset root")->required();
  ev->add_option("--split", ea.split, "Split to score [test]")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", ea.out, "Write the CSV report here instead of stdout");
  ev->callback([&ea] { cmd_eval(ea); });

  InferArgs ia;
  auto* in = app.add_subcommand("infer", "Segment one RGB frame into a 3-class mask");
  in->add_option("--bundle", ia.bundle, "Trained bundle file")->required()
      ->check(CLI::ExistingFile);
  in->add_option("--image", ia.image, "Input RGB PNG")->required()->check(CLI::ExistingFile);
  in->add_option("--out", ia.out, "Output mask PNG (values 0=background 1=stone 2=laser)")
      ->required();
  in->callback([&ia] { cmd_infer(ia); });

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Time frame-wise inference");
  be->add_option("--bundle", ba.bundle, "Trained bundle file")->required()
      ->check(CLI::ExistingFile);
  be->add_option("--n", ba.n, "Frames to time after 3 warm-ups [10]")->check(CLI::PositiveNumber);
  be->add_option("--image", ba.image, "Frame to use (synthesized when omitted)")
      ->check(CLI::ExistingFile);
  be->add_option("--size", ba.size, "Synthesized frame size [256]");
  be->add_option("--seed", ba.seed, "Seed for the synthesized frame [0]");
  be->callback([&ba] { cmd_bench(ba); });

  PlotArgs pa;
  auto* pl = app.add_subcommand("plot", "Render charts and trend summaries from run CSVs");
  pl->add_option("--losses-csv", pa.losses, "losses.csv from a training run")
      ->check(CLI::ExistingFile);
  pl->add_option("--val-csv", pa.val, "val_metrics.csv from a training run")
      ->check(CLI::ExistingFile);
  pl->add_option("--manifest", pa.manifest, "Dataset manifest.csv for size box plots")
      ->check(CLI::ExistingFile);
  pl->add_option("--metrics-csv", pa.metrics, "Evaluation report CSV for per-class score bars")
      ->check(CLI::ExistingFile);
  pl->add_option("--out", pa.out, "Directory for emitted files [.]");
  pl->add_option("--windows", pa.windows, "Windows for the monotone-trend summary [15]")
      ->check(CLI::PositiveNumber);
  pl->callback([&pa] { cmd_plot(pa); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
