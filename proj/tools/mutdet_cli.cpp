// Command-line front end: data generation, label preparation, pre-training,
// alignment evaluation and loss-curve export.

#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "mutdet/checkpoint.hpp"
#include "mutdet/config.hpp"
#include "mutdet/errors.hpp"
#include "mutdet/pseudo_labels.hpp"
#include "mutdet/trainer.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Args {
  std::uint64_t seed = 42;
  int count = 32;
  int objects = 4;
  int clusters = 6;
  int dim = 32;
  std::string data_dir;
  std::string labels;
  std::string config;
  std::string calibration;
  std::string enhance;
  std::string out;
  std::string metrics;
  std::string ckpt;
};

int run(const CLI::App& app, const Args& a) {
  using namespace mutdet;

  if (app.got_subcommand("gen-data")) {
    train::generate_dataset(a.out, a.seed, a.count, a.objects);
    std::printf("wrote %d images to %s\n", a.count, a.out.c_str());
    return 0;
  }

  if (app.got_subcommand("prepare-labels")) {
    const auto stats = train::prepare_label_store(a.data_dir, a.clusters, a.dim, a.out);
    std::printf("labels: %d images, %d instances (%d dropped) -> %s\n", stats.images,
                stats.instances, stats.dropped, a.out.c_str());
    return 0;
  }

  if (app.got_subcommand("pretrain")) {
    cfg::RunConfig rc;
    if (!a.config.empty()) rc = cfg::parse_config_file(a.config);
    if (!a.calibration.empty()) cfg::apply_key_value(rc, "calibration_mode", a.calibration);
    if (!a.enhance.empty()) {
      if (a.enhance != "on" && a.enhance != "off")
        throw ConfigError("--enhance expects on or off, got '" + a.enhance + "'");
      rc.enhance = a.enhance == "on";
    }
    const auto result = train::pretrain(rc, a.data_dir, a.labels, a.out, a.metrics);
    const double total = result.rows.empty() ? 0.0 : result.rows.back().parts.total;
    std::printf("trained %d iterations, final total loss %s\n", result.iterations,
                labels::format_double(total).c_str());
    return 0;
  }

  if (app.got_subcommand("eval-alignment")) {
    auto loaded = ckpt::load(a.ckpt);
    const auto report =
        train::eval_alignment(loaded.config, loaded.store, a.data_dir, a.labels);
    for (const auto& [id, cosine] : report.per_image)
      std::printf("%s %s\n", id.c_str(), labels::format_double(cosine).c_str());
    std::printf("mean %s over %d images\n", labels::format_double(report.mean).c_str(),
                report.matched_images);
    return 0;
  }

  if (app.got_subcommand("plot-losses")) {
    train::emit_loss_curves(a.metrics, a.out);
    std::printf("wrote %s\n", a.out.c_str());
    return 0;
  }

  std::fprintf(stderr, "%s", app.help().c_str());
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MutDet-style detection pre-training harness"};
  app.require_subcommand(0, 1);
  Args a;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--seed", a.seed, "Master seed");
  gen->add_option("--count", a.count, "Number of images");
  gen->add_option("--objects", a.objects, "Max objects per image");
  gen->add_option("--out", a.out, "Output directory")->required();

  auto* prep = app.add_subcommand("prepare-labels", "Build the pseudo-label store");
  prep->add_option("--data", a.data_dir, "Dataset directory")->required();
  prep->add_option("--clusters", a.clusters, "k-means cluster count");
  prep->add_option("--dim", a.dim, "PCA output dimension");
  prep->add_option("--out", a.out, "Label store path")->required();

  auto* pre = app.add_subcommand("pretrain", "Run detection pre-training");
  pre->add_option("--data", a.data_dir, "Dataset directory")->required();
  pre->add_option("--labels", a.labels, "Label store path")->required();
  pre->add_option("--config", a.config, "key=value config file");
  pre->add_option("--calibration", a.calibration, "none|encoder-distill|decoder-distill|siamese");
  pre->add_option("--enhance", a.enhance, "on|off");
  pre->add_option("--out", a.out, "Checkpoint output path")->required();
  pre->add_option("--metrics", a.metrics, "Metrics JSONL output path");

  auto* ev = app.add_subcommand("eval-alignment", "Matched-embedding cosine report");
  ev->add_option("--ckpt", a.ckpt, "Checkpoint path")->required();
  ev->add_option("--data", a.data_dir, "Dataset directory")->required();
  ev->add_option("--labels", a.labels, "Label store path")->required();

  auto* plot = app.add_subcommand("plot-losses", "Export loss curves as CSV");
  plot->add_option("--metrics", a.metrics, "Metrics JSONL path")->required();
  plot->add_option("--out", a.out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    return run(app, a);
  } catch (const mutdet::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const mutdet::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const mutdet::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
