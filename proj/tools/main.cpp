#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcam/cams.hpp"
#include "tcam/config.hpp"
#include "tcam/data.hpp"
#include "tcam/decoder.hpp"
#include "tcam/localize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  int seed_override = -1;
  std::string out_override;
};

tcam::RunConfig resolve(const CommonArgs& args) {
  tcam::RunConfig cfg = tcam::load_config(args.config_path);
  if (args.seed_override >= 0) {
    cfg.seed = unsigned(args.seed_override);
    cfg.decoder.seed = cfg.seed;
    cfg.classifier.seed = cfg.seed;
  }
  if (!args.out_override.empty()) cfg.run_dir = args.out_override;
  if (cfg.run_dir.empty())
    cfg.run_dir = "runs/" + cfg.hash() + "_s" + std::to_string(cfg.seed);
  return cfg;
}

// Every command stamps its resolved config into the run directory.
void prepare_run_dir(const tcam::RunConfig& cfg) {
  fs::create_directories(cfg.run_dir);
  fs::create_directories(fs::path(cfg.run_dir) / "checkpoints");
  fs::create_directories(fs::path(cfg.run_dir) / "cams");
  fs::create_directories(fs::path(cfg.run_dir) / "preds");
  tcam::save_config(cfg, (fs::path(cfg.run_dir) / "config.json").string());
}

std::string manifest_path(const tcam::RunConfig& cfg) {
  return (fs::path(cfg.data_dir) / "manifest.json").string();
}

std::vector<tcam::LabeledFrame> load_split_frames(
    const tcam::VideoManifest& m, const std::string& dir,
    const std::string& split, tcam::ImageDomain input) {
  struct Item {
    const tcam::VideoRecord* v;
    const tcam::ShotRecord* s;
    const tcam::FrameRecord* rec;
  };
  std::vector<Item> items;
  for (const auto* v : m.split_videos(split))
    for (const auto& s : v->shots)
      for (const auto& rec : s.frames) items.push_back({v, &s, &rec});

  std::vector<tcam::LabeledFrame> out(items.size());
  tcam::parallel_for_index(items.size(), [&](std::size_t i) {
    const Item& it = items[i];
    tcam::LabeledFrame lf;
    lf.frame = tcam::load_frame(dir, *it.v, *it.s, *it.rec);
    if (!(lf.frame.image.dom == input))
      lf.frame.image = tcam::resize_image(lf.frame.image, input);
    lf.class_id = it.v->class_id;
    out[i] = std::move(lf);
  });
  return out;
}

int cmd_gen_synth(const CommonArgs& args) {
  tcam::RunConfig cfg = resolve(args);
  if (cfg.data_dir.empty()) throw tcam::Error("gen-synth: paths.data_dir not set");
  tcam::VideoManifest m =
      tcam::generate_synthetic(cfg.synth, cfg.seed, cfg.data_dir);
  std::cout << "generated " << m.videos.size() << " videos under "
            << cfg.data_dir << "\n";
  return 0;
}

int cmd_train_classifier(const CommonArgs& args) {
  tcam::RunConfig cfg = resolve(args);
  prepare_run_dir(cfg);
  tcam::VideoManifest m = tcam::load_manifest(manifest_path(cfg));
  const tcam::ImageDomain input(cfg.decoder.resize_to, cfg.decoder.resize_to);
  auto frames = load_split_frames(m, cfg.data_dir, "train", input);

  tcam::ClassifierHistory hist;
  tcam::Classifier c =
      tcam::train_classifier(frames, m.num_classes, cfg.classifier, &hist);
  const std::string ckpt =
      (fs::path(cfg.run_dir) / "checkpoints" / "classifier.arrs").string();
  tcam::save_classifier(c, ckpt);
  std::cout << "classifier saved to " << ckpt << "\n";
  for (std::size_t e = 0; e < hist.epoch_loss.size(); ++e)
    std::cout << "epoch " << e << " loss " << hist.epoch_loss[e] << " acc "
              << hist.epoch_accuracy[e] << "\n";
  return 0;
}

int cmd_dump_cams(const CommonArgs& args) {
  tcam::RunConfig cfg = resolve(args);
  prepare_run_dir(cfg);
  tcam::VideoManifest m = tcam::load_manifest(manifest_path(cfg));
  tcam::Classifier c = tcam::load_classifier(
      (fs::path(cfg.run_dir) / "checkpoints" / "classifier.arrs").string());
  tcam::dump_cams(c, cfg.cam, m, cfg.data_dir,
                  (fs::path(cfg.run_dir) / "cams").string());
  std::cout << "CAMs cached under " << cfg.run_dir << "/cams\n";
  return 0;
}

int cmd_train_decoder(const CommonArgs& args) {
  tcam::RunConfig cfg = resolve(args);
  prepare_run_dir(cfg);
  tcam::VideoManifest m = tcam::load_manifest(manifest_path(cfg));
  tcam::Classifier c = tcam::load_classifier(
      (fs::path(cfg.run_dir) / "checkpoints" / "classifier.arrs").string());
  tcam::DecoderModel model(std::move(c), cfg.seed);
  tcam::CamStore cams((fs::path(cfg.run_dir) / "cams").string());

  auto log = tcam::train_decoder(model, m, cfg.data_dir, cams, cfg.decoder);

  const std::string ckpt =
      (fs::path(cfg.run_dir) / "checkpoints" / "decoder.arrs").string();
  tcam::save_decoder(model, ckpt);
  std::ofstream mf(fs::path(cfg.run_dir) / "metrics.jsonl");
  for (const auto& em : log) {
    json j = {{"epoch", em.epoch},
              {"partial_ce", em.partial_ce},
              {"size_barrier", em.size_barrier},
              {"crf", em.crf},
              {"total", em.total},
              {"val_corloc", em.val_corloc},
              {"config_hash", cfg.hash()}};
    mf << j.dump() << "\n";
  }
  std::cout << "decoder saved to " << ckpt << " (best val CorLoc "
            << (log.empty() ? 0.0
                            : std::max_element(log.begin(), log.end(),
                                               [](auto& a, auto& b) {
                                                 return a.val_corloc <
                                                        b.val_corloc;
                                               })
                                  ->val_corloc)
            << ")\n";
  return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& split, bool overlays) {
  tcam::RunConfig cfg = resolve(args);
  prepare_run_dir(cfg);
  tcam::VideoManifest m = tcam::load_manifest(manifest_path(cfg));
  tcam::DecoderModel model = tcam::load_decoder(
      (fs::path(cfg.run_dir) / "checkpoints" / "decoder.arrs").string());

  auto preds = tcam::infer_split(model, m, cfg.data_dir, split, cfg.tau);
  const std::string out =
      (fs::path(cfg.run_dir) / "preds" / (split.empty() ? "all" : split))
          .string() +
      ".jsonl";
  tcam::save_predictions(preds, out);
  std::cout << preds.size() << " predictions written to " << out << "\n";

  if (overlays) {
    const fs::path odir = fs::path(cfg.run_dir) / "preds" / "overlays";
    fs::create_directories(odir);
    const tcam::ImageDomain input(model.encoder.input_h, model.encoder.input_w);
    for (const auto* v : m.split_videos(split))
      for (const auto& s : v->shots)
        for (const auto& rec : s.frames) {
          if (rec.gt_boxes.empty()) continue;
          tcam::Frame frame = tcam::load_frame(cfg.data_dir, *v, s, rec);
          if (!(frame.image.dom == input))
            frame.image = tcam::resize_image(frame.image, input);
          tcam::Localization loc =
              tcam::infer_frame(model, model.encoder, frame, cfg.tau);
          tcam::Image img =
              tcam::render_overlay(frame, loc.cam, loc.box, rec.gt_boxes);
          char name[128];
          std::snprintf(name, sizeof(name), "%s_%s_f%03d.png",
                        v->video_id.c_str(), s.shot_id.c_str(),
                        rec.frame_index);
          tcam::save_png((odir / name).string(), img);
        }
  }
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& preds_path,
                 const std::string& split) {
  tcam::RunConfig cfg = resolve(args);
  prepare_run_dir(cfg);
  tcam::VideoManifest m = tcam::load_manifest(manifest_path(cfg));
  const std::string pp =
      preds_path.empty()
          ? (fs::path(cfg.run_dir) / "preds" / (split + ".jsonl")).string()
          : preds_path;
  auto preds = tcam::load_predictions(pp);
  tcam::CorLocReport rep = tcam::corloc(preds, m, split);
  const double cl = tcam::cl_accuracy(preds, m, split);

  json j = {{"config_hash", cfg.hash()},
            {"split", split},
            {"annotated_frames", rep.annotated_frames},
            {"corloc", rep.overall},
            {"cl_accuracy", cl},
            {"per_class", json::object()}};
  std::cout << "CorLoc per class:\n";
  for (const auto& [cls, v] : rep.per_class) {
    j["per_class"][m.class_names[cls]] = v;
    std::cout << "  " << m.class_names[cls] << ": " << v * 100.0 << "\n";
  }
  std::cout << "CorLoc avg: " << rep.overall * 100.0 << "\n"
            << "CL accuracy: " << cl * 100.0 << "\n";
  std::ofstream rf(fs::path(cfg.run_dir) / "report.json");
  rf << j.dump(1) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal-CAM weakly-supervised video object localization"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string split = "test";
  std::string preds_path;
  bool overlays = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "run config JSON")->required();
    sub->add_option("--seed", args.seed_override, "override config seed");
    sub->add_option("--out", args.out_override, "override run directory");
  };

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  add_common(gen);
  auto* trc = app.add_subcommand("train-classifier", "train the frame classifier");
  add_common(trc);
  auto* dmp = app.add_subcommand("dump-cams", "cache per-frame CAMs");
  add_common(dmp);
  auto* trd = app.add_subcommand("train-decoder", "train the segmentation decoder");
  add_common(trd);
  auto* inf = app.add_subcommand("infer", "per-frame inference");
  add_common(inf);
  inf->add_option("--split", split, "manifest split to infer on");
  inf->add_flag("--overlays", overlays, "write overlay PNGs");
  auto* ev = app.add_subcommand("evaluate", "CorLoc / CL report");
  add_common(ev);
  ev->add_option("--split", split, "manifest split to score");
  ev->add_option("--predictions", preds_path, "predictions JSON-lines file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_synth(args);
    if (trc->parsed()) return cmd_train_classifier(args);
    if (dmp->parsed()) return cmd_dump_cams(args);
    if (trd->parsed()) return cmd_train_decoder(args);
    if (inf->parsed()) return cmd_infer(args, split, overlays);
    if (ev->parsed()) return cmd_evaluate(args, preds_path, split);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
