#include "tcam/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

using nlohmann::json;

namespace tcam {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& section) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw Error("config: unknown key '" + key + "' in " + section);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string RunConfig::canonical_json() const {
  json j;
  j["seed"] = seed;
  j["paths"] = {{"data_dir", data_dir}, {"run_dir", run_dir}};
  j["synth"] = {{"num_classes", synth.num_classes},
                {"videos_per_class", synth.videos_per_class},
                {"shots_per_video", synth.shots_per_video},
                {"frames_per_shot", synth.frames_per_shot},
                {"speed", synth.speed},
                {"image_size", synth.image_size},
                {"val_videos_per_class", synth.val_videos_per_class},
                {"test_videos_per_class", synth.test_videos_per_class},
                {"distractors", synth.distractors}};
  j["classifier"] = {{"epochs", classifier.epochs},
                     {"lr", classifier.lr},
                     {"batch_size", classifier.batch_size}};
  j["cam"] = {{"method", cam_kind_name(cam.kind)},
              {"target_layer", cam.target_layer}};
  j["decoder"] = {{"n", decoder.n},
                  {"epochs", decoder.epochs},
                  {"batch_size", decoder.batch_size},
                  {"lr", decoder.lr},
                  {"resize_to", decoder.resize_to},
                  {"crop_to", decoder.crop_to},
                  {"val_tau", decoder.val_tau},
                  {"use_pixel_loss", decoder.use_pixel_loss},
                  {"use_size_loss", decoder.use_size_loss},
                  {"use_crf_loss", decoder.use_crf_loss}};
  j["loss"] = {{"lambda_crf", decoder.loss.lambda_crf},
               {"barrier_t", decoder.loss.barrier_t},
               {"crf_sigma_rgb", decoder.loss.crf_sigma_rgb},
               {"crf_sigma_xy", decoder.loss.crf_sigma_xy},
               {"crf_downsample", decoder.loss.crf_downsample}};
  j["tau"] = tau;
  return j.dump(1);
}

std::string RunConfig::hash() const {
  // FNV-1a 64 over the canonical dump.
  const std::string s = canonical_json();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("config: cannot open '" + path + "'");
  json j = json::parse(f);

  check_keys(j, {"seed", "paths", "synth", "classifier", "cam", "decoder",
                 "loss", "tau"},
             "top level");

  RunConfig c;
  get_if(j, "seed", c.seed);
  get_if(j, "tau", c.tau);
  if (j.contains("paths")) {
    const json& p = j["paths"];
    check_keys(p, {"data_dir", "run_dir"}, "paths");
    get_if(p, "data_dir", c.data_dir);
    get_if(p, "run_dir", c.run_dir);
  }
  if (j.contains("synth")) {
    const json& s = j["synth"];
    check_keys(s,
               {"num_classes", "videos_per_class", "shots_per_video",
                "frames_per_shot", "speed", "image_size",
                "val_videos_per_class", "test_videos_per_class", "distractors"},
               "synth");
    get_if(s, "num_classes", c.synth.num_classes);
    get_if(s, "videos_per_class", c.synth.videos_per_class);
    get_if(s, "shots_per_video", c.synth.shots_per_video);
    get_if(s, "frames_per_shot", c.synth.frames_per_shot);
    get_if(s, "speed", c.synth.speed);
    get_if(s, "image_size", c.synth.image_size);
    get_if(s, "val_videos_per_class", c.synth.val_videos_per_class);
    get_if(s, "test_videos_per_class", c.synth.test_videos_per_class);
    get_if(s, "distractors", c.synth.distractors);
  }
  if (j.contains("classifier")) {
    const json& s = j["classifier"];
    check_keys(s, {"epochs", "lr", "batch_size"}, "classifier");
    get_if(s, "epochs", c.classifier.epochs);
    get_if(s, "lr", c.classifier.lr);
    get_if(s, "batch_size", c.classifier.batch_size);
  }
  if (j.contains("cam")) {
    const json& s = j["cam"];
    check_keys(s, {"method", "target_layer"}, "cam");
    if (s.contains("method"))
      c.cam.kind = cam_kind_from_name(s.at("method").get<std::string>());
    get_if(s, "target_layer", c.cam.target_layer);
  }
  if (j.contains("decoder")) {
    const json& s = j["decoder"];
    check_keys(s,
               {"n", "epochs", "batch_size", "lr", "resize_to", "crop_to",
                "val_tau", "use_pixel_loss", "use_size_loss", "use_crf_loss"},
               "decoder");
    get_if(s, "n", c.decoder.n);
    get_if(s, "epochs", c.decoder.epochs);
    get_if(s, "batch_size", c.decoder.batch_size);
    get_if(s, "lr", c.decoder.lr);
    get_if(s, "resize_to", c.decoder.resize_to);
    get_if(s, "crop_to", c.decoder.crop_to);
    get_if(s, "val_tau", c.decoder.val_tau);
    get_if(s, "use_pixel_loss", c.decoder.use_pixel_loss);
    get_if(s, "use_size_loss", c.decoder.use_size_loss);
    get_if(s, "use_crf_loss", c.decoder.use_crf_loss);
  }
  if (j.contains("loss")) {
    const json& s = j["loss"];
    check_keys(s,
               {"lambda_crf", "barrier_t", "crf_sigma_rgb", "crf_sigma_xy",
                "crf_downsample"},
               "loss");
    get_if(s, "lambda_crf", c.decoder.loss.lambda_crf);
    get_if(s, "barrier_t", c.decoder.loss.barrier_t);
    get_if(s, "crf_sigma_rgb", c.decoder.loss.crf_sigma_rgb);
    get_if(s, "crf_sigma_xy", c.decoder.loss.crf_sigma_xy);
    get_if(s, "crf_downsample", c.decoder.loss.crf_downsample);
  }
  c.decoder.seed = c.seed;
  c.classifier.seed = c.seed;
  return c;
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  f << cfg.canonical_json() << "\n";
  if (!f) throw Error("config: cannot write '" + path + "'");
}

}  // namespace tcam
