#include "tcam/cams.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace tcam {

Backbone::Backbone(std::mt19937& rng)
    : stem(3, 8, 3, 1, 1, rng),
      stage1(8, 16, 2, rng),
      stage2(16, 32, 2, rng),
      stage3(32, 64, 2, rng),
      stage4(64, kOutChannels, 2, rng) {}

Backbone::Features Backbone::forward(const nn::Tensor& x) {
  Features f;
  nn::Tensor h = stem_relu.forward(stem.forward(x));
  f.s2 = stage1.forward(h);
  f.s4 = stage2.forward(f.s2);
  f.s8 = stage3.forward(f.s4);
  f.s16 = stage4.forward(f.s8);
  return f;
}

nn::Tensor Backbone::grad_at_stage(const std::string& stage,
                                   const nn::Tensor& d_s16) {
  if (stage == "stage4") return d_s16;
  nn::Tensor d = stage4.backward(d_s16);
  if (stage == "stage3") return d;
  d = stage3.backward(d);
  if (stage == "stage2") return d;
  d = stage2.backward(d);
  if (stage == "stage1") return d;
  throw Error("unknown target layer '" + stage + "'");
}

std::vector<nn::Param*> Backbone::params() {
  std::vector<nn::Param*> p = {&stem.weight, &stem.bias};
  for (nn::ResBlock* b : {&stage1, &stage2, &stage3, &stage4})
    for (nn::Param* q : b->params()) p.push_back(q);
  return p;
}

Classifier::Classifier(int k, int in_h, int in_w, unsigned seed)
    : Classifier(k, in_h, in_w, std::mt19937(seed)) {}

Classifier::Classifier(int k, int in_h, int in_w, std::mt19937 rng)
    : num_classes(k),
      input_h(in_h),
      input_w(in_w),
      backbone(rng),
      head(Backbone::kOutChannels, k, rng) {}

nn::Tensor Classifier::logits(const nn::Tensor& x) {
  feats_ = backbone.forward(x);
  return head.forward(gap.forward(feats_.s16));
}

std::vector<float> Classifier::classify(const Frame& frame) {
  if (frame.image.dom.height != input_h || frame.image.dom.width != input_w)
    throw Error("classify: frame size does not match classifier input");
  nn::Tensor p = nn::softmax_rows(logits(frame_to_tensor(frame)));
  return p.data;
}

std::vector<nn::Param*> Classifier::params() {
  std::vector<nn::Param*> p = backbone.params();
  p.push_back(&head.weight);
  p.push_back(&head.bias);
  return p;
}

nn::Tensor frame_to_tensor(const Frame& frame) {
  nn::Tensor x(1, 3, frame.image.dom.height, frame.image.dom.width);
  x.data = frame.image.chw;
  return x;
}

Image resize_image(const Image& src, ImageDomain target) {
  Image out(target);
  const int plane_in = src.dom.area();
  const int plane_out = target.area();
  for (int c = 0; c < 3; ++c) {
    std::vector<float> ch(src.chw.begin() + c * plane_in,
                          src.chw.begin() + (c + 1) * plane_in);
    std::vector<float> r = nn::bilinear_resize_plane(
        ch, src.dom.height, src.dom.width, target.height, target.width);
    std::copy(r.begin(), r.end(), out.chw.begin() + c * plane_out);
  }
  return out;
}

Classifier train_classifier(const std::vector<LabeledFrame>& frames, int k,
                            const ClassifierTrainConfig& cfg,
                            ClassifierHistory* history) {
  if (frames.empty()) throw Error("train_classifier: no frames");
  std::set<int> seen;
  for (const auto& lf : frames) {
    if (lf.class_id < 0 || lf.class_id >= k)
      throw Error("train_classifier: label out of range");
    seen.insert(lf.class_id);
  }
  if (int(seen.size()) < 2) throw Error("degenerate label set");

  Classifier c(k, frames[0].frame.image.dom.height,
               frames[0].frame.image.dom.width, cfg.seed);
  auto params = c.params();
  nn::Sgd opt(cfg.lr);
  std::mt19937 rng(cfg.seed + 0x9e3779b9u);

  std::vector<int> order(frames.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + std::size_t(cfg.batch_size));
      const int bs = int(end - start);
      nn::Tensor x(bs, 3, c.input_h, c.input_w);
      std::vector<int> labels(bs);
      for (int i = 0; i < bs; ++i) {
        const auto& lf = frames[order[start + i]];
        std::memcpy(x.sample(i), lf.frame.image.chw.data(),
                    sizeof(float) * lf.frame.image.chw.size());
        labels[i] = lf.class_id;
      }
      nn::Tensor lg = c.logits(x);
      nn::Tensor d_lg;
      const double loss = nn::softmax_cross_entropy(lg, labels, &d_lg);
      if (!std::isfinite(loss))
        throw Error("train_classifier: non-finite loss at epoch " +
                    std::to_string(epoch));
      loss_sum += loss * bs;
      for (int i = 0; i < bs; ++i) {
        const float* row = lg.data.data() + std::size_t(i) * k;
        if (int(std::max_element(row, row + k) - row) == labels[i]) ++correct;
      }
      nn::Sgd::zero_grad(params);
      c.backbone.stem.backward(c.backbone.stem_relu.backward(
          c.backbone.stage1.backward(c.backbone.stage2.backward(
              c.backbone.stage3.backward(c.backbone.stage4.backward(
                  c.gap.backward(c.head.backward(d_lg))))))));
      opt.step(params);
    }
    if (history) {
      history->epoch_loss.push_back(loss_sum / double(frames.size()));
      history->epoch_accuracy.push_back(double(correct) / double(frames.size()));
    }
  }
  return c;
}

CamKind cam_kind_from_name(const std::string& name) {
  if (name == "cam") return CamKind::Cam;
  if (name == "gradcam") return CamKind::GradCam;
  if (name == "layercam") return CamKind::LayerCam;
  throw Error("unknown cam method '" + name + "'");
}

std::string cam_kind_name(CamKind kind) {
  switch (kind) {
    case CamKind::Cam: return "cam";
    case CamKind::GradCam: return "gradcam";
    case CamKind::LayerCam: return "layercam";
  }
  throw Error("unreachable");
}

namespace {

// Min-max normalize in place; a flat map becomes all zeros.
void normalize_cam(std::vector<float>& v) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const float lo = *mn, hi = *mx;
  if (hi - lo < 1e-8f) {
    std::fill(v.begin(), v.end(), 0.f);
    return;
  }
  for (auto& x : v) x = (x - lo) / (hi - lo);
}

}  // namespace

Cam extract_cam(Classifier& c, const CamMethod& method, const Frame& frame,
                int class_id) {
  if (class_id < 0 || class_id >= c.num_classes)
    throw Error("extract_cam: class_id out of range");
  if (method.kind == CamKind::Cam && method.target_layer != "stage4")
    throw Error("extract_cam: kind=cam only supports target_layer=stage4");

  nn::Tensor x = frame_to_tensor(frame);
  c.logits(x);

  // Pick the target activation.
  const Backbone::Features& f = c.features();
  const nn::Tensor* act = nullptr;
  if (method.target_layer == "stage1") act = &f.s2;
  else if (method.target_layer == "stage2") act = &f.s4;
  else if (method.target_layer == "stage3") act = &f.s8;
  else if (method.target_layer == "stage4") act = &f.s16;
  else throw Error("unknown target layer '" + method.target_layer + "'");

  const int ch = act->c, fh = act->h, fw = act->w;
  std::vector<float> raw(std::size_t(fh) * fw, 0.f);

  if (method.kind == CamKind::Cam) {
    // Head-weight weighted sum of the last conv features.
    const float* w = c.head.weight.value.data() +
                     std::size_t(class_id) * Backbone::kOutChannels;
    for (int k = 0; k < ch; ++k) {
      const float* a = act->data.data() + std::size_t(k) * fh * fw;
      for (int p = 0; p < fh * fw; ++p) raw[p] += w[k] * a[p];
    }
  } else {
    // Gradient of the class logit w.r.t. the target activation.
    nn::Tensor d_logit(1, c.num_classes, 1, 1);
    d_logit.data[class_id] = 1.f;
    nn::Tensor d_s16 = c.gap.backward(c.head.backward(d_logit));
    nn::Tensor d_act = c.backbone.grad_at_stage(method.target_layer, d_s16);

    if (method.kind == CamKind::GradCam) {
      for (int k = 0; k < ch; ++k) {
        const float* g = d_act.data.data() + std::size_t(k) * fh * fw;
        const float* a = act->data.data() + std::size_t(k) * fh * fw;
        float alpha = 0.f;
        for (int p = 0; p < fh * fw; ++p) alpha += g[p];
        alpha /= float(fh * fw);
        for (int p = 0; p < fh * fw; ++p) raw[p] += alpha * a[p];
      }
    } else {  // LayerCAM: per-position positive-gradient weighting
      for (int k = 0; k < ch; ++k) {
        const float* g = d_act.data.data() + std::size_t(k) * fh * fw;
        const float* a = act->data.data() + std::size_t(k) * fh * fw;
        for (int p = 0; p < fh * fw; ++p) raw[p] += std::max(g[p], 0.f) * a[p];
      }
    }
  }

  for (auto& v : raw) v = std::max(v, 0.f);
  std::vector<float> up = nn::bilinear_resize_plane(
      raw, fh, fw, frame.image.dom.height, frame.image.dom.width);
  normalize_cam(up);

  Cam cam(frame.image.dom, frame.frame_index, class_id);
  cam.values = std::move(up);
  return cam;
}

void save_classifier(const Classifier& c, const std::string& path) {
  auto& mut = const_cast<Classifier&>(c);
  NamedArrays arrays;
  int idx = 0;
  for (nn::Param* p : mut.params()) {
    char name[16];
    std::snprintf(name, sizeof(name), "p%03d", idx++);
    arrays[name] =
        ArrayData::from_floats(p->value, {std::int64_t(p->value.size())});
  }
  save_arrays(path, arrays);
  nlohmann::json side = {{"arch", "resnet-small"},
                         {"num_classes", c.num_classes},
                         {"input_h", c.input_h},
                         {"input_w", c.input_w}};
  std::ofstream f(path + ".json");
  f << side.dump(2) << "\n";
  if (!f) throw Error("save_classifier: cannot write sidecar");
}

Classifier load_classifier(const std::string& path) {
  std::ifstream sf(path + ".json");
  if (!sf) throw Error("load_classifier: missing sidecar '" + path + ".json'");
  nlohmann::json side = nlohmann::json::parse(sf);
  Classifier c(side.at("num_classes").get<int>(), side.at("input_h").get<int>(),
               side.at("input_w").get<int>(), 0);
  NamedArrays arrays = load_arrays(path);
  int idx = 0;
  for (nn::Param* p : c.params()) {
    char name[16];
    std::snprintf(name, sizeof(name), "p%03d", idx++);
    auto it = arrays.find(name);
    if (it == arrays.end()) throw Error("load_classifier: missing array");
    std::vector<float> v = it->second.to_floats();
    if (v.size() != p->value.size())
      throw Error("load_classifier: size mismatch for " + std::string(name));
    p->value = std::move(v);
  }
  return c;
}

}  // namespace tcam
