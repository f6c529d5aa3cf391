#include "tcam/temporal.hpp"

#include <algorithm>

namespace tcam {

CamSequence select_sequence(const std::vector<Cam>& shot_cams, int t, int n) {
  if (n < 0) throw Error("select_sequence: n must be >= 0");
  auto it = std::find_if(shot_cams.begin(), shot_cams.end(),
                         [t](const Cam& c) { return c.frame_index == t; });
  if (it == shot_cams.end())
    throw Error("select_sequence: frame " + std::to_string(t) + " not in shot");
  const int pos = int(it - shot_cams.begin());
  const int first = std::max(0, pos - n);

  CamSequence seq;
  seq.n = n;
  for (int i = pos; i >= first; --i) seq.cams.push_back(shot_cams[i]);
  return seq;
}

Cam cam_tmp(const CamSequence& seq) {
  if (seq.cams.empty()) throw Error("cam_tmp: empty sequence");
  const Cam& head = seq.cams.front();
  Cam out = head;
  for (std::size_t i = 1; i < seq.cams.size(); ++i) {
    const Cam& c = seq.cams[i];
    if (!(c.dom == head.dom)) throw Error("cam_tmp: CAM shape mismatch");
    for (std::size_t p = 0; p < out.values.size(); ++p)
      out.values[p] = std::max(out.values[p], c.values[p]);
  }
  return out;
}

}  // namespace tcam
