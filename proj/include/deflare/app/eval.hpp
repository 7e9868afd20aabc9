#pragma once

#include <optional>
#include <string>

#include "deflare/app/common.hpp"
#include "deflare/io/png.hpp"
#include "deflare/metrics/metrics.hpp"
#include "deflare/model/raliformer.hpp"
#include "deflare/ssl/train.hpp"

namespace deflare::app {

struct EvalOptions {
  fs::path pred;
  fs::path gt;
  std::optional<fs::path> masks;
  fs::path report;
};

inline nlohmann::json cmd_eval(const EvalOptions& o) {
  const auto pred_names = list_files(o.pred, ".png");
  const auto gt_names = list_files(o.gt, ".png");
  std::vector<std::string> missing;
  for (const auto& n : gt_names)
    if (!std::binary_search(pred_names.begin(), pred_names.end(), n)) missing.push_back("missing prediction: " + n);
  for (const auto& n : pred_names)
    if (!std::binary_search(gt_names.begin(), gt_names.end(), n)) missing.push_back("no ground truth: " + n);
  if (!missing.empty()) {
    std::string msg = "prediction and ground-truth directories do not match:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  if (gt_names.empty()) throw ConfigError("no PNG images in " + o.gt.string());

  MetricsAccumulator acc;
  nlohmann::json per_image = nlohmann::json::array();
  for (const auto& n : gt_names) {
    const Image p = io::read_png(o.pred / n), g = io::read_png(o.gt / n);
    std::vector<RegionMask> masks;
    if (o.masks) {
      for (const char* kind : {"glare", "streak"}) {
        const fs::path mp = *o.masks / kind / n;
        if (fs::exists(mp)) masks.push_back({kind, io::read_png(mp, 1)});
      }
    }
    acc.add(p, g, masks);
    nlohmann::json row = {{"file", n}, {"psnr_db", psnr(p, g)}, {"ssim", ssim(p, g)}};
    for (const auto& m : masks)
      if (m.count()) row["masked_psnr"][m.name] = masked_psnr(p, g, m);
    per_image.push_back(std::move(row));
  }
  nlohmann::json report = acc.report();
  report["images"] = per_image;
  write_json(output_path(o.report), report);
  return report;
}

struct PredictOptions {
  fs::path checkpoint;
  fs::path input;
  fs::path out;
  bool teacher = false;
};

// Restores every PNG in a directory with the student (or teacher) weights,
// keeping file names so the output lines up with a ground-truth directory.
inline std::size_t cmd_predict(const PredictOptions& o) {
  const LoadedCheckpoint ck = checkpoint_from_archive(io::read_archive(o.checkpoint));
  const fs::path out = output_path(o.out);
  ensure_dir(out);
  std::size_t n = 0;
  for (const auto& name : list_files(o.input, ".png")) {
    const Image x = io::read_png(o.input / name);
    const Tensor<double> y = raliformer_infer(x.reshaped(Shape{1, x.dim(0), x.dim(1), x.dim(2)}),
                                              o.teacher ? ck.state.teacher : ck.state.student, ck.config.model);
    io::write_png(out / name, y.reshaped(x.shape()));
    ++n;
  }
  return n;
}

}  // namespace deflare::app
