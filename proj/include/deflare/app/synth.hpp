#pragma once

#include <optional>
#include <string>

#include "deflare/app/common.hpp"
#include "deflare/io/png.hpp"
#include "deflare/synth/dataset.hpp"

namespace deflare::app {

struct SynthOptions {
  fs::path out;
  std::size_t count = 8;                 // labeled pairs
  std::optional<std::size_t> unlabeled;  // defaults to count
  std::size_t extent = 64;
  std::uint64_t seed = 0;
  bool procedural = false;
  std::optional<fs::path> backgrounds;
  std::optional<fs::path> flares;
  std::optional<fs::path> augment_config;  // AugmentationParams JSON
};

inline std::vector<Image> load_png_dir(const fs::path& dir) {
  std::vector<Image> out;
  for (const auto& name : list_files(dir, ".png")) out.push_back(io::read_png(dir / name));
  if (out.empty()) throw UsageError("no PNG images in " + dir.string());
  return out;
}

inline nlohmann::json cmd_synth(const SynthOptions& o) {
  const bool has_sources = o.backgrounds || o.flares;
  if (!o.procedural && !has_sources) {
    throw UsageError("synth needs --procedural or --backgrounds/--flares source directories");
  }
  if (o.procedural && has_sources) throw UsageError("--procedural cannot be combined with source directories");
  AugmentationParams params;
  if (o.augment_config) params = read_json(*o.augment_config).get<AugmentationParams>();
  SynthSources sources;
  if (o.backgrounds) sources.backgrounds = load_png_dir(*o.backgrounds);
  if (o.flares) sources.flares = load_png_dir(*o.flares);

  const std::size_t unlabeled = o.unlabeled.value_or(o.count);
  const SynthDataset ds = synthesize_dataset(o.count, unlabeled, o.extent, o.seed, params, sources);

  const fs::path root = output_path(o.out);
  for (const char* sub : {"labeled/input", "labeled/target", "unlabeled", "masks/glare", "masks/streak"}) {
    ensure_dir(root / sub);
  }
  nlohmann::json labeled = nlohmann::json::array(), unpaired = nlohmann::json::array();
  for (const auto& s : ds.labeled) {
    const std::string file = s.id + ".png";
    const std::string in = "labeled/input/" + file, tg = "labeled/target/" + file;
    const std::string gm = "masks/glare/" + file, sm = "masks/streak/" + file;
    io::write_png(root / in, s.input);
    io::write_png(root / tg, s.target);
    io::write_png(root / gm, s.glare);
    io::write_png(root / sm, s.streak);
    labeled.push_back({{"id", s.id}, {"input", in}, {"target", tg}, {"glare_mask", gm}, {"streak_mask", sm}});
  }
  for (const auto& u : ds.unlabeled) {
    const std::string path = "unlabeled/" + u.id + ".png";
    io::write_png(root / path, u.image);
    unpaired.push_back({{"id", u.id}, {"image", path}});
  }
  nlohmann::json manifest = {{"kind", "deflare-dataset"},
                             {"seed", o.seed},
                             {"extent", o.extent},
                             {"source", o.procedural ? "procedural" : "images"},
                             {"augment", params},
                             {"labeled", labeled},
                             {"unlabeled", unpaired}};
  write_json(root / "manifest.json", manifest);
  return manifest;
}

struct LoadedDataset {
  std::vector<SynthSample> labeled;  // masks empty when the manifest has none
  std::vector<UnpairedSample> unlabeled;
};

inline LoadedDataset load_dataset(const fs::path& root) {
  const nlohmann::json m = read_json(root / "manifest.json");
  LoadedDataset d;
  try {
    for (const auto& e : m.at("labeled")) {
      SynthSample s;
      s.id = e.at("id").get<std::string>();
      s.input = io::read_png(root / e.at("input").get<std::string>());
      s.target = io::read_png(root / e.at("target").get<std::string>());
      if (e.contains("glare_mask")) s.glare = io::read_png(root / e.at("glare_mask").get<std::string>(), 1);
      if (e.contains("streak_mask")) s.streak = io::read_png(root / e.at("streak_mask").get<std::string>(), 1);
      d.labeled.push_back(std::move(s));
    }
    for (const auto& e : m.at("unlabeled")) {
      d.unlabeled.push_back({e.at("id").get<std::string>(), io::read_png(root / e.at("image").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + (root / "manifest.json").string() + ": " + e.what());
  }
  return d;
}

}  // namespace deflare::app
