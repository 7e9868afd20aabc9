#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "deflare/app/common.hpp"
#include "deflare/app/synth.hpp"
#include "deflare/ssl/train.hpp"

namespace deflare::app {

struct TrainOptions {
  std::optional<fs::path> config;
  fs::path data;
  fs::path out;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // "path.to.field=json-value"
  bool quiet = true;
};

// Applies "a.b.c=value" onto a JSON object; the value is parsed as JSON when
// possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  std::string pointer;
  for (char c : key) pointer += c == '.' ? '/' : c;
  j[nlohmann::json::json_pointer("/" + pointer)] = value;
}

inline TrainConfig resolve_train_config(const TrainOptions& o) {
  nlohmann::json j = o.config ? read_json(*o.config) : nlohmann::json(TrainConfig{});
  for (const auto& a : o.overrides) apply_override(j, a);
  if (o.steps) j["steps"] = *o.steps;
  if (o.seed) j["seed"] = *o.seed;
  return j.get<TrainConfig>();
}

inline TrainData to_train_data(const LoadedDataset& d) {
  TrainData t;
  for (const auto& s : d.labeled) t.labeled.push_back({s.id, s.input, s.target});
  for (const auto& u : d.unlabeled) t.unlabeled.push_back({u.id, u.image});
  return t;
}

inline std::string checkpoint_name(std::size_t step) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "step_%06zu.ckpt", step);
  return buf;
}

struct TrainSummary {
  nlohmann::json json;
  EvalRecord first;
  EvalRecord last;
  fs::path final_checkpoint;
  fs::path repository;
};

inline TrainSummary cmd_train(const TrainOptions& o, const QualityScorer& scorer = reference_scorer()) {
  const TrainConfig cfg = resolve_train_config(o);
  const TrainData data = to_train_data(load_dataset(o.data));
  const fs::path root = output_path(o.out);
  ensure_dir(root / "checkpoints");
  write_json(root / "config.json", cfg);
  const std::size_t final_step = total_steps(cfg, data);

  NdjsonLog log(root / "train_log.ndjson",
                {{"seed", cfg.seed},
                 {"config", cfg},
                 {"scorer", {{"name", scorer.name}, {"version", scorer.version}}},
                 {"labeled", data.labeled.size()},
                 {"unlabeled", data.unlabeled.size()},
                 {"final_step", final_step}});
  std::vector<std::string> checkpoints;
  RunHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    log.write(r);
    if (!o.quiet && (r.step % 10 == 0 || r.step + 1 == final_step)) {
      std::fprintf(stderr, "step %zu/%zu total %.6f lr %.3g%s\n", r.step + 1, final_step,
                   r.losses.count("total") ? r.losses.at("total") : NAN, r.lr, r.aborted ? " (aborted)" : "");
    }
  };
  hooks.on_eval = [&](const EvalRecord& r) { log.write(r); };
  hooks.on_checkpoint = [&](const TrainState& st) {
    const std::string name = checkpoint_name(st.step);
    io::write_archive(root / "checkpoints" / name, checkpoint_archive(st, cfg, final_step));
    checkpoints.push_back(name);
  };
  RunResult res = run_training(cfg, data, scorer, hooks);
  if (res.state.step != 0) hooks.on_checkpoint(res.state);

  const fs::path ckpt = root / "checkpoints" / checkpoints.back();
  const fs::path repo_path = root / "repository.arch";
  io::write_archive(repo_path, repository_archive(res.state.repo, scorer, cfg.repository));

  TrainSummary s{{}, res.evals.front(), res.evals.back(), ckpt, repo_path};
  s.json = {{"seed", cfg.seed},
            {"steps", res.state.step},
            {"aborted_steps", res.aborted},
            {"checkpoints", checkpoints},
            {"final_checkpoint", "checkpoints/" + checkpoints.back()},
            {"final_checkpoint_sha256", io::file_sha256(ckpt)},
            {"repository", "repository.arch"},
            {"repository_sha256", io::file_sha256(repo_path)},
            {"eval_first", s.first},
            {"eval_last", s.last},
            {"supervised_ratio", s.first.supervised > 0 ? s.last.supervised / s.first.supervised : 0.0},
            {"psnr_gain_db", s.last.psnr_student - s.last.psnr_input}};
  write_json(root / "summary.json", s.json);
  return s;
}

}  // namespace deflare::app
