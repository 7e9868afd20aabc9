#pragma once

// Teacher-student training loop. Each step:
//   teacher inference on weak views -> repository update -> student forward on
//   labeled inputs and strong views -> sup + ramped eta * masked unsup ->
//   backward, Adam, EMA.
// A step whose loss or gradient turns non-finite is rolled back and logged.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deflare/io/archive.hpp"
#include "deflare/losses/losses.hpp"
#include "deflare/metrics/metrics.hpp"
#include "deflare/model/raliformer.hpp"
#include "deflare/ssl/optim.hpp"
#include "deflare/ssl/repository.hpp"
#include "deflare/synth/augment.hpp"

namespace deflare {

struct TrainConfig {
  ModelConfig model;
  LossWeights losses;
  RepositoryConfig repository;
  ScheduleConfig schedule;
  StrongAugParams strong;
  std::size_t labeled_batch = 4;
  std::size_t unlabeled_batch = 4;
  std::optional<std::size_t> steps;  // unset: total_epochs * steps_per_epoch
  std::uint64_t seed = 0;
  std::size_t patch_size = 4;
  std::size_t patch_stride = 4;
  std::size_t negatives = 1;
  std::size_t checkpoint_every = 0;  // 0: initial and final only
  std::size_t eval_every = 0;        // 0: first and last step only

  void validate() const {
    model.validate();
    losses.validate();
    repository.validate();
    schedule.validate();
    if (labeled_batch < 1) throw ConfigError("labeled_batch must be >= 1");
    if (labeled_batch < schedule.grad_accum_steps) {
      throw ConfigError("labeled_batch must be >= schedule.grad_accum_steps");
    }
    if (patch_size < 1 || patch_stride < 1) throw ConfigError("patch_size and patch_stride must be >= 1");
    if (negatives < 1) throw ConfigError("negatives must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"losses", c.losses},
       {"repository", c.repository},
       {"schedule", c.schedule},
       {"strong_augment", c.strong},
       {"labeled_batch", c.labeled_batch},
       {"unlabeled_batch", c.unlabeled_batch},
       {"steps", c.steps ? nlohmann::json(*c.steps) : nlohmann::json(nullptr)},
       {"seed", c.seed},
       {"patch_size", c.patch_size},
       {"patch_stride", c.patch_stride},
       {"negatives", c.negatives},
       {"checkpoint_every", c.checkpoint_every},
       {"eval_every", c.eval_every}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& prefix) {
  if (!j.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config field '" + path + "'");
    reject_unknown_keys(value, known.at(key), path);
  }
}

}  // namespace detail

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  detail::reject_unknown_keys(j, nlohmann::json(TrainConfig{}), "");
  try {
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("losses")) c.losses = j.at("losses").get<LossWeights>();
    if (j.contains("repository")) c.repository = j.at("repository").get<RepositoryConfig>();
    if (j.contains("schedule")) c.schedule = j.at("schedule").get<ScheduleConfig>();
    if (j.contains("strong_augment")) c.strong = j.at("strong_augment").get<StrongAugParams>();
    c.labeled_batch = j.value("labeled_batch", c.labeled_batch);
    c.unlabeled_batch = j.value("unlabeled_batch", c.unlabeled_batch);
    if (j.contains("steps")) {
      c.steps = j.at("steps").is_null() ? std::nullopt : std::optional(j.at("steps").get<std::size_t>());
    }
    c.seed = j.value("seed", c.seed);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.patch_stride = j.value("patch_stride", c.patch_stride);
    c.negatives = j.value("negatives", c.negatives);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.eval_every = j.value("eval_every", c.eval_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
}

struct LabeledSample {
  std::string id;
  Image input;
  Image target;
};

struct UnlabeledSample {
  std::string id;
  Image image;
};

struct TrainData {
  std::vector<LabeledSample> labeled;
  std::vector<UnlabeledSample> unlabeled;

  void validate(const ModelConfig& model) const {
    if (labeled.empty()) throw ConfigError("training needs at least one labeled pair");
    const Shape s = labeled.front().input.shape();
    auto check = [&](const Image& x, const std::string& id) {
      if (x.shape() != s) throw DimensionError("sample '" + id + "' has shape " + shape_str(x.shape()));
      image::check_unit_range(x, "training data");
    };
    for (const auto& p : labeled) {
      check(p.input, p.id);
      check(p.target, p.id);
    }
    for (const auto& u : unlabeled) check(u.image, u.id);
    detail::check_input<double>(Shape{1, s[0], s[1], s[2]}, model);
  }
};

struct TrainState {
  ParamSet<double> student;
  ParamSet<double> teacher;
  AdamState<double> adam;
  Repository repo;
  std::size_t step = 0;
  std::uint64_t seed = 0;
};

inline TrainState init_train_state(const TrainConfig& cfg, const TrainData& data) {
  TrainState st;
  st.student = init_params<double>(cfg.model, cfg.seed);
  st.teacher = st.student;
  st.adam = AdamState<double>::zeros_like(st.student);
  std::vector<std::string> ids;
  for (const auto& u : data.unlabeled) ids.push_back(u.id);
  st.repo = make_repository(ids, data.labeled.front().input.shape());
  st.seed = cfg.seed;
  return st;
}

inline std::size_t steps_per_epoch(const TrainConfig& cfg, const TrainData& data) {
  return (data.labeled.size() + cfg.labeled_batch - 1) / cfg.labeled_batch;
}

inline std::size_t total_steps(const TrainConfig& cfg, const TrainData& data) {
  return cfg.steps ? *cfg.steps : cfg.schedule.total_epochs * steps_per_epoch(cfg, data);
}

// Fixed purpose tags for the counter-based streams.
enum class Stream : std::uint64_t { labeled_order = 1, unlabeled_order = 2, step = 3 };

inline Rng stream(std::uint64_t seed, Stream s, std::uint64_t index) {
  return Rng(seed).fork(static_cast<std::uint64_t>(s)).fork(index);
}

inline std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

inline std::vector<std::size_t> labeled_indices(const TrainConfig& cfg, const TrainData& data, std::size_t step) {
  const std::size_t spe = steps_per_epoch(cfg, data);
  const auto order = permutation(data.labeled.size(), stream(cfg.seed, Stream::labeled_order, step / spe));
  const std::size_t begin = (step % spe) * cfg.labeled_batch;
  const std::size_t end = std::min(begin + cfg.labeled_batch, order.size());
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

inline std::vector<std::size_t> unlabeled_indices(const TrainConfig& cfg, const TrainData& data, std::size_t step) {
  const std::size_t n = data.unlabeled.size();
  std::vector<std::size_t> out;
  if (n == 0) return out;
  const std::size_t take = std::min(cfg.unlabeled_batch, n);
  for (std::size_t k = step * take; k < step * take + take; ++k) {
    out.push_back(permutation(n, stream(cfg.seed, Stream::unlabeled_order, k / n))[k % n]);
  }
  return out;
}

inline double epoch_of(const TrainConfig& cfg, const TrainData& data, std::size_t step) {
  return static_cast<double>(step) / static_cast<double>(steps_per_epoch(cfg, data));
}

struct StepRecord {
  std::size_t step = 0;
  double epoch = 0;
  double lr = 0;
  double eta = 0;
  bool mixup = false;
  bool aborted = false;
  std::string abort_reason;
  std::map<std::string, double> losses;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<RepositoryEvent> events;
};

inline void to_json(nlohmann::json& j, const StepRecord& r) {
  j = {{"type", "step"},     {"step", r.step},         {"epoch", r.epoch},   {"lr", r.lr},
       {"eta", r.eta},       {"mixup", r.mixup},       {"aborted", r.aborted}, {"losses", r.losses},
       {"accepted", r.accepted}, {"rejected", r.rejected}, {"events", r.events}};
  if (r.aborted) j["abort_reason"] = r.abort_reason;
}

namespace detail {

struct MicroBatch {
  std::vector<Image> inputs, targets;  // labeled
  std::vector<Image> strong, pseudo;   // unlabeled
  std::vector<bool> valid;
};

inline std::map<std::string, double> student_pass(const MicroBatch& mb, const ParamSet<double>& student,
                                                  const TrainConfig& cfg, double eta, ParamSet<double>& grads,
                                                  double grad_scale) {
  Tape<double> tape;
  BoundParams<double> p = bind_params(tape, student, true);
  Var<double> pred = raliformer_forward(tape.constant(stack_batch<double>(mb.inputs)), p, cfg.model);
  LossTerms<double> sup = supervised_loss(pred, tape.constant(stack_batch<double>(mb.targets)), cfg.losses,
                                          pyramid_extractor<double>());
  std::map<std::string, double> parts = sup.parts;
  Var<double> total = sup.total;
  if (!mb.strong.empty()) {
    Var<double> strong = tape.constant(stack_batch<double>(mb.strong));
    Var<double> pred_s = raliformer_forward(strong, p, cfg.model);
    FeatureMap<double> projector = [&](Var<double> x) { return encoder_features(x, p, cfg.model); };
    LossTerms<double> unsup = unsupervised_loss(pred_s, tape.constant(stack_batch<double>(mb.pseudo)), strong,
                                                mb.valid, cfg.losses, PatchGrid{cfg.patch_size, cfg.patch_stride},
                                                projector, cfg.negatives);
    parts.insert(unsup.parts.begin(), unsup.parts.end());
    LossWeights w = cfg.losses;
    w.unsup = eta;
    total = total_loss(total, unsup.total, w);
  }
  parts["total"] = total.value()[0];
  tape.backward(total);
  for (const auto& [name, v] : p) {
    const Tensor<double> g = tape.grad(v);
    Tensor<double>& acc = grads.at(name);
    if (g.empty()) continue;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad_scale * g[i];
  }
  return parts;
}

}  // namespace detail

// Advances `st` by one step. The state is restored to its pre-step value if
// anything non-finite appears; the step counter still advances.
inline StepRecord train_step(TrainState& st, const TrainData& data, const TrainConfig& cfg,
                             const QualityScorer& scorer) {
  const std::size_t final_step = total_steps(cfg, data);
  StepRecord rec;
  rec.step = st.step;
  rec.epoch = epoch_of(cfg, data, st.step);
  rec.lr = lr_schedule(st.step + 1, final_step, cfg.schedule);
  rec.eta = unsup_ramp(rec.epoch, cfg.schedule.ramp_epochs, cfg.losses.unsup);
  Rng rng = stream(cfg.seed, Stream::step, st.step);

  const auto li = labeled_indices(cfg, data, st.step);
  const auto ui = unlabeled_indices(cfg, data, st.step);

  std::vector<LabeledPair> pairs;
  for (std::size_t i : li) pairs.push_back({data.labeled[i].input, data.labeled[i].target});
  rec.mixup = rec.epoch >= static_cast<double>(cfg.schedule.mixup_start_epoch);
  if (rec.mixup) {
    const auto original = pairs;
    for (auto& p : pairs) {
      const auto& partner = original[rng.below(original.size())];
      p = mixup(p, partner, cfg.schedule.mixup_alpha, rng);
    }
  }

  std::vector<WeakView> weak;
  std::vector<Image> strong;
  for (std::size_t u : ui) {
    weak.push_back(weak_augment(data.unlabeled[u].image, rng));
    strong.push_back(strong_augment(weak.back().image, sample_strong_draw(cfg.strong, rng)));
  }

  std::map<std::string, RepositoryEntry> touched;
  for (std::size_t u : ui) touched.emplace(data.unlabeled[u].id, st.repo.at(data.unlabeled[u].id));
  const ParamSet<double> student_before = st.student;
  const AdamState<double> adam_before = st.adam;
  auto rollback = [&](const std::string& why) {
    st.student = student_before;
    st.adam = adam_before;
    for (auto& [id, e] : touched) st.repo[id] = e;
    rec.aborted = true;
    rec.abort_reason = why;
    rec.losses.clear();
    ++st.step;
    return rec;
  };

  try {
    detail::MicroBatch all;
    if (!ui.empty()) {
      std::vector<Image> views;
      for (const auto& w : weak) views.push_back(w.image);
      const Tensor<double> teacher_out = raliformer_infer(stack_batch<double>(views), st.teacher, cfg.model);
      std::vector<RepositoryCandidate> cands;
      for (std::size_t k = 0; k < ui.size(); ++k) {
        Image p_hat = batch_slice(teacher_out, k, k + 1).reshaped(views[k].shape());
        if (weak[k].flipped) p_hat = image::hflip(p_hat);
        cands.push_back({data.unlabeled[ui[k]].id, data.unlabeled[ui[k]].image, std::move(p_hat)});
      }
      rec.events = repository_update(st.repo, cands, cfg.repository, scorer);
      for (const auto& ev : rec.events) (ev.accepted ? rec.accepted : rec.rejected) += 1;
      for (std::size_t k = 0; k < ui.size(); ++k) {
        const Image& stored = st.repo.at(data.unlabeled[ui[k]].id).label;
        all.pseudo.push_back(weak[k].flipped ? image::hflip(stored) : stored);
        all.valid.push_back(validity_mask(stored, cfg.repository.tau_black));
      }
      all.strong = std::move(strong);
    }
    for (auto& p : pairs) {
      all.inputs.push_back(std::move(p.input));
      all.targets.push_back(std::move(p.target));
    }

    ParamSet<double> grads;
    for (const auto& [name, v] : st.student) grads.emplace(name, Tensor<double>::zeros(v.shape()));
    const std::size_t chunks = cfg.schedule.grad_accum_steps;
    const double scale = 1.0 / static_cast<double>(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
      detail::MicroBatch mb;
      auto range = [&](std::size_t n) {
        return std::pair{c * n / chunks, (c + 1) * n / chunks};
      };
      const auto [lb, le] = range(all.inputs.size());
      for (std::size_t i = lb; i < le; ++i) {
        mb.inputs.push_back(all.inputs[i]);
        mb.targets.push_back(all.targets[i]);
      }
      const auto [ub, ue] = range(all.strong.size());
      for (std::size_t i = ub; i < ue; ++i) {
        mb.strong.push_back(all.strong[i]);
        mb.pseudo.push_back(all.pseudo[i]);
        mb.valid.push_back(all.valid[i]);
      }
      const auto parts = detail::student_pass(mb, st.student, cfg, rec.eta, grads, scale);
      for (const auto& [k, v] : parts) rec.losses[k] += scale * v;
    }
    if (!adam_step(st.student, grads, st.adam, rec.lr,
                   {cfg.schedule.adam_beta1, cfg.schedule.adam_beta2, cfg.schedule.adam_eps})) {
      return rollback("non-finite gradient");
    }
    for (const auto& [name, v] : st.student)
      if (!v.all_finite()) return rollback("non-finite parameter");
  } catch (const NumericError& e) {
    return rollback(e.what());
  }
  ema_update(st.teacher, st.student, cfg.schedule.ema_alpha);
  ++st.step;
  return rec;
}

struct EvalRecord {
  std::size_t step = 0;
  double supervised = 0;  // on un-mixed labeled pairs
  std::map<std::string, double> parts;
  double psnr_student = 0;
  double psnr_teacher = 0;
  double psnr_input = 0;
};

inline void to_json(nlohmann::json& j, const EvalRecord& r) {
  j = {{"type", "eval"},
       {"step", r.step},
       {"supervised", r.supervised},
       {"parts", r.parts},
       {"psnr_student", r.psnr_student},
       {"psnr_teacher", r.psnr_teacher},
       {"psnr_input", r.psnr_input}};
}

inline EvalRecord evaluate(const TrainState& st, const TrainData& data, const TrainConfig& cfg) {
  std::vector<Image> inputs, targets;
  for (const auto& p : data.labeled) {
    inputs.push_back(p.input);
    targets.push_back(p.target);
  }
  const Tensor<double> x = stack_batch<double>(inputs), y = stack_batch<double>(targets);
  EvalRecord r;
  r.step = st.step;
  {
    Tape<double> tape;
    BoundParams<double> p = bind_params(tape, st.student, false);
    LossTerms<double> sup = supervised_loss(raliformer_forward(tape.constant(x), p, cfg.model),
                                            tape.constant(y), cfg.losses, pyramid_extractor<double>());
    r.supervised = sup.parts.at("supervised");
    r.parts = sup.parts;
  }
  const Tensor<double> ys = raliformer_infer(x, st.student, cfg.model);
  const Tensor<double> yt = raliformer_infer(x, st.teacher, cfg.model);
  const double n = static_cast<double>(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> yi = batch_slice(y, i, i + 1);
    r.psnr_student += psnr(batch_slice(ys, i, i + 1), yi) / n;
    r.psnr_teacher += psnr(batch_slice(yt, i, i + 1), yi) / n;
    r.psnr_input += psnr(batch_slice(x, i, i + 1), yi) / n;
  }
  return r;
}

inline io::Archive checkpoint_archive(const TrainState& st, const TrainConfig& cfg, std::size_t final_step) {
  io::Archive a;
  a.header = {{"kind", "checkpoint"},
              {"step", st.step},
              {"final_step", final_step},
              {"seed", st.seed},
              {"rng", {{"algorithm", Rng::kAlgorithm}, {"seed", st.seed}, {"counter", st.step}}},
              {"adam_t", st.adam.t},
              {"config", cfg}};
  auto put = [&](const std::string& prefix, const ParamSet<double>& ps) {
    for (const auto& [name, v] : ps) a.tensors.emplace(prefix + "/" + name, v);
  };
  put("student", st.student);
  put("teacher", st.teacher);
  put("adam_m", st.adam.m);
  put("adam_v", st.adam.v);
  return a;
}

struct LoadedCheckpoint {
  TrainConfig config;
  TrainState state;  // repository left empty
};

inline LoadedCheckpoint checkpoint_from_archive(const io::Archive& a) {
  if (a.header.value("kind", "") != "checkpoint") throw IoError("archive is not a checkpoint");
  LoadedCheckpoint c;
  c.config = a.header.at("config").get<TrainConfig>();
  c.state.step = a.header.at("step").get<std::size_t>();
  c.state.seed = a.header.at("seed").get<std::uint64_t>();
  c.state.adam.t = a.header.at("adam_t").get<std::size_t>();
  for (const auto& [name, t] : a.tensors) {
    const auto slash = name.find('/');
    const std::string group = name.substr(0, slash), key = name.substr(slash + 1);
    if (group == "student") c.state.student.emplace(key, t);
    else if (group == "teacher") c.state.teacher.emplace(key, t);
    else if (group == "adam_m") c.state.adam.m.emplace(key, t);
    else if (group == "adam_v") c.state.adam.v.emplace(key, t);
    else throw IoError("unknown checkpoint tensor '" + name + "'");
  }
  if (!shape_congruent(c.state.student, c.state.teacher)) throw IoError("checkpoint student/teacher differ");
  return c;
}

struct RunHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
  std::function<void(const TrainState&)> on_checkpoint;  // after step 0 state and every checkpoint_every steps
};

struct RunResult {
  TrainState state;
  std::vector<EvalRecord> evals;
  std::size_t aborted = 0;
};

inline RunResult run_training(const TrainConfig& cfg, const TrainData& data, const QualityScorer& scorer,
                              const RunHooks& hooks = {}) {
  cfg.validate();
  data.validate(cfg.model);
  RunResult res{init_train_state(cfg, data), {}, 0};
  TrainState& st = res.state;
  const std::size_t final_step = total_steps(cfg, data);
  auto eval = [&] {
    res.evals.push_back(evaluate(st, data, cfg));
    if (hooks.on_eval) hooks.on_eval(res.evals.back());
  };
  eval();
  if (hooks.on_checkpoint) hooks.on_checkpoint(st);
  while (st.step < final_step) {
    const StepRecord rec = train_step(st, data, cfg, scorer);
    if (rec.aborted) ++res.aborted;
    if (hooks.on_step) hooks.on_step(rec);
    const bool last = st.step == final_step;
    if (last || (cfg.eval_every && st.step % cfg.eval_every == 0)) eval();
    if (hooks.on_checkpoint && !last && cfg.checkpoint_every && st.step % cfg.checkpoint_every == 0) {
      hooks.on_checkpoint(st);
    }
  }
  return res;
}

}  // namespace deflare
