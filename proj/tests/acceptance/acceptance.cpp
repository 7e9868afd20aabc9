// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is the number of failed criteria outside the --allow-fail list.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deflare/app/grad_suite.hpp"
#include "deflare/app/synth.hpp"
#include "deflare/app/train.hpp"
#include "deflare/losses/losses.hpp"
#include "deflare/metrics/metrics.hpp"
#include "deflare/model/attention.hpp"
#include "deflare/ssl/optim.hpp"
#include "deflare/ssl/simulation.hpp"

using namespace deflare;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor<double> uniform(Shape s, Rng& rng, double lo, double hi) {
  Tensor<double> t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor<double> filled(Shape s, double v) {
  Tensor<double> t(std::move(s));
  for (double& x : t.data()) x = v;
  return t;
}

double scalar(Var<double> v) { return v.value()[0]; }

// 1 ---------------------------------------------------------------------------
Outcome gradient_suite() {
  const auto results = app::run_gradient_suite(1e-4);
  Outcome o{!results.empty(), ""};
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.report.max_rel_error >= worst) {
      worst = r.report.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed) {
      o.pass = false;
      failed += " " + r.name;
    }
  }
  o.detail = fmt("%zu cases, worst rel err %.2e (%s)", results.size(), worst, worst_name.c_str());
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// 2 ---------------------------------------------------------------------------
double phi(double x) { return x > 0 ? 1 + x : std::exp(x); }

// out_i = sum_j (phi(q_i).phi(k_j)) v_j / (eps + sum_j phi(q_i).phi(k_j))
Tensor<double> explicit_attention(const Tensor<double>& Q, const Tensor<double>& K, const Tensor<double>& V,
                                  double eps) {
  const std::size_t n = Q.dim(0), d = Q.dim(1), c = V.dim(1);
  Tensor<double> out(Shape{n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double den = eps;
    std::vector<double> num(c, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t a = 0; a < d; ++a) s += phi(Q[i * d + a]) * phi(K[j * d + a]);
      den += s;
      for (std::size_t b = 0; b < c; ++b) num[b] += s * V[j * c + b];
    }
    for (std::size_t b = 0; b < c; ++b) out[i * c + b] = num[b] / den;
  }
  return out;
}

Outcome attention_equivalence() {
  Rng rng(2024);
  double worst = 0;
  std::size_t max_n = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = trial == 0 ? 256 : 1 + rng.below(256);
    const std::size_t d = 1 + rng.below(16), c = 1 + rng.below(16);
    const double spread = rng.uniform(0.5, 3.0);
    const Tensor<double> q = uniform({n, d}, rng, -spread, spread), k = uniform({n, d}, rng, -spread, spread),
                         v = uniform({n, c}, rng, -1, 1);
    Tape<double> tape;
    const Tensor<double> got = relina_core(tape.constant(q), tape.constant(k), tape.constant(v), 1e-6).value();
    worst = std::max(worst, max_abs_diff(got, explicit_attention(q, k, v, 1e-6)));
    max_n = std::max(max_n, n);
  }
  return {worst < 1e-8, fmt("100 instances up to %zu tokens, max abs diff %.2e (< 1e-8)", max_n, worst)};
}

// 3 ---------------------------------------------------------------------------
// Seconds per call: minimum over repeats of a fixed-size batch of calls.
template <class F>
double per_call(std::size_t calls, std::size_t repeats, F&& f) {
  double best = INFINITY;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < calls; ++i) f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best / static_cast<double>(calls);
}

Outcome attention_complexity() {
  constexpr std::size_t d = 16;
  Rng rng(7);
  double lin[2], quad[2];
  const std::size_t sizes[2] = {1024, 4096};
  for (int i = 0; i < 2; ++i) {
    const std::size_t n = sizes[i];
    const Tensor<double> q = uniform({n, d}, rng, -1, 1), k = uniform({n, d}, rng, -1, 1), v = uniform({n, d}, rng, -1, 1);
    lin[i] = per_call(64, 7, [&] {
      Tape<double> tape;
      volatile double sink = relina_core(tape.constant(q), tape.constant(k), tape.constant(v), 1e-6).value()[0];
      (void)sink;
    });
    quad[i] = per_call(1, 3, [&] {
      volatile double sink = quadratic_attention(q, k, v, 1e-6)[0];
      (void)sink;
    });
  }
  const double rl = lin[1] / lin[0], rq = quad[1] / quad[0];
  return {rl < 8 && rq > 12,
          fmt("time(4096)/time(1024): linear %.2f (< 8), quadratic %.2f (> 12); linear %.3g s vs quadratic %.3g s at 4096",
              rl, rq, lin[1], quad[1])};
}

// 4, 5 ------------------------------------------------------------------------
QualityScorer scripted(double s) {
  return {"scripted", "1", [s](const Image&) { return s; }};
}

struct Expect {
  std::string what;
  bool ok;
};

Outcome repository_semantics(SimulationResult& gated) {
  RepositoryConfig cfg;
  cfg.beta = 0.25;
  const Shape s{3, 4, 4};
  Repository repo = make_repository({"u"}, s);
  const RepositoryEntry& e = repo.at("u");
  std::vector<Expect> checks;
  auto label_is = [&](double v) {
    for (double x : e.label.data())
      if (std::abs(x - v) > 1e-12) return false;
    return true;
  };

  // Uninitialized entry: blended from zeros, any score accepted.
  auto ev = repository_update_one(repo, {"u", filled(s, 0.9), filled(s, 0.6)}, cfg, scripted(-3.0));
  checks.push_back({"uninitialized", ev.accepted && ev.reason == "empty" && e.score == -3.0 && label_is(0.25 * 0.6) &&
                                         e.initialized});
  ev = repository_update_one(repo, {"u", filled(s, 0.9), filled(s, 0.6)}, cfg, scripted(10.0));
  checks.push_back({"above-margin", ev.accepted && ev.reason == "better" && e.score == 10.0 &&
                                        label_is(0.75 * 0.15 + 0.25 * 0.6)});
  const Image before = e.label;
  ev = repository_update_one(repo, {"u", filled(s, 0.9), filled(s, 0.6)}, cfg, scripted(10.4));
  checks.push_back({"below-margin", !ev.accepted && ev.reason == "margin" && e.score == 10.0 &&
                                        max_abs_diff(before, e.label) == 0.0});
  ev = repository_update_one(repo, {"u", filled(s, 0.5), filled(s, 0.01)}, cfg, scripted(99.0));
  checks.push_back({"black", !ev.accepted && ev.reason == "black" && e.score == 10.0 &&
                                 max_abs_diff(before, e.label) == 0.0});
  ev = repository_update_one(repo, {"u", filled(s, 1.0), filled(s, 0.95)}, cfg, scripted(99.0));
  checks.push_back({"fog", !ev.accepted && ev.reason == "fog" && e.score == 10.0 &&
                               max_abs_diff(before, e.label) == 0.0});
  // Blend with beta = 0.25 of a bounded candidate: min(0.8, 0.5 + 0.05) = 0.55.
  ev = repository_update_one(repo, {"u", filled(s, 0.5), filled(s, 0.8)}, cfg, scripted(10.6));
  checks.push_back({"blend", ev.accepted && ev.reason == "better" && e.score == 10.6 &&
                                 label_is(0.75 * 0.2625 + 0.25 * 0.55)});

  std::string failed;
  for (const auto& c : checks)
    if (!c.ok) failed += " " + c.what;

  std::size_t decreases = 0;
  for (const auto& h : gated.score_history) {
    bool started = false;
    for (std::size_t t = 0; t < h.size(); ++t) {
      if (started && h[t] < h[t - 1]) ++decreases;
      started = started || h[t] != 0.0;
    }
  }
  Outcome o{failed.empty() && decreases == 0,
            fmt("%zu scripted scenarios; 500-step run: %zu accepts, %zu rejects, %zu score decreases", checks.size(),
                gated.accepted, gated.rejected, decreases)};
  if (!failed.empty()) o.detail += "; mismatched:" + failed;
  return o;
}

Outcome gating_ablation(const SimulationResult& gated, const SimulationResult& all) {
  const double g = gated.mean_stored_score(), a = all.mean_stored_score();
  return {g >= a, fmt("mean stored score gated %.4f >= accept-all %.4f", g, a)};
}

// 6 ---------------------------------------------------------------------------
Outcome loss_identities() {
  Tape<double> t;
  std::vector<Expect> checks;
  const double ln2 = scalar(contrastive_loss(t.constant(Tensor<double>({1, 2}, {1.0, 0.0})),
                                             t.constant(Tensor<double>({1, 2}, {0.6, 0.8})),
                                             t.constant(Tensor<double>({1, 1, 2}, {0.6, -0.8})), 0.2));
  checks.push_back({"contrastive ln2", std::abs(ln2 - std::log(2.0)) <= 1e-9});
  const double opp = scalar(contrastive_loss(t.constant(Tensor<double>({1, 3}, {1, 2, 3})),
                                             t.constant(Tensor<double>({1, 3}, {2, 4, 6})),
                                             t.constant(Tensor<double>({1, 1, 3}, {-1, -2, -3})), 1.0));
  checks.push_back({"contrastive ln(1+e^-2)", std::abs(opp - std::log(1 + std::exp(-2.0))) <= 1e-9});

  Rng rng(606);
  const Tensor<double> x = uniform({2, 3, 16, 16}, rng, 0, 1), y = uniform({2, 3, 16, 16}, rng, 0, 1);
  LossWeights w;
  w.unsup = 0.0;
  Var<double> sup = supervised_loss(t.constant(x), t.constant(y), w, pyramid_extractor<double>()).total;
  Var<double> uns = unsupervised_loss<double>(t.constant(x), t.constant(y), nullptr, LossWeights{1, 0, 0, 0}).total;
  const double tot = scalar(total_loss(sup, uns, w));
  checks.push_back({"total eta=0 bitwise", std::memcmp(&tot, &sup.value()[0], sizeof tot) == 0});
  checks.push_back({"fft(x,x)=0", scalar(fft_loss(t.constant(x), t.constant(x))) == 0.0});

  for (double c : {0.25, -0.1}) {
    Tensor<double> xc = x;
    for (double& v : xc.data()) v += c;
    const double l1 = scalar(l1_loss(t.constant(xc), t.constant(x)));
    const double ff = scalar(fft_loss(t.constant(xc), t.constant(x)));
    const double pc = scalar(perceptual_loss(t.constant(xc), t.constant(x), pyramid_extractor<double>()));
    // A constant offset c: every pixel error is |c|; its spectrum is c*H*W at DC only, mean over bins gives |c|;
    // the average-pool pyramid preserves the offset at every level.
    checks.push_back({fmt("l1 offset %g", c), std::abs(l1 - std::abs(c)) <= 1e-9});
    checks.push_back({fmt("fft offset %g", c), std::abs(ff - std::abs(c)) <= 1e-9});
    checks.push_back({fmt("perceptual offset %g", c), std::abs(pc - std::abs(c)) <= 1e-9});
  }
  std::string failed;
  for (const auto& c : checks)
    if (!c.ok) failed += " [" + c.what + "]";
  Outcome o{failed.empty(), fmt("%zu identities; ln2 err %.1e, ln(1+e^-2) err %.1e", checks.size(),
                                std::abs(ln2 - std::log(2.0)), std::abs(opp - std::log(1 + std::exp(-2.0))))};
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// 7 ---------------------------------------------------------------------------
Outcome metric_oracles() {
  Rng rng(707);
  const Tensor<double> x = uniform({3, 32, 32}, rng, 0, 0.5);
  Tensor<double> off = x;
  for (double& v : off.data()) v += 0.5;
  const double p = psnr(off, x);
  const double s = ssim(x, x);
  const Tensor<double> y = uniform({3, 32, 32}, rng, 0, 1);
  const double full = masked_psnr(y, x, {"full", filled({1, 32, 32}, 1.0)});
  const double whole = psnr(y, x);
  Tensor<double> one_px = x;
  for (std::size_t c = 0; c < 3; ++c) one_px[(c * 32 + 5) * 32 + 7] += 0.1;
  Tensor<double> m({1, 32, 32});
  m[5 * 32 + 7] = 1.0;
  const double single = masked_psnr(one_px, x, {"px", m});
  const bool ok = std::abs(p - 6.0206) <= 1e-3 && std::abs(s - 1) <= 1e-9 && std::abs(full - whole) <= 1e-12 &&
                  std::abs(single - 20.0) <= 1e-6;
  return {ok, fmt("psnr(0.5 offset) %.4f dB, ssim(x,x) %.12f, full-mask diff %.1e, single pixel %.8f dB", p, s,
                  std::abs(full - whole), single)};
}

// 8, 9 ------------------------------------------------------------------------
struct ToyRuns {
  fs::path work;
  fs::path config;
  std::optional<app::TrainSummary> first, second;

  app::TrainSummary run(const std::string& name) {
    const fs::path data = work / "data";
    if (!fs::exists(data / "manifest.json")) {
      app::SynthOptions so;
      so.out = data;
      so.count = 4;
      so.unlabeled = 4;
      so.extent = 64;
      so.seed = 0;
      so.procedural = true;
      app::cmd_synth(so);
    }
    app::TrainOptions to;
    to.config = config;
    to.data = data;
    to.out = work / name;
    return app::cmd_train(to);
  }
};

Outcome toy_overfit(ToyRuns& toy, double& seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  toy.first = toy.run("run_a");
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& s = *toy.first;
  const double ratio = s.last.supervised / s.first.supervised;
  const double gain = s.last.psnr_student - s.last.psnr_input;
  return {ratio <= 0.5 && gain >= 2.0,
          fmt("%zu steps: supervised %.5f -> %.5f (ratio %.3f, need <= 0.5); psnr %.2f -> %.2f dB (gain %.2f, need >= 2)",
              s.json["steps"].get<std::size_t>(), s.first.supervised, s.last.supervised, ratio, s.last.psnr_input,
              s.last.psnr_student, gain)};
}

Outcome toy_determinism(ToyRuns& toy) {
  if (!toy.first) toy.first = toy.run("run_a");
  toy.second = toy.run("run_b");
  const auto& a = toy.first->json;
  const auto& b = toy.second->json;
  const bool ck = a["final_checkpoint_sha256"] == b["final_checkpoint_sha256"];
  const bool rp = a["repository_sha256"] == b["repository_sha256"];
  return {ck && rp, fmt("final checkpoint %s (sha256 %.16s), repository %s (sha256 %.16s)", ck ? "identical" : "DIFFERS",
                        a["final_checkpoint_sha256"].get<std::string>().c_str(), rp ? "identical" : "DIFFERS",
                        a["repository_sha256"].get<std::string>().c_str())};
}

// 10 --------------------------------------------------------------------------
double distance(const ParamSet<double>& a, const ParamSet<double>& b) {
  double s = 0;
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) s += (t[i] - u[i]) * (t[i] - u[i]);
  }
  return std::sqrt(s);
}

Outcome ema_contraction() {
  constexpr double alpha = 0.999;
  ParamSet<double> student = init_params<double>(ModelConfig{}, 1);
  Rng rng(1010);
  for (auto& [name, t] : student)
    for (double& v : t.data()) v = rng.uniform(-1, 1);
  ParamSet<double> teacher = student;
  for (auto& [name, t] : teacher)
    for (double& v : t.data()) v += rng.uniform(-1, 1);
  const ParamSet<double> frozen = student;
  const double d0 = distance(teacher, student);
  double worst = 0;
  for (int k = 1; k <= 50; ++k) {
    ema_update(teacher, student, alpha);
    worst = std::max(worst, std::abs(distance(teacher, student) - std::pow(alpha, k) * d0));
  }
  const bool frozen_ok = distance(student, frozen) == 0.0;
  return {worst <= 1e-10 && frozen_ok,
          fmt("||d_k|| vs alpha^k ||d_0|| over k=1..50 at alpha=%.3f: max abs err %.2e (d0 %.3f)", alpha, worst, d0)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Acceptance criteria"};
  std::vector<int> only, allowed;
  ToyRuns toy;
  toy.work = fs::temp_directory_path() / "deflare_acceptance";
  toy.config = fs::path(DEFLARE_SOURCE_DIR) / "configs" / "toy.json";
  cli.add_option("--only", only, "Criterion numbers to run")->delimiter(',');
  cli.add_option("--allow-fail", allowed, "Criteria reported but excluded from the exit status")->delimiter(',');
  cli.add_option("--work", toy.work, "Scratch directory for the toy runs");
  cli.add_option("--toy-config", toy.config)->check(CLI::ExistingFile);
  CLI11_PARSE(cli, argc, argv);
  fs::remove_all(toy.work);
  fs::create_directories(toy.work);

  SimulationResult gated, all;
  bool simulated = false;
  auto simulate = [&] {
    if (simulated) return;
    RepositoryConfig g, a;
    a.accept_all = true;
    NoisyTeacherOptions o;
    o.steps = 500;
    gated = simulate_noisy_teacher(g, reference_scorer(), o);
    all = simulate_noisy_teacher(a, reference_scorer(), o);
    simulated = true;
  };
  double toy_train_s = 0;

  const std::vector<Criterion> criteria = {
      {1, "gradient suite", 120, gradient_suite},
      {2, "attention equivalence", 30, attention_equivalence},
      {3, "attention complexity", 120, attention_complexity},
      {4, "repository semantics", 60, [&] { simulate(); return repository_semantics(gated); }},
      {5, "gating ablation", 120, [&] { simulate(); return gating_ablation(gated, all); }},
      {6, "loss identities", 10, loss_identities},
      {7, "metric oracles", 10, metric_oracles},
      {8, "toy overfit", 300, [&] { return toy_overfit(toy, toy_train_s); }},
      {9, "determinism", 600, [&] { return toy_determinism(toy); }},
      {10, "EMA contraction", 10, ema_contraction},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.id == 8 && toy_train_s > 0) secs = toy_train_s;
    const bool in_budget = secs < c.budget_s;
    const bool pass = o.pass && in_budget;
    const bool excused = std::find(allowed.begin(), allowed.end(), c.id) != allowed.end();
    failures += !pass && !excused;
    std::printf("criterion %2d %-22s %s  %7.2fs  %s%s%s\n", c.id, c.name.c_str(), pass ? "PASS" : "FAIL", secs,
                o.detail.c_str(), in_budget ? "" : fmt(" [over %.0fs budget]", c.budget_s).c_str(),
                !pass && excused ? " [allowed to fail]" : "");
    std::fflush(stdout);
  }
  return failures;
}
