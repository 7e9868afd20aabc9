#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "deflare/app/bank.hpp"
#include "deflare/app/bench.hpp"
#include "deflare/app/eval.hpp"
#include "deflare/app/grad_suite.hpp"
#include "deflare/app/synth.hpp"
#include "deflare/app/train.hpp"

namespace app = deflare::app;

namespace {

void emit(const std::optional<app::fs::path>& out, const std::string& text) {
  if (out) {
    app::write_text(app::output_path(*out), text);
  } else {
    std::cout << text;
  }
}

int run(int argc, char** argv) {
  CLI::App cli{"Semi-supervised lens flare removal: synthesis, training, evaluation"};
  cli.require_subcommand(1);
  cli.footer(std::string("Relative output paths resolve under $") + app::kOutputRootEnv + " when set.");

  app::SynthOptions so;
  std::size_t unlabeled = 0;
  auto* synth = cli.add_subcommand("synth", "Write a paired/unpaired flare dataset");
  synth->add_option("--out", so.out, "Dataset directory")->required();
  synth->add_option("--count", so.count, "Labeled pairs")->capture_default_str();
  auto* unl = synth->add_option("--unlabeled", unlabeled, "Unlabeled images (default: --count)");
  synth->add_option("--extent", so.extent, "Square image side in pixels")->capture_default_str();
  synth->add_option("--seed", so.seed)->capture_default_str();
  synth->add_flag("--procedural", so.procedural, "Generate backgrounds and flares procedurally");
  synth->add_option("--backgrounds", so.backgrounds, "Directory of background PNGs")->check(CLI::ExistingDirectory);
  synth->add_option("--flares", so.flares, "Directory of flare PNGs")->check(CLI::ExistingDirectory);
  synth->add_option("--augment", so.augment_config, "Augmentation parameters JSON")->check(CLI::ExistingFile);

  app::TrainOptions to;
  auto* train = cli.add_subcommand("train", "Teacher-student training on a synthesized dataset");
  train->add_option("--config", to.config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--data", to.data, "Dataset directory (with manifest.json)")->required();
  train->add_option("--out", to.out, "Run directory")->required();
  train->add_option("--steps", to.steps, "Override the number of steps");
  train->add_option("--seed", to.seed, "Override the seed");
  train->add_option("--set", to.overrides, "Override a config field: key.path=value");
  bool verbose = false;
  train->add_flag("-v,--verbose", verbose, "Progress on stderr");

  app::EvalOptions eo;
  auto* eval = cli.add_subcommand("eval", "PSNR/SSIM/masked PSNR of predictions against ground truth");
  eval->add_option("--pred", eo.pred)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", eo.gt)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--masks", eo.masks, "Directory with glare/ and streak/ masks")->check(CLI::ExistingDirectory);
  eval->add_option("--report", eo.report)->required();

  app::PredictOptions po;
  auto* predict = cli.add_subcommand("predict", "Restore a directory of PNGs with a checkpoint");
  predict->add_option("--checkpoint", po.checkpoint)->required()->check(CLI::ExistingFile);
  predict->add_option("--input", po.input)->required()->check(CLI::ExistingDirectory);
  predict->add_option("--out", po.out)->required();
  predict->add_flag("--teacher", po.teacher, "Use the EMA teacher weights");

  app::BankOptions bo;
  bool bank_json = false;
  std::optional<app::fs::path> bank_out;
  auto* bank = cli.add_subcommand("bank", "Inspect a pseudo-label repository archive");
  bank->require_subcommand(1);
  auto* inspect = bank->add_subcommand("inspect", "List entries");
  auto* stats = bank->add_subcommand("stats", "Score histogram and accept/reject counts");
  for (auto* s : {inspect, stats}) {
    s->add_option("--repository", bo.repository)->required()->check(CLI::ExistingFile);
    s->add_option("--out", bank_out, "Write to a file instead of stdout");
  }
  inspect->add_flag("--json", bank_json);
  stats->add_option("--log", bo.log, "Training log (train_log.ndjson)")->check(CLI::ExistingFile);
  stats->add_option("--bins", bo.bins)->capture_default_str();

  app::BenchOptions bn;
  auto* bench = cli.add_subcommand("bench-attention", "Time linear attention against the quadratic oracle");
  bench->add_option("--sizes", bn.sizes, "Token counts")->delimiter(',')->capture_default_str();
  bench->add_option("--dim", bn.dim)->capture_default_str();
  bench->add_option("--repeats", bn.repeats)->capture_default_str();
  bench->add_option("--seed", bn.seed)->capture_default_str();
  bench->add_option("--out", bn.out, "CSV output file (default stdout)");

  double tol = 1e-4;
  std::string filter;
  std::optional<app::fs::path> grads_out;
  auto* grads = cli.add_subcommand("check-grads", "Central-difference gradient checks of all ops, blocks and losses");
  grads->add_option("--tolerance", tol)->capture_default_str();
  grads->add_option("--filter", filter, "Only cases whose name contains this text");
  grads->add_option("--out", grads_out, "JSON report file");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : 1;
  }
  to.quiet = !verbose;

  if (*synth) {
    if (*unl) so.unlabeled = unlabeled;
    const auto m = app::cmd_synth(so);
    std::printf("wrote %zu labeled and %zu unlabeled samples to %s\n", m["labeled"].size(), m["unlabeled"].size(),
                app::output_path(so.out).c_str());
  } else if (*train) {
    const auto s = app::cmd_train(to);
    std::printf("steps %zu  supervised %.6f -> %.6f  psnr student %.3f dB (input %.3f dB)\ncheckpoint %s\n",
                s.json["steps"].get<std::size_t>(), s.first.supervised, s.last.supervised, s.last.psnr_student,
                s.last.psnr_input, s.final_checkpoint.c_str());
  } else if (*eval) {
    const auto r = app::cmd_eval(eo);
    std::printf("%zu images  psnr %.4f dB  ssim %.5f\n", r["image_count"].get<std::size_t>(),
                r["psnr_db"].get<double>(), r["ssim"].get<double>());
  } else if (*predict) {
    std::printf("restored %zu images\n", app::cmd_predict(po));
  } else if (*bank) {
    if (*inspect) {
      const auto j = app::bank_inspect(bo);
      emit(bank_out, bank_json ? j.dump(2) + "\n" : app::bank_inspect_text(j));
    } else {
      emit(bank_out, app::bank_stats(bo).dump(2) + "\n");
    }
  } else if (*bench) {
    emit(bn.out, app::bench_csv(app::bench_attention(bn)));
  } else if (*grads) {
    const auto results = app::run_gradient_suite(tol, filter);
    nlohmann::json report = nlohmann::json::array();
    bool ok = !results.empty();
    for (const auto& r : results) {
      std::printf("%-22s %s  max_rel %.3e  coords %zu\n", r.name.c_str(), r.passed ? "ok  " : "FAIL",
                  r.report.max_rel_error, r.report.coords_checked);
      report.push_back({{"name", r.name},
                        {"passed", r.passed},
                        {"max_rel_error", r.report.max_rel_error},
                        {"max_abs_error", r.report.max_abs_error},
                        {"coords", r.report.coords_checked}});
      ok = ok && r.passed;
    }
    if (grads_out) app::write_json(app::output_path(*grads_out), report);
    std::fflush(stdout);
    if (!ok) throw deflare::NumericError("gradient check failed");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const deflare::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
