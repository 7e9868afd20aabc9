#pragma once

// Repository dynamics under a synthetic noisy teacher: every step each entry
// receives a degraded copy of its clean image (blurred and noisy, sometimes
// collapsed to black or washed out to fog) as the teacher prediction.

#include <string>
#include <vector>

#include "deflare/ssl/repository.hpp"
#include "deflare/synth/augment.hpp"
#include "deflare/synth/procedural.hpp"

namespace deflare {

struct NoisyTeacherOptions {
  std::size_t entries = 8;
  std::size_t steps = 500;
  std::size_t extent = 32;
  double black_prob = 0.1;
  double fog_prob = 0.1;
  Range blur_sigma{0.3, 3.0};
  Range noise_sd{0.0, 0.08};
  std::uint64_t seed = 0;
};

struct SimulationResult {
  Repository repo;
  std::vector<std::vector<double>> score_history;  // per entry, stored score after each step
  std::vector<RepositoryEvent> events;
  std::size_t accepted = 0;
  std::size_t rejected = 0;

  double mean_stored_score() const {
    double s = 0;
    for (const auto& [id, e] : repo) s += e.score;
    return repo.empty() ? 0.0 : s / static_cast<double>(repo.size());
  }
};

inline std::string sim_entry_id(std::size_t i) { return "u" + std::to_string(i); }

inline Image degrade(const Image& clean, const NoisyTeacherOptions& o, Rng& rng) {
  const double u = rng.uniform();
  Image p = clean;
  if (u < o.black_prob) {
    for (double& v : p.data()) v *= 0.01;
    return p;
  }
  if (u < o.black_prob + o.fog_prob) {
    for (double& v : p.data()) v = 0.93 + 0.07 * v;
    return p;
  }
  p = image::gaussian_blur(p, o.blur_sigma.sample(rng));
  const double sd = o.noise_sd.sample(rng);
  for (double& v : p.data()) v += rng.normal(0.0, sd);
  return image::clip01(std::move(p));
}

// Both runs see the same candidate stream for a given seed, so gated and
// accept-all repositories can be compared directly.
inline SimulationResult simulate_noisy_teacher(const RepositoryConfig& cfg, const QualityScorer& scorer,
                                               const NoisyTeacherOptions& o) {
  Rng sources(o.seed);
  std::vector<Image> clean, corrupted;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < o.entries; ++i) {
    Rng r = sources.fork(i);
    clean.push_back(procedural_background(o.extent, o.extent, r));
    Image x = clean.back();
    const Image flare = procedural_flare(o.extent, o.extent, r).combined();
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::min(1.0, x[k] + flare[k]);
    corrupted.push_back(std::move(x));
    ids.push_back(sim_entry_id(i));
  }
  SimulationResult res;
  res.repo = make_repository(ids, clean.front().shape());
  res.score_history.resize(o.entries);
  for (std::size_t step = 0; step < o.steps; ++step) {
    Rng r = Rng(o.seed ^ 0x5EED5EEDULL).fork(step);
    std::vector<RepositoryCandidate> batch;
    for (std::size_t i = 0; i < o.entries; ++i) batch.push_back({ids[i], corrupted[i], degrade(clean[i], o, r)});
    for (auto& ev : repository_update(res.repo, batch, cfg, scorer)) {
      (ev.accepted ? res.accepted : res.rejected) += 1;
      res.events.push_back(std::move(ev));
    }
    for (std::size_t i = 0; i < o.entries; ++i) res.score_history[i].push_back(res.repo.at(ids[i]).score);
  }
  return res;
}

}  // namespace deflare
