#pragma once

// Dependable pseudo-label repository. Per unlabeled sample it keeps the best
// pseudo-label so far and its quality score, and only replaces it when a
// physically bounded, validity-gated candidate beats the stored score by a
// margin (or the slot is still empty):
//
//   p~ = clip(min(p^, x_w + eps), 0, 1)
//   invalid  = mean(p~) < tau_black  or  min(p~) > tau_fog
//   accept   = valid and (score(p~) > s_u + delta  or  mean(p_u) < tau_empty)
//   on accept: p_u <- (1 - beta) p_u + beta p~,  s_u <- score(p~)

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deflare/io/archive.hpp"
#include "deflare/ssl/scorer.hpp"

namespace deflare {

struct RepositoryConfig {
  double delta = 0.5;
  double beta = 0.3;
  double eps_clip = 0.05;
  double tau_black = 0.02;
  double tau_fog = 0.90;
  double tau_empty = 0.02;
  bool accept_all = false;  // ablation: no validity gate or margin; every bounded candidate is blended in

  void validate() const {
    if (!(beta > 0 && beta <= 1)) throw ConfigError("repository.beta must be in (0, 1]");
    if (!(delta >= 0)) throw ConfigError("repository.delta must be >= 0");
    if (!(eps_clip >= 0)) throw ConfigError("repository.eps_clip must be >= 0");
    if (!(tau_black >= 0 && tau_black <= 1)) throw ConfigError("repository.tau_black must be in [0, 1]");
    if (!(tau_fog >= 0 && tau_fog <= 1)) throw ConfigError("repository.tau_fog must be in [0, 1]");
    if (!(tau_empty >= 0 && tau_empty <= 1)) throw ConfigError("repository.tau_empty must be in [0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const RepositoryConfig& c) {
  j = {{"delta", c.delta},         {"beta", c.beta},       {"eps_clip", c.eps_clip},
       {"tau_black", c.tau_black}, {"tau_fog", c.tau_fog}, {"tau_empty", c.tau_empty},
       {"accept_all", c.accept_all}};
}

inline void from_json(const nlohmann::json& j, RepositoryConfig& c) {
  c.delta = j.value("delta", c.delta);
  c.beta = j.value("beta", c.beta);
  c.eps_clip = j.value("eps_clip", c.eps_clip);
  c.tau_black = j.value("tau_black", c.tau_black);
  c.tau_fog = j.value("tau_fog", c.tau_fog);
  c.tau_empty = j.value("tau_empty", c.tau_empty);
  c.accept_all = j.value("accept_all", c.accept_all);
  c.validate();
}

struct RepositoryEntry {
  Image label;  // p_u, [3,H,W]
  double score = 0;
  bool initialized = false;
};

// Ordered by sample id so iteration and persistence are deterministic.
using Repository = std::map<std::string, RepositoryEntry>;

inline Repository make_repository(const std::vector<std::string>& ids, const Shape& image_shape) {
  Repository repo;
  for (const auto& id : ids) repo.emplace(id, RepositoryEntry{Image(image_shape), 0.0, false});
  return repo;
}

inline Image bound_candidate(const Image& p_hat, const Image& x_weak, double eps_clip) {
  if (p_hat.shape() != x_weak.shape()) {
    throw DimensionError("bound_candidate: " + shape_str(p_hat.shape()) + " vs " + shape_str(x_weak.shape()));
  }
  Image out(p_hat.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(std::min(p_hat[i], x_weak[i] + eps_clip), 0.0, 1.0);
  }
  return out;
}

enum class GateResult { valid, black, fog };

inline GateResult gate_candidate(const Image& p_tilde, const RepositoryConfig& cfg) {
  if (p_tilde.mean() < cfg.tau_black) return GateResult::black;
  if (p_tilde.min() > cfg.tau_fog) return GateResult::fog;
  return GateResult::valid;
}

// Stored labels darker than tau_black are excluded from the unsupervised loss.
inline bool validity_mask(const Image& stored, double tau_black) { return !(stored.mean() < tau_black); }

struct RepositoryEvent {
  std::string sample_id;
  bool accepted = false;
  std::string reason;  // empty | better | accept_all | black | fog | margin | scorer
  double candidate_score = 0;
  double stored_score_before = 0;
};

inline void to_json(nlohmann::json& j, const RepositoryEvent& e) {
  j = {{"id", e.sample_id},
       {"accepted", e.accepted},
       {"reason", e.reason},
       {"score", e.candidate_score},
       {"stored_before", e.stored_score_before}};
}

struct RepositoryCandidate {
  std::string sample_id;
  Image x_weak;  // canonical orientation
  Image p_hat;   // teacher prediction, same orientation
};

inline RepositoryEvent repository_update_one(Repository& repo, const RepositoryCandidate& c,
                                             const RepositoryConfig& cfg, const QualityScorer& scorer) {
  auto it = repo.find(c.sample_id);
  if (it == repo.end()) throw ConfigError("repository has no entry for sample '" + c.sample_id + "'");
  RepositoryEntry& e = it->second;
  RepositoryEvent ev{c.sample_id, false, "", 0.0, e.score};

  const Image p = bound_candidate(c.p_hat, c.x_weak, cfg.eps_clip);
  if (!cfg.accept_all) {
    switch (gate_candidate(p, cfg)) {
      case GateResult::black: ev.reason = "black"; return ev;
      case GateResult::fog: ev.reason = "fog"; return ev;
      case GateResult::valid: break;
    }
  }
  double s = 0;
  try {
    s = scorer(p);
  } catch (const std::exception&) {
    ev.reason = "scorer";
    return ev;
  }
  if (!std::isfinite(s)) {
    ev.reason = "scorer";
    return ev;
  }
  ev.candidate_score = s;
  if (cfg.accept_all) {
    ev.reason = "accept_all";
  } else if (e.label.mean() < cfg.tau_empty) {
    ev.reason = "empty";
  } else if (s > e.score + cfg.delta) {
    ev.reason = "better";
  } else {
    ev.reason = "margin";
    return ev;
  }
  if (e.label.shape() != p.shape()) throw DimensionError("repository entry shape differs from candidate");
  for (std::size_t i = 0; i < p.size(); ++i) e.label[i] = (1 - cfg.beta) * e.label[i] + cfg.beta * p[i];
  e.score = s;
  e.initialized = true;
  ev.accepted = true;
  return ev;
}

// Candidates are scored and applied serially in batch order.
inline std::vector<RepositoryEvent> repository_update(Repository& repo,
                                                      const std::vector<RepositoryCandidate>& batch,
                                                      const RepositoryConfig& cfg,
                                                      const QualityScorer& scorer) {
  std::vector<RepositoryEvent> log;
  log.reserve(batch.size());
  for (const auto& c : batch) log.push_back(repository_update_one(repo, c, cfg, scorer));
  return log;
}

inline io::Archive repository_archive(const Repository& repo, const QualityScorer& scorer,
                                      const RepositoryConfig& cfg) {
  io::Archive a;
  a.header = {{"kind", "repository"}, {"scorer", scorer.name}, {"scorer_version", scorer.version},
              {"config", cfg}, {"entries", repo.size()}};
  for (const auto& [id, e] : repo) {
    a.tensors.emplace(id + "/label", e.label);
    a.tensors.emplace(id + "/score", Tensor<double>(Shape{1}, e.score));
    a.tensors.emplace(id + "/initialized", Tensor<double>(Shape{1}, e.initialized ? 1.0 : 0.0));
  }
  return a;
}

inline Repository repository_from_archive(const io::Archive& a) {
  if (a.header.value("kind", "") != "repository") throw IoError("archive is not a repository");
  Repository repo;
  for (const auto& [name, t] : a.tensors) {
    const auto slash = name.rfind('/');
    if (slash == std::string::npos) throw IoError("bad repository entry name '" + name + "'");
    const std::string id = name.substr(0, slash), field = name.substr(slash + 1);
    RepositoryEntry& e = repo[id];
    if (field == "label") e.label = t;
    else if (field == "score") e.score = t[0];
    else if (field == "initialized") e.initialized = t[0] != 0;
    else throw IoError("unknown repository field '" + field + "'");
  }
  return repo;
}

}  // namespace deflare
