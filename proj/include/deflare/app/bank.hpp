#pragma once

#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "deflare/app/common.hpp"
#include "deflare/ssl/repository.hpp"

namespace deflare::app {

struct BankOptions {
  fs::path repository;
  std::optional<fs::path> log;  // train_log.ndjson, for stats
  std::size_t bins = 10;
};

inline nlohmann::json bank_inspect(const BankOptions& o) {
  const io::Archive a = io::read_archive(o.repository);
  const Repository repo = repository_from_archive(a);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [id, e] : repo) {
    entries.push_back({{"id", id},
                       {"score", e.score},
                       {"initialized", e.initialized},
                       {"mean", e.label.mean()},
                       {"shape", e.label.shape()}});
  }
  return {{"scorer", a.header.value("scorer", "")},
          {"scorer_version", a.header.value("scorer_version", "")},
          {"config", a.header.value("config", nlohmann::json::object())},
          {"entries", entries}};
}

inline std::string bank_inspect_text(const nlohmann::json& j) {
  std::ostringstream os;
  os << "scorer " << j["scorer"].get<std::string>() << " v" << j["scorer_version"].get<std::string>() << "\n";
  os << "id\tinitialized\tscore\tmean\n";
  for (const auto& e : j["entries"]) {
    char line[160];
    std::snprintf(line, sizeof line, "%s\t%s\t%.6f\t%.6f\n", e["id"].get<std::string>().c_str(),
                  e["initialized"].get<bool>() ? "yes" : "no", e["score"].get<double>(), e["mean"].get<double>());
    os << line;
  }
  return os.str();
}

// Score histogram of initialized entries; with a log, accept/reject counts by
// reason and a per-entry replay of accepted scores.
inline nlohmann::json bank_stats(const BankOptions& o) {
  if (o.bins == 0) throw UsageError("--bins must be >= 1");
  const Repository repo = repository_from_archive(io::read_archive(o.repository));
  std::vector<double> scores;
  for (const auto& [id, e] : repo)
    if (e.initialized) scores.push_back(e.score);
  nlohmann::json out = {{"entries", repo.size()}, {"initialized", scores.size()}};
  if (!scores.empty()) {
    const double lo = *std::min_element(scores.begin(), scores.end());
    const double hi = *std::max_element(scores.begin(), scores.end());
    std::vector<std::size_t> counts(o.bins, 0);
    for (double s : scores) {
      const std::size_t b = hi > lo ? std::min(o.bins - 1, static_cast<std::size_t>((s - lo) / (hi - lo) * o.bins)) : 0;
      ++counts[b];
    }
    out["histogram"] = {{"lo", lo}, {"hi", hi}, {"counts", counts}};
  }
  if (o.log) {
    std::map<std::string, std::size_t> reasons;
    std::size_t accepted = 0, rejected = 0;
    std::map<std::string, std::vector<double>> replay;
    for (const auto& r : read_ndjson(*o.log)) {
      if (r.value("type", "") != "step" || r.value("aborted", false)) continue;
      for (const auto& ev : r.at("events")) {
        const bool ok = ev.at("accepted").get<bool>();
        (ok ? accepted : rejected) += 1;
        ++reasons[ev.at("reason").get<std::string>()];
        if (ok) replay[ev.at("id").get<std::string>()].push_back(ev.at("score").get<double>());
      }
    }
    nlohmann::json per_entry = nlohmann::json::object();
    bool all_hold = true;
    for (const auto& [id, seq] : replay) {
      const double later_min = seq.size() > 1 ? *std::min_element(seq.begin() + 1, seq.end()) : seq.front();
      bool monotone = true;
      for (std::size_t k = 1; k < seq.size(); ++k) monotone = monotone && seq[k] >= seq[k - 1];
      all_hold = all_hold && later_min >= seq.front();
      per_entry[id] = {{"accepts", seq.size()},
                       {"first_score", seq.front()},
                       {"min_later_score", later_min},
                       {"final_score", seq.back()},
                       {"non_decreasing", monotone}};
    }
    out["log"] = {{"accepted", accepted},
                  {"rejected", rejected},
                  {"reasons", reasons},
                  {"replay", per_entry},
                  {"min_ge_first_for_all", all_hold}};
  }
  return out;
}

}  // namespace deflare::app
