#pragma once
// Ablation harness: named experiment arms over a shared base config, each
// run across several seeds through the full pipeline (generate data,
// pretrain, adapt, evaluate), aggregated by median and emitted as CSV, JSON,
// and a rendered text table. Arms run sequentially in-process (the harness
// targets single-core boxes); one arm's failure is recorded in its row while
// the remaining arms continue.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/common.hpp"
#include "poseadapt/config.hpp"
#include "poseadapt/dataset.hpp"
#include "poseadapt/engine.hpp"
#include "poseadapt/metrics.hpp"
#include "poseadapt/synth.hpp"

namespace poseadapt {

struct AblationArm {
  std::string name;
  std::vector<std::string> overrides;  // dotted key=value, CLI syntax
};

struct AblationPlan {
  std::string name;
  std::string base_text;  // optional JSON config document (file contents)
  std::vector<std::string> base_overrides;  // applied to every arm, first
  std::vector<AblationArm> arms;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

// The fully resolved config one arm runs at one seed. The seed is applied as
// a final override so it lands in the resolved snapshot too.
inline ExperimentConfig arm_config(const AblationPlan& plan,
                                   const AblationArm& arm, std::uint64_t seed,
                                   nlohmann::json* snapshot = nullptr) {
  std::vector<std::string> ov = plan.base_overrides;
  ov.insert(ov.end(), arm.overrides.begin(), arm.overrides.end());
  ov.push_back("seed=" + std::to_string(seed));
  return resolve_config(plan.base_text, ov, snapshot);
}

// Throws if arm names collide or any arm's override set fails to resolve
// into a valid config. Seeds only change the `seed` key, so one seed probes
// each arm's validity.
inline void validate_plan(const AblationPlan& plan) {
  POSEADAPT_CHECK(!plan.arms.empty(), "ablation plan has no arms");
  POSEADAPT_CHECK(!plan.seeds.empty(), "ablation plan has no seeds");
  std::set<std::string> names;
  for (const AblationArm& arm : plan.arms) {
    POSEADAPT_CHECK(!arm.name.empty(), "ablation arm with empty name");
    POSEADAPT_CHECK(names.insert(arm.name).second,
                    "duplicate ablation arm name: " + arm.name);
    try {
      arm_config(plan, arm, plan.seeds.front());
    } catch (const std::exception& e) {
      throw Error("arm '" + arm.name + "': " + e.what());
    }
  }
}

struct ArmRun {
  std::uint64_t seed = 0;
  real overall = std::numeric_limits<real>::quiet_NaN();
  std::map<std::string, real> per_group;
  real seconds = 0;
  std::string error;  // empty on success
  bool ok() const { return error.empty(); }
};

struct ArmResult {
  std::string name;
  std::vector<ArmRun> runs;  // one per seed, in plan order
  real median_overall = std::numeric_limits<real>::quiet_NaN();
  std::map<std::string, real> median_per_group;

  const ArmRun& run_for_seed(std::uint64_t seed) const {
    for (const ArmRun& r : runs)
      if (r.seed == seed) return r;
    throw Error("no run for seed " + std::to_string(seed));
  }
};

namespace detail {

inline real median(std::vector<real> v) {
  if (v.empty()) return std::numeric_limits<real>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

inline std::string format_pck(real v) {
  if (std::isnan(v)) return "--";
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(1);
  out << 100 * v;
  return out.str();
}

}  // namespace detail

struct AblationTable {
  std::string plan_name;
  std::vector<std::uint64_t> seeds;
  std::vector<ArmResult> arms;

  const ArmResult& arm(const std::string& name) const {
    for (const ArmResult& a : arms)
      if (a.name == name) return a;
    throw Error("no ablation arm named '" + name + "'");
  }

  // Group names present in any successful run, sorted.
  std::vector<std::string> group_names() const {
    std::set<std::string> names;
    for (const ArmResult& a : arms)
      for (const ArmRun& r : a.runs)
        for (const auto& [g, _] : r.per_group) names.insert(g);
    return {names.begin(), names.end()};
  }

  nlohmann::json to_json() const {
    nlohmann::json arms_json = nlohmann::json::array();
    for (const ArmResult& a : arms) {
      nlohmann::json runs = nlohmann::json::array();
      for (const ArmRun& r : a.runs) {
        // Wall-clock timings stay out of the serialized table so that it is a
        // pure function of (plan, seeds) and reruns compare byte-for-byte.
        nlohmann::json rj{{"seed", r.seed}};
        if (r.ok()) {
          rj["overall"] = r.overall;
          rj["per_group"] = r.per_group;
        } else {
          rj["error"] = r.error;
        }
        runs.push_back(std::move(rj));
      }
      nlohmann::json aj{{"name", a.name}, {"runs", std::move(runs)}};
      if (!std::isnan(a.median_overall)) {
        aj["median_overall"] = a.median_overall;
        aj["median_per_group"] = a.median_per_group;
      }
      arms_json.push_back(std::move(aj));
    }
    return nlohmann::json{{"plan", plan_name},
                          {"seeds", seeds},
                          {"arms", std::move(arms_json)}};
  }

  // Inverse of to_json (seconds are not serialized and load back as 0).
  static AblationTable from_json(const nlohmann::json& j) {
    AblationTable t;
    t.plan_name = j.at("plan").get<std::string>();
    t.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const nlohmann::json& aj : j.at("arms")) {
      ArmResult a;
      a.name = aj.at("name").get<std::string>();
      for (const nlohmann::json& rj : aj.at("runs")) {
        ArmRun r;
        r.seed = rj.at("seed").get<std::uint64_t>();
        if (rj.contains("error")) {
          r.error = rj.at("error").get<std::string>();
        } else {
          r.overall = rj.at("overall").get<real>();
          r.per_group = rj.at("per_group").get<std::map<std::string, real>>();
        }
        a.runs.push_back(std::move(r));
      }
      if (aj.contains("median_overall")) {
        a.median_overall = aj.at("median_overall").get<real>();
        a.median_per_group =
            aj.at("median_per_group").get<std::map<std::string, real>>();
      }
      t.arms.push_back(std::move(a));
    }
    return t;
  }

  // One row per (arm, seed) plus a `median` pseudo-seed row per arm.
  std::string to_csv() const {
    const std::vector<std::string> groups = group_names();
    std::ostringstream out;
    out << "arm,seed,overall";
    for (const std::string& g : groups) out << "," << g;
    out << ",error\n";
    auto emit = [&](const std::string& arm_name, const std::string& seed_text,
                    real overall, const std::map<std::string, real>& per_group,
                    const std::string& error) {
      out << arm_name << "," << seed_text << ",";
      if (!std::isnan(overall)) out << overall;
      for (const std::string& g : groups) {
        out << ",";
        const auto it = per_group.find(g);
        if (it != per_group.end()) out << it->second;
      }
      out << "," << error << "\n";
    };
    for (const ArmResult& a : arms) {
      for (const ArmRun& r : a.runs)
        emit(a.name, std::to_string(r.seed), r.overall, r.per_group, r.error);
      emit(a.name, "median", a.median_overall, a.median_per_group, "");
    }
    return out.str();
  }

  // Rendered table: one arm per row, median PCK (percent) per column.
  std::string to_text() const {
    const std::vector<std::string> groups = group_names();
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"arm"};
    header.insert(header.end(), groups.begin(), groups.end());
    header.push_back("overall");
    rows.push_back(header);
    for (const ArmResult& a : arms) {
      std::vector<std::string> row{a.name};
      int failed = 0;
      for (const ArmRun& r : a.runs) failed += r.ok() ? 0 : 1;
      for (const std::string& g : groups) {
        const auto it = a.median_per_group.find(g);
        row.push_back(detail::format_pck(
            it == a.median_per_group.end()
                ? std::numeric_limits<real>::quiet_NaN()
                : it->second));
      }
      std::string overall = detail::format_pck(a.median_overall);
      if (failed > 0)
        overall += " (" + std::to_string(failed) + "/" +
                   std::to_string(a.runs.size()) + " failed)";
      row.push_back(overall);
      rows.push_back(std::move(row));
    }
    std::vector<std::size_t> widths(rows.front().size(), 0);
    for (const auto& row : rows)
      for (std::size_t c = 0; c < row.size(); ++c)
        widths[c] = std::max(widths[c], row[c].size());
    std::ostringstream out;
    out << "median PCK (percent), plan '" << plan_name << "'\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        out << (c ? "  " : "");
        out << rows[r][c]
            << std::string(widths[c] - rows[r][c].size(), ' ');
      }
      out << "\n";
      if (r == 0) {
        std::size_t total = 0;
        for (std::size_t w : widths) total += w;
        out << std::string(total + 2 * (widths.size() - 1), '-') << "\n";
      }
    }
    return out.str();
  }
};

struct AblationOptions {
  std::function<void(const std::string&)> progress;  // status lines, optional
  bool reuse_pretrain = true;  // share pretrained weights across arms whose
                               // pretraining-relevant config matches
};

namespace detail {

struct DataBundle {
  Dataset source, target, eval;
};

// Generation is keyed by the data section and the seed: arms that leave
// `data` alone share one corpus per seed, which is what makes cross-arm
// orderings meaningful.
inline const DataBundle& datasets_for(
    const ExperimentConfig& cfg, std::map<std::string, DataBundle>& cache) {
  const std::string key =
      nlohmann::json(cfg.data).dump() + "#" + std::to_string(cfg.seed);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  DataBundle bundle;
  const DataConfig& d = cfg.data;
  bundle.source = make_dataset(
      generate_samples(d.skeleton, d.source, d.render, d.source_count,
                       cfg.seed, "source"),
      d.render);
  bundle.target = make_dataset(
      generate_samples(d.skeleton, d.target, d.render, d.target_count,
                       cfg.seed, "target"),
      d.render);
  bundle.eval = make_dataset(
      generate_samples(d.skeleton, d.target, d.render, d.eval_count, cfg.seed,
                       "eval"),
      d.render);
  return cache.emplace(key, std::move(bundle)).first->second;
}

// Pretraining touches only the extractor and the inference head, and both
// are initialized from streams keyed by (seed, group, layer) — identical
// across variants. Arms that agree on everything pretraining can see
// therefore share the pretrained weights; the cache stores that parameter
// subset after the first arm trains it.
using PretrainedParams =
    std::map<std::string, std::pair<std::vector<int>, std::vector<real>>>;

inline std::string pretrain_key(const ExperimentConfig& cfg) {
  return nlohmann::json{{"seed", cfg.seed},
                        {"batch_size", cfg.batch_size},
                        {"backbone", cfg.backbone},
                        {"codec", cfg.codec},
                        {"oks", cfg.oks},
                        {"pretrain", cfg.pretrain},
                        {"data", cfg.data}}
      .dump();
}

inline void pretrain_with_cache(Trainer& tr, const Dataset& source,
                                std::map<std::string, PretrainedParams>& cache,
                                bool reuse) {
  const std::string key = pretrain_key(tr.config());
  if (reuse) {
    const auto hit = cache.find(key);
    if (hit != cache.end()) {
      for (ParamGroup g :
           {ParamGroup::extractor, ParamGroup::inference_head})
        for (auto& [name, p] : tr.model().named_params(g)) {
          const auto it =
              hit->second.find(std::string(to_string(g)) + "/" + name);
          POSEADAPT_CHECK(it != hit->second.end() &&
                              it->second.first == p->value.shape(),
                          "pretrain cache mismatch for " + name);
          std::copy(it->second.second.begin(), it->second.second.end(),
                    p->value.data());
        }
      return;
    }
  }
  tr.pretrain(source);
  if (reuse) {
    PretrainedParams snap;
    for (ParamGroup g : {ParamGroup::extractor, ParamGroup::inference_head})
      for (auto& [name, p] : tr.model().named_params(g))
        snap[std::string(to_string(g)) + "/" + name] = {
            p->value.shape(),
            std::vector<real>(p->value.data(),
                              p->value.data() + p->value.numel())};
    cache.emplace(key, std::move(snap));
  }
}

}  // namespace detail

// Runs every arm at every seed, seed-major so the per-seed dataset and
// pretraining caches stay small. Determinism: the table is a pure function
// of (plan, seeds) — failures included.
inline AblationTable run_ablation(const AblationPlan& plan,
                                  const AblationOptions& options = {}) {
  validate_plan(plan);
  AblationTable table;
  table.plan_name = plan.name;
  table.seeds = plan.seeds;
  table.arms.resize(plan.arms.size());
  for (std::size_t i = 0; i < plan.arms.size(); ++i)
    table.arms[i].name = plan.arms[i].name;

  for (std::uint64_t seed : plan.seeds) {
    std::map<std::string, detail::DataBundle> data_cache;
    std::map<std::string, detail::PretrainedParams> pretrain_cache;
    for (std::size_t i = 0; i < plan.arms.size(); ++i) {
      const AblationArm& arm = plan.arms[i];
      ArmRun run;
      run.seed = seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        const ExperimentConfig cfg = arm_config(plan, arm, seed);
        const detail::DataBundle& data =
            detail::datasets_for(cfg, data_cache);
        Trainer tr(cfg);
        detail::pretrain_with_cache(tr, data.source, pretrain_cache,
                                    options.reuse_pretrain);
        tr.adapt(data.source, data.target);
        const PckResult r = evaluate_model(tr.model(), data.eval, cfg);
        run.overall = r.overall;
        run.per_group = r.per_group;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      run.seconds = std::chrono::duration<real>(
                        std::chrono::steady_clock::now() - start)
                        .count();
      if (options.progress) {
        std::ostringstream line;
        line << "[" << plan.name << "] " << arm.name << " seed " << seed
             << ": ";
        if (run.ok())
          line << "overall " << detail::format_pck(run.overall);
        else
          line << "FAILED: " << run.error;
        line.setf(std::ios::fixed);
        line.precision(1);
        line << " (" << run.seconds << "s)";
        options.progress(line.str());
      }
      table.arms[i].runs.push_back(std::move(run));
    }
  }

  for (ArmResult& a : table.arms) {
    std::vector<real> overalls;
    std::map<std::string, std::vector<real>> groups;
    for (const ArmRun& r : a.runs) {
      if (!r.ok()) continue;
      overalls.push_back(r.overall);
      for (const auto& [g, v] : r.per_group) groups[g].push_back(v);
    }
    a.median_overall = detail::median(overalls);
    for (const auto& [g, v] : groups)
      a.median_per_group[g] = detail::median(v);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Bundled plans.
// ---------------------------------------------------------------------------

// Seven arms toggling the relation mask of the discrepancy loss.
inline AblationPlan relations_plan() {
  AblationPlan p;
  p.name = "relations";
  const std::vector<std::pair<std::string, std::string>> masks = {
      {"r1", R"(["r1"])"},
      {"r2", R"(["r2"])"},
      {"r3", R"(["r3"])"},
      {"r1&r2", R"(["r1","r2"])"},
      {"r1&r3", R"(["r1","r3"])"},
      {"r2&r3", R"(["r2","r3"])"},
      {"r1&r2&r3", R"(["r1","r2","r3"])"},
  };
  for (const auto& [name, mask] : masks)
    p.arms.push_back({name, {"relation_mask=" + mask}});
  return p;
}

// Structural variants crossed with which discrepancy terms are active. The
// baseline has no auxiliary heads, so its discrepancy arm runs the
// aggregation term alone.
inline AblationPlan structures_plan() {
  AblationPlan p;
  p.name = "structures";
  p.arms = {
      {"baseline", {"variant=baseline", "dl_terms=none"}},
      {"baseline+dl", {"variant=baseline", "dl_terms=inter"}},
      {"aidf", {"variant=aidf", "dl_terms=none"}},
      {"aidf+inter", {"variant=aidf", "dl_terms=inter"}},
      {"aidf+spec", {"variant=aidf", "dl_terms=spec"}},
      {"aidf+dl", {"variant=aidf", "dl_terms=both"}},
      {"idf", {"variant=idf", "dl_terms=none"}},
      {"idf+inter", {"variant=idf", "dl_terms=inter"}},
      {"idf+spec", {"variant=idf", "dl_terms=spec"}},
      {"idf+dl", {"variant=idf", "dl_terms=both"}},
  };
  return p;
}

// The discrepancy measure itself: kernel MMD against plain MSE and KL
// surrogates.
inline AblationPlan loss_variants_plan() {
  AblationPlan p;
  p.name = "loss-variants";
  p.arms = {
      {"mmd", {"dl_variant=mmd"}},
      {"mse", {"dl_variant=mse"}},
      {"kl", {"dl_variant=kl"}},
  };
  return p;
}

// Weight sweeps around the defaults, one knob per arm.
inline AblationPlan sensitivity_plan() {
  AblationPlan p;
  p.name = "sensitivity";
  for (const char* a : {"0.25", "0.5", "0.75", "1.0"})
    p.arms.push_back({std::string("alpha=") + a,
                      {std::string("alpha1=") + a,
                       std::string("alpha2=") + a}});
  for (const char* b : {"0.05", "0.1", "0.2", "0.4"})
    p.arms.push_back({std::string("beta=") + b, {std::string("beta=") + b}});
  for (const char* g : {"0.35", "0.45", "0.55", "0.65"})
    p.arms.push_back({std::string("gamma=") + g, {std::string("gamma=") + g}});
  return p;
}

// Adapted model against its own pretraining-only baseline.
inline AblationPlan adaptation_plan() {
  AblationPlan p;
  p.name = "adaptation";
  p.arms = {
      {"source-only", {"adapt.epochs=0"}},
      {"idf+dl", {}},
  };
  return p;
}

inline AblationPlan plan_by_name(const std::string& name) {
  if (name == "relations") return relations_plan();
  if (name == "structures") return structures_plan();
  if (name == "loss-variants") return loss_variants_plan();
  if (name == "sensitivity") return sensitivity_plan();
  if (name == "adaptation") return adaptation_plan();
  throw Error("unknown ablation plan: " + name +
              " (expected relations, structures, loss-variants, sensitivity,"
              " or adaptation)");
}

}  // namespace poseadapt
