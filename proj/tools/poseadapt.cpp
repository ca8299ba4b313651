// poseadapt: one binary for the full experiment lifecycle.
//
//   poseadapt gen-data --out runs/a            write the three dataset splits
//   poseadapt pretrain --out runs/a            supervised pretraining on source
//   poseadapt adapt    --out runs/a            three-stage adversarial adaptation
//   poseadapt eval     --out runs/a            PCK on the held-out eval split
//   poseadapt ablate   --plan relations ...    bundled multi-arm studies
//   poseadapt plot     --out runs/a            figures + CSVs from logs/tables
//
// Every command resolves its configuration as defaults <- --config file <-
// --set overrides <- --seed, writes the resolved snapshot next to its outputs,
// and exits 0 on success, 2 on an invalid command line or config (naming the
// offending key), and 1 on a runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <poseadapt/poseadapt.hpp>

namespace fs = std::filesystem;
using namespace poseadapt;

namespace {

struct Args {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::string plan;
};

void add_common_options(CLI::App* sub, Args& args) {
  sub->add_option("--config", args.config_path,
                  "JSON experiment config; defaults apply when omitted");
  sub->add_option("--set", args.sets,
                  "dotted.key=value override; repeatable, wins over the file")
      ->allow_extra_args(false);  // one value per occurrence
  sub->add_option("--out", args.out, "directory for all artifacts");
  sub->add_option("--seed", args.seed, "seed override (same as --set seed=N)");
}

// POSEADAPT_THREADS caps worker parallelism. Execution is serial in-process,
// so any cap >= 1 is honored trivially; the variable is still validated so a
// typo fails loudly instead of being ignored.
int thread_cap() {
  const char* env = std::getenv("POSEADAPT_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  POSEADAPT_CHECK(end != env && *end == '\0' && n >= 1,
                  std::string("POSEADAPT_THREADS must be a positive integer, "
                              "got '") +
                      env + "'");
  return int(n);
}

void write_snapshot(const fs::path& out, const std::string& command,
                    const nlohmann::json& snapshot) {
  fs::create_directories(out);
  detail::write_file(out / ("config." + command + ".json"),
                     snapshot.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gen-data: the three splits (source, target, held-out eval drawn from the
// target distribution), each with images, labels, and a checksummed manifest.
// ---------------------------------------------------------------------------

int cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out) {
  const DataConfig& d = cfg.data;
  struct Split {
    const char* tag;
    const DomainShift* shift;
    int count;
  };
  const Split splits[] = {{"source", &d.source, d.source_count},
                          {"target", &d.target, d.target_count},
                          {"eval", &d.target, d.eval_count}};
  nlohmann::json checksums;
  for (const Split& s : splits) {
    const std::string digest =
        generate_dataset(d.skeleton, *s.shift, d.render, s.count, cfg.seed,
                         (out / "data" / s.tag).string(), s.tag);
    checksums[s.tag] = digest;
    std::cout << s.tag << ": " << s.count << " samples, sha256 " << digest
              << "\n";
  }
  detail::write_file(out / "data" / "checksums.json",
                     checksums.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain / adapt / eval: the supervised-then-adversarial pipeline, each
// stage reading the previous one's artifacts from the same --out directory.
// ---------------------------------------------------------------------------

void print_series(const TrainLog& log, const std::string& phase) {
  const std::vector<real> totals = log.series(phase, "total");
  if (totals.empty()) return;
  std::cout << phase << ": " << totals.size() << " steps, loss "
            << totals.front() << " -> " << totals.back() << "\n";
}

int cmd_pretrain(const ExperimentConfig& cfg, const fs::path& out) {
  const Dataset source =
      load_dataset((out / "data" / "source").string(), "source");
  Trainer tr(cfg);
  tr.checkpoint_path = (out / "pretrain.ckpt.json").string();
  tr.pretrain(source);
  save_checkpoint(tr.model(), nlohmann::json(tr.config()),
                  *tr.checkpoint_path);
  tr.log().write_jsonl((out / "pretrain_log.jsonl").string());
  print_series(tr.log(), "pretrain");
  std::cout << "checkpoint: " << *tr.checkpoint_path << "\n";
  return 0;
}

int cmd_adapt(const ExperimentConfig& cfg, const fs::path& out) {
  const Dataset source =
      load_dataset((out / "data" / "source").string(), "source");
  const Dataset target =
      load_dataset((out / "data" / "target").string(), "target");
  const fs::path pre = out / "pretrain.ckpt.json";
  POSEADAPT_CHECK(fs::exists(pre), "no pretrained checkpoint at " +
                                       pre.string() + " (run `pretrain` first)");
  Trainer tr(cfg);
  const std::vector<std::string> loaded =
      load_into_model(tr.model(), read_checkpoint(pre.string()));
  std::cout << "loaded " << loaded.size() << " tensors from " << pre.string()
            << "\n";
  tr.checkpoint_path = (out / "adapted.ckpt.json").string();
  tr.adapt(source, target);
  save_checkpoint(tr.model(), nlohmann::json(tr.config()),
                  *tr.checkpoint_path);
  tr.log().write_jsonl((out / "adapt_log.jsonl").string());
  for (const char* phase : {"stage_a", "stage_b", "stage_c"})
    print_series(tr.log(), phase);
  std::cout << "checkpoint: " << *tr.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const fs::path& out) {
  const fs::path adapted = out / "adapted.ckpt.json";
  const fs::path pretrained = out / "pretrain.ckpt.json";
  const fs::path ckpt = fs::exists(adapted) ? adapted : pretrained;
  POSEADAPT_CHECK(fs::exists(ckpt),
                  "no checkpoint under " + out.string() +
                      " (run `pretrain` or `adapt` first)");
  const Dataset eval_set = load_dataset((out / "data" / "eval").string(),
                                        "eval");
  Trainer tr(cfg);
  load_into_model(tr.model(), read_checkpoint(ckpt.string()));
  const PckResult r = evaluate_model(tr.model(), eval_set, tr.config());

  nlohmann::json metrics = {{"checkpoint", ckpt.filename().string()},
                            {"threshold_ratio", r.threshold_ratio},
                            {"norm_size", tr.config().eval.norm_size},
                            {"sample_count", r.sample_count},
                            {"overall", r.overall},
                            {"per_joint", r.per_joint},
                            {"per_group", r.per_group}};
  detail::write_file(out / "metrics.json", metrics.dump(2) + "\n");

  std::cout << "checkpoint: " << ckpt.filename().string() << "\n"
            << "samples: " << r.sample_count << "\n"
            << "PCK@" << r.threshold_ratio << ": "
            << detail::format_pck(r.overall) << "\n";
  for (const auto& [group, value] : r.per_group)
    std::cout << "  " << group << ": " << detail::format_pck(value) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate: run a bundled plan, write the table as JSON + CSV + rendered text.
// ---------------------------------------------------------------------------

int cmd_ablate(const AblationPlan& plan, int threads, const fs::path& out) {
  if (threads > 1)
    std::cout << "note: POSEADAPT_THREADS=" << threads
              << " accepted; arms run serially in this build\n";
  AblationOptions options;
  options.progress = [](const std::string& line) {
    std::cout << line << "\n";
  };
  const AblationTable table = run_ablation(plan, options);

  const fs::path dir = out / ("ablation_" + plan.name);
  fs::create_directories(dir);
  detail::write_file(dir / "table.json", table.to_json().dump(2) + "\n");
  detail::write_file(dir / "table.csv", table.to_csv());
  const std::string text = table.to_text();
  detail::write_file(dir / "table.txt", text);
  std::cout << "\n" << text << "table: " << (dir / "table.json").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// plot: figures + CSVs from whatever the out directory holds — an adaptation
// (or pretraining) log, and/or an ablation table named by --plan.
// ---------------------------------------------------------------------------

int cmd_plot(const Args& args, const fs::path& out) {
  std::optional<TrainLog> log;
  for (const char* name : {"adapt_log.jsonl", "pretrain_log.jsonl"}) {
    if (fs::exists(out / name)) {
      log = TrainLog::read_jsonl((out / name).string());
      std::cout << "log: " << name << "\n";
      break;
    }
  }
  std::optional<AblationTable> table;
  if (!args.plan.empty()) {
    const fs::path path = out / ("ablation_" + args.plan) / "table.json";
    POSEADAPT_CHECK(fs::exists(path),
                    "no ablation table at " + path.string() + " (run `ablate "
                    "--plan " + args.plan + "` first)");
    table = AblationTable::from_json(
        nlohmann::json::parse(detail::read_file_bytes(path.string())));
  }
  POSEADAPT_CHECK(log.has_value() || table.has_value(),
                  "nothing to plot under " + out.string() +
                      ": run `pretrain`/`adapt` for loss curves or `ablate` "
                      "plus --plan for sweep figures");
  const std::vector<std::string> files =
      emit_plots(log ? &*log : nullptr, table ? &*table : nullptr,
                 (out / "plots").string());
  for (const std::string& f : files) std::cout << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poseadapt: a desk-scale laboratory for domain-adaptive 2D "
               "pose estimation"};
  app.require_subcommand(1);
  Args args;
  CLI::App* gen = app.add_subcommand("gen-data",
                                     "generate the source/target/eval splits");
  CLI::App* pretrain =
      app.add_subcommand("pretrain", "supervised pretraining on the source "
                                     "split");
  CLI::App* adapt = app.add_subcommand(
      "adapt", "three-stage adversarial adaptation to the target split");
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "PCK of the latest checkpoint on the eval "
                                 "split");
  CLI::App* ablate =
      app.add_subcommand("ablate", "run a bundled ablation plan");
  CLI::App* plot = app.add_subcommand("plot", "emit figures and CSVs");
  for (CLI::App* sub : {gen, pretrain, adapt, eval_cmd, ablate, plot})
    add_common_options(sub, args);
  ablate->add_option("--plan", args.plan,
                     "relations | structures | loss-variants | sensitivity | "
                     "adaptation")
      ->required();
  plot->add_option("--plan", args.plan,
                   "also plot this previously run ablation plan");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  // Resolution and validation; failures name the offending key and exit 2.
  ExperimentConfig cfg;
  nlohmann::json snapshot;
  AblationPlan plan;
  int threads = 1;
  try {
    threads = thread_cap();
    std::string config_text;
    if (!args.config_path.empty())
      config_text = detail::read_file_bytes(args.config_path);
    std::vector<std::string> overrides = args.sets;
    if (args.seed)
      overrides.push_back("seed=" + std::to_string(*args.seed));
    if (cmd == "ablate") {
      plan = plan_by_name(args.plan);
      plan.base_text = config_text;
      plan.base_overrides = args.sets;
      if (args.seed) plan.seeds = {*args.seed};
      validate_plan(plan);
      resolve_config(config_text, args.sets, &snapshot);  // base snapshot
    } else {
      cfg = resolve_config(config_text, overrides, &snapshot);
    }
  } catch (const std::exception& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return 2;
  }

  // Execution; failures exit 1.
  try {
    const fs::path out = args.out;
    write_snapshot(out, cmd, snapshot);
    if (cmd == "gen-data") return cmd_gen_data(cfg, out);
    if (cmd == "pretrain") return cmd_pretrain(cfg, out);
    if (cmd == "adapt") return cmd_adapt(cfg, out);
    if (cmd == "eval") return cmd_eval(cfg, out);
    if (cmd == "ablate") return cmd_ablate(plan, threads, out);
    if (cmd == "plot") return cmd_plot(args, out);
    std::cerr << "unknown command: " << cmd << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
