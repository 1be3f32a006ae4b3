// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen, train, eval, compare.
#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ldar/ldar.hpp"

namespace ldar::cli {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_oracle = 3, exit_numeric = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out;
  std::string oracle_cmd;
  std::string oracle_url;
  double oracle_timeout = 60.0;
  bool quiet = false;
};

inline std::unique_ptr<OracleClient> make_oracle(const Globals& g) {
  if (!g.oracle_cmd.empty() && !g.oracle_url.empty())
    throw UsageError("--oracle-cmd and --oracle-url are mutually exclusive");
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(g.oracle_timeout * 1000.0));
  if (!g.oracle_cmd.empty()) return OracleClient::subprocess(g.oracle_cmd, timeout);
  if (!g.oracle_url.empty()) return OracleClient::http(g.oracle_url, timeout);
  return nullptr;
}

inline RunConfig base_config(const Globals& g) {
  RunConfig rc = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) {
    rc.generator.seed = *g.seed;
    rc.trainer.seed = *g.seed;
  }
  return rc;
}

// An external judge replaces the simulated rule for every instance.
inline void mark_external(std::vector<Instance>& data) {
  for (Instance& inst : data) inst.reward_model.kind = RewardKind::external;
}

inline void print_report(std::ostream& out, const EvalReport& r) {
  out << "strategy " << r.label << "\n"
      << "instances " << r.n_instances << "\n"
      << "score " << format_real(r.mean_score) << "\n"
      << "token_ratio " << format_real(r.mean_token_ratio) << "\n"
      << "passage_ratio " << format_real(r.mean_passage_ratio) << "\n";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Learned dynamic retrieval bands: data generation, training and evaluation", "ldar"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for generation, training and evaluation streams");
  app.add_option("--config", g.config_path, "Flat JSON configuration file");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--oracle-cmd", g.oracle_cmd, "External judge program (line protocol over stdin/stdout)");
  app.add_option("--oracle-url", g.oracle_url, "External judge HTTP endpoint");
  app.add_option("--oracle-timeout", g.oracle_timeout, "Per-request judge timeout in seconds")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string preset;
  std::optional<std::size_t> n_instances;
  gen->add_option("--preset", preset, "default | heterogeneous")->check(CLI::IsMember({"default", "heterogeneous"}));
  gen->add_option("--n-instances", n_instances, "Number of instances");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a band or Bernoulli policy");
  std::string train_data, metrics_path, policy_kind;
  std::optional<std::size_t> steps;
  bool desk = false;
  train_cmd->add_option("--data", train_data, "Dataset file")->required();
  train_cmd->add_option("--policy", policy_kind, "band | bernoulli")->check(CLI::IsMember({"band", "bernoulli"}));
  train_cmd->add_option("--steps", steps, "Number of updates");
  train_cmd->add_option("--metrics", metrics_path, "Metrics CSV (default: <out>.metrics.csv)");
  train_cmd->add_flag("--desk", desk, "Use the reduced policy size");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate one strategy");
  std::string eval_data, strategy, checkpoint;
  bool greedy = false;
  eval_cmd->add_option("--data", eval_data, "Dataset file")->required();
  eval_cmd->add_option("--strategy", strategy, "top_<k> | lc | adaptive_k | ldar:<ckpt> | bernoulli:<ckpt>");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint of a trained policy");
  eval_cmd->add_flag("--greedy", greedy, "Use Beta means / Bernoulli mode instead of sampling");

  // compare
  auto* cmp = app.add_subcommand("compare", "Compare strategies on one dataset");
  std::string cmp_data;
  std::vector<std::string> strategies{"top_1", "top_5", "top_10", "lc", "adaptive_k"};
  bool cmp_greedy = false;
  cmp->add_option("--data", cmp_data, "Dataset file")->required();
  cmp->add_option("--strategies", strategies, "Strategy list")->delimiter(',');
  cmp->add_flag("--greedy", cmp_greedy, "Evaluate learned policies greedily");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return exit_usage;
  }

  const std::uint64_t eval_seed = g.seed.value_or(0);
  std::ostream& log = out;
  try {
    if (*gen) {
      if (g.out.empty()) throw UsageError("gen: --out is required");
      RunConfig rc = base_config(g);
      if (!preset.empty()) {
        const std::uint64_t seed = rc.generator.seed;
        rc.generator = preset == "heterogeneous" ? GeneratorConfig::heterogeneous() : GeneratorConfig::default_capacity();
        rc.generator.seed = seed;
      }
      if (n_instances) rc.generator.n_instances = *n_instances;
      if (!g.oracle_cmd.empty() || !g.oracle_url.empty()) rc.generator.reward_kind = RewardKind::external;
      const auto data = generate(rc.generator);
      save_dataset(data, g.out);
      if (!g.quiet) log << "wrote " << data.size() << " instances to " << g.out << "\n";
      return exit_ok;
    }

    auto oracle_client = make_oracle(g);
    auto load = [&](const std::string& path) {
      auto data = load_dataset(path);
      if (oracle_client) mark_external(data);
      return data;
    };

    if (*train_cmd) {
      if (g.out.empty()) throw UsageError("train: --out (checkpoint path) is required");
      RunConfig rc = base_config(g);
      if (desk) rc.policy = PolicyConfig::desk();
      if (!policy_kind.empty()) rc.policy_kind = policy_kind_from_string(policy_kind);
      if (steps) rc.trainer.total_steps = *steps;
      rc.policy.validate();
      rc.trainer.validate();
      const auto data = load(train_data);
      const DatasetSplit split = split_holdout(data, rc.trainer.holdout_fraction);
      TrainOptions opts;
      opts.checkpoint_path = g.out;
      opts.metrics_path = metrics_path.empty() ? g.out + ".metrics.csv" : metrics_path;
      opts.eval_seed = eval_seed;
      opts.log = g.quiet ? nullptr : &log;
      const TrainResult res = train(rc.policy, rc.policy_kind, rc.trainer, split.train, split.heldout, opts,
                                    oracle_client.get());
      if (!g.quiet) {
        log << "trained " << res.checkpoint.state.step << " steps; checkpoint " << g.out << "; metrics "
            << opts.metrics_path << "\n";
        if (!res.evals.empty()) print_report(log, res.evals.back().report);
      }
      return exit_ok;
    }

    if (*eval_cmd) {
      if (!strategy.empty() && !checkpoint.empty())
        throw UsageError("eval: give either --strategy or --checkpoint");
      StrategySpec spec;
      if (!checkpoint.empty()) {
        if (!std::filesystem::exists(checkpoint)) throw UsageError("checkpoint '" + checkpoint + "' does not exist");
        const PolicyKind kind = load_checkpoint(checkpoint).params.kind();
        spec.kind = kind == PolicyKind::band ? StrategyKind::ldar_checkpoint : StrategyKind::bernoulli_checkpoint;
        spec.checkpoint = checkpoint;
      } else if (!strategy.empty()) {
        spec = parse_strategy(strategy);
      } else {
        throw UsageError("eval: --strategy or --checkpoint is required");
      }
      const auto data = load(eval_data);
      const EvalReport rep = evaluate(spec, data, eval_seed, greedy, oracle_client.get());
      if (!g.out.empty()) write_text(g.out, report_rows_csv(rep));
      if (!g.quiet) print_report(out, rep);
      return exit_ok;
    }

    if (*cmp) {
      std::vector<StrategySpec> specs;
      for (const auto& s : strategies) specs.push_back(parse_strategy(s));
      const auto data = load(cmp_data);
      const Comparison c = compare(specs, data, eval_seed, g.out, cmp_greedy, oracle_client.get());
      if (!g.quiet) out << comparison_text(c.reports);
      return exit_ok;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return exit_usage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const OracleError& e) {
    err << "oracle error: " << e.what() << "\n";
    return exit_oracle;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return exit_numeric;
  }
  err << app.help();
  return exit_usage;
}

}  // namespace ldar::cli
