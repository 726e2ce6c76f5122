#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "featdesc/error.hpp"
#include "featdesc/fixture.hpp"
#include "featdesc/pipeline.hpp"

using namespace featdesc;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> features;
  std::vector<std::string> methods;
  int64_t seed = -1;
  std::string backend;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_methods) {
  cmd->add_option("--config", args.config_path, "pipeline config (TOML)")->required();
  cmd->add_option("--features", args.features,
                  "feature specs: <sae_id>:<idx,idx,lo-hi>, neuron:<res|mlp><layer>:<idx>, or @file")
      ->required();
  if (with_methods) {
    cmd->add_option("--methods", args.methods,
                    "subset of MaxAct,VocabProj,TokenChange,EnsembleRaw,EnsembleConcat")
        ->delimiter(',');
  }
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--backend", args.backend, "override the gateway backend (mock|http)")
      ->check(CLI::IsMember({"mock", "http"}));
}

PipelineConfig load_config(const CommonArgs& args) {
  PipelineConfig config = load_pipeline_config(args.config_path);
  if (args.seed >= 0) config.seed = static_cast<uint64_t>(args.seed);
  if (!args.backend.empty()) config.gateway.backend = args.backend;
  return config;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const std::string& name : names) out.push_back(method_from_name(name));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature description pipeline"};
  app.require_subcommand(1);

  CommonArgs index_args, describe_args, eval_args, revive_args;
  bool force = false;
  std::string metric;

  CLI::App* cmd_index = app.add_subcommand("index", "scan the corpus into an activation index");
  add_common(cmd_index, index_args, false);
  cmd_index->add_flag("--force", force, "overwrite an existing index");

  CLI::App* cmd_describe = app.add_subcommand("describe", "generate feature descriptions");
  add_common(cmd_describe, describe_args, true);

  CLI::App* cmd_eval = app.add_subcommand("eval", "run description evaluations");
  add_common(cmd_eval, eval_args, true);
  cmd_eval->add_option("--metric", metric, "input | output")
      ->required()
      ->check(CLI::IsMember({"input", "output"}));

  CLI::App* cmd_revive = app.add_subcommand("revive", "attempt to activate dead features");
  add_common(cmd_revive, revive_args, false);

  std::string fixture_dir = "toy_fixture";
  int64_t fixture_seed = static_cast<int64_t>(fixture::kDefaultSeed);
  CLI::App* cmd_fixture =
      app.add_subcommand("fixture", "generate the pinned toy model, SAEs, corpus and config");
  cmd_fixture->add_option("--dir", fixture_dir, "output directory");
  cmd_fixture->add_option("--seed", fixture_seed, "generation seed");

  double n_params = 0, corpus_tokens = 0, feature_count = 0, d_model = 0, vocab = 0;
  int k_prompts = 32, prompt_len = 32;
  CLI::App* cmd_flops = app.add_subcommand("flops", "per-method compute estimates");
  cmd_flops->add_option("--n-params", n_params, "non-embedding parameter count")->required();
  cmd_flops->add_option("--corpus-tokens", corpus_tokens, "corpus size in tokens")->required();
  cmd_flops->add_option("--features", feature_count, "number of features")->required();
  cmd_flops->add_option("--d-model", d_model, "hidden size")->required();
  cmd_flops->add_option("--vocab", vocab, "vocabulary size")->required();
  cmd_flops->add_option("--k-prompts", k_prompts, "random prompts per feature");
  cmd_flops->add_option("--prompt-len", prompt_len, "tokens per random prompt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_fixture->parsed()) {
      fixture::ToyFixture fx =
          fixture::make_toy_fixture(fixture_dir, static_cast<uint64_t>(fixture_seed));
      std::cout << "fixture written to " << fx.dir << "\n"
                << "  config:  " << fx.config_path << "\n"
                << "  weights: " << fx.weights_path << " (probe checksum " << fx.probe_checksum
                << ")\n";
      return 0;
    }
    if (cmd_flops->parsed()) {
      CostModel cost{n_params, corpus_tokens, feature_count, d_model, vocab};
      MethodParams params;
      params.k_prompts = k_prompts;
      params.prompt_len = prompt_len;
      for (Method m : {Method::MaxAct, Method::VocabProj, Method::TokenChange}) {
        std::printf("%-12s %.4g FLOPs\n", method_name(m).c_str(),
                    estimate_flops(cost, m, params));
      }
      return 0;
    }
    if (cmd_index->parsed()) {
      Pipeline pipeline(load_config(index_args));
      return pipeline.cmd_index(index_args.features, force);
    }
    if (cmd_describe->parsed()) {
      Pipeline pipeline(load_config(describe_args));
      return pipeline.cmd_describe(describe_args.features, parse_methods(describe_args.methods));
    }
    if (cmd_eval->parsed()) {
      Pipeline pipeline(load_config(eval_args));
      return pipeline.cmd_eval(eval_args.features, parse_methods(eval_args.methods), metric);
    }
    if (cmd_revive->parsed()) {
      Pipeline pipeline(load_config(revive_args));
      return pipeline.cmd_revive(revive_args.features);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::Precondition || e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
