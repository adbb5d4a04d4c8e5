// SPDX-License-Identifier: Apache-2.0
// lora-spectrum: frequency-domain analysis and compression of LoRA updates.
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lora_spectrum/commands.hpp"

namespace cli = lora_spectrum::cli;

namespace {

struct Common {
  std::size_t threads = 0;
  std::optional<double> scale;
};

void add_common(CLI::App* sub, Common& common, bool with_scale = true) {
  sub->add_option("--threads", common.threads, "Worker threads (0 = logical cores)")->check(CLI::NonNegativeNumber);
  if (with_scale) {
    sub->add_option("--scale", common.scale, "Override the metadata-derived alpha/r merge scale")
        ->check(CLI::PositiveNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral (2D-DCT) analysis and compression of low-rank adapter updates"};
  app.set_version_flag("--version", std::string(cli::kToolVersion));
  app.require_subcommand(1);

  Common common;

  cli::AnalyzeOptions analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Energy curves, k90 statistics and layer heatmap");
  analyze_cmd->add_option("input", analyze.input, "Adapter container")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--out", analyze.out_dir, "Output directory")->required();
  analyze_cmd->add_option("--energy-target", analyze.energy_target, "Energy fraction for the k statistic")
      ->check(CLI::Range(0.0, 1.0));
  analyze_cmd->add_option("--curve-points", analyze.curve_points, "Curve samples per matrix (0 = every rank)");
  add_common(analyze_cmd, common);

  cli::MaskOptions mask;
  std::string emit = "sparse";
  std::optional<std::uint64_t> base_params;
  auto* mask_cmd = app.add_subcommand("mask", "Keep the top-k% DCT coefficients of every update");
  mask_cmd->add_option("input", mask.input, "Adapter container")->required()->check(CLI::ExistingFile);
  mask_cmd->add_option("--k", mask.k_percent, "Percentage of coefficients to keep, in (0, 100]")->required();
  mask_cmd->add_option("--out", mask.out, "Output container")->required();
  mask_cmd->add_option("--emit", emit, "sparse | dense")->check(CLI::IsMember({"sparse", "dense"}));
  mask_cmd->add_option("--base-params", base_params, "Base parameter count for storage accounting")
      ->check(CLI::PositiveNumber);
  add_common(mask_cmd, common);

  cli::DecompressOptions decompress;
  auto* decompress_cmd = app.add_subcommand("decompress", "Expand a spectral-sparse-v1 file to dense updates");
  decompress_cmd->add_option("input", decompress.input, "Sparse container")->required()->check(CLI::ExistingFile);
  decompress_cmd->add_option("--out", decompress.out, "Output container")->required();
  add_common(decompress_cmd, common, false);

  cli::SweepOptions sweep;
  std::string k_list;
  auto* sweep_cmd = app.add_subcommand("sweep", "Reconstruction error across frequency budgets");
  sweep_cmd->add_option("input", sweep.input, "Adapter container")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--k-list", k_list, "Comma-separated k values, e.g. 5,10,20,50,100")->required();
  sweep_cmd->add_option("--out", sweep.out, "Output CSV")->required();
  add_common(sweep_cmd, common);

  cli::CorrelateOptions correlate;
  auto* correlate_cmd = app.add_subcommand("correlate", "Correlate SVD and DCT energy concentration");
  correlate_cmd->add_option("input", correlate.input, "Adapter container")->required()->check(CLI::ExistingFile);
  correlate_cmd->add_option("--out", correlate.out, "Output JSON")->required();
  correlate_cmd->add_option("--energy-target", correlate.energy_target, "Energy fraction for the k statistic")
      ->check(CLI::Range(0.0, 1.0));
  add_common(correlate_cmd, common);

  cli::SynthOptions synth;
  std::string kind = "smooth_lowrank";
  auto* synth_cmd = app.add_subcommand("synth", "Write a deterministic synthetic adapter");
  synth_cmd->add_option("--kind", kind, "gaussian_iid | smooth_lowrank | mixed | dense_gaussian | rank_ramp")
      ->check(CLI::IsMember({"gaussian_iid", "smooth_lowrank", "mixed", "dense_gaussian", "rank_ramp"}));
  synth_cmd->add_option("--m", synth.spec.m, "Rows of each update");
  synth_cmd->add_option("--n", synth.spec.n, "Columns of each update");
  synth_cmd->add_option("--r", synth.spec.r, "Adapter rank");
  synth_cmd->add_option("--seed", synth.spec.seed, "SplitMix64 seed");
  synth_cmd->add_option("--count", synth.spec.count, "Number of layers");
  synth_cmd->add_option("--noise", synth.spec.noise_level, "Relative perturbation (mixed, rank_ramp)");
  synth_cmd->add_option("--modules", synth.spec.modules, "Module names per layer")->delimiter(',');
  synth_cmd->add_flag("--f32", synth.f32, "Store tensors as F32 instead of F64");
  synth_cmd->add_option("--out", synth.out, "Output container")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::exit_code::kUsage;
  }

  try {
    if (*analyze_cmd) {
      analyze.threads = common.threads;
      analyze.scale = common.scale;
      cli::run_analyze(analyze);
    } else if (*mask_cmd) {
      mask.threads = common.threads;
      mask.scale = common.scale;
      mask.emit = emit == "dense" ? cli::EmitMode::kDense : cli::EmitMode::kSparse;
      mask.base_params = base_params;
      cli::run_mask(mask, std::cout);
    } else if (*decompress_cmd) {
      decompress.threads = common.threads;
      cli::run_decompress(decompress);
    } else if (*sweep_cmd) {
      sweep.threads = common.threads;
      sweep.scale = common.scale;
      sweep.k_values = cli::parse_k_list(k_list);
      cli::run_sweep(sweep);
    } else if (*correlate_cmd) {
      correlate.threads = common.threads;
      correlate.scale = common.scale;
      cli::run_correlate(correlate);
    } else if (*synth_cmd) {
      synth.spec.kind = lora_spectrum::parse_fixture_kind(kind);
      cli::run_synth(synth);
    }
  } catch (const cli::CommandFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code();
  } catch (const lora_spectrum::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code::kParse;
  }
  return cli::exit_code::kSuccess;
}
