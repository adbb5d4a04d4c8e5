// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/commands.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <exception>
#include <iostream>
#include <map>
#include <sstream>
#include <system_error>
#include <thread>

#include "lora_spectrum/codec.hpp"
#include "lora_spectrum/container.hpp"
#include "lora_spectrum/dct.hpp"
#include "lora_spectrum/linalg.hpp"
#include "lora_spectrum/spectral.hpp"
#include "lora_spectrum/stats.hpp"

namespace lora_spectrum::cli {

namespace {

using nlohmann::json;

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, count) on a small pool. Results are written by
// index, so output order never depends on completion order. The first
// failure by index is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::min(resolve_threads(threads), std::max<std::size_t>(count, 1));
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

DeltaCollection load_units(const std::filesystem::path& input, std::optional<double> scale) {
  const AdapterFile file = read_container_file(input);
  DeltaCollection units = collect_deltas(file, scale);
  for (const auto& o : units.orphans) {
    std::cerr << "warning: orphan factor '" << o.tensor_name << "' (" << o.reason << ")\n";
  }
  if (units.units.empty()) {
    throw CommandFailure(exit_code::kNoPairs, "no LoRA pairs or dense deltas found in '" + input.string() + "'");
  }
  return units;
}

json layer_json(const std::optional<int>& layer) { return layer ? json(*layer) : json(nullptr); }

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Ranks 1 and N are always present; in between, points spaced evenly by rank.
std::vector<std::size_t> curve_ranks(std::size_t total, std::size_t points) {
  std::vector<std::size_t> ranks;
  if (points == 0 || points >= total) {
    for (std::size_t c = 1; c <= total; ++c) ranks.push_back(c);
    return ranks;
  }
  ranks.push_back(1);
  for (std::size_t i = 1; i <= points; ++i) {
    const std::size_t c = (i * total + points - 1) / points;
    if (c > ranks.back()) ranks.push_back(c);
  }
  return ranks;
}

struct MatrixAnalysis {
  std::vector<double> cumulative_fraction;
  std::optional<SpectralSummary> summary;
  double total_energy = 0.0;
};

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kTruncatedFile:
    case ErrorKind::kMalformedHeader:
    case ErrorKind::kOffsetError:
    case ErrorKind::kDuplicateName:
    case ErrorKind::kShapeMismatch:
    case ErrorKind::kNonFinite:
    case ErrorKind::kNotSpectralFile:
      return exit_code::kParse;
    case ErrorKind::kZeroSpectrum:
      return exit_code::kZeroSpectrum;
    case ErrorKind::kCorruptSparse:
      return exit_code::kCorruptSparse;
    case ErrorKind::kDegenerateInput:
    case ErrorKind::kNoConvergence:
      return exit_code::kDegenerateStats;
    case ErrorKind::kInvalidSpec:
      return exit_code::kUsage;
  }
  return exit_code::kParse;
}

std::string sanitize_prefix(std::string_view prefix) {
  std::string out;
  for (char c : prefix) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                      c == '_' || c == '-';
    out += keep ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "matrix";
  return out;
}

json run_analyze(const AnalyzeOptions& options) {
  if (!(options.energy_target > 0.0 && options.energy_target <= 1.0)) {
    throw CommandFailure(exit_code::kUsage, "--energy-target must lie in (0, 1]");
  }
  const DeltaCollection units = load_units(options.input, options.scale);
  std::vector<MatrixAnalysis> results(units.units.size());
  parallel_for(units.units.size(), options.threads, [&](std::size_t i) {
    const EnergyCurve curve = energy_curve(dct2(units.units[i].delta));
    MatrixAnalysis& r = results[i];
    r.total_energy = curve.total_energy;
    if (curve.zero_spectrum) return;
    r.summary = k_for_energy(curve, options.energy_target);
    r.summary->layer_index = units.units[i].layer_index;
    r.summary->module_kind = units.units[i].module_kind.label();
    r.cumulative_fraction = curve.cumulative_fraction;
  });

  json per_matrix = json::array();
  std::vector<SpectralSummary> summaries;
  double sum = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t counted = 0;
  std::size_t zero_count = 0;
  for (std::size_t i = 0; i < units.units.size(); ++i) {
    const DeltaUnit& u = units.units[i];
    const MatrixAnalysis& r = results[i];
    json entry = {{"prefix", u.prefix},
                  {"layer_index", layer_json(u.layer_index)},
                  {"module_kind", u.module_kind.label()},
                  {"shape", {u.delta.rows(), u.delta.cols()}},
                  {"total_energy", r.total_energy},
                  {"zero_flag", !r.summary.has_value()}};
    if (r.summary) {
      entry["k90_percent"] = round_one_decimal(r.summary->k90_percent);
      entry["k90_percent_exact"] = r.summary->k90_percent;
      entry["coeff_count_90"] = r.summary->coeff_count_90;
      summaries.push_back(*r.summary);
      sum += r.summary->k90_percent;
      lo = counted == 0 ? r.summary->k90_percent : std::min(lo, r.summary->k90_percent);
      hi = counted == 0 ? r.summary->k90_percent : std::max(hi, r.summary->k90_percent);
      ++counted;
    } else {
      std::cerr << "warning: '" << u.prefix << "' is identically zero (ZeroSpectrum)\n";
      entry["k90_percent"] = nullptr;
      entry["k90_percent_exact"] = nullptr;
      entry["coeff_count_90"] = nullptr;
      ++zero_count;
    }
    per_matrix.push_back(std::move(entry));
  }

  json aggregate = {{"matrix_count", counted}, {"zero_count", zero_count}};
  if (counted > 0) {
    const double mean = sum / static_cast<double>(counted);
    aggregate["mean_k90"] = round_one_decimal(mean);
    aggregate["mean_k90_exact"] = mean;
    aggregate["min"] = lo;
    aggregate["max"] = hi;
  } else {
    aggregate["mean_k90"] = nullptr;
    aggregate["mean_k90_exact"] = nullptr;
    aggregate["min"] = nullptr;
    aggregate["max"] = nullptr;
  }

  const LayerHeatmap heat = layer_heatmap(summaries);
  json heat_layers = json::array();
  for (const auto& l : heat.layers) heat_layers.push_back(l ? std::to_string(*l) : std::string("unindexed"));
  json heat_cells = json::array();
  std::ostringstream heat_csv;
  heat_csv << "layer";
  for (const auto& mod : heat.modules) heat_csv << ',' << csv_field(mod);
  heat_csv << '\n';
  for (std::size_t r = 0; r < heat.layers.size(); ++r) {
    json row = json::array();
    heat_csv << heat_layers[r].get<std::string>();
    for (std::size_t c = 0; c < heat.modules.size(); ++c) {
      const auto& cell = heat.cells[r][c];
      if (cell) {
        row.push_back({{"mean_k90", cell->mean_k90}, {"count", cell->count}});
        heat_csv << ',' << format_double(cell->mean_k90);
      } else {
        row.push_back(nullptr);
        heat_csv << ",missing";
      }
    }
    heat_csv << '\n';
    heat_cells.push_back(std::move(row));
  }

  json orphans = json::array();
  for (const auto& o : units.orphans) {
    orphans.push_back({{"prefix", o.prefix}, {"tensor", o.tensor_name}, {"reason", o.reason}});
  }

  json report = {{"tool_version", std::string(kToolVersion)},
                 {"input_path", options.input.string()},
                 {"energy_target", options.energy_target},
                 {"scale_applied", units.scale},
                 {"scale_source", std::string(to_string(units.scale_source))},
                 {"per_matrix", std::move(per_matrix)},
                 {"aggregate", std::move(aggregate)},
                 {"heatmap", {{"layers", heat_layers}, {"modules", heat.modules}, {"cells", heat_cells}}},
                 {"orphans", std::move(orphans)}};

  // Curves: one CSV per matrix plus a combined long-format file.
  std::ostringstream combined;
  combined << "matrix_prefix,coefficient_rank_percent,cumulative_fraction\n";
  for (std::size_t i = 0; i < units.units.size(); ++i) {
    const auto& frac = results[i].cumulative_fraction;
    if (frac.empty()) continue;
    std::ostringstream one;
    one << "coefficient_rank_percent,cumulative_fraction\n";
    const std::string field = csv_field(units.units[i].prefix);
    for (std::size_t c : curve_ranks(frac.size(), options.curve_points)) {
      const std::string pct = format_double(100.0 * static_cast<double>(c) / static_cast<double>(frac.size()));
      const std::string val = format_double(frac[c - 1]);
      one << pct << ',' << val << '\n';
      combined << field << ',' << pct << ',' << val << '\n';
    }
    write_file_atomic(options.out_dir / "curves" / (sanitize_prefix(units.units[i].prefix) + ".csv"), one.str());
  }
  write_file_atomic(options.out_dir / "curves.csv", combined.str());
  write_file_atomic(options.out_dir / "heatmap.csv", heat_csv.str());
  write_file_atomic(options.out_dir / "report.json", report.dump(2) + "\n");
  return report;
}

void run_mask(const MaskOptions& options, std::ostream& report) {
  if (!(options.k_percent > 0.0 && options.k_percent <= 100.0)) {
    throw CommandFailure(exit_code::kUsage, "--k must lie in (0, 100]");
  }
  const DeltaCollection units = load_units(options.input, options.scale);
  const std::size_t count = units.units.size();
  std::vector<std::optional<SparseSpectrum>> sparse(count);
  std::vector<std::optional<Matrix>> dense(count);
  std::vector<std::uint64_t> k_counts(count);
  std::vector<char> zero(count, 0);
  parallel_for(count, options.threads, [&](std::size_t i) {
    const DeltaUnit& u = units.units[i];
    const Spectrum f = dct2(u.delta);
    const MaskResult mask = topk_mask(f, options.k_percent);
    k_counts[i] = mask.k_count;
    zero[i] = frobenius_norm(u.delta) == 0.0;
    if (options.emit == EmitMode::kSparse) {
      sparse[i] = encode_sparse(u.prefix, f, mask);
    } else {
      dense[i] = reconstruct(f, mask);
    }
  });

  std::size_t zero_total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (zero[i]) {
      std::cerr << "warning: '" << units.units[i].prefix << "' is identically zero (ZeroSpectrum)\n";
      ++zero_total;
    }
  }
  if (zero_total == count) throw CommandFailure(exit_code::kZeroSpectrum, "every weight update is identically zero");

  const std::map<std::string, std::string> provenance = {
      {"source.scale_applied", format_double(units.scale)},
      {"source.scale_source", std::string(to_string(units.scale_source))},
  };
  AdapterFile out;
  if (options.emit == EmitMode::kSparse) {
    std::vector<SparseSpectrum> spectra;
    for (auto& s : sparse) spectra.push_back(std::move(*s));
    out = pack_sparse_file(spectra, provenance);
    write_file_atomic(options.out, write_container(out, WritePolicy::kAsRecorded));
  } else {
    out.metadata = provenance;
    out.metadata["k_percent"] = format_double(options.k_percent);
    out.metadata["transform"] = std::string(kTransformTag);
    for (std::size_t i = 0; i < count; ++i) {
      out.tensors.push_back(from_matrix(units.units[i].prefix + ".delta_w", *dense[i], DType::kF64));
    }
    write_file_atomic(options.out, write_container(out, WritePolicy::kF64));
  }

  std::uint64_t base = 0;
  if (options.base_params) {
    base = *options.base_params;
  } else if (units.lora_parameter_count > 0) {
    base = units.lora_parameter_count;
  } else {
    for (const auto& u : units.units) base += u.delta.size();
  }
  const StorageReport storage = storage_report(base, options.k_percent, k_counts);
  report << "matrices: " << count << "\n";
  report << "k_percent: " << format_double(options.k_percent) << "\n";
  report << "base_params: " << storage.base_param_count << "\n";
  report << "nominal accounting: " << format_nominal_accounting(storage) << "\n";
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%.3f", storage.coefficient_reduction);
  report << "coefficient accounting: " << storage.coefficient_values << " values + " << storage.index_entries
         << " indices = " << storage.coefficient_total << " (" << ratio << "x)"
         << (storage.coefficient_exceeds_base ? " EXCEEDS base parameter count" : "") << "\n";
}

void run_decompress(const DecompressOptions& options) {
  const AdapterFile file = read_container_file(options.input);
  const std::vector<SparseSpectrum> spectra = unpack_sparse_file(file);
  if (spectra.empty()) throw Error(ErrorKind::kNotSpectralFile, "sparse file holds no spectra");
  std::vector<std::optional<Matrix>> dense(spectra.size());
  parallel_for(spectra.size(), options.threads, [&](std::size_t i) { dense[i] = decode_sparse(spectra[i]); });
  AdapterFile out;
  out.metadata["k_percent"] = file.metadata.at("k_percent");
  out.metadata["transform"] = std::string(kTransformTag);
  for (const auto& key : {"source.scale_applied", "source.scale_source"}) {
    if (auto it = file.metadata.find(key); it != file.metadata.end()) out.metadata[key] = it->second;
  }
  for (std::size_t i = 0; i < spectra.size(); ++i) {
    out.tensors.push_back(from_matrix(spectra[i].name + ".delta_w", *dense[i], DType::kF64));
  }
  write_file_atomic(options.out, write_container(out, WritePolicy::kF64));
}

std::vector<double> parse_k_list(std::string_view text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    std::string_view item = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    double k = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
      throw CommandFailure(exit_code::kUsage, "cannot parse k value '" + std::string(item) + "'");
    }
    if (!(k > 0.0 && k <= 100.0)) {
      throw CommandFailure(exit_code::kUsage, "k value " + std::string(item) + " is outside (0, 100]");
    }
    out.push_back(k);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void run_sweep(const SweepOptions& options) {
  if (options.k_values.empty()) throw CommandFailure(exit_code::kUsage, "--k-list is empty");
  for (double k : options.k_values) {
    if (!(k > 0.0 && k <= 100.0)) throw CommandFailure(exit_code::kUsage, "k values must lie in (0, 100]");
  }
  std::vector<double> ks = options.k_values;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  const DeltaCollection units = load_units(options.input, options.scale);
  std::vector<std::optional<std::vector<SweepPoint>>> points(units.units.size());
  parallel_for(units.units.size(), options.threads, [&](std::size_t i) {
    if (frobenius_norm(units.units[i].delta) == 0.0) return;
    points[i] = sweep(units.units[i].delta, ks);
  });

  std::vector<std::size_t> order(units.units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return units.units[a].prefix < units.units[b].prefix; });

  std::ostringstream csv;
  csv << "matrix_prefix,k,relative_error,retained_energy_fraction\n";
  std::size_t written = 0;
  for (std::size_t i : order) {
    if (!points[i]) {
      std::cerr << "warning: '" << units.units[i].prefix << "' is identically zero (ZeroSpectrum)\n";
      continue;
    }
    for (const auto& p : *points[i]) {
      csv << csv_field(units.units[i].prefix) << ',' << format_double(p.k_percent) << ','
          << format_double(p.relative_error) << ',' << format_double(p.retained_energy_fraction) << '\n';
    }
    ++written;
  }
  if (written == 0) throw CommandFailure(exit_code::kZeroSpectrum, "every weight update is identically zero");
  write_file_atomic(options.out, csv.str());
}

json run_correlate(const CorrelateOptions& options) {
  const DeltaCollection units = load_units(options.input, options.scale);
  struct Row {
    bool zero = false;
    double svd_k90 = 0.0;
    double dct_k90 = 0.0;
  };
  std::vector<Row> rows(units.units.size());
  parallel_for(units.units.size(), options.threads, [&](std::size_t i) {
    const Matrix& delta = units.units[i].delta;
    const EnergyCurve curve = energy_curve(dct2(delta));
    if (curve.zero_spectrum) {
      rows[i].zero = true;
      return;
    }
    rows[i].dct_k90 = k_for_energy(curve, options.energy_target).k90_percent;
    rows[i].svd_k90 = svd_energy_k90(svd(delta).singular_values, options.energy_target).k90_percent;
  });

  json per_matrix = json::array();
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].zero) {
      std::cerr << "warning: '" << units.units[i].prefix << "' is identically zero and was skipped\n";
      continue;
    }
    per_matrix.push_back(
        {{"prefix", units.units[i].prefix}, {"svd_k90", rows[i].svd_k90}, {"dct_k90", rows[i].dct_k90}});
    pairs.emplace_back(rows[i].svd_k90, rows[i].dct_k90);
  }
  CorrelationResult corr;
  try {
    corr = svd_dct_correlate(pairs);
  } catch (const Error& e) {
    throw CommandFailure(exit_code::kDegenerateStats,
                         std::string(e.what()) + " (needs >= 4 non-zero matrices whose k90 values vary)");
  }
  json out = {{"tool_version", std::string(kToolVersion)},
              {"input_path", options.input.string()},
              {"energy_target", options.energy_target},
              {"scale_applied", units.scale},
              {"scale_source", std::string(to_string(units.scale_source))},
              {"per_matrix", std::move(per_matrix)},
              {"pearson", corr.pearson_r},
              {"spearman", corr.spearman_rho},
              {"p_value", corr.p_value_pearson},
              {"n", corr.n}};
  write_file_atomic(options.out, out.dump(2) + "\n");
  return out;
}

void run_synth(const SynthOptions& options) {
  const AdapterFile file = generate(options.spec);
  write_file_atomic(options.out, write_container(file, options.f32 ? WritePolicy::kF32 : WritePolicy::kF64));
}

}  // namespace lora_spectrum::cli
