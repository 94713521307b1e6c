#pragma once

// Command-line front end over the pipeline. One verb per process; every verb
// reads the same layered configuration (defaults, then --config file, then
// --override key=value pairs, then dedicated flags) and prints a one-line
// JSON summary on success. Exit codes: 0 success, 1 runtime or assertion
// failure, 2 usage error.

#include "lego/downstream.hpp"
#include "lego/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace lego::cli {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The schema doubles as the default configuration: every recognized key
// appears here with its default value, and overlays may only touch keys that
// exist in this document.
inline io::Json default_config() {
  io::Json doc = to_json(RunConfig{});
  doc["ablation"] = {{"sigma_grid", {0.0, 0.25, 0.5, 0.75, 1.0}}};
  doc["sweep"] = {{"m_grid", {10, 20, 40}}, {"m0_grid", {50, 100}}};
  doc["tube"] = {{"grid_x", 400},
                 {"grid_y", 9},
                 {"length", 3.0},
                 {"halfwidth", 0.135},
                 {"k_nn", 14},
                 {"bandwidth", 0.0},
                 {"m0", 30},
                 {"max_vertical_early", 0.1},
                 {"early_count", 10},
                 {"min_vertical_late", 0.5},
                 {"min_first_corr", 0.95},
                 {"ambiguity_corr", 0.9}};
  doc["stability"] = {{"n_grid", {250, 500, 1000}},
                      {"c", 0.01},
                      {"bandwidth", 0.3},
                      {"seed", 7},
                      {"n_seeds", 3},
                      {"max_laplacian_slope", -0.3},
                      {"max_adjacency_growth", 0.7}};
  doc["downstream"] = {{"boundary_percentile", 90.0}, {"align_iters", 30}};
  doc["evaluate"] = {{"frames_path", ""}};
  return doc;
}

inline void merge_config(io::Json& base, const io::Json& overlay, const std::string& prefix) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw UsageError("unknown config key: " + path);
    io::Json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object())
      merge_config(slot, it.value(), path);
    else
      slot = it.value();
  }
}

// key=value with dotted key paths; the value is parsed as JSON when possible
// and kept as a string otherwise, so method=lego and k_nn=14 both work.
inline void apply_override(io::Json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("--override expects key=value, got: " + spec);
  const std::string key = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  std::vector<std::string> segments;
  for (std::size_t start = 0; start <= key.size();) {
    const auto dot = key.find('.', start);
    segments.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  io::Json* node = &doc;
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
    if (!node->is_object() || !node->contains(segments[i]))
      throw UsageError("unknown config key: " + key + " (flag --override)");
    node = &(*node)[segments[i]];
  }
  if (!node->is_object() || !node->contains(segments.back()))
    throw UsageError("unknown config key: " + key + " (flag --override)");
  const io::Json parsed = io::Json::parse(value, nullptr, /*allow_exceptions=*/false);
  (*node)[segments.back()] = parsed.is_discarded() ? io::Json(value) : parsed;
}

namespace detail {

// Maps malformed values (wrong types, bad enum names) to usage errors so they
// reach the user as exit 2 with the offending message.
template <typename F>
auto read_config(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const InvalidArgumentError& e) {
    throw UsageError(e.what());
  }
}

inline std::string require_output_dir(const RunConfig& config, const char* verb) {
  if (config.output_dir.empty())
    throw UsageError(std::string(verb) + " needs an output directory (flag --out)");
  return config.output_dir;
}

inline PointCloud realize_dataset(const RunConfig& config) {
  DatasetSpec spec = config.dataset;
  spec.seed = lego::detail::dataset_stream(config);
  PointCloud cloud = make_dataset(spec);
  if (config.noise.level > 0.0)
    cloud = apply_noise(cloud, lego::detail::resolve_noise(config));
  return cloud;
}

// estimate handles "both"; the single-frame verbs work with the first
// configured method (lego unless the config narrows it to lpca).
inline FrameMethod primary_method(const RunConfig& config) { return config.methods.front(); }

struct FrameBundle {
  PointCloud cloud;
  NeighborhoodGraph graph;
  double bandwidth = 0.0;
  TangentFrameSet frames;
};

inline FrameBundle compute_frames(const RunConfig& config) {
  validate_config(config);
  FrameBundle bundle;
  bundle.cloud = realize_dataset(config);
  bundle.graph = knn_graph(bundle.cloud, config.k_nn);
  bundle.bandwidth =
      config.bandwidth > 0.0 ? config.bandwidth : bandwidth_heuristic(bundle.graph);
  if (primary_method(config) == FrameMethod::lego) {
    const LaplacianOperator lap = random_walk_laplacian(
        gaussian_affinity(bundle.cloud, &bundle.graph, bundle.bandwidth,
                          AffinityMode::knn_truncated));
    EigensolverOptions opts;
    opts.policy = config.solver;
    const SpectralBasis basis = smallest_eigenpairs(lap, config.m0, opts);
    bundle.frames =
        lego_frames(bundle.cloud, bundle.graph, basis, config.m, config.dim_policy);
  } else {
    bundle.frames = lpca_frames(bundle.cloud, bundle.graph, config.dim_policy);
  }
  return bundle;
}

struct ArtifactWriter {
  std::filesystem::path dir;
  std::vector<std::string> written;

  explicit ArtifactWriter(const std::string& out_dir) : dir(out_dir) {
    std::filesystem::create_directories(dir);
  }
  std::string path(const std::string& file) {
    std::string full = (dir / file).string();
    written.push_back(full);
    return full;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Verb handlers: each consumes the merged configuration document and returns
// the one-line summary. Validation verbs carry their verdict in "passed".
// ---------------------------------------------------------------------------

inline io::Json cmd_generate(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  const std::string out_dir = detail::require_output_dir(config, "generate");
  const PointCloud cloud = detail::realize_dataset(config);

  detail::ArtifactWriter writer(out_dir);
  io::write_csv(writer.path("points.csv"),
                io::matrix_table(cloud.points.transpose(), "x", true));
  if (cloud.has_clean()) {
    Matrix clean(cloud.n(), cloud.p());
    Matrix params(cloud.n(), cloud.clean.front().params.size());
    TangentFrameSet truth;
    truth.method = detail::primary_method(config);
    for (Index j = 0; j < cloud.n(); ++j) {
      clean.row(j) = cloud.clean[j].point.transpose();
      params.row(j) = cloud.clean[j].params.transpose();
      truth.frames.push_back(cloud.clean[j].tangent_frame);
      truth.dims.push_back(cloud.clean[j].tangent_frame.cols());
    }
    io::write_csv(writer.path("clean.csv"), io::matrix_table(clean, "x", true));
    io::write_csv(writer.path("params.csv"), io::matrix_table(params, "u", true));
    io::write_frames_csv(writer.path("frames_true.csv"), truth);
  }
  io::write_json(writer.path("config.json"), to_json(config));

  return io::Json{{"verb", "generate"},
                  {"dataset", config.dataset.name},
                  {"n", cloud.n()},
                  {"p", cloud.p()},
                  {"noise_level", config.noise.level},
                  {"artifacts", writer.written}};
}

inline io::Json cmd_estimate(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  detail::read_config([&] {
    validate_config(config);
    return 0;
  });
  const RunResult result = run_estimation(config);
  io::Json reports = io::Json::array();
  for (const DiscrepancyReport& r : result.reports)
    reports.push_back({{"method", io::method_name(r.method)},
                       {"mean", r.mean},
                       {"median", r.median},
                       {"p90", r.p90}});
  return io::Json{{"verb", "estimate"},
                  {"n", result.config.dataset.points()},
                  {"has_truth", result.has_truth},
                  {"reports", reports},
                  {"artifacts", result.artifacts}};
}

inline io::Json cmd_evaluate(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  const std::string frames_path = detail::read_config(
      [&] { return doc.at("evaluate").at("frames_path").get<std::string>(); });
  if (frames_path.empty())
    throw UsageError("evaluate needs evaluate.frames_path (flag --override)");

  TangentFrameSet frames = io::read_frames_csv(frames_path);
  frames.method = detail::primary_method(config);
  const PointCloud cloud = detail::realize_dataset(config);
  const DiscrepancyReport report = discrepancy(frames, cloud.clean);

  io::Json summary{{"verb", "evaluate"},
                   {"frames_path", frames_path},
                   {"method", io::method_name(report.method)},
                   {"mean", report.mean},
                   {"median", report.median},
                   {"p90", report.p90}};
  if (!config.output_dir.empty()) {
    detail::ArtifactWriter writer(config.output_dir);
    io::write_json(writer.path("evaluation.json"), io::to_json(report));
    io::write_csv(writer.path("evaluation_per_point.csv"),
                  io::matrix_table(report.per_point, "discrepancy", true));
    summary["artifacts"] = writer.written;
  }
  return summary;
}

inline io::Json cmd_embed(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  const std::string out_dir = detail::require_output_dir(config, "embed");
  const int iters = detail::read_config(
      [&] { return doc.at("downstream").at("align_iters").get<int>(); });

  const detail::FrameBundle bundle = detail::compute_frames(config);
  const LocalViews views = build_local_views(bundle.cloud, bundle.graph, bundle.frames);
  const auto [alignment, embedding] = align_views(views, iters);

  detail::ArtifactWriter writer(out_dir);
  io::write_csv(writer.path("embedding.csv"), io::matrix_table(embedding, "z", true));
  io::Json history = io::Json::array();
  for (double e : alignment.error_history) history.push_back(e);
  io::write_json(writer.path("alignment.json"),
                 io::Json{{"error", alignment.error},
                          {"error_history", history},
                          {"warnings", alignment.warnings}});
  return io::Json{{"verb", "embed"},
                  {"method", io::method_name(bundle.frames.method)},
                  {"n", bundle.cloud.n()},
                  {"d", views.d},
                  {"alignment_error", alignment.error},
                  {"artifacts", writer.written}};
}

inline io::Json cmd_boundary(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  const std::string out_dir = detail::require_output_dir(config, "boundary");
  const double percentile = detail::read_config(
      [&] { return doc.at("downstream").at("boundary_percentile").get<double>(); });

  const detail::FrameBundle bundle = detail::compute_frames(config);
  const Affinity kernel = sinkhorn_doubly_stochastic(gaussian_affinity(
      bundle.cloud, &bundle.graph, bundle.bandwidth, AffinityMode::knn_truncated));
  const BoundaryReport report =
      detect_boundary(bundle.cloud, bundle.frames, kernel, percentile);

  detail::ArtifactWriter writer(out_dir);
  Matrix table(bundle.cloud.n(), 2);
  Index flagged = 0;
  for (Index j = 0; j < bundle.cloud.n(); ++j) {
    table(j, 0) = report.norms(j);
    table(j, 1) = report.labels[j] ? 1.0 : 0.0;
    flagged += report.labels[j] ? 1 : 0;
  }
  io::CsvTable csv = io::matrix_table(table, "col", true);
  csv.header = {"index", "norm", "label"};
  io::write_csv(writer.path("boundary.csv"), csv);
  return io::Json{{"verb", "boundary"},
                  {"method", io::method_name(bundle.frames.method)},
                  {"n", bundle.cloud.n()},
                  {"percentile", report.percentile},
                  {"threshold", report.threshold},
                  {"flagged", flagged},
                  {"artifacts", writer.written}};
}

inline io::Json cmd_spectrum(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  const std::string out_dir = detail::require_output_dir(config, "spectrum");
  detail::read_config([&] {
    validate_config(config);
    return 0;
  });

  const PointCloud cloud = detail::realize_dataset(config);
  const NeighborhoodGraph graph = knn_graph(cloud, config.k_nn);
  const double s = config.bandwidth > 0.0 ? config.bandwidth : bandwidth_heuristic(graph);
  const LaplacianOperator lap = random_walk_laplacian(
      gaussian_affinity(cloud, &graph, s, AffinityMode::knn_truncated));
  EigensolverOptions opts;
  opts.policy = config.solver;
  const SpectralBasis basis = smallest_eigenpairs(lap, config.m0, opts);

  detail::ArtifactWriter writer(out_dir);
  io::write_csv(writer.path("eigenvalues.csv"),
                io::matrix_table(basis.eigenvalues, "lambda", true));
  io::write_csv(writer.path("phi.csv"), io::matrix_table(basis.phi, "phi"));
  return io::Json{{"verb", "spectrum"},
                  {"n", cloud.n()},
                  {"m0", config.m0},
                  {"bandwidth", s},
                  {"lambda_max", basis.eigenvalues(basis.eigenvalues.size() - 1)},
                  {"artifacts", writer.written}};
}

inline io::Json cmd_ablate_noise(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  const std::vector<double> grid = detail::read_config(
      [&] { return doc.at("ablation").at("sigma_grid").get<std::vector<double>>(); });
  const AblationTable table = detail::read_config([&] {
    validate_config(config);
    return noise_ablation(config, grid);
  });

  io::Json finals = io::Json::object();
  for (const AblationRow& row : table.rows)
    if (row.sigma == grid.back()) finals[io::method_name(row.method)] = row.mean;
  return io::Json{{"verb", "ablate-noise"},
                  {"sigma_grid", grid},
                  {"rows", table.rows.size()},
                  {"mean_at_sigma_max", finals},
                  {"artifacts", table.artifacts}};
}

inline io::Json cmd_ablate_hyper(const io::Json& doc) {
  const RunConfig config = detail::read_config([&] { return run_config_from_json(doc); });
  const std::vector<int> m_grid = detail::read_config(
      [&] { return doc.at("sweep").at("m_grid").get<std::vector<int>>(); });
  const std::vector<int> m0_grid = detail::read_config(
      [&] { return doc.at("sweep").at("m0_grid").get<std::vector<int>>(); });
  const SweepTable table = hyperparam_sweep(config, m_grid, m0_grid);

  std::size_t valid = 0;
  const SweepCell* best = nullptr;
  for (const SweepCell& cell : table.cells)
    if (cell.valid) {
      ++valid;
      if (!best || cell.median < best->median) best = &cell;
    }
  io::Json summary{{"verb", "ablate-hyper"},
                   {"cells", table.cells.size()},
                   {"valid_cells", valid},
                   {"artifacts", table.artifacts}};
  if (best)
    summary["best"] = {{"m", best->m}, {"m0", best->m0}, {"median", best->median}};
  return summary;
}

inline io::Json cmd_validate_tube(const io::Json& doc) {
  const io::Json& section = doc.at("tube");
  TubeOptions opts;
  Index grid_x = 0, grid_y = 0;
  double length = 0.0, halfwidth = 0.0, bandwidth = 0.0;
  int k_nn = 0, m0 = 0;
  detail::read_config([&] {
    grid_x = section.at("grid_x").get<Index>();
    grid_y = section.at("grid_y").get<Index>();
    length = section.at("length").get<double>();
    halfwidth = section.at("halfwidth").get<double>();
    k_nn = section.at("k_nn").get<int>();
    bandwidth = section.at("bandwidth").get<double>();
    m0 = section.at("m0").get<int>();
    opts.max_vertical_early = section.at("max_vertical_early").get<double>();
    opts.early_count = section.at("early_count").get<Index>();
    opts.min_vertical_late = section.at("min_vertical_late").get<double>();
    opts.min_first_corr = section.at("min_first_corr").get<double>();
    opts.ambiguity_corr = section.at("ambiguity_corr").get<double>();
    return 0;
  });
  const std::string out_dir = doc.at("output_dir").get<std::string>();
  const TubeReport report = tube_spectrum_validation(grid_x, grid_y, length, halfwidth,
                                                     k_nn, bandwidth, m0, opts, out_dir);
  return io::Json{{"verb", "validate-tube"},
                  {"passed", report.passed},
                  {"first_vertical_index", report.first_vertical_index},
                  {"first_nontrivial_correlation", report.first_nontrivial_correlation},
                  {"scale", report.scale},
                  {"failures", report.failures},
                  {"ambiguities", report.ambiguities},
                  {"artifacts", report.artifacts}};
}

inline io::Json cmd_validate_stability(const io::Json& doc) {
  const io::Json& section = doc.at("stability");
  StabilityOptions opts;
  std::vector<Index> n_grid;
  double c = 0.0, bandwidth = 0.0;
  std::uint64_t seed = 0;
  detail::read_config([&] {
    n_grid = section.at("n_grid").get<std::vector<Index>>();
    c = section.at("c").get<double>();
    bandwidth = section.at("bandwidth").get<double>();
    seed = section.at("seed").get<std::uint64_t>();
    opts.n_seeds = section.at("n_seeds").get<int>();
    opts.max_laplacian_slope = section.at("max_laplacian_slope").get<double>();
    opts.max_adjacency_growth = section.at("max_adjacency_growth").get<double>();
    return 0;
  });
  const std::string out_dir = doc.at("output_dir").get<std::string>();
  const StabilityReport report =
      laplacian_stability_sweep(n_grid, c, bandwidth, seed, opts, out_dir);
  return io::Json{{"verb", "validate-stability"},
                  {"passed", report.passed},
                  {"slope_adjacency", report.slope_adjacency},
                  {"slope_normalized", report.slope_normalized},
                  {"slope_laplacian", report.slope_laplacian},
                  {"failures", report.failures},
                  {"artifacts", report.artifacts}};
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Tangent frame estimation from Laplacian eigenvector gradients"};
  app.name("lego");

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  int threads = 0;
  bool schema = false;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--override", overrides,
                 "configuration override key=value, dotted paths allowed (repeatable)")
      ->allow_extra_args(false);
  app.add_option("--out", out_dir, "output directory for artifacts");
  auto* seed_opt = app.add_option("--seed", seed, "run seed shifting all random streams");
  auto* threads_opt =
      app.add_option("--threads", threads,
                     "worker thread count (defaults to the LEGO_THREADS environment "
                     "variable, then hardware concurrency)");
  app.add_flag("--schema", schema, "print the configuration schema and exit");

  const std::vector<std::pair<std::string, io::Json (*)(const io::Json&)>> verbs = {
      {"generate", cmd_generate},
      {"estimate", cmd_estimate},
      {"evaluate", cmd_evaluate},
      {"embed", cmd_embed},
      {"boundary", cmd_boundary},
      {"spectrum", cmd_spectrum},
      {"ablate-noise", cmd_ablate_noise},
      {"ablate-hyper", cmd_ablate_hyper},
      {"validate-tube", cmd_validate_tube},
      {"validate-stability", cmd_validate_stability}};
  const std::vector<std::string> descriptions = {
      "sample a dataset and write point/truth tables",
      "run frame estimation and write frames, reports, and spectra",
      "score previously written frames against regenerated ground truth",
      "align tangent views into a global embedding",
      "flag boundary points via the doubly stochastic kernel statistic",
      "write the Laplacian eigenvalues and eigenvectors",
      "sweep the noise level and compare both estimators",
      "sweep the eigenvector counts m and m0",
      "check the thin-strip spectrum against the analytic tube model",
      "check Laplacian robustness under shrinking sampling noise"};
  for (std::size_t i = 0; i < verbs.size(); ++i)
    app.add_subcommand(verbs[i].first, descriptions[i])->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  if (schema) {
    out << default_config().dump(2) << '\n';
    return 0;
  }

  try {
    const auto parsed = app.get_subcommands();
    if (parsed.empty())
      throw UsageError("a verb is required; run with --help to list them");
    const std::string verb = parsed.front()->get_name();

    io::Json doc = default_config();
    if (!config_path.empty()) {
      io::Json overlay;
      try {
        overlay = io::read_json(config_path);
      } catch (const io::IoError& e) {
        throw UsageError(std::string(e.what()) + " (flag --config)");
      }
      if (!overlay.is_object())
        throw UsageError("config file must hold a JSON object (flag --config)");
      merge_config(doc, overlay, "");
    }
    for (const std::string& spec : overrides) apply_override(doc, spec);
    if (seed_opt->count() > 0) doc["seed"] = seed;
    if (!out_dir.empty()) doc["output_dir"] = out_dir;

    if (threads_opt->count() > 0) {
      if (threads < 1) throw UsageError("--threads must be at least 1");
      set_thread_count(threads);
    }

    io::Json summary;
    for (const auto& [name, handler] : verbs)
      if (name == verb) summary = handler(doc);
    out << summary.dump() << '\n';
    if (summary.contains("passed") && !summary.at("passed").get<bool>()) return 1;
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv;
  argv.push_back("lego");
  for (const std::string& arg : args) argv.push_back(arg.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace lego::cli
