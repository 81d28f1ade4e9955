#include "cli.hpp"

#include "structmap/config.hpp"
#include "structmap/evaluation.hpp"
#include "structmap/io.hpp"
#include "structmap/pipeline.hpp"
#include "structmap/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace structmap::cli {

namespace fs = std::filesystem;

namespace {

/// Bad invocation or missing input: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Run seed");
  cmd->add_option("--set", c.overrides, "Config override section.key=value (repeatable)");
  cmd->add_option("--out", c.out, "Output path");
}

RunConfig load(const Common& c) {
  std::string doc;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw UsageError("config file not found: " + c.config_path);
    doc = read_text_file(c.config_path);
  }
  RunConfig cfg = load_config(doc, c.overrides);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::string need_path(const std::string& given, const std::string& fallback, const std::string& what) {
  const std::string p = given.empty() ? fallback : given;
  if (p.empty()) throw UsageError("missing " + what);
  return p;
}

void need_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

fs::path sequence_dir(const fs::path& p) { return fs::is_directory(p) ? p : p.parent_path(); }

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

std::string graph_summary(const SceneGraph& g) {
  int walls = 0, grounds = 0;
  for (const auto& [id, c] : g.components) (c.plane.cls == SemanticClass::Wall ? walls : grounds)++;
  std::ostringstream s;
  s << g.keyframes.size() << " keyframes, " << walls << " walls, " << grounds << " grounds, " << g.rooms.size()
    << " rooms, " << (g.floor ? 1 : 0) << " floors";
  return s.str();
}

int cmd_simulate(const Common& c, const std::string& spec_arg, int max_keyframes, std::ostream& out,
                 std::ostream& err) {
  RunConfig cfg = load(c);
  const std::string spec_path = need_path(spec_arg, cfg.paths.world, "world spec path");
  need_exists(spec_path, "world spec");
  const std::string dir = need_path(c.out, cfg.paths.sequence, "--out directory");
  WorldSpec spec;
  try {
    spec = load_world_spec(spec_path);
    if (max_keyframes > 0) spec.trajectory.max_keyframes = max_keyframes;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  GroundTruth truth;
  try {
    truth = generate_world(spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid world spec: ") + e.what());
  }
  RenderConfig rc = cfg.render();
  rc.seed = c.seed ? *c.seed : spec.seed;
  const Sequence seq = render_keyframes(spec, truth, rc);
  write_sequence(dir, seq, truth);
  print_warnings(seq.warnings, err);
  const EntityCounts n = truth.counts();
  out << "sequence " << seq.id << ": " << seq.keyframes.size() << " keyframes -> " << dir << "\n";
  out << "ground truth: " << n.walls << " walls, " << n.grounds << " grounds, " << n.rooms << " rooms, " << n.floors
      << " floors\n";
  return kOk;
}

int cmd_detect(const Common& c, const std::string& seq_arg, const std::string& markers_arg, std::ostream& out,
               std::ostream& err) {
  RunConfig cfg = load(c);
  const fs::path dir = sequence_dir(need_path(seq_arg, cfg.paths.sequence, "sequence directory"));
  need_exists(dir / "manifest.json", "sequence manifest");
  const std::string graph_path = need_path(c.out, cfg.paths.graph, "--out graph path");
  Sequence seq = read_sequence(dir);
  const std::string db_path = markers_arg.empty() ? cfg.paths.marker_db : markers_arg;
  if (!db_path.empty()) {
    need_exists(db_path, "marker database");
    seq.markers = parse_marker_db(read_text_file(db_path));
  }
  if (seq.keyframes.empty()) {
    print_warnings(seq.warnings, err);
    throw std::runtime_error("sequence " + seq.id + " has no readable keyframes");
  }
  const SceneGraph g = detect_sequence(seq, cfg.detect(), cfg.seed);
  save_graph(g, graph_path);
  print_warnings(g.warnings, err);
  out << "graph " << graph_path << ": " << graph_summary(g) << "\n";
  return kOk;
}

int cmd_optimize(const Common& c, const std::string& graph_arg, const std::string& seq_arg,
                 const std::string& trace_arg, std::ostream& out) {
  RunConfig cfg = load(c);
  const std::string graph_path = need_path(graph_arg, cfg.paths.graph, "graph path");
  need_exists(graph_path, "graph");
  const fs::path dir = sequence_dir(need_path(seq_arg, cfg.paths.sequence, "--sequence (manifest)"));
  need_exists(dir / "manifest.json", "sequence manifest");
  const std::string out_path = need_path(c.out, "", "--out graph path");

  SceneGraph g = load_graph(graph_path);
  const Sequence seq = read_sequence(dir, false);
  if (!g.sequence_id.empty() && g.sequence_id != seq.id)
    throw std::runtime_error("graph sequence '" + g.sequence_id + "' does not match manifest '" + seq.id + "'");
  MarkerDatabase db = seq.markers;
  if (!cfg.paths.marker_db.empty()) db = parse_marker_db(read_text_file(cfg.paths.marker_db));

  const RefineResult result = optimize_and_refine(g, seq.odometry, cfg.optimizer, cfg.structural, db, cfg.refine_rounds);
  save_graph(g, out_path);

  nlohmann::json trace;
  trace["cost_trace"] = result.cost_trace();
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : result.rounds)
    rounds.push_back({{"iterations", r.iterations},
                      {"converged", r.converged},
                      {"termination", r.termination},
                      {"cost_trace", r.cost_trace}});
  trace["rounds"] = std::move(rounds);
  const std::string trace_path = trace_arg.empty() ? out_path + ".trace.json" : trace_arg;
  write_text_file(trace_path, trace.dump(2) + "\n");

  const auto costs = result.cost_trace();
  out << "optimized " << out_path << ": " << result.rounds.size() << " round(s), cost " << costs.front() << " -> "
      << costs.back() << "\n";
  return kOk;
}

int cmd_evaluate(const Common& c, const std::string& graph_arg, const std::string& truth_arg,
                 const std::string& before_arg, std::ostream& out) {
  RunConfig cfg = load(c);
  const std::string graph_path = need_path(graph_arg, cfg.paths.graph, "graph path");
  need_exists(graph_path, "graph");
  if (truth_arg.empty()) throw UsageError("missing --truth (ground_truth.json or sequence directory)");
  fs::path truth_path = truth_arg;
  if (fs::is_directory(truth_path)) truth_path /= "ground_truth.json";
  need_exists(truth_path, "ground truth");

  const SceneGraph g = load_graph(graph_path);
  const GroundTruth truth = read_ground_truth(truth_path);
  if (g.sequence_id != truth.sequence_id)
    throw std::runtime_error("graph sequence '" + g.sequence_id + "' does not match ground truth '" +
                             truth.sequence_id + "'");
  std::optional<SceneGraph> before;
  if (!before_arg.empty()) {
    need_exists(before_arg, "--before graph");
    before = load_graph(before_arg);
    if (before->sequence_id != truth.sequence_id)
      throw std::runtime_error("--before graph sequence '" + before->sequence_id + "' does not match ground truth '" +
                               truth.sequence_id + "'");
  }
  const EvaluationReport report = evaluate(g, truth, cfg.evaluation, before ? &*before : nullptr, cfg.alignment);
  const std::string table = report_to_table(report);
  out << table;
  if (!c.out.empty()) {
    const fs::path dir = c.out;
    write_text_file(dir / "metrics.json", report_to_json(report));
    write_text_file(dir / "table.txt", table);
    write_text_file(dir / "plot.svg", report_to_svg(report));
  }
  return kOk;
}

int cmd_export(const Common& c, const std::string& graph_arg, const std::string& format, std::ostream& out) {
  RunConfig cfg = load(c);
  const std::string graph_path = need_path(graph_arg, cfg.paths.graph, "graph path");
  need_exists(graph_path, "graph");
  const SceneGraph g = load_graph(graph_path);
  std::ostringstream doc;
  if (format == "dot") doc << graph_to_dot(g);
  else write_components_ply(g, doc);
  if (c.out.empty()) {
    out << doc.str();
  } else {
    write_text_file(c.out, doc.str());
    out << "wrote " << c.out << "\n";
  }
  return kOk;
}

int cmd_config(const Common& c, bool dump, std::ostream& out) {
  const RunConfig cfg = load(c);
  const std::string doc = config_to_json(cfg);
  if (!c.out.empty()) write_text_file(c.out, doc);
  if (dump) out << doc;
  else if (c.out.empty()) out << "config ok\n";
  return kOk;
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical scene graphs from labeled RGB-D keyframes", "structmap"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;
  std::string spec, sequence, graph, markers, trace, truth, before, format;
  int max_keyframes = 0;
  bool dump = false;

  auto* simulate = app.add_subcommand("simulate", "Render a world spec into a sequence directory");
  simulate->add_option("spec", spec, "World spec JSON");
  simulate->add_option("--max-keyframes", max_keyframes, "Keyframe cap (0: whole trajectory)")->check(CLI::NonNegativeNumber);
  add_common(simulate, common);
  simulate->footer("--seed sets the render seed; without it the world's own seed is used.");

  auto* detect = app.add_subcommand("detect", "Build a scene graph from a sequence directory");
  detect->add_option("sequence", sequence, "Sequence directory (or its manifest.json)");
  detect->add_option("--markers", markers, "Marker database JSON (default: the manifest's)");
  add_common(detect, common);

  auto* optimize = app.add_subcommand("optimize", "Jointly refine keyframe poses and scene entities");
  optimize->add_option("graph", graph, "Scene-graph JSON");
  optimize->add_option("--sequence", sequence, "Sequence directory or manifest.json (odometry)");
  optimize->add_option("--trace", trace, "Cost trace JSON (default: <out>.trace.json)");
  add_common(optimize, common);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Precision/recall and ATE against ground truth");
  evaluate_cmd->add_option("graph", graph, "Scene-graph JSON");
  evaluate_cmd->add_option("--truth", truth, "ground_truth.json or sequence directory");
  evaluate_cmd->add_option("--before", before, "Graph before optimization, for the ATE comparison");
  add_common(evaluate_cmd, common);
  evaluate_cmd->footer("With --out DIR, metrics.json, table.txt and plot.svg are written to DIR.");

  auto* export_cmd = app.add_subcommand("export", "Write the graph as Graphviz DOT or a component PLY");
  export_cmd->add_option("graph", graph, "Scene-graph JSON");
  export_cmd->add_option("--format", format, "dot or ply")->required()->check(CLI::IsMember({"dot", "ply"}));
  add_common(export_cmd, common);

  auto* config = app.add_subcommand("config", "Validate or print the effective configuration");
  config->add_flag("--dump", dump, "Print every key with its effective value");
  add_common(config, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << one_line(e.what()) << "\n";
    return kUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(common, spec, max_keyframes, out, err);
    if (detect->parsed()) return cmd_detect(common, sequence, markers, out, err);
    if (optimize->parsed()) return cmd_optimize(common, graph, sequence, trace, out);
    if (evaluate_cmd->parsed()) return cmd_evaluate(common, graph, truth, before, out);
    if (export_cmd->parsed()) return cmd_export(common, graph, format, out);
    if (config->parsed()) return cmd_config(common, dump, out);
  } catch (const UsageError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kRuntime;
  }
  err << "error: no subcommand\n";
  return kUsage;
}

}  // namespace structmap::cli
