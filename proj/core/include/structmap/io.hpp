#pragma once

#include "structmap/errors.hpp"
#include "structmap/scene_graph.hpp"
#include "structmap/structural.hpp"
#include "structmap/synthetic.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace structmap {

/// Scene-graph document: keyframes, components, rooms, floor, markers and the derived edge list, plus the
/// bookkeeping (id counters, tombstones, warnings) needed for an exact round trip. Poses are 4x4 row arrays.
std::string graph_to_json(const SceneGraph& g);
/// Throws ParseError on malformed input, unknown keys, dangling references or an edge list that does not match
/// the contents.
SceneGraph graph_from_json(const std::string& text);

void save_graph(const SceneGraph& g, const std::filesystem::path& path);
SceneGraph load_graph(const std::filesystem::path& path);

/// Graphviz digraph of the floor -> room -> wall/ground -> keyframe hierarchy, one DOT edge per graph edge.
std::string graph_to_dot(const SceneGraph& g);

/// ASCII PLY of every component's support points in the world frame, colored by component id.
void write_components_ply(const SceneGraph& g, std::ostream& out);

/// Binary little-endian PLY with x, y, z (float32), label (uint8), confidence (float32).
void write_labeled_ply(const LabeledCloud& cloud, std::ostream& out);
/// Reads binary little-endian or ASCII PLY carrying at least those five vertex properties; others are skipped.
LabeledCloud read_labeled_ply(std::istream& in);

/// {"5": "corridor-A", ...}
MarkerDatabase parse_marker_db(const std::string& text);
std::string dump_marker_db(const MarkerDatabase& db);

std::string ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const std::string& text);

/// Writes manifest.json, ground_truth.json and one kf_NNNNN.ply per keyframe. Creates `dir` if needed.
void write_sequence(const std::filesystem::path& dir, const Sequence& seq, const GroundTruth& truth);

/// Loads manifest.json and the keyframe clouds. An unreadable cloud drops its keyframe and records a warning.
/// Throws ParseError for a malformed manifest and std::runtime_error when the manifest is missing.
/// `with_clouds = false` reads the manifest only (odometry, poses, markers); clouds stay empty.
Sequence read_sequence(const std::filesystem::path& dir, bool with_clouds = true);
GroundTruth read_ground_truth(const std::filesystem::path& path);

/// Whole file into a string; throws std::runtime_error naming the file when it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace structmap
