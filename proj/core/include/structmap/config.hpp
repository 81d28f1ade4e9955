#pragma once

#include "structmap/errors.hpp"
#include "structmap/evaluation.hpp"
#include "structmap/optimizer.hpp"
#include "structmap/pipeline.hpp"
#include "structmap/synthetic.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace structmap {

/// Every tunable of the pipeline in one document. Angles are written in degrees (keys ending in `_deg`).
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 0;
  RecognitionConfig recognition;
  AssociationConfig association;
  StructuralConfig structural;
  GraphProblemConfig optimizer;
  /// Solves in optimize_and_refine.
  int refine_rounds = 3;
  NoiseModel noise;
  CameraModel camera;
  MatchThresholds evaluation;
  Alignment alignment = Alignment::Rigid;

  struct Paths {
    std::string world;
    std::string sequence;
    std::string graph;
    std::string marker_db;
  } paths;

  DetectConfig detect() const;
  RenderConfig render() const;

  /// Runs every section's validate(); failures become ParseError at the section path.
  void validate() const;
};

/// Full document with every key, sections sorted.
std::string config_to_json(const RunConfig& cfg);

/// Parses a (possibly partial) document over the defaults. Unknown keys and wrong types throw ParseError with the
/// offending path; so do values rejected by validation.
RunConfig config_from_json(const std::string& text);

/// Applies "section.key=value" overrides to a document, then parses it. The value is read as JSON when it parses
/// as JSON and as a string otherwise.
RunConfig load_config(const std::string& document, const std::vector<std::string>& overrides);

}  // namespace structmap
