#pragma once

#include "graph/layout.hpp"
#include "graph/scene_graph.hpp"
#include "synth/synth.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sgti {

// Binary P6, maxval 255; byte b <-> value b / 127.5 - 1.
std::string encode_ppm(const Image &image);
Image decode_ppm(const std::string &bytes);
void write_ppm(const std::string &path, const Image &image);
Image read_ppm(const std::string &path);

// One scene per document:
//   {"objects": ["red square", 5],
//    "relationships": [[0, "above", 1]],
//    "boxes": [[x1, y1, x2, y2], ...]}     <- optional ground-truth layout
// Categories and predicates are names or ids.
struct GraphDocument {
  SceneGraph graph;
  std::optional<Layout> layout;
};
// Throws FormatError carrying origin:line:column for malformed input and the
// offending field for invalid content.
GraphDocument parse_graph_document(const std::string &text,
                                   const std::string &origin);
GraphDocument read_graph_document(const std::string &path);
std::string graph_document_text(const SceneGraph &graph,
                                const Layout *layout = nullptr);

// One object per line: index, class name, x1 y1 x2 y2.
std::string layout_text(const Layout &layout);

// "SGTK" | u32 version | u32 tokens..., little-endian.
inline constexpr std::uint32_t kTokenCacheVersion = 1;
std::string encode_token_cache(const std::vector<std::uint32_t> &tokens);
std::vector<std::uint32_t> decode_token_cache(const std::string &bytes);
void write_token_cache(const std::string &path,
                       const std::vector<std::uint32_t> &tokens);
std::vector<std::uint32_t> read_token_cache(const std::string &path);

// manifest.txt lines: image path, graph path, then class x1 y1 x2 y2 per
// object, tab separated; paths relative to the manifest.
struct ManifestEntry {
  std::string image;
  std::string graph;
  Layout layout;
};
std::vector<ManifestEntry> parse_manifest(const std::string &text,
                                          const std::string &origin);
// Writes images/, graphs/ and manifest.txt under dir; returns the manifest
// path.
std::string write_dataset(const std::string &dir,
                          const std::vector<SceneSample> &samples);
std::vector<SceneSample> read_dataset(const std::string &manifest_path);

std::string read_file(const std::string &path);
void write_file(const std::string &path, const std::string &bytes);

} // namespace sgti
