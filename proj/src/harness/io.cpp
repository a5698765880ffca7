#include "harness/io.hpp"

#include "core/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sgti {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string &path, const std::string &bytes) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty())
    fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw ValidationError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw ValidationError("short write to " + path);
}

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string &s, const std::string &where) {
  double v = 0;
  const auto *end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

void skip_space_and_comments(const std::string &s, std::size_t &pos) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n')
        ++pos;
    } else {
      break;
    }
  }
}

int ppm_int(const std::string &s, std::size_t &pos) {
  skip_space_and_comments(s, pos);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), v);
  if (ec != std::errc())
    throw FormatError("ppm: bad header at byte " + std::to_string(pos));
  pos = ptr - s.data();
  return v;
}

} // namespace

std::string encode_ppm(const Image &image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (float v : image.pixels) {
    const double b = std::nearbyint((static_cast<double>(v) + 1.0) * 127.5);
    const auto byte = static_cast<unsigned char>(std::clamp(b, 0.0, 255.0));
    out.push_back(static_cast<char>(byte));
  }
  return out;
}

Image decode_ppm(const std::string &bytes) {
  if (bytes.size() < 2 || bytes.compare(0, 2, "P6") != 0)
    throw FormatError("ppm: expected P6 magic");
  std::size_t pos = 2;
  Image img;
  img.width = ppm_int(bytes, pos);
  img.height = ppm_int(bytes, pos);
  const int maxval = ppm_int(bytes, pos);
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw FormatError("ppm: need positive size and maxval 255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("ppm: missing separator before pixel data");
  ++pos;
  const auto n = static_cast<std::size_t>(img.width) * img.height * 3;
  if (bytes.size() - pos != n)
    throw FormatError("ppm: expected " + std::to_string(n) +
                      " pixel bytes, found " + std::to_string(bytes.size() - pos));
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    img.pixels[i] = static_cast<float>(
        static_cast<unsigned char>(bytes[pos + i]) / 127.5 - 1.0);
  return img;
}

void write_ppm(const std::string &path, const Image &image) {
  write_file(path, encode_ppm(image));
}

Image read_ppm(const std::string &path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const FormatError &e) {
    throw FormatError(path + ": " + e.what());
  }
}

namespace {

std::string line_col(const std::string &text, std::size_t byte) {
  byte = std::min(byte, text.size());
  int line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

int lookup(const json &v, const std::vector<std::string> &names,
           int (*by_name)(const std::string &), const std::string &what,
           const std::string &where) {
  if (v.is_number_integer()) {
    const auto id = v.get<std::int64_t>();
    if (id < 0 || id >= static_cast<std::int64_t>(names.size()))
      throw FormatError(where + ": " + what + " id " + std::to_string(id) +
                        " out of range [0, " + std::to_string(names.size()) +
                        ")");
    return static_cast<int>(id);
  }
  if (v.is_string()) {
    const int id = by_name(v.get<std::string>());
    if (id < 0)
      throw FormatError(where + ": unknown " + what + " '" +
                        v.get<std::string>() + "'");
    return id;
  }
  throw FormatError(where + ": " + what + " must be a name or an id");
}

} // namespace

GraphDocument parse_graph_document(const std::string &text,
                                   const std::string &origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    std::string msg = e.what();
    const auto colon = msg.rfind(": ");
    throw FormatError(origin + ":" + line_col(text, e.byte) + ": " +
                      (colon == std::string::npos ? msg : msg.substr(colon + 2)));
  }
  if (!doc.is_object())
    throw FormatError(origin + ": top level must be an object");
  for (const auto &[key, value] : doc.items())
    if (key != "objects" && key != "relationships" && key != "boxes")
      throw FormatError(origin + ": unknown field '" + key + "'");
  if (!doc.contains("objects") || !doc["objects"].is_array())
    throw FormatError(origin + ": 'objects' must be an array");

  GraphDocument out;
  auto &g = out.graph;
  g.num_categories = kNumClasses;
  g.num_predicates = kNumPredicates;
  const auto &objects = doc["objects"];
  for (std::size_t i = 0; i < objects.size(); ++i)
    g.nodes.push_back(lookup(objects[i], class_names(), class_id, "category",
                             origin + ": objects[" + std::to_string(i) + "]"));
  if (doc.contains("relationships")) {
    const auto &rels = doc["relationships"];
    if (!rels.is_array())
      throw FormatError(origin + ": 'relationships' must be an array");
    for (std::size_t i = 0; i < rels.size(); ++i) {
      const auto where = origin + ": relationships[" + std::to_string(i) + "]";
      const auto &r = rels[i];
      if (!r.is_array() || r.size() != 3 || !r[0].is_number_integer() ||
          !r[2].is_number_integer())
        throw FormatError(where +
                          ": expected [subject_index, predicate, object_index]");
      const auto s = r[0].get<std::int64_t>(), o = r[2].get<std::int64_t>();
      if (s < 0 || s >= g.size() || o < 0 || o >= g.size())
        throw FormatError(where + ": object index out of range");
      if (s == o)
        throw FormatError(where + ": self relationship");
      Edge e;
      e.src = static_cast<int>(s);
      e.dst = static_cast<int>(o);
      e.predicate =
          lookup(r[1], predicate_names(), predicate_id, "predicate", where);
      g.edges.push_back(e);
    }
  }
  if (g.nodes.empty())
    throw FormatError(origin + ": 'objects' is empty");
  if (doc.contains("boxes")) {
    const auto &boxes = doc["boxes"];
    if (!boxes.is_array() || boxes.size() != objects.size())
      throw FormatError(origin + ": 'boxes' must hold one box per object");
    Layout layout;
    layout.classes = g.nodes;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto &b = boxes[i];
      const auto where = origin + ": boxes[" + std::to_string(i) + "]";
      if (!b.is_array() || b.size() != 4)
        throw FormatError(where + ": expected [x1, y1, x2, y2]");
      for (const auto &v : b)
        if (!v.is_number())
          throw FormatError(where + ": coordinates must be numbers");
      layout.boxes.push_back(
          {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
           b[3].get<double>()});
    }
    out.layout = std::move(layout);
  }
  try {
    g.validate();
  } catch (const ValidationError &e) {
    throw FormatError(origin + ": " + e.what());
  }
  return out;
}

GraphDocument read_graph_document(const std::string &path) {
  return parse_graph_document(read_file(path), path);
}

std::string graph_document_text(const SceneGraph &graph, const Layout *layout) {
  json objects = json::array(), rels = json::array();
  for (int c : graph.nodes)
    objects.push_back(class_names().at(c));
  for (const auto &e : graph.edges)
    rels.push_back(json::array({e.src, predicate_names().at(e.predicate), e.dst}));
  std::string out = "{\"objects\": " + objects.dump() +
                    ",\n \"relationships\": " + rels.dump();
  if (layout) {
    json boxes = json::array();
    for (const auto &b : layout->boxes)
      boxes.push_back(json::array({b.x1, b.y1, b.x2, b.y2}));
    out += ",\n \"boxes\": " + boxes.dump();
  }
  return out + "}\n";
}

std::string layout_text(const Layout &layout) {
  std::string out;
  char buf[160];
  for (int i = 0; i < layout.size(); ++i) {
    const auto &b = layout.boxes[i];
    std::snprintf(buf, sizeof buf, "%d\t%s\t%.6f %.6f %.6f %.6f\n", i,
                  class_names().at(layout.classes[i]).c_str(), b.x1, b.y1,
                  b.x2, b.y2);
    out += buf;
  }
  return out;
}

std::string encode_token_cache(const std::vector<std::uint32_t> &tokens) {
  std::string out = "SGTK";
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out.push_back(static_cast<char>(v >> (8 * i)));
  };
  put(kTokenCacheVersion);
  for (auto t : tokens)
    put(t);
  return out;
}

std::vector<std::uint32_t> decode_token_cache(const std::string &bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "SGTK") != 0)
    throw FormatError("token cache: bad magic");
  auto get = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return v;
  };
  const auto version = get(4);
  if (version != kTokenCacheVersion)
    throw FormatError("token cache: version " + std::to_string(version) +
                      " is not supported");
  if ((bytes.size() - 8) % 4 != 0)
    throw FormatError("token cache: truncated");
  std::vector<std::uint32_t> out((bytes.size() - 8) / 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = get(8 + 4 * i);
  return out;
}

void write_token_cache(const std::string &path,
                       const std::vector<std::uint32_t> &tokens) {
  write_file(path, encode_token_cache(tokens));
}

std::vector<std::uint32_t> read_token_cache(const std::string &path) {
  try {
    return decode_token_cache(read_file(path));
  } catch (const FormatError &e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<ManifestEntry> parse_manifest(const std::string &text,
                                          const std::string &origin) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#')
      continue;
    const auto where = origin + ":" + std::to_string(number);
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t'))
      cols.push_back(col);
    if (cols.size() != 3)
      throw FormatError(where + ": expected image, graph and layout columns");
    ManifestEntry e{cols[0], cols[1], {}};
    std::istringstream fields(cols[2]);
    std::vector<std::string> f;
    for (std::string w; fields >> w;)
      f.push_back(w);
    if (f.size() % 5 != 0)
      throw FormatError(where + ": layout needs class x1 y1 x2 y2 per object");
    for (std::size_t i = 0; i < f.size(); i += 5) {
      const double c = parse_double(f[i], where);
      if (c != std::floor(c) || c < 0 || c >= kNumClasses)
        throw FormatError(where + ": bad class '" + f[i] + "'");
      e.layout.classes.push_back(static_cast<int>(c));
      e.layout.boxes.push_back(
          {parse_double(f[i + 1], where), parse_double(f[i + 2], where),
           parse_double(f[i + 3], where), parse_double(f[i + 4], where)});
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string write_dataset(const std::string &dir,
                          const std::vector<SceneSample> &samples) {
  std::string manifest = "# image\tgraph\tclass x1 y1 x2 y2 ...\n";
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto &s = samples[i];
    std::snprintf(name, sizeof name, "%04zu", i);
    const std::string image = std::string("images/") + name + ".ppm";
    const std::string graph = std::string("graphs/") + name + ".json";
    write_ppm((fs::path(dir) / image).string(), s.image);
    write_file((fs::path(dir) / graph).string(),
               graph_document_text(s.graph, &s.layout));
    manifest += image + "\t" + graph + "\t";
    for (int k = 0; k < s.layout.size(); ++k) {
      const auto &b = s.layout.boxes[k];
      manifest += (k ? " " : "") + std::to_string(s.layout.classes[k]) + " " +
                  shortest(b.x1) + " " + shortest(b.y1) + " " +
                  shortest(b.x2) + " " + shortest(b.y2);
    }
    manifest += "\n";
  }
  const auto path = (fs::path(dir) / "manifest.txt").string();
  write_file(path, manifest);
  return path;
}

std::vector<SceneSample> read_dataset(const std::string &manifest_path) {
  const auto base = fs::path(manifest_path).parent_path();
  std::vector<SceneSample> out;
  for (auto &e : parse_manifest(read_file(manifest_path), manifest_path)) {
    SceneSample s;
    s.image = read_ppm((base / e.image).string());
    s.graph = read_graph_document((base / e.graph).string()).graph;
    if (s.graph.nodes != e.layout.classes)
      throw FormatError(manifest_path + ": layout classes of " + e.image +
                        " do not match its graph");
    s.layout = std::move(e.layout);
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace sgti
