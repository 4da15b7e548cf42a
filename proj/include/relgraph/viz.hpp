#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "relgraph/errors.hpp"
#include "relgraph/losses.hpp"
#include "relgraph/rgm.hpp"
#include "relgraph/synth.hpp"
#include "relgraph/tensor.hpp"

namespace relgraph {

// ---------------------------------------------------------------------------
// CSV

/// %.9g: nine significant digits, locale independent.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
    if (header_.empty()) throw ConfigError("csv: empty header");
  }

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size())
      throw ShapeError("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                       std::to_string(header_.size()));
    rows_.push_back(std::move(cells));
  }

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }

  std::string str() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return os.str();
  }

  void save(const std::filesystem::path& path) const { detail::write_file(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// PGM (binary P5, 8-bit)

/// Min-max normalises `values` (row-major, height×width) to 0..255. A
/// constant image maps to 0. The source range is kept in a header comment:
///   P5\n# min <lo> max <hi>\n<width> <height>\n255\n
inline std::string encode_pgm(const std::vector<double>& values, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("pgm: empty image");
  if (values.size() != height * width)
    throw ShapeError("pgm: " + std::to_string(values.size()) + " values for " + std::to_string(height) + "x" +
                     std::to_string(width));
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double span = *hi - *lo;
  std::string out = "P5\n# min " + format_number(*lo) + " max " + format_number(*hi) + "\n" + std::to_string(width) +
                    " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + values.size());
  for (double v : values) {
    const double u = span > 0.0 ? (v - *lo) / span : 0.0;
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(u * 255.0))));
  }
  return out;
}

inline void save_pgm(const std::filesystem::path& path, const Tensor& image) {
  require_rank(image, 2, "pgm image");
  detail::write_file(path, encode_pgm(std::vector<double>(image.data().begin(), image.data().end()), image.rows(),
                                      image.cols()));
}

struct PgmImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
  std::string comment;  // first header comment, without "# "
};

inline PgmImage decode_pgm(const std::string& bytes) {
  std::istringstream is(bytes);
  std::string comment;
  auto token = [&]() -> std::string {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string line;
      std::getline(is, line);
      if (comment.empty()) comment = line.substr(std::min<std::size_t>(2, line.size()));
      is >> std::ws;
    }
    std::string t;
    is >> t;
    return t;
  };
  const std::string magic = token(), ws = token(), hs = token(), ms = token();
  std::size_t w = 0, h = 0;
  try {
    w = std::stoul(ws);
    h = std::stoul(hs);
  } catch (const std::exception&) {
    throw FormatError("pgm: bad header", 0);
  }
  if (magic != "P5" || ms != "255" || w == 0 || h == 0) throw FormatError("pgm: bad header", 0);
  is.get();
  PgmImage img{w, h, std::vector<std::uint8_t>(w * h), comment};
  const auto start = static_cast<std::size_t>(is.tellg());
  if (bytes.size() - start != w * h) throw FormatError("pgm: payload length mismatch", start);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end(), img.pixels.begin());
  return img;
}

// ---------------------------------------------------------------------------
// Relational edges

struct Edge {
  std::size_t target = 0;
  double weight = 0.0;
};

/// The k strongest outgoing edges of node i: descending weight, ties by
/// ascending index. The self edge is eligible.
inline std::vector<Edge> edge_topk(const Tensor& adjacency, std::size_t node, std::size_t k = 5) {
  require_rank(adjacency, 2, "adjacency");
  if (node >= adjacency.rows())
    throw std::out_of_range("edge_topk: node " + std::to_string(node) + " outside [0, " +
                            std::to_string(adjacency.rows()) + ")");
  std::vector<std::size_t> idx(adjacency.cols());
  std::iota(idx.begin(), idx.end(), 0);
  const auto row = adjacency.row(node);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    return row[a] != row[b] ? row[a] > row[b] : a < b;
  });
  std::vector<Edge> out;
  for (std::size_t r = 0; r < k; ++r) out.push_back({idx[r], row[idx[r]]});
  return out;
}

inline CsvTable edge_topk_table(const std::vector<Edge>& edges, std::size_t source) {
  CsvTable t({"source", "rank", "target", "weight"});
  for (std::size_t r = 0; r < edges.size(); ++r)
    t.add_row({std::to_string(source), std::to_string(r + 1), std::to_string(edges[r].target),
               format_number(edges[r].weight)});
  return t;
}

/// Writes <stem>_topk.csv and <stem>_adjacency.pgm.
inline void export_edge_topk(const RgmTrace& trace, std::size_t node, const std::filesystem::path& stem,
                             std::size_t k = 5) {
  const Tensor& a = trace.adjacency.value;
  const auto edges = edge_topk(a, node, k);
  edge_topk_table(edges, node).save(stem.string() + "_topk.csv");
  save_pgm(stem.string() + "_adjacency.pgm", a);
}

// ---------------------------------------------------------------------------
// NAU scales

struct ScaleRow {
  std::size_t identity = 0;
  Domain domain = Domain::vis;
  Tensor scales;  // N
};

inline CsvTable nau_scale_table(const std::vector<ScaleRow>& rows) {
  if (rows.empty()) throw ConfigError("nau scales: no samples");
  const std::size_t n = rows.front().scales.size();
  std::vector<std::string> header{"sample", "identity", "domain"};
  for (std::size_t i = 0; i < n; ++i) header.push_back("s" + std::to_string(i));
  CsvTable t(std::move(header));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].scales.size() != n)
      throw ShapeError("nau scales: sample " + std::to_string(r) + " has " + std::to_string(rows[r].scales.size()) +
                       " nodes, expected " + std::to_string(n));
    std::vector<std::string> cells{std::to_string(r), std::to_string(rows[r].identity),
                                   std::string(to_string(rows[r].domain))};
    for (double v : rows[r].scales.data()) cells.push_back(format_number(v));
    t.add_row(std::move(cells));
  }
  return t;
}

inline std::vector<ScaleRow> collect_scales(const std::vector<RgmTrace>& traces, const std::vector<Sample>& samples) {
  if (traces.size() != samples.size()) throw ShapeError("collect_scales: traces and samples differ in count");
  std::vector<ScaleRow> rows;
  for (std::size_t i = 0; i < traces.size(); ++i)
    rows.push_back({samples[i].identity, samples[i].domain, traces[i].scales()});
  return rows;
}

inline void export_nau_scales(const std::vector<RgmTrace>& traces, const std::vector<Sample>& samples,
                              const std::filesystem::path& path) {
  nau_scale_table(collect_scales(traces, samples)).save(path);
}

/// Mean Pearson correlation of scale rows within the same identity and
/// between different identities.
struct ScaleCorrelation {
  double within = 0.0;
  double between = 0.0;
};

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("pearson: constant row");
  return sab / std::sqrt(saa * sbb);
}

inline ScaleCorrelation scale_correlation(const std::vector<ScaleRow>& rows) {
  double w = 0.0, b = 0.0;
  std::size_t nw = 0, nb = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double r = pearson(rows[i].scales.data(), rows[j].scales.data());
      if (rows[i].identity == rows[j].identity) {
        w += r;
        ++nw;
      } else {
        b += r;
        ++nb;
      }
    }
  if (nw == 0 || nb == 0) throw DegenerateInputError("scale_correlation: need repeated and distinct identities");
  return {w / static_cast<double>(nw), b / static_cast<double>(nb)};
}

// ---------------------------------------------------------------------------
// Margin map

/// One row per grid point: cos1, cos2, region (0 band, 1 class 1, 2 class 2).
inline CsvTable margin_map_table(const MarginGrid& g) {
  CsvTable t({"cos1", "cos2", "region"});
  for (std::size_t row = 0; row < g.resolution; ++row)
    for (std::size_t col = 0; col < g.resolution; ++col)
      t.add_row({format_number(g.axis[col]), format_number(g.axis[row]),
                 std::to_string(static_cast<int>(g.at(row, col)))});
  return t;
}

/// Image rows run top to bottom from cosθ₂ = 1 to −1; band is black, class 1
/// mid gray, class 2 white.
inline std::string margin_map_pgm(const MarginGrid& g) {
  std::vector<double> v(g.resolution * g.resolution);
  for (std::size_t r = 0; r < g.resolution; ++r)
    for (std::size_t c = 0; c < g.resolution; ++c)
      v[r * g.resolution + c] = static_cast<double>(g.at(g.resolution - 1 - r, c));
  return encode_pgm(v, g.resolution, g.resolution);
}

}  // namespace relgraph
