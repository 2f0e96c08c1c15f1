#include "restgate/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "restgate/errors.hpp"
#include "restgate/io.hpp"

namespace restgate::plot {

namespace {

constexpr double kWidth = 720.0, kHeight = 420.0;
constexpr double kLeft = 70.0, kRight = 20.0, kTop = 40.0, kBottom = 50.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v, const char* fmt = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo, hi;
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.04 * (hi - lo);
  return {lo - pad, hi + pad};
}

void require_rows(const Table& t) {
  if (t.rows.empty() || t.columns.empty()) throw IoError("plot: no data to write");
  for (const auto& r : t.rows)
    if (r.size() != t.columns.size()) throw IoError("plot: ragged table row");
}

}  // namespace

std::string to_csv(const Table& t) {
  require_rows(t);
  std::string out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + t.columns[c];
  out += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) out += (c ? "," : "") + num(r[c]);
    out += '\n';
  }
  return out;
}

std::string to_svg(PlotKind kind, const Table& t) {
  require_rows(t);
  const bool scatter = kind == PlotKind::Scatter;
  const std::size_t ny = scatter ? 1 : t.columns.size() - 1;
  if (t.columns.size() < 2) throw IoError("plot: need at least two columns");

  auto yval = [&](const std::vector<double>& r, std::size_t c) {
    double v = r[c];
    if (kind == PlotKind::FilterResponse) v = std::max(v, -80.0);
    return v;
  };

  double xlo = t.rows[0][0], xhi = xlo, ylo = yval(t.rows[0], 1), yhi = ylo;
  for (const auto& r : t.rows) {
    xlo = std::min(xlo, r[0]);
    xhi = std::max(xhi, r[0]);
    for (std::size_t c = 1; c <= ny; ++c) {
      ylo = std::min(ylo, yval(r, c));
      yhi = std::max(yhi, yval(r, c));
    }
  }
  const Range xr = padded(xlo, xhi), yr = padded(ylo, yhi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << escape(t.title) << "</text>\n";
  os << "<g stroke=\"black\" stroke-width=\"1\">"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph << "\"/>"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph << "\"/></g>\n";

  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= 5; ++k) {
    const double fx = xr.lo + (xr.hi - xr.lo) * k / 5.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * k / 5.0;
    os << "<text x=\"" << num(px(fx), "%.2f") << "\" y=\"" << num(kTop + ph + 16, "%.2f")
       << "\" text-anchor=\"middle\">" << num(fx, "%.4g") << "</text>";
    os << "<text x=\"" << num(kLeft - 6, "%.2f") << "\" y=\"" << num(py(fy) + 4, "%.2f")
       << "\" text-anchor=\"end\">" << num(fy, "%.4g") << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
     << escape(t.columns[0]) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kTop + ph / 2 << ")\">" << escape(t.columns[1]) << "</text>\n</g>\n";

  if (scatter) {
    const bool labelled = t.columns.size() >= 3;
    os << "<g stroke=\"none\" fill-opacity=\"0.8\">\n";
    for (const auto& r : t.rows) {
      const auto label = labelled ? static_cast<std::size_t>(std::max(0.0, r[2])) : 0;
      os << "<circle cx=\"" << num(px(r[0]), "%.2f") << "\" cy=\"" << num(py(r[1]), "%.2f") << "\" r=\"3\" fill=\""
         << kPalette[label % std::size(kPalette)] << "\"/>\n";
    }
    os << "</g>\n";
  } else {
    for (std::size_t c = 1; c <= ny; ++c) {
      os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[(c - 1) % std::size(kPalette)]
         << "\" points=\"";
      for (std::size_t i = 0; i < t.rows.size(); ++i)
        os << (i ? " " : "") << num(px(t.rows[i][0]), "%.2f") << ',' << num(py(yval(t.rows[i], c)), "%.2f");
      os << "\"/>\n";
    }
    if (ny > 1) {
      os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
      for (std::size_t c = 1; c <= ny; ++c)
        os << "<text x=\"" << kLeft + pw - 4 << "\" y=\"" << kTop + 14 * c << "\" text-anchor=\"end\" fill=\""
           << kPalette[(c - 1) % std::size(kPalette)] << "\">" << escape(t.columns[c]) << "</text>\n";
      os << "</g>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void emit_plot(PlotKind kind, const Table& table, const std::string& svg_path, const std::string& csv_path) {
  atomic_write_all({{csv_path, to_csv(table)}, {svg_path, to_svg(kind, table)}});
}

}  // namespace restgate::plot
