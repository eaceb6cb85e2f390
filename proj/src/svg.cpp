#include "modwt/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace modwt {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string label_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void header(std::ostringstream& os, double w, double h) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<!-- generator: modwt " << MODWT_VERSION << " -->\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(w) << "\" height=\""
     << num(h) << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace

std::vector<Segment> contour_segments(std::span<const double> xs, std::span<const double> ys,
                                      std::span<const double> values, double level) {
  std::vector<Segment> out;
  const std::size_t nx = xs.size(), ny = ys.size();
  if (nx < 2 || ny < 2) return out;
  auto v = [&](std::size_t i, std::size_t j) { return values[i * ny + j]; };
  auto lerp = [&](double xa, double ya, double va, double xb, double yb, double vb, double& x, double& y) {
    const double t = va == vb ? 0.5 : (level - va) / (vb - va);
    x = xa + t * (xb - xa);
    y = ya + t * (yb - ya);
  };
  for (std::size_t i = 0; i + 1 < nx; ++i) {
    for (std::size_t j = 0; j + 1 < ny; ++j) {
      // corners counter-clockwise from (i, j)
      const double c[4] = {v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)};
      const double cx[4] = {xs[i], xs[i + 1], xs[i + 1], xs[i]};
      const double cy[4] = {ys[j], ys[j], ys[j + 1], ys[j + 1]};
      if (!std::all_of(c, c + 4, [](double a) { return std::isfinite(a); })) continue;
      int mask = 0;
      for (int k = 0; k < 4; ++k)
        if (c[k] >= level) mask |= 1 << k;
      if (mask == 0 || mask == 15) continue;

      // Crossing point on edge k (corner k to corner k+1).
      double ex[4], ey[4];
      bool cross[4];
      for (int k = 0; k < 4; ++k) {
        const int m = (k + 1) % 4;
        cross[k] = ((mask >> k) & 1) != ((mask >> m) & 1);
        if (cross[k]) lerp(cx[k], cy[k], c[k], cx[m], cy[m], c[m], ex[k], ey[k]);
      }
      std::vector<int> edges;
      for (int k = 0; k < 4; ++k)
        if (cross[k]) edges.push_back(k);
      if (edges.size() == 2) {
        out.push_back({ex[edges[0]], ey[edges[0]], ex[edges[1]], ey[edges[1]]});
        continue;
      }
      // Saddle: the centre value decides which corners connect.
      const double centre = (c[0] + c[1] + c[2] + c[3]) / 4.0;
      const bool corner0_high = (mask & 1) != 0;
      if ((centre >= level) == corner0_high) {
        out.push_back({ex[0], ey[0], ex[1], ey[1]});
        out.push_back({ex[2], ey[2], ex[3], ey[3]});
      } else {
        out.push_back({ex[3], ey[3], ex[0], ey[0]});
        out.push_back({ex[1], ey[1], ex[2], ey[2]});
      }
    }
  }
  return out;
}

std::vector<double> nice_levels(double lo, double hi, int target) {
  std::vector<double> out;
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) return out;
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  for (double k = std::floor(lo / step) + 1; k * step < hi; ++k) {
    const double v = k * step;
    out.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  }
  return out;
}

std::string love_plot_svg(const BalanceTable& table, const std::string& stratum) {
  struct Pair {
    std::string label;
    double pre = 0.0, post = 0.0;
  };
  std::vector<Pair> pairs;
  std::map<std::string, std::size_t> index;
  for (const auto& r : table.rows) {
    if (r.stratum != stratum) continue;
    const std::string label = r.level.empty() || r.level == "–" ? r.covariate : r.covariate + ": " + r.level;
    auto [it, added] = index.emplace(label, pairs.size());
    if (added) pairs.push_back({label});
    (r.phase == BalancePhase::pre ? pairs[it->second].pre : pairs[it->second].post) = std::abs(r.smd);
  }

  const double left = 170, right = 30, top = 40, row_h = 22, axis_h = 40;
  const double plot_w = 360, width = left + plot_w + right;
  const double height = top + row_h * static_cast<double>(std::max<std::size_t>(pairs.size(), 1)) + axis_h;
  double xmax = 0.2;
  for (const auto& p : pairs) xmax = std::max({xmax, p.pre, p.post});
  xmax = std::ceil(xmax * 10.0) / 10.0;
  auto sx = [&](double v) { return left + plot_w * v / xmax; };

  std::ostringstream os;
  header(os, width, height);
  os << "<text x=\"" << num(width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(stratum) << ": |SMD| before and after weighting</text>\n";
  const double bottom = height - axis_h;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double y = top + row_h * static_cast<double>(k);
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + row_h / 2 + 4)
       << "\" text-anchor=\"end\">" << escape(pairs[k].label) << "</text>\n";
    os << "<rect class=\"bar pre\" x=\"" << num(left) << "\" y=\"" << num(y + 3) << "\" width=\""
       << num(sx(pairs[k].pre) - left) << "\" height=\"7\" fill=\"#b0b0b0\"/>\n";
    os << "<rect class=\"bar post\" x=\"" << num(left) << "\" y=\"" << num(y + 11) << "\" width=\""
       << num(sx(pairs[k].post) - left) << "\" height=\"7\" fill=\"#1f4e79\"/>\n";
  }
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\""
     << num(bottom) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(left + plot_w) << "\" y2=\""
     << num(bottom) << "\" stroke=\"black\"/>\n";
  for (double v = 0.0; v <= xmax + 1e-9; v += 0.1) {
    os << "<text x=\"" << num(sx(v)) << "\" y=\"" << num(bottom + 14) << "\" text-anchor=\"middle\">"
       << num(v) << "</text>\n";
  }
  os << "<line class=\"reference\" x1=\"" << num(sx(kBalanceThreshold)) << "\" y1=\"" << num(top) << "\" x2=\""
     << num(sx(kBalanceThreshold)) << "\" y2=\"" << num(bottom) << "\" stroke=\"#c00000\" stroke-dasharray=\"4 3\"/>\n";
  os << "<text x=\"" << num(left + plot_w / 2) << "\" y=\"" << num(height - 8)
     << "\" text-anchor=\"middle\">absolute standardized mean difference</text>\n";
  os << "<rect x=\"" << num(width - 120) << "\" y=\"28\" width=\"8\" height=\"8\" fill=\"#b0b0b0\"/>"
     << "<text x=\"" << num(width - 108) << "\" y=\"36\">unweighted</text>\n";
  os << "<rect x=\"" << num(width - 120) << "\" y=\"12\" width=\"8\" height=\"8\" fill=\"#1f4e79\"/>"
     << "<text x=\"" << num(width - 108) << "\" y=\"20\">weighted</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string sensitivity_plot_svg(const SensitivityGrid& grid, std::span<const double> p_levels) {
  const double left = 60, right = 30, top = 40, bottom = 50, plot_w = 480, plot_h = 320;
  const double width = left + plot_w + right, height = top + plot_h + bottom;
  const auto& xs = grid.es_grid;
  const auto& ys = grid.rho_grid;
  const double x_lo = xs.front(), x_hi = xs.back();
  const double y_lo = ys.front(), y_hi = std::max(ys.back(), ys.front() + 1e-9);
  auto sx = [&](double v) { return left + plot_w * (x_hi > x_lo ? (v - x_lo) / (x_hi - x_lo) : 0.5); };
  auto sy = [&](double v) { return top + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo)); };

  std::vector<double> est(grid.cells.size()), pv(grid.cells.size());
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t k = 0; k < grid.cells.size(); ++k) {
    est[k] = grid.cells[k].mean_estimate;
    pv[k] = grid.cells[k].mean_p;
    if (std::isfinite(est[k])) {
      lo = std::min(lo, est[k]);
      hi = std::max(hi, est[k]);
    }
  }

  std::ostringstream os;
  header(os, width, height);
  os << "<text x=\"" << num(width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(grid.stratum) << ": omitted-variable sensitivity</text>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(plot_w) << "\" height=\""
     << num(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n";

  auto draw = [&](std::span<const double> values, double level, const char* cls, const char* style) {
    const auto segs = contour_segments(xs, ys, values, level);
    if (segs.empty()) return;
    os << "<path class=\"" << cls << "\" fill=\"none\" " << style << " d=\"";
    for (const auto& s : segs)
      os << 'M' << num(sx(s.x0)) << ',' << num(sy(s.y0)) << 'L' << num(sx(s.x1)) << ',' << num(sy(s.y1));
    os << "\"/>\n";
    // label at the segment nearest the top edge
    const auto& s = *std::max_element(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
      return std::max(a.y0, a.y1) < std::max(b.y0, b.y1);
    });
    os << "<text class=\"" << cls << "-label\" x=\"" << num(sx((s.x0 + s.x1) / 2)) << "\" y=\""
       << num(sy((s.y0 + s.y1) / 2) - 3) << "\" font-size=\"9\">" << label_value(level) << "</text>\n";
  };
  for (double level : nice_levels(lo, hi)) draw(est, level, "estimate", "stroke=\"#1f4e79\"");
  for (double level : p_levels) draw(pv, level, "pvalue", "stroke=\"#c00000\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"");

  for (const auto& b : grid.benchmarks) {
    if (b.es < x_lo || b.es > x_hi || b.rho < y_lo || b.rho > y_hi) continue;
    os << "<circle class=\"benchmark\" cx=\"" << num(sx(b.es)) << "\" cy=\"" << num(sy(b.rho))
       << "\" r=\"3\" fill=\"black\"><title>" << escape(b.label.text()) << "</title></circle>\n";
  }

  for (double v : nice_levels(x_lo - 1e-9, x_hi + 1e-9, 8))
    os << "<text x=\"" << num(sx(v)) << "\" y=\"" << num(top + plot_h + 14) << "\" text-anchor=\"middle\">"
       << label_value(v) << "</text>\n";
  for (double v : nice_levels(y_lo - 1e-9, y_hi + 1e-9, 6))
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(v) + 4) << "\" text-anchor=\"end\">"
       << label_value(v) << "</text>\n";
  os << "<text x=\"" << num(left + plot_w / 2) << "\" y=\"" << num(height - 12)
     << "\" text-anchor=\"middle\">effect size of the omitted variable on treatment</text>\n";
  os << "<text transform=\"translate(16," << num(top + plot_h / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">correlation with the outcome</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace modwt
