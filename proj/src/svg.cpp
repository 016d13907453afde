#include "hbt/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hbt/errors.hpp"

namespace hbt {

namespace {

constexpr double kW = 720, kH = 480, kL = 70, kR = 30, kT = 40, kB = 55;

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
    case '<': o += "&lt;"; break;
    case '>': o += "&gt;"; break;
    case '&': o += "&amp;"; break;
    case '"': o += "&quot;"; break;
    default: o += c;
    }
  }
  return o;
}

std::string num(double v, int prec = 4) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*g", prec, v);
  return b;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); }
  double py(double y) const { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); }
};

void header(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\"" << kH - kT - kB
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 4.0, y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    o << "<text x=\"" << f.px(x) << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"middle\">" << num(x) << "</text>\n";
    o << "<text x=\"" << kL - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
  }
  o << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << esc(xlabel)
    << "</text>\n";
  o << "<text transform=\"translate(16," << (kT + kH - kB) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << esc(ylabel) << "</text>\n";
}

// blue - white - red
std::string diverging(double v, double scale) {
  const double u = std::clamp(v / scale, -1.0, 1.0);
  int r = 255, g = 255, b = 255;
  if (u > 0) {
    g = b = static_cast<int>(255 * (1 - u));
  } else {
    r = g = static_cast<int>(255 * (1 + u));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

} // namespace

std::string svg_matrix(const ContrastMatrix& m, const std::string& title) {
  std::ostringstream o;
  header(o, title);
  const int R = m.rows(), C = m.cols();
  double scale = 0.0;
  for (const auto& c : m.cells)
    if (c && c->usable()) scale = std::max(scale, std::abs(c->contrast));
  if (scale <= 0.0) scale = 1.0;
  const double side = std::min(kW - kL - 140, kH - kT - kB);
  const double cw = R > 0 && C > 0 ? side / std::max(R, C) : side;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) {
      const auto* f = m.at(i, j);
      const std::string fill = f && f->usable() ? diverging(f->contrast, scale) : "#bbbbbb";
      o << "<rect x=\"" << kL + j * cw << "\" y=\"" << kT + (R - 1 - i) * cw << "\" width=\"" << cw + 0.05
        << "\" height=\"" << cw + 0.05 << "\" fill=\"" << fill << "\"";
      if (f) o << "><title>A" << f->pixel_a << " B" << f->pixel_b << " C=" << num(f->contrast) << "</title></rect>\n";
      else o << "/>\n";
    }
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << cw * C << "\" height=\"" << cw * R
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (R > 0 && C > 0) {
    o << "<text x=\"" << kL << "\" y=\"" << kT + cw * R + 16 << "\">" << num(m.lambda_b.front(), 6) << " nm</text>\n";
    o << "<text x=\"" << kL + cw * C << "\" y=\"" << kT + cw * R + 16 << "\" text-anchor=\"end\">"
      << num(m.lambda_b.back(), 6) << " nm</text>\n";
    o << "<text x=\"" << kL + cw * C / 2 << "\" y=\"" << kT + cw * R + 34 << "\" text-anchor=\"middle\">arm B bin</text>\n";
    o << "<text transform=\"translate(" << kL - 8 << "," << kT + cw * R / 2
      << ") rotate(-90)\" text-anchor=\"middle\">arm A bin</text>\n";
  }
  // colour bar
  const double bx = kL + side + 30;
  for (int k = 0; k < 50; ++k) {
    const double v = scale * (1 - 2.0 * k / 49.0);
    o << "<rect x=\"" << bx << "\" y=\"" << kT + k * side / 50 << "\" width=\"18\" height=\"" << side / 50 + 0.5
      << "\" fill=\"" << diverging(v, scale) << "\"/>\n";
  }
  o << "<text x=\"" << bx + 24 << "\" y=\"" << kT + 10 << "\">" << num(scale, 3) << "</text>\n";
  o << "<text x=\"" << bx + 24 << "\" y=\"" << kT + side / 2 + 4 << "\">0</text>\n";
  o << "<text x=\"" << bx + 24 << "\" y=\"" << kT + side << "\">" << num(-scale, 3) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

std::string svg_profiles(const std::vector<ProfileSeries>& series, const std::string& title) {
  std::ostringstream o;
  header(o, title);
  Frame f{0, 1, 0, 0};
  bool any = false;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      if (!p.valid) continue;
      f.x1 = std::max(f.x1, static_cast<double>(p.bin + 1));
      f.y0 = std::min(f.y0, p.contrast - p.contrast_err);
      f.y1 = std::max(f.y1, p.contrast + p.contrast_err);
      any = true;
    }
  if (!any) f.y1 = 1;
  const double pad = 0.05 * (f.y1 - f.y0);
  f.y0 -= pad;
  f.y1 += pad;
  f.x0 = -1;
  axes(o, f, "arm-A bin", "contrast");
  o << "<line x1=\"" << f.px(f.x0) << "\" x2=\"" << f.px(f.x1) << "\" y1=\"" << f.py(0) << "\" y2=\"" << f.py(0)
    << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* col = kPalette[k % 6];
    const double dx = (static_cast<double>(k) - (series.size() - 1) / 2.0) * 0.15;
    for (const auto& p : series[k].points) {
      if (!p.valid) continue;
      const double x = f.px(p.bin + dx);
      o << "<line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << f.py(p.contrast - p.contrast_err) << "\" y2=\""
        << f.py(p.contrast + p.contrast_err) << "\" stroke=\"" << col << "\"/>"
        << "<circle cx=\"" << x << "\" cy=\"" << f.py(p.contrast) << "\" r=\"2.5\" fill=\"" << col << "\"/>\n";
    }
    o << "<text x=\"" << kW - kR - 8 << "\" y=\"" << kT + 16 + 16 * k << "\" text-anchor=\"end\" fill=\"" << col
      << "\">" << esc(series[k].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_histogram(const NormalizedHistogram& h, const PeakFitResult* fit, const std::string& title) {
  std::ostringstream o;
  header(o, title);
  if (h.x.empty()) {
    o << "<text x=\"" << kW / 2 << "\" y=\"" << kH / 2 << "\" text-anchor=\"middle\">no data</text></svg>\n";
    return o.str();
  }
  Frame f{h.x.front(), h.x.back(), 1e300, -1e300};
  for (double y : h.y) {
    f.y0 = std::min(f.y0, y);
    f.y1 = std::max(f.y1, y);
  }
  if (!(f.y1 > f.y0)) {
    f.y0 -= 0.01;
    f.y1 += 0.01;
  }
  if (f.x1 <= f.x0) f.x1 = f.x0 + 1;
  axes(o, f, "time difference (ps)", "normalized coincidences");
  o << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"0.8\" points=\"";
  for (std::size_t i = 0; i < h.x.size(); ++i) o << f.px(h.x[i]) << ',' << f.py(h.y[i]) << ' ';
  o << "\"/>\n";
  if (fit && fit->status != FitStatus::Failed) {
    o << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"";
    const int n = 600;
    for (int i = 0; i <= n; ++i) {
      const double x = f.x0 + (f.x1 - f.x0) * i / n;
      const double d = (x - fit->mu_ps) / fit->sigma_ps;
      double y = 1.0 + fit->contrast * std::exp(-0.5 * d * d);
      if (fit->sine_enabled && fit->sine_period_ps > 0)
        y += fit->sine_amplitude * std::sin(2 * kPi * x / fit->sine_period_ps + fit->sine_phase);
      o << f.px(x) << ',' << f.py(std::clamp(y, f.y0, f.y1)) << ' ';
    }
    o << "\"/>\n";
    o << "<text x=\"" << kW - kR - 8 << "\" y=\"" << kT + 16 << "\" text-anchor=\"end\" fill=\"#d62728\">C = "
      << num(fit->contrast * 100, 3) << " +- " << num(fit->contrast_err * 100, 2) << " %, sigma = "
      << num(fit->sigma_ps, 3) << " ps, mu = " << num(fit->mu_ps, 4) << " ps</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

} // namespace hbt
