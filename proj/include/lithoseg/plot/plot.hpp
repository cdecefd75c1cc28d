#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lithoseg/core/tensor.hpp"
#include "lithoseg/data/png_io.hpp"

namespace lithoseg {

// ---------------------------------------------------------------------------
// Raster canvas with a 5x7 bitmap font
// ---------------------------------------------------------------------------

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

// Categorical palette for plot series.
inline Rgb plot_color(size_t i) {
  static const Rgb p[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                          {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};
  return p[i % (sizeof(p) / sizeof(p[0]))];
}

namespace detail {

// Glyphs as 7 rows of 5 cells; text renders lowercase letters with the same
// shapes as uppercase.
inline const std::map<char, std::array<uint8_t, 7>>& font5x7() {
  static const std::map<char, std::array<uint8_t, 7>> table = [] {
    std::map<char, std::array<uint8_t, 7>> t;
    auto g = [&t](char ch, const char* r0, const char* r1, const char* r2, const char* r3,
                  const char* r4, const char* r5, const char* r6) {
      std::array<uint8_t, 7> rows{};
      const char* rs[7] = {r0, r1, r2, r3, r4, r5, r6};
      for (int y = 0; y < 7; ++y) {
        uint8_t bits = 0;
        for (int x = 0; x < 5; ++x)
          if (rs[y][x] == '1') bits = uint8_t(bits | (1u << x));
        rows[size_t(y)] = bits;
      }
      t[ch] = rows;
    };
    g(' ', "00000", "00000", "00000", "00000", "00000", "00000", "00000");
    g('0', "01110", "10001", "10011", "10101", "11001", "10001", "01110");
    g('1', "00100", "01100", "00100", "00100", "00100", "00100", "01110");
    g('2', "01110", "10001", "00001", "00010", "00100", "01000", "11111");
    g('3', "11111", "00010", "00100", "00010", "00001", "10001", "01110");
    g('4', "00010", "00110", "01010", "10010", "11111", "00010", "00010");
    g('5', "11111", "10000", "11110", "00001", "00001", "10001", "01110");
    g('6', "00110", "01000", "10000", "11110", "10001", "10001", "01110");
    g('7', "11111", "00001", "00010", "00100", "01000", "01000", "01000");
    g('8', "01110", "10001", "10001", "01110", "10001", "10001", "01110");
    g('9', "01110", "10001", "10001", "01111", "00001", "00010", "01100");
    g('a', "01110", "10001", "10001", "11111", "10001", "10001", "10001");
    g('b', "11110", "10001", "10001", "11110", "10001", "10001", "11110");
    g('c', "01110", "10001", "10000", "10000", "10000", "10001", "01110");
    g('d', "11100", "10010", "10001", "10001", "10001", "10010", "11100");
    g('e', "11111", "10000", "10000", "11110", "10000", "10000", "11111");
    g('f', "11111", "10000", "10000", "11110", "10000", "10000", "10000");
    g('g', "01110", "10001", "10000", "10111", "10001", "10001", "01111");
    g('h', "10001", "10001", "10001", "11111", "10001", "10001", "10001");
    g('i', "01110", "00100", "00100", "00100", "00100", "00100", "01110");
    g('j', "00111", "00010", "00010", "00010", "00010", "10010", "01100");
    g('k', "10001", "10010", "10100", "11000", "10100", "10010", "10001");
    g('l', "10000", "10000", "10000", "10000", "10000", "10000", "11111");
    g('m', "10001", "11011", "10101", "10101", "10001", "10001", "10001");
    g('n', "10001", "11001", "10101", "10011", "10001", "10001", "10001");
    g('o', "01110", "10001", "10001", "10001", "10001", "10001", "01110");
    g('p', "11110", "10001", "10001", "11110", "10000", "10000", "10000");
    g('q', "01110", "10001", "10001", "10001", "10101", "10010", "01101");
    g('r', "11110", "10001", "10001", "11110", "10100", "10010", "10001");
    g('s', "01111", "10000", "10000", "01110", "00001", "00001", "11110");
    g('t', "11111", "00100", "00100", "00100", "00100", "00100", "00100");
    g('u', "10001", "10001", "10001", "10001", "10001", "10001", "01110");
    g('v', "10001", "10001", "10001", "10001", "10001", "01010", "00100");
    g('w', "10001", "10001", "10001", "10101", "10101", "10101", "01010");
    g('x', "10001", "01010", "00100", "00100", "00100", "01010", "10001");
    g('y', "10001", "01010", "00100", "00100", "00100", "00100", "00100");
    g('z', "11111", "00001", "00010", "00100", "01000", "10000", "11111");
    g('.', "00000", "00000", "00000", "00000", "00000", "01100", "01100");
    g(',', "00000", "00000", "00000", "00000", "00100", "00100", "01000");
    g('-', "00000", "00000", "00000", "11111", "00000", "00000", "00000");
    g('_', "00000", "00000", "00000", "00000", "00000", "00000", "11111");
    g('/', "00001", "00010", "00010", "00100", "01000", "01000", "10000");
    g('%', "11001", "11010", "00010", "00100", "01000", "01011", "10011");
    g(':', "00000", "01100", "01100", "00000", "01100", "01100", "00000");
    g('(', "00010", "00100", "01000", "01000", "01000", "00100", "00010");
    g(')', "01000", "00100", "00010", "00010", "00010", "00100", "01000");
    g('=', "00000", "00000", "11111", "00000", "11111", "00000", "00000");
    g('+', "00000", "00100", "00100", "11111", "00100", "00100", "00000");
    return t;
  }();
  return table;
}

}  // namespace detail

struct Canvas {
  RawImage img;

  Canvas(int w, int h, Rgb bg = {255, 255, 255}) {
    check(w > 0 && h > 0, "canvas: size must be positive");
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.data.resize(size_t(w) * size_t(h) * 3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) set(x, y, bg);
  }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    size_t i = (size_t(y) * size_t(img.width) + size_t(x)) * 3;
    img.data[i] = c.r;
    img.data[i + 1] = c.g;
    img.data[i + 2] = c.b;
  }
  Rgb get(int x, int y) const {
    check(x >= 0 && y >= 0 && x < img.width && y < img.height, "canvas: pixel out of range");
    size_t i = (size_t(y) * size_t(img.width) + size_t(x)) * 3;
    return {img.data[i], img.data[i + 1], img.data[i + 2]};
  }

  void fill_rect(int x0, int y0, int w, int h, Rgb c) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) set(x, y, c);
  }
  void rect(int x0, int y0, int w, int h, Rgb c) {
    for (int x = x0; x < x0 + w; ++x) {
      set(x, y0, c);
      set(x, y0 + h - 1, c);
    }
    for (int y = y0; y < y0 + h; ++y) {
      set(x0, y, c);
      set(x0 + w - 1, y, c);
    }
  }
  void line(int x0, int y0, int x1, int y1, Rgb c) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(int x, int y, const std::string& s, Rgb c, int scale = 1) {
    const auto& font = detail::font5x7();
    int cx = x;
    for (char ch : s) {
      char key = ch;
      if (key >= 'A' && key <= 'Z') key = char(key - 'A' + 'a');
      auto it = font.find(key);
      if (it == font.end()) it = font.find(' ');
      for (int gy = 0; gy < 7; ++gy)
        for (int gx = 0; gx < 5; ++gx)
          if (it->second[size_t(gy)] & (1u << gx))
            fill_rect(cx + gx * scale, y + gy * scale, scale, scale, c);
      cx += 6 * scale;
    }
  }
  static int text_width(const std::string& s, int scale = 1) {
    return int(s.size()) * 6 * scale - (s.empty() ? 0 : scale);
  }

  void save(const std::string& path) const { write_png(path, img); }
};

// ---------------------------------------------------------------------------
// Minimal CSV reading (comma-separated, no quoting — matches our emitters)
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return int(i);
    throw std::invalid_argument("csv: missing column '" + name + "'");
  }
  std::vector<double> numbers(const std::string& name) const {
    int c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      if (size_t(c) >= r.size() || r[size_t(c)].empty()) continue;
      out.push_back(std::stod(r[size_t(c)]));
    }
    return out;
  }
};

inline CsvTable read_csv_text(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.push_back("");
    return cells;
  };
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty())
      t.header = split(line);
    else
      t.rows.push_back(split(line));
  }
  check(!t.header.empty(), "csv: empty document");
  return t;
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

struct BoxStats {
  double lo = 0, q1 = 0, med = 0, q3 = 0, hi = 0;
};

// Quantiles by linear interpolation between order statistics.
inline BoxStats box_stats(std::vector<double> v) {
  check(!v.empty(), "box_stats: empty sample");
  std::sort(v.begin(), v.end());
  auto quantile = [&v](double p) {
    double idx = p * double(v.size() - 1);
    size_t i = size_t(idx);
    double frac = idx - double(i);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + frac * (v[i + 1] - v[i]);
  };
  return {v.front(), quantile(0.25), quantile(0.5), quantile(0.75), v.back()};
}

// Splits the series into `windows` contiguous slices, averages each, and
// reports the fraction of consecutive window pairs whose mean decreased.
struct TrendSummary {
  int windows = 0;
  double fraction_decreasing = 0;
  bool decreasing_90pct = false;
};

inline TrendSummary monotone_trend(const std::vector<double>& series, int windows) {
  check(!series.empty(), "monotone_trend: empty series");
  check(windows >= 1, "monotone_trend: need at least one window");
  windows = std::min<int>(windows, int(series.size()));
  std::vector<double> means(size_t(windows), 0.0);
  const size_t n = series.size();
  for (int w = 0; w < windows; ++w) {
    size_t a = n * size_t(w) / size_t(windows);
    size_t b = n * size_t(w + 1) / size_t(windows);
    double acc = 0;
    for (size_t i = a; i < b; ++i) acc += series[i];
    means[size_t(w)] = acc / double(b - a);
  }
  TrendSummary s;
  s.windows = windows;
  int pairs = windows - 1, down = 0;
  for (int w = 0; w + 1 < windows; ++w) down += means[size_t(w + 1)] < means[size_t(w)];
  s.fraction_decreasing = pairs > 0 ? double(down) / double(pairs) : 1.0;
  s.decreasing_90pct = s.fraction_decreasing >= 0.9;
  return s;
}

// ---------------------------------------------------------------------------
// Chart renderers
// ---------------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> y;
};

namespace detail {

struct Frame {
  int x0, y0, x1, y1;  // plot area corners (y grows downward)
  double lo, hi;       // value range mapped onto [y1, y0]
  int map_y(double v) const {
    double t = (v - lo) / (hi - lo);
    return y1 - int(std::lround(t * double(y1 - y0)));
  }
};

inline Frame draw_frame(Canvas& cv, const std::string& title, double lo, double hi) {
  if (!(hi > lo)) {
    double pad = std::abs(lo) > 1e-12 ? std::abs(lo) * 0.1 : 1.0;
    lo -= pad;
    hi += pad;
  } else {
    double pad = (hi - lo) * 0.05;
    lo -= pad;
    hi += pad;
  }
  Frame f{56, 22, cv.img.width - 10, cv.img.height - 22, lo, hi};
  Rgb axis{60, 60, 60}, grid{225, 225, 225}, ink{20, 20, 20};
  cv.text(8, 6, title, ink);
  for (int t = 0; t <= 4; ++t) {
    double v = lo + (hi - lo) * t / 4.0;
    int y = f.map_y(v);
    cv.line(f.x0, y, f.x1, y, grid);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    cv.text(4, y - 3, buf, axis);
  }
  cv.line(f.x0, f.y0, f.x0, f.y1, axis);
  cv.line(f.x0, f.y1, f.x1, f.y1, axis);
  return f;
}

}  // namespace detail

// Polyline chart of one or more series over their index.
inline void plot_lines(const std::vector<Series>& series, const std::string& title,
                       const std::string& path, int width = 640, int height = 400) {
  check(!series.empty(), "plot_lines: no series");
  size_t n = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  check(n > 0, "plot_lines: all series empty");
  Canvas cv(width, height);
  auto f = detail::draw_frame(cv, title, lo, hi);

  auto map_x = [&f, n](size_t i) {
    if (n == 1) return (f.x0 + f.x1) / 2;
    return f.x0 + int(std::lround(double(i) * double(f.x1 - f.x0) / double(n - 1)));
  };
  for (size_t si = 0; si < series.size(); ++si) {
    Rgb c = plot_color(si);
    const auto& y = series[si].y;
    for (size_t i = 0; i + 1 < y.size(); ++i)
      cv.line(map_x(i), f.map_y(y[i]), map_x(i + 1), f.map_y(y[i + 1]), c);
    if (y.size() == 1) cv.fill_rect(map_x(0) - 1, f.map_y(y[0]) - 1, 3, 3, c);
    int ly = f.y0 + 4 + int(si) * 11;
    cv.fill_rect(f.x1 - 104, ly + 1, 8, 5, c);
    cv.text(f.x1 - 92, ly, series[si].name, {20, 20, 20});
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%zu", n - 1);
  cv.text(f.x1 - Canvas::text_width(buf), f.y1 + 6, buf, {60, 60, 60});
  cv.text(f.x0, f.y1 + 6, "0", {60, 60, 60});
  cv.save(path);
}

// Box-and-whisker chart, one box per named group.
inline void plot_boxes(const std::vector<std::pair<std::string, std::vector<double>>>& groups,
                       const std::string& title, const std::string& path, int width = 480,
                       int height = 400) {
  check(!groups.empty(), "plot_boxes: no groups");
  double lo = 1e300, hi = -1e300;
  std::vector<BoxStats> stats;
  for (const auto& [name, vals] : groups) {
    BoxStats s = box_stats(vals);
    stats.push_back(s);
    lo = std::min(lo, s.lo);
    hi = std::max(hi, s.hi);
  }
  Canvas cv(width, height);
  auto f = detail::draw_frame(cv, title, lo, hi);
  const int k = int(groups.size());
  const int slot = (f.x1 - f.x0) / k;
  for (int i = 0; i < k; ++i) {
    Rgb c = plot_color(size_t(i));
    const BoxStats& s = stats[size_t(i)];
    int cx = f.x0 + slot * i + slot / 2;
    int half = std::max(8, slot * 3 / 10);
    cv.line(cx, f.map_y(s.lo), cx, f.map_y(s.q1), c);
    cv.line(cx, f.map_y(s.q3), cx, f.map_y(s.hi), c);
    cv.line(cx - half / 2, f.map_y(s.lo), cx + half / 2, f.map_y(s.lo), c);
    cv.line(cx - half / 2, f.map_y(s.hi), cx + half / 2, f.map_y(s.hi), c);
    cv.rect(cx - half, f.map_y(s.q3), 2 * half, std::max(1, f.map_y(s.q1) - f.map_y(s.q3)), c);
    cv.line(cx - half, f.map_y(s.med), cx + half - 1, f.map_y(s.med), {20, 20, 20});
    const std::string& name = groups[size_t(i)].first;
    cv.text(cx - Canvas::text_width(name) / 2, f.y1 + 6, name, {20, 20, 20});
  }
  cv.save(path);
}

// Bar chart of labeled values (used for per-class score summaries).
inline void plot_bars(const std::vector<std::pair<std::string, double>>& bars,
                      const std::string& title, const std::string& path, int width = 480,
                      int height = 400) {
  check(!bars.empty(), "plot_bars: no bars");
  double lo = 0, hi = 0;
  for (const auto& [name, v] : bars) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Canvas cv(width, height);
  auto f = detail::draw_frame(cv, title, lo, hi);
  const int k = int(bars.size());
  const int slot = (f.x1 - f.x0) / k;
  for (int i = 0; i < k; ++i) {
    const auto& [name, v] = bars[size_t(i)];
    Rgb c = plot_color(size_t(i));
    int cx = f.x0 + slot * i + slot / 2;
    int half = std::max(6, slot * 3 / 10);
    int y0 = f.map_y(std::max(0.0, v)), y1 = f.map_y(std::min(0.0, v));
    cv.fill_rect(cx - half, y0, 2 * half, std::max(1, y1 - y0), c);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    cv.text(cx - Canvas::text_width(buf) / 2, y0 - 10, buf, {20, 20, 20});
    cv.text(cx - Canvas::text_width(name) / 2, f.y1 + 6, name, {20, 20, 20});
  }
  cv.save(path);
}

// ---------------------------------------------------------------------------
// High-level emitters over the pipeline's CSV artifacts
// ---------------------------------------------------------------------------

// losses.csv -> loss_curves.png + per-series monotone-trend summary CSV text.
inline std::string plot_losses_csv(const std::string& csv_text, const std::string& png_path,
                                   int windows = 15) {
  CsvTable t = read_csv_text(csv_text);
  std::vector<Series> series;
  for (const char* name : {"total", "focal", "boundary", "similarity", "smoothness"})
    series.push_back({name, t.numbers(name)});
  plot_lines(series, "training loss per step", png_path);
  std::ostringstream os;
  os << "series,windows,fraction_decreasing,decreasing_90pct\n";
  for (const auto& s : series) {
    TrendSummary tr = monotone_trend(s.y, windows);
    char row[128];
    std::snprintf(row, sizeof row, "%s,%d,%.6f,%d\n", s.name.c_str(), tr.windows,
                  tr.fraction_decreasing, int(tr.decreasing_90pct));
    os << row;
  }
  return os.str();
}

// val_metrics.csv -> per-epoch validation score curves.
inline void plot_val_metrics_csv(const std::string& csv_text, const std::string& png_path) {
  CsvTable t = read_csv_text(csv_text);
  std::vector<Series> series;
  for (const char* name : {"stone_dsc", "stone_ji", "laser_dsc", "laser_ji", "mean"})
    series.push_back({name, t.numbers(name)});
  plot_lines(series, "validation scores per epoch", png_path);
}

// dataset manifest -> region size distribution box plot.
inline void plot_manifest_boxes_csv(const std::string& csv_text, const std::string& png_path) {
  CsvTable t = read_csv_text(csv_text);
  plot_boxes({{"stone", t.numbers("stone_area")}, {"laser", t.numbers("laser_area")}},
             "region area fraction distribution", png_path);
}

// metrics report csv (image,class,...) -> summary bars of the per-class means.
inline void plot_metrics_csv(const std::string& csv_text, const std::string& png_path) {
  CsvTable t = read_csv_text(csv_text);
  int icls = t.column("class"), idsc = t.column("dsc"), iji = t.column("ji"),
      iimg = t.column("image");
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& r : t.rows) {
    if (r[size_t(iimg)] != "mean") continue;
    std::string cls = r[size_t(icls)] == "1" ? "stone" : r[size_t(icls)] == "2" ? "laser" : "c" + r[size_t(icls)];
    bars.push_back({cls + " dsc", std::stod(r[size_t(idsc)])});
    bars.push_back({cls + " ji", std::stod(r[size_t(iji)])});
  }
  check(!bars.empty(), "plot_metrics: no aggregate rows in report");
  plot_bars(bars, "per-class mean scores", png_path);
}

}  // namespace lithoseg
