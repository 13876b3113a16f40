#include "evpupil/segmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "evpupil/errors.hpp"

namespace evpupil {

namespace {

// Clockwise around a pixel in image coordinates (y grows downward), starting west.
constexpr std::array<Point, 8> kRing = {{{-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}}};

int ring_index(int dx, int dy) {
  for (int i = 0; i < 8; ++i) {
    if (kRing[i].x == dx && kRing[i].y == dy) return i;
  }
  return -1;
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[i + radius] = static_cast<float>(w);
    sum += w;
  }
  for (float& w : k) w = static_cast<float>(w / sum);
  return k;
}

std::vector<float> blur(const GrayImage& img, double sigma) {
  const int w = img.width, h = img.height;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<float> tmp(img.data.size()), out(img.data.size());
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = &img.data[static_cast<std::size_t>(y) * w];
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * row[std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

BoundingBox Contour::bounds() const {
  BoundingBox b{INT32_MAX, INT32_MAX, INT32_MIN, INT32_MIN};
  for (const Point& p : points) {
    b.min_x = std::min(b.min_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_x = std::max(b.max_x, p.x);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

GrayImage to_gray(const EventFrame& frame) {
  GrayImage img(frame.width, frame.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = (frame.pos_count[i] + frame.neg_count[i]) > 0 ? 255 : 0;
  }
  return img;
}

GrayImage dilate(const GrayImage& img, int kernel, int iterations) {
  if (kernel < 1 || kernel % 2 == 0) throw ArgumentError("dilation kernel must be odd and >= 1");
  if (iterations < 0) throw ArgumentError("dilation iterations must be >= 0");
  const int radius = kernel / 2;
  const int w = img.width, h = img.height;
  GrayImage cur = img;
  GrayImage tmp(w, h);
  for (int it = 0; it < iterations && radius > 0; ++it) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::uint8_t m = 0;
        for (int xx = std::max(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx) m = std::max(m, cur.at(xx, y));
        tmp.at(x, y) = m;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::uint8_t m = 0;
        for (int yy = std::max(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy) m = std::max(m, tmp.at(x, yy));
        cur.at(x, y) = m;
      }
    }
  }
  return cur;
}

GrayImage canny(const GrayImage& img, double sigma, double low, double high) {
  if (!(low < high)) throw ArgumentError("canny requires low < high");
  if (sigma <= 0) throw ArgumentError("canny sigma must be > 0");
  const int w = img.width, h = img.height;
  GrayImage edges(w, h);
  if (w == 0 || h == 0) return edges;

  const std::vector<float> smooth = blur(img, sigma);
  auto at = [&](int x, int y) {
    return smooth[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };

  std::vector<float> mag(smooth.size());
  std::vector<std::uint8_t> dir(smooth.size());
  constexpr float kTan22 = 0.41421356f;
  constexpr float kTan67 = 2.41421356f;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                       (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      const float gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                       (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      mag[i] = std::sqrt(gx * gx + gy * gy);
      const float ax = std::abs(gx), ay = std::abs(gy);
      if (ay <= kTan22 * ax) {
        dir[i] = 0;  // horizontal gradient
      } else if (ay > kTan67 * ax) {
        dir[i] = 2;  // vertical gradient
      } else {
        dir[i] = (gx * gy > 0) ? 1 : 3;
      }
    }
  }

  // 0 = suppressed, 1 = weak, 2 = strong
  std::vector<std::uint8_t> cls(smooth.size(), 0);
  std::vector<std::size_t> stack;
  auto m_at = [&](int x, int y) -> float {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0f;
    return mag[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float m = mag[i];
      if (m <= low) continue;
      float before = 0, after = 0;
      switch (dir[i]) {
        case 0: before = m_at(x - 1, y); after = m_at(x + 1, y); break;
        case 2: before = m_at(x, y - 1); after = m_at(x, y + 1); break;
        case 1: before = m_at(x - 1, y - 1); after = m_at(x + 1, y + 1); break;
        default: before = m_at(x + 1, y - 1); after = m_at(x - 1, y + 1); break;
      }
      // Asymmetric comparison keeps exactly one pixel of a two-pixel plateau.
      if (!(m > before && m >= after)) continue;
      if (m > high) {
        cls[i] = 2;
        stack.push_back(i);
      } else {
        cls[i] = 1;
      }
    }
  }

  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    edges.data[i] = 255;
    const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
    for (const Point& d : kRing) {
      const int nx = x + d.x, ny = y + d.y;
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
      if (cls[j] == 1) {
        cls[j] = 2;
        stack.push_back(j);
      }
    }
  }
  return edges;
}

std::vector<Contour> find_contours(const GrayImage& edges) {
  const int w = edges.width, h = edges.height;
  std::vector<Contour> contours;
  std::vector<std::uint8_t> visited(edges.data.size(), 0);
  std::vector<std::size_t> queue;
  auto fg = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && edges.at(x, y) != 0; };

  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const std::size_t seed = static_cast<std::size_t>(y0) * w + x0;
      if (edges.data[seed] == 0 || visited[seed]) continue;

      // Mark the whole component so it is traced once.
      std::size_t component_size = 0;
      queue.assign(1, seed);
      visited[seed] = 1;
      while (!queue.empty()) {
        const std::size_t i = queue.back();
        queue.pop_back();
        ++component_size;
        const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
        for (const Point& d : kRing) {
          const int nx = x + d.x, ny = y + d.y;
          if (!fg(nx, ny)) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
          if (!visited[j]) {
            visited[j] = 1;
            queue.push_back(j);
          }
        }
      }

      // Moore tracing from the raster-first pixel; its west neighbour is background.
      Contour contour;
      const Point start{x0, y0};
      Point current = start;
      int backtrack = 0;
      const int start_backtrack = backtrack;
      contour.points.push_back(start);
      const std::size_t guard = 4 * component_size + 16;
      for (std::size_t step = 0; step < guard; ++step) {
        int found = -1;
        for (int k = 1; k <= 8; ++k) {
          const int idx = (backtrack + k) % 8;
          if (fg(current.x + kRing[idx].x, current.y + kRing[idx].y)) {
            found = idx;
            break;
          }
        }
        if (found < 0) break;  // isolated pixel
        const Point next{current.x + kRing[found].x, current.y + kRing[found].y};
        const int prev = (found + 7) % 8;
        const Point back_pos{current.x + kRing[prev].x, current.y + kRing[prev].y};
        const int next_backtrack = ring_index(back_pos.x - next.x, back_pos.y - next.y);
        if (next == start && next_backtrack == start_backtrack) break;
        contour.points.push_back(next);
        current = next;
        backtrack = next_backtrack;
      }
      if (contour.points.size() >= 4) contours.push_back(std::move(contour));
    }
  }
  return contours;
}

namespace {

struct Normal {
  float nx = 0;
  float ny = 0;
  bool valid = false;
};

Normal local_normal(const GrayImage& edges, int x, int y) {
  constexpr int kRadius = 3;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  int n = 0;
  for (int dy = -kRadius; dy <= kRadius; ++dy) {
    for (int dx = -kRadius; dx <= kRadius; ++dx) {
      if (!edges.contains(x + dx, y + dy) || edges.at(x + dx, y + dy) == 0) continue;
      sx += dx;
      sy += dy;
      sxx += dx * dx;
      sxy += dx * dy;
      syy += dy * dy;
      ++n;
    }
  }
  if (n < 3) return {};
  const double mx = sx / n, my = sy / n;
  const double a = sxx / n - mx * mx, b = sxy / n - mx * my, c = syy / n - my * my;
  const double theta = 0.5 * std::atan2(2 * b, a - c);  // tangent direction
  return Normal{static_cast<float>(-std::sin(theta)), static_cast<float>(std::cos(theta)), true};
}

struct HoughScratch {
  std::vector<std::uint16_t> acc;
  std::vector<std::uint32_t> touched;
};

}  // namespace

std::vector<CircleHypothesis> hough_circles(const GrayImage& edges, int r_min, int r_max,
                                            double vote_threshold) {
  if (r_min < 1 || r_min >= r_max) throw ArgumentError("hough requires 1 <= r_min < r_max");
  const int w = edges.width, h = edges.height;
  const int n_r = r_max - r_min + 1;
  const std::size_t plane = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);

  thread_local HoughScratch scratch;
  auto& acc = scratch.acc;
  auto& touched = scratch.touched;
  if (acc.size() < plane * n_r) acc.assign(plane * n_r, 0);
  touched.clear();

  struct Voter {
    float x, y, nx, ny;
  };
  std::vector<Voter> voters;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (edges.at(x, y) == 0) continue;
      const Normal n = local_normal(edges, x, y);
      if (n.valid) voters.push_back({static_cast<float>(x), static_cast<float>(y), n.nx, n.ny});
    }
  }
  // Radius-major so each pass writes into a single accumulator plane.
  for (int ri = 0; ri < n_r; ++ri) {
    const float r = static_cast<float>(r_min + ri);
    std::uint16_t* acc_plane = acc.data() + ri * plane;
    for (const Voter& v : voters) {
      for (const float sense : {1.0f, -1.0f}) {
        const int cx = static_cast<int>(std::lround(v.x + sense * r * v.nx));
        const int cy = static_cast<int>(std::lround(v.y + sense * r * v.ny));
        if (cx < 0 || cy < 0 || cx >= w || cy >= h) continue;
        const auto cell = static_cast<std::size_t>(cy) * w + cx;
        if (acc_plane[cell] == 0) touched.push_back(static_cast<std::uint32_t>(ri * plane + cell));
        if (acc_plane[cell] < UINT16_MAX) ++acc_plane[cell];
      }
    }
  }

  auto score = [&](int ri, int cx, int cy) {
    if (ri < 0 || ri >= n_r) return 0;
    int s = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      const int yy = cy + dy;
      if (yy < 0 || yy >= h) continue;
      for (int dx = -1; dx <= 1; ++dx) {
        const int xx = cx + dx;
        if (xx < 0 || xx >= w) continue;
        s += acc[ri * plane + static_cast<std::size_t>(yy) * w + xx];
      }
    }
    return s;
  };

  std::vector<CircleHypothesis> raw;
  std::vector<std::uint32_t> raw_cell;
  for (const std::uint32_t idx : touched) {
    const int ri = static_cast<int>(idx / plane);
    const int rem = static_cast<int>(idx % plane);
    const int cx = rem % w, cy = rem / w;
    const double r = r_min + ri;
    const int s = score(ri, cx, cy);
    if (s < vote_threshold * 2.0 * std::numbers::pi * r) continue;
    bool is_max = true;
    for (int dr = -1; dr <= 1 && is_max; ++dr) {
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1 && is_max; ++dx) {
          if (dr == 0 && dy == 0 && dx == 0) continue;
          const int xx = cx + dx, yy = cy + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          if (score(ri + dr, xx, yy) > s) is_max = false;
        }
      }
    }
    if (!is_max) continue;
    // Sub-pixel center from the 3x3 vote centroid.
    double wx = 0, wy = 0, ws = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int xx = cx + dx, yy = cy + dy;
        if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
        const double v = acc[ri * plane + static_cast<std::size_t>(yy) * w + xx];
        wx += v * xx;
        wy += v * yy;
        ws += v;
      }
    }
    raw.push_back({wx / ws, wy / ws, r, static_cast<double>(s)});
    raw_cell.push_back(idx);
  }
  for (const std::uint32_t idx : touched) acc[idx] = 0;

  // Strongest first; equal scores in accumulator order.
  std::vector<std::size_t> order(raw.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return raw[a].votes != raw[b].votes ? raw[a].votes > raw[b].votes : raw_cell[a] < raw_cell[b];
  });
  {
    std::vector<CircleHypothesis> sorted;
    sorted.reserve(raw.size());
    for (const std::size_t i : order) sorted.push_back(raw[i]);
    raw = std::move(sorted);
  }

  std::vector<CircleHypothesis> merged;
  std::vector<bool> used(raw.size(), false);
  const double merge_dist2 = static_cast<double>(r_min) * r_min;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (used[i]) continue;
    const CircleHypothesis& lead = raw[i];
    double sx = 0, sy = 0, sr = 0, sw = 0;
    for (std::size_t j = i; j < raw.size(); ++j) {
      if (used[j]) continue;
      const double dx = raw[j].cx - lead.cx, dy = raw[j].cy - lead.cy;
      if (dx * dx + dy * dy >= merge_dist2) continue;
      used[j] = true;
      if (raw[j].votes < 0.5 * lead.votes) continue;
      sx += raw[j].votes * raw[j].cx;
      sy += raw[j].votes * raw[j].cy;
      sr += raw[j].votes * raw[j].r;
      sw += raw[j].votes;
    }
    merged.push_back({sx / sw, sy / sw, sr / sw, lead.votes});
  }
  return merged;
}

std::optional<CircleHypothesis> roi_filter(std::span<const CircleHypothesis> candidates,
                                           std::span<const Contour> contours,
                                           const PipelineConfig& config, int width, int height) {
  std::vector<BoundingBox> boxes;
  boxes.reserve(contours.size());
  for (const Contour& c : contours) boxes.push_back(c.bounds());

  const double r_min = config.hough_r_min, r_max = config.hough_r_max;
  std::vector<CircleHypothesis> plausible;
  for (const CircleHypothesis& c : candidates) {
    const double area = std::numbers::pi * c.r * c.r;
    if (area < std::numbers::pi * r_min * r_min || area > std::numbers::pi * r_max * r_max) continue;
    if (c.cx < r_min || c.cy < r_min || c.cx > width - 1 - r_min || c.cy > height - 1 - r_min) continue;
    plausible.push_back(c);
  }
  // A box around several plausible centers is a motion smear of one pupil
  // seen at several positions; its shape says nothing about any single one.
  std::erase_if(boxes, [&](const BoundingBox& b) {
    return std::count_if(plausible.begin(), plausible.end(),
                         [&](const CircleHypothesis& c) { return b.contains(c.cx, c.cy); }) > 1;
  });

  std::optional<CircleHypothesis> best;
  for (const CircleHypothesis& c : plausible) {
    // Enclosing contour: the smallest box holding the center and most of the
    // circle's extent. Fragments inside the disc do not qualify.
    const double reach = 0.8 * c.r;
    const BoundingBox* enclosing = nullptr;
    long best_area = 0;
    for (const BoundingBox& b : boxes) {
      if (!b.contains(c.cx - reach, c.cy - reach) || !b.contains(c.cx + reach, c.cy + reach)) continue;
      const long a = static_cast<long>(b.width()) * b.height();
      if (enclosing == nullptr || a < best_area) {
        enclosing = &b;
        best_area = a;
      }
    }
    if (enclosing != nullptr) {
      const double aspect = enclosing->aspect();
      if (aspect < config.roi_aspect_min || aspect > config.roi_aspect_max) continue;
    }
    if (!best || c.votes > best->votes) best = c;
  }
  return best;
}

std::optional<PupilDetection> segment_pupil(const EventFrame& frame, const PipelineConfig& config,
                                            SegmentationTrace* trace) {
  GrayImage gray = to_gray(frame);
  GrayImage dilated = dilate(gray, config.dilation_kernel, config.dilation_iterations);
  GrayImage edges = canny(dilated, config.gaussian_sigma, config.canny_low, config.canny_high);
  std::vector<Contour> contours = find_contours(edges);
  std::vector<CircleHypothesis> candidates =
      hough_circles(edges, config.hough_r_min, config.hough_r_max, config.hough_vote_threshold);
  const auto chosen = roi_filter(candidates, contours, config, frame.width, frame.height);
  if (trace != nullptr) {
    trace->gray = std::move(gray);
    trace->dilated = std::move(dilated);
    trace->edges = std::move(edges);
    trace->contours = std::move(contours);
    trace->candidates = std::move(candidates);
  }
  if (!chosen) return std::nullopt;
  return PupilDetection{*chosen, frame.t_mid()};
}

void write_detections(std::span<const DetectionRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "frame_idx,t_mid_us,cx,cy,r,votes\n";
  for (const DetectionRow& row : rows) {
    if (row.circle) {
      out << fmt::format("{},{},{},{},{},{}\n", row.frame_idx, row.t_mid, row.circle->cx,
                         row.circle->cy, row.circle->r, row.circle->votes);
    } else {
      out << fmt::format("{},{},NA,NA,NA,NA\n", row.frame_idx, row.t_mid);
    }
  }
  if (!out) throw IoError("write failure on " + path.string());
}

std::vector<DetectionRow> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<DetectionRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    if (line.back() == '\r') line.pop_back();
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw ParseError(line_no, "expected 6 detection fields");
    try {
      DetectionRow row;
      row.frame_idx = std::stoull(f[0]);
      row.t_mid = std::stoll(f[1]);
      if (f[2] != "NA") row.circle = CircleHypothesis{std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
      rows.push_back(row);
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed detection row");
    }
  }
  return rows;
}

}  // namespace evpupil
