#include "hsi/watershed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>

#include "hsi/error.hpp"

namespace hsi {
namespace {

constexpr int kDr[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kDc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

// Stands in for "no background seen yet"; large enough to never win and
// small enough that (far + q^2) stays finite.
constexpr double kFar = 1e20;

// Squared distance transform of a sampled function (lower envelope of
// parabolas). v/z are scratch buffers of size n and n+1.
void edt_1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v,
            std::vector<double>& z) {
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    const double qd = static_cast<double>(q);
    auto intersect = [&](std::size_t vk) {
      const double vd = static_cast<double>(vk);
      return ((f[q] + qd * qd) - (f[vk] + vd * vd)) / (2.0 * qd - 2.0 * vd);
    };
    double s = intersect(v[k]);
    while (s <= z[k]) s = intersect(v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double dq = qd - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

struct FloodEntry {
  double elevation;
  std::uint64_t age;
  std::size_t pixel;

  bool operator>(const FloodEntry& o) const {
    if (elevation != o.elevation) return elevation > o.elevation;
    return age > o.age;
  }
};

}  // namespace

std::size_t otsu_bin_of(float v, float lo, float hi) {
  const double t = (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo);
  const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(t * kOtsuBins)));
  return std::min(b, kOtsuBins - 1);
}

OtsuResult otsu_threshold(std::span<const float> values) {
  if (values.empty()) throw DataError("Otsu threshold of an empty band");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const float lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DataError("band is constant; no Otsu threshold exists");

  std::vector<std::uint64_t> hist(kOtsuBins, 0);
  for (float v : values) ++hist[otsu_bin_of(v, lo, hi)];

  const auto n = static_cast<std::int64_t>(values.size());
  std::int64_t total_sum = 0;
  for (std::size_t i = 0; i < kOtsuBins; ++i) total_sum += static_cast<std::int64_t>(i * hist[i]);

  // Between-class variance up to the positive factor 1/N^3:
  // (N*S0 - n0*S)^2 / (n0*n1).
  std::int64_t n0 = 0, s0 = 0;
  double best = -1.0;
  std::size_t best_bin = 0;
  for (std::size_t t = 0; t + 1 < kOtsuBins; ++t) {
    n0 += static_cast<std::int64_t>(hist[t]);
    s0 += static_cast<std::int64_t>(t * hist[t]);
    const std::int64_t n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const double num = static_cast<double>(n * s0 - n0 * total_sum);
    const double score = num * num / (static_cast<double>(n0) * static_cast<double>(n1));
    if (score > best) {
      best = score;
      best_bin = t;
    }
  }
  const double width = (static_cast<double>(hi) - lo) / kOtsuBins;
  return {lo + width * static_cast<double>(best_bin + 1), best_bin};
}

BinaryMask foreground_mask(const HyperCube& features) {
  if (features.bands < 1) throw DataError("foreground mask needs at least one band");
  const auto band = features.band(0);
  const auto otsu = otsu_threshold(band);
  const auto [lo, hi] = std::minmax_element(band.begin(), band.end());
  BinaryMask mask{features.height, features.width, std::vector<std::uint8_t>(band.size())};
  for (std::size_t i = 0; i < band.size(); ++i) {
    mask.bits[i] = otsu_bin_of(band[i], *lo, *hi) > otsu.bin ? 1 : 0;
  }
  return mask;
}

BinaryMask mask_from_labels(const GroundTruth& gt) {
  BinaryMask mask{gt.height, gt.width, std::vector<std::uint8_t>(gt.labels.size())};
  for (std::size_t i = 0; i < gt.labels.size(); ++i) mask.bits[i] = gt.labels[i] != 0 ? 1 : 0;
  return mask;
}

DistanceMap distance_transform(const BinaryMask& mask) {
  const std::size_t h = mask.height, w = mask.width;
  if (mask.bits.size() != h * w || h == 0 || w == 0) throw DataError("malformed mask");
  if (std::find(mask.bits.begin(), mask.bits.end(), 0) == mask.bits.end()) {
    throw DataError("distance transform needs at least one background pixel");
  }
  std::vector<double> sq(h * w);
  for (std::size_t i = 0; i < h * w; ++i) sq[i] = mask.bits[i] ? kFar : 0.0;

  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<std::size_t> v(n);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) f[r] = sq[r * w + c];
    edt_1d(f.data(), h, d.data(), v, z);
    for (std::size_t r = 0; r < h; ++r) sq[r * w + c] = d[r];
  }
  for (std::size_t r = 0; r < h; ++r) {
    edt_1d(sq.data() + r * w, w, d.data(), v, z);
    std::copy(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(w), sq.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  DistanceMap out{h, w, std::vector<double>(h * w)};
  for (std::size_t i = 0; i < h * w; ++i) out.values[i] = std::sqrt(sq[i]);
  return out;
}

std::vector<Marker> find_markers(const DistanceMap& distance, std::size_t min_distance,
                                 double min_height) {
  if (min_distance < 1) throw ConfigError("min_distance must be at least 1");
  const std::size_t h = distance.height, w = distance.width;
  const auto& dv = distance.values;
  const auto md = static_cast<std::ptrdiff_t>(min_distance);
  const auto hh = static_cast<std::ptrdiff_t>(h), ww = static_cast<std::ptrdiff_t>(w);

  std::vector<std::uint8_t> is_marker(h * w, 0);
  for (std::ptrdiff_t r = 0; r < hh; ++r) {
    for (std::ptrdiff_t c = 0; c < ww; ++c) {
      const double v = dv[static_cast<std::size_t>(r * ww + c)];
      if (v <= 0.0 || v < min_height) continue;
      bool peak = true;
      for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, r - md); peak && y <= std::min(hh - 1, r + md); ++y) {
        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, c - md); x <= std::min(ww - 1, c + md); ++x) {
          const double o = dv[static_cast<std::size_t>(y * ww + x)];
          if (o > v || (o == v && (y < r || (y == r && x < c)))) {
            peak = false;
            break;
          }
        }
      }
      if (peak) is_marker[static_cast<std::size_t>(r * ww + c)] = 1;
    }
  }

  // Ensure every 8-connected foreground component owns a marker.
  std::vector<std::uint8_t> seen(h * w, 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (seen[start] || dv[start] <= 0.0) continue;
    bool has_marker = false;
    std::size_t best = start;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      has_marker |= is_marker[p] != 0;
      if (dv[p] > dv[best] || (dv[p] == dv[best] && p < best)) best = p;
      const auto r = static_cast<std::ptrdiff_t>(p / w), c = static_cast<std::ptrdiff_t>(p % w);
      for (int k = 0; k < 8; ++k) {
        const auto y = r + kDr[k], x = c + kDc[k];
        if (y < 0 || y >= hh || x < 0 || x >= ww) continue;
        const auto q = static_cast<std::size_t>(y * ww + x);
        if (!seen[q] && dv[q] > 0.0) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (!has_marker) is_marker[best] = 1;
  }

  std::vector<Marker> markers;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (is_marker[p]) {
      markers.push_back({p / w, p % w, static_cast<std::uint32_t>(markers.size() + 1)});
    }
  }
  if (markers.empty()) throw DataError("no watershed markers found: mask has no foreground");
  return markers;
}

SegmentationMap watershed_flood(const std::vector<double>& elevation,
                                const std::vector<Marker>& markers, const BinaryMask& mask) {
  const std::size_t h = mask.height, w = mask.width;
  if (elevation.size() != h * w || mask.bits.size() != h * w) {
    throw DataError("elevation and mask shapes differ");
  }
  SegmentationMap seg{h, w, std::vector<std::uint32_t>(h * w, 0), markers.size()};
  std::priority_queue<FloodEntry, std::vector<FloodEntry>, std::greater<>> queue;
  std::uint64_t age = 0;
  for (const auto& m : markers) {
    if (m.row >= h || m.col >= w) throw DataError("marker outside the image");
    const std::size_t p = m.row * w + m.col;
    if (!mask.bits[p]) {
      throw DataError("marker " + std::to_string(m.id) + " lies on background");
    }
    if (m.id == 0) throw DataError("marker id 0 is reserved for background");
    if (seg.regions[p] != 0) throw DataError("two markers share a pixel");
    seg.regions[p] = m.id;
    queue.push({elevation[p], age++, p});
  }
  const auto hh = static_cast<std::ptrdiff_t>(h), ww = static_cast<std::ptrdiff_t>(w);
  while (!queue.empty()) {
    const std::size_t p = queue.top().pixel;
    queue.pop();
    const auto r = static_cast<std::ptrdiff_t>(p / w), c = static_cast<std::ptrdiff_t>(p % w);
    for (int k = 0; k < 8; ++k) {
      const auto y = r + kDr[k], x = c + kDc[k];
      if (y < 0 || y >= hh || x < 0 || x >= ww) continue;
      const auto q = static_cast<std::size_t>(y * ww + x);
      if (!mask.bits[q] || seg.regions[q] != 0) continue;
      seg.regions[q] = seg.regions[p];
      queue.push({elevation[q], age++, q});
    }
  }
  return seg;
}

std::vector<double> distance_elevation(const DistanceMap& distance) {
  std::vector<double> e(distance.values.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = -distance.values[i];
  return e;
}

std::vector<double> gradient_elevation(const HyperCube& features) {
  const std::size_t h = features.height, w = features.width;
  const auto band = features.band(0);
  auto at = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    r = std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(h) - 1);
    c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return static_cast<double>(band[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)]);
  };
  std::vector<double> g(h * w);
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(h); ++r) {
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(w); ++c) {
      const double gx = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1)) -
                        (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
      const double gy = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1)) -
                        (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
      g[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return g;
}

SegmentationMap segment(const HyperCube& features, const WatershedOptions& options,
                        const GroundTruth* gt) {
  BinaryMask mask;
  if (options.mask == MaskMode::kLabels) {
    if (!gt) throw ConfigError("label-based watershed mask requires ground truth");
    if (gt->height != features.height || gt->width != features.width) {
      throw DataError("ground truth and cube shapes differ");
    }
    mask = mask_from_labels(*gt);
  } else {
    mask = foreground_mask(features);
  }
  const auto distance = distance_transform(mask);
  const auto markers = find_markers(distance, options.min_distance, options.min_height);
  const auto elevation = options.elevation == ElevationMode::kGradient
                             ? gradient_elevation(features)
                             : distance_elevation(distance);
  return watershed_flood(elevation, markers, mask);
}

U32Raster to_raster(const SegmentationMap& seg) { return {seg.height, seg.width, seg.regions}; }

SegmentationMap from_raster(const U32Raster& raster) {
  SegmentationMap seg{raster.height, raster.width, raster.values, 0};
  std::uint32_t mx = 0;
  for (auto v : raster.values) mx = std::max(mx, v);
  seg.num_regions = mx;
  return seg;
}

}  // namespace hsi
