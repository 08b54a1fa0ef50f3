#include "segrobust/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "binary_io.hpp"
#include "segrobust/error.hpp"

namespace segrobust {

namespace {

constexpr char kVolumeMagic[4] = {'S', 'R', 'T', 'V'};
constexpr char kLabelMagic[4] = {'S', 'R', 'T', 'L'};
constexpr uint32_t kFormatVersion = 1;
constexpr uint32_t kDtypeF64 = 1;
constexpr uint32_t kDtypeU8 = 2;

// Mean intensity per channel (rows: T1, T1Gd, T2, FLAIR) and internal
// class (columns: background, necrotic core, edema, enhancing rim).
// The rim dominates T1Gd and the edema dominates FLAIR, mirroring the
// qualitative appearance the label names describe.
constexpr double kClassMeans[kNumChannels][kNumClasses] = {
    {0.20, 0.12, 0.25, 0.30},
    {0.20, 0.15, 0.30, 0.95},
    {0.25, 0.80, 0.60, 0.50},
    {0.20, 0.50, 0.95, 0.55},
};

// Noise and shading strength as fractions of each channel's class-mean
// range. Both are sized so neighbouring classes overlap: the task stays
// learnable from local context, but per-voxel margins are narrow enough
// that small coordinated perturbations can flip predictions.
constexpr double kNoiseFraction = 0.30;
constexpr double kBiasFraction = 0.28;
constexpr int kBiasModes = 2;

// Sparse hyperintense punctate structures (vessel-like). Real scans have
// heavy-tailed intensities - vessels and fat sit far above soft-tissue
// contrast - and peak-normalised volumes therefore compress tissue-class
// gaps into a small slice of the dynamic range. The blobs reproduce that
// tail; they carry no label and brighten every channel, most strongly
// the contrast-enhanced one.
constexpr double kVesselDensity = 3.0e-4;  // expected blobs per voxel
constexpr double kVesselGain[kNumChannels] = {0.8, 2.2, 1.2, 1.0};

// Edema is infiltrative: only a fraction of its voxels carry lesion
// intensity, the rest look like background parenchyma, so the region is
// recognisable by local bright-voxel density rather than by a solid
// intensity shift. Density evidence is what small coordinated
// perturbations can move; solid shells would leave interiors immune.
constexpr double kEdemaFill = 0.55;

}  // namespace

Phantom generate_phantom(uint64_t seed, int64_t extent) {
  if (extent < 16) {
    throw ConfigError(
        "phantom extent must be >= 16 to fit the three-shell lesion, got " +
        std::to_string(extent));
  }
  Rng rng(seed);
  const double e = static_cast<double>(extent);

  double center[3];
  for (double& c : center) c = 0.5 * e + rng.uniform(-0.06 * e, 0.06 * e);
  // Radii fractions are spaced so the per-axis jitter (0.85..1.15) can
  // never break core < rim < edema nesting.
  double edema_r[3], rim_r[3], core_r[3];
  for (double& r : edema_r) r = 0.30 * e * rng.uniform(0.85, 1.15);
  for (double& r : rim_r) r = 0.20 * e * rng.uniform(0.85, 1.15);
  for (double& r : core_r) r = 0.11 * e * rng.uniform(0.85, 1.15);

  double means[kNumChannels][kNumClasses];
  for (int ch = 0; ch < kNumChannels; ++ch) {
    for (int cls = 0; cls < kNumClasses; ++cls) {
      means[ch][cls] = kClassMeans[ch][cls] + rng.uniform(-0.03, 0.03);
    }
  }
  double range[kNumChannels];
  double sigma[kNumChannels];
  for (int ch = 0; ch < kNumChannels; ++ch) {
    const auto [lo, hi] =
        std::minmax_element(means[ch], means[ch] + kNumClasses);
    range[ch] = *hi - *lo;
    sigma[ch] = kNoiseFraction * range[ch];
  }

  // Low-frequency multiplicative shading per channel: a couple of cosine
  // modes with wavelengths on the order of the volume, mimicking scanner
  // inhomogeneity. Class-mean order is preserved everywhere because the
  // same factor scales all classes at a voxel.
  double bias_k[kNumChannels][kBiasModes][3];
  double bias_phase[kNumChannels][kBiasModes];
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  for (int ch = 0; ch < kNumChannels; ++ch) {
    for (int m = 0; m < kBiasModes; ++m) {
      for (double& k : bias_k[ch][m]) k = kTwoPi / e * rng.uniform(-2.0, 2.0);
      bias_phase[ch][m] = rng.uniform(0.0, kTwoPi);
    }
  }

  Phantom out;
  out.labels.shape = {extent, extent, extent};
  out.labels.codes.resize(static_cast<size_t>(extent * extent * extent));
  auto inside = [&](const double r[3], int64_t z, int64_t y, int64_t x) {
    const double dz = (static_cast<double>(z) - center[0]) / r[0];
    const double dy = (static_cast<double>(y) - center[1]) / r[1];
    const double dx = (static_cast<double>(x) - center[2]) / r[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
  };
  size_t i = 0;
  for (int64_t z = 0; z < extent; ++z) {
    for (int64_t y = 0; y < extent; ++y) {
      for (int64_t x = 0; x < extent; ++x, ++i) {
        uint8_t code = 0;
        if (inside(core_r, z, y, x)) {
          code = 1;
        } else if (inside(rim_r, z, y, x)) {
          code = 4;
        } else if (inside(edema_r, z, y, x)) {
          code = 2;
        }
        out.labels.codes[i] = code;
      }
    }
  }

  out.volume = Tensor::zeros({kNumChannels, extent, extent, extent});
  double* v = out.volume.mutable_data().data();
  const int64_t vol = extent * extent * extent;

  // Infiltration mask shared by all channels: tissue microstructure is
  // common to every modality, so a voxel is lesion-bright in all channels
  // or in none. One draw per voxel keeps the stream layout fixed.
  std::vector<uint8_t> bright(out.labels.codes.size(), 1);
  for (size_t bi = 0; bi < bright.size(); ++bi) {
    const bool fill = rng.uniform01() < kEdemaFill;
    if (out.labels.codes[bi] == 2) bright[bi] = fill ? 1 : 0;
  }

  // Bright-blob mask shared by all channels: gaussian bumps of unit peak,
  // combined with max so overlaps stay bounded.
  std::vector<double> spot(static_cast<size_t>(vol), 0.0);
  const int n_vessels =
      static_cast<int>(kVesselDensity * static_cast<double>(vol));
  for (int s = 0; s < n_vessels; ++s) {
    double c[3];
    for (double& cc : c) cc = rng.uniform(0.0, e - 1.0);
    const double r = rng.uniform(1.0, 1.8);
    const double reach = 3.0 * r;
    const auto lo = [&](double cc) {
      return std::max<int64_t>(0, static_cast<int64_t>(std::ceil(cc - reach)));
    };
    const auto hi = [&](double cc) {
      return std::min<int64_t>(extent - 1,
                               static_cast<int64_t>(std::floor(cc + reach)));
    };
    for (int64_t z = lo(c[0]); z <= hi(c[0]); ++z) {
      for (int64_t y = lo(c[1]); y <= hi(c[1]); ++y) {
        for (int64_t x = lo(c[2]); x <= hi(c[2]); ++x) {
          const double dz = static_cast<double>(z) - c[0];
          const double dy = static_cast<double>(y) - c[1];
          const double dx = static_cast<double>(x) - c[2];
          const double d2 = dz * dz + dy * dy + dx * dx;
          const size_t idx =
              static_cast<size_t>((z * extent + y) * extent + x);
          spot[idx] = std::max(spot[idx], std::exp(-d2 / (r * r)));
        }
      }
    }
  }
  for (int ch = 0; ch < kNumChannels; ++ch) {
    double* base = v + ch * vol;
    int64_t j = 0;
    for (int64_t z = 0; z < extent; ++z) {
      for (int64_t y = 0; y < extent; ++y) {
        for (int64_t x = 0; x < extent; ++x, ++j) {
          double f = 0.0;
          for (int m = 0; m < kBiasModes; ++m) {
            const double* k = bias_k[ch][m];
            f += std::cos(k[0] * static_cast<double>(z) +
                          k[1] * static_cast<double>(y) +
                          k[2] * static_cast<double>(x) + bias_phase[ch][m]);
          }
          const double shade = 1.0 + kBiasFraction * f / kBiasModes;
          const size_t sj = static_cast<size_t>(j);
          const int cls = bright[sj]
                              ? label_code_to_index(out.labels.codes[sj])
                              : 0;
          base[j] = shade * (means[ch][cls] + sigma[ch] * rng.normal() +
                             kVesselGain[ch] * range[ch] * spot[sj]);
        }
      }
    }
  }
  return out;
}

Tensor standardize(const Tensor& volume) {
  const auto& v = volume.data();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) {
    const double d = x - mean;
    var += d * d;
  }
  var /= static_cast<double>(v.size());
  if (var == 0.0) throw Error("standardize: volume is constant");
  const double inv_sd = 1.0 / std::sqrt(var);
  Tensor out = Tensor::zeros(volume.shape());
  double* o = out.mutable_data().data();
  double peak = 0.0;
  for (size_t j = 0; j < v.size(); ++j) {
    o[j] = (v[j] - mean) * inv_sd;
    peak = std::max(peak, std::fabs(o[j]));
  }
  const double inv_peak = 1.0 / peak;
  for (size_t j = 0; j < v.size(); ++j) o[j] *= inv_peak;
  return out;
}

namespace {

struct AxisMap {
  std::vector<int64_t> lo, hi;
  std::vector<double> frac;
};

AxisMap trilinear_axis(int64_t in, int64_t out) {
  AxisMap m;
  m.lo.resize(static_cast<size_t>(out));
  m.hi.resize(static_cast<size_t>(out));
  m.frac.resize(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t j = 0; j < out; ++j) {
    const double src = (static_cast<double>(j) + 0.5) * scale - 0.5;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    double f = src - static_cast<double>(i0);
    if (i0 < 0) {
      i0 = 0;
      f = 0.0;
    }
    int64_t i1 = i0 + 1;
    if (i1 >= in) {
      i1 = in - 1;
      if (i0 > i1) i0 = i1;
    }
    m.lo[static_cast<size_t>(j)] = i0;
    m.hi[static_cast<size_t>(j)] = i1;
    m.frac[static_cast<size_t>(j)] = f;
  }
  return m;
}

int64_t nearest_index(int64_t j, int64_t in, int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double src = (static_cast<double>(j) + 0.5) * scale - 0.5;
  return std::clamp<int64_t>(std::llround(src), 0, in - 1);
}

}  // namespace

Tensor resize_volume(const Tensor& volume, int64_t target_extent) {
  if (volume.rank() != 4) {
    throw ShapeError("resize expects a [C,D,H,W] volume, got " +
                     shape_to_string(volume.shape()));
  }
  if (target_extent < 1) {
    throw ConfigError("resize target extent must be >= 1");
  }
  const int64_t c = volume.extent(0), d = volume.extent(1),
                h = volume.extent(2), w = volume.extent(3);
  if (d == target_extent && h == target_extent && w == target_extent) {
    return volume.clone_detached();
  }
  const AxisMap mz = trilinear_axis(d, target_extent);
  const AxisMap my = trilinear_axis(h, target_extent);
  const AxisMap mx = trilinear_axis(w, target_extent);
  Tensor out =
      Tensor::zeros({c, target_extent, target_extent, target_extent});
  const double* in = volume.data().data();
  double* o = out.mutable_data().data();
  const int64_t ivol = d * h * w;
  int64_t idx = 0;
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* base = in + ch * ivol;
    for (int64_t z = 0; z < target_extent; ++z) {
      const size_t zi = static_cast<size_t>(z);
      const double fz = mz.frac[zi];
      const int64_t z0 = mz.lo[zi] * h * w, z1 = mz.hi[zi] * h * w;
      for (int64_t y = 0; y < target_extent; ++y) {
        const size_t yi = static_cast<size_t>(y);
        const double fy = my.frac[yi];
        const int64_t y0 = my.lo[yi] * w, y1 = my.hi[yi] * w;
        for (int64_t x = 0; x < target_extent; ++x, ++idx) {
          const size_t xi = static_cast<size_t>(x);
          const double fx = mx.frac[xi];
          const int64_t x0 = mx.lo[xi], x1 = mx.hi[xi];
          const double c00 =
              base[z0 + y0 + x0] * (1 - fx) + base[z0 + y0 + x1] * fx;
          const double c01 =
              base[z0 + y1 + x0] * (1 - fx) + base[z0 + y1 + x1] * fx;
          const double c10 =
              base[z1 + y0 + x0] * (1 - fx) + base[z1 + y0 + x1] * fx;
          const double c11 =
              base[z1 + y1 + x0] * (1 - fx) + base[z1 + y1 + x1] * fx;
          const double c0 = c00 * (1 - fy) + c01 * fy;
          const double c1 = c10 * (1 - fy) + c11 * fy;
          o[idx] = c0 * (1 - fz) + c1 * fz;
        }
      }
    }
  }
  return out;
}

LabelMap resize_labels(const LabelMap& labels, int64_t target_extent) {
  labels.validate();
  if (target_extent < 1) {
    throw ConfigError("resize target extent must be >= 1");
  }
  const int64_t d = labels.shape[0], h = labels.shape[1], w = labels.shape[2];
  if (d == target_extent && h == target_extent && w == target_extent) {
    return labels;
  }
  LabelMap out;
  out.shape = {target_extent, target_extent, target_extent};
  out.codes.resize(
      static_cast<size_t>(target_extent * target_extent * target_extent));
  size_t idx = 0;
  for (int64_t z = 0; z < target_extent; ++z) {
    const int64_t zi = nearest_index(z, d, target_extent);
    for (int64_t y = 0; y < target_extent; ++y) {
      const int64_t yi = nearest_index(y, h, target_extent);
      for (int64_t x = 0; x < target_extent; ++x, ++idx) {
        const int64_t xi = nearest_index(x, w, target_extent);
        out.codes[idx] =
            labels.codes[static_cast<size_t>((zi * h + yi) * w + xi)];
      }
    }
  }
  return out;
}

void save_volume(const Tensor& volume, const std::string& path) {
  auto os = binio::open_out(path);
  binio::write_bytes(os, kVolumeMagic, 4);
  binio::write_u32(os, kFormatVersion);
  binio::write_u32(os, kDtypeF64);
  binio::write_u32(os, static_cast<uint32_t>(volume.rank()));
  for (int64_t e : volume.shape()) {
    binio::write_u32(os, static_cast<uint32_t>(e));
  }
  binio::write_f64_array(os, volume.data());
  if (!os) throw IoError("write failure on " + path);
}

Tensor load_volume(const std::string& path) {
  auto is = binio::open_in(path);
  binio::check_magic(is, kVolumeMagic, path);
  if (binio::read_u32(is, "version") != kFormatVersion) {
    throw IoError("unsupported volume format version in " + path);
  }
  if (binio::read_u32(is, "dtype") != kDtypeF64) {
    throw IoError("volume file " + path + " does not hold float64 data");
  }
  const uint32_t rank = binio::read_u32(is, "rank");
  if (rank < 1 || rank > 8) {
    throw IoError("implausible rank " + std::to_string(rank) + " in " + path);
  }
  Shape shape;
  for (uint32_t r = 0; r < rank; ++r) {
    const uint32_t e = binio::read_u32(is, "extent");
    if (e == 0) throw IoError("zero extent in " + path);
    shape.push_back(e);
  }
  Tensor out = Tensor::zeros(shape);
  binio::read_f64_array(is, out.mutable_data(), "volume payload of " + path);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw IoError("trailing bytes after payload in " + path);
  }
  return out;
}

void save_labels(const LabelMap& labels, const std::string& path) {
  labels.validate();
  auto os = binio::open_out(path);
  binio::write_bytes(os, kLabelMagic, 4);
  binio::write_u32(os, kFormatVersion);
  binio::write_u32(os, kDtypeU8);
  binio::write_u32(os, static_cast<uint32_t>(labels.shape.size()));
  for (int64_t e : labels.shape) binio::write_u32(os, static_cast<uint32_t>(e));
  binio::write_bytes(os, labels.codes.data(), labels.codes.size());
  if (!os) throw IoError("write failure on " + path);
}

LabelMap load_labels(const std::string& path) {
  auto is = binio::open_in(path);
  binio::check_magic(is, kLabelMagic, path);
  if (binio::read_u32(is, "version") != kFormatVersion) {
    throw IoError("unsupported label format version in " + path);
  }
  if (binio::read_u32(is, "dtype") != kDtypeU8) {
    throw IoError("label file " + path + " does not hold u8 codes");
  }
  const uint32_t rank = binio::read_u32(is, "rank");
  if (rank != 3) {
    throw IoError("label map in " + path + " must be rank 3, got " +
                  std::to_string(rank));
  }
  LabelMap out;
  for (uint32_t r = 0; r < rank; ++r) {
    const uint32_t e = binio::read_u32(is, "extent");
    if (e == 0) throw IoError("zero extent in " + path);
    out.shape.push_back(e);
  }
  out.codes.resize(static_cast<size_t>(out.numel()));
  binio::read_exact(is, out.codes.data(), out.codes.size(),
                    "label payload of " + path);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw IoError("trailing bytes after payload in " + path);
  }
  out.validate();
  return out;
}

Dataset split_dataset(std::vector<Subject> subjects, double test_fraction,
                      uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in (0,1), got " +
                      std::to_string(test_fraction));
  }
  const int64_t n = static_cast<int64_t>(subjects.size());
  const int64_t n_test =
      std::llround(static_cast<double>(n) * test_fraction);
  if (n_test < 1 || n_test >= n) {
    throw ConfigError("split of " + std::to_string(n) + " subjects at " +
                      std::to_string(test_fraction) +
                      " leaves an empty side");
  }
  Rng rng(seed);
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(
        rng.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(subjects[static_cast<size_t>(i)],
              subjects[static_cast<size_t>(j)]);
  }
  Dataset out;
  out.test.assign(subjects.begin(), subjects.begin() + n_test);
  out.train.assign(subjects.begin() + n_test, subjects.end());
  return out;
}

Tensor one_hot(const LabelMap& labels, int num_classes) {
  labels.validate();
  if (num_classes < kNumClasses) {
    throw ConfigError("one_hot needs at least " +
                      std::to_string(kNumClasses) + " classes");
  }
  const int64_t vol = labels.numel();
  Tensor out = Tensor::zeros(
      {num_classes, labels.shape[0], labels.shape[1], labels.shape[2]});
  double* o = out.mutable_data().data();
  for (int64_t j = 0; j < vol; ++j) {
    const int cls = label_code_to_index(labels.codes[static_cast<size_t>(j)]);
    o[cls * vol + j] = 1.0;
  }
  return out;
}

LabelMap argmax_labels(const Tensor& probs) {
  if (probs.rank() != 4) {
    throw ShapeError("argmax_labels expects [N,D,H,W], got " +
                     shape_to_string(probs.shape()));
  }
  const int64_t n = probs.extent(0);
  if (n > kNumClasses) {
    throw ShapeError("argmax_labels: more channels than known label codes");
  }
  const int64_t vol = probs.numel() / n;
  LabelMap out;
  out.shape = {probs.extent(1), probs.extent(2), probs.extent(3)};
  out.codes.resize(static_cast<size_t>(vol));
  const double* p = probs.data().data();
  for (int64_t j = 0; j < vol; ++j) {
    int best = 0;
    double best_v = p[j];
    for (int64_t c = 1; c < n; ++c) {
      const double v = p[c * vol + j];
      if (v > best_v) {
        best_v = v;
        best = static_cast<int>(c);
      }
    }
    out.codes[static_cast<size_t>(j)] = label_index_to_code(best);
  }
  return out;
}

GeoTransform sample_transform(Rng& rng) {
  GeoTransform t;
  t.swap_hw = rng.uniform_int(2) == 1;
  t.flip_d = rng.uniform_int(2) == 1;
  t.flip_h = rng.uniform_int(2) == 1;
  t.flip_w = rng.uniform_int(2) == 1;
  return t;
}

namespace {

// out(z,y,x) = in(z', h', w'): flips act on output coordinates, then
// the optional H/W swap maps back into input axes.
template <typename T>
void transform_grid(const T* in, T* out, int64_t d, int64_t h, int64_t w,
                    const GeoTransform& t) {
  const int64_t oh = t.swap_hw ? w : h;
  const int64_t ow = t.swap_hw ? h : w;
  int64_t idx = 0;
  for (int64_t z = 0; z < d; ++z) {
    const int64_t z1 = t.flip_d ? d - 1 - z : z;
    for (int64_t y = 0; y < oh; ++y) {
      const int64_t y1 = t.flip_h ? oh - 1 - y : y;
      for (int64_t x = 0; x < ow; ++x, ++idx) {
        const int64_t x1 = t.flip_w ? ow - 1 - x : x;
        const int64_t hi = t.swap_hw ? x1 : y1;
        const int64_t wi = t.swap_hw ? y1 : x1;
        out[idx] = in[(z1 * h + hi) * w + wi];
      }
    }
  }
}

}  // namespace

Tensor apply_transform(const Tensor& volume, const GeoTransform& t) {
  if (volume.rank() != 4) {
    throw ShapeError("apply_transform expects [C,D,H,W], got " +
                     shape_to_string(volume.shape()));
  }
  const int64_t c = volume.extent(0), d = volume.extent(1),
                h = volume.extent(2), w = volume.extent(3);
  Tensor out = Tensor::zeros({c, d, t.swap_hw ? w : h, t.swap_hw ? h : w});
  const int64_t vol = d * h * w;
  for (int64_t ch = 0; ch < c; ++ch) {
    transform_grid(volume.data().data() + ch * vol,
                   out.mutable_data().data() + ch * vol, d, h, w, t);
  }
  return out;
}

LabelMap apply_transform(const LabelMap& labels, const GeoTransform& t) {
  labels.validate();
  const int64_t d = labels.shape[0], h = labels.shape[1], w = labels.shape[2];
  LabelMap out;
  out.shape = {d, t.swap_hw ? w : h, t.swap_hw ? h : w};
  out.codes.resize(labels.codes.size());
  transform_grid(labels.codes.data(), out.codes.data(), d, h, w, t);
  return out;
}

}  // namespace segrobust
