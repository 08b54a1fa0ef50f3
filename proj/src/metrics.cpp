#include "segrobust/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "segrobust/error.hpp"

namespace segrobust {

const char* region_name(Region region) {
  switch (region) {
    case Region::kWholeTumor: return "whole_tumor";
    case Region::kTumorCore: return "tumor_core";
    case Region::kEnhancingTumor: return "enhancing_tumor";
  }
  return "?";
}

bool region_contains(Region region, uint8_t code) {
  switch (region) {
    case Region::kWholeTumor: return code == 1 || code == 2 || code == 4;
    case Region::kTumorCore: return code == 1 || code == 4;
    case Region::kEnhancingTumor: return code == 4;
  }
  return false;
}

double region_dice(const LabelMap& pred, const LabelMap& truth, Region region) {
  pred.validate();
  truth.validate();
  if (pred.shape != truth.shape) {
    throw ShapeError("region_dice: shape mismatch " +
                     shape_to_string(pred.shape) + " vs " +
                     shape_to_string(truth.shape));
  }
  int64_t a = 0, b = 0, inter = 0;
  for (size_t i = 0; i < pred.codes.size(); ++i) {
    const bool in_a = region_contains(region, pred.codes[i]);
    const bool in_b = region_contains(region, truth.codes[i]);
    a += in_a;
    b += in_b;
    inter += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace {

void check_pair(const Tensor& reference, const Tensor& test, const char* op) {
  if (reference.shape() != test.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(reference.shape()) + " vs " +
                     shape_to_string(test.shape()));
  }
}

}  // namespace

double rmse(const Tensor& reference, const Tensor& test) {
  check_pair(reference, test, "rmse");
  const auto& a = reference.data();
  const auto& b = test.data();
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double psnr(const Tensor& reference, const Tensor& test) {
  check_pair(reference, test, "psnr");
  const double err = rmse(reference, test);
  if (err == 0.0) return kPsnrCapDb;
  double peak = 0.0;
  for (double v : reference.data()) peak = std::max(peak, std::fabs(v));
  return std::min(kPsnrCapDb, 20.0 * std::log10(peak / err));
}

namespace {

// 'valid' 1D correlation with a length-7 window along one axis of a
// [D,H,W] array; the convolved axis shrinks by 6.
void gaussian_pass(const std::vector<double>& in, int64_t d, int64_t h,
                   int64_t w, int axis, const double* win,
                   std::vector<double>& out) {
  constexpr int64_t kWin = 7;
  int64_t od = d, oh = h, ow = w;
  (axis == 0 ? od : axis == 1 ? oh : ow) -= kWin - 1;
  out.assign(static_cast<size_t>(od * oh * ow), 0.0);
  const int64_t stride = axis == 0 ? h * w : axis == 1 ? w : 1;
  for (int64_t z = 0; z < od; ++z) {
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t x = 0; x < ow; ++x) {
        // first-tap index in input strides; taps advance along `axis`
        const int64_t base = z * h * w + y * w + x;
        double s = 0.0;
        for (int64_t k = 0; k < kWin; ++k) s += win[k] * in[base + k * stride];
        out[(z * oh + y) * ow + x] = s;
      }
    }
  }
}

struct SsimAccum {
  double total = 0.0;
  int64_t count = 0;
};

void ssim_channel(const double* ref, const double* test, int64_t d, int64_t h,
                  int64_t w, const double* win, SsimAccum& acc) {
  const size_t n = static_cast<size_t>(d * h * w);
  std::vector<double> x(ref, ref + n), y(test, test + n);
  std::vector<double> xx(n), yy(n), xy(n);
  for (size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  double lo = ref[0], hi = ref[0];
  for (size_t i = 1; i < n; ++i) {
    lo = std::min(lo, ref[i]);
    hi = std::max(hi, ref[i]);
  }
  const double range = hi > lo ? hi - lo : 1.0;
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);

  auto smooth = [&](std::vector<double>& a) {
    std::vector<double> t1, t2;
    gaussian_pass(a, d, h, w, 2, win, t1);
    gaussian_pass(t1, d, h, w - 6, 1, win, t2);
    gaussian_pass(t2, d, h - 6, w - 6, 0, win, a);
  };
  smooth(x);
  smooth(y);
  smooth(xx);
  smooth(yy);
  smooth(xy);

  for (size_t i = 0; i < x.size(); ++i) {
    const double mx = x[i], my = y[i];
    const double vx = xx[i] - mx * mx;
    const double vy = yy[i] - my * my;
    const double cov = xy[i] - mx * my;
    const double val = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
    acc.total += val;
  }
  acc.count += static_cast<int64_t>(x.size());
}

}  // namespace

double ssim(const Tensor& reference, const Tensor& test) {
  check_pair(reference, test, "ssim");
  if (reference.rank() != 3 && reference.rank() != 4) {
    throw ShapeError("ssim expects [C,D,H,W] or [D,H,W], got " +
                     shape_to_string(reference.shape()));
  }
  const bool chan = reference.rank() == 4;
  const int64_t c = chan ? reference.extent(0) : 1;
  const int64_t d = reference.extent(chan ? 1 : 0);
  const int64_t h = reference.extent(chan ? 2 : 1);
  const int64_t w = reference.extent(chan ? 3 : 2);
  if (d < 7 || h < 7 || w < 7) {
    throw ShapeError("ssim requires spatial extents >= 7, got " +
                     shape_to_string(reference.shape()));
  }
  double win[7];
  double wsum = 0.0;
  for (int i = 0; i < 7; ++i) {
    const double t = (i - 3) / 1.5;
    win[i] = std::exp(-0.5 * t * t);
    wsum += win[i];
  }
  for (double& v : win) v /= wsum;

  SsimAccum acc;
  const int64_t vol = d * h * w;
  for (int64_t ch = 0; ch < c; ++ch) {
    ssim_channel(reference.data().data() + ch * vol,
                 test.data().data() + ch * vol, d, h, w, win, acc);
  }
  return acc.total / static_cast<double>(acc.count);
}

QualityReport quality_report(const Tensor& reference, const Tensor& test) {
  QualityReport q;
  q.rmse = rmse(reference, test);
  q.psnr_db = psnr(reference, test);
  q.ssim = ssim(reference, test);
  return q;
}

}  // namespace segrobust
