#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lrfd/tensor.hpp"

namespace lrfd {

struct Point2 {
  float x = 0.0f, y = 0.0f;
};

// Image (HR) plus exact landmark annotations. Landmark order is fixed:
// left eye, right eye, nose tip, left mouth corner, right mouth corner
// ("left" in image coordinates, x growing rightward).
struct FaceSample {
  Tensor<float> image;              // [3,H,W] in [-1,1]
  std::vector<Point2> landmarks;    // pixel coords, origin top-left
  std::vector<std::uint8_t> visibility;
  std::array<float, 4> bbox{};      // x, y, w, h

  int side() const { return image.dim(1); }
  int num_landmarks() const { return int(landmarks.size()); }
};

struct SynthConfig {
  int image_size = 64;
  int num_landmarks = 5;
};

struct DegradationParams {
  float blur_sigma_lo = 0.6f, blur_sigma_hi = 1.5f;   // HR scale
  float noise_sigma_lo = 0.10f, noise_sigma_hi = 0.22f;  // LR scale, post-downsample
  float contrast_jitter = 0.25f;  // contrast scale drawn from [1-j, 1+j]
  int factor = 4;                 // power of two

  static DegradationParams none() {
    DegradationParams p;
    p.blur_sigma_lo = p.blur_sigma_hi = 0.0f;
    p.noise_sigma_lo = p.noise_sigma_hi = 0.0f;
    p.contrast_jitter = 0.0f;
    return p;
  }

  void validate() const {
    require(blur_sigma_lo >= 0 && blur_sigma_hi >= blur_sigma_lo &&
                noise_sigma_lo >= 0 && noise_sigma_hi >= noise_sigma_lo &&
                contrast_jitter >= 0,
            "degradation ranges must be non-negative");
    require(factor >= 1 && (factor & (factor - 1)) == 0,
            "downsample factor must be a power of two, got ", factor);
  }
};

struct AugmentParams {
  float scale_lo = 0.9f, scale_hi = 1.1f;
  float rot_deg = 30.0f;
  float translate_px_at_128 = 20.0f;  // scaled by side/128
};

// Row-major 2x3 affine: p' = [a b; d e] p + [c; f]
struct Affine2 {
  float a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;

  Point2 apply(Point2 p) const {
    return {a * p.x + b * p.y + c, d * p.x + e * p.y + f};
  }
  static Affine2 identity() { return {}; }
};

namespace detail {

inline float smoothstep(float e0, float e1, float x) {
  float t = (x - e0) / (e1 - e0);
  if (t < 0) t = 0;
  if (t > 1) t = 1;
  return t * t * (3.0f - 2.0f * t);
}

struct Rot {
  float c, s;
  explicit Rot(float rad) : c(std::cos(rad)), s(std::sin(rad)) {}
  Point2 apply(Point2 p) const { return {c * p.x - s * p.y, s * p.x + c * p.y}; }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Procedural face renderer. Deterministic per seed; landmarks are the exact
// generative coordinates, not re-detected.
// ---------------------------------------------------------------------------

inline FaceSample generate_face(std::uint64_t seed, const SynthConfig& cfg = {}) {
  require(cfg.num_landmarks == 5, "renderer draws the 5-point convention");
  const int S = cfg.image_size;
  Rng rng(derive_seed(seed, 0xface));

  const float fS = float(S);
  const Point2 center{fS * (0.5f + float(rng.uniform(-0.08, 0.08))),
                      fS * (0.5f + float(rng.uniform(-0.06, 0.10)))};
  const float rx = fS * float(rng.uniform(0.24, 0.33));
  const float ry = fS * float(rng.uniform(0.28, 0.40));
  const float theta = float(rng.uniform(-25.0, 25.0)) * 3.14159265358979f / 180.0f;
  const detail::Rot rot(theta);

  // colors in [-1,1]
  const float skin_r = float(rng.uniform(0.2, 0.8));
  const float skin_g = skin_r - float(rng.uniform(0.15, 0.35));
  const float skin_b = skin_g - float(rng.uniform(0.15, 0.35));
  const float bg_a[3] = {float(rng.uniform(-0.9, 0.1)), float(rng.uniform(-0.9, 0.1)),
                         float(rng.uniform(-0.9, 0.3))};
  const float bg_b[3] = {float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5)),
                         float(rng.uniform(-0.5, 0.7))};
  const float bg_ang = float(rng.uniform(0.0, 6.2831853));
  const float bgc = std::cos(bg_ang), bgs = std::sin(bg_ang);

  // feature geometry in the face frame (x right, y down, origin face center)
  const float eye_dx = rx * float(rng.uniform(0.38, 0.50));
  const float eye_dy = -ry * float(rng.uniform(0.18, 0.30));
  const float eye_r = rx * float(rng.uniform(0.13, 0.18));
  const float nose_dy = ry * float(rng.uniform(0.05, 0.18));
  const float mouth_dy = ry * float(rng.uniform(0.45, 0.60));
  const float mouth_hw = rx * float(rng.uniform(0.35, 0.50));

  const Point2 f_leye{-eye_dx, eye_dy};
  const Point2 f_reye{eye_dx, eye_dy};
  const Point2 f_nose{0.0f, nose_dy};
  const Point2 f_lmouth{-mouth_hw, mouth_dy};
  const Point2 f_rmouth{mouth_hw, mouth_dy};

  auto to_image = [&](Point2 p) {
    Point2 q = rot.apply(p);
    return Point2{q.x + center.x, q.y + center.y};
  };

  FaceSample out;
  out.image = Tensor<float>({3, S, S});
  out.landmarks = {to_image(f_leye), to_image(f_reye), to_image(f_nose),
                   to_image(f_lmouth), to_image(f_rmouth)};
  out.visibility.assign(5, 1);
  for (int i = 0; i < 5; ++i) {
    const Point2& p = out.landmarks[std::size_t(i)];
    if (p.x < 0 || p.y < 0 || p.x > fS - 1 || p.y > fS - 1) out.visibility[std::size_t(i)] = 0;
  }

  // axis-aligned bbox of the rotated head ellipse
  const float bw = 2.0f * std::sqrt(rx * rx * rot.c * rot.c + ry * ry * rot.s * rot.s);
  const float bh = 2.0f * std::sqrt(rx * rx * rot.s * rot.s + ry * ry * rot.c * rot.c);
  out.bbox = {center.x - bw * 0.5f, center.y - bh * 0.5f, bw, bh};

  const float edge = 1.2f;  // anti-alias band in pixels
  const float mouth_ry = mouth_hw * 0.30f;
  const float pupil_r = eye_r * 0.45f;

  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const float px = float(x), py = float(y);
      // background gradient
      const float t = ((px * bgc + py * bgs) / fS + 1.0f) * 0.5f;
      float r = bg_a[0] + (bg_b[0] - bg_a[0]) * t;
      float g = bg_a[1] + (bg_b[1] - bg_a[1]) * t;
      float b = bg_a[2] + (bg_b[2] - bg_a[2]) * t;

      // face frame coords
      const float ux = px - center.x, uy = py - center.y;
      const float lx = rot.c * ux + rot.s * uy;
      const float ly = -rot.s * ux + rot.c * uy;

      // head ellipse with soft edge and a little radial shading
      const float q = std::sqrt((lx / rx) * (lx / rx) + (ly / ry) * (ly / ry));
      const float head = 1.0f - detail::smoothstep(1.0f - edge / rx, 1.0f + edge / rx, q);
      if (head > 0.0f) {
        const float shade = 1.0f - 0.30f * q * q;
        const float fr = skin_r * shade, fg = skin_g * shade, fb = skin_b * shade;
        r += (fr - r) * head;
        g += (fg - g) * head;
        b += (fb - b) * head;

        auto dark_ellipse = [&](Point2 c0, float erx, float ery, float dr, float dg,
                                float db) {
          const float ex = lx - c0.x, ey = ly - c0.y;
          const float eq = std::sqrt((ex / erx) * (ex / erx) + (ey / ery) * (ey / ery));
          const float cov = 1.0f - detail::smoothstep(1.0f - edge / erx, 1.0f + edge / erx, eq);
          if (cov > 0.0f) {
            r += (dr - r) * cov;
            g += (dg - g) * cov;
            b += (db - b) * cov;
          }
        };
        // eyes: sclera then pupil
        dark_ellipse(f_leye, eye_r, eye_r * 0.62f, 0.9f, 0.9f, 0.88f);
        dark_ellipse(f_reye, eye_r, eye_r * 0.62f, 0.9f, 0.9f, 0.88f);
        dark_ellipse(f_leye, pupil_r, pupil_r, -0.85f, -0.85f, -0.8f);
        dark_ellipse(f_reye, pupil_r, pupil_r, -0.85f, -0.85f, -0.8f);
        // nose: thin wedge ending at the tip
        {
          const float ny0 = eye_dy + eye_r, ny1 = nose_dy;
          if (ly >= ny0 && ly <= ny1 + edge) {
            const float w =
                0.10f * rx * (0.4f + 0.6f * (ly - ny0) / std::max(1.0f, ny1 - ny0));
            const float cov = 1.0f - detail::smoothstep(w - edge * 0.5f, w + edge * 0.5f,
                                                        std::abs(lx));
            const float tip = 1.0f - detail::smoothstep(ny1 - edge, ny1 + edge, ly);
            const float k = cov * tip * 0.6f;
            r += (skin_r * 0.55f - r) * k;
            g += (skin_g * 0.55f - g) * k;
            b += (skin_b * 0.55f - b) * k;
          }
        }
        // mouth
        dark_ellipse(Point2{0.0f, mouth_dy}, mouth_hw, mouth_ry, -0.1f, -0.75f, -0.7f);
      }
      out.image.at3(0, y, x) = std::clamp(r, -1.0f, 1.0f);
      out.image.at3(1, y, x) = std::clamp(g, -1.0f, 1.0f);
      out.image.at3(2, y, x) = std::clamp(b, -1.0f, 1.0f);
    }
  }
  return out;
}

// In-plane rotation, degrees; the renderer's own pose parameter, re-derived
// from the eye line so property tests can cross-check geometry.
inline float pose_of(const FaceSample& s) {
  const Point2& l = s.landmarks[0];
  const Point2& r = s.landmarks[1];
  return std::atan2(r.y - l.y, r.x - l.x) * 180.0f / 3.14159265358979f;
}

// ---------------------------------------------------------------------------
// Degradation pipelines.
// ---------------------------------------------------------------------------

namespace detail {

// separable gaussian with replicate borders: preserves the global sum
inline Tensor<float> gaussian_blur(const Tensor<float>& img, float sigma) {
  if (sigma < 1e-6f) return img;
  const int radius = std::max(1, int(std::ceil(3.0f * sigma)));
  std::vector<float> k(std::size_t(2 * radius + 1));
  float sum = 0.0f;
  for (int i = -radius; i <= radius; ++i) {
    k[std::size_t(i + radius)] = std::exp(-float(i * i) / (2.0f * sigma * sigma));
    sum += k[std::size_t(i + radius)];
  }
  for (auto& v : k) v /= sum;

  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> tmp({C, H, W}), out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i)
          acc += k[std::size_t(i + radius)] * img.at3(c, y, std::clamp(x + i, 0, W - 1));
        tmp.at3(c, y, x) = acc;
      }
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i)
          acc += k[std::size_t(i + radius)] * tmp.at3(c, std::clamp(y + i, 0, H - 1), x);
        out.at3(c, y, x) = acc;
      }
  return out;
}

inline Tensor<float> mean_pool2(const Tensor<float>& img) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  require(H % 2 == 0 && W % 2 == 0, "mean_pool2 needs even dims, got ", shape_str(img));
  Tensor<float> out({C, H / 2, W / 2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int x = 0; x < W / 2; ++x)
        out.at3(c, y, x) = 0.25f * (img.at3(c, 2 * y, 2 * x) + img.at3(c, 2 * y, 2 * x + 1) +
                                    img.at3(c, 2 * y + 1, 2 * x) +
                                    img.at3(c, 2 * y + 1, 2 * x + 1));
  return out;
}

}  // namespace detail

// The paper's F: successive (gaussian sigma=0.5, 2x2 average pool) stages
// down to side/factor. Replicate-border blur keeps the global mean exact.
inline Tensor<float> subsample_F(const Tensor<float>& hr, int factor = 4) {
  require(factor >= 1 && (factor & (factor - 1)) == 0, "factor must be a power of two");
  require(hr.dim(1) % factor == 0 && hr.dim(2) % factor == 0,
          "image side not divisible by factor ", factor, ": ", shape_str(hr));
  Tensor<float> img = hr;
  for (int f = factor; f > 1; f /= 2)
    img = detail::mean_pool2(detail::gaussian_blur(img, 0.5f));
  return img;
}

// Surrogate for the "real" LR pool: randomized blur and contrast jitter at
// HR scale, F-style downsample, then additive sensor noise at LR scale.
// Noise injected before the pooling chain is attenuated ~10x and leaves the
// two LR distributions statistically inseparable, so it goes in last. With
// all-zero ranges this reduces to subsample_F exactly.
inline Tensor<float> degrade_realistic(const Tensor<float>& hr,
                                       const DegradationParams& params,
                                       std::uint64_t seed) {
  params.validate();
  Rng rng(derive_seed(seed, 0xde6));
  const float sigma = float(rng.uniform(params.blur_sigma_lo, params.blur_sigma_hi));
  const float noise = float(rng.uniform(params.noise_sigma_lo, params.noise_sigma_hi));
  const float contrast =
      float(rng.uniform(1.0 - params.contrast_jitter, 1.0 + params.contrast_jitter));

  Tensor<float> img = detail::gaussian_blur(hr, sigma);
  if (contrast != 1.0f) {
    double mean = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) mean += img[i];
    mean /= double(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
      img[i] = float(mean + contrast * (img[i] - float(mean)));
  }
  img = subsample_F(img, params.factor);
  if (noise > 0.0f)
    for (std::size_t i = 0; i < img.size(); ++i)
      img[i] += noise * float(rng.normal());
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], -1.0f, 1.0f);
  return img;
}

// Normalized high-frequency energy: mean squared deviation from the
// 4-neighbor mean, divided by the pixel variance. White sensor noise pushes
// this statistic well above anything subsample_F produces; the frozen
// threshold 0.11 separates the two LR pools.
inline double hf_noise_statistic(const Tensor<float>& img) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  double acc = 0.0;
  int n = 0;
  for (int c = 0; c < C; ++c)
    for (int y = 1; y < H - 1; ++y)
      for (int x = 1; x < W - 1; ++x, ++n) {
        const float m = 0.25f * (img.at3(c, y - 1, x) + img.at3(c, y + 1, x) +
                                 img.at3(c, y, x - 1) + img.at3(c, y, x + 1));
        const double d = double(img.at3(c, y, x)) - m;
        acc += d * d;
      }
  double mean = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) mean += img[i];
  mean /= double(img.size());
  double var = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = img[i] - mean;
    var += d * d;
  }
  var /= double(img.size());
  return (acc / n) / (var + 1e-6);
}

constexpr double kDegradationThreshold = 0.11;

// ---------------------------------------------------------------------------
// Landmark helpers.
// ---------------------------------------------------------------------------

inline std::vector<Point2> downsample_landmarks(const std::vector<Point2>& lms,
                                                float factor) {
  require(factor >= 1.0f, "downsample factor must be >= 1");
  std::vector<Point2> out(lms.size());
  for (std::size_t i = 0; i < lms.size(); ++i)
    out[i] = {lms[i].x / factor, lms[i].y / factor};
  return out;
}

// Derives the LR-annotated sample for a given LR image of the same face.
inline FaceSample to_lr_sample(const FaceSample& hr, Tensor<float> lr_image) {
  const float factor = float(hr.image.dim(1)) / float(lr_image.dim(1));
  FaceSample out;
  out.landmarks = downsample_landmarks(hr.landmarks, factor);
  out.visibility = hr.visibility;
  out.bbox = {hr.bbox[0] / factor, hr.bbox[1] / factor, hr.bbox[2] / factor,
              hr.bbox[3] / factor};
  out.image = std::move(lr_image);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation: one similarity warp applied to image, landmarks and bbox.
// ---------------------------------------------------------------------------

inline Tensor<float> warp_bilinear(const Tensor<float>& img, const Affine2& m,
                                   float fill = -1.0f) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  // invert the forward map
  const float det = m.a * m.e - m.b * m.d;
  require(std::abs(det) > 1e-12f, "degenerate warp");
  const float ia = m.e / det, ib = -m.b / det, id = -m.d / det, ie = m.a / det;
  const float ic = -(ia * m.c + ib * m.f), iff = -(id * m.c + ie * m.f);
  Tensor<float> out({C, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float sx = ia * float(x) + ib * float(y) + ic;
      const float sy = id * float(x) + ie * float(y) + iff;
      const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
      const float fx = sx - float(x0), fy = sy - float(y0);
      for (int c = 0; c < C; ++c) {
        auto pix = [&](int xx, int yy) {
          return (xx < 0 || yy < 0 || xx >= W || yy >= H) ? fill : img.at3(c, yy, xx);
        };
        const float v = (1 - fx) * (1 - fy) * pix(x0, y0) + fx * (1 - fy) * pix(x0 + 1, y0) +
                        (1 - fx) * fy * pix(x0, y0 + 1) + fx * fy * pix(x0 + 1, y0 + 1);
        out.at3(c, y, x) = v;
      }
    }
  return out;
}

inline Affine2 sample_augment_transform(int side, const AugmentParams& p, Rng& rng) {
  const float s = float(rng.uniform(p.scale_lo, p.scale_hi));
  const float th = float(rng.uniform(-p.rot_deg, p.rot_deg)) * 3.14159265358979f / 180.0f;
  const float tb = p.translate_px_at_128 * float(side) / 128.0f;
  const float tx = float(rng.uniform(-tb, tb));
  const float ty = float(rng.uniform(-tb, tb));
  const float c = float(side - 1) * 0.5f;
  Affine2 m;
  m.a = s * std::cos(th);
  m.b = -s * std::sin(th);
  m.d = s * std::sin(th);
  m.e = s * std::cos(th);
  // rotate/scale about the image center, then translate
  m.c = c - (m.a * c + m.b * c) + tx;
  m.f = c - (m.d * c + m.e * c) + ty;
  return m;
}

inline FaceSample apply_warp(const FaceSample& in, const Affine2& m) {
  FaceSample out;
  out.image = warp_bilinear(in.image, m);
  out.landmarks.resize(in.landmarks.size());
  out.visibility = in.visibility;
  const float lim = float(in.image.dim(1) - 1);
  for (std::size_t i = 0; i < in.landmarks.size(); ++i) {
    out.landmarks[i] = m.apply(in.landmarks[i]);
    if (out.landmarks[i].x < 0 || out.landmarks[i].y < 0 || out.landmarks[i].x > lim ||
        out.landmarks[i].y > lim)
      out.visibility[i] = 0;
  }
  const Point2 c0 = m.apply({in.bbox[0], in.bbox[1]});
  const Point2 c1 = m.apply({in.bbox[0] + in.bbox[2], in.bbox[1]});
  const Point2 c2 = m.apply({in.bbox[0], in.bbox[1] + in.bbox[3]});
  const Point2 c3 = m.apply({in.bbox[0] + in.bbox[2], in.bbox[1] + in.bbox[3]});
  const float x0 = std::min(std::min(c0.x, c1.x), std::min(c2.x, c3.x));
  const float y0 = std::min(std::min(c0.y, c1.y), std::min(c2.y, c3.y));
  const float x1 = std::max(std::max(c0.x, c1.x), std::max(c2.x, c3.x));
  const float y1 = std::max(std::max(c0.y, c1.y), std::max(c2.y, c3.y));
  out.bbox = {x0, y0, x1 - x0, y1 - y0};
  return out;
}

inline FaceSample augment(const FaceSample& in, std::uint64_t seed,
                          const AugmentParams& p = {}) {
  Rng rng(derive_seed(seed, 0xa09));
  return apply_warp(in, sample_augment_transform(in.image.dim(1), p, rng));
}

}  // namespace lrfd
