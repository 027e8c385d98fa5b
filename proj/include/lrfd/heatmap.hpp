#pragma once

#include <cmath>
#include <vector>

#include "lrfd/synth.hpp"
#include "lrfd/tensor.hpp"

namespace lrfd {

// Heatmap stacks are [N+1, H, W] (or batched [B, N+1, H, W]): N unit-peak
// Gaussian keypoint channels plus one background channel defined as
// 1 - max over keypoint channels. Invisible landmarks give all-zero
// channels.

struct DecodedLandmarks {
  std::vector<Point2> landmarks;
  std::vector<std::uint8_t> visibility;
  std::vector<float> confidence;  // channel peak values
};

constexpr float kDecodeVisibleThreshold = 0.1f;

// The Gaussian is centered on the nearest in-bounds integer pixel so the
// peak is exactly 1.0 there.
inline Tensor<float> encode_heatmaps(const std::vector<Point2>& landmarks,
                                     const std::vector<std::uint8_t>& visibility,
                                     int size, float sigma = 2.0f) {
  require(size >= 8, "heatmap size must be >= 8, got ", size);
  require(sigma > 0.0f, "sigma must be positive");
  require(landmarks.size() == visibility.size(), "landmark/visibility count mismatch");
  const int N = int(landmarks.size());
  Tensor<float> stack({N + 1, size, size}, 0.0f);
  const float inv = 1.0f / (2.0f * sigma * sigma);
  for (int i = 0; i < N; ++i) {
    if (!visibility[std::size_t(i)]) continue;
    const Point2& p = landmarks[std::size_t(i)];
    require(p.x >= 0 && p.y >= 0 && p.x <= float(size - 1) && p.y <= float(size - 1),
            "visible landmark ", i, " outside image: (", p.x, ",", p.y, ")");
    const int cx = std::clamp(int(std::floor(p.x + 0.5f)), 0, size - 1);
    const int cy = std::clamp(int(std::floor(p.y + 0.5f)), 0, size - 1);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const float dx = float(x - cx), dy = float(y - cy);
        stack.at3(i, y, x) = std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float m = 0.0f;
      for (int i = 0; i < N; ++i) m = std::max(m, stack.at3(i, y, x));
      stack.at3(N, y, x) = std::clamp(1.0f - m, 0.0f, 1.0f);
    }
  return stack;
}

// Argmax (first index on ties) plus a quarter-pixel shift toward the
// strictly larger neighbor per axis. Peaks below 0.1 are marked invisible.
inline DecodedLandmarks decode_heatmaps(const Tensor<float>& stack) {
  require(stack.rank() == 3 && stack.dim(0) >= 2, "decode wants [N+1,H,W], got ",
          shape_str(stack));
  const int N = stack.dim(0) - 1, H = stack.dim(1), W = stack.dim(2);
  DecodedLandmarks out;
  out.landmarks.resize(std::size_t(N));
  out.visibility.resize(std::size_t(N));
  out.confidence.resize(std::size_t(N));
  for (int i = 0; i < N; ++i) {
    int ax = 0, ay = 0;
    float peak = stack.at3(i, 0, 0);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (stack.at3(i, y, x) > peak) {
          peak = stack.at3(i, y, x);
          ay = y;
          ax = x;
        }
    float fx = float(ax), fy = float(ay);
    const float left = ax > 0 ? stack.at3(i, ay, ax - 1) : -1.0f;
    const float right = ax < W - 1 ? stack.at3(i, ay, ax + 1) : -1.0f;
    if (right > left) fx += 0.25f;
    else if (left > right) fx -= 0.25f;
    const float up = ay > 0 ? stack.at3(i, ay - 1, ax) : -1.0f;
    const float down = ay < H - 1 ? stack.at3(i, ay + 1, ax) : -1.0f;
    if (down > up) fy += 0.25f;
    else if (up > down) fy -= 0.25f;
    out.landmarks[std::size_t(i)] = {fx, fy};
    out.confidence[std::size_t(i)] = peak;
    out.visibility[std::size_t(i)] = peak >= kDecodeVisibleThreshold ? 1 : 0;
  }
  return out;
}

// Batched [B, N+1, H, W] target construction for training.
inline Tensor<float> stack_heatmaps(const std::vector<Tensor<float>>& stacks) {
  require(!stacks.empty(), "no heatmaps to stack");
  const int C = stacks[0].dim(0), H = stacks[0].dim(1), W = stacks[0].dim(2);
  Tensor<float> out({int(stacks.size()), C, H, W});
  for (std::size_t b = 0; b < stacks.size(); ++b) {
    require(stacks[b].shape() == stacks[0].shape(), "heatmap shape mismatch in batch");
    std::copy(stacks[b].data(), stacks[b].data() + stacks[b].size(),
              out.data() + b * stacks[0].size());
  }
  return out;
}

}  // namespace lrfd
