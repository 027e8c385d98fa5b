#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lrfd/png_io.hpp"
#include "lrfd/synth.hpp"

namespace lrfd {

// Split layout: <dir>/annotations.txt plus one PNG per sample. Annotation
// lines are
//   filename x1 y1 v1 ... xK yK vK bx by bw bh
// with invisible points written as "-1 -1 0". The -1 sentinel exists only
// in this format; loaded samples carry (0,0) with visibility 0.

inline std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", double(v));
  return buf;
}

inline void write_split(const std::string& dir, const std::vector<FaceSample>& samples,
                        const std::string& stem = "face") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream ann(dir + "/annotations.txt");
  require(ann.good(), "cannot write annotations in ", dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06zu.png", stem.c_str(), i);
    write_png(dir + "/" + name, samples[i].image);
    ann << name;
    for (int k = 0; k < samples[i].num_landmarks(); ++k) {
      if (samples[i].visibility[std::size_t(k)])
        ann << " " << format_float(samples[i].landmarks[std::size_t(k)].x) << " "
            << format_float(samples[i].landmarks[std::size_t(k)].y) << " 1";
      else
        ann << " -1 -1 0";
    }
    for (float v : samples[i].bbox) ann << " " << format_float(v);
    ann << "\n";
  }
}

inline std::vector<FaceSample> read_split(const std::string& dir) {
  std::ifstream ann(dir + "/annotations.txt");
  require(ann.good(), "cannot read annotations in ", dir);
  std::vector<FaceSample> out;
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string name;
    std::vector<float> vals;
    is >> name;
    float v;
    while (is >> v) vals.push_back(v);
    require(vals.size() >= 7 && (vals.size() - 4) % 3 == 0,
            "bad annotation line (", vals.size(), " numbers): ", line);
    const int K = int((vals.size() - 4) / 3);
    FaceSample s;
    s.image = read_png(dir + "/" + name);
    for (int k = 0; k < K; ++k) {
      const bool vis = vals[std::size_t(3 * k + 2)] != 0.0f;
      s.visibility.push_back(vis ? 1 : 0);
      s.landmarks.push_back(vis ? Point2{vals[std::size_t(3 * k)], vals[std::size_t(3 * k + 1)]}
                                : Point2{0.0f, 0.0f});
    }
    s.bbox = {vals[vals.size() - 4], vals[vals.size() - 3], vals[vals.size() - 2],
              vals[vals.size() - 1]};
    out.push_back(std::move(s));
  }
  return out;
}

inline std::size_t split_size(const std::string& dir) {
  std::ifstream ann(dir + "/annotations.txt");
  require(ann.good(), "cannot read annotations in ", dir);
  std::size_t n = 0;
  std::string line;
  while (std::getline(ann, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n;
}

}  // namespace lrfd
