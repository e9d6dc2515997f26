#pragma once

#include <opencv2/imgcodecs.hpp>

#include "moslam/geometry.hpp"

namespace moslam {

inline void save_depth_png16(const DepthMap& d, double depth_scale, const std::string& path) {
  cv::Mat m(d.height(), d.width(), CV_16UC1);
  for (int y = 0; y < d.height(); ++y)
    for (int x = 0; x < d.width(); ++x) {
      const double raw = d.at(x, y) * depth_scale;
      m.at<uint16_t>(y, x) = static_cast<uint16_t>(std::min(65535.0, std::max(0.0, raw + 0.5)));
    }
  if (!cv::imwrite(path, m)) throw IoError("cannot write depth PNG: " + path);
}

inline DepthMap load_depth_png16(const std::string& path, double depth_scale) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read depth PNG: " + path);
  if (m.type() != CV_16UC1) throw FormatError("depth PNG is not 16-bit single channel: " + path);
  DepthMap d(m.cols, m.rows, 0.0f);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      d.at(x, y) = static_cast<float>(m.at<uint16_t>(y, x) / depth_scale);
  return d;
}

inline void save_color_png(const ColorMap& c, const std::string& path) {
  cv::Mat m(c.height(), c.width(), CV_8UC3);
  for (int y = 0; y < c.height(); ++y)
    for (int x = 0; x < c.width(); ++x) {
      const Rgb& p = c.at(x, y);
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(p.b, p.g, p.r);
    }
  if (!cv::imwrite(path, m)) throw IoError("cannot write color PNG: " + path);
}

inline ColorMap load_color_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot read color PNG: " + path);
  ColorMap c(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const cv::Vec3b& p = m.at<cv::Vec3b>(y, x);
      c.at(x, y) = Rgb{p[2], p[1], p[0]};
    }
  return c;
}

inline void save_label_png(const Image<uint8_t>& labels, const std::string& path) {
  cv::Mat m(labels.height(), labels.width(), CV_8UC1);
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) m.at<uint8_t>(y, x) = labels.at(x, y);
  if (!cv::imwrite(path, m)) throw IoError("cannot write label PNG: " + path);
}

inline Image<uint8_t> load_label_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read label PNG: " + path);
  Image<uint8_t> labels(m.cols, m.rows, 0);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) labels.at(x, y) = m.at<uint8_t>(y, x);
  return labels;
}

}  // namespace moslam
