#include "vlu/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vlu/errors.hpp"
#include "vlu/util.hpp"

namespace vlu {

RasterImage::RasterImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * channels, fill) {}

namespace {

// Scales one sample of any OpenCV depth we accept to [0, 1].
double unit_sample(const cv::Mat& m, int y, int x, int c) {
  const int cn = m.channels();
  switch (m.depth()) {
    case CV_8U:
      return m.ptr<std::uint8_t>(y)[x * cn + c] / 255.0;
    case CV_16U:
      return m.ptr<std::uint16_t>(y)[x * cn + c] / 65535.0;
    case CV_32F:
      return static_cast<double>(m.ptr<float>(y)[x * cn + c]);
    default:
      throw ImageError("unsupported image sample depth");
  }
}

std::uint8_t to_byte(double unit) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

}  // namespace

RasterImage decode_image(std::string_view bytes) {
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<char*>(bytes.data()));
  const cv::Mat m = cv::imdecode(buf, cv::IMREAD_UNCHANGED | cv::IMREAD_IGNORE_ORIENTATION);
  if (m.empty()) throw ImageError("cannot decode image");

  RasterImage img(m.cols, m.rows);
  const int cn = m.channels();
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      double rgb[3];
      double alpha = 1.0;
      if (cn == 1 || cn == 2) {
        rgb[0] = rgb[1] = rgb[2] = unit_sample(m, y, x, 0);
        if (cn == 2) alpha = unit_sample(m, y, x, 1);
      } else {
        // OpenCV stores BGR(A).
        rgb[0] = unit_sample(m, y, x, 2);
        rgb[1] = unit_sample(m, y, x, 1);
        rgb[2] = unit_sample(m, y, x, 0);
        if (cn == 4) alpha = unit_sample(m, y, x, 3);
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = to_byte(rgb[c] * alpha + (1.0 - alpha));
    }
  }
  return img;
}

RasterImage load_image(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    throw ImageError("cannot read image " + path.string());
  }
  try {
    return decode_image(bytes);
  } catch (const ImageError&) {
    throw ImageError("cannot decode image " + path.string());
  }
}

std::string encode_png(const RasterImage& img) {
  if (!img.valid()) throw ImageError("cannot encode an invalid image");
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width; ++x) {
      row[3 * x + 0] = img.at(x, y, 2);
      row[3 * x + 1] = img.at(x, y, 1);
      row[3 * x + 2] = img.at(x, y, 0);
    }
  }
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", m, out)) throw ImageError("PNG encoding failed");
  return std::string(out.begin(), out.end());
}

void save_png(const RasterImage& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png(img));
}

}  // namespace vlu
