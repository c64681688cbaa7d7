#pragma once

#include <opencv2/core.hpp>

#include <filesystem>

namespace vlptl {

// 8-bit 3-channel image in OpenCV's BGR order.
using Image = cv::Mat;

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
Image resize_image(const Image& image, int height, int width);

}  // namespace vlptl
