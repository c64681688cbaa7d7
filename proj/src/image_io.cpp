#include "vlptl/image_io.hpp"

#include "vlptl/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace vlptl {

Image read_png(const std::filesystem::path& path) {
    Image img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) {
        throw FormatError("cannot decode image " + path.string());
    }
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.type() != CV_8UC3) {
        throw FormatError("write_png expects an 8-bit 3-channel image");
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    // Fixed compression keeps output byte-identical across runs.
    if (!cv::imwrite(path.string(), image, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
        throw FormatError("cannot write image " + path.string());
    }
}

Image resize_image(const Image& image, int height, int width) {
    if (image.rows == height && image.cols == width) {
        return image;
    }
    Image out;
    const bool shrinking = height < image.rows && width < image.cols;
    cv::resize(image, out, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    return out;
}

}  // namespace vlptl
