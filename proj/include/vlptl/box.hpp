#pragma once

#include <algorithm>

namespace vlptl {

struct Box {
    double x_min = 0;
    double y_min = 0;
    double x_max = 0;
    double y_max = 0;

    [[nodiscard]] double width() const { return x_max - x_min; }
    [[nodiscard]] double height() const { return y_max - y_min; }
    [[nodiscard]] double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    [[nodiscard]] bool valid() const { return x_min < x_max && y_min < y_max; }

    friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0 || ih <= 0) {
        return 0.0;
    }
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace vlptl
