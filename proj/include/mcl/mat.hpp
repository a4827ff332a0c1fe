#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcl {

// Dense row-major matrix of doubles. Scalars are 1x1, rows 1xc, columns rx1.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}
    Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {
        if (a.size() != static_cast<size_t>(r) * c)
            throw std::invalid_argument("Mat: data size " + std::to_string(a.size()) +
                                        " != " + std::to_string(r) + "x" + std::to_string(c));
    }

    static Mat scalar(double v) { return Mat(1, 1, {v}); }
    static Mat row(std::vector<double> v) {
        const int c = static_cast<int>(v.size());
        return Mat(1, c, std::move(v));
    }
    static Mat col(std::vector<double> v) {
        const int r = static_cast<int>(v.size());
        return Mat(r, 1, std::move(v));
    }

    size_t size() const { return a.size(); }
    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
    double* row_ptr(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const double* row_ptr(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline std::string shape_str(const Mat& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

} // namespace mcl
