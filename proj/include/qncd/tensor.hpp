#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qncd {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape &shape);

/// Raised by every tensor operation whose operands have incompatible shapes.
/// The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string &op, const Shape &a, const Shape &b);
    explicit ShapeError(const std::string &what) : std::invalid_argument(what) {}
};

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::vector<double> values);

    const Shape &shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    bool empty() const noexcept { return data_.empty(); }

    /// Rows and columns of a rank-2 tensor; a rank-1 tensor is one row.
    std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    double &operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double &at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols(), cols()}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double> &data() const noexcept { return data_; }

    Tensor reshaped(Shape shape) const;
    void fill(double v);

    bool operator==(const Tensor &) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

Tensor matmul(const Tensor &a, const Tensor &b);
/// a^T * b without materializing the transpose.
Tensor matmul_tn(const Tensor &a, const Tensor &b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor &a, const Tensor &b);
Tensor transpose(const Tensor &a);

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double s);
/// Adds a row vector to every row of a rank-2 tensor.
Tensor add_row(const Tensor &a, std::span<const double> row);

double dot(const Tensor &a, const Tensor &b);
double squared_norm(const Tensor &a);
double cosine(const Tensor &a, const Tensor &b);

/// Reductions over axis 0 of a rank-2 tensor (per-column statistics).
std::vector<double> column_mean(const Tensor &a);
/// Population standard deviation per column.
std::vector<double> column_std(const Tensor &a);
double mean(const Tensor &a);
double stddev(const Tensor &a);

bool all_finite(const Tensor &a) noexcept;

}  // namespace qncd
