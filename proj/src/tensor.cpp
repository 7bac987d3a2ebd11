#include "qncd/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace qncd {

namespace {

std::size_t product(const Shape &shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const char *op, const Tensor &a, const Tensor &b)
{
    if (a.shape() != b.shape())
        throw ShapeError(op, a.shape(), b.shape());
}

void require_matrix(const char *op, const Tensor &a, const Tensor &b)
{
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError(op, a.shape(), b.shape());
}

}  // namespace

std::string to_string(const Shape &shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

ShapeError::ShapeError(const std::string &op, const Shape &a, const Shape &b)
    : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b))
{
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill)
{
    if (shape_.empty())
        throw ShapeError("Tensor: empty shape");
    for (auto d : shape_)
        if (d == 0)
            throw ShapeError("Tensor: zero-length axis in " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_.empty() || product(shape_) != data_.size())
        throw ShapeError("Tensor: shape " + to_string(shape_) + " does not hold " + std::to_string(data_.size()) +
                         " values");
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    std::vector<double> data;
    std::size_t ncols = rows.begin()->size();
    for (const auto &r : rows) {
        if (r.size() != ncols)
            throw ShapeError("Tensor::matrix: ragged rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), ncols}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

Tensor matmul(const Tensor &a, const Tensor &b)
{
    require_matrix("matmul", a, b);
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul", a.shape(), b.shape());
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double *o = &out[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0)
                continue;
            const double *br = b.data().data() + p * m;
            for (std::size_t j = 0; j < m; ++j)
                o[j] += av * br[j];
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor &a, const Tensor &b)
{
    require_matrix("matmul_tn", a, b);
    if (a.dim(0) != b.dim(0))
        throw ShapeError("matmul_tn", a.shape(), b.shape());
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out({k, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double *br = b.data().data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0)
                continue;
            double *o = &out[p * m];
            for (std::size_t j = 0; j < m; ++j)
                o[j] += av * br[j];
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor &a, const Tensor &b)
{
    require_matrix("matmul_nt", a, b);
    if (a.dim(1) != b.dim(1))
        throw ShapeError("matmul_nt", a.shape(), b.shape());
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double *ar = a.data().data() + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double *br = b.data().data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += ar[p] * br[p];
            out[i * m + j] = acc;
        }
    }
    return out;
}

Tensor transpose(const Tensor &a)
{
    if (a.rank() != 2)
        throw ShapeError("transpose: rank-2 tensor required, got " + to_string(a.shape()));
    Tensor out({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j)
            out.at(j, i) = a.at(i, j);
    return out;
}

Tensor add(const Tensor &a, const Tensor &b)
{
    require_same_shape("add", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += b[i];
    return out;
}

Tensor sub(const Tensor &a, const Tensor &b)
{
    require_same_shape("sub", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] -= b[i];
    return out;
}

Tensor mul(const Tensor &a, const Tensor &b)
{
    require_same_shape("mul", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor &a, double s)
{
    Tensor out = a;
    for (auto &v : out.values())
        v *= s;
    return out;
}

Tensor add_row(const Tensor &a, std::span<const double> row)
{
    if (a.cols() != row.size())
        throw ShapeError("add_row", a.shape(), Shape{row.size()});
    Tensor out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto o = out.row(r);
        for (std::size_t j = 0; j < o.size(); ++j)
            o[j] += row[j];
    }
    return out;
}

double dot(const Tensor &a, const Tensor &b)
{
    require_same_shape("dot", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

double squared_norm(const Tensor &a)
{
    double acc = 0.0;
    for (double v : a.values())
        acc += v * v;
    return acc;
}

double cosine(const Tensor &a, const Tensor &b)
{
    require_same_shape("cosine", a, b);
    const double na = squared_norm(a), nb = squared_norm(b);
    if (na == 0.0 || nb == 0.0)
        throw std::domain_error("cosine: zero-norm operand");
    return dot(a, b) / std::sqrt(na * nb);
}

std::vector<double> column_mean(const Tensor &a)
{
    if (a.rank() != 2)
        throw ShapeError("column_mean: rank-2 tensor required, got " + to_string(a.shape()));
    std::vector<double> m(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < a.cols(); ++j)
            m[j] += a.at(r, j);
    for (auto &v : m)
        v /= static_cast<double>(a.rows());
    return m;
}

std::vector<double> column_std(const Tensor &a)
{
    const auto m = column_mean(a);
    std::vector<double> s(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double d = a.at(r, j) - m[j];
            s[j] += d * d;
        }
    for (auto &v : s)
        v = std::sqrt(v / static_cast<double>(a.rows()));
    return s;
}

double mean(const Tensor &a)
{
    double acc = 0.0;
    for (double v : a.values())
        acc += v;
    return acc / static_cast<double>(a.size());
}

double stddev(const Tensor &a)
{
    const double m = mean(a);
    double acc = 0.0;
    for (double v : a.values())
        acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

bool all_finite(const Tensor &a) noexcept
{
    for (double v : a.values())
        if (!std::isfinite(v))
            return false;
    return true;
}

}  // namespace qncd
