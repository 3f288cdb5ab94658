#include "sleepscore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "kernels.hpp"
#include "sleepscore/rng.hpp"

namespace sleepscore {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (const auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            os << ',';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    for (const auto d : shape) {
        if (d <= 0) {
            throw std::invalid_argument("tensor: non-positive dimension in " + shape_str(shape));
        }
    }
}

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> values,
                                      bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) {
        node->grad.assign(node->values.size(), 0.0);
    }
    return node;
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " expects " +
                                    std::to_string(numel(shape)) + " values, got " +
                                    std::to_string(values.size()));
    }
    node_ = make_node(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    std::vector<double> values(static_cast<std::size_t>(numel(shape)), value);
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    check_shape(shape);
    std::vector<double> values(static_cast<std::size_t>(numel(shape)));
    for (auto& v : values) {
        v = rng.uniform(lo, hi);
    }
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

std::span<const double> Tensor::grad() const {
    if (!node_->requires_grad) {
        throw std::logic_error("tensor: grad requested on a tensor without requires_grad");
    }
    return node_->grad;
}

std::span<double> Tensor::grad() {
    if (!node_->requires_grad) {
        throw std::logic_error("tensor: grad requested on a tensor without requires_grad");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_->requires_grad) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

Tensor Tensor::detached(bool requires_grad) const {
    return Tensor(node_->shape, node_->values, requires_grad);
}

Tensor make_op(Shape out_shape, std::vector<double> out_values, std::vector<Tensor> parents,
               std::function<void(std::span<const double>, std::span<std::vector<double>*>)>
                   backward_fn) {
    auto node = make_node(std::move(out_shape), std::move(out_values), false);
    node->parents.reserve(parents.size());
    for (const auto& p : parents) {
        node->parents.push_back(p.node());
    }
    node->backward_fn = std::move(backward_fn);
    return Tensor(std::move(node));
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data(), false);
    return make_op(
        {m, n}, std::move(out), {a, b},
        [a, b, m, n, k](std::span<const double> msg, std::span<std::vector<double>*> pm) {
            if (pm[0]) {
                detail::gemm_nt(m, k, n, msg.data(), b.values().data(), pm[0]->data(), true);
            }
            if (pm[1]) {
                detail::gemm_tn(k, n, m, a.values().data(), msg.data(), pm[1]->data(), true);
            }
        });
}

// ---- conv1d ----

std::int64_t conv1d_out_len(std::int64_t length, std::int64_t width, std::int64_t stride,
                            Padding padding) {
    if (padding == Padding::Same) {
        return (length + stride - 1) / stride;
    }
    return (length - width) / stride + 1;
}

std::int64_t pool1d_out_len(std::int64_t length, std::int64_t stride) {
    return (length + stride - 1) / stride;
}

namespace {

struct ConvGeom {
    std::int64_t batch, length, in_ch, width, out_ch, stride, out_len, pad_left;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& filters, std::int64_t stride,
                       Padding padding) {
    if (input.ndim() != 3) {
        throw std::invalid_argument("conv1d: input must be [batch, length, in_ch], got " +
                                    shape_str(input.shape()));
    }
    if (filters.ndim() != 3) {
        throw std::invalid_argument("conv1d: filters must be [width, in_ch, out_ch], got " +
                                    shape_str(filters.shape()));
    }
    if (stride < 1) {
        throw std::invalid_argument("conv1d: stride must be positive, got " +
                                    std::to_string(stride));
    }
    ConvGeom g;
    g.batch = input.dim(0);
    g.length = input.dim(1);
    g.in_ch = input.dim(2);
    g.width = filters.dim(0);
    g.out_ch = filters.dim(2);
    g.stride = stride;
    if (filters.dim(1) != g.in_ch) {
        throw std::invalid_argument("conv1d: filter in_ch mismatch, input " +
                                    shape_str(input.shape()) + " vs filters " +
                                    shape_str(filters.shape()));
    }
    if (padding == Padding::Valid && g.width > g.length) {
        throw std::invalid_argument("conv1d: filter width " + std::to_string(g.width) +
                                    " exceeds input length " + std::to_string(g.length));
    }
    g.out_len = conv1d_out_len(g.length, g.width, stride, padding);
    if (padding == Padding::Same) {
        const std::int64_t pad_total =
            std::max<std::int64_t>(0, (g.out_len - 1) * stride + g.width - g.length);
        g.pad_left = pad_total / 2;  // extra unit of padding goes on the right
    } else {
        g.pad_left = 0;
    }
    return g;
}

// col is [batch*out_len, width*in_ch]; matches the row-major filter layout.
void im2col(const ConvGeom& g, const double* x, double* col) {
    const std::int64_t cols = g.width * g.in_ch;
    detail::parallel_for(g.batch * g.out_len, 256, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            const std::int64_t b = r / g.out_len;
            const std::int64_t o = r % g.out_len;
            double* dst = col + r * cols;
            const std::int64_t start = o * g.stride - g.pad_left;
            for (std::int64_t w = 0; w < g.width; ++w) {
                const std::int64_t pos = start + w;
                if (pos < 0 || pos >= g.length) {
                    std::memset(dst + w * g.in_ch, 0,
                                static_cast<std::size_t>(g.in_ch) * sizeof(double));
                } else {
                    std::memcpy(dst + w * g.in_ch, x + (b * g.length + pos) * g.in_ch,
                                static_cast<std::size_t>(g.in_ch) * sizeof(double));
                }
            }
        }
    });
}

void col2im_add(const ConvGeom& g, const double* col, double* dx) {
    const std::int64_t cols = g.width * g.in_ch;
    detail::parallel_for(g.batch, 1, [&](std::int64_t b0, std::int64_t b1) {
        for (std::int64_t b = b0; b < b1; ++b) {
            for (std::int64_t o = 0; o < g.out_len; ++o) {
                const double* src = col + (b * g.out_len + o) * cols;
                const std::int64_t start = o * g.stride - g.pad_left;
                for (std::int64_t w = 0; w < g.width; ++w) {
                    const std::int64_t pos = start + w;
                    if (pos < 0 || pos >= g.length) {
                        continue;
                    }
                    double* dst = dx + (b * g.length + pos) * g.in_ch;
                    const double* s = src + w * g.in_ch;
                    for (std::int64_t c = 0; c < g.in_ch; ++c) {
                        dst[c] += s[c];
                    }
                }
            }
        }
    });
}

}  // namespace

Tensor conv1d(const Tensor& input, const Tensor& filters, std::int64_t stride,
              Padding padding) {
    const ConvGeom g = conv_geometry(input, filters, stride, padding);
    const std::int64_t rows = g.batch * g.out_len;
    const std::int64_t cols = g.width * g.in_ch;
    std::vector<double> col(static_cast<std::size_t>(rows * cols));
    im2col(g, input.values().data(), col.data());
    std::vector<double> out(static_cast<std::size_t>(rows * g.out_ch));
    detail::gemm_nn(rows, g.out_ch, cols, col.data(), filters.values().data(), out.data(),
                    false);
    return make_op(
        {g.batch, g.out_len, g.out_ch}, std::move(out), {input, filters},
        [input, filters, g, rows, cols](std::span<const double> msg,
                                        std::span<std::vector<double>*> pm) {
            if (pm[1]) {
                std::vector<double> col(static_cast<std::size_t>(rows * cols));
                im2col(g, input.values().data(), col.data());
                detail::gemm_tn(cols, g.out_ch, rows, col.data(), msg.data(), pm[1]->data(),
                                true);
            }
            if (pm[0]) {
                std::vector<double> dcol(static_cast<std::size_t>(rows * cols));
                detail::gemm_nt(rows, cols, g.out_ch, msg.data(), filters.values().data(),
                                dcol.data(), false);
                col2im_add(g, dcol.data(), pm[0]->data());
            }
        });
}

// ---- maxpool1d ----

Tensor maxpool1d(const Tensor& input, std::int64_t size, std::int64_t stride) {
    if (input.ndim() != 3) {
        throw std::invalid_argument("maxpool1d: input must be [batch, length, ch], got " +
                                    shape_str(input.shape()));
    }
    if (size < 1 || stride < 1) {
        throw std::invalid_argument("maxpool1d: size and stride must be positive, got size=" +
                                    std::to_string(size) + " stride=" + std::to_string(stride));
    }
    const std::int64_t batch = input.dim(0), length = input.dim(1), ch = input.dim(2);
    const std::int64_t out_len = pool1d_out_len(length, stride);
    const std::int64_t pad_total =
        std::max<std::int64_t>(0, (out_len - 1) * stride + size - length);
    const std::int64_t pad_left = pad_total / 2;

    std::vector<double> out(static_cast<std::size_t>(batch * out_len * ch));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const double* x = input.values().data();
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t o = 0; o < out_len; ++o) {
            const std::int64_t start = o * stride - pad_left;
            for (std::int64_t c = 0; c < ch; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t best_pos = -1;
                for (std::int64_t w = 0; w < size; ++w) {
                    const std::int64_t pos = start + w;
                    if (pos < 0 || pos >= length) {
                        continue;
                    }
                    const double v = x[(b * length + pos) * ch + c];
                    if (v > best) {
                        best = v;
                        best_pos = pos;
                    }
                }
                const std::int64_t r = (b * out_len + o) * ch + c;
                out[static_cast<std::size_t>(r)] = best;
                (*argmax)[static_cast<std::size_t>(r)] = best_pos < 0 ? -1 : (b * length + best_pos) * ch + c;
            }
        }
    }
    return make_op({batch, out_len, ch}, std::move(out), {input},
                   [argmax](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       auto& dx = *pm[0];
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           const std::int64_t src = (*argmax)[i];
                           if (src >= 0) {
                               dx[static_cast<std::size_t>(src)] += msg[i];
                           }
                       }
                   });
}

// ---- elementwise ----

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return make_op(a.shape(), std::move(out), {a, b},
                   [](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       for (int p = 0; p < 2; ++p) {
                           if (!pm[p]) {
                               continue;
                           }
                           auto& d = *pm[p];
                           for (std::size_t i = 0; i < msg.size(); ++i) {
                               d[i] += msg[i];
                           }
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return make_op(a.shape(), std::move(out), {a, b},
                   [a, b](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (pm[0]) {
                           const auto bv = b.values();
                           for (std::size_t i = 0; i < msg.size(); ++i) {
                               (*pm[0])[i] += msg[i] * bv[i];
                           }
                       }
                       if (pm[1]) {
                           const auto av = a.values();
                           for (std::size_t i = 0; i < msg.size(); ++i) {
                               (*pm[1])[i] += msg[i] * av[i];
                           }
                       }
                   });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    }
    return make_op(x.shape(), std::move(out), {x},
                   [x](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       const auto xv = x.values();
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           if (xv[i] > 0.0) {  // subgradient 0 at exactly 0
                               (*pm[0])[i] += msg[i];
                           }
                       }
                   });
}

Tensor tanh(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::tanh(xv[i]);
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return make_op(x.shape(), std::move(out), {x},
                   [y](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           (*pm[0])[i] += msg[i] * (1.0 - (*y)[i] * (*y)[i]);
                       }
                   });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return make_op(x.shape(), std::move(out), {x},
                   [y](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           const double s = (*y)[i];
                           (*pm[0])[i] += msg[i] * s * (1.0 - s);
                       }
                   });
}

// ---- row-vector broadcasts ----

namespace {

void check_rowvec(const char* op, const Tensor& mat, const Tensor& vec) {
    if (mat.ndim() != 2 || vec.ndim() != 1 || mat.dim(1) != vec.dim(0)) {
        throw std::invalid_argument(std::string(op) + ": expected [m,n] and [n], got " +
                                    shape_str(mat.shape()) + " and " + shape_str(vec.shape()));
    }
}

}  // namespace

Tensor add_rowvec(const Tensor& mat, const Tensor& vec) {
    check_rowvec("add_rowvec", mat, vec);
    const std::int64_t m = mat.dim(0), n = mat.dim(1);
    std::vector<double> out(mat.values().begin(), mat.values().end());
    const auto vv = vec.values();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(i * n + j)] += vv[static_cast<std::size_t>(j)];
        }
    }
    return make_op({m, n}, std::move(out), {mat, vec},
                   [m, n](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (pm[0]) {
                           for (std::size_t i = 0; i < msg.size(); ++i) {
                               (*pm[0])[i] += msg[i];
                           }
                       }
                       if (pm[1]) {
                           for (std::int64_t i = 0; i < m; ++i) {
                               for (std::int64_t j = 0; j < n; ++j) {
                                   (*pm[1])[static_cast<std::size_t>(j)] +=
                                       msg[static_cast<std::size_t>(i * n + j)];
                               }
                           }
                       }
                   });
}

Tensor mul_rowvec(const Tensor& mat, const Tensor& vec) {
    check_rowvec("mul_rowvec", mat, vec);
    const std::int64_t m = mat.dim(0), n = mat.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    const auto mv = mat.values();
    const auto vv = vec.values();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(i * n + j)] =
                mv[static_cast<std::size_t>(i * n + j)] * vv[static_cast<std::size_t>(j)];
        }
    }
    return make_op(
        {m, n}, std::move(out), {mat, vec},
        [mat, vec, m, n](std::span<const double> msg, std::span<std::vector<double>*> pm) {
            const auto mv = mat.values();
            const auto vv = vec.values();
            if (pm[0]) {
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t j = 0; j < n; ++j) {
                        (*pm[0])[static_cast<std::size_t>(i * n + j)] +=
                            msg[static_cast<std::size_t>(i * n + j)] *
                            vv[static_cast<std::size_t>(j)];
                    }
                }
            }
            if (pm[1]) {
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t j = 0; j < n; ++j) {
                        (*pm[1])[static_cast<std::size_t>(j)] +=
                            msg[static_cast<std::size_t>(i * n + j)] *
                            mv[static_cast<std::size_t>(i * n + j)];
                    }
                }
            }
        });
}

// ---- concat / slicing / reshape ----

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
    if (parts.empty()) {
        throw std::invalid_argument("concat: no parts");
    }
    const auto& first = parts.front().shape();
    const std::int64_t ndim = static_cast<std::int64_t>(first.size());
    if (axis < 0) {
        axis += ndim;
    }
    if (axis < 0 || axis >= ndim) {
        throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                    " out of range for " + shape_str(first));
    }
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
        if (p.ndim() != ndim) {
            throw std::invalid_argument("concat: rank mismatch " + shape_str(first) + " vs " +
                                        shape_str(p.shape()));
        }
        for (std::int64_t d = 0; d < ndim; ++d) {
            if (d != axis && p.shape()[static_cast<std::size_t>(d)] !=
                                 first[static_cast<std::size_t>(d)]) {
                throw std::invalid_argument("concat: incompatible shapes " + shape_str(first) +
                                            " vs " + shape_str(p.shape()));
            }
        }
        out_shape[static_cast<std::size_t>(axis)] += p.dim(static_cast<std::size_t>(axis));
    }

    // outer = product of dims before axis, inner = product after.
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t d = 0; d < axis; ++d) {
        outer *= first[static_cast<std::size_t>(d)];
    }
    for (std::int64_t d = axis + 1; d < ndim; ++d) {
        inner *= first[static_cast<std::size_t>(d)];
    }
    const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];
    std::vector<double> out(static_cast<std::size_t>(outer * out_axis * inner));
    std::vector<std::int64_t> offsets(parts.size());
    std::int64_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        offsets[p] = off;
        const std::int64_t pa = parts[p].dim(static_cast<std::size_t>(axis));
        const auto pv = parts[p].values();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::memcpy(out.data() + (o * out_axis + off) * inner,
                        pv.data() + o * pa * inner,
                        static_cast<std::size_t>(pa * inner) * sizeof(double));
        }
        off += pa;
    }

    std::vector<std::int64_t> part_axis(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) {
        part_axis[p] = parts[p].dim(static_cast<std::size_t>(axis));
    }
    return make_op(out_shape, std::move(out), parts,
                   [outer, inner, out_axis, offsets, part_axis](
                       std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       for (std::size_t p = 0; p < pm.size(); ++p) {
                           if (!pm[p]) {
                               continue;
                           }
                           auto& d = *pm[p];
                           const std::int64_t pa = part_axis[p];
                           for (std::int64_t o = 0; o < outer; ++o) {
                               const double* src =
                                   msg.data() + (o * out_axis + offsets[p]) * inner;
                               double* dst = d.data() + o * pa * inner;
                               for (std::int64_t i = 0; i < pa * inner; ++i) {
                                   dst[i] += src[i];
                               }
                           }
                       }
                   });
}

Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t count) {
    if (x.ndim() < 1 || start < 0 || count < 1 || start + count > x.dim(0)) {
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + "," +
                                    std::to_string(start + count) + ") invalid for " +
                                    shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[0] = count;
    std::int64_t row = 1;
    for (std::size_t d = 1; d < out_shape.size(); ++d) {
        row *= out_shape[d];
    }
    std::vector<double> out(x.values().begin() + start * row,
                            x.values().begin() + (start + count) * row);
    return make_op(out_shape, std::move(out), {x},
                   [start, row](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       double* dst = pm[0]->data() + start * row;
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           dst[i] += msg[i];
                       }
                   });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    check_shape(new_shape);
    if (numel(new_shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(new_shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_op(std::move(new_shape), std::move(out), {x},
                   [](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           (*pm[0])[i] += msg[i];
                       }
                   });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (const double v : x.values()) {
        total += v;
    }
    return make_op({1}, {total}, {x},
                   [](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       for (auto& d : *pm[0]) {
                           d += msg[0];
                       }
                   });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = c * xv[i];
    }
    return make_op(x.shape(), std::move(out), {x},
                   [c](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           (*pm[0])[i] += c * msg[i];
                       }
                   });
}

// ---- softmax cross entropy ----

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets) {
    if (logits.ndim() != 2) {
        throw std::invalid_argument("softmax_cross_entropy: logits must be [batch, classes], got " +
                                    shape_str(logits.shape()));
    }
    const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
    if (classes < 2) {
        throw std::invalid_argument("softmax_cross_entropy: need at least 2 classes, got " +
                                    std::to_string(classes));
    }
    if (static_cast<std::int64_t>(targets.size()) != batch) {
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for batch " + std::to_string(batch));
    }
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(batch * classes));
    const auto lv = logits.values();
    double loss = 0.0;
    for (std::int64_t i = 0; i < batch; ++i) {
        const std::int64_t t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= classes) {
            throw std::invalid_argument("softmax_cross_entropy: target " + std::to_string(t) +
                                        " out of range [0," + std::to_string(classes) + ")");
        }
        const double* row = lv.data() + i * classes;
        double mx = row[0];
        for (std::int64_t c = 1; c < classes; ++c) {
            mx = std::max(mx, row[c]);
        }
        double z = 0.0;
        for (std::int64_t c = 0; c < classes; ++c) {
            z += std::exp(row[c] - mx);
        }
        double* prow = probs->data() + i * classes;
        for (std::int64_t c = 0; c < classes; ++c) {
            prow[c] = std::exp(row[c] - mx) / z;
        }
        loss += -(row[t] - mx - std::log(z));
    }
    loss /= static_cast<double>(batch);
    auto tcopy = std::make_shared<std::vector<std::int64_t>>(targets);
    return make_op({1}, {loss}, {logits},
                   [probs, tcopy, batch, classes](std::span<const double> msg,
                                                  std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       const double s = msg[0] / static_cast<double>(batch);
                       auto& d = *pm[0];
                       for (std::int64_t i = 0; i < batch; ++i) {
                           const double* prow = probs->data() + i * classes;
                           double* drow = d.data() + i * classes;
                           for (std::int64_t c = 0; c < classes; ++c) {
                               drow[c] += s * prow[c];
                           }
                           drow[(*tcopy)[static_cast<std::size_t>(i)]] -= s;
                       }
                   });
}

// ---- backward ----

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    }

    // Topological order via iterative post-order DFS.
    std::vector<TensorNode*> order;
    std::unordered_map<TensorNode*, std::int64_t> index;
    {
        std::vector<std::pair<TensorNode*, std::size_t>> stack;
        stack.emplace_back(loss.node().get(), 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (index.count(node) && next == 0) {
                stack.pop_back();
                continue;
            }
            if (next < node->parents.size()) {
                TensorNode* parent = node->parents[next].get();
                ++next;
                if (!index.count(parent)) {
                    stack.emplace_back(parent, 0);
                }
            } else {
                if (!index.count(node)) {
                    index.emplace(node, static_cast<std::int64_t>(order.size()));
                    order.push_back(node);
                }
                stack.pop_back();
            }
        }
    }

    // needs[i]: some tensor in node i's ancestry (or itself) wants a gradient.
    std::vector<char> needs(order.size(), 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
        TensorNode* node = order[i];
        bool n = node->requires_grad;
        for (const auto& p : node->parents) {
            n = n || needs[static_cast<std::size_t>(index.at(p.get()))];
        }
        needs[i] = n ? 1 : 0;
    }

    std::vector<std::vector<double>> msgs(order.size());
    const auto ensure = [&](std::int64_t i) -> std::vector<double>* {
        auto& m = msgs[static_cast<std::size_t>(i)];
        if (m.empty()) {
            m.assign(order[static_cast<std::size_t>(i)]->values.size(), 0.0);
        }
        return &m;
    };

    const std::int64_t loss_idx = index.at(loss.node().get());
    if (!needs[static_cast<std::size_t>(loss_idx)]) {
        return;  // nothing reachable wants gradients
    }
    (*ensure(loss_idx))[0] = 1.0;

    for (std::int64_t i = static_cast<std::int64_t>(order.size()) - 1; i >= 0; --i) {
        if (!needs[static_cast<std::size_t>(i)]) {
            continue;
        }
        TensorNode* node = order[static_cast<std::size_t>(i)];
        auto& msg = msgs[static_cast<std::size_t>(i)];
        if (msg.empty()) {
            continue;  // does not contribute to the loss
        }
        if (node->requires_grad) {
            for (std::size_t j = 0; j < msg.size(); ++j) {
                node->grad[j] += msg[j];
            }
        }
        if (node->backward_fn && !node->parents.empty()) {
            std::vector<std::vector<double>*> pm(node->parents.size(), nullptr);
            bool any = false;
            for (std::size_t p = 0; p < node->parents.size(); ++p) {
                const std::int64_t pi = index.at(node->parents[p].get());
                if (needs[static_cast<std::size_t>(pi)]) {
                    pm[p] = ensure(pi);
                    any = true;
                }
            }
            if (any) {
                node->backward_fn(msg, pm);
            }
        }
        msg.clear();
        msg.shrink_to_fit();
    }
}

void set_num_threads(int n) { detail::set_threads_impl(n); }
int num_threads() { return detail::get_threads_impl(); }

}  // namespace sleepscore
