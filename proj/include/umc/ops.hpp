#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "umc/kernels.hpp"
#include "umc/tensor.hpp"

namespace umc {

namespace detail {

template <typename T>
void tape_record(std::function<void()> fn) {
    if (auto* t = GradientTape<T>::active()) t->record(std::move(fn));
}

template <typename T>
void mark(Tensor<T>& out) {
    if (GradientTape<T>::active()) out.mark_on_tape();
}

template <typename T>
void axpy(std::vector<T>& dst, const std::vector<T>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> out({m, n});
    kernels::mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    detail::mark(out);
    detail::tape_record<T>([a, b, out, m, k, n]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (a.needs_grad())
            kernels::mm_nt(go->data(), b.data().data(), a.grad().data(), m, n, k, true);
        if (b.needs_grad())
            kernels::mm_tn(a.data().data(), go->data(), b.grad().data(), m, k, n, true);
    });
    return out;
}

// a[m x k] * b[n x k]^T; the shape of choice for x * W^T linear layers.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw ShapeError("matmul_nt " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor<T> out({m, n});
    kernels::mm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    detail::mark(out);
    detail::tape_record<T>([a, b, out, m, k, n]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (a.needs_grad())
            kernels::mm_nn(go->data(), b.data().data(), a.grad().data(), m, n, k, true);
        if (b.needs_grad())
            kernels::mm_tn(go->data(), a.data().data(), b.grad().data(), m, n, k, true);
    });
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (long i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
    detail::mark(out);
    detail::tape_record<T>([a, b, out]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (a.needs_grad()) detail::axpy(a.grad(), *go);
        if (b.needs_grad()) detail::axpy(b.grad(), *go);
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (long i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) - b.at(i);
    detail::mark(out);
    detail::tape_record<T>([a, b, out]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (a.needs_grad()) detail::axpy(a.grad(), *go);
        if (b.needs_grad()) {
            auto& g = b.grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= (*go)[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (long i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
    detail::mark(out);
    detail::tape_record<T>([a, b, out]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (a.needs_grad()) {
            auto& g = a.grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += (*go)[i] * b.at(static_cast<long>(i));
        }
        if (b.needs_grad()) {
            auto& g = b.grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += (*go)[i] * a.at(static_cast<long>(i));
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
    Tensor<T> out(a.shape());
    for (long i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) * static_cast<T>(c);
    detail::mark(out);
    detail::tape_record<T>([a, out, c]() mutable {
        const auto* go = out.grad_if();
        if (!go || !a.needs_grad()) return;
        auto& g = a.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += (*go)[i] * static_cast<T>(c);
    });
    return out;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, double c) {
    Tensor<T> out(a.shape());
    for (long i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) + static_cast<T>(c);
    detail::mark(out);
    detail::tape_record<T>([a, out]() mutable {
        const auto* go = out.grad_if();
        if (go && a.needs_grad()) detail::axpy(a.grad(), *go);
    });
    return out;
}

// Broadcast-add a length-n vector to every row of a[m x n].
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& v) {
    if (a.ndim() != 2 || v.numel() != a.cols())
        throw ShapeError("add_row " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
    const int m = a.rows(), n = a.cols();
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + v.at(j);
    detail::mark(out);
    detail::tape_record<T>([a, v, out, m, n]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (a.needs_grad()) detail::axpy(a.grad(), *go);
        if (v.needs_grad()) {
            auto& g = v.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[static_cast<size_t>(j)] += (*go)[static_cast<size_t>(i) * n + j];
        }
    });
    return out;
}

// out[i, :] = a[i, :] * s[i], s has m elements.
template <typename T>
Tensor<T> row_scale(const Tensor<T>& a, const Tensor<T>& s) {
    if (a.ndim() != 2 || s.numel() != a.rows())
        throw ShapeError("row_scale " + shape_str(a.shape()) + " by " + shape_str(s.shape()));
    const int m = a.rows(), n = a.cols();
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) * s.at(i);
    detail::mark(out);
    detail::tape_record<T>([a, s, out, m, n]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (a.needs_grad()) {
            auto& g = a.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    g[static_cast<size_t>(i) * n + j] += (*go)[static_cast<size_t>(i) * n + j] * s.at(i);
        }
        if (s.needs_grad()) {
            auto& g = s.grad();
            for (int i = 0; i < m; ++i) {
                T acc = T(0);
                for (int j = 0; j < n; ++j) acc += (*go)[static_cast<size_t>(i) * n + j] * a.at(i, j);
                g[static_cast<size_t>(i)] += acc;
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (long i = 0; i < out.numel(); ++i) {
        const double v = static_cast<double>(x.at(i));
        out.at(i) = static_cast<T>(v / (1.0 + std::exp(-v)));
    }
    detail::mark(out);
    detail::tape_record<T>([x, out]() mutable {
        const auto* go = out.grad_if();
        if (!go || !x.needs_grad()) return;
        auto& g = x.grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const double v = static_cast<double>(x.at(static_cast<long>(i)));
            const double sig = 1.0 / (1.0 + std::exp(-v));
            g[i] += (*go)[i] * static_cast<T>(sig * (1.0 + v * (1.0 - sig)));
        }
    });
    return out;
}

// Per-row RMS normalization with learned gain: y_ij = x_ij / rms_i * g_j.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, double eps = 1e-6) {
    if (x.ndim() != 2 || gain.numel() != x.cols())
        throw ShapeError("rmsnorm " + shape_str(x.shape()) + " gain " + shape_str(gain.shape()));
    const int m = x.rows(), n = x.cols();
    Tensor<T> out({m, n});
    std::vector<T> inv_rms(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        double ss = 0.0;
        for (int j = 0; j < n; ++j) ss += static_cast<double>(x.at(i, j)) * static_cast<double>(x.at(i, j));
        inv_rms[static_cast<size_t>(i)] = static_cast<T>(1.0 / std::sqrt(ss / n + eps));
        for (int j = 0; j < n; ++j)
            out.at(i, j) = x.at(i, j) * inv_rms[static_cast<size_t>(i)] * gain.at(j);
    }
    detail::mark(out);
    detail::tape_record<T>([x, gain, out, inv_rms, m, n]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        if (gain.needs_grad()) {
            auto& g = gain.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    g[static_cast<size_t>(j)] +=
                        (*go)[static_cast<size_t>(i) * n + j] * x.at(i, j) * inv_rms[static_cast<size_t>(i)];
        }
        if (x.needs_grad()) {
            auto& g = x.grad();
            for (int i = 0; i < m; ++i) {
                const T ir = inv_rms[static_cast<size_t>(i)];
                // inner = sum_j go_ij * gain_j * u_ij with u = x * inv_rms
                T inner = T(0);
                for (int j = 0; j < n; ++j)
                    inner += (*go)[static_cast<size_t>(i) * n + j] * gain.at(j) * x.at(i, j) * ir;
                for (int j = 0; j < n; ++j) {
                    const T u = x.at(i, j) * ir;
                    g[static_cast<size_t>(i) * n + j] +=
                        (*go)[static_cast<size_t>(i) * n + j] * gain.at(j) * ir - u * inner * ir / static_cast<T>(n);
                }
            }
        }
    });
    return out;
}

// Row-wise softmax; with causal=true entries j > i are masked out (square input).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal = false) {
    if (x.ndim() != 2) throw ShapeError("softmax_rows on " + shape_str(x.shape()));
    if (causal && x.rows() != x.cols())
        throw ShapeError("causal softmax needs a square matrix, got " + shape_str(x.shape()));
    const int m = x.rows(), n = x.cols();
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
        const int limit = causal ? i + 1 : n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < limit; ++j) mx = std::max(mx, static_cast<double>(x.at(i, j)));
        double denom = 0.0;
        for (int j = 0; j < limit; ++j) denom += std::exp(static_cast<double>(x.at(i, j)) - mx);
        for (int j = 0; j < limit; ++j)
            out.at(i, j) = static_cast<T>(std::exp(static_cast<double>(x.at(i, j)) - mx) / denom);
        for (int j = limit; j < n; ++j) out.at(i, j) = T(0);
    }
    detail::mark(out);
    detail::tape_record<T>([x, out, m, n]() mutable {
        const auto* go = out.grad_if();
        if (!go || !x.needs_grad()) return;
        auto& g = x.grad();
        for (int i = 0; i < m; ++i) {
            T dot = T(0);
            for (int j = 0; j < n; ++j) dot += (*go)[static_cast<size_t>(i) * n + j] * out.at(i, j);
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] +=
                    out.at(i, j) * ((*go)[static_cast<size_t>(i) * n + j] - dot);
        }
    });
    return out;
}

// Row-gather from an embedding table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw ShapeError("embedding table must be 2D");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v)
            throw InputError("token id " + std::to_string(id) + " out of vocabulary (size " +
                             std::to_string(v) + ")");
    Tensor<T> out({static_cast<int>(ids.size()), d});
    for (size_t t = 0; t < ids.size(); ++t)
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(t), j) = table.at(ids[t], j);
    detail::mark(out);
    detail::tape_record<T>([table, out, ids, d]() mutable {
        const auto* go = out.grad_if();
        if (!go || !table.needs_grad()) return;
        auto& g = table.grad();
        for (size_t t = 0; t < ids.size(); ++t)
            for (int j = 0; j < d; ++j)
                g[static_cast<size_t>(ids[t]) * d + j] += (*go)[t * d + j];
    });
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int start, int len) {
    if (x.ndim() != 2 || start < 0 || len <= 0 || start + len > x.cols())
        throw ShapeError("slice_cols [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") of " + shape_str(x.shape()));
    const int m = x.rows(), n = x.cols();
    Tensor<T> out({m, len});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);
    detail::mark(out);
    detail::tape_record<T>([x, out, start, len, m, n]() mutable {
        const auto* go = out.grad_if();
        if (!go || !x.needs_grad()) return;
        auto& g = x.grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                g[static_cast<size_t>(i) * n + start + j] += (*go)[static_cast<size_t>(i) * len + j];
    });
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    const int m = parts.front().rows();
    int n = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.rows() != m) throw ShapeError("concat_cols row mismatch");
        n += p.cols();
    }
    Tensor<T> out({m, n});
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
        off += p.cols();
    }
    detail::mark(out);
    detail::tape_record<T>([parts, out, m, n]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        int off = 0;
        for (auto& p : parts) {
            const int pc = p.cols();
            if (p.needs_grad()) {
                auto& g = p.grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pc; ++j)
                        g[static_cast<size_t>(i) * pc + j] += (*go)[static_cast<size_t>(i) * n + off + j];
            }
            off += pc;
        }
    });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out({1});
    double acc = 0.0;
    for (long i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.at(i));
    out.at(0) = static_cast<T>(acc);
    detail::mark(out);
    detail::tape_record<T>([x, out]() mutable {
        const auto* go = out.grad_if();
        if (!go || !x.needs_grad()) return;
        auto& g = x.grad();
        for (auto& v : g) v += (*go)[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse_loss " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    Tensor<T> out({1});
    double acc = 0.0;
    for (long i = 0; i < pred.numel(); ++i) {
        const double dlt = static_cast<double>(pred.at(i)) - static_cast<double>(target.at(i));
        acc += dlt * dlt;
    }
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    out.at(0) = static_cast<T>(acc * inv_n);
    detail::mark(out);
    detail::tape_record<T>([pred, target, out, inv_n]() mutable {
        const auto* go = out.grad_if();
        if (!go) return;
        for (long i = 0; i < pred.numel(); ++i) {
            const T dlt = pred.at(i) - target.at(i);
            if (pred.needs_grad()) pred.grad()[static_cast<size_t>(i)] += (*go)[0] * T(2) * dlt * static_cast<T>(inv_n);
            if (target.needs_grad()) target.grad()[static_cast<size_t>(i)] -= (*go)[0] * T(2) * dlt * static_cast<T>(inv_n);
        }
    });
    return out;
}

// Mean over rows of -log softmax(logits)[target].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
    if (logits.ndim() != 2 || static_cast<size_t>(logits.rows()) != targets.size())
        throw ShapeError("cross_entropy logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
    const int m = logits.rows(), n = logits.cols();
    for (int y : targets)
        if (y < 0 || y >= n) throw InputError("cross_entropy target out of range");
    Tensor<T> out({1});
    std::vector<T> probs(static_cast<size_t>(m) * n);
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(logits.at(i, j)));
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(logits.at(i, j)) - mx);
        for (int j = 0; j < n; ++j)
            probs[static_cast<size_t>(i) * n + j] =
                static_cast<T>(std::exp(static_cast<double>(logits.at(i, j)) - mx) / denom);
        acc += std::log(denom) + mx - static_cast<double>(logits.at(i, targets[static_cast<size_t>(i)]));
    }
    out.at(0) = static_cast<T>(acc / m);
    detail::mark(out);
    detail::tape_record<T>([logits, out, targets, probs, m, n]() mutable {
        const auto* go = out.grad_if();
        if (!go || !logits.needs_grad()) return;
        auto& g = logits.grad();
        const T w = (*go)[0] / static_cast<T>(m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                T p = probs[static_cast<size_t>(i) * n + j];
                if (j == targets[static_cast<size_t>(i)]) p -= T(1);
                g[static_cast<size_t>(i) * n + j] += w * p;
            }
    });
    return out;
}

// Plain scalar cosine similarity; not a tape op.
template <typename T>
double cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel())
        throw ShapeError("cosine_similarity " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (long i = 0; i < a.numel(); ++i) {
        const double x = static_cast<double>(a.at(i)), y = static_cast<double>(b.at(i));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) throw InputError("cosine_similarity of a zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace umc
