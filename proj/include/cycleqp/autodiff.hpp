#ifndef CYCLEQP_AUTODIFF_HPP
#define CYCLEQP_AUTODIFF_HPP

#include <Eigen/Core>
#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "cycleqp/tensor.hpp"

namespace cycleqp::ad {

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// One node of the reverse-mode tape. Values are computed eagerly; the
/// backward closure scatters this node's gradient into its parents.
template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backward_op;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor<T>::zeros_like(value);
    }
};

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

/// Scope guard disabling tape construction (inference mode). Intermediate
/// activations are freed as soon as their Vars go out of scope.
struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
    ~NoGradGuard() { grad_enabled_flag() = prev_; }

private:
    bool prev_;
};

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled_flag();
    return n;
}

template <class T>
Var<T> constant(Tensor<T> value) {
    return leaf(std::move(value), false);
}

template <class T>
Var<T> scalar(T v) {
    return leaf(Tensor<T>::scalar(v), false);
}

template <class T>
Var<T> detach(const Var<T>& v) {
    return leaf(v->value, false);
}

namespace detail {

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (grad_enabled_flag()) {
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        if (any) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_op = std::move(backward);
        }
    }
    return n;
}

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

/// Runs reverse accumulation from a scalar root.
template <class T>
void backward(const Var<T>& root) {
    if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    // post-order DFS for a topological order
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0 && seen.count(node)) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            Node<T>* child = node->parents[idx++].get();
            if (!seen.count(child) && child->requires_grad) stack.emplace_back(child, 0);
        } else {
            seen.insert(node);
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : topo) n->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_op) {
            for (auto& p : n->parents) p->ensure_grad();
            n->backward_op(*n);
        }
    }
}

template <class T>
void zero_grad(const Var<T>& v) {
    v->grad = Tensor<T>();
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->requires_grad)
            for (long i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
        if (b->requires_grad)
            for (long i = 0; i < self.grad.numel(); ++i) b->grad[i] += self.grad[i];
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->requires_grad)
            for (long i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
        if (b->requires_grad)
            for (long i = 0; i < self.grad.numel(); ++i) b->grad[i] -= self.grad[i];
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->requires_grad)
            for (long i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i] * b->value[i];
        if (b->requires_grad)
            for (long i = 0; i < self.grad.numel(); ++i) b->grad[i] += self.grad[i] * a->value[i];
    });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a->value, b->value, "div");
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
    return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        for (long i = 0; i < self.grad.numel(); ++i) {
            const T g = self.grad[i];
            const T bv = b->value[i];
            if (a->requires_grad) a->grad[i] += g / bv;
            if (b->requires_grad) b->grad[i] -= g * a->value[i] / (bv * bv);
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] *= s;
    return detail::make_op<T>(std::move(out), {a}, [a, s](Node<T>& self) {
        for (long i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i] * s;
    });
}

template <class T>
Var<T> square(const Var<T>& a) {
    return mul(a, a);
}

template <class T>
Var<T> abs_(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        for (long i = 0; i < self.grad.numel(); ++i) {
            const T x = a->value[i];
            a->grad[i] += self.grad[i] * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
        }
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], T(0));
    return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
        for (long i = 0; i < self.grad.numel(); ++i)
            if (a->value[i] > T(0)) a->grad[i] += self.grad[i];
    });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i)
        if (out[i] < T(0)) out[i] *= slope;
    return detail::make_op<T>(std::move(out), {a}, [a, slope](Node<T>& self) {
        for (long i = 0; i < self.grad.numel(); ++i)
            a->grad[i] += self.grad[i] * (a->value[i] > T(0) ? T(1) : slope);
    });
}

template <class T>
Var<T> tanh_(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    auto n = detail::make_op<T>(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        n->backward_op = [a](Node<T>& self) {
            for (long i = 0; i < self.grad.numel(); ++i) {
                const T y = self.value[i];
                a->grad[i] += self.grad[i] * (T(1) - y * y);
            }
        };
    }
    return n;
}

template <class T>
Var<T> clamp_min(const Var<T>& a, T floor) {
    Tensor<T> out = a->value;
    for (long i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], floor);
    return detail::make_op<T>(std::move(out), {a}, [a, floor](Node<T>& self) {
        for (long i = 0; i < self.grad.numel(); ++i)
            if (a->value[i] > floor) a->grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Mean over every element -> shape {1}.
template <class T>
Var<T> mean_all(const Var<T>& a) {
    const long n = a->value.numel();
    T acc = T(0);
    for (long i = 0; i < n; ++i) acc += a->value[i];
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    return detail::make_op<T>(std::move(out), {a}, [a, n](Node<T>& self) {
        const T g = self.grad[0] / static_cast<T>(n);
        for (long i = 0; i < n; ++i) a->grad[i] += g;
    });
}

/// Mean over all dims except the batch dim -> shape {N}.
template <class T>
Var<T> mean_per_sample(const Var<T>& a) {
    const long batch = a->value.dim(0);
    const long per = a->value.numel() / batch;
    Tensor<T> out({batch});
    for (long b = 0; b < batch; ++b) {
        T acc = T(0);
        for (long i = 0; i < per; ++i) acc += a->value[b * per + i];
        out[b] = acc / static_cast<T>(per);
    }
    return detail::make_op<T>(std::move(out), {a}, [a, batch, per](Node<T>& self) {
        for (long b = 0; b < batch; ++b) {
            const T g = self.grad[b] / static_cast<T>(per);
            for (long i = 0; i < per; ++i) a->grad[b * per + i] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// spatial ops (rank-4 tensors, NCHW)
// ---------------------------------------------------------------------------

template <class T>
Var<T> reflect_pad2d(const Var<T>& x, long p) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("reflect_pad2d: rank-4 input required");
    const long N = s[0], C = s[1], H = s[2], W = s[3];
    if (p >= H || p >= W) throw std::invalid_argument("reflect_pad2d: pad too large");
    Tensor<T> out({N, C, H + 2 * p, W + 2 * p});
    auto reflect = [](long i, long n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    };
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c)
            for (long h = 0; h < H + 2 * p; ++h) {
                const long sh = reflect(h - p, H);
                for (long w = 0; w < W + 2 * p; ++w) out.at(n, c, h, w) = x->value.at(n, c, sh, reflect(w - p, W));
            }
    return detail::make_op<T>(std::move(out), {x}, [x, p, reflect, N, C, H, W](Node<T>& self) {
        for (long n = 0; n < N; ++n)
            for (long c = 0; c < C; ++c)
                for (long h = 0; h < H + 2 * p; ++h) {
                    const long sh = reflect(h - p, H);
                    for (long w = 0; w < W + 2 * p; ++w)
                        x->grad.at(n, c, sh, reflect(w - p, W)) += self.grad.at(n, c, h, w);
                }
    });
}

namespace detail {

struct ConvDims {
    long N, Cin, H, W, Cout, K, stride, pad, Hout, Wout;
};

template <class T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, long stride, long pad, const char* where) {
    if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument(std::string(where) + ": rank-4 input and weight required");
    ConvDims d;
    d.N = x.dim(0);
    d.Cin = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.Cout = w.dim(0);
    d.K = w.dim(2);
    d.stride = stride;
    d.pad = pad;
    if (w.dim(1) != d.Cin) throw std::invalid_argument(std::string(where) + ": channel mismatch");
    if (w.dim(3) != d.K) throw std::invalid_argument(std::string(where) + ": non-square kernel");
    d.Hout = (d.H + 2 * pad - d.K) / stride + 1;
    d.Wout = (d.W + 2 * pad - d.K) / stride + 1;
    if (d.H + 2 * pad < d.K || d.W + 2 * pad < d.K)
        throw std::invalid_argument(std::string(where) + ": input " + x.shape_str() + " smaller than kernel");
    return d;
}

// im2col over a chunk of output rows [row0, row1)
template <class T>
void im2col_chunk(const Tensor<T>& x, const ConvDims& d, long n, long row0, long row1, T* col) {
    const long cols = (row1 - row0) * d.Wout;
    long r = 0;
    for (long ci = 0; ci < d.Cin; ++ci)
        for (long kh = 0; kh < d.K; ++kh)
            for (long kw = 0; kw < d.K; ++kw, ++r) {
                T* dst = col + r * cols;
                for (long ho = row0; ho < row1; ++ho) {
                    const long ih = ho * d.stride - d.pad + kh;
                    for (long wo = 0; wo < d.Wout; ++wo, ++dst) {
                        const long iw = wo * d.stride - d.pad + kw;
                        *dst = (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W) ? x.at(n, ci, ih, iw) : T(0);
                    }
                }
            }
}

template <class T>
void col2im_chunk(Tensor<T>& gx, const ConvDims& d, long n, long row0, long row1, const T* col) {
    const long cols = (row1 - row0) * d.Wout;
    long r = 0;
    for (long ci = 0; ci < d.Cin; ++ci)
        for (long kh = 0; kh < d.K; ++kh)
            for (long kw = 0; kw < d.K; ++kw, ++r) {
                const T* src = col + r * cols;
                for (long ho = row0; ho < row1; ++ho) {
                    const long ih = ho * d.stride - d.pad + kh;
                    for (long wo = 0; wo < d.Wout; ++wo, ++src) {
                        const long iw = wo * d.stride - d.pad + kw;
                        if (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W) gx.at(n, ci, ih, iw) += *src;
                    }
                }
            }
}

// chunk output rows so the im2col buffer stays under ~32 MB
inline long conv_chunk_rows(const ConvDims& d, std::size_t elem_size) {
    const std::size_t budget = 32u << 20;
    const std::size_t per_row = static_cast<std::size_t>(d.Cin * d.K * d.K * d.Wout) * elem_size;
    long rows = static_cast<long>(std::max<std::size_t>(1, budget / std::max<std::size_t>(1, per_row)));
    return std::min(rows, d.Hout);
}

}  // namespace detail

/// 2-D convolution, zero padding, square kernel, weight (Cout, Cin, K, K).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long stride = 1, long pad = 0) {
    const auto d = detail::conv_dims(x->value, w->value, stride, pad, "conv2d");
    if (b->value.numel() != d.Cout) throw std::invalid_argument("conv2d: bias size mismatch");
    Tensor<T> out({d.N, d.Cout, d.Hout, d.Wout});
    const long kdim = d.Cin * d.K * d.K;
    const long chunk = detail::conv_chunk_rows(d, sizeof(T));
    std::vector<T> col(static_cast<std::size_t>(kdim * chunk * d.Wout));
    detail::ConstMatMap<T> wmat(w->value.data(), d.Cout, kdim);
    for (long n = 0; n < d.N; ++n) {
        for (long row0 = 0; row0 < d.Hout; row0 += chunk) {
            const long row1 = std::min(row0 + chunk, d.Hout);
            const long cols = (row1 - row0) * d.Wout;
            detail::im2col_chunk(x->value, d, n, row0, row1, col.data());
            detail::MatMap<T> cmat(col.data(), kdim, cols);
            detail::MatMap<T> omat(&out.at(n, 0, 0, 0) + 0, d.Cout, d.Hout * d.Wout);
            omat.block(0, row0 * d.Wout, d.Cout, cols).noalias() = wmat * cmat;
        }
        for (long co = 0; co < d.Cout; ++co) {
            const T bias = b->value[co];
            T* p = &out.at(n, co, 0, 0);
            for (long i = 0; i < d.Hout * d.Wout; ++i) p[i] += bias;
        }
    }
    return detail::make_op<T>(std::move(out), {x, w, b}, [x, w, b, d](Node<T>& self) {
        const long kdim = d.Cin * d.K * d.K;
        const long chunk = detail::conv_chunk_rows(d, sizeof(T));
        std::vector<T> col(static_cast<std::size_t>(kdim * chunk * d.Wout));
        std::vector<T> gcol(static_cast<std::size_t>(kdim * chunk * d.Wout));
        detail::ConstMatMap<T> wmat(w->value.data(), d.Cout, kdim);
        detail::MatMap<T> gwmat(w->grad.data(), d.Cout, kdim);
        for (long n = 0; n < d.N; ++n) {
            detail::MatMap<T> gomat(&self.grad.at(n, 0, 0, 0), d.Cout, d.Hout * d.Wout);
            for (long row0 = 0; row0 < d.Hout; row0 += chunk) {
                const long row1 = std::min(row0 + chunk, d.Hout);
                const long cols = (row1 - row0) * d.Wout;
                auto gchunk = gomat.block(0, row0 * d.Wout, d.Cout, cols);
                if (w->requires_grad) {
                    detail::im2col_chunk(x->value, d, n, row0, row1, col.data());
                    detail::MatMap<T> cmat(col.data(), kdim, cols);
                    gwmat.noalias() += gchunk * cmat.transpose();
                }
                if (x->requires_grad) {
                    detail::MatMap<T> gcmat(gcol.data(), kdim, cols);
                    gcmat.noalias() = wmat.transpose() * gchunk;
                    detail::col2im_chunk(x->grad, d, n, row0, row1, gcol.data());
                }
            }
            if (b->requires_grad)
                for (long co = 0; co < d.Cout; ++co) {
                    const T* p = &self.grad.at(n, co, 0, 0);
                    T acc = T(0);
                    for (long i = 0; i < d.Hout * d.Wout; ++i) acc += p[i];
                    b->grad[co] += acc;
                }
        }
    });
}

/// Transposed 2-D convolution, weight (Cin, Cout, K, K). Kept naive; it only
/// serves as the strided-upsampling contrast path.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, long stride, long pad, long output_pad = 0) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv_transpose2d: rank-4 input and weight required");
    const long N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const long Cout = ws[1], K = ws[2];
    if (ws[0] != Cin) throw std::invalid_argument("conv_transpose2d: channel mismatch");
    const long Hout = (H - 1) * stride - 2 * pad + K + output_pad;
    const long Wout = (W - 1) * stride - 2 * pad + K + output_pad;
    if (Hout <= 0 || Wout <= 0) throw std::invalid_argument("conv_transpose2d: empty output");
    Tensor<T> out({N, Cout, Hout, Wout});
    for (long n = 0; n < N; ++n)
        for (long co = 0; co < Cout; ++co) {
            T* op = &out.at(n, co, 0, 0);
            for (long i = 0; i < Hout * Wout; ++i) op[i] = b->value[co];
        }
    for (long n = 0; n < N; ++n)
        for (long ci = 0; ci < Cin; ++ci)
            for (long h = 0; h < H; ++h)
                for (long w_ = 0; w_ < W; ++w_) {
                    const T xv = x->value.at(n, ci, h, w_);
                    for (long co = 0; co < Cout; ++co)
                        for (long kh = 0; kh < K; ++kh) {
                            const long oh = h * stride - pad + kh;
                            if (oh < 0 || oh >= Hout) continue;
                            for (long kw = 0; kw < K; ++kw) {
                                const long ow = w_ * stride - pad + kw;
                                if (ow < 0 || ow >= Wout) continue;
                                out.at(n, co, oh, ow) += xv * w->value.at(ci, co, kh, kw);
                            }
                        }
                }
    return detail::make_op<T>(std::move(out), {x, w, b},
                              [x, w, b, N, Cin, H, W, Cout, K, stride, pad, Hout, Wout](Node<T>& self) {
        for (long n = 0; n < N; ++n)
            for (long ci = 0; ci < Cin; ++ci)
                for (long h = 0; h < H; ++h)
                    for (long w_ = 0; w_ < W; ++w_) {
                        const T xv = x->value.at(n, ci, h, w_);
                        T gx = T(0);
                        for (long co = 0; co < Cout; ++co)
                            for (long kh = 0; kh < K; ++kh) {
                                const long oh = h * stride - pad + kh;
                                if (oh < 0 || oh >= Hout) continue;
                                for (long kw = 0; kw < K; ++kw) {
                                    const long ow = w_ * stride - pad + kw;
                                    if (ow < 0 || ow >= Wout) continue;
                                    const T g = self.grad.at(n, co, oh, ow);
                                    gx += g * w->value.at(ci, co, kh, kw);
                                    if (w->requires_grad) w->grad.at(ci, co, kh, kw) += g * xv;
                                }
                            }
                        if (x->requires_grad) x->grad.at(n, ci, h, w_) += gx;
                    }
        if (b->requires_grad)
            for (long n = 0; n < N; ++n)
                for (long co = 0; co < Cout; ++co) {
                    const T* p = &self.grad.at(n, co, 0, 0);
                    T acc = T(0);
                    for (long i = 0; i < Hout * Wout; ++i) acc += p[i];
                    b->grad[co] += acc;
                }
    });
}

template <class T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("upsample_nearest2x: rank-4 input required");
    const long N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor<T> out({N, C, 2 * H, 2 * W});
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c)
            for (long h = 0; h < H; ++h)
                for (long w = 0; w < W; ++w) {
                    const T v = x->value.at(n, c, h, w);
                    out.at(n, c, 2 * h, 2 * w) = v;
                    out.at(n, c, 2 * h, 2 * w + 1) = v;
                    out.at(n, c, 2 * h + 1, 2 * w) = v;
                    out.at(n, c, 2 * h + 1, 2 * w + 1) = v;
                }
    return detail::make_op<T>(std::move(out), {x}, [x, N, C, H, W](Node<T>& self) {
        for (long n = 0; n < N; ++n)
            for (long c = 0; c < C; ++c)
                for (long h = 0; h < H; ++h)
                    for (long w = 0; w < W; ++w)
                        x->grad.at(n, c, h, w) += self.grad.at(n, c, 2 * h, 2 * w) + self.grad.at(n, c, 2 * h, 2 * w + 1) +
                                                  self.grad.at(n, c, 2 * h + 1, 2 * w) + self.grad.at(n, c, 2 * h + 1, 2 * w + 1);
    });
}

/// Per-sample, per-channel normalization with learnable channel affine.
template <class T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("instance_norm: rank-4 input required");
    const long N = s[0], C = s[1], M = s[2] * s[3];
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw std::invalid_argument("instance_norm: affine size mismatch");
    Tensor<T> out(s);
    auto xhat = std::make_shared<Tensor<T>>(s);
    auto inv_sigma = std::make_shared<Tensor<T>>(std::vector<long>{N, C});
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
            const T* xp = &x->value.at(n, c, 0, 0);
            T mean = T(0);
            for (long i = 0; i < M; ++i) mean += xp[i];
            mean /= static_cast<T>(M);
            T var = T(0);
            for (long i = 0; i < M; ++i) {
                const T dv = xp[i] - mean;
                var += dv * dv;
            }
            var /= static_cast<T>(M);
            const T is = T(1) / std::sqrt(var + eps);
            (*inv_sigma)[n * C + c] = is;
            T* hp = &xhat->at(n, c, 0, 0);
            T* op = &out.at(n, c, 0, 0);
            const T g = gamma->value[c], bb = beta->value[c];
            for (long i = 0; i < M; ++i) {
                hp[i] = (xp[i] - mean) * is;
                op[i] = g * hp[i] + bb;
            }
        }
    return detail::make_op<T>(std::move(out), {x, gamma, beta},
                              [x, gamma, beta, xhat, inv_sigma, N, C, M](Node<T>& self) {
        for (long n = 0; n < N; ++n)
            for (long c = 0; c < C; ++c) {
                const T* gp = &self.grad.at(n, c, 0, 0);
                const T* hp = &xhat->at(n, c, 0, 0);
                T sum_g = T(0), sum_gh = T(0);
                for (long i = 0; i < M; ++i) {
                    sum_g += gp[i];
                    sum_gh += gp[i] * hp[i];
                }
                if (gamma->requires_grad) gamma->grad[c] += sum_gh;
                if (beta->requires_grad) beta->grad[c] += sum_g;
                if (x->requires_grad) {
                    const T g = gamma->value[c];
                    const T is = (*inv_sigma)[n * C + c];
                    const T mg = sum_g / static_cast<T>(M);
                    const T mgh = sum_gh / static_cast<T>(M);
                    T* xg = &x->grad.at(n, c, 0, 0);
                    for (long i = 0; i < M; ++i) xg[i] += g * is * (gp[i] - mg - hp[i] * mgh);
                }
            }
    });
}

}  // namespace cycleqp::ad

#endif
