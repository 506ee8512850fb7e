#include "fedlppa/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace fedlppa {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void TensorNode::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
}

namespace {
thread_local bool g_grad_enabled = true;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor::Tensor(Shape shape, bool requires_grad) {
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->value.assign(static_cast<size_t>(shape_numel(node_->shape)), 0.0f);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape));
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, float v, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.vec().begin(), t.vec().end(), v);
    return t;
}

Tensor Tensor::scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

float Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor is not scalar");
    return node_->value[0];
}

std::vector<float>& Tensor::grad_mut() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(std::move(n));
}

Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0f);
    bool need = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p.requires_grad()) { need = true; break; }
    if (need) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss.requires_grad()) throw std::invalid_argument("backward: loss has no recorded graph");

    // iterative post-order DFS; topo holds children after their parents
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> seen;
    struct Frame { TensorNode* n; size_t next; };
    std::vector<Frame> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            TensorNode* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(f.n);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

void check_finite(const Tensor& t, const char* what) {
    for (float v : t.vec())
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value in ") + what);
}

// ---------------- elementwise ----------------

namespace {
template <class Fwd, class Bwd>
Tensor ew_binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    Tensor out = make_op(a.shape(), {a, b}, [bwd](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        TensorNode* pb = n.parents[1].get();
        const size_t m = n.value.size();
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            bwd(n.grad[i], pa->value[i], pb->value[i],
                pa->requires_grad ? &pa->grad[i] : nullptr,
                pb->requires_grad ? &pb->grad[i] : nullptr);
    });
    const size_t m = out.vec().size();
    for (size_t i = 0; i < m; ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
    return out;
}

template <class Fwd, class Bwd>
Tensor ew_unary(const Tensor& a, Fwd fwd, Bwd bwd) {
    Tensor out = make_op(a.shape(), {a}, [bwd](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        pa->ensure_grad();
        const size_t m = n.value.size();
        for (size_t i = 0; i < m; ++i) pa->grad[i] += n.grad[i] * bwd(pa->value[i], n.value[i]);
    });
    const size_t m = out.vec().size();
    for (size_t i = 0; i < m; ++i) out.data()[i] = fwd(a.data()[i]);
    return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return ew_binary(a, b, "add",
        [](float x, float y) { return x + y; },
        [](float g, float, float, float* ga, float* gb) {
            if (ga) *ga += g;
            if (gb) *gb += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return ew_binary(a, b, "sub",
        [](float x, float y) { return x - y; },
        [](float g, float, float, float* ga, float* gb) {
            if (ga) *ga += g;
            if (gb) *gb -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return ew_binary(a, b, "mul",
        [](float x, float y) { return x * y; },
        [](float g, float x, float y, float* ga, float* gb) {
            if (ga) *ga += g * y;
            if (gb) *gb += g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return ew_binary(a, b, "div",
        [](float x, float y) { return x / y; },
        [](float g, float x, float y, float* ga, float* gb) {
            if (ga) *ga += g / y;
            if (gb) *gb -= g * x / (y * y);
        });
}

Tensor add_scalar(const Tensor& a, float s) {
    return ew_unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Tensor scale(const Tensor& a, float s) {
    return ew_unary(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor log(const Tensor& a) {
    return ew_unary(a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tensor relu(const Tensor& a) {
    return ew_unary(a, [](float x) { return x > 0.0f ? x : 0.0f; },
                    [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& a, float slope) {
    return ew_unary(a, [slope](float x) { return x > 0.0f ? x : slope * x; },
                    [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

Tensor sigmoid(const Tensor& a) {
    return ew_unary(a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
                    [](float, float y) { return y * (1.0f - y); });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    return ew_unary(a, [lo, hi](float x) { return std::max(lo, std::min(hi, x)); },
                    [lo, hi](float x, float) { return (x > lo && x < hi) ? 1.0f : 0.0f; });
}

// ---------------- reductions / shape ----------------

Tensor sum(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("sum: empty tensor");
    Tensor out = make_op(Shape{1}, {a}, [](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        pa->ensure_grad();
        const float g = n.grad[0];
        for (auto& v : pa->grad) v += g;
    });
    double acc = 0.0;
    for (float v : a.vec()) acc += v;
    out.data()[0] = static_cast<float>(acc);
    return out;
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = make_op(std::move(shape), {a}, [](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    });
    out.vec() = a.vec();
    return out;
}

Tensor transpose2d(const Tensor& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose2d: need 2-D tensor");
    const int R = a.dim(0), C = a.dim(1);
    Tensor out = make_op(Shape{C, R}, {a}, [R, C](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        pa->ensure_grad();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                pa->grad[static_cast<size_t>(r) * C + c] += n.grad[static_cast<size_t>(c) * R + r];
    });
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out.data()[static_cast<size_t>(c) * R + r] = a.data()[static_cast<size_t>(r) * C + c];
    return out;
}

Tensor select0(const Tensor& a, int index) {
    if (a.ndim() < 1 || index < 0 || index >= a.dim(0))
        throw std::invalid_argument("select0: index out of range");
    Shape s = a.shape();
    s[0] = 1;
    const size_t block = static_cast<size_t>(a.numel() / a.dim(0));
    const size_t off = block * static_cast<size_t>(index);
    Tensor out = make_op(std::move(s), {a}, [block, off](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        pa->ensure_grad();
        for (size_t i = 0; i < block; ++i) pa->grad[off + i] += n.grad[i];
    });
    std::memcpy(out.data(), a.data() + off, block * sizeof(float));
    return out;
}

Tensor concat_axis0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_axis0: empty list");
    Shape s = parts[0].shape();
    int total = 0;
    std::vector<size_t> blocks;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        Shape ref = s;
        ref[0] = ps[0];
        if (ps != ref) throw std::invalid_argument("concat_axis0: trailing dims differ");
        total += ps[0];
        blocks.push_back(static_cast<size_t>(p.numel()));
    }
    s[0] = total;
    Tensor out = make_op(std::move(s), std::vector<Tensor>(parts), [blocks](TensorNode& n) {
        size_t off = 0;
        for (size_t k = 0; k < n.parents.size(); ++k) {
            TensorNode* p = n.parents[k].get();
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < blocks[k]; ++i) p->grad[i] += n.grad[off + i];
            }
            off += blocks[k];
        }
    });
    size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + off, p.data(), p.vec().size() * sizeof(float));
        off += p.vec().size();
    }
    return out;
}

Tensor scale_t(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw std::invalid_argument("scale_t: scale must be a scalar tensor");
    Tensor out = make_op(x.shape(), {x, s}, [](TensorNode& n) {
        TensorNode* px = n.parents[0].get();
        TensorNode* ps = n.parents[1].get();
        const float sv = ps->value[0];
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i] * sv;
        }
        if (ps->requires_grad) {
            ps->ensure_grad();
            double acc = 0.0;
            for (size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * px->value[i];
            ps->grad[0] += static_cast<float>(acc);
        }
    });
    const float sv = s.data()[0];
    for (size_t i = 0; i < out.vec().size(); ++i) out.data()[i] = x.data()[i] * sv;
    return out;
}

Tensor tile0(const Tensor& x, int n) {
    if (n < 1) throw std::invalid_argument("tile0: n must be positive");
    Shape s;
    s.push_back(n);
    for (int d : x.shape()) s.push_back(d);
    const size_t block = x.vec().size();
    Tensor out = make_op(std::move(s), {x}, [block, n](TensorNode& nd) {
        TensorNode* px = nd.parents[0].get();
        px->ensure_grad();
        for (int k = 0; k < n; ++k)
            for (size_t i = 0; i < block; ++i)
                px->grad[i] += nd.grad[static_cast<size_t>(k) * block + i];
    });
    for (int k = 0; k < n; ++k)
        std::memcpy(out.data() + static_cast<size_t>(k) * block, x.data(), block * sizeof(float));
    return out;
}

// ---------------- matmul ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out = make_op(Shape{M, N}, {a, b}, [M, K, N](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        TensorNode* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            // dA += dC * B^T
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, K, N, 1.0f,
                        n.grad.data(), N, pb->value.data(), N, 1.0f, pa->grad.data(), K);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            // dB += A^T * dC
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, N, M, 1.0f,
                        pa->value.data(), K, n.grad.data(), N, 1.0f, pb->grad.data(), N);
        }
    });
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, N, K, 1.0f,
                a.data(), K, b.data(), N, 0.0f, out.data(), N);
    return out;
}

// ---------------- softmax ----------------

namespace {
// softmax over contiguous rows of length C; strided variant used for NCHW
void softmax_forward(const float* in, float* out, int rows, int C) {
    for (int r = 0; r < rows; ++r) {
        const float* x = in + static_cast<size_t>(r) * C;
        float* y = out + static_cast<size_t>(r) * C;
        float mx = x[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        float denom = 0.0f;
        for (int c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - mx);
            denom += y[c];
        }
        const float inv = 1.0f / denom;
        for (int c = 0; c < C; ++c) y[c] *= inv;
    }
}
}  // namespace

Tensor softmax_rows(const Tensor& logits) {
    if (logits.numel() == 0) throw std::invalid_argument("softmax_rows: empty tensor");
    if (logits.ndim() != 2) throw std::invalid_argument("softmax_rows: need 2-D tensor");
    const int R = logits.dim(0), C = logits.dim(1);
    Tensor out = make_op(logits.shape(), {logits}, [R, C](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        pa->ensure_grad();
        for (int r = 0; r < R; ++r) {
            const float* y = n.value.data() + static_cast<size_t>(r) * C;
            const float* g = n.grad.data() + static_cast<size_t>(r) * C;
            float* gx = pa->grad.data() + static_cast<size_t>(r) * C;
            float dot = 0.0f;
            for (int c = 0; c < C; ++c) dot += g[c] * y[c];
            for (int c = 0; c < C; ++c) gx[c] += y[c] * (g[c] - dot);
        }
    });
    softmax_forward(logits.data(), out.data(), R, C);
    return out;
}

Tensor softmax_channels(const Tensor& logits) {
    if (logits.ndim() != 4) throw std::invalid_argument("softmax_channels: need [N,C,H,W]");
    const int N = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    const int HW = H * W;
    Tensor out = make_op(logits.shape(), {logits}, [N, C, HW](TensorNode& n) {
        TensorNode* pa = n.parents[0].get();
        pa->ensure_grad();
        for (int b = 0; b < N; ++b) {
            const size_t base = static_cast<size_t>(b) * C * HW;
            for (int p = 0; p < HW; ++p) {
                float dot = 0.0f;
                for (int c = 0; c < C; ++c) {
                    const size_t i = base + static_cast<size_t>(c) * HW + p;
                    dot += n.grad[i] * n.value[i];
                }
                for (int c = 0; c < C; ++c) {
                    const size_t i = base + static_cast<size_t>(c) * HW + p;
                    pa->grad[i] += n.value[i] * (n.grad[i] - dot);
                }
            }
        }
    });
    for (int b = 0; b < N; ++b) {
        const size_t base = static_cast<size_t>(b) * C * HW;
        for (int p = 0; p < HW; ++p) {
            float mx = -1e30f;
            for (int c = 0; c < C; ++c) mx = std::max(mx, logits.data()[base + static_cast<size_t>(c) * HW + p]);
            float denom = 0.0f;
            for (int c = 0; c < C; ++c) {
                const size_t i = base + static_cast<size_t>(c) * HW + p;
                out.data()[i] = std::exp(logits.data()[i] - mx);
                denom += out.data()[i];
            }
            const float inv = 1.0f / denom;
            for (int c = 0; c < C; ++c) out.data()[base + static_cast<size_t>(c) * HW + p] *= inv;
        }
    }
    return out;
}

// ---------------- conv2d ----------------

namespace {
struct ConvDims {
    int N, Cin, H, W, Cout, k, stride, pad, Ho, Wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw std::invalid_argument("conv2d: x must be [N,Cin,H,W], w [Cout,Cin,k,k]");
    ConvDims d;
    d.N = x.dim(0); d.Cin = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
    d.Cout = w.dim(0); d.k = w.dim(2);
    if (w.dim(1) != d.Cin || w.dim(3) != d.k)
        throw std::invalid_argument("conv2d: kernel shape mismatch " + shape_str(w.shape()) +
                                    " for input " + shape_str(x.shape()));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    d.stride = stride; d.pad = padding;
    d.Ho = (d.H + 2 * padding - d.k) / stride + 1;
    d.Wo = (d.W + 2 * padding - d.k) / stride + 1;
    if (d.Ho < 1 || d.Wo < 1) throw std::invalid_argument("conv2d: output would be empty");
    return d;
}

void im2col(const float* x, const ConvDims& d, float* col) {
    // col is [Cin*k*k, Ho*Wo]
    const int HoWo = d.Ho * d.Wo;
    for (int c = 0; c < d.Cin; ++c) {
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                float* dst = col + static_cast<size_t>((c * d.k + ky) * d.k + kx) * HoWo;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.H) {
                        std::memset(dst + static_cast<size_t>(oy) * d.Wo, 0, sizeof(float) * d.Wo);
                        continue;
                    }
                    const float* src = x + (static_cast<size_t>(c) * d.H + iy) * d.W;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        dst[static_cast<size_t>(oy) * d.Wo + ox] =
                            (ix >= 0 && ix < d.W) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_accum(const float* col, const ConvDims& d, float* gx) {
    const int HoWo = d.Ho * d.Wo;
    for (int c = 0; c < d.Cin; ++c) {
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                const float* src = col + static_cast<size_t>((c * d.k + ky) * d.k + kx) * HoWo;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.H) continue;
                    float* dst = gx + (static_cast<size_t>(c) * d.H + iy) * d.W;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.W) dst[ix] += src[static_cast<size_t>(oy) * d.Wo + ox];
                    }
                }
            }
        }
    }
}
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    ConvDims d = conv_dims(x, w, stride, padding);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != d.Cout))
        throw std::invalid_argument("conv2d: bias must be [Cout]");
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    const bool has_bias = b.defined();

    Tensor out = make_op(Shape{d.N, d.Cout, d.Ho, d.Wo}, std::move(parents),
        [d, has_bias](TensorNode& n) {
            TensorNode* px = n.parents[0].get();
            TensorNode* pw = n.parents[1].get();
            TensorNode* pb = has_bias ? n.parents[2].get() : nullptr;
            const int K = d.Cin * d.k * d.k;
            const int HoWo = d.Ho * d.Wo;
            std::vector<float> col(static_cast<size_t>(K) * HoWo);
            std::vector<float> gcol;
            if (px->requires_grad) { px->ensure_grad(); gcol.resize(col.size()); }
            if (pw->requires_grad) pw->ensure_grad();
            if (pb && pb->requires_grad) pb->ensure_grad();
            for (int nidx = 0; nidx < d.N; ++nidx) {
                const float* gy = n.grad.data() + static_cast<size_t>(nidx) * d.Cout * HoWo;
                if (pw->requires_grad) {
                    im2col(px->value.data() + static_cast<size_t>(nidx) * d.Cin * d.H * d.W, d, col.data());
                    // dW += dY * col^T
                    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, d.Cout, K, HoWo, 1.0f,
                                gy, HoWo, col.data(), HoWo, 1.0f, pw->grad.data(), K);
                }
                if (px->requires_grad) {
                    // gcol = W^T * dY, then scatter
                    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, HoWo, d.Cout, 1.0f,
                                pw->value.data(), K, gy, HoWo, 0.0f, gcol.data(), HoWo);
                    col2im_accum(gcol.data(), d,
                                 px->grad.data() + static_cast<size_t>(nidx) * d.Cin * d.H * d.W);
                }
                if (pb && pb->requires_grad) {
                    for (int c = 0; c < d.Cout; ++c) {
                        float acc = 0.0f;
                        const float* g = gy + static_cast<size_t>(c) * HoWo;
                        for (int p = 0; p < HoWo; ++p) acc += g[p];
                        pb->grad[c] += acc;
                    }
                }
            }
        });

    const int K = d.Cin * d.k * d.k;
    const int HoWo = d.Ho * d.Wo;
    std::vector<float> col(static_cast<size_t>(K) * HoWo);
    for (int nidx = 0; nidx < d.N; ++nidx) {
        im2col(x.data() + static_cast<size_t>(nidx) * d.Cin * d.H * d.W, d, col.data());
        float* y = out.data() + static_cast<size_t>(nidx) * d.Cout * HoWo;
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, d.Cout, HoWo, K, 1.0f,
                    w.data(), K, col.data(), HoWo, 0.0f, y, HoWo);
        if (b.defined())
            for (int c = 0; c < d.Cout; ++c) {
                const float bv = b.data()[c];
                float* yc = y + static_cast<size_t>(c) * HoWo;
                for (int p = 0; p < HoWo; ++p) yc[p] += bv;
            }
    }
    return out;
}

// ---------------- pooling / upsample ----------------

Tensor maxpool2x2(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("maxpool2x2: need [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw std::invalid_argument("maxpool2x2: H and W must be even");
    const int Ho = H / 2, Wo = W / 2;
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(N) * C * Ho * Wo);
    Tensor out = make_op(Shape{N, C, Ho, Wo}, {x}, [argmax](TensorNode& n) {
        TensorNode* px = n.parents[0].get();
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) px->grad[(*argmax)[i]] += n.grad[i];
    });
    size_t o = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xp = x.data() + static_cast<size_t>(nc) * H * W;
        const size_t base = static_cast<size_t>(nc) * H * W;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox, ++o) {
                int best = (2 * oy) * W + 2 * ox;
                float bv = xp[best];
                const int cand[3] = {(2 * oy) * W + 2 * ox + 1, (2 * oy + 1) * W + 2 * ox,
                                     (2 * oy + 1) * W + 2 * ox + 1};
                for (int idx : cand)
                    if (xp[idx] > bv) { bv = xp[idx]; best = idx; }
                out.data()[o] = bv;
                (*argmax)[o] = static_cast<int32_t>(base + best);
            }
    }
    return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2x: need [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H * 2, Wo = W * 2;
    Tensor out = make_op(Shape{N, C, Ho, Wo}, {x}, [N, C, H, W, Ho, Wo](TensorNode& n) {
        TensorNode* px = n.parents[0].get();
        px->ensure_grad();
        for (int nc = 0; nc < N * C; ++nc) {
            const float* g = n.grad.data() + static_cast<size_t>(nc) * Ho * Wo;
            float* gx = px->grad.data() + static_cast<size_t>(nc) * H * W;
            for (int y = 0; y < Ho; ++y)
                for (int xw = 0; xw < Wo; ++xw)
                    gx[(y / 2) * W + xw / 2] += g[static_cast<size_t>(y) * Wo + xw];
        }
    });
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xp = x.data() + static_cast<size_t>(nc) * H * W;
        float* y = out.data() + static_cast<size_t>(nc) * Ho * Wo;
        for (int yy = 0; yy < Ho; ++yy)
            for (int xx = 0; xx < Wo; ++xx)
                y[static_cast<size_t>(yy) * Wo + xx] = xp[(yy / 2) * W + xx / 2];
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty list");
    const Tensor& first = parts[0];
    if (first.ndim() != 4) throw std::invalid_argument("concat_channels: need [N,C,H,W]");
    const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
    int Ctot = 0;
    std::vector<int> chans;
    for (const auto& p : parts) {
        if (p.ndim() != 4 || p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw std::invalid_argument("concat_channels: mismatched shapes");
        Ctot += p.dim(1);
        chans.push_back(p.dim(1));
    }
    const size_t HW = static_cast<size_t>(H) * W;
    Tensor out = make_op(Shape{N, Ctot, H, W}, std::vector<Tensor>(parts),
        [N, Ctot, HW, chans](TensorNode& n) {
            for (int b = 0; b < N; ++b) {
                size_t coff = 0;
                for (size_t k = 0; k < n.parents.size(); ++k) {
                    TensorNode* p = n.parents[k].get();
                    const size_t sz = static_cast<size_t>(chans[k]) * HW;
                    if (p->requires_grad) {
                        p->ensure_grad();
                        const float* g = n.grad.data() + (static_cast<size_t>(b) * Ctot * HW + coff);
                        float* gp = p->grad.data() + static_cast<size_t>(b) * sz;
                        for (size_t i = 0; i < sz; ++i) gp[i] += g[i];
                    }
                    coff += sz;
                }
            }
        });
    for (int b = 0; b < N; ++b) {
        size_t coff = 0;
        for (const auto& p : parts) {
            const size_t sz = static_cast<size_t>(p.dim(1)) * HW;
            std::memcpy(out.data() + static_cast<size_t>(b) * Ctot * HW + coff,
                        p.data() + static_cast<size_t>(b) * sz, sz * sizeof(float));
            coff += sz;
        }
    }
    return out;
}

// ---------------- batch norm ----------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var,
                  bool training, float momentum, float eps) {
    if (x.ndim() != 4) throw std::invalid_argument("batch_norm: need [N,C,H,W]");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C ||
        running_mean.numel() != C || running_var.numel() != C)
        throw std::invalid_argument("batch_norm: per-channel params must have C elements");
    const size_t HW = static_cast<size_t>(H) * W;
    const size_t cnt = static_cast<size_t>(N) * HW;

    std::vector<float> mu(C), var(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < N; ++b) {
                const float* xp = x.data() + (static_cast<size_t>(b) * C + c) * HW;
                for (size_t i = 0; i < HW; ++i) s += xp[i];
            }
            mu[c] = static_cast<float>(s / cnt);
            double v = 0.0;
            for (int b = 0; b < N; ++b) {
                const float* xp = x.data() + (static_cast<size_t>(b) * C + c) * HW;
                for (size_t i = 0; i < HW; ++i) {
                    const double dvi = xp[i] - mu[c];
                    v += dvi * dvi;
                }
            }
            var[c] = static_cast<float>(v / cnt);  // biased, used for normalization
            running_mean.data()[c] = (1.0f - momentum) * running_mean.data()[c] + momentum * mu[c];
            const float unbiased = cnt > 1 ? var[c] * cnt / (cnt - 1) : var[c];
            running_var.data()[c] = (1.0f - momentum) * running_var.data()[c] + momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mu[c] = running_mean.data()[c];
            var[c] = running_var.data()[c];
        }
    }

    auto xhat = std::make_shared<std::vector<float>>(x.vec().size());
    std::vector<float> inv_std(C);
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0f / std::sqrt(var[c] + eps);

    Tensor out = make_op(x.shape(), {x, gamma, beta},
        [N, C, HW, cnt, xhat, inv_std, training](TensorNode& n) {
            TensorNode* px = n.parents[0].get();
            TensorNode* pg = n.parents[1].get();
            TensorNode* pb = n.parents[2].get();
            std::vector<float> dgamma(C, 0.0f), dbeta(C, 0.0f);
            for (int c = 0; c < C; ++c) {
                double dg = 0.0, db = 0.0;
                for (int b = 0; b < N; ++b) {
                    const size_t base = (static_cast<size_t>(b) * C + c) * HW;
                    for (size_t i = 0; i < HW; ++i) {
                        dg += n.grad[base + i] * (*xhat)[base + i];
                        db += n.grad[base + i];
                    }
                }
                dgamma[c] = static_cast<float>(dg);
                dbeta[c] = static_cast<float>(db);
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (int c = 0; c < C; ++c) pg->grad[c] += dgamma[c];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int c = 0; c < C; ++c) pb->grad[c] += dbeta[c];
            }
            if (px->requires_grad) {
                px->ensure_grad();
                for (int c = 0; c < C; ++c) {
                    const float g = pg->value[c];
                    const float istd = inv_std[c];
                    if (training) {
                        const float m = 1.0f / static_cast<float>(cnt);
                        for (int b = 0; b < N; ++b) {
                            const size_t base = (static_cast<size_t>(b) * C + c) * HW;
                            for (size_t i = 0; i < HW; ++i) {
                                const float go = n.grad[base + i];
                                px->grad[base + i] += g * istd *
                                    (go - m * dbeta[c] - (*xhat)[base + i] * m * dgamma[c]);
                            }
                        }
                    } else {
                        for (int b = 0; b < N; ++b) {
                            const size_t base = (static_cast<size_t>(b) * C + c) * HW;
                            for (size_t i = 0; i < HW; ++i)
                                px->grad[base + i] += n.grad[base + i] * g * istd;
                        }
                    }
                }
            }
        });

    for (int c = 0; c < C; ++c) {
        const float g = gamma.data()[c], bt = beta.data()[c];
        const float m = mu[c], istd = inv_std[c];
        for (int b = 0; b < N; ++b) {
            const size_t base = (static_cast<size_t>(b) * C + c) * HW;
            for (size_t i = 0; i < HW; ++i) {
                const float xh = (x.data()[base + i] - m) * istd;
                (*xhat)[base + i] = xh;
                out.data()[base + i] = g * xh + bt;
            }
        }
    }
    return out;
}

}  // namespace fedlppa
