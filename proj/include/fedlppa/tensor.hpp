#pragma once

// Dense float32 tensors with reverse-mode autodiff on a dynamic tape.
// Tensors are cheap shared handles to nodes; an op links its result node
// to its parents and stores a closure that scatters the output gradient.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fedlppa {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;   // allocated lazily, same size as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // accumulates into parents' grad

    void ensure_grad();
};

// Scoped switch that disables tape recording (evaluation / oracles).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
private:
    bool prev_;
};
bool grad_enabled();

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float v, bool requires_grad = false);
    static Tensor scalar(float v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    float* data() { return node_->value.data(); }
    const float* data() const { return node_->value.data(); }
    std::vector<float>& vec() { return node_->value; }
    const std::vector<float>& vec() const { return node_->value; }
    float item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    const std::vector<float>& grad() const { return node_->grad; }
    std::vector<float>& grad_mut();
    void zero_grad();

    std::shared_ptr<TensorNode> node() const { return node_; }

    // Drops any recorded history, keeping the buffer (constant view of data).
    Tensor detach() const;

private:
    std::shared_ptr<TensorNode> node_;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    friend Tensor make_op(Shape shape, std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backprop);
};

// Creates a result node; records parents/backprop only while grad is enabled
// and some parent requires grad.
Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop);

// Runs reverse-mode accumulation from a scalar loss. Each reachable node's
// backprop fires exactly once, in reverse topological order.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // Hadamard
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor scale(const Tensor& a, float s);
Tensor neg(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope = 0.01f);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

// ---- reductions / shape ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose2d(const Tensor& a);
// index along axis 0, keeps the leading axis with extent 1
Tensor select0(const Tensor& a, int index);
Tensor concat_axis0(const std::vector<Tensor>& parts);

// multiply every element of x by a learnable scalar s (shape [1])
Tensor scale_t(const Tensor& x, const Tensor& s);
// repeat x n times along a new leading batch axis; backward sums copies
Tensor tile0(const Tensor& x, int n);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N]

// row softmax of a 2-D tensor, max-subtracted
Tensor softmax_rows(const Tensor& logits);
// softmax over axis 1 of an [N,C,H,W] tensor
Tensor softmax_channels(const Tensor& logits);

// ---- image ops, all on [N,C,H,W] ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int stride = 1, int padding = 0);
Tensor maxpool2x2(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);
Tensor concat_channels(const std::vector<Tensor>& parts);
// training=true uses batch statistics and updates the running buffers
// in place; eval uses the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var,
                  bool training, float momentum = 0.1f, float eps = 1e-5f);

void check_finite(const Tensor& t, const char* what);

}  // namespace fedlppa
