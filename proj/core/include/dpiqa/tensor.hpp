#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dpiqa/common.hpp"
#include "dpiqa/rng.hpp"

namespace dpiqa {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the reverse-mode tape. Values are always double, row-major,
// contiguous. backward_fn reads this node's grad and accumulates into the
// parents' grads.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    const char* op = "leaf";

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Handle to a TensorNode. Cheap to copy; copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value);
    static Tensor from_vector(Shape shape, std::vector<double> values);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int ndim() const;
    int64_t dim(int i) const;  // negative i counts from the back
    int64_t numel() const;

    double* data();
    const double* data() const;
    double item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);

    bool has_grad() const;
    const std::vector<double>& grad_ref() const;
    std::vector<double>& grad_mut();
    Tensor grad() const;  // copy; zeros if no grad accumulated
    void zero_grad();

    // Reverse pass from a scalar node.
    void backward();

    Tensor detach() const;  // copy of the value, no graph
    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// Thread-local autograd switch. Inference paths wrap themselves in a
// NoGradGuard so no tape is recorded.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Helper for defining differentiable ops outside tensor.cpp.
Tensor make_node(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backward_fn, const char* op);

bool all_finite(const Tensor& t);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// ---- linear algebra ----
// a: (M,K). b: (K,N), or (N,K) when transpose_b.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x: (rows..., in); w: (out, in); b: (out) or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x: (N,C,H,W); w: (O,C,kh,kw); b: (O) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat_channels(const std::vector<Tensor>& xs);  // NCHW along C
Tensor nchw_to_nlc(const Tensor& x);                    // (N,C,H,W) -> (N,H*W,C)
Tensor nlc_to_nchw(const Tensor& x, int64_t h, int64_t w);

// ---- normalization / attention pieces ----
Tensor softmax_lastdim(const Tensor& x);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  int64_t groups, double eps = 1e-5);

// ---- spatial ----
// Half-pixel-center bilinear; exact identity when sizes match.
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor global_avg_pool(const Tensor& x);                 // (N,C,H,W) -> (N,C)
Tensor scale_channels(const Tensor& x, const Tensor& s); // x * s[n,c]

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

}  // namespace dpiqa
