#include "dpiqa/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace dpiqa {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapCMat = Eigen::Map<const RowMat>;
using StrideT = Eigen::OuterStride<>;

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- Tensor basics ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = new_node(shape, std::vector<double>(shape_numel(shape), 0.0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value) {
    return Tensor(new_node(shape, std::vector<double>(shape_numel(shape), value)));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
    check(static_cast<int64_t>(values.size()) == shape_numel(shape),
          "from_vector: ", values.size(), " values for shape ", shape_str(shape));
    return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    return Tensor(new_node(shape, rng.normal_vec(static_cast<size_t>(shape_numel(shape)), stddev)));
}

Tensor Tensor::scalar(double v) { return from_vector({1}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }

int64_t Tensor::dim(int i) const {
    int n = ndim();
    if (i < 0) i += n;
    check(i >= 0 && i < n, "dim index out of range");
    return node_->shape[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return node_->numel(); }
double* Tensor::data() { return node_->value.data(); }
const double* Tensor::data() const { return node_->value.data(); }

double Tensor::item() const {
    check(numel() == 1, "item(): tensor has ", numel(), " elements");
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad_ref() const {
    node_->ensure_grad();
    return node_->grad;
}

std::vector<double>& Tensor::grad_mut() {
    node_->ensure_grad();
    return node_->grad;
}

Tensor Tensor::grad() const {
    node_->ensure_grad();
    return from_vector(node_->shape, node_->grad);
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor(new_node(node_->shape, node_->value));
}

void Tensor::backward() {
    check(defined() && numel() == 1, "backward() requires a scalar tensor");
    check(node_->requires_grad, "backward() on a tensor with no grad path");

    // post-order DFS over grad-requiring ancestors
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* n;
        size_t child;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.child < f.n->parents.size()) {
            TensorNode* p = f.n->parents[f.child++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

Tensor make_node(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backward_fn, const char* op) {
    auto n = new_node(std::move(shape), std::move(value));
    n->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs)
            if (in.defined() && in.requires_grad()) needs = true;
    }
    if (needs) {
        n->requires_grad = true;
        for (const auto& in : inputs)
            if (in.defined()) n->parents.push_back(in.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

bool all_finite(const Tensor& t) {
    const double* p = t.data();
    for (int64_t i = 0, n = t.numel(); i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

// ---- elementwise ----

namespace {

void accum(TensorNode& dst, const double* src, int64_t n) {
    dst.ensure_grad();
    double* g = dst.grad.data();
    for (int64_t i = 0; i < n; ++i) g[i] += src[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()), " vs ",
          shape_str(b.shape()));
    const int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double *pa = a.data(), *pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
    auto an = a.node(), bn = b.node();
    return make_node(
        a.shape(), std::move(out), {a, b},
        [an, bn, n](TensorNode& self) {
            if (an->requires_grad) accum(*an, self.grad.data(), n);
            if (bn->requires_grad) accum(*bn, self.grad.data(), n);
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "sub: shape mismatch ", shape_str(a.shape()), " vs ",
          shape_str(b.shape()));
    const int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double *pa = a.data(), *pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
    auto an = a.node(), bn = b.node();
    return make_node(
        a.shape(), std::move(out), {a, b},
        [an, bn, n](TensorNode& self) {
            if (an->requires_grad) accum(*an, self.grad.data(), n);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bn->grad[i] -= self.grad[i];
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mul: shape mismatch");
    const int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double *pa = a.data(), *pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
    auto an = a.node(), bn = b.node();
    return make_node(
        a.shape(), std::move(out), {a, b},
        [an, bn, n](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += self.grad[i] * an->value[i];
            }
        },
        "mul");
}

Tensor add_scalar(const Tensor& a, double s) {
    const int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + s;
    auto an = a.node();
    return make_node(
        a.shape(), std::move(out), {a},
        [an, n](TensorNode& self) { accum(*an, self.grad.data(), n); }, "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double s) {
    const int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * s;
    auto an = a.node();
    return make_node(
        a.shape(), std::move(out), {a},
        [an, n, s](TensorNode& self) {
            an->ensure_grad();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * s;
        },
        "mul_scalar");
}

Tensor silu(const Tensor& x) {
    const int64_t n = x.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* px = x.data();
    for (int64_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-px[i]));
        out[i] = px[i] * s;
    }
    auto xn = x.node();
    return make_node(
        x.shape(), std::move(out), {x},
        [xn, n](TensorNode& self) {
            xn->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const double v = xn->value[i];
                const double s = 1.0 / (1.0 + std::exp(-v));
                xn->grad[i] += self.grad[i] * s * (1.0 + v * (1.0 - s));
            }
        },
        "silu");
}

Tensor sigmoid(const Tensor& x) {
    const int64_t n = x.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* px = x.data();
    for (int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-px[i]));
    auto xn = x.node();
    return make_node(
        x.shape(), std::move(out), {x},
        [xn, n](TensorNode& self) {
            xn->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const double y = self.value[i];
                xn->grad[i] += self.grad[i] * y * (1.0 - y);
            }
        },
        "sigmoid");
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    check(a.ndim() == 2 && b.ndim() == 2, "matmul: expects 2-D tensors");
    const int64_t M = a.dim(0), K = a.dim(1);
    const int64_t N = transpose_b ? b.dim(0) : b.dim(1);
    const int64_t Kb = transpose_b ? b.dim(1) : b.dim(0);
    check(K == Kb, "matmul: inner dims differ (", K, " vs ", Kb, ")");

    std::vector<double> out(static_cast<size_t>(M * N));
    {
        MapCMat A(a.data(), M, K);
        MapCMat B(b.data(), transpose_b ? N : K, transpose_b ? K : N);
        MapMat C(out.data(), M, N);
        if (transpose_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    }
    auto an = a.node(), bn = b.node();
    return make_node(
        {M, N}, std::move(out), {a, b},
        [an, bn, M, N, K, transpose_b](TensorNode& self) {
            MapCMat dY(self.grad.data(), M, N);
            if (an->requires_grad) {
                an->ensure_grad();
                MapMat dA(an->grad.data(), M, K);
                MapCMat B(bn->value.data(), transpose_b ? N : K, transpose_b ? K : N);
                if (transpose_b)
                    dA.noalias() += dY * B;
                else
                    dA.noalias() += dY * B.transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MapCMat A(an->value.data(), M, K);
                if (transpose_b) {
                    MapMat dB(bn->grad.data(), N, K);
                    dB.noalias() += dY.transpose() * A;
                } else {
                    MapMat dB(bn->grad.data(), K, N);
                    dB.noalias() += A.transpose() * dY;
                }
            }
        },
        "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(w.ndim() == 2, "linear: weight must be 2-D");
    const int64_t in = w.dim(1), out_f = w.dim(0);
    check(x.dim(-1) == in, "linear: input width ", x.dim(-1), " != weight in ", in);
    const int64_t rows = x.numel() / in;
    if (b.defined()) check(b.numel() == out_f, "linear: bias size mismatch");

    std::vector<double> out(static_cast<size_t>(rows * out_f));
    {
        MapCMat X(x.data(), rows, in);
        MapCMat W(w.data(), out_f, in);
        MapMat Y(out.data(), rows, out_f);
        Y.noalias() = X * W.transpose();
        if (b.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), out_f);
    }
    Shape oshape = x.shape();
    oshape.back() = out_f;
    auto xn = x.node(), wn = w.node();
    auto bnode = b.defined() ? b.node() : nullptr;
    return make_node(
        std::move(oshape), std::move(out), {x, w, b},
        [xn, wn, bnode, rows, in, out_f](TensorNode& self) {
            MapCMat dY(self.grad.data(), rows, out_f);
            if (xn->requires_grad) {
                xn->ensure_grad();
                MapMat dX(xn->grad.data(), rows, in);
                MapCMat W(wn->value.data(), out_f, in);
                dX.noalias() += dY * W;
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                MapMat dW(wn->grad.data(), out_f, in);
                MapCMat X(xn->value.data(), rows, in);
                dW.noalias() += dY.transpose() * X;
            }
            if (bnode && bnode->requires_grad) {
                bnode->ensure_grad();
                Eigen::Map<Eigen::RowVectorXd> dB(bnode->grad.data(), out_f);
                dB += dY.colwise().sum();
            }
        },
        "linear");
}

// ---- conv2d ----

namespace {

// Column buffer cap: 4M doubles (32 MB). Output rows are processed in chunks.
constexpr int64_t kColBudget = int64_t(1) << 22;

struct ConvDims {
    int64_t N, C, H, W, O, KH, KW, OH, OW, K;
    int64_t stride, pad;
};

// col is (K x P) row-major, P = (oy1-oy0)*OW, for one sample.
void im2col_chunk(const double* x, const ConvDims& d, int64_t oy0, int64_t oy1, double* col) {
    const int64_t P = (oy1 - oy0) * d.OW;
    for (int64_t c = 0; c < d.C; ++c) {
        const double* xc = x + c * d.H * d.W;
        for (int64_t ky = 0; ky < d.KH; ++ky) {
            for (int64_t kx = 0; kx < d.KW; ++kx) {
                double* row = col + ((c * d.KH + ky) * d.KW + kx) * P;
                for (int64_t oy = oy0; oy < oy1; ++oy) {
                    double* seg = row + (oy - oy0) * d.OW;
                    const int64_t iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.H) {
                        std::fill(seg, seg + d.OW, 0.0);
                        continue;
                    }
                    const double* xrow = xc + iy * d.W;
                    for (int64_t ox = 0; ox < d.OW; ++ox) {
                        const int64_t ix = ox * d.stride + kx - d.pad;
                        seg[ox] = (ix >= 0 && ix < d.W) ? xrow[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// scatter-add of a (K x P) column chunk back into dx for one sample.
void col2im_chunk_add(double* dx, const ConvDims& d, int64_t oy0, int64_t oy1, const double* col) {
    const int64_t P = (oy1 - oy0) * d.OW;
    for (int64_t c = 0; c < d.C; ++c) {
        double* xc = dx + c * d.H * d.W;
        for (int64_t ky = 0; ky < d.KH; ++ky) {
            for (int64_t kx = 0; kx < d.KW; ++kx) {
                const double* row = col + ((c * d.KH + ky) * d.KW + kx) * P;
                for (int64_t oy = oy0; oy < oy1; ++oy) {
                    const double* seg = row + (oy - oy0) * d.OW;
                    const int64_t iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.H) continue;
                    double* xrow = xc + iy * d.W;
                    for (int64_t ox = 0; ox < d.OW; ++ox) {
                        const int64_t ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.W) xrow[ix] += seg[ox];
                    }
                }
            }
        }
    }
}

int64_t conv_rows_per_chunk(const ConvDims& d) {
    int64_t rows = kColBudget / std::max<int64_t>(1, d.K * d.OW);
    return std::max<int64_t>(1, std::min(rows, d.OH));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check(x.ndim() == 4 && w.ndim() == 4, "conv2d: x and w must be 4-D");
    ConvDims d;
    d.N = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.O = w.dim(0);
    d.KH = w.dim(2);
    d.KW = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    check(w.dim(1) == d.C, "conv2d: channel mismatch (x has ", d.C, ", w expects ", w.dim(1), ")");
    check(stride >= 1, "conv2d: stride must be >= 1");
    d.OH = (d.H + 2 * d.pad - d.KH) / d.stride + 1;
    d.OW = (d.W + 2 * d.pad - d.KW) / d.stride + 1;
    check(d.OH >= 1 && d.OW >= 1, "conv2d: kernel larger than padded input");
    d.K = d.C * d.KH * d.KW;
    if (b.defined()) check(b.numel() == d.O, "conv2d: bias size mismatch");

    std::vector<double> out(static_cast<size_t>(d.N * d.O * d.OH * d.OW));
    const int64_t rows_chunk = conv_rows_per_chunk(d);
    std::vector<double> col(static_cast<size_t>(d.K * rows_chunk * d.OW));
    {
        MapCMat W(w.data(), d.O, d.K);
        for (int64_t n = 0; n < d.N; ++n) {
            const double* xs = x.data() + n * d.C * d.H * d.W;
            double* ys = out.data() + n * d.O * d.OH * d.OW;
            for (int64_t oy0 = 0; oy0 < d.OH; oy0 += rows_chunk) {
                const int64_t oy1 = std::min(d.OH, oy0 + rows_chunk);
                const int64_t P = (oy1 - oy0) * d.OW;
                im2col_chunk(xs, d, oy0, oy1, col.data());
                MapCMat Col(col.data(), d.K, P);
                Eigen::Map<RowMat, 0, StrideT> Y(ys + oy0 * d.OW, d.O, P, StrideT(d.OH * d.OW));
                Y.noalias() = W * Col;
            }
            if (b.defined()) {
                const double* pb = b.data();
                for (int64_t o = 0; o < d.O; ++o) {
                    double* yo = ys + o * d.OH * d.OW;
                    const double bias = pb[o];
                    for (int64_t i = 0; i < d.OH * d.OW; ++i) yo[i] += bias;
                }
            }
        }
    }

    auto xn = x.node(), wn = w.node();
    auto bnode = b.defined() ? b.node() : nullptr;
    return make_node(
        {d.N, d.O, d.OH, d.OW}, std::move(out), {x, w, b},
        [xn, wn, bnode, d](TensorNode& self) {
            const int64_t rows_chunk = conv_rows_per_chunk(d);
            std::vector<double> col(static_cast<size_t>(d.K * rows_chunk * d.OW));
            if (wn->requires_grad) wn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int64_t n = 0; n < d.N; ++n) {
                const double* xs = xn->value.data() + n * d.C * d.H * d.W;
                const double* dys = self.grad.data() + n * d.O * d.OH * d.OW;
                for (int64_t oy0 = 0; oy0 < d.OH; oy0 += rows_chunk) {
                    const int64_t oy1 = std::min(d.OH, oy0 + rows_chunk);
                    const int64_t P = (oy1 - oy0) * d.OW;
                    Eigen::Map<const RowMat, 0, StrideT> dY(dys + oy0 * d.OW, d.O, P,
                                                            StrideT(d.OH * d.OW));
                    if (wn->requires_grad) {
                        im2col_chunk(xs, d, oy0, oy1, col.data());
                        MapCMat Col(col.data(), d.K, P);
                        MapMat dW(wn->grad.data(), d.O, d.K);
                        dW.noalias() += dY * Col.transpose();
                    }
                    if (xn->requires_grad) {
                        MapCMat W(wn->value.data(), d.O, d.K);
                        MapMat dCol(col.data(), d.K, P);
                        dCol.noalias() = W.transpose() * dY;
                        col2im_chunk_add(xn->grad.data() + n * d.C * d.H * d.W, d, oy0, oy1,
                                         col.data());
                    }
                }
            }
            if (bnode && bnode->requires_grad) {
                bnode->ensure_grad();
                for (int64_t n = 0; n < d.N; ++n) {
                    const double* dys = self.grad.data() + n * d.O * d.OH * d.OW;
                    for (int64_t o = 0; o < d.O; ++o) {
                        double s = 0.0;
                        const double* dyo = dys + o * d.OH * d.OW;
                        for (int64_t i = 0; i < d.OH * d.OW; ++i) s += dyo[i];
                        bnode->grad[o] += s;
                    }
                }
            }
        },
        "conv2d");
}

// ---- shape ----

Tensor reshape(const Tensor& x, Shape new_shape) {
    check(shape_numel(new_shape) == x.numel(), "reshape: numel mismatch ", shape_str(x.shape()),
          " -> ", shape_str(new_shape));
    auto xn = x.node();
    const int64_t n = x.numel();
    return make_node(
        std::move(new_shape), xn->value, {x},
        [xn, n](TensorNode& self) { accum(*xn, self.grad.data(), n); }, "reshape");
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    check(!xs.empty(), "concat_channels: empty input list");
    const int64_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int64_t C = 0;
    for (const auto& t : xs) {
        check(t.ndim() == 4 && t.dim(0) == N && t.dim(2) == H && t.dim(3) == W,
              "concat_channels: incompatible shapes");
        C += t.dim(1);
    }
    std::vector<double> out(static_cast<size_t>(N * C * H * W));
    const int64_t hw = H * W;
    int64_t coff = 0;
    for (const auto& t : xs) {
        const int64_t tc = t.dim(1);
        for (int64_t n = 0; n < N; ++n) {
            std::memcpy(out.data() + (n * C + coff) * hw, t.data() + n * tc * hw,
                        static_cast<size_t>(tc * hw) * sizeof(double));
        }
        coff += tc;
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& t : xs) nodes.push_back(t.node());
    return make_node(
        {N, C, H, W}, std::move(out), xs,
        [nodes, N, C, hw](TensorNode& self) {
            int64_t coff = 0;
            for (const auto& pn : nodes) {
                const int64_t tc = pn->shape[1];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int64_t n = 0; n < N; ++n) {
                        const double* src = self.grad.data() + (n * C + coff) * hw;
                        double* dst = pn->grad.data() + n * tc * hw;
                        for (int64_t i = 0; i < tc * hw; ++i) dst[i] += src[i];
                    }
                }
                coff += tc;
            }
        },
        "concat_channels");
}

Tensor nchw_to_nlc(const Tensor& x) {
    check(x.ndim() == 4, "nchw_to_nlc: expects 4-D");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), L = H * W;
    std::vector<double> out(static_cast<size_t>(N * L * C));
    const double* px = x.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const double* src = px + (n * C + c) * L;
            double* dst = out.data() + n * L * C + c;
            for (int64_t l = 0; l < L; ++l) dst[l * C] = src[l];
        }
    auto xn = x.node();
    return make_node(
        {N, L, C}, std::move(out), {x},
        [xn, N, C, L](TensorNode& self) {
            xn->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    double* dst = xn->grad.data() + (n * C + c) * L;
                    const double* src = self.grad.data() + n * L * C + c;
                    for (int64_t l = 0; l < L; ++l) dst[l] += src[l * C];
                }
        },
        "nchw_to_nlc");
}

Tensor nlc_to_nchw(const Tensor& x, int64_t h, int64_t w) {
    check(x.ndim() == 3, "nlc_to_nchw: expects 3-D");
    const int64_t N = x.dim(0), L = x.dim(1), C = x.dim(2);
    check(L == h * w, "nlc_to_nchw: L != h*w");
    std::vector<double> out(static_cast<size_t>(N * C * L));
    const double* px = x.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            double* dst = out.data() + (n * C + c) * L;
            const double* src = px + n * L * C + c;
            for (int64_t l = 0; l < L; ++l) dst[l] = src[l * C];
        }
    auto xn = x.node();
    return make_node(
        {N, C, h, w}, std::move(out), {x},
        [xn, N, C, L](TensorNode& self) {
            xn->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const double* src = self.grad.data() + (n * C + c) * L;
                    double* dst = xn->grad.data() + n * L * C + c;
                    for (int64_t l = 0; l < L; ++l) dst[l * C] += src[l];
                }
        },
        "nlc_to_nchw");
}

// ---- softmax / group norm ----

Tensor softmax_lastdim(const Tensor& x) {
    const int64_t D = x.dim(-1);
    const int64_t rows = x.numel() / D;
    std::vector<double> out(static_cast<size_t>(rows * D));
    const double* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * D;
        double* yr = out.data() + r * D;
        double mx = xr[0];
        for (int64_t i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < D; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            sum += yr[i];
        }
        const double inv = 1.0 / sum;
        for (int64_t i = 0; i < D; ++i) yr[i] *= inv;
    }
    auto xn = x.node();
    return make_node(
        x.shape(), std::move(out), {x},
        [xn, rows, D](TensorNode& self) {
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * D;
                const double* dy = self.grad.data() + r * D;
                double* dx = xn->grad.data() + r * D;
                double dot = 0.0;
                for (int64_t i = 0; i < D; ++i) dot += dy[i] * y[i];
                for (int64_t i = 0; i < D; ++i) dx[i] += (dy[i] - dot) * y[i];
            }
        },
        "softmax");
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int64_t groups,
                  double eps) {
    check(x.ndim() == 4, "group_norm: expects NCHW");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check(C % groups == 0, "group_norm: C=", C, " not divisible by groups=", groups);
    check(gamma.numel() == C && beta.numel() == C, "group_norm: affine size mismatch");
    const int64_t cg = C / groups;
    const int64_t m = cg * H * W;  // elements per group
    const int64_t hw = H * W;

    std::vector<double> out(static_cast<size_t>(x.numel()));
    std::vector<double> means(static_cast<size_t>(N * groups));
    std::vector<double> rstds(static_cast<size_t>(N * groups));
    const double *px = x.data(), *pg = gamma.data(), *pb = beta.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t g = 0; g < groups; ++g) {
            const double* xg = px + (n * C + g * cg) * hw;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += xg[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                const double dlt = xg[i] - mean;
                var += dlt * dlt;
            }
            var /= static_cast<double>(m);
            const double rstd = 1.0 / std::sqrt(var + eps);
            means[n * groups + g] = mean;
            rstds[n * groups + g] = rstd;
            double* yg = out.data() + (n * C + g * cg) * hw;
            for (int64_t c = 0; c < cg; ++c) {
                const double gc = pg[g * cg + c], bc = pb[g * cg + c];
                for (int64_t i = 0; i < hw; ++i) {
                    const double xhat = (xg[c * hw + i] - mean) * rstd;
                    yg[c * hw + i] = xhat * gc + bc;
                }
            }
        }
    }

    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_node(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, N, C, groups, cg, hw, m, means, rstds](TensorNode& self) {
            const double* px = xn->value.data();
            const double* pg = gn->value.data();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t g = 0; g < groups; ++g) {
                    const double mean = means[n * groups + g];
                    const double rstd = rstds[n * groups + g];
                    const double* xg = px + (n * C + g * cg) * hw;
                    const double* dyg = self.grad.data() + (n * C + g * cg) * hw;
                    if (gn->requires_grad || bn->requires_grad) {
                        for (int64_t c = 0; c < cg; ++c) {
                            double dg = 0.0, db = 0.0;
                            for (int64_t i = 0; i < hw; ++i) {
                                const double xhat = (xg[c * hw + i] - mean) * rstd;
                                dg += dyg[c * hw + i] * xhat;
                                db += dyg[c * hw + i];
                            }
                            if (gn->requires_grad) gn->grad[g * cg + c] += dg;
                            if (bn->requires_grad) bn->grad[g * cg + c] += db;
                        }
                    }
                    if (xn->requires_grad) {
                        // dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                        double s1 = 0.0, s2 = 0.0;
                        for (int64_t c = 0; c < cg; ++c) {
                            const double gc = pg[g * cg + c];
                            for (int64_t i = 0; i < hw; ++i) {
                                const double dxhat = dyg[c * hw + i] * gc;
                                const double xhat = (xg[c * hw + i] - mean) * rstd;
                                s1 += dxhat;
                                s2 += dxhat * xhat;
                            }
                        }
                        s1 /= static_cast<double>(m);
                        s2 /= static_cast<double>(m);
                        double* dxg = xn->grad.data() + (n * C + g * cg) * hw;
                        for (int64_t c = 0; c < cg; ++c) {
                            const double gc = pg[g * cg + c];
                            for (int64_t i = 0; i < hw; ++i) {
                                const double dxhat = dyg[c * hw + i] * gc;
                                const double xhat = (xg[c * hw + i] - mean) * rstd;
                                dxg[c * hw + i] += rstd * (dxhat - s1 - xhat * s2);
                            }
                        }
                    }
                }
            }
        },
        "group_norm");
}

// ---- spatial ----

namespace {

struct AxisTaps {
    std::vector<int64_t> i0, i1;
    std::vector<double> w0, w1;
};

AxisTaps bilinear_taps(int64_t in, int64_t out) {
    AxisTaps t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.w0.resize(out);
    t.w1.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
        const int64_t i0 = static_cast<int64_t>(std::floor(src));
        const int64_t i1 = std::min(i0 + 1, in - 1);
        const double f = src - static_cast<double>(i0);
        t.i0[o] = i0;
        t.i1[o] = i1;
        t.w0[o] = 1.0 - f;
        t.w1[o] = f;
    }
    return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
    check(x.ndim() == 4, "resize_bilinear: expects NCHW");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check(out_h >= 1 && out_w >= 1, "resize_bilinear: bad output size");
    AxisTaps ty = bilinear_taps(H, out_h);
    AxisTaps tx = bilinear_taps(W, out_w);

    std::vector<double> out(static_cast<size_t>(N * C * out_h * out_w));
    const double* px = x.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = px + nc * H * W;
        double* dst = out.data() + nc * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const double* r0 = src + ty.i0[oy] * W;
            const double* r1 = src + ty.i1[oy] * W;
            const double wy0 = ty.w0[oy], wy1 = ty.w1[oy];
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const int64_t x0 = tx.i0[ox], x1 = tx.i1[ox];
                dst[oy * out_w + ox] = wy0 * (tx.w0[ox] * r0[x0] + tx.w1[ox] * r0[x1]) +
                                       wy1 * (tx.w0[ox] * r1[x0] + tx.w1[ox] * r1[x1]);
            }
        }
    }
    auto xn = x.node();
    return make_node(
        {N, C, out_h, out_w}, std::move(out), {x},
        [xn, N, C, H, W, out_h, out_w, ty, tx](TensorNode& self) {
            xn->ensure_grad();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                double* dx = xn->grad.data() + nc * H * W;
                const double* dy = self.grad.data() + nc * out_h * out_w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    const int64_t y0 = ty.i0[oy] * W, y1 = ty.i1[oy] * W;
                    const double wy0 = ty.w0[oy], wy1 = ty.w1[oy];
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        const double g = dy[oy * out_w + ox];
                        dx[y0 + tx.i0[ox]] += g * wy0 * tx.w0[ox];
                        dx[y0 + tx.i1[ox]] += g * wy0 * tx.w1[ox];
                        dx[y1 + tx.i0[ox]] += g * wy1 * tx.w0[ox];
                        dx[y1 + tx.i1[ox]] += g * wy1 * tx.w1[ox];
                    }
                }
            }
        },
        "resize_bilinear");
}

Tensor global_avg_pool(const Tensor& x) {
    check(x.ndim() == 4, "global_avg_pool: expects NCHW");
    const int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<size_t>(N * C));
    const double* px = x.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        double s = 0.0;
        const double* p = px + nc * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        out[nc] = s / static_cast<double>(hw);
    }
    auto xn = x.node();
    return make_node(
        {N, C}, std::move(out), {x},
        [xn, N, C, hw](TensorNode& self) {
            xn->ensure_grad();
            const double inv = 1.0 / static_cast<double>(hw);
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const double g = self.grad[nc] * inv;
                double* dx = xn->grad.data() + nc * hw;
                for (int64_t i = 0; i < hw; ++i) dx[i] += g;
            }
        },
        "global_avg_pool");
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
    check(x.ndim() == 4 && s.ndim() == 2, "scale_channels: expects NCHW and (N,C)");
    const int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    check(s.dim(0) == N && s.dim(1) == C, "scale_channels: scale shape mismatch");
    std::vector<double> out(static_cast<size_t>(x.numel()));
    const double *px = x.data(), *ps = s.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double f = ps[nc];
        const double* p = px + nc * hw;
        double* q = out.data() + nc * hw;
        for (int64_t i = 0; i < hw; ++i) q[i] = p[i] * f;
    }
    auto xn = x.node(), snode = s.node();
    return make_node(
        x.shape(), std::move(out), {x, s},
        [xn, snode, N, C, hw](TensorNode& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int64_t nc = 0; nc < N * C; ++nc) {
                    const double f = snode->value[nc];
                    const double* dy = self.grad.data() + nc * hw;
                    double* dx = xn->grad.data() + nc * hw;
                    for (int64_t i = 0; i < hw; ++i) dx[i] += dy[i] * f;
                }
            }
            if (snode->requires_grad) {
                snode->ensure_grad();
                for (int64_t nc = 0; nc < N * C; ++nc) {
                    const double* dy = self.grad.data() + nc * hw;
                    const double* xv = xn->value.data() + nc * hw;
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) acc += dy[i] * xv[i];
                    snode->grad[nc] += acc;
                }
            }
        },
        "scale_channels");
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
    const int64_t n = x.numel();
    double s = 0.0;
    const double* px = x.data();
    for (int64_t i = 0; i < n; ++i) s += px[i];
    auto xn = x.node();
    return make_node(
        {1}, {s}, {x},
        [xn, n](TensorNode& self) {
            xn->ensure_grad();
            const double g = self.grad[0];
            for (int64_t i = 0; i < n; ++i) xn->grad[i] += g;
        },
        "sum_all");
}

Tensor mean_all(const Tensor& x) {
    const int64_t n = x.numel();
    double s = 0.0;
    const double* px = x.data();
    for (int64_t i = 0; i < n; ++i) s += px[i];
    s /= static_cast<double>(n);
    auto xn = x.node();
    return make_node(
        {1}, {s}, {x},
        [xn, n](TensorNode& self) {
            xn->ensure_grad();
            const double g = self.grad[0] / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) xn->grad[i] += g;
        },
        "mean_all");
}

}  // namespace dpiqa
