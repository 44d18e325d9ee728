#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
// A Tensor is a handle to a graph node; every op that touches a
// requires_grad input records a backward closure on the result node.
// Tape linearizes the graph reachable from a scalar loss and runs the
// reverse sweep, visiting each node exactly once.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace opamp {

enum class Activation { Gelu, Relu, Tanh };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Gelu: return "gelu";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw std::invalid_argument("unknown activation: " + s);
}

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Uniform double in [0,1) built from the top 53 bits of the generator
// output, so streams do not depend on the standard library's
// distribution implementation.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

namespace detail {

template <typename S>
struct Node {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

}  // namespace detail

template <typename S>
class Tensor {
public:
    using Node = detail::Node<S>;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static Tensor filled(std::vector<int> shape, S v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(count(n->shape), v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(std::vector<int> shape, std::vector<S> data,
                            bool requires_grad = false) {
        require(count(shape) == data.size(),
                "data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor uniform(std::vector<int> shape, S lo, S hi, std::mt19937_64& rng,
                          bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.resize(count(n->shape));
        for (auto& v : n->value)
            v = static_cast<S>(lo + (hi - lo) * uniform01(rng));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor identity(int n) {
        Tensor t = zeros({n, n});
        for (int i = 0; i < n; ++i) t.data()[static_cast<std::size_t>(i) * n + i] = S(1);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }

    int rows() const {
        require(node_->shape.size() == 2, "rows() on non-matrix " + shape_str(node_->shape));
        return node_->shape[0];
    }
    int cols() const {
        require(node_->shape.size() == 2, "cols() on non-matrix " + shape_str(node_->shape));
        return node_->shape[1];
    }

    std::vector<S>& data() { return node_->value; }
    const std::vector<S>& data() const { return node_->value; }

    S at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }

    S item() const {
        require(size() == 1, "item() on tensor of size " + std::to_string(size()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<S>& grad() const { return node_->grad; }
    std::vector<S>& grad() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    // Value copy detached from the graph.
    Tensor detached() const { return from_data(node_->shape, node_->value, false); }

    std::shared_ptr<Node> node() const { return node_; }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            require(e > 0, "nonpositive extent in shape " + shape_str(shape));
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;

    template <typename T>
    friend Tensor<T> make_result(std::vector<int> shape, std::vector<T> value,
                                 std::vector<Tensor<T>> inputs,
                                 std::function<void(detail::Node<T>&)> backward);
};

template <typename S>
bool all_finite(const Tensor<S>& t) {
    for (S v : t.data())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename S>
Tensor<S> make_result(std::vector<int> shape, std::vector<S> value,
                      std::vector<Tensor<S>> inputs,
                      std::function<void(detail::Node<S>&)> backward) {
    auto n = std::make_shared<detail::Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& in : inputs)
        if (in.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
        for (const auto& in : inputs) n->parents.push_back(in.node());
        n->backward = std::move(backward);
    }
    return Tensor<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2,
            "matmul needs matrices, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    require(b.rows() == k, "matmul shape mismatch: " + shape_str(a.shape()) +
                               " x " + shape_str(b.shape()));
    std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const S aip = av[static_cast<std::size_t>(i) * k + p];
            if (aip == S(0)) continue;
            const std::size_t brow = static_cast<std::size_t>(p) * n;
            const std::size_t orow = static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) out[orow + j] += aip * bv[brow + j];
        }
    auto an = a.node();
    auto bn = b.node();
    return make_result<S>(
        {m, n}, std::move(out), {a, b},
        [an, bn, m, k, n](detail::Node<S>& self) {
            const auto& g = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                // dA += dC * B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        S acc = 0;
                        const std::size_t grow = static_cast<std::size_t>(i) * n;
                        const std::size_t brow = static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) acc += g[grow + j] * bn->value[brow + j];
                        an->grad[static_cast<std::size_t>(i) * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB += A^T * dC
                for (int p = 0; p < k; ++p)
                    for (int i = 0; i < m; ++i) {
                        const S aip = an->value[static_cast<std::size_t>(i) * k + p];
                        if (aip == S(0)) continue;
                        const std::size_t grow = static_cast<std::size_t>(i) * n;
                        const std::size_t brow = static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) bn->grad[brow + j] += aip * g[grow + j];
                    }
            }
        });
}

// a * b^T without materializing the transpose.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    const int m = a.rows(), k = a.cols(), n = b.rows();
    require(b.cols() == k, "matmul_nt shape mismatch: " + shape_str(a.shape()) +
                               " x " + shape_str(b.shape()) + "^T");
    std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            S acc = 0;
            const std::size_t arow = static_cast<std::size_t>(i) * k;
            const std::size_t brow = static_cast<std::size_t>(j) * k;
            for (int p = 0; p < k; ++p) acc += av[arow + p] * bv[brow + p];
            out[static_cast<std::size_t>(i) * n + j] = acc;
        }
    auto an = a.node();
    auto bn = b.node();
    return make_result<S>(
        {m, n}, std::move(out), {a, b},
        [an, bn, m, k, n](detail::Node<S>& self) {
            const auto& g = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                // dA += dC * B
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const S gij = g[static_cast<std::size_t>(i) * n + j];
                        if (gij == S(0)) continue;
                        const std::size_t arow = static_cast<std::size_t>(i) * k;
                        const std::size_t brow = static_cast<std::size_t>(j) * k;
                        for (int p = 0; p < k; ++p) an->grad[arow + p] += gij * bn->value[brow + p];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB += dC^T * A
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < m; ++i) {
                        const S gij = g[static_cast<std::size_t>(i) * n + j];
                        if (gij == S(0)) continue;
                        const std::size_t arow = static_cast<std::size_t>(i) * k;
                        const std::size_t brow = static_cast<std::size_t>(j) * k;
                        for (int p = 0; p < k; ++p) bn->grad[brow + p] += gij * an->value[arow + p];
                    }
            }
        });
}

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> elementwise_binary(const Tensor<S>& a, const Tensor<S>& b, const char* name,
                             Fwd fwd, Bwd bwd) {
    require(a.shape() == b.shape(), std::string(name) + " shape mismatch: " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
    auto an = a.node();
    auto bn = b.node();
    return make_result<S>(a.shape(), std::move(out), {a, b},
                          [an, bn, bwd](Node<S>& self) {
                              if (an->requires_grad) an->ensure_grad();
                              if (bn->requires_grad) bn->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  bwd(self.grad[i], an, bn, i);
                          });
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::elementwise_binary<S>(
        a, b, "add", [](S x, S y) { return x + y; },
        [](S g, auto& an, auto& bn, std::size_t i) {
            if (an->requires_grad) an->grad[i] += g;
            if (bn->requires_grad) bn->grad[i] += g;
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::elementwise_binary<S>(
        a, b, "sub", [](S x, S y) { return x - y; },
        [](S g, auto& an, auto& bn, std::size_t i) {
            if (an->requires_grad) an->grad[i] += g;
            if (bn->requires_grad) bn->grad[i] -= g;
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::elementwise_binary<S>(
        a, b, "mul", [](S x, S y) { return x * y; },
        [](S g, auto& an, auto& bn, std::size_t i) {
            if (an->requires_grad) an->grad[i] += g * bn->value[i];
            if (bn->requires_grad) bn->grad[i] += g * an->value[i];
        });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_result<S>(a.shape(), std::move(out), {a},
                          [an, c](detail::Node<S>& self) {
                              if (!an->requires_grad) return;
                              an->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  an->grad[i] += self.grad[i] * c;
                          });
}

// x[m x n] + bias[n] broadcast over rows. The only broadcast supported.
template <typename S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& b) {
    const int m = x.rows(), n = x.cols();
    require(b.size() == static_cast<std::size_t>(n),
            "bias length " + std::to_string(b.size()) + " vs width " + std::to_string(n));
    std::vector<S> out(x.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] =
                x.data()[static_cast<std::size_t>(i) * n + j] + b.data()[j];
    auto xn = x.node();
    auto bn = b.node();
    return make_result<S>({m, n}, std::move(out), {x, b},
                          [xn, bn, m, n](detail::Node<S>& self) {
                              if (xn->requires_grad) {
                                  xn->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      xn->grad[i] += self.grad[i];
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (int i = 0; i < m; ++i)
                                      for (int j = 0; j < n; ++j)
                                          bn->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
                              }
                          });
}

namespace detail {

template <typename S>
inline S act_forward(Activation a, S x) {
    switch (a) {
        case Activation::Gelu: {
            const double xd = static_cast<double>(x);
            return static_cast<S>(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865475)));
        }
        case Activation::Relu: return x > S(0) ? x : S(0);
        case Activation::Tanh: return static_cast<S>(std::tanh(static_cast<double>(x)));
    }
    return S(0);
}

template <typename S>
inline S act_derivative(Activation a, S x) {
    switch (a) {
        case Activation::Gelu: {
            const double xd = static_cast<double>(x);
            const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
            const double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
            return static_cast<S>(cdf + xd * pdf);
        }
        case Activation::Relu: return x > S(0) ? S(1) : S(0);
        case Activation::Tanh: {
            const double t = std::tanh(static_cast<double>(x));
            return static_cast<S>(1.0 - t * t);
        }
    }
    return S(0);
}

}  // namespace detail

template <typename S>
Tensor<S> activation(const Tensor<S>& x, Activation a) {
    std::vector<S> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::act_forward(a, x.data()[i]);
    auto xn = x.node();
    return make_result<S>(x.shape(), std::move(out), {x},
                          [xn, a](detail::Node<S>& self) {
                              if (!xn->requires_grad) return;
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  xn->grad[i] += self.grad[i] * detail::act_derivative(a, xn->value[i]);
                          });
}

// Row-wise softmax with optional boolean keep-mask (1 = attend, 0 = masked).
// Masked entries come out exactly 0; each unmasked row is max-subtracted.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x, const std::vector<std::uint8_t>* mask = nullptr) {
    const int m = x.rows(), n = x.cols();
    if (mask)
        require(mask->size() == x.size(), "softmax mask size mismatch");
    std::vector<S> out(x.size(), S(0));
    for (int i = 0; i < m; ++i) {
        const std::size_t row = static_cast<std::size_t>(i) * n;
        double mx = -std::numeric_limits<double>::infinity();
        int kept = 0;
        for (int j = 0; j < n; ++j) {
            if (mask && !(*mask)[row + j]) continue;
            ++kept;
            mx = std::max(mx, static_cast<double>(x.data()[row + j]));
        }
        if (kept == 0)
            throw std::runtime_error("softmax_rows: fully masked row " + std::to_string(i));
        double denom = 0;
        for (int j = 0; j < n; ++j) {
            if (mask && !(*mask)[row + j]) continue;
            const double e = std::exp(static_cast<double>(x.data()[row + j]) - mx);
            out[row + j] = static_cast<S>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < n; ++j) out[row + j] = static_cast<S>(out[row + j] * inv);
    }
    auto xn = x.node();
    std::shared_ptr<std::vector<std::uint8_t>> mcopy;
    if (mask) mcopy = std::make_shared<std::vector<std::uint8_t>>(*mask);
    return make_result<S>(
        {m, n}, std::move(out), {x},
        [xn, mcopy, m, n](detail::Node<S>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const std::size_t row = static_cast<std::size_t>(i) * n;
                S dot = 0;
                for (int j = 0; j < n; ++j) dot += self.grad[row + j] * self.value[row + j];
                for (int j = 0; j < n; ++j) {
                    if (mcopy && !(*mcopy)[row + j]) continue;
                    xn->grad[row + j] += self.value[row + j] * (self.grad[row + j] - dot);
                }
            }
        });
}

// Lower-triangular keep-mask for causal attention over n positions.
inline std::vector<std::uint8_t> causal_mask(int n) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m[static_cast<std::size_t>(i) * n + j] = 1;
    return m;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
    const int m = x.rows(), n = x.cols();
    require(gamma.size() == static_cast<std::size_t>(n) && beta.size() == static_cast<std::size_t>(n),
            "layer_norm parameter width mismatch");
    std::vector<S> out(x.size());
    std::vector<S> xhat(x.size());
    std::vector<S> inv_sigma(m);
    for (int i = 0; i < m; ++i) {
        const std::size_t row = static_cast<std::size_t>(i) * n;
        double mu = 0;
        for (int j = 0; j < n; ++j) mu += x.data()[row + j];
        mu /= n;
        double var = 0;
        for (int j = 0; j < n; ++j) {
            const double d = x.data()[row + j] - mu;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_sigma[i] = static_cast<S>(inv);
        for (int j = 0; j < n; ++j) {
            const S h = static_cast<S>((x.data()[row + j] - mu) * inv);
            xhat[row + j] = h;
            out[row + j] = gamma.data()[j] * h + beta.data()[j];
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto xh = std::make_shared<std::vector<S>>(std::move(xhat));
    auto is = std::make_shared<std::vector<S>>(std::move(inv_sigma));
    return make_result<S>(
        {m, n}, std::move(out), {x, gamma, beta},
        [xn, gn, bn, xh, is, m, n](detail::Node<S>& self) {
            for (int i = 0; i < m; ++i) {
                const std::size_t row = static_cast<std::size_t>(i) * n;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (int j = 0; j < n; ++j)
                        gn->grad[j] += self.grad[row + j] * (*xh)[row + j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int j = 0; j < n; ++j) bn->grad[j] += self.grad[row + j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double sum_dh = 0, sum_dh_h = 0;
                    for (int j = 0; j < n; ++j) {
                        const double dh = self.grad[row + j] * gn->value[j];
                        sum_dh += dh;
                        sum_dh_h += dh * (*xh)[row + j];
                    }
                    const double mean_dh = sum_dh / n;
                    const double mean_dh_h = sum_dh_h / n;
                    for (int j = 0; j < n; ++j) {
                        const double dh = self.grad[row + j] * gn->value[j];
                        xn->grad[row + j] += static_cast<S>(
                            (*is)[i] * (dh - mean_dh - (*xh)[row + j] * mean_dh_h));
                    }
                }
            }
        });
}

// Mean cross-entropy over the positions where mask is set.
// logits: [m x V], targets: token id per row.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& position_mask) {
    const int m = logits.rows(), v = logits.cols();
    require(targets.size() == static_cast<std::size_t>(m) &&
                position_mask.size() == static_cast<std::size_t>(m),
            "cross_entropy: targets/mask length must equal logit rows");
    int count = 0;
    for (int i = 0; i < m; ++i)
        if (position_mask[i]) ++count;
    require(count > 0, "cross_entropy: empty position mask");
    double loss = 0;
    // Cache row softmaxes for the backward pass.
    auto probs = std::make_shared<std::vector<S>>(logits.size(), S(0));
    for (int i = 0; i < m; ++i) {
        if (!position_mask[i]) continue;
        const int t = targets[i];
        require(t >= 0 && t < v, "cross_entropy: target id out of range");
        const std::size_t row = static_cast<std::size_t>(i) * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(logits.data()[row + j]));
        double denom = 0;
        for (int j = 0; j < v; ++j)
            denom += std::exp(static_cast<double>(logits.data()[row + j]) - mx);
        for (int j = 0; j < v; ++j)
            (*probs)[row + j] = static_cast<S>(
                std::exp(static_cast<double>(logits.data()[row + j]) - mx) / denom);
        loss += std::log(denom) - (static_cast<double>(logits.data()[row + t]) - mx);
    }
    loss /= count;
    auto ln = logits.node();
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto pm = std::make_shared<std::vector<std::uint8_t>>(position_mask);
    return make_result<S>(
        {1}, {static_cast<S>(loss)}, {logits},
        [ln, tg, pm, probs, m, v, count](detail::Node<S>& self) {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            const S g = self.grad[0] / static_cast<S>(count);
            for (int i = 0; i < m; ++i) {
                if (!(*pm)[i]) continue;
                const std::size_t row = static_cast<std::size_t>(i) * v;
                for (int j = 0; j < v; ++j) ln->grad[row + j] += g * (*probs)[row + j];
                ln->grad[row + (*tg)[i]] -= g;
            }
        });
}

// Gather rows of an embedding table by token id.
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
    const int v = table.rows(), d = table.cols();
    std::vector<S> out(ids.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && ids[i] < v, "embedding: id out of range");
        std::copy_n(table.data().begin() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.begin() + i * d);
    }
    auto tn = table.node();
    auto idc = std::make_shared<std::vector<int>>(ids);
    return make_result<S>({static_cast<int>(ids.size()), d}, std::move(out), {table},
                          [tn, idc, d](detail::Node<S>& self) {
                              if (!tn->requires_grad) return;
                              tn->ensure_grad();
                              for (std::size_t i = 0; i < idc->size(); ++i) {
                                  const std::size_t src = i * d;
                                  const std::size_t dst = static_cast<std::size_t>((*idc)[i]) * d;
                                  for (int j = 0; j < d; ++j)
                                      tn->grad[dst + j] += self.grad[src + j];
                              }
                          });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int w) {
    const int m = x.rows(), n = x.cols();
    require(c0 >= 0 && w > 0 && c0 + w <= n, "slice_cols out of range");
    std::vector<S> out(static_cast<std::size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        std::copy_n(x.data().begin() + static_cast<std::size_t>(i) * n + c0, w,
                    out.begin() + static_cast<std::size_t>(i) * w);
    auto xn = x.node();
    return make_result<S>({m, w}, std::move(out), {x},
                          [xn, c0, w, m, n](detail::Node<S>& self) {
                              if (!xn->requires_grad) return;
                              xn->ensure_grad();
                              for (int i = 0; i < m; ++i)
                                  for (int j = 0; j < w; ++j)
                                      xn->grad[static_cast<std::size_t>(i) * n + c0 + j] +=
                                          self.grad[static_cast<std::size_t>(i) * w + j];
                          });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const int m = parts[0].rows();
    int n = 0;
    for (const auto& p : parts) {
        require(p.rows() == m, "concat_cols: row mismatch");
        n += p.cols();
    }
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    int c0 = 0;
    for (const auto& p : parts) {
        const int w = p.cols();
        for (int i = 0; i < m; ++i)
            std::copy_n(p.data().begin() + static_cast<std::size_t>(i) * w, w,
                        out.begin() + static_cast<std::size_t>(i) * n + c0);
        c0 += w;
    }
    std::vector<int> offsets;
    std::vector<std::shared_ptr<detail::Node<S>>> nodes;
    c0 = 0;
    for (const auto& p : parts) {
        offsets.push_back(c0);
        c0 += p.cols();
        nodes.push_back(p.node());
    }
    return make_result<S>({m, n}, std::move(out), parts,
                          [nodes, offsets, m, n](detail::Node<S>& self) {
                              for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                                  auto& pn = nodes[pi];
                                  if (!pn->requires_grad) continue;
                                  pn->ensure_grad();
                                  const int w = pn->shape[1];
                                  const int c0 = offsets[pi];
                                  for (int i = 0; i < m; ++i)
                                      for (int j = 0; j < w; ++j)
                                          pn->grad[static_cast<std::size_t>(i) * w + j] +=
                                              self.grad[static_cast<std::size_t>(i) * n + c0 + j];
                              }
                          });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S acc = 0;
    for (S v : x.data()) acc += v;
    auto xn = x.node();
    return make_result<S>({1}, {acc}, {x}, [xn](detail::Node<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (auto& g : xn->grad) g += self.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Tape / backward
// ---------------------------------------------------------------------------

// Topologically ordered list of the nodes reachable from a scalar loss.
// Construction orders parents before children; backward() walks the list
// once, in reverse.
template <typename S>
class Tape {
public:
    explicit Tape(const Tensor<S>& loss) : loss_(loss) {
        require(loss.size() == 1, "backward: loss must be scalar, got " +
                                      shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw std::runtime_error("backward: loss is not connected to the tape");
        std::unordered_set<const detail::Node<S>*> seen;
        // Iterative post-order DFS.
        std::vector<std::pair<std::shared_ptr<detail::Node<S>>, std::size_t>> stack;
        stack.emplace_back(loss.node(), 0);
        seen.insert(loss.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                auto child = node->parents[next++];
                if (child->requires_grad && !seen.count(child.get())) {
                    seen.insert(child.get());
                    stack.emplace_back(child, 0);
                }
            } else {
                order_.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::size_t size() const { return order_.size(); }

    void backward() {
        // Interior grads are scratch space for this pass; only leaves
        // accumulate across calls.
        for (auto& node : order_)
            if (node->backward) node->grad.clear();
        auto root = loss_.node();
        root->ensure_grad();
        root->grad[0] += S(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            auto& node = *it;
            if (node->backward) {
                node->ensure_grad();
                node->backward(*node);
            }
        }
    }

private:
    Tensor<S> loss_;
    std::vector<std::shared_ptr<detail::Node<S>>> order_;
};

template <typename S>
void backward(const Tensor<S>& loss) {
    Tape<S>(loss).backward();
}

}  // namespace opamp
