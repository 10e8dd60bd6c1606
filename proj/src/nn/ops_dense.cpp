#include <cmath>

#include "aerialgen/core/error.hpp"
#include "aerialgen/nn/ops.hpp"
#include "blas.hpp"

namespace aerialgen::nn {

using detail::gemm;

Var linear(const Var& x, const Var& weight, const Var& bias) {
    if (x.value().rank() != 2 || weight.value().rank() != 2 || x.dim(1) != weight.dim(1)) {
        throw ShapeError("linear: input " + shape_string(x.shape()) + " weight " + shape_string(weight.shape()));
    }
    const int n   = x.dim(0);
    const int in  = x.dim(1);
    const int out = weight.dim(0);
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{out}) throw ShapeError("linear: bias " + shape_string(bias.shape()));

    Tensor y({n, out});
    if (has_bias) {
        for (int i = 0; i < n; ++i) {
            std::copy(bias.value().data(), bias.value().data() + out, y.data() + static_cast<std::size_t>(i) * out);
        }
    }
    gemm(false, true, n, out, in, 1.0f, x.value().data(), in, weight.value().data(), in, has_bias ? 1.0f : 0.0f,
         y.data(), out);

    std::vector<Var> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result(std::move(y), inputs, [n, in, out, has_bias](Node& self) {
        Node& nx = *self.inputs[0];
        Node& nw = *self.inputs[1];
        if (nx.requires_grad) {
            gemm(false, false, n, in, out, 1.0f, self.grad.data(), out, nw.value.data(), in, 1.0f,
                 nx.grad_buffer().data(), in);
        }
        if (nw.requires_grad) {
            gemm(true, false, out, in, n, 1.0f, self.grad.data(), out, nx.value.data(), in, 1.0f,
                 nw.grad_buffer().data(), in);
        }
        if (has_bias && self.inputs[2]->requires_grad) {
            float* gb = self.inputs[2]->grad_buffer().data();
            for (int i = 0; i < n; ++i) {
                for (int o = 0; o < out; ++o) gb[o] += self.grad[static_cast<std::size_t>(i) * out + o];
            }
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    const int n = a.dim(0);
    const int m = b.dim(0);
    const int d = a.dim(1);
    Tensor c({n, m});
    gemm(false, true, n, m, d, 1.0f, a.value().data(), d, b.value().data(), d, 0.0f, c.data(), m);
    return make_result(std::move(c), {a, b}, [n, m, d](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        if (na.requires_grad) {
            gemm(false, false, n, d, m, 1.0f, self.grad.data(), m, nb.value.data(), d, 1.0f, na.grad_buffer().data(), d);
        }
        if (nb.requires_grad) {
            gemm(true, false, m, d, n, 1.0f, self.grad.data(), m, na.value.data(), d, 1.0f, nb.grad_buffer().data(), d);
        }
    });
}

Var l2_normalize_rows(const Var& x, float eps) {
    if (x.value().rank() != 2) throw ShapeError("l2_normalize_rows: expected [N, D]");
    const int n = x.dim(0);
    const int d = x.dim(1);
    Tensor y(x.shape());
    std::vector<float> norms(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = x.value().data() + static_cast<std::size_t>(i) * d;
        double s         = 0.0;
        for (int j = 0; j < d; ++j) s += static_cast<double>(row[j]) * row[j];
        const float norm = std::max(static_cast<float>(std::sqrt(s)), eps);
        norms[static_cast<std::size_t>(i)] = norm;
        for (int j = 0; j < d; ++j) y[static_cast<std::size_t>(i) * d + j] = row[j] / norm;
    }
    return make_result(std::move(y), {x}, [n, d, norms = std::move(norms)](Node& self) {
        float* g = self.inputs[0]->grad_buffer().data();
        for (int i = 0; i < n; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * d;
            float dot             = 0.0f;
            for (int j = 0; j < d; ++j) dot += self.value[off + j] * self.grad[off + j];
            const float inv = 1.0f / norms[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j) g[off + j] += (self.grad[off + j] - self.value[off + j] * dot) * inv;
        }
    });
}

}  // namespace aerialgen::nn
