#include "cseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "cseg/parallel.hpp"

namespace cseg {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Fixed left-to-right order. Eigen's vectorized reductions peel by address, so
// their rounding would depend on where the allocator placed the buffer.
template <typename T>
T sequential_sum(const T* p, std::size_t n, std::size_t stride) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += p[i * stride];
    return s;
}

void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + s.str());
    }
}

void require_same(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

struct ConvGeometry {
    std::size_t batch, cin, h, w, cout, k, ho, wo;
    int stride, pad;

    std::size_t patch() const { return cin * k * k; }
    std::size_t pixels() const { return ho * wo; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
ConvGeometry conv_geometry(const Shape& in, const Shape& weight, int stride, int pad) {
    require_rank(in, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    if (weight[2] != weight[3]) throw ShapeError("conv2d: kernel must be square, got " + weight.str());
    if (in[1] != weight[1]) {
        throw ShapeError("conv2d: input has " + std::to_string(in[1]) + " channels, weight expects " +
                         std::to_string(weight[1]));
    }
    ConvGeometry g{in[0], in[1], in[2], in[3], weight[0], weight[2], 0, 0, stride, pad};
    const std::size_t ph = g.h + 2 * static_cast<std::size_t>(pad);
    const std::size_t pw = g.w + 2 * static_cast<std::size_t>(pad);
    if (g.k > ph || g.k > pw) throw ShapeError("conv2d: kernel larger than padded input");
    if ((ph - g.k) % static_cast<std::size_t>(stride) != 0 || (pw - g.k) % static_cast<std::size_t>(stride) != 0) {
        throw ShapeError("conv2d: non-integral output size for input " + in.str());
    }
    g.ho = (ph - g.k) / static_cast<std::size_t>(stride) + 1;
    g.wo = (pw - g.k) / static_cast<std::size_t>(stride) + 1;
    return g;
}

// col[(ci*k + ky)*k + kx][oy*wo + ox] = x[ci][oy*s - pad + ky][ox*s - pad + kx]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const auto h = static_cast<long>(g.h), w = static_cast<long>(g.w);
    const long s = g.stride, pad = g.pad;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* plane = x + ci * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* row = col + ((ci * g.k + ky) * g.k + kx) * g.pixels();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy) * s - pad + static_cast<long>(ky);
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + iy * w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox) * s - pad + static_cast<long>(kx);
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
    const auto h = static_cast<long>(g.h), w = static_cast<long>(g.w);
    const long s = g.stride, pad = g.pad;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        T* plane = x + ci * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* row = col + ((ci * g.k + ky) * g.k + kx) * g.pixels();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy) * s - pad + static_cast<long>(ky);
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + oy * g.wo;
                    T* dst = plane + iy * w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox) * s - pad + static_cast<long>(kx);
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Sums per-chunk partial buffers in chunk order into dst.
template <typename T>
void reduce_partials(const std::vector<std::vector<T>>& partials, std::span<T> dst) {
    std::fill(dst.begin(), dst.end(), T(0));
    for (const auto& p : partials) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += p[i];
    }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                              int stride, int pad) {
    const ConvGeometry g = conv_geometry<T>(input.shape(), weight.shape(), stride, pad);
    if (!bias.empty() && bias.size() != g.cout) throw ShapeError("conv2d: bias length must equal Cout");
    BasicTensor<T> out(Shape{g.batch, g.cout, g.ho, g.wo});
    const std::size_t in_stride = g.cin * g.h * g.w;
    const std::size_t out_stride = g.cout * g.pixels();
    CMapMat<T> wmat(weight.data(), g.cout, g.patch());

    parallel_chunks(g.batch, [&](std::size_t, std::size_t b0, std::size_t b1) {
        std::vector<T> col(g.pointwise() ? 0 : g.patch() * g.pixels());
        for (std::size_t b = b0; b < b1; ++b) {
            const T* x = input.data() + b * in_stride;
            const T* colp = x;
            if (!g.pointwise()) {
                im2col(x, g, col.data());
                colp = col.data();
            }
            MapMat<T> y(out.data() + b * out_stride, g.cout, g.pixels());
            y.noalias() = wmat * CMapMat<T>(colp, g.patch(), g.pixels());
            if (!bias.empty()) {
                for (std::size_t c = 0; c < g.cout; ++c) y.row(c).array() += bias[c];
            }
        }
    });
    return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input,
                               const BasicTensor<T>& weight, int stride, int pad) {
    if (saved_input.empty()) throw Error("conv2d_backward: missing saved forward input");
    const ConvGeometry g = conv_geometry<T>(saved_input.shape(), weight.shape(), stride, pad);
    require_same(grad_out.shape(), Shape{g.batch, g.cout, g.ho, g.wo}, "conv2d_backward grad_out");

    Conv2dGrads<T> grads{BasicTensor<T>(saved_input.shape()), BasicTensor<T>(weight.shape()),
                         BasicTensor<T>(Shape{g.cout})};
    const std::size_t in_stride = g.cin * g.h * g.w;
    const std::size_t out_stride = g.cout * g.pixels();
    CMapMat<T> wmat(weight.data(), g.cout, g.patch());

    const std::size_t chunks = chunk_count(g.batch);
    std::vector<std::vector<T>> gw_parts(chunks, std::vector<T>(weight.size(), T(0)));
    std::vector<std::vector<T>> gb_parts(chunks, std::vector<T>(g.cout, T(0)));

    parallel_chunks(g.batch, [&](std::size_t chunk, std::size_t b0, std::size_t b1) {
        std::vector<T> col(g.pointwise() ? 0 : g.patch() * g.pixels());
        std::vector<T> gcol(g.pointwise() ? 0 : g.patch() * g.pixels());
        MapMat<T> gw(gw_parts[chunk].data(), g.cout, g.patch());
        auto& gb = gb_parts[chunk];
        for (std::size_t b = b0; b < b1; ++b) {
            const T* x = saved_input.data() + b * in_stride;
            CMapMat<T> go(grad_out.data() + b * out_stride, g.cout, g.pixels());
            for (std::size_t c = 0; c < g.cout; ++c) gb[c] += sequential_sum(go.data() + c * g.pixels(), g.pixels(), 1);
            T* gx = grads.input.data() + b * in_stride;
            if (g.pointwise()) {
                gw.noalias() += go * CMapMat<T>(x, g.patch(), g.pixels()).transpose();
                MapMat<T>(gx, g.patch(), g.pixels()).noalias() = wmat.transpose() * go;
            } else {
                im2col(x, g, col.data());
                gw.noalias() += go * CMapMat<T>(col.data(), g.patch(), g.pixels()).transpose();
                MapMat<T>(gcol.data(), g.patch(), g.pixels()).noalias() = wmat.transpose() * go;
                col2im_add(gcol.data(), g, gx);
            }
        }
    });
    reduce_partials(gw_parts, grads.weight.values());
    reduce_partials(gb_parts, grads.bias.values());
    return grads;
}

template <typename T>
PoolResult<T> maxpool2x2(const BasicTensor<T>& input) {
    require_rank(input.shape(), 4, "maxpool2x2");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw ShapeError("maxpool2x2: odd spatial dimension in " + input.shape().str());
    const std::size_t Ho = H / 2, Wo = W / 2;
    PoolResult<T> r{BasicTensor<T>(Shape{B, C, Ho, Wo}), std::vector<std::uint32_t>(B * C * Ho * Wo),
                    input.shape()};
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const std::size_t base = bc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
                std::size_t best = base + (2 * oy) * W + 2 * ox;
                const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
                for (std::size_t idx : cand) {
                    if (input[idx] > input[best]) best = idx;
                }
                r.output[o] = input[best];
                r.argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return r;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                                   const Shape& input_shape) {
    if (grad_out.size() != argmax.size()) throw ShapeError("maxpool2x2_backward: index count mismatch");
    BasicTensor<T> gx(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_out[i];
    return gx;
}

namespace {

void check_tconv(const Shape& in, const Shape& weight, const char* what) {
    require_rank(in, 4, what);
    require_rank(weight, 4, what);
    if (weight[2] != 2 || weight[3] != 2) throw ShapeError(std::string(what) + ": weight must be [Cin,Cout,2,2]");
    if (in[1] != weight[0]) {
        throw ShapeError(std::string(what) + ": input has " + std::to_string(in[1]) + " channels, weight expects " +
                         std::to_string(weight[0]));
    }
}

}  // namespace

template <typename T>
BasicTensor<T> transposed_conv2x2(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                  const BasicTensor<T>& bias) {
    check_tconv(input.shape(), weight.shape(), "transposed_conv2x2");
    const std::size_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Cout = weight.dim(1);
    if (!bias.empty() && bias.size() != Cout) throw ShapeError("transposed_conv2x2: bias length must equal Cout");
    const std::size_t P = H * W;
    BasicTensor<T> out(Shape{B, Cout, 2 * H, 2 * W});
    CMapMat<T> wmat(weight.data(), Cin, Cout * 4);

    parallel_chunks(B, [&](std::size_t, std::size_t b0, std::size_t b1) {
        RowMat<T> expanded(Cout * 4, P);
        for (std::size_t b = b0; b < b1; ++b) {
            expanded.noalias() = wmat.transpose() * CMapMat<T>(input.data() + b * Cin * P, Cin, P);
            for (std::size_t co = 0; co < Cout; ++co) {
                const T bv = bias.empty() ? T(0) : bias[co];
                for (std::size_t d = 0; d < 4; ++d) {
                    const std::size_t dy = d / 2, dx = d % 2;
                    const T* src = expanded.data() + (co * 4 + d) * P;
                    for (std::size_t y = 0; y < H; ++y) {
                        T* dst = &out.at(b, co, 2 * y + dy, dx);
                        for (std::size_t x = 0; x < W; ++x) dst[2 * x] = src[y * W + x] + bv;
                    }
                }
            }
        }
    });
    return out;
}

template <typename T>
Conv2dGrads<T> transposed_conv2x2_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input,
                                           const BasicTensor<T>& weight) {
    if (saved_input.empty()) throw Error("transposed_conv2x2_backward: missing saved forward input");
    check_tconv(saved_input.shape(), weight.shape(), "transposed_conv2x2_backward");
    const std::size_t B = saved_input.dim(0), Cin = saved_input.dim(1), H = saved_input.dim(2),
                      W = saved_input.dim(3);
    const std::size_t Cout = weight.dim(1);
    require_same(grad_out.shape(), Shape{B, Cout, 2 * H, 2 * W}, "transposed_conv2x2_backward grad_out");
    const std::size_t P = H * W;
    Conv2dGrads<T> grads{BasicTensor<T>(saved_input.shape()), BasicTensor<T>(weight.shape()),
                         BasicTensor<T>(Shape{Cout})};
    CMapMat<T> wmat(weight.data(), Cin, Cout * 4);

    const std::size_t chunks = chunk_count(B);
    std::vector<std::vector<T>> gw_parts(chunks, std::vector<T>(weight.size(), T(0)));
    std::vector<std::vector<T>> gb_parts(chunks, std::vector<T>(Cout, T(0)));

    parallel_chunks(B, [&](std::size_t chunk, std::size_t b0, std::size_t b1) {
        RowMat<T> gathered(Cout * 4, P);
        MapMat<T> gw(gw_parts[chunk].data(), Cin, Cout * 4);
        auto& gb = gb_parts[chunk];
        for (std::size_t b = b0; b < b1; ++b) {
            for (std::size_t co = 0; co < Cout; ++co) {
                for (std::size_t d = 0; d < 4; ++d) {
                    const std::size_t dy = d / 2, dx = d % 2;
                    T* dst = gathered.data() + (co * 4 + d) * P;
                    for (std::size_t y = 0; y < H; ++y) {
                        const T* src = &grad_out.at(b, co, 2 * y + dy, dx);
                        for (std::size_t x = 0; x < W; ++x) {
                            dst[y * W + x] = src[2 * x];
                            gb[co] += src[2 * x];
                        }
                    }
                }
            }
            CMapMat<T> xb(saved_input.data() + b * Cin * P, Cin, P);
            MapMat<T>(grads.input.data() + b * Cin * P, Cin, P).noalias() = wmat * gathered;
            gw.noalias() += xb * gathered.transpose();
        }
    });
    reduce_partials(gw_parts, grads.weight.values());
    reduce_partials(gb_parts, grads.bias.values());
    return grads;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    BasicTensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input) {
    require_same(grad_out.shape(), saved_input.shape(), "relu_backward");
    BasicTensor<T> gx(grad_out.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = saved_input[i] > T(0) ? grad_out[i] : T(0);
    return gx;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    BasicTensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        // Split on sign so exp never overflows.
        const T v = x[i];
        if (v >= T(0)) {
            y[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y[i] = e / (T(1) + e);
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_output) {
    require_same(grad_out.shape(), saved_output.shape(), "sigmoid_backward");
    BasicTensor<T> gx(grad_out.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = grad_out[i] * saved_output[i] * (T(1) - saved_output[i]);
    return gx;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same(a.shape(), b.shape(), "add");
    BasicTensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
    return y;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_rank(a.shape(), 4, "concat_channels");
    require_rank(b.shape(), 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ShapeError("concat_channels: batch/spatial mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    const std::size_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), P = a.dim(2) * a.dim(3);
    BasicTensor<T> y(Shape{B, Ca + Cb, a.dim(2), a.dim(3)});
    for (std::size_t n = 0; n < B; ++n) {
        std::copy_n(a.data() + n * Ca * P, Ca * P, y.data() + n * (Ca + Cb) * P);
        std::copy_n(b.data() + n * Cb * P, Cb * P, y.data() + n * (Ca + Cb) * P + Ca * P);
    }
    return y;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out,
                                                                   std::size_t channels_a) {
    require_rank(grad_out.shape(), 4, "concat_channels_backward");
    const std::size_t B = grad_out.dim(0), C = grad_out.dim(1), H = grad_out.dim(2), W = grad_out.dim(3);
    if (channels_a == 0 || channels_a >= C) throw ShapeError("concat_channels_backward: bad split point");
    const std::size_t Cb = C - channels_a, P = H * W;
    BasicTensor<T> ga(Shape{B, channels_a, H, W}), gb(Shape{B, Cb, H, W});
    for (std::size_t n = 0; n < B; ++n) {
        const T* src = grad_out.data() + n * C * P;
        std::copy_n(src, channels_a * P, ga.data() + n * channels_a * P);
        std::copy_n(src + channels_a * P, Cb * P, gb.data() + n * Cb * P);
    }
    return {std::move(ga), std::move(gb)};
}

template <typename T>
BasicTensor<T> channelwise_scale(const BasicTensor<T>& x, const BasicTensor<T>& s) {
    require_rank(x.shape(), 4, "channelwise_scale");
    require_same(s.shape(), Shape{x.dim(0), x.dim(1)}, "channelwise_scale scale");
    const std::size_t P = x.dim(2) * x.dim(3);
    BasicTensor<T> y(x.shape());
    for (std::size_t bc = 0; bc < s.size(); ++bc) {
        const T sv = s[bc];
        for (std::size_t p = 0; p < P; ++p) y[bc * P + p] = x[bc * P + p] * sv;
    }
    return y;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> channelwise_scale_backward(const BasicTensor<T>& grad_out,
                                                                     const BasicTensor<T>& x,
                                                                     const BasicTensor<T>& s) {
    require_same(grad_out.shape(), x.shape(), "channelwise_scale_backward");
    require_same(s.shape(), Shape{x.dim(0), x.dim(1)}, "channelwise_scale_backward scale");
    const std::size_t P = x.dim(2) * x.dim(3);
    BasicTensor<T> gx(x.shape()), gs(s.shape());
    for (std::size_t bc = 0; bc < s.size(); ++bc) {
        T acc = 0;
        for (std::size_t p = 0; p < P; ++p) {
            gx[bc * P + p] = grad_out[bc * P + p] * s[bc];
            acc += grad_out[bc * P + p] * x[bc * P + p];
        }
        gs[bc] = acc;
    }
    return {std::move(gx), std::move(gs)};
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
    require_rank(input.shape(), 4, "global_avg_pool");
    const std::size_t BC = input.dim(0) * input.dim(1), P = input.dim(2) * input.dim(3);
    BasicTensor<T> z(Shape{input.dim(0), input.dim(1)});
    for (std::size_t bc = 0; bc < BC; ++bc) {
        T acc = 0;
        for (std::size_t p = 0; p < P; ++p) acc += input[bc * P + p];
        z[bc] = acc / static_cast<T>(P);
    }
    return z;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
    require_rank(input_shape, 4, "global_avg_pool_backward");
    require_same(grad_out.shape(), Shape{input_shape[0], input_shape[1]}, "global_avg_pool_backward");
    const std::size_t P = input_shape[2] * input_shape[3];
    BasicTensor<T> gx(input_shape);
    for (std::size_t bc = 0; bc < grad_out.size(); ++bc) {
        const T g = grad_out[bc] / static_cast<T>(P);
        std::fill_n(gx.data() + bc * P, P, g);
    }
    return gx;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    require_rank(input.shape(), 2, "dense input");
    require_rank(weight.shape(), 2, "dense weight");
    if (input.dim(1) != weight.dim(1)) {
        throw ShapeError("dense: input " + input.shape().str() + " incompatible with weight " + weight.shape().str());
    }
    const std::size_t B = input.dim(0), Cin = input.dim(1), Cout = weight.dim(0);
    if (!bias.empty() && bias.size() != Cout) throw ShapeError("dense: bias length must equal Cout");
    BasicTensor<T> y(Shape{B, Cout});
    MapMat<T> ym(y.data(), B, Cout);
    ym.noalias() = CMapMat<T>(input.data(), B, Cin) * CMapMat<T>(weight.data(), Cout, Cin).transpose();
    if (!bias.empty()) {
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < Cout; ++c) ym(b, c) += bias[c];
        }
    }
    return y;
}

template <typename T>
Conv2dGrads<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& saved_input,
                              const BasicTensor<T>& weight) {
    if (saved_input.empty()) throw Error("dense_backward: missing saved forward input");
    const std::size_t B = saved_input.dim(0), Cin = saved_input.dim(1), Cout = weight.dim(0);
    require_same(grad_out.shape(), Shape{B, Cout}, "dense_backward grad_out");
    Conv2dGrads<T> g{BasicTensor<T>(saved_input.shape()), BasicTensor<T>(weight.shape()), BasicTensor<T>(Shape{Cout})};
    CMapMat<T> go(grad_out.data(), B, Cout);
    MapMat<T>(g.input.data(), B, Cin).noalias() = go * CMapMat<T>(weight.data(), Cout, Cin);
    MapMat<T>(g.weight.data(), Cout, Cin).noalias() = go.transpose() * CMapMat<T>(saved_input.data(), B, Cin);
    for (std::size_t c = 0; c < Cout; ++c) g.bias[c] = sequential_sum(go.data() + c, B, Cout);
    return g;
}

template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                           RunningStats<T>* stats, Mode mode, const BatchNormOptions& options,
                           BatchNormContext<T>* ctx) {
    require_rank(input.shape(), 4, "batchnorm2d");
    if (!(options.eps > 0)) throw ConfigError("batchnorm2d: eps must be > 0");
    const std::size_t B = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
    if (gamma.size() != C || beta.size() != C) throw ShapeError("batchnorm2d: gamma/beta length must equal channels");
    const std::size_t n = B * P;

    std::vector<T> mean(C), inv_std(C);
    if (mode == Mode::train) {
        std::vector<double> var(C);
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = input.data() + (b * C + c) * P;
                for (std::size_t i = 0; i < P; ++i) s += p[i];
            }
            const double m = s / static_cast<double>(n);
            double ss = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = input.data() + (b * C + c) * P;
                for (std::size_t i = 0; i < P; ++i) {
                    const double d = p[i] - m;
                    ss += d * d;
                }
            }
            var[c] = ss / static_cast<double>(n);
            mean[c] = static_cast<T>(m);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var[c] + options.eps));
        }
        if (stats) {
            if (stats->empty()) {
                stats->mean = BasicTensor<T>(Shape{C}, T(0));
                stats->var = BasicTensor<T>(Shape{C}, T(1));
            }
            const double m = options.momentum;
            const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
            for (std::size_t c = 0; c < C; ++c) {
                stats->mean[c] = static_cast<T>((1 - m) * stats->mean[c] + m * mean[c]);
                stats->var[c] = static_cast<T>((1 - m) * stats->var[c] + m * var[c] * unbias);
            }
        }
    } else {
        if (!stats || stats->empty()) throw Error("batchnorm2d: eval mode requires running statistics");
        if (stats->mean.size() != C || stats->var.size() != C) throw ShapeError("batchnorm2d: running stats length");
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = stats->mean[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats->var[c]) + options.eps));
        }
    }

    BasicTensor<T> y(input.shape());
    BasicTensor<T> xhat;
    if (ctx) xhat = BasicTensor<T>(input.shape());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * P;
            const T m = mean[c], is = inv_std[c], g = gamma[c], be = beta[c];
            for (std::size_t i = 0; i < P; ++i) {
                const T xh = (input[off + i] - m) * is;
                if (ctx) xhat[off + i] = xh;
                y[off + i] = g * xh + be;
            }
        }
    }
    if (ctx) {
        ctx->xhat = std::move(xhat);
        ctx->inv_std = std::move(inv_std);
        ctx->mode = mode;
    }
    return y;
}

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BasicTensor<T>& grad_out, const BatchNormContext<T>& ctx,
                                       const BasicTensor<T>& gamma) {
    if (ctx.xhat.empty()) throw Error("batchnorm2d_backward: missing saved forward context");
    require_same(grad_out.shape(), ctx.xhat.shape(), "batchnorm2d_backward");
    const std::size_t B = grad_out.dim(0), C = grad_out.dim(1), P = grad_out.dim(2) * grad_out.dim(3);
    const auto n = static_cast<T>(B * P);
    BatchNormGrads<T> g{BasicTensor<T>(grad_out.shape()), BasicTensor<T>(Shape{C}), BasicTensor<T>(Shape{C})};
    for (std::size_t c = 0; c < C; ++c) {
        T sum_g = 0, sum_gx = 0;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
                sum_g += grad_out[off + i];
                sum_gx += grad_out[off + i] * ctx.xhat[off + i];
            }
        }
        g.beta[c] = sum_g;
        g.gamma[c] = sum_gx;
        const T k = gamma[c] * ctx.inv_std[c];
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
                if (ctx.mode == Mode::train) {
                    g.input[off + i] = k / n * (n * grad_out[off + i] - sum_g - ctx.xhat[off + i] * sum_gx);
                } else {
                    g.input[off + i] = k * grad_out[off + i];
                }
            }
        }
    }
    return g;
}

#define CSEG_INSTANTIATE_OPS(T)                                                                                     \
    template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, \
                                           int);                                                                    \
    template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                            int, int);                                                              \
    template PoolResult<T> maxpool2x2(const BasicTensor<T>&);                                                       \
    template BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>&, const std::vector<std::uint32_t>&,           \
                                                const Shape&);                                                      \
    template BasicTensor<T> transposed_conv2x2(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
    template Conv2dGrads<T> transposed_conv2x2_backward(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                                        const BasicTensor<T>&);                                     \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                            \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);                         \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                      \
    template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                          \
    template std::pair<BasicTensor<T>, BasicTensor<T>> concat_channels_backward(const BasicTensor<T>&, std::size_t); \
    template BasicTensor<T> channelwise_scale(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template std::pair<BasicTensor<T>, BasicTensor<T>> channelwise_scale_backward(                                  \
        const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                                       \
    template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const Shape&);                          \
    template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);             \
    template Conv2dGrads<T> dense_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
    template BasicTensor<T> batchnorm2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                        RunningStats<T>*, Mode, const BatchNormOptions&, BatchNormContext<T>*);     \
    template BatchNormGrads<T> batchnorm2d_backward(const BasicTensor<T>&, const BatchNormContext<T>&,              \
                                                    const BasicTensor<T>&);

CSEG_INSTANTIATE_OPS(float)
CSEG_INSTANTIATE_OPS(double)

#undef CSEG_INSTANTIATE_OPS

}  // namespace cseg
