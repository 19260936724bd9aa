// SPDX-License-Identifier: Apache-2.0
#include "evtrack/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evtrack/error.hpp"
#include "evtrack/nn/simd.hpp"

namespace evtrack::nn {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.dims()) + " vs " +
                   to_string(b.dims()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.dims()));
  }
}

}  // namespace

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite input");
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  require_finite(a, "matmul");
  require_finite(b, "matmul");
  const Tensor bt = transpose(b);
  Tensor out({a.rows(), b.cols()});
  simd::gemm_nt(a.data().data(), bt.data().data(), out.data().data(), a.rows(), b.cols(), a.cols());
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  if (x.cols() != weight.cols()) shape_mismatch("linear", x, weight);
  if (!bias.empty() && bias.size() != weight.rows()) shape_mismatch("linear(bias)", weight, bias);
  require_finite(x, "linear");
  const std::size_t n = x.rows(), out_f = weight.rows();
  Tensor y({n, out_f});
  simd::gemm_nt(x.data().data(), weight.data().data(), y.data().data(), n, out_f, x.cols());
  if (!bias.empty()) {
    const auto b = bias.data();
    for (std::size_t i = 0; i < n; ++i) {
      auto r = y.row(i);
      for (std::size_t j = 0; j < out_f; ++j) r[j] += b[j];
    }
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 2, "layer_norm");
  if (!(eps > 0.0f)) throw InvalidArgument("layer_norm: eps must be > 0");
  const std::size_t d = x.cols();
  if (gamma.size() != d) shape_mismatch("layer_norm(gamma)", x, gamma);
  if (beta.size() != d) shape_mismatch("layer_norm(beta)", x, beta);
  require_finite(x, "layer_norm");
  Tensor y(x.dims());
  const auto g = gamma.data();
  const auto bt = beta.data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto in = x.row(i);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto out = y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = static_cast<float>((in[j] - mean) * inv) * g[j] + bt[j];
    }
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  require_finite(x, "gelu");
  Tensor y = x;
  simd::kernels().gelu(y.data().data(), y.size());
  return y;
}

Tensor sigmoid(const Tensor& x) {
  require_finite(x, "sigmoid");
  Tensor y = x;
  for (float& v : y.data()) {
    v = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
  }
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  if (x.rank() == 0 || x.empty()) throw ShapeError("softmax: empty tensor");
  require_finite(x, "softmax");
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for " + to_string(x.dims()));
  Tensor y = x;
  auto d = y.data();
  const std::size_t len = x.dim(static_cast<std::size_t>(axis));
  std::size_t inner = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));
  const std::size_t outer = x.size() / (len * inner);
  if (inner == 1) {
    for (std::size_t o = 0; o < outer; ++o) simd::kernels().softmax_row(d.data() + o * len, len);
    return y;
  }
  std::vector<float> buf(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      float* base = d.data() + o * len * inner + in;
      for (std::size_t i = 0; i < len; ++i) buf[i] = base[i * inner];
      simd::kernels().softmax_row(buf.data(), len);
      for (std::size_t i = 0; i < len; ++i) base[i * inner] = buf[i];
    }
  }
  return y;
}

Tensor global_avg_pool(const Tensor& tokens) {
  require_rank(tokens, 2, "global_avg_pool");
  if (tokens.rows() == 0) throw ShapeError("global_avg_pool: no tokens");
  require_finite(tokens, "global_avg_pool");
  const std::size_t d = tokens.cols();
  std::vector<double> acc(d, 0.0);
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    const auto r = tokens.row(i);
    for (std::size_t j = 0; j < d; ++j) acc[j] += r[j];
  }
  Tensor out({d});
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(tokens.rows()));
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor y = a;
  add_inplace(y, b);
  return y;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) shape_mismatch("add", a, b);
  auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_rows");
  require_rank(b, 2, "concat_rows");
  if (a.cols() != b.cols()) shape_mismatch("concat_rows", a, b);
  std::vector<float> v;
  v.reserve(a.size() + b.size());
  v.insert(v.end(), a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(v));
}

Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                            const AttentionParams& p, std::size_t n_heads) {
  require_rank(q_tokens, 2, "attention");
  require_rank(kv_tokens, 2, "attention");
  const std::size_t d = q_tokens.cols();
  if (kv_tokens.cols() != d) shape_mismatch("attention", q_tokens, kv_tokens);
  if (n_heads == 0 || d % n_heads != 0) {
    throw InvalidArgument("attention: heads (" + std::to_string(n_heads) +
                          ") must divide embedding dim (" + std::to_string(d) + ")");
  }
  if (p.qkv_weight.dims() != Shape{3 * d, d}) shape_mismatch("attention(qkv)", q_tokens, p.qkv_weight);
  if (p.qkv_bias.size() != 3 * d) shape_mismatch("attention(qkv bias)", p.qkv_weight, p.qkv_bias);
  if (p.proj_weight.dims() != Shape{d, d}) shape_mismatch("attention(proj)", q_tokens, p.proj_weight);
  if (p.proj_bias.size() != d) shape_mismatch("attention(proj bias)", p.proj_weight, p.proj_bias);
  require_finite(q_tokens, "attention");
  require_finite(kv_tokens, "attention");

  const std::size_t nq = q_tokens.rows();
  const std::size_t nk = kv_tokens.rows();
  const std::size_t dh = d / n_heads;

  // Projections. Self-attention shares one packed GEMM.
  Tensor q, kv;
  if (&q_tokens == &kv_tokens) {
    const Tensor qkv = linear(q_tokens, p.qkv_weight, p.qkv_bias);
    q = Tensor({nq, d});
    kv = Tensor({nk, 2 * d});
    for (std::size_t i = 0; i < nq; ++i) {
      const auto r = qkv.row(i);
      std::copy(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(d), q.row(i).begin());
      std::copy(r.begin() + static_cast<std::ptrdiff_t>(d), r.end(), kv.row(i).begin());
    }
  } else {
    const auto w = p.qkv_weight.data();
    const auto b = p.qkv_bias.data();
    const Tensor wq({d, d}, std::vector<float>(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d * d)));
    const Tensor bq({d}, std::vector<float>(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(d)));
    const Tensor wkv({2 * d, d}, std::vector<float>(w.begin() + static_cast<std::ptrdiff_t>(d * d), w.end()));
    const Tensor bkv({2 * d}, std::vector<float>(b.begin() + static_cast<std::ptrdiff_t>(d), b.end()));
    q = linear(q_tokens, wq, bq);
    kv = linear(kv_tokens, wkv, bkv);
  }

  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor context({nq, d});
  std::vector<float> qh(nq * dh), kh(nk * dh), vt(dh * nk), scores(nq * nk), out(nq * dh);
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      const auto r = q.row(i);
      for (std::size_t c = 0; c < dh; ++c) qh[i * dh + c] = r[h * dh + c] * scale;
    }
    for (std::size_t i = 0; i < nk; ++i) {
      const auto r = kv.row(i);
      for (std::size_t c = 0; c < dh; ++c) {
        kh[i * dh + c] = r[h * dh + c];
        vt[c * nk + i] = r[d + h * dh + c];
      }
    }
    simd::gemm_nt(qh.data(), kh.data(), scores.data(), nq, nk, dh);
    for (std::size_t i = 0; i < nq; ++i) simd::kernels().softmax_row(scores.data() + i * nk, nk);
    simd::gemm_nt(scores.data(), vt.data(), out.data(), nq, dh, nk);
    for (std::size_t i = 0; i < nq; ++i) {
      auto r = context.row(i);
      for (std::size_t c = 0; c < dh; ++c) r[h * dh + c] = out[i * dh + c];
    }
  }
  return linear(context, p.proj_weight, p.proj_bias);
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (stride == 0) throw InvalidArgument("conv2d: stride must be > 0");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c) shape_mismatch("conv2d", x, kernel);
  if (!bias.empty() && bias.size() != o) shape_mismatch("conv2d(bias)", kernel, bias);
  if (h + 2 * pad < kh || w + 2 * pad < kw) shape_mismatch("conv2d(window)", x, kernel);
  require_finite(x, "conv2d");
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  const std::size_t ckk = c * kh * kw;

  std::vector<float> cols(ho * wo * ckk, 0.0f);
  const auto src = x.data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      float* col = cols.data() + (oy * wo + ox) * ckk;
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) {
              continue;
            }
            col[(ci * kh + ky) * kw + kx] = src[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  Tensor y({o, ho, wo});
  simd::gemm_nt(kernel.data().data(), cols.data(), y.data().data(), o, ho * wo, ckk);
  if (!bias.empty()) {
    auto out = y.data();
    for (std::size_t oc = 0; oc < o; ++oc) {
      for (std::size_t i = 0; i < ho * wo; ++i) out[oc * ho * wo + i] += bias[oc];
    }
  }
  return y;
}

Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  require_rank(x, 3, "channel_affine");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (scale.size() != c) shape_mismatch("channel_affine(scale)", x, scale);
  if (shift.size() != c) shape_mismatch("channel_affine(shift)", x, shift);
  Tensor y = x;
  auto d = y.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) d[ch * plane + i] = d[ch * plane + i] * scale[ch] + shift[ch];
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data()) v = v > 0.0f ? v : 0.0f;
  return y;
}

std::size_t argmax(std::span<const float> v) {
  if (v.empty()) throw ShapeError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

Tensor gumbel_softmax(const Tensor& logits, double tau, Rng* rng, bool hard) {
  require_rank(logits, 1, "gumbel_softmax");
  if (logits.empty()) throw ShapeError("gumbel_softmax: empty logits");
  if (!(tau > 0.0)) throw InvalidArgument("gumbel_softmax: temperature must be > 0");
  require_finite(logits, "gumbel_softmax");
  const std::size_t k = logits.size();
  std::vector<double> z(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double g = rng ? rng->gumbel() : 0.0;
    z[i] = (static_cast<double>(logits[i]) + g) / tau;
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  Tensor y({k});
  for (std::size_t i = 0; i < k; ++i) y[i] = static_cast<float>(z[i] / sum);
  if (hard) {
    const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    for (std::size_t i = 0; i < k; ++i) y[i] = i == best ? 1.0f : 0.0f;
  }
  return y;
}

}  // namespace evtrack::nn
