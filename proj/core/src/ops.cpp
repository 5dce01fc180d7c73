// Copyright 2026 The STRM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "strm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include <Eigen/Core>

namespace strm::ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : inputs) {
    if (!v->valid()) throw ContractError("operation received an empty variable");
    Tape<T>* t = v->tape();
    if (!t) continue;
    if (tape && t != tape) throw ContractError("inputs recorded on different tapes");
    tape = t;
  }
  return tape;
}

template <typename T>
Tape<T>* common_tape(const std::vector<Var<T>>& inputs) {
  Tape<T>* tape = nullptr;
  for (const Var<T>& v : inputs) {
    if (!v.valid()) throw ContractError("operation received an empty variable");
    Tape<T>* t = v.tape();
    if (!t) continue;
    if (tape && t != tape) throw ContractError("inputs recorded on different tapes");
    tape = t;
  }
  return tape;
}

template <typename T, typename Backward>
Var<T> emit(Tensor<T> value, Tape<T>* tape, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (tape) {
    node->backward = std::forward<Backward>(backward);
    tape->record(node);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_scalar(const Tensor<T>& t, const char* op) {
  if (t.size() != 1) {
    throw DimensionError(std::string(op) + ": expected a single-element weight, got " +
                         shape_string(t.shape()));
  }
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tape<T>* tape = common_tape<T>({&x});
  Tensor<T> out(x.shape());
  const T* in = x.value().raw();
  T* o = out.raw();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = fwd(in[i]);
  auto xn = x.shared();
  Tensor<T> y = tape ? out : Tensor<T>();
  return emit<T>(std::move(out), tape, [xn, y, deriv](const Tensor<T>& g) {
    if (!xn->tracked()) return;
    Tensor<T>& gx = xn->grad_buffer();
    const T* xin = xn->value.raw();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tape<T>* tape = common_tape<T>({&a, &b});
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  auto an = a.shared(), bn = b.shared();
  return emit<T>(std::move(out), tape, [an, bn](const Tensor<T>& g) {
    if (an->tracked()) an->accumulate(g);
    if (bn->tracked()) bn->accumulate(g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tape<T>* tape = common_tape<T>({&a, &b});
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto an = a.shared(), bn = b.shared();
  return emit<T>(std::move(out), tape, [an, bn](const Tensor<T>& g) {
    if (an->tracked()) an->accumulate(g);
    if (bn->tracked()) {
      Tensor<T>& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tape<T>* tape = common_tape<T>({&a, &b});
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto an = a.shared(), bn = b.shared();
  return emit<T>(std::move(out), tape, [an, bn](const Tensor<T>& g) {
    if (an->tracked()) {
      Tensor<T>& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
    }
    if (bn->tracked()) {
      Tensor<T>& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s) {
  require_scalar(s.value(), "scale_by");
  Tape<T>* tape = common_tape<T>({&a, &s});
  const T factor = s.value()[0];
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  auto an = a.shared(), sn = s.shared();
  return emit<T>(std::move(out), tape, [an, sn](const Tensor<T>& g) {
    const T factor = sn->value[0];
    if (an->tracked()) {
      Tensor<T>& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    }
    if (sn->tracked()) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * an->value[i];
      sn->grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary<T>(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a.value(), 2, "matmul");
  require_rank(b.value(), 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  Tape<T>* tape = common_tape<T>({&a, &b});
  Tensor<T> out({m, n});
  MatrixMap<T>(out.raw(), m, n).noalias() =
      ConstMatrixMap<T>(a.value().raw(), m, k) * ConstMatrixMap<T>(b.value().raw(), k, n);
  auto an = a.shared(), bn = b.shared();
  return emit<T>(std::move(out), tape, [an, bn, m, k, n](const Tensor<T>& g) {
    ConstMatrixMap<T> gm(g.raw(), m, n);
    if (an->tracked()) {
      MatrixMap<T>(an->grad_buffer().raw(), m, k).noalias() +=
          gm * ConstMatrixMap<T>(bn->value.raw(), k, n).transpose();
    }
    if (bn->tracked()) {
      MatrixMap<T>(bn->grad_buffer().raw(), k, n).noalias() +=
          ConstMatrixMap<T>(an->value.raw(), m, k).transpose() * gm;
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_rank(a.value(), 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tape<T>* tape = common_tape<T>({&a});
  Tensor<T> out({n, m});
  MatrixMap<T>(out.raw(), n, m) = ConstMatrixMap<T>(a.value().raw(), m, n).transpose();
  auto an = a.shared();
  return emit<T>(std::move(out), tape, [an, m, n](const Tensor<T>& g) {
    if (!an->tracked()) return;
    MatrixMap<T>(an->grad_buffer().raw(), m, n) +=
        ConstMatrixMap<T>(g.raw(), n, m).transpose();
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tape<T>* tape = common_tape<T>({&a});
  Tensor<T> out = a.value().reshaped(std::move(shape));
  auto an = a.shared();
  return emit<T>(std::move(out), tape, [an](const Tensor<T>& g) {
    if (an->tracked()) an->accumulate(g.reshaped(an->value.shape()));
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
              std::size_t stride, std::size_t padding) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = kernel.value();
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d kernel");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const std::size_t cout = w.shape()[0], ks = w.shape()[2];
  if (w.shape()[1] != cin) {
    throw DimensionError("conv2d: kernel input channels (axis 1) = " +
                         std::to_string(w.shape()[1]) + " but input channels (axis 0) = " +
                         std::to_string(cin));
  }
  if (w.shape()[3] != ks || ks % 2 == 0) {
    throw DimensionError("conv2d: kernel spatial axes 2,3 must be equal and odd, got " +
                         shape_string(w.shape()));
  }
  if (bias.value().rank() != 1 || bias.value().shape()[0] != cout) {
    throw DimensionError("conv2d: bias axis 0 must equal kernel output channels " +
                         std::to_string(cout) + ", got " + shape_string(bias.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (h + 2 * padding < ks || wd + 2 * padding < ks) {
    throw DimensionError("conv2d: padded input " + shape_string(x.shape()) +
                         " smaller than kernel");
  }
  const std::size_t ho = (h + 2 * padding - ks) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - ks) / stride + 1;
  const std::size_t rows = cin * ks * ks, cols = ho * wo;

  // im2col: rows index (c, ky, kx), columns index output pixels.
  Tensor<T> patches({rows, cols});
  T* pc = patches.raw();
  const T* xd = x.raw();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < ks; ++ky) {
      for (std::size_t kx = 0; kx < ks; ++kx) {
        T* row = pc + ((c * ks + ky) * ks + kx) * cols;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            row[oy * wo + ox] =
                (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd))
                    ? T(0)
                    : xd[(c * h + iy) * wd + ix];
          }
        }
      }
    }
  }

  Tensor<T> out({cout, ho, wo});
  MatrixMap<T> om(out.raw(), cout, cols);
  om.noalias() = ConstMatrixMap<T>(w.raw(), cout, rows) * ConstMatrixMap<T>(pc, rows, cols);
  for (std::size_t o = 0; o < cout; ++o) om.row(o).array() += bias.value()[o];

  Tape<T>* tape = common_tape<T>({&input, &kernel, &bias});
  auto xn = input.shared(), wn = kernel.shared(), bn = bias.shared();
  if (!tape) patches = Tensor<T>();
  return emit<T>(
      std::move(out), tape,
      [xn, wn, bn, patches = std::move(patches), cin, h, wd, cout, ks, ho, wo, rows, cols,
       stride, padding](const Tensor<T>& g) {
        ConstMatrixMap<T> gm(g.raw(), cout, cols);
        if (bn->tracked()) {
          Tensor<T>& gb = bn->grad_buffer();
          for (std::size_t o = 0; o < cout; ++o) gb[o] += gm.row(o).sum();
        }
        if (wn->tracked()) {
          MatrixMap<T>(wn->grad_buffer().raw(), cout, rows).noalias() +=
              gm * ConstMatrixMap<T>(patches.raw(), rows, cols).transpose();
        }
        if (xn->tracked()) {
          RowMatrix<T> dcols =
              ConstMatrixMap<T>(wn->value.raw(), cout, rows).transpose() * gm;
          T* gx = xn->grad_buffer().raw();
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < ks; ++ky) {
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const T* row = dcols.data() + ((c * ks + ky) * ks + kx) * cols;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const long iy =
                      static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const long ix =
                        static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                    gx[(c * h + iy) * wd + ix] += row[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> softmax(const Var<T>& x, const std::vector<bool>& mask) {
  const Tensor<T>& v = x.value();
  if (v.rank() == 0) throw DimensionError("softmax: empty tensor");
  const std::size_t n = v.shape().back();
  const std::size_t rows = v.size() / n;
  if (!mask.empty() && mask.size() != n) {
    throw DimensionError("softmax: mask length " + std::to_string(mask.size()) +
                         " does not match last axis " + std::to_string(n));
  }
  if (!mask.empty() && std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw ContractError("softmax: mask excludes every entry");
  }
  auto live = [&mask](std::size_t j) { return mask.empty() || mask[j]; };
  Tensor<T> out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = v.raw() + r * n;
    T* o = out.raw() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (live(j)) mx = std::max(mx, in[j]);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = live(j) ? std::exp(in[j] - mx) : T(0);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  Tape<T>* tape = common_tape<T>({&x});
  auto xn = x.shared();
  Tensor<T> y = tape ? out : Tensor<T>();
  return emit<T>(std::move(out), tape, [xn, y, n, rows](const Tensor<T>& g) {
    if (!xn->tracked()) return;
    Tensor<T>& gx = xn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.raw() + r * n;
      const T* gr = g.raw() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma,
                  const Var<T>& beta, T eps) {
  const Tensor<T>& v = x.value();
  if (v.rank() < 2) throw DimensionError("group_norm: input must be C x ...");
  const std::size_t channels = v.shape()[0];
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(channels) +
                      " channels not divisible into " + std::to_string(groups) + " groups");
  }
  if (gamma.size() != channels || beta.size() != channels) {
    throw DimensionError("group_norm: gamma/beta length must equal channel count " +
                         std::to_string(channels));
  }
  const std::size_t spatial = v.size() / channels;
  const std::size_t per_group = channels / groups;
  const std::size_t count = per_group * spatial;
  Tensor<T> xhat(v.shape());
  std::vector<T> inv_std(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* in = v.raw() + gi * count;
    T mu = 0;
    for (std::size_t i = 0; i < count; ++i) mu += in[i];
    mu /= T(count);
    T var = 0;
    for (std::size_t i = 0; i < count; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= T(count);
    inv_std[gi] = T(1) / std::sqrt(var + eps);
    T* xh = xhat.raw() + gi * count;
    for (std::size_t i = 0; i < count; ++i) xh[i] = (in[i] - mu) * inv_std[gi];
  }
  Tensor<T> out(v.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const T gm = gamma.value()[c], bt = beta.value()[c];
    for (std::size_t i = 0; i < spatial; ++i)
      out[c * spatial + i] = gm * xhat[c * spatial + i] + bt;
  }
  Tape<T>* tape = common_tape<T>({&x, &gamma, &beta});
  auto xn = x.shared(), gn = gamma.shared(), bn = beta.shared();
  return emit<T>(
      std::move(out), tape,
      [xn, gn, bn, xhat, inv_std, groups, channels, spatial, per_group,
       count](const Tensor<T>& g) {
        if (gn->tracked() || bn->tracked()) {
          for (std::size_t c = 0; c < channels; ++c) {
            T dg = 0, db = 0;
            for (std::size_t i = 0; i < spatial; ++i) {
              dg += g[c * spatial + i] * xhat[c * spatial + i];
              db += g[c * spatial + i];
            }
            if (gn->tracked()) gn->grad_buffer()[c] += dg;
            if (bn->tracked()) bn->grad_buffer()[c] += db;
          }
        }
        if (!xn->tracked()) return;
        Tensor<T>& gx = xn->grad_buffer();
        std::vector<T> dxhat(count);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          T sum_d = 0, sum_dx = 0;
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t idx = gi * count + i;
            const std::size_t c = gi * per_group + i / spatial;
            dxhat[i] = g[idx] * gn->value[c];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * xhat[idx];
          }
          const T scale_n = inv_std[gi] / T(count);
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t idx = gi * count + i;
            gx[idx] += scale_n * (T(count) * dxhat[i] - sum_d - xhat[idx] * sum_dx);
          }
        }
      });
}

template <typename T>
Var<T> l2_normalize(const Var<T>& x, T eps) {
  const Tensor<T>& v = x.value();
  if (v.rank() < 2) throw DimensionError("l2_normalize: input must be C x ...");
  const std::size_t channels = v.shape()[0];
  const std::size_t spatial = v.size() / channels;
  std::vector<T> norms(spatial, T(0));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < spatial; ++p) norms[p] += v[c * spatial + p] * v[c * spatial + p];
  for (auto& n : norms) n = std::sqrt(n + eps);
  Tensor<T> out(v.shape());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < spatial; ++p) out[c * spatial + p] = v[c * spatial + p] / norms[p];
  Tape<T>* tape = common_tape<T>({&x});
  auto xn = x.shared();
  Tensor<T> y = tape ? out : Tensor<T>();
  return emit<T>(std::move(out), tape,
                 [xn, y, norms, channels, spatial](const Tensor<T>& g) {
                   if (!xn->tracked()) return;
                   Tensor<T>& gx = xn->grad_buffer();
                   for (std::size_t p = 0; p < spatial; ++p) {
                     T dot = 0;
                     for (std::size_t c = 0; c < channels; ++c)
                       dot += g[c * spatial + p] * y[c * spatial + p];
                     for (std::size_t c = 0; c < channels; ++c) {
                       const std::size_t i = c * spatial + p;
                       gx[i] += (g[i] - y[i] * dot) / norms[p];
                     }
                   }
                 });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (p.value().rank() == 0 || t != tail) {
      throw DimensionError("concat: trailing axes differ, " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    lead += p.shape()[0];
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<T> out(shape);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().raw(), p.value().raw() + p.size(), out.raw() + offset);
    offset += p.size();
    nodes.push_back(p.shared());
  }
  Tape<T>* tape = common_tape<T>(parts);
  return emit<T>(std::move(out), tape, [nodes](const Tensor<T>& g) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      if (n->tracked()) {
        Tensor<T>& gn = n->grad_buffer();
        for (std::size_t i = 0; i < gn.size(); ++i) gn[i] += g[offset + i];
      }
      offset += n->value.size();
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t begin, std::size_t end) {
  const Tensor<T>& v = x.value();
  if (v.rank() == 0 || begin >= end || end > v.shape()[0]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for axis 0 of " +
                         shape_string(v.shape()));
  }
  const std::size_t inner = v.size() / v.shape()[0];
  Shape shape = v.shape();
  shape[0] = end - begin;
  Tensor<T> out(shape);
  std::copy(v.raw() + begin * inner, v.raw() + end * inner, out.raw());
  Tape<T>* tape = common_tape<T>({&x});
  auto xn = x.shared();
  return emit<T>(std::move(out), tape, [xn, begin, inner](const Tensor<T>& g) {
    if (!xn->tracked()) return;
    Tensor<T>& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * inner + i] += g[i];
  });
}

template <typename T>
Var<T> stack(const std::vector<Var<T>>& scalars) {
  if (scalars.empty()) throw ContractError("stack: no inputs");
  std::vector<Var<T>> flat;
  flat.reserve(scalars.size());
  for (const auto& s : scalars) {
    require_scalar(s.value(), "stack");
    flat.push_back(s.value().rank() == 1 ? s : reshape(s, Shape{1}));
  }
  return concat(flat);
}

template <typename T>
Var<T> element(const Var<T>& x, std::size_t index) {
  if (index >= x.size()) {
    throw DimensionError("element: index " + std::to_string(index) + " out of range " +
                         shape_string(x.shape()));
  }
  Tape<T>* tape = common_tape<T>({&x});
  auto xn = x.shared();
  return emit<T>(Tensor<T>::scalar(x.value()[index]), tape,
                 [xn, index](const Tensor<T>& g) {
                   if (xn->tracked()) xn->grad_buffer()[index] += g[0];
                 });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> upsample_taps(std::size_t in) {
  std::vector<Tap> taps(2 * in);
  for (std::size_t o = 0; o < 2 * in; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  require_rank(v, 3, "upsample2x");
  const std::size_t c = v.shape()[0], h = v.shape()[1], w = v.shape()[2];
  const auto ty = upsample_taps(h), tx = upsample_taps(w);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < 2 * h; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < 2 * w; ++ox) {
        const Tap& b = tx[ox];
        out.at(ch, oy, ox) = T(a.w0 * b.w0) * v.at(ch, a.i0, b.i0) +
                             T(a.w0 * b.w1) * v.at(ch, a.i0, b.i1) +
                             T(a.w1 * b.w0) * v.at(ch, a.i1, b.i0) +
                             T(a.w1 * b.w1) * v.at(ch, a.i1, b.i1);
      }
    }
  }
  Tape<T>* tape = common_tape<T>({&x});
  auto xn = x.shared();
  return emit<T>(std::move(out), tape, [xn, ty, tx, c, h, w](const Tensor<T>& g) {
    if (!xn->tracked()) return;
    Tensor<T>& gx = xn->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t oy = 0; oy < 2 * h; ++oy) {
        const Tap& a = ty[oy];
        for (std::size_t ox = 0; ox < 2 * w; ++ox) {
          const Tap& b = tx[ox];
          const T go = g[(ch * 2 * h + oy) * 2 * w + ox];
          gx.at(ch, a.i0, b.i0) += T(a.w0 * b.w0) * go;
          gx.at(ch, a.i0, b.i1) += T(a.w0 * b.w1) * go;
          gx.at(ch, a.i1, b.i0) += T(a.w1 * b.w0) * go;
          gx.at(ch, a.i1, b.i1) += T(a.w1 * b.w1) * go;
        }
      }
    }
  });
}

template <typename T>
Var<T> max_last(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  require_rank(v, 2, "max_last");
  const std::size_t m = v.shape()[0], n = v.shape()[1];
  Tensor<T> out({m});
  std::vector<std::size_t> arg(m, 0);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = v.raw() + r * n;
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;
    arg[r] = best;
    out[r] = row[best];
  }
  Tape<T>* tape = common_tape<T>({&x});
  auto xn = x.shared();
  return emit<T>(std::move(out), tape, [xn, arg, n](const Tensor<T>& g) {
    if (!xn->tracked()) return;
    Tensor<T>& gx = xn->grad_buffer();
    for (std::size_t r = 0; r < arg.size(); ++r) gx[r * n + arg[r]] += g[r];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  Tape<T>* tape = common_tape<T>({&x});
  auto xn = x.shared();
  return emit<T>(Tensor<T>::scalar(total), tape, [xn](const Tensor<T>& g) {
    if (!xn->tracked()) return;
    Tensor<T>& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const Tensor<T>& v = logits.value();
  require_rank(v, 3, "cross_entropy");
  const std::size_t classes = v.shape()[0];
  const std::size_t pixels = v.shape()[1] * v.shape()[2];
  if (labels.size() != pixels) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(pixels) + " pixels");
  }
  Tensor<T> probs(v.shape());
  T loss = 0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const int label = labels[p];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range");
    }
    T mx = v[p];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, v[c * pixels + p]);
    T total = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[c * pixels + p] = std::exp(v[c * pixels + p] - mx);
      total += probs[c * pixels + p];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[c * pixels + p] /= total;
    loss -= v[static_cast<std::size_t>(label) * pixels + p] - mx - std::log(total);
  }
  loss /= T(pixels);
  Tape<T>* tape = common_tape<T>({&logits});
  auto xn = logits.shared();
  return emit<T>(Tensor<T>::scalar(loss), tape,
                 [xn, probs, labels, classes, pixels](const Tensor<T>& g) {
                   if (!xn->tracked()) return;
                   Tensor<T>& gx = xn->grad_buffer();
                   const T s = g[0] / T(pixels);
                   for (std::size_t c = 0; c < classes; ++c) {
                     for (std::size_t p = 0; p < pixels; ++p) {
                       const T target = labels[p] == static_cast<int>(c) ? T(1) : T(0);
                       gx[c * pixels + p] += s * (probs[c * pixels + p] - target);
                     }
                   }
                 });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  const Var<T> d = sub(a, b);
  return mean(mul(d, d));
}

template <typename T>
Var<T> mae(const Var<T>& a, const Var<T>& b) {
  const Var<T> d = sub(a, b);
  return mean(unary<T>(
      d, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }));
}

template <typename T>
Var<T> straight_through(const Var<T>& a_soft) {
  const Tensor<T>& v = a_soft.value();
  if (v.rank() != 1) throw DimensionError("straight_through: expected a vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  Tensor<T> out(v.shape());
  out[best] = T(1);
  Tape<T>* tape = common_tape<T>({&a_soft});
  auto xn = a_soft.shared();
  return emit<T>(std::move(out), tape, [xn](const Tensor<T>& g) {
    if (xn->tracked()) xn->accumulate(g);
  });
}

template <typename T>
Var<T> blend(const Var<T>& old_value, const Var<T>& new_value, const Var<T>& a) {
  require_same_shape(old_value.value(), new_value.value(), "blend");
  require_scalar(a.value(), "blend");
  const T w = a.value()[0];
  Tensor<T> out;
  if (w == T(0)) {
    out = old_value.value();
  } else if (w == T(1)) {
    out = new_value.value();
  } else {
    out = Tensor<T>(old_value.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (T(1) - w) * old_value.value()[i] + w * new_value.value()[i];
  }
  Tape<T>* tape = common_tape<T>({&old_value, &new_value, &a});
  auto on = old_value.shared(), nn = new_value.shared(), an = a.shared();
  return emit<T>(std::move(out), tape, [on, nn, an](const Tensor<T>& g) {
    const T w = an->value[0];
    if (on->tracked()) {
      Tensor<T>& go = on->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) go[i] += (T(1) - w) * g[i];
    }
    if (nn->tracked()) {
      Tensor<T>& gn = nn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gn[i] += w * g[i];
    }
    if (an->tracked()) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (nn->value[i] - on->value[i]);
      an->grad_buffer()[0] += acc;
    }
  });
}

#define STRM_INSTANTIATE_OPS(T)                                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                  \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                  \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                  \
  template Var<T> scale(const Var<T>&, T);                                            \
  template Var<T> add_scalar(const Var<T>&, T);                                       \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                             \
  template Var<T> leaky_relu(const Var<T>&, T);                                       \
  template Var<T> sigmoid(const Var<T>&);                                             \
  template Var<T> tanh(const Var<T>&);                                                \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                               \
  template Var<T> transpose(const Var<T>&);                                           \
  template Var<T> reshape(const Var<T>&, Shape);                                      \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,    \
                         std::size_t);                                                \
  template Var<T> softmax(const Var<T>&, const std::vector<bool>&);                   \
  template Var<T> group_norm(const Var<T>&, std::size_t, const Var<T>&, const Var<T>&, \
                             T);                                                      \
  template Var<T> l2_normalize(const Var<T>&, T);                                     \
  template Var<T> concat(const std::vector<Var<T>>&);                                 \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t);                     \
  template Var<T> stack(const std::vector<Var<T>>&);                                  \
  template Var<T> element(const Var<T>&, std::size_t);                                \
  template Var<T> upsample2x(const Var<T>&);                                          \
  template Var<T> max_last(const Var<T>&);                                            \
  template Var<T> sum(const Var<T>&);                                                 \
  template Var<T> mean(const Var<T>&);                                                \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<int>&);              \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                  \
  template Var<T> mae(const Var<T>&, const Var<T>&);                                  \
  template Var<T> straight_through(const Var<T>&);                                    \
  template Var<T> blend(const Var<T>&, const Var<T>&, const Var<T>&);

STRM_INSTANTIATE_OPS(float)
STRM_INSTANTIATE_OPS(double)

#undef STRM_INSTANTIATE_OPS

}  // namespace strm::ops
