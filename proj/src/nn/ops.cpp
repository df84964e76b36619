#include "rawvsr/nn/ops.h"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace rawvsr::nn {

namespace {

thread_local bool g_grad_enabled = true;
thread_local uint64_t g_flops = 0;

inline void add_flops(uint64_t f) { g_flops += f; }

inline void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                      float alpha, const float* a, int lda, const float* b, int ldb,
                      float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                      double alpha, const double* a, int lda, const double* b, int ldb,
                      double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
Var<T> finish(Tensor<T> val, std::vector<Var<T>> parents,
              std::function<void(Node<T>&)> backfn) {
  auto out = std::make_shared<Node<T>>();
  out->val = std::move(val);
  if (g_grad_enabled) {
    bool need = false;
    for (const auto& p : parents) need |= p && p->requires_grad;
    if (need) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backfn = std::move(backfn);
    }
  }
  return out;
}

// Output shape and per-operand element strides for broadcasting binary ops.
struct BShape {
  int d[4];
  size_t sa[4], sb[4];
};

template <typename T>
BShape bcast(const Tensor<T>& a, const Tensor<T>& b) {
  const int da[4] = {a.n, a.c, a.h, a.w}, db[4] = {b.n, b.c, b.h, b.w};
  BShape s;
  for (int i = 0; i < 4; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1)
      throw ShapeError("broadcast mismatch " + a.shape_str() + " vs " + b.shape_str());
    s.d[i] = std::max(da[i], db[i]);
  }
  size_t stA = 1, stB = 1;
  for (int i = 3; i >= 0; --i) {
    s.sa[i] = da[i] == 1 ? 0 : stA;
    s.sb[i] = db[i] == 1 ? 0 : stB;
    stA *= da[i];
    stB *= db[i];
  }
  return s;
}

enum class BinOp { Add, Sub, Mul };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinOp op) {
  const BShape s = bcast(a->val, b->val);
  Tensor<T> out(s.d[0], s.d[1], s.d[2], s.d[3]);
  const T* pa = a->val.v.data();
  const T* pb = b->val.v.data();
  size_t o = 0;
  for (int i = 0; i < s.d[0]; ++i)
    for (int j = 0; j < s.d[1]; ++j)
      for (int y = 0; y < s.d[2]; ++y) {
        size_t ia = i * s.sa[0] + j * s.sa[1] + y * s.sa[2];
        size_t ib = i * s.sb[0] + j * s.sb[1] + y * s.sb[2];
        for (int x = 0; x < s.d[3]; ++x, ++o) {
          const T va = pa[ia + x * s.sa[3]], vb = pb[ib + x * s.sb[3]];
          out.v[o] = op == BinOp::Add ? va + vb : op == BinOp::Sub ? va - vb : va * vb;
        }
      }
  add_flops(out.numel());

  return finish<T>(std::move(out), {a, b}, [a, b, s, op](Node<T>& self) {
    const T* g = self.grad.v.data();
    const bool na = a->requires_grad, nb = b->requires_grad;
    if (na) a->ensure_grad();
    if (nb) b->ensure_grad();
    const T* pa = a->val.v.data();
    const T* pb = b->val.v.data();
    size_t o = 0;
    for (int i = 0; i < s.d[0]; ++i)
      for (int j = 0; j < s.d[1]; ++j)
        for (int y = 0; y < s.d[2]; ++y) {
          size_t ia = i * s.sa[0] + j * s.sa[1] + y * s.sa[2];
          size_t ib = i * s.sb[0] + j * s.sb[1] + y * s.sb[2];
          for (int x = 0; x < s.d[3]; ++x, ++o) {
            const size_t ja = ia + x * s.sa[3], jb = ib + x * s.sb[3];
            const T gv = g[o];
            if (op == BinOp::Mul) {
              if (na) a->grad.v[ja] += gv * pb[jb];
              if (nb) b->grad.v[jb] += gv * pa[ja];
            } else {
              if (na) a->grad.v[ja] += gv;
              if (nb) b->grad.v[jb] += op == BinOp::Sub ? -gv : gv;
            }
          }
        }
  });
}

template <typename T>
int pick_chunk_rows(int ck, int wout, int hout) {
  const size_t budget = size_t(8) << 20;  // col buffer cap, bytes
  size_t rows = budget / (size_t(ck) * wout * sizeof(T));
  return int(std::clamp<size_t>(rows, 1, size_t(hout)));
}

template <typename T>
void im2col_chunk(const Tensor<T>& x, int ni, int K, int stride, int pad, int y0,
                  int rows, int wout, T* col) {
  const int h = x.h, w = x.w;
  size_t ridx = 0;
  for (int ci = 0; ci < x.c; ++ci) {
    const T* src = x.chan(ni, ci);
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* dst = col + ridx++ * size_t(rows) * wout;
        for (int oy = 0; oy < rows; ++oy) {
          const int iy = (y0 + oy) * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wout, T(0));
            dst += wout;
            continue;
          }
          const T* row = src + size_t(iy) * w;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            *dst++ = (ix >= 0 && ix < w) ? row[ix] : T(0);
          }
        }
      }
  }
}

template <typename T>
void col2im_chunk(Tensor<T>& gx, int ni, int K, int stride, int pad, int y0, int rows,
                  int wout, const T* col) {
  const int h = gx.h, w = gx.w;
  size_t ridx = 0;
  for (int ci = 0; ci < gx.c; ++ci) {
    T* dst = gx.chan(ni, ci);
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* src = col + ridx++ * size_t(rows) * wout;
        for (int oy = 0; oy < rows; ++oy) {
          const int iy = (y0 + oy) * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            src += wout;
            continue;
          }
          T* row = dst + size_t(iy) * w;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) row[ix] += src[ox];
          }
          src += wout;
        }
      }
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

void flops_reset() { g_flops = 0; }
uint64_t flops_get() { return g_flops; }

template <typename T>
Var<T> make_var(Tensor<T> t, bool requires_grad) {
  auto v = std::make_shared<Node<T>>();
  v->val = std::move(t);
  v->requires_grad = requires_grad;
  return v;
}

template <typename T>
Var<T> make_const(Tensor<T> t) {
  return make_var(std::move(t), false);
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root || !root->requires_grad)
    throw Error("backward: root does not require grad");
  root->ensure_grad();
  std::fill(root->grad.v.begin(), root->grad.v.end(), T(1));

  // Reverse post-order over the parent DAG = valid processing order. `order`
  // must own the nodes: detach() drops parent links as the sweep goes, and a
  // node often has no owner besides its child's parents vector.
  std::vector<Var<T>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Var<T>, size_t>> stack{{root, 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Var<T> p = node->parents[next++];
      if (p && p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back({std::move(p), 0});
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& node = **it;
    if (node.backfn) {
      node.ensure_grad();
      node.backfn(node);
    }
    node.detach();
    it->reset();  // frees the node's activations if nothing else holds it
  }
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const Tensor<T>& xt = x->val;
  const Tensor<T>& wt = w->val;
  const int K = wt.h;
  if (wt.w != K) throw ShapeError("conv2d expects square kernels");
  if (xt.c != wt.c)
    throw ShapeError("conv2d channels " + xt.shape_str() + " vs " + wt.shape_str());
  if (b && (b->val.c != wt.n || b->val.numel() != size_t(wt.n)))
    throw ShapeError("conv2d bias shape");
  const int hout = (xt.h + 2 * pad - K) / stride + 1;
  const int wout = (xt.w + 2 * pad - K) / stride + 1;
  if (hout <= 0 || wout <= 0) throw ShapeError("conv2d output collapsed");
  const int cout = wt.n, ck = wt.c * K * K;

  Tensor<T> out(xt.n, cout, hout, wout);
  const int chunk = pick_chunk_rows<T>(ck, wout, hout);
  std::vector<T> col(size_t(ck) * chunk * wout);
  for (int n = 0; n < xt.n; ++n) {
    for (int y0 = 0; y0 < hout; y0 += chunk) {
      const int rows = std::min(chunk, hout - y0);
      im2col_chunk(xt, n, K, stride, pad, y0, rows, wout, col.data());
      blas_gemm(CblasNoTrans, CblasNoTrans, cout, rows * wout, ck, T(1), wt.v.data(), ck,
                col.data(), rows * wout, T(0),
                out.v.data() + (size_t(n) * cout * hout + y0) * wout, hout * wout);
    }
    if (b)
      for (int co = 0; co < cout; ++co) {
        T* dst = out.chan(n, co);
        const T bias = b->val.v[co];
        for (size_t i = 0, m = size_t(hout) * wout; i < m; ++i) dst[i] += bias;
      }
  }
  add_flops(uint64_t(xt.n) * cout * ck * hout * wout);

  return finish<T>(std::move(out), {x, w, b},
                   [x, w, b, stride, pad, K, hout, wout](Node<T>& self) {
    const Tensor<T>& xt = x->val;
    const Tensor<T>& wt = w->val;
    const int cout = wt.n, ck = wt.c * K * K;
    const int chunk = pick_chunk_rows<T>(ck, wout, hout);
    std::vector<T> col(size_t(ck) * chunk * wout);
    std::vector<T> dcol(x->requires_grad ? col.size() : 0);
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    if (b && b->requires_grad) b->ensure_grad();

    for (int n = 0; n < xt.n; ++n) {
      for (int y0 = 0; y0 < hout; y0 += chunk) {
        const int rows = std::min(chunk, hout - y0);
        const T* gptr = self.grad.v.data() + (size_t(n) * cout * hout + y0) * wout;
        if (w->requires_grad) {
          im2col_chunk(xt, n, K, stride, pad, y0, rows, wout, col.data());
          blas_gemm(CblasNoTrans, CblasTrans, cout, ck, rows * wout, T(1), gptr,
                    hout * wout, col.data(), rows * wout, T(1), w->grad.v.data(), ck);
        }
        if (x->requires_grad) {
          blas_gemm(CblasTrans, CblasNoTrans, ck, rows * wout, cout, T(1), wt.v.data(),
                    ck, gptr, hout * wout, T(0), dcol.data(), rows * wout);
          col2im_chunk(x->grad, n, K, stride, pad, y0, rows, wout, dcol.data());
        }
      }
      if (b && b->requires_grad)
        for (int co = 0; co < cout; ++co) {
          const T* g = self.grad.chan(n, co);
          T acc = 0;
          for (size_t i = 0, m = size_t(hout) * wout; i < m; ++i) acc += g[i];
          b->grad.v[co] += acc;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Modulated deformable convolution (3x3, stride 1)

namespace {

template <typename T>
struct BilinSample {
  T value;
  T dy, dx;  // value derivative w.r.t. the sampling position
  int y0, x0;
  T w00, w01, w10, w11;
  bool v00, v01, v10, v11;
};

template <typename T>
BilinSample<T> sample_zero(const T* p, int h, int w, T py, T px) {
  BilinSample<T> s{};
  const T fy = std::floor(py), fx = std::floor(px);
  s.y0 = int(fy);
  s.x0 = int(fx);
  const T ay = py - fy, ax = px - fx;
  s.v00 = s.y0 >= 0 && s.y0 < h && s.x0 >= 0 && s.x0 < w;
  s.v01 = s.y0 >= 0 && s.y0 < h && s.x0 + 1 >= 0 && s.x0 + 1 < w;
  s.v10 = s.y0 + 1 >= 0 && s.y0 + 1 < h && s.x0 >= 0 && s.x0 < w;
  s.v11 = s.y0 + 1 >= 0 && s.y0 + 1 < h && s.x0 + 1 >= 0 && s.x0 + 1 < w;
  const T q00 = s.v00 ? p[size_t(s.y0) * w + s.x0] : T(0);
  const T q01 = s.v01 ? p[size_t(s.y0) * w + s.x0 + 1] : T(0);
  const T q10 = s.v10 ? p[size_t(s.y0 + 1) * w + s.x0] : T(0);
  const T q11 = s.v11 ? p[size_t(s.y0 + 1) * w + s.x0 + 1] : T(0);
  s.w00 = (1 - ay) * (1 - ax);
  s.w01 = (1 - ay) * ax;
  s.w10 = ay * (1 - ax);
  s.w11 = ay * ax;
  s.value = s.w00 * q00 + s.w01 * q01 + s.w10 * q10 + s.w11 * q11;
  s.dy = (q10 - q00) * (1 - ax) + (q11 - q01) * ax;
  s.dx = (q01 - q00) * (1 - ay) + (q11 - q10) * ay;
  return s;
}

template <typename T>
void deform_col_chunk(const Tensor<T>& xt, const Tensor<T>& off, const Tensor<T>& msk,
                      int ni, int K, int groups, int y0, int rows, T* col) {
  const int h = xt.h, w = xt.w, pad = (K - 1) / 2, KK = K * K;
  const int cpg = xt.c / groups;
  size_t ridx = 0;
  for (int ci = 0; ci < xt.c; ++ci) {
    const int g = ci / cpg;
    const T* src = xt.chan(ni, ci);
    for (int k = 0; k < KK; ++k) {
      const int ky = k / K - pad, kx = k % K - pad;
      const T* ody = off.chan(ni, (g * KK + k) * 2);
      const T* odx = off.chan(ni, (g * KK + k) * 2 + 1);
      const T* m = msk.chan(ni, g * KK + k);
      T* dst = col + ridx++ * size_t(rows) * w;
      for (int oy = 0; oy < rows; ++oy) {
        const int y = y0 + oy;
        for (int x = 0; x < w; ++x) {
          const size_t pi = size_t(y) * w + x;
          const auto s =
              sample_zero(src, h, w, T(y + ky) + ody[pi], T(x + kx) + odx[pi]);
          *dst++ = m[pi] * s.value;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> deform_conv2d(const Var<T>& x, const Var<T>& offset, const Var<T>& mask,
                     const Var<T>& w, const Var<T>& b, int groups) {
  const Tensor<T>& xt = x->val;
  const Tensor<T>& wt = w->val;
  const int K = wt.h, KK = K * K;
  if (wt.w != K || K % 2 == 0) throw ShapeError("deform_conv2d expects odd square kernels");
  if (xt.c != wt.c || xt.c % groups != 0)
    throw ShapeError("deform_conv2d channel/group mismatch");
  if (offset->val.c != 2 * KK * groups || mask->val.c != KK * groups ||
      offset->val.n != xt.n || mask->val.n != xt.n || offset->val.h != xt.h ||
      offset->val.w != xt.w || mask->val.h != xt.h || mask->val.w != xt.w)
    throw ShapeError("deform_conv2d offset/mask shape");
  const int cout = wt.n, ck = xt.c * KK, h = xt.h, wd = xt.w;

  Tensor<T> out(xt.n, cout, h, wd);
  const int chunk = pick_chunk_rows<T>(ck, wd, h);
  std::vector<T> col(size_t(ck) * chunk * wd);
  for (int n = 0; n < xt.n; ++n)
    for (int y0 = 0; y0 < h; y0 += chunk) {
      const int rows = std::min(chunk, h - y0);
      deform_col_chunk(xt, offset->val, mask->val, n, K, groups, y0, rows, col.data());
      blas_gemm(CblasNoTrans, CblasNoTrans, cout, rows * wd, ck, T(1), wt.v.data(), ck,
                col.data(), rows * wd, T(0),
                out.v.data() + (size_t(n) * cout * h + y0) * wd, h * wd);
    }
  if (b)
    for (int n = 0; n < xt.n; ++n)
      for (int co = 0; co < cout; ++co) {
        T* dst = out.chan(n, co);
        const T bias = b->val.v[co];
        for (size_t i = 0, m2 = size_t(h) * wd; i < m2; ++i) dst[i] += bias;
      }
  add_flops(uint64_t(xt.n) * cout * ck * h * wd + uint64_t(xt.n) * ck * h * wd * 5);

  return finish<T>(std::move(out), {x, offset, mask, w, b},
                   [x, offset, mask, w, b, groups, K](Node<T>& self) {
    const Tensor<T>& xt = x->val;
    const Tensor<T>& wt = w->val;
    const Tensor<T>& off = offset->val;
    const Tensor<T>& msk = mask->val;
    const int KK = K * K, pad = (K - 1) / 2;
    const int cout = wt.n, ck = xt.c * KK, h = xt.h, wd = xt.w;
    const int cpg = xt.c / groups;

    if (x->requires_grad) x->ensure_grad();
    if (offset->requires_grad) offset->ensure_grad();
    if (mask->requires_grad) mask->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    if (b && b->requires_grad) b->ensure_grad();

    const int chunk = pick_chunk_rows<T>(ck, wd, h);
    std::vector<T> col(size_t(ck) * chunk * wd);
    std::vector<T> dcol(col.size());
    for (int n = 0; n < xt.n; ++n) {
      for (int y0 = 0; y0 < h; y0 += chunk) {
        const int rows = std::min(chunk, h - y0);
        const T* gptr = self.grad.v.data() + (size_t(n) * cout * h + y0) * wd;
        if (w->requires_grad) {
          deform_col_chunk(xt, off, msk, n, K, groups, y0, rows, col.data());
          blas_gemm(CblasNoTrans, CblasTrans, cout, ck, rows * wd, T(1), gptr, h * wd,
                    col.data(), rows * wd, T(1), w->grad.v.data(), ck);
        }
        blas_gemm(CblasTrans, CblasNoTrans, ck, rows * wd, cout, T(1), wt.v.data(), ck,
                  gptr, h * wd, T(0), dcol.data(), rows * wd);

        size_t ridx = 0;
        for (int ci = 0; ci < xt.c; ++ci) {
          const int g = ci / cpg;
          const T* src = xt.chan(n, ci);
          for (int k = 0; k < KK; ++k) {
            const int ky = k / K - pad, kx = k % K - pad;
            const T* ody = off.chan(n, (g * KK + k) * 2);
            const T* odx = off.chan(n, (g * KK + k) * 2 + 1);
            const T* m = msk.chan(n, g * KK + k);
            const T* dc = dcol.data() + ridx++ * size_t(rows) * wd;
            for (int oy = 0; oy < rows; ++oy) {
              const int y = y0 + oy;
              for (int xq = 0; xq < wd; ++xq) {
                const size_t pi = size_t(y) * wd + xq;
                const T gcol = dc[size_t(oy) * wd + xq];
                if (gcol == T(0)) continue;
                const auto s =
                    sample_zero(src, h, wd, T(y + ky) + ody[pi], T(xq + kx) + odx[pi]);
                const T mv = m[pi];
                if (x->requires_grad) {
                  T* gx = x->grad.chan(n, ci);
                  const T gm = gcol * mv;
                  if (s.v00) gx[size_t(s.y0) * wd + s.x0] += gm * s.w00;
                  if (s.v01) gx[size_t(s.y0) * wd + s.x0 + 1] += gm * s.w01;
                  if (s.v10) gx[size_t(s.y0 + 1) * wd + s.x0] += gm * s.w10;
                  if (s.v11) gx[size_t(s.y0 + 1) * wd + s.x0 + 1] += gm * s.w11;
                }
                if (offset->requires_grad) {
                  offset->grad.chan(n, (g * KK + k) * 2)[pi] += gcol * mv * s.dy;
                  offset->grad.chan(n, (g * KK + k) * 2 + 1)[pi] += gcol * mv * s.dx;
                }
                if (mask->requires_grad)
                  mask->grad.chan(n, g * KK + k)[pi] += gcol * s.value;
              }
            }
          }
        }
      }
      if (b && b->requires_grad)
        for (int co = 0; co < cout; ++co) {
          const T* g = self.grad.chan(n, co);
          T acc = 0;
          for (size_t i = 0, m2 = size_t(h) * wd; i < m2; ++i) acc += g[i];
          b->grad.v[co] += acc;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x->val;
  for (auto& v : out.v) v = std::max(v, T(0));
  add_flops(out.numel());
  return finish<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < x->grad.v.size(); ++i)
      if (x->val.v[i] > T(0)) x->grad.v[i] += self.grad.v[i];
  });
}

template <typename T>
Var<T> lrelu(const Var<T>& x, T slope) {
  Tensor<T> out = x->val;
  for (auto& v : out.v) v = v > T(0) ? v : slope * v;
  add_flops(out.numel());
  return finish<T>(std::move(out), {x}, [x, slope](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < x->grad.v.size(); ++i)
      x->grad.v[i] += self.grad.v[i] * (x->val.v[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x->val;
  for (auto& v : out.v) v = T(1) / (T(1) + std::exp(-v));
  add_flops(out.numel() * 4);
  auto result = finish<T>(std::move(out), {x}, nullptr);
  if (result->requires_grad) {
    // Capture the output value (weak via raw copy) for the derivative.
    Tensor<T> ov = result->val;
    result->backfn = [x, ov = std::move(ov)](Node<T>& self) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->grad.v.size(); ++i)
        x->grad.v[i] += self.grad.v[i] * ov.v[i] * (T(1) - ov.v[i]);
    };
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise / reductions

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinOp::Add); }
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinOp::Sub); }
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinOp::Mul); }

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x->val;
  for (auto& v : out.v) v *= s;
  add_flops(out.numel());
  return finish<T>(std::move(out), {x}, [x, s](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < x->grad.v.size(); ++i) x->grad.v[i] += self.grad.v[i] * s;
  });
}

template <typename T>
Var<T> softmax_n(const Var<T>& x) {
  const Tensor<T>& xt = x->val;
  Tensor<T> out(xt.n, xt.c, xt.h, xt.w);
  const size_t plane = size_t(xt.c) * xt.h * xt.w;
  for (size_t p = 0; p < plane; ++p) {
    T mx = xt.v[p];
    for (int i = 1; i < xt.n; ++i) mx = std::max(mx, xt.v[i * plane + p]);
    T sum = 0;
    for (int i = 0; i < xt.n; ++i) {
      const T e = std::exp(xt.v[i * plane + p] - mx);
      out.v[i * plane + p] = e;
      sum += e;
    }
    for (int i = 0; i < xt.n; ++i) out.v[i * plane + p] /= sum;
  }
  add_flops(out.numel() * 5);
  auto result = finish<T>(std::move(out), {x}, nullptr);
  if (result->requires_grad) {
    Tensor<T> ov = result->val;
    result->backfn = [x, ov = std::move(ov)](Node<T>& self) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      const size_t plane = size_t(ov.c) * ov.h * ov.w;
      for (size_t p = 0; p < plane; ++p) {
        T dot = 0;
        for (int i = 0; i < ov.n; ++i)
          dot += ov.v[i * plane + p] * self.grad.v[i * plane + p];
        for (int i = 0; i < ov.n; ++i)
          x->grad.v[i * plane + p] +=
              ov.v[i * plane + p] * (self.grad.v[i * plane + p] - dot);
      }
    };
  }
  return result;
}

template <typename T>
Var<T> sum_c(const Var<T>& x) {
  const Tensor<T>& xt = x->val;
  Tensor<T> out(xt.n, 1, xt.h, xt.w);
  for (int n = 0; n < xt.n; ++n)
    for (int j = 0; j < xt.c; ++j) {
      const T* src = xt.chan(n, j);
      T* dst = out.chan(n, 0);
      for (size_t i = 0, m = size_t(xt.h) * xt.w; i < m; ++i) dst[i] += src[i];
    }
  add_flops(xt.numel());
  return finish<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const Tensor<T>& xt = x->val;
    for (int n = 0; n < xt.n; ++n)
      for (int j = 0; j < xt.c; ++j) {
        T* dst = x->grad.chan(n, j);
        const T* g = self.grad.chan(n, 0);
        for (size_t i = 0, m = size_t(xt.h) * xt.w; i < m; ++i) dst[i] += g[i];
      }
  });
}

template <typename T>
Var<T> sum_n(const Var<T>& x) {
  const Tensor<T>& xt = x->val;
  Tensor<T> out(1, xt.c, xt.h, xt.w);
  const size_t plane = out.numel();
  for (int n = 0; n < xt.n; ++n)
    for (size_t i = 0; i < plane; ++i) out.v[i] += xt.v[n * plane + i];
  add_flops(xt.numel());
  return finish<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const size_t plane = self.grad.numel();
    for (int n = 0; n < x->val.n; ++n)
      for (size_t i = 0; i < plane; ++i) x->grad.v[n * plane + i] += self.grad.v[i];
  });
}

template <typename T>
Var<T> gap(const Var<T>& x) {
  const Tensor<T>& xt = x->val;
  Tensor<T> out(xt.n, xt.c, 1, 1);
  const size_t m = size_t(xt.h) * xt.w;
  for (int n = 0; n < xt.n; ++n)
    for (int j = 0; j < xt.c; ++j) {
      const T* src = xt.chan(n, j);
      T acc = 0;
      for (size_t i = 0; i < m; ++i) acc += src[i];
      out.at(n, j, 0, 0) = acc / T(m);
    }
  add_flops(xt.numel());
  return finish<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const Tensor<T>& xt = x->val;
    const size_t m = size_t(xt.h) * xt.w;
    for (int n = 0; n < xt.n; ++n)
      for (int j = 0; j < xt.c; ++j) {
        const T g = self.grad.at(n, j, 0, 0) / T(m);
        T* dst = x->grad.chan(n, j);
        for (size_t i = 0; i < m; ++i) dst[i] += g;
      }
  });
}

template <typename T>
Var<T> avgpool(const Var<T>& x, int k) {
  const Tensor<T>& xt = x->val;
  if (xt.h % k || xt.w % k) throw ShapeError("avgpool needs dims divisible by k");
  Tensor<T> out(xt.n, xt.c, xt.h / k, xt.w / k);
  const T inv = T(1) / T(k * k);
  for (int n = 0; n < xt.n; ++n)
    for (int j = 0; j < xt.c; ++j)
      for (int y = 0; y < out.h; ++y)
        for (int xq = 0; xq < out.w; ++xq) {
          T acc = 0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) acc += xt.at(n, j, y * k + dy, xq * k + dx);
          out.at(n, j, y, xq) = acc * inv;
        }
  add_flops(xt.numel());
  return finish<T>(std::move(out), {x}, [x, k](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const T inv = T(1) / T(k * k);
    for (int n = 0; n < self.grad.n; ++n)
      for (int j = 0; j < self.grad.c; ++j)
        for (int y = 0; y < self.grad.h; ++y)
          for (int xq = 0; xq < self.grad.w; ++xq) {
            const T g = self.grad.at(n, j, y, xq) * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                x->grad.at(n, j, y * k + dy, xq * k + dx) += g;
          }
  });
}

template <typename T>
Var<T> maxpool2(const Var<T>& x) {
  const Tensor<T>& xt = x->val;
  if (xt.h % 2 || xt.w % 2) throw ShapeError("maxpool2 needs even dims");
  Tensor<T> out(xt.n, xt.c, xt.h / 2, xt.w / 2);
  std::vector<uint8_t> arg(out.numel());
  size_t o = 0;
  for (int n = 0; n < xt.n; ++n)
    for (int j = 0; j < xt.c; ++j)
      for (int y = 0; y < out.h; ++y)
        for (int xq = 0; xq < out.w; ++xq, ++o) {
          T best = xt.at(n, j, 2 * y, 2 * xq);
          uint8_t bi = 0, i = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++i) {
              const T v = xt.at(n, j, 2 * y + dy, 2 * xq + dx);
              if (v > best) {
                best = v;
                bi = i;
              }
            }
          out.v[o] = best;
          arg[o] = bi;
        }
  add_flops(xt.numel());
  return finish<T>(std::move(out), {x}, [x, arg = std::move(arg)](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    size_t o = 0;
    for (int n = 0; n < self.grad.n; ++n)
      for (int j = 0; j < self.grad.c; ++j)
        for (int y = 0; y < self.grad.h; ++y)
          for (int xq = 0; xq < self.grad.w; ++xq, ++o)
            x->grad.at(n, j, 2 * y + arg[o] / 2, 2 * xq + arg[o] % 2) += self.grad.v[o];
  });
}

// ---------------------------------------------------------------------------
// Resampling / reshaping

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
  const Tensor<T>& xt = x->val;
  if (factor < 1) throw ShapeError("upsample factor must be >= 1");
  const int oh = xt.h * factor, ow = xt.w * factor;
  Tensor<T> out(xt.n, xt.c, oh, ow);

  // Per-axis taps are shared across rows/cols; precompute them.
  struct Tap {
    int i0, i1;
    T w1;
  };
  auto taps = [factor](int in, int on) {
    std::vector<Tap> t(on);
    for (int o = 0; o < on; ++o) {
      const double s = (o + 0.5) / factor - 0.5;
      const double f = std::floor(s);
      int i0 = int(f);
      T w1 = T(s - f);
      t[o] = {std::clamp(i0, 0, in - 1), std::clamp(i0 + 1, 0, in - 1), w1};
    }
    return t;
  };
  const auto ty = taps(xt.h, oh), tx = taps(xt.w, ow);
  for (int n = 0; n < xt.n; ++n)
    for (int j = 0; j < xt.c; ++j) {
      const T* src = xt.chan(n, j);
      T* dst = out.chan(n, j);
      for (int y = 0; y < oh; ++y) {
        const T* r0 = src + size_t(ty[y].i0) * xt.w;
        const T* r1 = src + size_t(ty[y].i1) * xt.w;
        const T wy = ty[y].w1;
        for (int xq = 0; xq < ow; ++xq) {
          const T wx = tx[xq].w1;
          const T a = r0[tx[xq].i0] * (1 - wx) + r0[tx[xq].i1] * wx;
          const T b2 = r1[tx[xq].i0] * (1 - wx) + r1[tx[xq].i1] * wx;
          *dst++ = a * (1 - wy) + b2 * wy;
        }
      }
    }
  add_flops(out.numel() * 8);
  return finish<T>(std::move(out), {x}, [x, factor](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const Tensor<T>& xt = x->val;
    const int oh = self.grad.h, ow = self.grad.w;
    for (int n = 0; n < xt.n; ++n)
      for (int j = 0; j < xt.c; ++j) {
        T* gx = x->grad.chan(n, j);
        const T* g = self.grad.chan(n, j);
        for (int y = 0; y < oh; ++y) {
          const double sy = (y + 0.5) / factor - 0.5;
          const double fy = std::floor(sy);
          const int y0 = std::clamp(int(fy), 0, xt.h - 1);
          const int y1 = std::clamp(int(fy) + 1, 0, xt.h - 1);
          const T wy = T(sy - fy);
          for (int xq = 0; xq < ow; ++xq) {
            const double sx = (xq + 0.5) / factor - 0.5;
            const double fx = std::floor(sx);
            const int x0 = std::clamp(int(fx), 0, xt.w - 1);
            const int x1 = std::clamp(int(fx) + 1, 0, xt.w - 1);
            const T wx = T(sx - fx);
            const T gv = g[size_t(y) * ow + xq];
            gx[size_t(y0) * xt.w + x0] += gv * (1 - wy) * (1 - wx);
            gx[size_t(y0) * xt.w + x1] += gv * (1 - wy) * wx;
            gx[size_t(y1) * xt.w + x0] += gv * wy * (1 - wx);
            gx[size_t(y1) * xt.w + x1] += gv * wy * wx;
          }
        }
      }
  });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  const Tensor<T>& xt = x->val;
  if (r < 1 || xt.c % (r * r)) throw ShapeError("pixel_shuffle channel mismatch");
  Tensor<T> out(xt.n, xt.c / (r * r), xt.h * r, xt.w * r);
  for (int n = 0; n < xt.n; ++n)
    for (int j = 0; j < out.c; ++j)
      for (int y = 0; y < out.h; ++y)
        for (int xq = 0; xq < out.w; ++xq)
          out.at(n, j, y, xq) =
              xt.at(n, j * r * r + (y % r) * r + (xq % r), y / r, xq / r);
  return finish<T>(std::move(out), {x}, [x, r](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int n = 0; n < self.grad.n; ++n)
      for (int j = 0; j < self.grad.c; ++j)
        for (int y = 0; y < self.grad.h; ++y)
          for (int xq = 0; xq < self.grad.w; ++xq)
            x->grad.at(n, j * r * r + (y % r) * r + (xq % r), y / r, xq / r) +=
                self.grad.at(n, j, y, xq);
  });
}

template <typename T>
Var<T> concat_n(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_n of nothing");
  int total = 0;
  for (const auto& v : xs) {
    if (v->val.c != xs[0]->val.c || v->val.h != xs[0]->val.h || v->val.w != xs[0]->val.w)
      throw ShapeError("concat_n shape mismatch");
    total += v->val.n;
  }
  Tensor<T> out(total, xs[0]->val.c, xs[0]->val.h, xs[0]->val.w);
  size_t o = 0;
  for (const auto& v : xs) {
    std::copy(v->val.v.begin(), v->val.v.end(), out.v.begin() + o);
    o += v->val.numel();
  }
  std::vector<Var<T>> parents(xs.begin(), xs.end());
  return finish<T>(std::move(out), std::move(parents), [xs](Node<T>& self) {
    size_t o = 0;
    for (const auto& v : xs) {
      if (v->requires_grad) {
        v->ensure_grad();
        for (size_t i = 0; i < v->grad.v.size(); ++i) v->grad.v[i] += self.grad.v[o + i];
      }
      o += v->val.numel();
    }
  });
}

template <typename T>
Var<T> concat_c(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_c of nothing");
  int total = 0;
  for (const auto& v : xs) {
    if (v->val.n != xs[0]->val.n || v->val.h != xs[0]->val.h || v->val.w != xs[0]->val.w)
      throw ShapeError("concat_c shape mismatch");
    total += v->val.c;
  }
  const int n = xs[0]->val.n, h = xs[0]->val.h, w = xs[0]->val.w;
  Tensor<T> out(n, total, h, w);
  for (int ni = 0; ni < n; ++ni) {
    int co = 0;
    for (const auto& v : xs)
      for (int j = 0; j < v->val.c; ++j, ++co)
        std::copy(v->val.chan(ni, j), v->val.chan(ni, j) + size_t(h) * w,
                  out.chan(ni, co));
  }
  std::vector<Var<T>> parents(xs.begin(), xs.end());
  return finish<T>(std::move(out), std::move(parents), [xs, h, w, n](Node<T>& self) {
    for (int ni = 0; ni < n; ++ni) {
      int co = 0;
      for (const auto& v : xs) {
        if (v->requires_grad) v->ensure_grad();
        for (int j = 0; j < v->val.c; ++j, ++co) {
          if (!v->requires_grad) continue;
          const T* g = self.grad.chan(ni, co);
          T* dst = v->grad.chan(ni, j);
          for (size_t i = 0, m = size_t(h) * w; i < m; ++i) dst[i] += g[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> slice_n(const Var<T>& x, int start, int len) {
  const Tensor<T>& xt = x->val;
  if (start < 0 || len < 1 || start + len > xt.n) throw BoundsError("slice_n range");
  Tensor<T> out(len, xt.c, xt.h, xt.w);
  const size_t plane = size_t(xt.c) * xt.h * xt.w;
  std::copy(xt.v.begin() + start * plane, xt.v.begin() + (start + len) * plane,
            out.v.begin());
  return finish<T>(std::move(out), {x}, [x, start](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const size_t plane = size_t(x->val.c) * x->val.h * x->val.w;
    for (size_t i = 0; i < self.grad.v.size(); ++i)
      x->grad.v[start * plane + i] += self.grad.v[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, int n, int c, int h, int w) {
  if (size_t(n) * c * h * w != x->val.numel()) throw ShapeError("reshape numel mismatch");
  Tensor<T> out(n, c, h, w);
  out.v = x->val.v;
  return finish<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < self.grad.v.size(); ++i) x->grad.v[i] += self.grad.v[i];
  });
}

template <typename T>
Var<T> channel_linear(const Var<T>& x, const std::array<double, 9>& m) {
  const Tensor<T>& xt = x->val;
  if (xt.c != 3) throw ShapeError("channel_linear expects 3 channels");
  Tensor<T> out(xt.n, 3, xt.h, xt.w);
  const size_t plane = size_t(xt.h) * xt.w;
  for (int n = 0; n < xt.n; ++n)
    for (size_t i = 0; i < plane; ++i) {
      const T r = xt.chan(n, 0)[i], g = xt.chan(n, 1)[i], b = xt.chan(n, 2)[i];
      for (int c = 0; c < 3; ++c)
        out.chan(n, c)[i] = T(m[c * 3] * r + m[c * 3 + 1] * g + m[c * 3 + 2] * b);
    }
  add_flops(out.numel() * 3);
  return finish<T>(std::move(out), {x}, [x, m](Node<T>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const size_t plane = size_t(x->val.h) * x->val.w;
    for (int n = 0; n < x->val.n; ++n)
      for (size_t i = 0; i < plane; ++i)
        for (int k = 0; k < 3; ++k) {
          T acc = 0;
          for (int c = 0; c < 3; ++c)
            acc += T(m[c * 3 + k]) * self.grad.chan(n, c)[i];
          x->grad.chan(n, k)[i] += acc;
        }
  });
}

template <typename T>
Var<T> charbonnier_loss(const Var<T>& pred, const Tensor<T>& target, double eps) {
  if (!pred->val.same_shape(target))
    throw ShapeError("charbonnier_loss shape mismatch " + pred->val.shape_str() +
                     " vs " + target.shape_str());
  Tensor<T> out(1, 1, 1, 1);
  double acc = 0;
  for (size_t i = 0; i < target.numel(); ++i) {
    const double d = double(pred->val.v[i]) - double(target.v[i]);
    acc += std::sqrt(d * d + eps);
  }
  out.v[0] = T(acc / double(target.numel()));
  add_flops(target.numel() * 3);
  return finish<T>(std::move(out), {pred}, [pred, target, eps](Node<T>& self) {
    if (!pred->requires_grad) return;
    pred->ensure_grad();
    const T g = self.grad.v[0] / T(target.numel());
    for (size_t i = 0; i < target.numel(); ++i) {
      const double d = double(pred->val.v[i]) - double(target.v[i]);
      pred->grad.v[i] += g * T(d / std::sqrt(d * d + eps));
    }
  });
}

// ---------------------------------------------------------------------------

#define RAWVSR_INSTANTIATE_OPS(T)                                                       \
  template Var<T> make_var<T>(Tensor<T>, bool);                                         \
  template Var<T> make_const<T>(Tensor<T>);                                             \
  template void backward<T>(const Var<T>&);                                             \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);     \
  template Var<T> deform_conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&,         \
                                   const Var<T>&, const Var<T>&, int);                  \
  template Var<T> relu<T>(const Var<T>&);                                               \
  template Var<T> lrelu<T>(const Var<T>&, T);                                           \
  template Var<T> sigmoid<T>(const Var<T>&);                                            \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> scale<T>(const Var<T>&, T);                                           \
  template Var<T> softmax_n<T>(const Var<T>&);                                          \
  template Var<T> sum_c<T>(const Var<T>&);                                              \
  template Var<T> sum_n<T>(const Var<T>&);                                              \
  template Var<T> gap<T>(const Var<T>&);                                                \
  template Var<T> avgpool<T>(const Var<T>&, int);                                       \
  template Var<T> maxpool2<T>(const Var<T>&);                                           \
  template Var<T> upsample_bilinear<T>(const Var<T>&, int);                             \
  template Var<T> pixel_shuffle<T>(const Var<T>&, int);                                 \
  template Var<T> concat_n<T>(const std::vector<Var<T>>&);                              \
  template Var<T> concat_c<T>(const std::vector<Var<T>>&);                              \
  template Var<T> slice_n<T>(const Var<T>&, int, int);                                  \
  template Var<T> reshape<T>(const Var<T>&, int, int, int, int);                        \
  template Var<T> channel_linear<T>(const Var<T>&, const std::array<double, 9>&);       \
  template Var<T> charbonnier_loss<T>(const Var<T>&, const Tensor<T>&, double);

RAWVSR_INSTANTIATE_OPS(float)
RAWVSR_INSTANTIATE_OPS(double)

}  // namespace rawvsr::nn
