#include "adapnet/autodiff.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace adapnet::ad {

int Tape::add(Mat value, std::function<void(Tape&)> backward) {
  nodes_.push_back(Node{std::move(value), Mat(), std::move(backward)});
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad(root.id)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this);
  }
}

void Tape::clear() { nodes_.clear(); }

namespace {

// Creates the output node, then wires a backward fn that can see its id.
template <typename Fn>
Var unary(Var a, Mat value, Fn df) {
  Tape& t = *a.tape;
  int ia = a.id;
  int io = t.add(std::move(value), nullptr);
  t.set_backward(io, [ia, io, df](Tape& tp) {
    df(tp, tp.grad(io), tp.grad(ia));
  });
  return Var{&t, io};
}

}  // namespace

void Tape::set_backward(int id, std::function<void(Tape&)> backward) {
  nodes_[id].backward = std::move(backward);
}

Var leaf(Tape& t, Mat value) { return Var{&t, t.add(std::move(value))}; }

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  int io = t.add(t.value(ia) + t.value(ib));
  t.set_backward(io, [ia, ib, io](Tape& tp) {
    tp.grad(ia) += tp.grad(io);
    tp.grad(ib) += tp.grad(io);
  });
  return Var{&t, io};
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  int io = t.add(t.value(ia) - t.value(ib));
  t.set_backward(io, [ia, ib, io](Tape& tp) {
    tp.grad(ia) += tp.grad(io);
    tp.grad(ib) -= tp.grad(io);
  });
  return Var{&t, io};
}

Var cmul(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  int io = t.add(t.value(ia).cwiseProduct(t.value(ib)));
  t.set_backward(io, [ia, ib, io](Tape& tp) {
    tp.grad(ia) += tp.grad(io).cwiseProduct(tp.value(ib));
    tp.grad(ib) += tp.grad(io).cwiseProduct(tp.value(ia));
  });
  return Var{&t, io};
}

Var scale(Var a, double c) {
  return unary(a, a.tape->value(a) * c,
               [c](Tape&, const Mat& go, Mat& ga) { ga += c * go; });
}

Var add_scalar(Var a, double c) {
  return unary(a, (a.tape->value(a).array() + c).matrix(),
               [](Tape&, const Mat& go, Mat& ga) { ga += go; });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  if (t.value(ia).cols() != t.value(ib).rows())
    throw std::invalid_argument("matmul: inner dimensions disagree");
  int io = t.add(t.value(ia) * t.value(ib));
  t.set_backward(io, [ia, ib, io](Tape& tp) {
    tp.grad(ia) += tp.grad(io) * tp.value(ib).transpose();
    tp.grad(ib) += tp.value(ia).transpose() * tp.grad(io);
  });
  return Var{&t, io};
}

Var transpose(Var a) {
  return unary(a, a.tape->value(a).transpose(),
               [](Tape&, const Mat& go, Mat& ga) { ga += go.transpose(); });
}

Var vstack(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  const Mat& va = t.value(ia);
  const Mat& vb = t.value(ib);
  if (va.cols() != vb.cols())
    throw std::invalid_argument("vstack: column counts disagree");
  const long ra = va.rows(), rb = vb.rows();
  Mat out(ra + rb, va.cols());
  out.topRows(ra) = va;
  out.bottomRows(rb) = vb;
  int io = t.add(std::move(out));
  t.set_backward(io, [ia, ib, io, ra, rb](Tape& tp) {
    tp.grad(ia) += tp.grad(io).topRows(ra);
    tp.grad(ib) += tp.grad(io).bottomRows(rb);
  });
  return Var{&t, io};
}

Var tanh_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  int io = t.add(t.value(ia).array().tanh().matrix());
  t.set_backward(io, [ia, io](Tape& tp) {
    const Mat& y = tp.value(io);
    tp.grad(ia) +=
        tp.grad(io).cwiseProduct((1.0 - y.array().square()).matrix());
  });
  return Var{&t, io};
}

Var sigmoid_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat y = (1.0 / (1.0 + (-t.value(ia)).array().exp())).matrix();
  int io = t.add(std::move(y));
  t.set_backward(io, [ia, io](Tape& tp) {
    const Mat& s = tp.value(io);
    tp.grad(ia) +=
        tp.grad(io).cwiseProduct((s.array() * (1.0 - s.array())).matrix());
  });
  return Var{&t, io};
}

Var log_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  if ((t.value(ia).array() <= 0.0).any())
    throw std::domain_error("log_: non-positive entry");
  int io = t.add(t.value(ia).array().log().matrix());
  t.set_backward(io, [ia, io](Tape& tp) {
    tp.grad(ia) += tp.grad(io).cwiseQuotient(tp.value(ia));
  });
  return Var{&t, io};
}

Var log_guarded(Var a, double eps) {
  Tape& t = *a.tape;
  int ia = a.id;
  int io = t.add((t.value(ia).array() + eps).log().matrix());
  t.set_backward(io, [ia, io, eps](Tape& tp) {
    tp.grad(ia) += (tp.grad(io).array() / (tp.value(ia).array() + eps)).matrix();
  });
  return Var{&t, io};
}

Var softmax_vec(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  const Mat& x = t.value(ia);
  Mat e = (x.array() - x.maxCoeff()).exp().matrix();
  Mat y = e / e.sum();
  int io = t.add(std::move(y));
  t.set_backward(io, [ia, io](Tape& tp) {
    const Mat& s = tp.value(io);
    const Mat& go = tp.grad(io);
    double inner = (go.array() * s.array()).sum();
    tp.grad(ia) += (s.array() * (go.array() - inner)).matrix();
  });
  return Var{&t, io};
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = t.value(ia).sum();
  int io = t.add(std::move(y));
  t.set_backward(io, [ia, io](Tape& tp) {
    tp.grad(ia).array() += tp.grad(io)(0, 0);
  });
  return Var{&t, io};
}

Var dot(Var a, Var b) { return sum_all(cmul(a, b)); }

Var sqnorm(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = t.value(ia).squaredNorm();
  int io = t.add(std::move(y));
  t.set_backward(io, [ia, io](Tape& tp) {
    tp.grad(ia) += 2.0 * tp.grad(io)(0, 0) * tp.value(ia);
  });
  return Var{&t, io};
}

Var add_col_broadcast(Var x, Var bias) {
  Tape& t = *x.tape;
  int ix = x.id, ib = bias.id;
  const Mat& vx = t.value(ix);
  const Mat& vb = t.value(ib);
  if (vb.cols() != 1 || vb.rows() != vx.rows())
    throw std::invalid_argument("add_col_broadcast: bias shape mismatch");
  int io = t.add(vx.colwise() + vb.col(0));
  t.set_backward(io, [ix, ib, io](Tape& tp) {
    tp.grad(ix) += tp.grad(io);
    tp.grad(ib) += tp.grad(io).rowwise().sum();
  });
  return Var{&t, io};
}

Var conv1d_same(Var x, Var w, Var bias, int k) {
  Tape& t = *x.tape;
  int ix = x.id, iw = w.id, ib = bias.id;
  const Mat& vx = t.value(ix);
  const Mat& vw = t.value(iw);
  const long cin = vx.rows(), m = vx.cols();
  const long cout = vw.rows();
  if (vw.cols() != cin * k)
    throw std::invalid_argument("conv1d_same: kernel shape mismatch");
  const int pad = k / 2;
  Mat out = t.value(ib).col(0).replicate(1, m);
  for (int tap = 0; tap < k; ++tap) {
    const auto wt = vw.middleCols(tap * cin, cin);
    for (long j = 0; j < m; ++j) {
      long src = j + tap - pad;
      if (src >= 0 && src < m) out.col(j) += wt * vx.col(src);
    }
  }
  int io = t.add(std::move(out));
  t.set_backward(io, [ix, iw, ib, io, k, pad, cin, m](Tape& tp) {
    const Mat& go = tp.grad(io);
    const Mat& vx2 = tp.value(ix);
    const Mat& vw2 = tp.value(iw);
    Mat& gx = tp.grad(ix);
    Mat& gw = tp.grad(iw);
    tp.grad(ib) += go.rowwise().sum();
    for (int tap = 0; tap < k; ++tap) {
      const auto wt = vw2.middleCols(tap * cin, cin);
      auto gwt = gw.middleCols(tap * cin, cin);
      for (long j = 0; j < m; ++j) {
        long src = j + tap - pad;
        if (src < 0 || src >= m) continue;
        gx.col(src) += wt.transpose() * go.col(j);
        gwt += go.col(j) * vx2.col(src).transpose();
      }
    }
  });
  return Var{&t, io};
}

Var conv1d_stride2(Var x, Var w, Var bias, int k) {
  Tape& t = *x.tape;
  int ix = x.id, iw = w.id, ib = bias.id;
  const Mat& vx = t.value(ix);
  const Mat& vw = t.value(iw);
  const long cin = vx.rows(), m = vx.cols();
  if (vw.cols() != cin * k)
    throw std::invalid_argument("conv1d_stride2: kernel shape mismatch");
  const int pad = k / 2;
  const long mo = (m + 1) / 2;
  Mat out = t.value(ib).col(0).replicate(1, mo);
  for (int tap = 0; tap < k; ++tap) {
    const auto wt = vw.middleCols(tap * cin, cin);
    for (long j = 0; j < mo; ++j) {
      long src = 2 * j + tap - pad;
      if (src >= 0 && src < m) out.col(j) += wt * vx.col(src);
    }
  }
  int io = t.add(std::move(out));
  t.set_backward(io, [ix, iw, ib, io, k, pad, cin, m, mo](Tape& tp) {
    const Mat& go = tp.grad(io);
    const Mat& vx2 = tp.value(ix);
    const Mat& vw2 = tp.value(iw);
    Mat& gx = tp.grad(ix);
    Mat& gw = tp.grad(iw);
    tp.grad(ib) += go.rowwise().sum();
    for (int tap = 0; tap < k; ++tap) {
      const auto wt = vw2.middleCols(tap * cin, cin);
      auto gwt = gw.middleCols(tap * cin, cin);
      for (long j = 0; j < mo; ++j) {
        long src = 2 * j + tap - pad;
        if (src < 0 || src >= m) continue;
        gx.col(src) += wt.transpose() * go.col(j);
        gwt += go.col(j) * vx2.col(src).transpose();
      }
    }
  });
  return Var{&t, io};
}

Var maxpool1d_same(Var x, int window) {
  if (window < 1 || window % 2 == 0)
    throw std::invalid_argument("maxpool1d_same: window must be odd, >= 1");
  Tape& t = *x.tape;
  int ix = x.id;
  const Mat& vx = t.value(ix);
  const long n = vx.rows(), m = vx.cols();
  const int half = window / 2;
  Mat out(n, m);
  // argmax column per (row, output col); first max wins on ties
  auto arg = std::make_shared<Eigen::MatrixXi>(n, m);
  for (long j = 0; j < m; ++j) {
    long lo = std::max<long>(0, j - half);
    long hi = std::min<long>(m - 1, j + half);
    for (long i = 0; i < n; ++i) {
      long best = lo;
      for (long c = lo + 1; c <= hi; ++c)
        if (vx(i, c) > vx(i, best)) best = c;
      out(i, j) = vx(i, best);
      (*arg)(i, j) = static_cast<int>(best);
    }
  }
  int io = t.add(std::move(out));
  t.set_backward(io, [ix, io, arg, n, m](Tape& tp) {
    const Mat& go = tp.grad(io);
    Mat& gx = tp.grad(ix);
    for (long j = 0; j < m; ++j)
      for (long i = 0; i < n; ++i) gx(i, (*arg)(i, j)) += go(i, j);
  });
  return Var{&t, io};
}

Var upsample2_crop(Var x, int target_cols) {
  Tape& t = *x.tape;
  int ix = x.id;
  const Mat& vx = t.value(ix);
  if (2 * vx.cols() < target_cols)
    throw std::invalid_argument("upsample2_crop: input too short for target");
  Mat out(vx.rows(), target_cols);
  for (int j = 0; j < target_cols; ++j) out.col(j) = vx.col(j / 2);
  int io = t.add(std::move(out));
  t.set_backward(io, [ix, io, target_cols](Tape& tp) {
    const Mat& go = tp.grad(io);
    Mat& gx = tp.grad(ix);
    for (int j = 0; j < target_cols; ++j) gx.col(j / 2) += go.col(j);
  });
  return Var{&t, io};
}

double scalar(Var v) {
  const Mat& m = v.tape->value(v);
  if (m.size() != 1) throw std::invalid_argument("scalar: not a 1x1 node");
  return m(0, 0);
}

}  // namespace adapnet::ad
