#include "mast/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <sstream>

namespace mast {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

CMap map(const Tensor& t) { return CMap(t.data.data(), t.rows(), t.cols()); }
CMap map(const std::vector<double>& d, int r, int c) { return CMap(d.data(), r, c); }
MMap map(std::vector<double>& d, int r, int c) { return MMap(d.data(), r, c); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double gelu_deriv(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "[" << t.rows() << "," << t.cols() << "]";
  return os.str();
}

int Tape::record(std::vector<int> parents, const Tensor& out,
                 std::function<void(Tape&, const std::vector<double>&)> back) {
  Node n;
  n.parents = std::move(parents);
  n.out_shape = out.shape;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buf(int node) {
  if (grads_[node].empty())
    grads_[node].assign(size_t(nodes_[node].out_shape[0]) * nodes_[node].out_shape[1], 0.0);
  return grads_[node];
}

Tensor Tape::leaf(const Tensor& value) {
  Tensor out = value;
  out.node = record({}, out, nullptr);
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dims differ " + shape_str(a) + " vs " + shape_str(b));
  Tensor out(a.rows(), b.cols());
  map(out.data, out.rows(), out.cols()).noalias() = map(a) * map(b);
  if (a.tracked() || b.tracked()) {
    out.node = record({a.node, b.node}, out,
                      [a, b](Tape& t, const std::vector<double>& g) {
                        CMap gm(g.data(), a.rows(), b.cols());
                        if (a.tracked())
                          map(t.grad_buf(a.node), a.rows(), a.cols()).noalias() += gm * map(b).transpose();
                        if (b.tracked())
                          map(t.grad_buf(b.node), b.rows(), b.cols()).noalias() += map(a).transpose() * gm;
                      });
  }
  return out;
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: inner dims differ " + shape_str(a) + " vs " + shape_str(b));
  Tensor out(a.rows(), b.rows());
  map(out.data, out.rows(), out.cols()).noalias() = map(a) * map(b).transpose();
  if (a.tracked() || b.tracked()) {
    out.node = record({a.node, b.node}, out,
                      [a, b](Tape& t, const std::vector<double>& g) {
                        CMap gm(g.data(), a.rows(), b.rows());
                        if (a.tracked())
                          map(t.grad_buf(a.node), a.rows(), a.cols()).noalias() += gm * map(b);
                        if (b.tracked())
                          map(t.grad_buf(b.node), b.rows(), b.cols()).noalias() += gm.transpose() * map(a);
                      });
  }
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = a;
  out.node = -1;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  if (a.tracked() || b.tracked()) {
    int an = a.node, bn = b.node;
    out.node = record({an, bn}, out, [an, bn](Tape& t, const std::vector<double>& g) {
      if (an >= 0) {
        auto& ga = t.grad_buf(an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_buf(bn);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a;
  out.node = -1;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  if (a.tracked() || b.tracked()) {
    int an = a.node, bn = b.node;
    out.node = record({an, bn}, out, [an, bn](Tape& t, const std::vector<double>& g) {
      if (an >= 0) {
        auto& ga = t.grad_buf(an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_buf(bn);
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a;
  out.node = -1;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  if (a.tracked() || b.tracked()) {
    out.node = record({a.node, b.node}, out, [a, b](Tape& t, const std::vector<double>& g) {
      if (a.tracked()) {
        auto& ga = t.grad_buf(a.node);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data[i];
      }
      if (b.tracked()) {
        auto& gb = t.grad_buf(b.node);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data[i];
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double s) {
  Tensor out = a;
  out.node = -1;
  for (double& v : out.data) v *= s;
  if (a.tracked()) {
    int an = a.node;
    out.node = record({an}, out, [an, s](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(an);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

Tensor Tape::add_rowvec(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw ShapeError("add_rowvec: " + shape_str(x) + " vs " + shape_str(row));
  Tensor out = x;
  out.node = -1;
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) out.at(r, c) += row.at(0, c);
  if (x.tracked() || row.tracked()) {
    int xn = x.node, rn = row.node;
    int rows = x.rows(), cols = x.cols();
    out.node = record({xn, rn}, out, [xn, rn, rows, cols](Tape& t, const std::vector<double>& g) {
      if (xn >= 0) {
        auto& gx = t.grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (rn >= 0) {
        auto& gr = t.grad_buf(rn);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) gr[c] += g[size_t(r) * cols + c];
      }
    });
  }
  return out;
}

Tensor Tape::softmax_rows(const Tensor& x) {
  return softmax_rows_masked(x, std::vector<uint8_t>(x.size(), 1));
}

Tensor Tape::softmax_rows_masked(const Tensor& x, const std::vector<uint8_t>& mask) {
  if (mask.size() != x.size()) throw ShapeError("softmax mask size mismatch");
  Tensor out(x.rows(), x.cols());
  const int R = x.rows(), C = x.cols();
  for (int r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c)
      if (mask[size_t(r) * C + c] && x.at(r, c) > mx) mx = x.at(r, c);
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      if (!mask[size_t(r) * C + c]) continue;
      double e = std::exp(x.at(r, c) - mx);
      out.at(r, c) = e;
      z += e;
    }
    for (int c = 0; c < C; ++c)
      if (mask[size_t(r) * C + c]) out.at(r, c) /= z;
  }
  if (x.tracked()) {
    int xn = x.node;
    std::vector<double> p = out.data;
    std::vector<uint8_t> m = mask;
    out.node = record({xn}, out, [xn, p, m, R, C](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buf(xn);
      for (int r = 0; r < R; ++r) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) {
          size_t i = size_t(r) * C + c;
          if (m[i]) dot += p[i] * g[i];
        }
        for (int c = 0; c < C; ++c) {
          size_t i = size_t(r) * C + c;
          if (m[i]) gx[i] += p[i] * (g[i] - dot);
        }
      }
    });
  }
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const int R = x.rows(), C = x.cols();
  if (gain.rows() != 1 || gain.cols() != C || bias.rows() != 1 || bias.cols() != C)
    throw ShapeError("layer_norm: gain/bias must be [1," + std::to_string(C) + "]");
  Tensor out(R, C);
  std::vector<double> xhat(size_t(R) * C), inv_std(R);
  for (int r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += x.at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      double d = x.at(r, c) - mean;
      var += d * d;
    }
    var /= C;
    double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = is;
    for (int c = 0; c < C; ++c) {
      double h = (x.at(r, c) - mean) * is;
      xhat[size_t(r) * C + c] = h;
      out.at(r, c) = h * gain.at(0, c) + bias.at(0, c);
    }
  }
  if (x.tracked() || gain.tracked() || bias.tracked()) {
    int xn = x.node, gn = gain.node, bn = bias.node;
    std::vector<double> gv = gain.data;
    out.node = record({xn, gn, bn}, out,
                      [xn, gn, bn, gv, xhat, inv_std, R, C](Tape& t, const std::vector<double>& g) {
                        if (gn >= 0) {
                          auto& gg = t.grad_buf(gn);
                          for (int r = 0; r < R; ++r)
                            for (int c = 0; c < C; ++c) gg[c] += g[size_t(r) * C + c] * xhat[size_t(r) * C + c];
                        }
                        if (bn >= 0) {
                          auto& gb = t.grad_buf(bn);
                          for (int r = 0; r < R; ++r)
                            for (int c = 0; c < C; ++c) gb[c] += g[size_t(r) * C + c];
                        }
                        if (xn >= 0) {
                          auto& gx = t.grad_buf(xn);
                          for (int r = 0; r < R; ++r) {
                            double sum_dy = 0.0, sum_dy_h = 0.0;
                            for (int c = 0; c < C; ++c) {
                              size_t i = size_t(r) * C + c;
                              double dy = g[i] * gv[c];
                              sum_dy += dy;
                              sum_dy_h += dy * xhat[i];
                            }
                            for (int c = 0; c < C; ++c) {
                              size_t i = size_t(r) * C + c;
                              double dy = g[i] * gv[c];
                              gx[i] += inv_std[r] * (dy - sum_dy / C - xhat[i] * sum_dy_h / C);
                            }
                          }
                        }
                      });
  }
  return out;
}

Tensor Tape::gelu(const Tensor& x) {
  Tensor out = x;
  out.node = -1;
  for (double& v : out.data) v = gelu_fwd(v);
  if (x.tracked()) {
    int xn = x.node;
    std::vector<double> xin = x.data;
    out.node = record({xn}, out, [xn, xin](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buf(xn);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_deriv(xin[i]);
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  Tensor out = Tensor::scalar(std::accumulate(x.data.begin(), x.data.end(), 0.0));
  if (x.tracked()) {
    int xn = x.node;
    out.node = record({xn}, out, [xn](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buf(xn);
      for (double& v : gx) v += g[0];
    });
  }
  return out;
}

Tensor Tape::mean_rows(const Tensor& x) {
  const int R = x.rows(), C = x.cols();
  Tensor out(1, C);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.at(0, c) += x.at(r, c) / R;
  if (x.tracked()) {
    int xn = x.node;
    out.node = record({xn}, out, [xn, R, C](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buf(xn);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) gx[size_t(r) * C + c] += g[c] / R;
    });
  }
  return out;
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty");
  const int C = parts[0].cols();
  int R = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    if (p.cols() != C) throw ShapeError("concat_rows: column mismatch");
    R += p.rows();
    any_tracked = any_tracked || p.tracked();
  }
  Tensor out(R, C);
  int r0 = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + size_t(r0) * C);
    r0 += p.rows();
  }
  if (any_tracked) {
    std::vector<int> ids, row_counts;
    for (const Tensor& p : parts) {
      ids.push_back(p.node);
      row_counts.push_back(p.rows());
    }
    out.node = record(ids, out, [ids, row_counts, C](Tape& t, const std::vector<double>& g) {
      int r0 = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] >= 0) {
          auto& gp = t.grad_buf(ids[k]);
          for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[size_t(r0) * C + i];
        }
        r0 += row_counts[k];
      }
    });
  }
  return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty");
  const int R = parts[0].rows();
  int C = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    if (p.rows() != R) throw ShapeError("concat_cols: row mismatch");
    C += p.cols();
    any_tracked = any_tracked || p.tracked();
  }
  Tensor out(R, C);
  int c0 = 0;
  for (const Tensor& p : parts) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < p.cols(); ++c) out.at(r, c0 + c) = p.at(r, c);
    c0 += p.cols();
  }
  if (any_tracked) {
    std::vector<int> ids, col_counts;
    for (const Tensor& p : parts) {
      ids.push_back(p.node);
      col_counts.push_back(p.cols());
    }
    out.node = record(ids, out, [ids, col_counts, R, C](Tape& t, const std::vector<double>& g) {
      int c0 = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        int pc = col_counts[k];
        if (ids[k] >= 0) {
          auto& gp = t.grad_buf(ids[k]);
          for (int r = 0; r < R; ++r)
            for (int c = 0; c < pc; ++c) gp[size_t(r) * pc + c] += g[size_t(r) * C + c0 + c];
        }
        c0 += pc;
      }
    });
  }
  return out;
}

Tensor Tape::slice_rows(const Tensor& x, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > x.rows())
    throw ShapeError("slice_rows out of range on " + shape_str(x));
  const int C = x.cols();
  Tensor out(count, C);
  std::copy(x.data.begin() + size_t(begin) * C, x.data.begin() + size_t(begin + count) * C,
            out.data.begin());
  if (x.tracked()) {
    int xn = x.node;
    out.node = record({xn}, out, [xn, begin, C](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buf(xn);
      for (size_t i = 0; i < g.size(); ++i) gx[size_t(begin) * C + i] += g[i];
    });
  }
  return out;
}

Tensor Tape::slice_cols(const Tensor& x, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > x.cols())
    throw ShapeError("slice_cols out of range on " + shape_str(x));
  const int R = x.rows(), C = x.cols();
  Tensor out(R, count);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < count; ++c) out.at(r, c) = x.at(r, begin + c);
  if (x.tracked()) {
    int xn = x.node;
    out.node = record({xn}, out, [xn, begin, count, R, C](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buf(xn);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < count; ++c) gx[size_t(r) * C + begin + c] += g[size_t(r) * count + c];
    });
  }
  return out;
}

Tensor Tape::element(const Tensor& x, int r, int c) {
  if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols())
    throw ShapeError("element out of range on " + shape_str(x));
  Tensor out = Tensor::scalar(x.at(r, c));
  if (x.tracked()) {
    int xn = x.node;
    size_t idx = size_t(r) * x.cols() + c;
    out.node = record({xn}, out, [xn, idx](Tape& t, const std::vector<double>& g) {
      t.grad_buf(xn)[idx] += g[0];
    });
  }
  return out;
}

Tensor Tape::log_clamped(const Tensor& x) {
  Tensor out = x;
  out.node = -1;
  for (double& v : out.data) v = std::log(v < kLogFloor ? kLogFloor : v);
  if (x.tracked()) {
    int xn = x.node;
    std::vector<double> xin = x.data;
    out.node = record({xn}, out, [xn, xin](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buf(xn);
      for (size_t i = 0; i < g.size(); ++i)
        if (xin[i] >= kLogFloor) gx[i] += g[i] / xin[i];
    });
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked()) throw std::invalid_argument("backward: loss is not tracked");
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  grads_.assign(nodes_.size(), {});
  grad_buf(loss.node)[0] = 1.0;
  for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
    if (grads_[i].empty() || !nodes_[i].back) continue;
    nodes_[i].back(*this, grads_[i]);
  }
  swept_ = true;
}

Tensor Tape::grad(const Tensor& t) const {
  if (!t.tracked()) throw std::invalid_argument("grad: tensor is not tracked");
  if (!swept_) throw std::logic_error("grad: call backward first");
  Tensor g(t.rows(), t.cols());
  if (!grads_[t.node].empty()) g.data = grads_[t.node];
  return g;
}

void adam_step(ParamMap& params, const GradMap& grads, AdamState& state) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (!g.same_shape(p))
      throw ShapeError("adam_step: grad shape " + shape_str(g) + " != param shape " +
                       shape_str(p) + " for " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.size(), 0.0);
    if (v.empty()) v.assign(p.size(), 0.0);
    for (size_t i = 0; i < p.data.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g.data[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace mast
