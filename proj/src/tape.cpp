#include "popgrad/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include "popgrad/errors.hpp"

namespace popgrad {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatR>;
using CMapM = Eigen::Map<const MatR>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

// Expand one [C,H,W] image into [C*9, H*W] patch columns for a 3x3 kernel
// with zero padding 1.
void im2col_3x3(const double* x, std::size_t c_count, std::size_t h, std::size_t w,
                double* cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < c_count; ++c) {
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        double* row = cols + (c * 9 + static_cast<std::size_t>((di + 1) * 3 + (dj + 1))) * hw;
        const double* img = x + c * hw;
        for (std::size_t i = 0; i < h; ++i) {
          const long si = static_cast<long>(i) + di;
          if (si < 0 || si >= static_cast<long>(h)) {
            std::fill(row + i * w, row + (i + 1) * w, 0.0);
            continue;
          }
          for (std::size_t j = 0; j < w; ++j) {
            const long sj = static_cast<long>(j) + dj;
            row[i * w + j] =
                (sj < 0 || sj >= static_cast<long>(w)) ? 0.0 : img[static_cast<std::size_t>(si) * w + sj];
          }
        }
      }
    }
  }
}

// Scatter-add of patch-column gradients back onto the [C,H,W] image.
void col2im_3x3(const double* cols, std::size_t c_count, std::size_t h, std::size_t w,
                double* dx) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < c_count; ++c) {
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const double* row = cols + (c * 9 + static_cast<std::size_t>((di + 1) * 3 + (dj + 1))) * hw;
        double* img = dx + c * hw;
        for (std::size_t i = 0; i < h; ++i) {
          const long si = static_cast<long>(i) + di;
          if (si < 0 || si >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < w; ++j) {
            const long sj = static_cast<long>(j) + dj;
            if (sj < 0 || sj >= static_cast<long>(w)) continue;
            img[static_cast<std::size_t>(si) * w + sj] += row[i * w + j];
          }
        }
      }
    }
  }
}

}  // namespace

ValueId Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return ValueId{nodes_.size() - 1};
}

ValueId Tape::input(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

Tensor& Tape::grad_buffer(ValueId id) {
  Node& node = nodes_[id.index];
  if (!node.grad_live) {
    node.grad = Tensor::zeros(node.value.shape);
    node.grad_live = true;
  }
  return node.grad;
}

void Tape::accumulate(ValueId id, const Tensor& contribution) {
  Node& node = nodes_[id.index];
  if (!node.needs_grad) return;
  Tensor& g = grad_buffer(id);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += contribution.data[i];
}

double Tape::scalar(ValueId id) const {
  const Tensor& v = nodes_[id.index].value;
  if (v.size() != 1) throw UsageError("expected scalar tape value");
  return v.data[0];
}

const Tensor& Tape::grad(ValueId id) const {
  const Node& node = nodes_[id.index];
  if (!node.grad_live) throw UsageError("gradient not computed for this value");
  return node.grad;
}

void Tape::backward(ValueId root) {
  if (backward_done_) throw UsageError("backward may run once per tape");
  const Node& root_node = nodes_[root.index];
  if (root_node.value.size() != 1) throw UsageError("backward requires a scalar root");
  backward_done_ = true;

  grad_buffer(root).data[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad_live || !node.needs_grad || !node.backprop) continue;
    node.backprop(*this);
  }
}

ValueId Tape::affine(ValueId x, ValueId w, ValueId b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1)
    throw UsageError("affine expects x:[N,I] w:[I,O] b:[O]");
  const std::size_t n = xv.extent(0), in = xv.extent(1), out = wv.extent(1);
  if (wv.extent(0) != in || bv.extent(0) != out)
    throw ConfigError("affine shape mismatch");

  Tensor y = Tensor::zeros({n, out});
  {
    CMapM xm(xv.data.data(), n, in);
    CMapM wm(wv.data.data(), in, out);
    MapM ym(y.data.data(), n, out);
    ym.noalias() = xm * wm;
    ym.rowwise() += CMapV(bv.data.data(), out).transpose();
  }

  bool needs = needs_grad(x) || needs_grad(w) || needs_grad(b);
  ValueId self{nodes_.size()};
  return push(std::move(y), needs, [x, w, b, self, n, in, out](Tape& t) {
    const Tensor& gout = t.nodes_[self.index].grad;
    CMapM gm(gout.data.data(), n, out);
    const Tensor& xv2 = t.value(x);
    const Tensor& wv2 = t.value(w);
    if (t.needs_grad(x)) {
      MapM dx(t.grad_buffer(x).data.data(), n, in);
      dx.noalias() += gm * CMapM(wv2.data.data(), in, out).transpose();
    }
    if (t.needs_grad(w)) {
      MapM dw(t.grad_buffer(w).data.data(), in, out);
      dw.noalias() += CMapM(xv2.data.data(), n, in).transpose() * gm;
    }
    if (t.needs_grad(b)) {
      MapV db(t.grad_buffer(b).data.data(), out);
      db.noalias() += gm.colwise().sum().transpose();
    }
  });
}

ValueId Tape::conv2d_3x3(ValueId x, ValueId w, ValueId b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1)
    throw UsageError("conv2d expects x:[N,C,H,W] w:[O,C,3,3] b:[O]");
  const std::size_t n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), wd = xv.extent(3);
  const std::size_t oc = wv.extent(0);
  if (wv.extent(1) != c || wv.extent(2) != 3 || wv.extent(3) != 3 || bv.extent(0) != oc)
    throw ConfigError("conv2d shape mismatch");

  const std::size_t hw = h * wd;
  const std::size_t patch = c * 9;
  Tensor y = Tensor::zeros({n, oc, h, wd});
  std::vector<double> cols(patch * hw);
  CMapM wm(wv.data.data(), oc, patch);
  for (std::size_t s = 0; s < n; ++s) {
    im2col_3x3(xv.data.data() + s * c * hw, c, h, wd, cols.data());
    MapM ym(y.data.data() + s * oc * hw, oc, hw);
    ym.noalias() = wm * CMapM(cols.data(), patch, hw);
    ym.colwise() += CMapV(bv.data.data(), oc);
  }

  bool needs = needs_grad(x) || needs_grad(w) || needs_grad(b);
  ValueId self{nodes_.size()};
  return push(std::move(y), needs, [x, w, b, self, n, c, h, wd, oc](Tape& t) {
    const std::size_t hw = h * wd;
    const std::size_t patch = c * 9;
    const Tensor& gout = t.nodes_[self.index].grad;
    const Tensor& xv2 = t.value(x);
    const Tensor& wv2 = t.value(w);
    std::vector<double> cols(patch * hw);
    std::vector<double> dcols(patch * hw);
    CMapM wm(wv2.data.data(), oc, patch);
    for (std::size_t s = 0; s < n; ++s) {
      CMapM gm(gout.data.data() + s * oc * hw, oc, hw);
      if (t.needs_grad(w) || t.needs_grad(x)) {
        im2col_3x3(xv2.data.data() + s * c * hw, c, h, wd, cols.data());
      }
      if (t.needs_grad(w)) {
        MapM dw(t.grad_buffer(w).data.data(), oc, patch);
        dw.noalias() += gm * CMapM(cols.data(), patch, hw).transpose();
      }
      if (t.needs_grad(b)) {
        MapV db(t.grad_buffer(b).data.data(), oc);
        db.noalias() += gm.rowwise().sum();
      }
      if (t.needs_grad(x)) {
        MapM dc(dcols.data(), patch, hw);
        dc.noalias() = wm.transpose() * gm;
        col2im_3x3(dcols.data(), c, h, wd, t.grad_buffer(x).data.data() + s * c * hw);
      }
    }
  });
}

ValueId Tape::relu(ValueId x) {
  const Tensor& xv = value(x);
  Tensor y = xv;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  ValueId self{nodes_.size()};
  return push(std::move(y), needs_grad(x), [x, self](Tape& t) {
    const Tensor& gout = t.nodes_[self.index].grad;
    const Tensor& xv2 = t.value(x);
    if (!t.needs_grad(x)) return;
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
      if (xv2.data[i] > 0.0) dx.data[i] += gout.data[i];
    }
  });
}

ValueId Tape::maxpool2x2(ValueId x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4) throw UsageError("maxpool2x2 expects [N,C,H,W]");
  const std::size_t n = xv.extent(0), c = xv.extent(1), h = xv.extent(2), w = xv.extent(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw UsageError("maxpool2x2 input too small");

  Tensor y = Tensor::zeros({n, c, oh, ow});
  std::vector<std::uint32_t> argmax(y.size());
  for (std::size_t s = 0; s < n * c; ++s) {
    const double* img = xv.data.data() + s * h * w;
    double* out = y.data.data() + s * oh * ow;
    std::uint32_t* am = argmax.data() + s * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        double best_v = img[best];
        const std::size_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                     (2 * i + 1) * w + 2 * j + 1};
        for (std::size_t k : cand) {
          if (img[k] > best_v) {
            best_v = img[k];
            best = k;
          }
        }
        out[i * ow + j] = best_v;
        am[i * ow + j] = static_cast<std::uint32_t>(s * h * w + best);
      }
    }
  }

  ValueId self{nodes_.size()};
  return push(std::move(y), needs_grad(x),
              [x, self, argmax = std::move(argmax)](Tape& t) {
                if (!t.needs_grad(x)) return;
                const Tensor& gout = t.nodes_[self.index].grad;
                Tensor& dx = t.grad_buffer(x);
                for (std::size_t i = 0; i < gout.data.size(); ++i) {
                  dx.data[argmax[i]] += gout.data[i];
                }
              });
}

ValueId Tape::dropout_mask(ValueId x, Tensor mask) {
  const Tensor& xv = value(x);
  if (!xv.same_shape(mask)) throw UsageError("dropout mask shape mismatch");
  Tensor y = xv;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= mask.data[i];
  ValueId self{nodes_.size()};
  return push(std::move(y), needs_grad(x),
              [x, self, mask = std::move(mask)](Tape& t) {
                if (!t.needs_grad(x)) return;
                const Tensor& gout = t.nodes_[self.index].grad;
                Tensor& dx = t.grad_buffer(x);
                for (std::size_t i = 0; i < dx.data.size(); ++i) {
                  dx.data[i] += gout.data[i] * mask.data[i];
                }
              });
}

ValueId Tape::flatten2(ValueId x) {
  const Tensor& xv = value(x);
  if (xv.rank() < 2) throw UsageError("flatten2 expects rank >= 2");
  const std::size_t n = xv.extent(0);
  Tensor y({n, xv.size() / n}, xv.data);
  ValueId self{nodes_.size()};
  return push(std::move(y), needs_grad(x), [x, self](Tape& t) {
    if (!t.needs_grad(x)) return;
    const Tensor& gout = t.nodes_[self.index].grad;
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += gout.data[i];
  });
}

ValueId Tape::add(ValueId a, ValueId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw UsageError("add shape mismatch");
  Tensor y = av;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += bv.data[i];
  ValueId self{nodes_.size()};
  return push(std::move(y), needs_grad(a) || needs_grad(b), [a, b, self](Tape& t) {
    const Tensor& gout = t.nodes_[self.index].grad;
    t.accumulate(a, gout);
    t.accumulate(b, gout);
  });
}

ValueId Tape::mul(ValueId a, ValueId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw UsageError("mul shape mismatch");
  Tensor y = av;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= bv.data[i];
  ValueId self{nodes_.size()};
  return push(std::move(y), needs_grad(a) || needs_grad(b), [a, b, self](Tape& t) {
    const Tensor& gout = t.nodes_[self.index].grad;
    const Tensor& av2 = t.value(a);
    const Tensor& bv2 = t.value(b);
    if (t.needs_grad(a)) {
      Tensor& da = t.grad_buffer(a);
      for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += gout.data[i] * bv2.data[i];
    }
    if (t.needs_grad(b)) {
      Tensor& db = t.grad_buffer(b);
      for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] += gout.data[i] * av2.data[i];
    }
  });
}

ValueId Tape::scale(ValueId x, double c) {
  Tensor y = value(x);
  for (double& v : y.data) v *= c;
  ValueId self{nodes_.size()};
  return push(std::move(y), needs_grad(x), [x, self, c](Tape& t) {
    if (!t.needs_grad(x)) return;
    const Tensor& gout = t.nodes_[self.index].grad;
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += c * gout.data[i];
  });
}

ValueId Tape::sum_all(ValueId x) {
  const Tensor& xv = value(x);
  double s = 0.0;
  for (double v : xv.data) s += v;
  ValueId self{nodes_.size()};
  return push(Tensor({1}, {s}), needs_grad(x), [x, self](Tape& t) {
    if (!t.needs_grad(x)) return;
    const double g = t.nodes_[self.index].grad.data[0];
    Tensor& dx = t.grad_buffer(x);
    for (double& v : dx.data) v += g;
  });
}

ValueId Tape::mean_all(ValueId x) {
  const Tensor& xv = value(x);
  const double inv = 1.0 / static_cast<double>(xv.size());
  double s = 0.0;
  for (double v : xv.data) s += v;
  ValueId self{nodes_.size()};
  return push(Tensor({1}, {s * inv}), needs_grad(x), [x, self, inv](Tape& t) {
    if (!t.needs_grad(x)) return;
    const double g = t.nodes_[self.index].grad.data[0] * inv;
    Tensor& dx = t.grad_buffer(x);
    for (double& v : dx.data) v += g;
  });
}

ValueId Tape::mean_abs(ValueId x) {
  const Tensor& xv = value(x);
  const double inv = 1.0 / static_cast<double>(xv.size());
  double s = 0.0;
  for (double v : xv.data) s += std::abs(v);
  ValueId self{nodes_.size()};
  return push(Tensor({1}, {s * inv}), needs_grad(x), [x, self, inv](Tape& t) {
    if (!t.needs_grad(x)) return;
    const double g = t.nodes_[self.index].grad.data[0] * inv;
    const Tensor& xv2 = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
      if (xv2.data[i] > 0.0)
        dx.data[i] += g;
      else if (xv2.data[i] < 0.0)
        dx.data[i] -= g;
    }
  });
}

ValueId Tape::mean_square(ValueId x) {
  const Tensor& xv = value(x);
  const double inv = 1.0 / static_cast<double>(xv.size());
  double s = 0.0;
  for (double v : xv.data) s += v * v;
  ValueId self{nodes_.size()};
  return push(Tensor({1}, {s * inv}), needs_grad(x), [x, self, inv](Tape& t) {
    if (!t.needs_grad(x)) return;
    const double g = t.nodes_[self.index].grad.data[0] * inv;
    const Tensor& xv2 = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += 2.0 * xv2.data[i] * g;
  });
}

ValueId Tape::softmax_cross_entropy(ValueId logits, std::vector<int> labels) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 2) throw UsageError("softmax_cross_entropy expects [N,K] logits");
  const std::size_t n = lv.extent(0), k = lv.extent(1);
  if (labels.size() != n) throw ConfigError("label count does not match batch size");
  for (int lab : labels) {
    if (lab < 0 || static_cast<std::size_t>(lab) >= k)
      throw ConfigError("label out of range");
  }

  // Log-sum-exp stabilized; probabilities saved for the backward pass.
  Tensor probs = Tensor::zeros({n, k});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.data.data() + i * k;
    double m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    const double lse = std::log(z) + m;
    loss += lse - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) {
      probs.data[i * k + j] = std::exp(row[j] - lse);
    }
  }
  loss /= static_cast<double>(n);

  ValueId self{nodes_.size()};
  return push(Tensor({1}, {loss}), needs_grad(logits),
              [logits, self, n, k, labels = std::move(labels),
               probs = std::move(probs)](Tape& t) {
                if (!t.needs_grad(logits)) return;
                const double g = t.nodes_[self.index].grad.data[0] / static_cast<double>(n);
                Tensor& dl = t.grad_buffer(logits);
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < k; ++j) {
                    double p = probs.data[i * k + j];
                    if (static_cast<std::size_t>(labels[i]) == j) p -= 1.0;
                    dl.data[i * k + j] += g * p;
                  }
                }
              });
}

}  // namespace popgrad
