#include "evb/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "evb/errors.hpp"
#include "evb/kernels.hpp"

namespace evb::nn {

namespace {

thread_local bool grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  const bool track = GradMode::enabled() &&
                     std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p && p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Var<T>::from_node(std::move(node));
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T>
void require_image(const Var<T>& x, const char* op) {
  if (!x.defined()) throw std::invalid_argument(std::string(op) + ": undefined input");
  if (x.shape().n != 1) throw ShapeError(std::string(op) + ": expected a single image, got " + x.shape().str());
}

template <typename T, typename F, typename B>
Var<T> unary(const Var<T>& x, F&& f, B&& backward_fn) {
  Tensor<T> out(x.shape());
  const T* src = x.value().data();
  T* dst = out.data();
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return make_result<T>(std::move(out), {x.node()}, std::forward<B>(backward_fn));
}

}  // namespace

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set(bool enabled) { grad_enabled = enabled; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> Var<T>::from_node(std::shared_ptr<Node<T>> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

template <typename T>
void Var<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(T(0));
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw std::invalid_argument("backward needs a single-element root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_image(x, "conv2d");
  const Shape& ws = weight.shape();
  if (ws.h != ws.w || ws.c != x.shape().c) {
    throw ShapeError("conv2d: weight " + ws.str() + " does not match input " + x.shape().str());
  }
  if (bias.defined() && bias.value().size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias size does not match output channels");
  }
  const kernels::ConvGeometry g{x.shape().c, ws.n, x.shape().h, x.shape().w, ws.h};
  Tensor<T> out(ws.n, g.height, g.width);
  kernels::conv2d_forward(g, x.value().data(), weight.value().data(), bias.defined() ? bias.value().data() : nullptr,
                          out.data());
  std::vector<NodePtr<T>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result<T>(std::move(out), std::move(parents), [g](Node<T>& self) {
    auto& in = *self.parents[0];
    auto& w = *self.parents[1];
    Node<T>* b = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    if (in.requires_grad) {
      kernels::conv2d_backward_input(g, self.grad.data(), w.value.data(), in.ensure_grad().data());
    }
    const bool want_w = w.requires_grad;
    const bool want_b = b && b->requires_grad;
    if (want_w) {
      kernels::conv2d_backward_params(g, in.value.data(), self.grad.data(), w.ensure_grad().data(),
                                      want_b ? b->ensure_grad().data() : nullptr);
    } else if (want_b) {
      const std::size_t hw = static_cast<std::size_t>(g.height) * g.width;
      T* gb = b->ensure_grad().data();
      for (int oc = 0; oc < g.out_channels; ++oc) {
        T acc = T(0);
        for (std::size_t i = 0; i < hw; ++i) acc += self.grad[oc * hw + i];
        gb[oc] += acc;
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](Node<T>& self) {
    auto& in = *self.parents[0];
    T* g = in.ensure_grad().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      if (self.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](Node<T>& self) {
    auto& in = *self.parents[0];
    T* g = in.ensure_grad().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const T s = self.value[i];
      g[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](Node<T>& self) {
    auto& in = *self.parents[0];
    T* g = in.ensure_grad().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const T t = self.value[i];
      g[i] += self.grad[i] * (T(1) - t * t);
    }
  });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](Node<T>& self) {
    auto& in = *self.parents[0];
    T* g = in.ensure_grad().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](Node<T>& self) {
    auto& in = *self.parents[0];
    T* g = in.ensure_grad().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      T* g = p.ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      T* g = p.ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int h = parts[0].shape().h;
  const int w = parts[0].shape().w;
  int channels = 0;
  for (const auto& p : parts) {
    require_image(p, "concat");
    if (p.shape().h != h || p.shape().w != w) throw ShapeError("concat: spatial extents differ");
    channels += p.shape().c;
  }
  Tensor<T> out(channels, h, w);
  std::vector<NodePtr<T>> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
    parents.push_back(p.node());
  }
  return make_result<T>(std::move(out), std::move(parents), [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        T* g = p->ensure_grad().data();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count) {
  require_image(x, "slice_channels");
  if (begin < 0 || count < 0 || begin + count > x.shape().c) throw ShapeError("slice_channels: range out of bounds");
  const std::size_t hw = static_cast<std::size_t>(x.shape().h) * x.shape().w;
  Tensor<T> out(count, x.shape().h, x.shape().w);
  std::copy(x.value().data() + begin * hw, x.value().data() + (begin + count) * hw, out.data());
  return make_result<T>(std::move(out), {x.node()}, [begin, hw](Node<T>& self) {
    T* g = self.parents[0]->ensure_grad().data() + begin * hw;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  require_image(x, "avg_pool2");
  const int c = x.shape().c;
  const int h = x.shape().h;
  const int w = x.shape().w;
  Tensor<T> out(c, h / 2, w / 2);
  const auto& in = x.value();
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h / 2; ++y) {
      for (int xx = 0; xx < w / 2; ++xx) {
        out.at(ch, y, xx) = T(0.25) * (in.at(ch, 2 * y, 2 * xx) + in.at(ch, 2 * y, 2 * xx + 1) +
                                       in.at(ch, 2 * y + 1, 2 * xx) + in.at(ch, 2 * y + 1, 2 * xx + 1));
      }
    }
  }
  return make_result<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int ch = 0; ch < self.value.channels(); ++ch) {
      for (int y = 0; y < self.value.height(); ++y) {
        for (int xx = 0; xx < self.value.width(); ++xx) {
          const T v = T(0.25) * self.grad.at(ch, y, xx);
          g.at(ch, 2 * y, 2 * xx) += v;
          g.at(ch, 2 * y, 2 * xx + 1) += v;
          g.at(ch, 2 * y + 1, 2 * xx) += v;
          g.at(ch, 2 * y + 1, 2 * xx + 1) += v;
        }
      }
    }
  });
}

template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  require_image(x, "max_pool2");
  const int c = x.shape().c;
  const int h = x.shape().h;
  const int w = x.shape().w;
  Tensor<T> out(c, h / 2, w / 2);
  // argmax offsets, first maximum wins
  std::vector<std::uint8_t> which(out.size());
  const auto& in = x.value();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h / 2; ++y) {
      for (int xx = 0; xx < w / 2; ++xx) {
        T best = in.at(ch, 2 * y, 2 * xx);
        std::uint8_t arg = 0;
        for (std::uint8_t k = 1; k < 4; ++k) {
          const T v = in.at(ch, 2 * y + k / 2, 2 * xx + k % 2);
          if (v > best) {
            best = v;
            arg = k;
          }
        }
        out.at(ch, y, xx) = best;
        which[(static_cast<std::size_t>(ch) * (h / 2) + y) * (w / 2) + xx] = arg;
      }
    }
  }
  return make_result<T>(std::move(out), {x.node()}, [which = std::move(which)](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    std::size_t i = 0;
    for (int ch = 0; ch < self.value.channels(); ++ch) {
      for (int y = 0; y < self.value.height(); ++y) {
        for (int xx = 0; xx < self.value.width(); ++xx, ++i) {
          g.at(ch, 2 * y + which[i] / 2, 2 * xx + which[i] % 2) += self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> upsample2(const Var<T>& x) {
  require_image(x, "upsample2");
  const int c = x.shape().c;
  const int h = x.shape().h;
  const int w = x.shape().w;
  Tensor<T> out(c, 2 * h, 2 * w);
  const auto& in = x.value();
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = in.at(ch, y / 2, xx / 2);
    }
  }
  return make_result<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int ch = 0; ch < self.value.channels(); ++ch) {
      for (int y = 0; y < self.value.height(); ++y) {
        for (int xx = 0; xx < self.value.width(); ++xx) g.at(ch, y / 2, xx / 2) += self.grad.at(ch, y, xx);
      }
    }
  });
}

template <typename T>
Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mean_abs_error");
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean_abs_error: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
  Tensor<T> out(1, 1, 1, static_cast<T>(acc / static_cast<double>(n)));
  return make_result<T>(std::move(out), {a.node(), b.node()}, [n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T scale_factor = self.grad[0] / static_cast<T>(n);
    for (int k = 0; k < 2; ++k) {
      auto& p = k == 0 ? pa : pb;
      if (!p.requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      T* g = p.ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T d = pa.value[i] - pb.value[i];
        const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        g[i] += sign * s * scale_factor;
      }
    }
  });
}

template <typename T>
Var<T> sum_squared_error(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sum_squared_error");
  const std::size_t n = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - b.value()[i];
    acc += d * d;
  }
  Tensor<T> out(1, 1, 1, static_cast<T>(acc));
  return make_result<T>(std::move(out), {a.node(), b.node()}, [n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T g0 = self.grad[0];
    for (int k = 0; k < 2; ++k) {
      auto& p = k == 0 ? pa : pb;
      if (!p.requires_grad) continue;
      const T sign = k == 0 ? T(2) : T(-2);
      T* g = p.ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) g[i] += sign * g0 * (pa.value[i] - pb.value[i]);
    }
  });
}

template <typename T>
Var<T> add_scalars(const std::vector<Var<T>>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_scalars: no terms");
  T total = T(0);
  std::vector<NodePtr<T>> parents;
  for (const auto& t : terms) {
    if (t.value().size() != 1) throw ShapeError("add_scalars: term is not a scalar");
    total += t.value()[0];
    parents.push_back(t.node());
  }
  return make_result<T>(Tensor<T>(1, 1, 1, total), std::move(parents), [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->ensure_grad()[0] += self.grad[0];
    }
  });
}

#define EVB_INSTANTIATE_AUTOGRAD(T)                                              \
  template class Var<T>;                                                         \
  template void backward<T>(const Var<T>&);                                      \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&);        \
  template Var<T> relu<T>(const Var<T>&);                                        \
  template Var<T> sigmoid<T>(const Var<T>&);                                     \
  template Var<T> tanh<T>(const Var<T>&);                                        \
  template Var<T> exp<T>(const Var<T>&);                                         \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> scale<T>(const Var<T>&, T);                                    \
  template Var<T> concat<T>(const std::vector<Var<T>>&);                         \
  template Var<T> slice_channels<T>(const Var<T>&, int, int);                    \
  template Var<T> avg_pool2<T>(const Var<T>&);                                   \
  template Var<T> max_pool2<T>(const Var<T>&);                                   \
  template Var<T> upsample2<T>(const Var<T>&);                                   \
  template Var<T> mean_abs_error<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> sum_squared_error<T>(const Var<T>&, const Var<T>&);            \
  template Var<T> add_scalars<T>(const std::vector<Var<T>>&);

EVB_INSTANTIATE_AUTOGRAD(float)
EVB_INSTANTIATE_AUTOGRAD(double)

#undef EVB_INSTANTIATE_AUTOGRAD

}  // namespace evb::nn
