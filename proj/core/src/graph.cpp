#include "mmfa/graph.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "mmfa/detail/kernels.hpp"

namespace mmfa {

namespace {

// Channel layout helper: interprets rank-2 as [n, channels] with spatial 1 and
// rank>=3 as [n, channels, spatial...].
struct ChannelLayout {
  std::size_t n, channels, spatial;
};

ChannelLayout channel_layout(const Tensor& t, const char* op) {
  if (t.rank() < 2) {
    throw std::invalid_argument(std::string(op) + ": input rank must be >= 2");
  }
  ChannelLayout layout{t.dim(0), t.dim(1), 1};
  for (std::size_t a = 2; a < t.rank(); ++a) layout.spatial *= t.dim(a);
  return layout;
}

}  // namespace

Value Graph::push(Tensor v, bool requires_grad, BackwardFn backward) {
  NodeData node;
  node.value = std::move(v);
  node.requires_grad = requires_grad;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

bool Graph::any_requires_grad(const std::vector<Value>& parents) const {
  for (Value p : parents) {
    if (nodes_[p.id].requires_grad) return true;
  }
  return false;
}

Value Graph::leaf(Tensor v, bool requires_grad) {
  v.require_finite("graph leaf");
  return push(std::move(v), requires_grad, nullptr);
}

Value Graph::node(Tensor v, const std::vector<Value>& parents, BackwardFn backward) {
  return push(std::move(v), any_requires_grad(parents), std::move(backward));
}

Tensor& Graph::grad_buffer(Value v) {
  NodeData& node = nodes_[v.id];
  if (!node.has_grad) {
    node.grad = Tensor::zeros_like(node.value);
    node.has_grad = true;
  }
  return node.grad;
}

Tensor Graph::grad(Value v) const {
  const NodeData& node = nodes_[v.id];
  if (!node.has_grad) return Tensor::zeros_like(node.value);
  return node.grad;
}

void Graph::backward(Value root) {
  const NodeData& root_node = nodes_[root.id];
  if (root_node.value.size() != 1) {
    throw std::invalid_argument("backward root must be scalar");
  }
  root_node.value.require_finite("backward root");
  for (NodeData& node : nodes_) node.has_grad = false;
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    NodeData& node = nodes_[i];
    if (!node.has_grad || !node.backward || !node.requires_grad) continue;
    node.backward(*this, node.grad);
  }
}

Value Graph::add(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw std::invalid_argument("add: shape mismatch " + ta.shape_string() + " vs " +
                                tb.shape_string());
  }
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
  return node(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& grad) {
    Tensor& ga = g.grad_buffer(a);
    Tensor& gb = g.grad_buffer(b);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      ga[i] += grad[i];
      gb[i] += grad[i];
    }
  });
}

Value Graph::scale(Value a, double c) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * ta[i];
  return node(std::move(out), {a}, [a, c](Graph& g, const Tensor& grad) {
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < grad.size(); ++i) ga[i] += c * grad[i];
  });
}

Value Graph::weighted_sum(const std::vector<std::pair<double, Value>>& terms) {
  double total = 0.0;
  std::vector<Value> parents;
  parents.reserve(terms.size());
  for (const auto& [coeff, v] : terms) {
    total += coeff * value(v).scalar_value();
    parents.push_back(v);
  }
  auto captured = terms;
  return node(Tensor::scalar(total), parents,
              [captured](Graph& g, const Tensor& grad) {
                for (const auto& [coeff, v] : captured) {
                  g.grad_buffer(v)[0] += coeff * grad[0];
                }
              });
}

Value Graph::sum_all(Value a) {
  const Tensor& ta = value(a);
  double total = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) total += ta[i];
  return node(Tensor::scalar(total), {a}, [a](Graph& g, const Tensor& grad) {
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += grad[0];
  });
}

Value Graph::l2_squared(Value a) {
  const Tensor& ta = value(a);
  double total = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) total += ta[i] * ta[i];
  return node(Tensor::scalar(total), {a}, [a](Graph& g, const Tensor& grad) {
    Tensor& ga = g.grad_buffer(a);
    const Tensor& va = g.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * va[i] * grad[0];
  });
}

Value Graph::relu(Value x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  detail::relu_forward(tx.data(), tx.size(), out.data());
  return node(std::move(out), {x}, [x](Graph& g, const Tensor& grad) {
    Tensor& gx = g.grad_buffer(x);
    const Tensor& vx = g.value(x);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (vx[i] > 0.0) gx[i] += grad[i];
    }
  });
}

Value Graph::dense(Value x, Value w, Value b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  if (tx.rank() != 2 || tw.rank() != 2 || tb.rank() != 1) {
    throw std::invalid_argument("dense: expected x:[n,in] w:[out,in] b:[out]");
  }
  const std::size_t n = tx.dim(0);
  const std::size_t in_dim = tx.dim(1);
  const std::size_t out_dim = tw.dim(0);
  if (tw.dim(1) != in_dim || tb.dim(0) != out_dim) {
    std::ostringstream msg;
    msg << "dense: shape mismatch x" << tx.shape_string() << " w" << tw.shape_string()
        << " b" << tb.shape_string();
    throw std::invalid_argument(msg.str());
  }
  Tensor out({n, out_dim});
  detail::dense_forward(tx.data(), tw.data(), tb.data(), n, in_dim, out_dim, out.data());
  return node(std::move(out), {x, w, b},
              [x, w, b, n, in_dim, out_dim](Graph& g, const Tensor& grad) {
                const Tensor& vx = g.value(x);
                const Tensor& vw = g.value(w);
                if (g.requires_grad(x)) {
                  Tensor& gx = g.grad_buffer(x);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t o = 0; o < out_dim; ++o) {
                      const double go = grad[i * out_dim + o];
                      if (go == 0.0) continue;
                      for (std::size_t k = 0; k < in_dim; ++k) {
                        gx[i * in_dim + k] += go * vw[o * in_dim + k];
                      }
                    }
                  }
                }
                if (g.requires_grad(w)) {
                  Tensor& gw = g.grad_buffer(w);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t o = 0; o < out_dim; ++o) {
                      const double go = grad[i * out_dim + o];
                      if (go == 0.0) continue;
                      for (std::size_t k = 0; k < in_dim; ++k) {
                        gw[o * in_dim + k] += go * vx[i * in_dim + k];
                      }
                    }
                  }
                }
                if (g.requires_grad(b)) {
                  Tensor& gb = g.grad_buffer(b);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t o = 0; o < out_dim; ++o) {
                      gb[o] += grad[i * out_dim + o];
                    }
                  }
                }
              });
}

namespace {

// Shared normalization backward. For each group: dx = istd * (g - mean(g)
// - xhat * mean(g * xhat)), where xhat is the forward output. Iterates
// group elements through `index(g, i)` so batch norm can stride per channel.
template <typename IndexFn>
void group_norm_backward(const Tensor& xhat, const Tensor& grad,
                         const std::vector<double>& inv_std, std::size_t groups,
                         std::size_t group_size, IndexFn index, Tensor& gx) {
  for (std::size_t g = 0; g < groups; ++g) {
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t idx = index(g, i);
      mean_g += grad[idx];
      mean_gx += grad[idx] * xhat[idx];
    }
    mean_g /= static_cast<double>(group_size);
    mean_gx /= static_cast<double>(group_size);
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t idx = index(g, i);
      gx[idx] += inv_std[g] * (grad[idx] - mean_g - xhat[idx] * mean_gx);
    }
  }
}

}  // namespace

Value Graph::instance_norm(Value x, double epsilon) {
  const Tensor& tx = value(x);
  if (epsilon <= 0.0) throw std::invalid_argument("instance_norm: epsilon must be > 0");
  tx.require_finite("instance_norm input");
  const ChannelLayout layout = channel_layout(tx, "instance_norm");
  // rank-2: one group per sample over the feature axis; rank>=3: one group per
  // (sample, channel) over spatial positions.
  const std::size_t groups = tx.rank() == 2 ? layout.n : layout.n * layout.channels;
  const std::size_t group_size = tx.size() / groups;
  Tensor out(tx.shape());
  std::vector<double> inv_std(groups);
  detail::group_norm_forward(tx.data(), groups, group_size, epsilon, out.data(),
                             inv_std.data());
  Value self = node(std::move(out), {x}, nullptr);
  nodes_[self.id].backward = [x, self, inv_std, groups, group_size](
                                 Graph& g, const Tensor& grad) {
    Tensor& gx = g.grad_buffer(x);
    const Tensor& xhat = g.value(self);
    group_norm_backward(
        xhat, grad, inv_std, groups, group_size,
        [group_size](std::size_t grp, std::size_t i) { return grp * group_size + i; },
        gx);
  };
  return self;
}

Value Graph::channel_affine(Value x, Value gamma, Value beta) {
  const Tensor& tx = value(x);
  const ChannelLayout layout = channel_layout(tx, "channel_affine");
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  if (tg.size() != layout.channels || tb.size() != layout.channels) {
    throw std::invalid_argument("channel_affine: gamma/beta size must equal channels");
  }
  Tensor out(tx.shape());
  detail::channel_affine_forward(tx.data(), tg.data(), tb.data(), layout.n,
                                 layout.channels, layout.spatial, out.data());
  return node(std::move(out), {x, gamma, beta},
              [x, gamma, beta, layout](Graph& g, const Tensor& grad) {
                const Tensor& vx = g.value(x);
                const Tensor& vg = g.value(gamma);
                const bool need_x = g.requires_grad(x);
                const bool need_g = g.requires_grad(gamma);
                const bool need_b = g.requires_grad(beta);
                Tensor* gx = need_x ? &g.grad_buffer(x) : nullptr;
                Tensor* gg = need_g ? &g.grad_buffer(gamma) : nullptr;
                Tensor* gb = need_b ? &g.grad_buffer(beta) : nullptr;
                for (std::size_t i = 0; i < layout.n; ++i) {
                  for (std::size_t c = 0; c < layout.channels; ++c) {
                    const std::size_t base = (i * layout.channels + c) * layout.spatial;
                    for (std::size_t s = 0; s < layout.spatial; ++s) {
                      const double go = grad[base + s];
                      if (gx) (*gx)[base + s] += vg[c] * go;
                      if (gg) (*gg)[c] += go * vx[base + s];
                      if (gb) (*gb)[c] += go;
                    }
                  }
                }
              });
}

Value Graph::batch_norm_train(Value x, double epsilon, RunningStats* stats,
                              double momentum, bool update_stats) {
  const Tensor& tx = value(x);
  if (epsilon <= 0.0) throw std::invalid_argument("batch_norm: epsilon must be > 0");
  tx.require_finite("batch_norm input");
  const ChannelLayout layout = channel_layout(tx, "batch_norm");
  if (layout.n < 2) {
    throw std::invalid_argument("batch_norm: train mode requires batch size >= 2");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("batch_norm: momentum must be in [0, 1)");
  }
  std::vector<double> mean(layout.channels);
  std::vector<double> var(layout.channels);
  detail::channel_batch_stats(tx.data(), layout.n, layout.channels, layout.spatial,
                              mean.data(), var.data());
  if (update_stats && stats) {
    if (stats->mean.size() != layout.channels) {
      stats->mean = Tensor({layout.channels});
      stats->var = Tensor({layout.channels});
      stats->var.fill(1.0);
    }
    for (std::size_t c = 0; c < layout.channels; ++c) {
      stats->mean[c] = momentum * stats->mean[c] + (1.0 - momentum) * mean[c];
      stats->var[c] = momentum * stats->var[c] + (1.0 - momentum) * var[c];
    }
    stats->updates += 1;
  }
  Tensor out(tx.shape());
  std::vector<double> inv_std(layout.channels);
  for (std::size_t c = 0; c < layout.channels; ++c) {
    inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon);
  }
  detail::channel_norm_apply(tx.data(), mean.data(), var.data(), epsilon, layout.n,
                             layout.channels, layout.spatial, out.data());
  Value self = node(std::move(out), {x}, nullptr);
  const std::size_t group_size = layout.n * layout.spatial;
  nodes_[self.id].backward = [x, self, inv_std, layout, group_size](
                                 Graph& g, const Tensor& grad) {
    Tensor& gx = g.grad_buffer(x);
    const Tensor& xhat = g.value(self);
    // Group g = channel c; element i enumerates (sample, spatial) pairs.
    group_norm_backward(
        xhat, grad, inv_std, layout.channels, group_size,
        [layout](std::size_t c, std::size_t i) {
          const std::size_t sample = i / layout.spatial;
          const std::size_t s = i % layout.spatial;
          return (sample * layout.channels + c) * layout.spatial + s;
        },
        gx);
  };
  return self;
}

Value Graph::batch_norm_eval(Value x, double epsilon, const RunningStats& stats) {
  const Tensor& tx = value(x);
  if (epsilon <= 0.0) throw std::invalid_argument("batch_norm: epsilon must be > 0");
  const ChannelLayout layout = channel_layout(tx, "batch_norm");
  if (!stats.initialized()) {
    throw std::invalid_argument("batch_norm: eval mode with uninitialized running stats");
  }
  if (stats.mean.size() != layout.channels) {
    throw std::invalid_argument("batch_norm: running stats size mismatch");
  }
  std::vector<double> inv_std(layout.channels);
  for (std::size_t c = 0; c < layout.channels; ++c) {
    inv_std[c] = 1.0 / std::sqrt(stats.var[c] + epsilon);
  }
  Tensor out(tx.shape());
  detail::channel_norm_apply(tx.data(), stats.mean.data(), stats.var.data(), epsilon,
                             layout.n, layout.channels, layout.spatial, out.data());
  return node(std::move(out), {x}, [x, inv_std, layout](Graph& g, const Tensor& grad) {
    Tensor& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < layout.n; ++i) {
      for (std::size_t c = 0; c < layout.channels; ++c) {
        const std::size_t base = (i * layout.channels + c) * layout.spatial;
        for (std::size_t s = 0; s < layout.spatial; ++s) {
          gx[base + s] += inv_std[c] * grad[base + s];
        }
      }
    }
  });
}

Value Graph::conv2d(Value x, Value w, Value b, std::size_t stride) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  if (tx.rank() != 4 || tw.rank() != 4 || tb.rank() != 1) {
    throw std::invalid_argument("conv2d: expected x:[n,cin,h,w] w:[cout,cin,kh,kw] b:[cout]");
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  const std::size_t n = tx.dim(0), cin = tx.dim(1), h = tx.dim(2), wd = tx.dim(3);
  const std::size_t cout = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
  if (tw.dim(1) != cin || tb.dim(0) != cout) {
    throw std::invalid_argument("conv2d: channel mismatch between x, w, b");
  }
  if (kh > h || kw > wd) {
    throw std::invalid_argument("conv2d: kernel larger than input");
  }
  const std::size_t oh = (h - kh) / stride + 1;
  const std::size_t ow = (wd - kw) / stride + 1;
  Tensor out({n, cout, oh, ow});
  detail::conv2d_forward(tx.data(), tw.data(), tb.data(), n, cin, h, wd, cout, kh, kw,
                         stride, out.data());
  return node(
      std::move(out), {x, w, b},
      [x, w, b, n, cin, h, wd, cout, kh, kw, stride, oh, ow](Graph& g,
                                                             const Tensor& grad) {
        const Tensor& vx = g.value(x);
        const Tensor& vw = g.value(w);
        const bool need_x = g.requires_grad(x);
        const bool need_w = g.requires_grad(w);
        const bool need_b = g.requires_grad(b);
        Tensor* gx = need_x ? &g.grad_buffer(x) : nullptr;
        Tensor* gw = need_w ? &g.grad_buffer(w) : nullptr;
        Tensor* gb = need_b ? &g.grad_buffer(b) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t r = 0; r < oh; ++r) {
              for (std::size_t col = 0; col < ow; ++col) {
                const double go = grad[((i * cout + co) * oh + r) * ow + col];
                if (go == 0.0) continue;
                if (gb) (*gb)[co] += go;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  for (std::size_t u = 0; u < kh; ++u) {
                    for (std::size_t v = 0; v < kw; ++v) {
                      const std::size_t xi =
                          ((i * cin + ci) * h + r * stride + u) * wd + col * stride + v;
                      const std::size_t wi = ((co * cin + ci) * kh + u) * kw + v;
                      if (gw) (*gw)[wi] += go * vx[xi];
                      if (gx) (*gx)[xi] += go * vw[wi];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Value Graph::global_avg_pool(Value x) {
  const Tensor& tx = value(x);
  if (tx.rank() < 3) {
    throw std::invalid_argument("global_avg_pool: expected rank >= 3 input");
  }
  const ChannelLayout layout = channel_layout(tx, "global_avg_pool");
  Tensor out({layout.n, layout.channels});
  detail::global_avg_pool_forward(tx.data(), layout.n, layout.channels, layout.spatial,
                                  out.data());
  return node(std::move(out), {x}, [x, layout](Graph& g, const Tensor& grad) {
    Tensor& gx = g.grad_buffer(x);
    const double inv = 1.0 / static_cast<double>(layout.spatial);
    for (std::size_t i = 0; i < layout.n; ++i) {
      for (std::size_t c = 0; c < layout.channels; ++c) {
        const double go = grad[i * layout.channels + c] * inv;
        const std::size_t base = (i * layout.channels + c) * layout.spatial;
        for (std::size_t s = 0; s < layout.spatial; ++s) gx[base + s] += go;
      }
    }
  });
}

}  // namespace mmfa
