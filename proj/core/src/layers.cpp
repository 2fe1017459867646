#include "mmfa/layers.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "mmfa/detail/kernels.hpp"

namespace mmfa {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kInstanceNorm: return "instance_norm";
    case LayerKind::kBatchNorm: return "batch_norm";
    case LayerKind::kGlobalAvgPool: return "global_avg_pool";
  }
  return "?";
}

LayerSpec LayerSpec::dense(std::size_t in_dim, std::size_t out_dim) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.in_dim = in_dim;
  s.out_dim = out_dim;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}

LayerSpec LayerSpec::instance_norm(double epsilon, bool affine) {
  LayerSpec s;
  s.kind = LayerKind::kInstanceNorm;
  s.epsilon = epsilon;
  s.affine = affine;
  return s;
}

LayerSpec LayerSpec::batch_norm(double epsilon, double momentum) {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  s.epsilon = epsilon;
  s.momentum = momentum;
  return s;
}

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec s;
  s.kind = LayerKind::kGlobalAvgPool;
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::kDense:
      if (in_dim == 0 || out_dim == 0) {
        throw std::invalid_argument("dense layer dims must be positive");
      }
      break;
    case LayerKind::kConv2d:
      if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
        throw std::invalid_argument("conv2d layer dims must be positive");
      }
      if (kernel > 5) throw std::invalid_argument("conv2d kernels larger than 5 unsupported");
      if (in_channels > 32 || out_channels > 32) {
        throw std::invalid_argument("conv2d channel counts above 32 unsupported");
      }
      break;
    case LayerKind::kInstanceNorm:
    case LayerKind::kBatchNorm:
      if (epsilon <= 0.0) throw std::invalid_argument("norm epsilon must be > 0");
      if (momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("batch_norm momentum must be in [0, 1)");
      }
      break;
    default:
      break;
  }
}

// --- ParameterSet ---

Tensor& ParameterSet::add(const std::string& path, Tensor init) {
  if (entries_.count(path)) throw std::invalid_argument("duplicate parameter " + path);
  Entry entry;
  entry.grad = Tensor::zeros_like(init);
  entry.value = std::move(init);
  auto [it, inserted] = entries_.emplace(path, std::move(entry));
  order_.push_back(path);
  return it->second.value;
}

bool ParameterSet::has(const std::string& path) const { return entries_.count(path) > 0; }

Tensor& ParameterSet::param(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter " + path);
  return it->second.value;
}

const Tensor& ParameterSet::param(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter " + path);
  return it->second.value;
}

Tensor& ParameterSet::grad(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter " + path);
  return it->second.grad;
}

const Tensor& ParameterSet::grad(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter " + path);
  return it->second.grad;
}

RunningStats& ParameterSet::stats(const std::string& path) {
  auto it = stats_.find(path);
  if (it == stats_.end()) {
    stats_order_.push_back(path);
    return stats_[path];
  }
  return it->second;
}

const RunningStats& ParameterSet::stats(const std::string& path) const {
  auto it = stats_.find(path);
  if (it == stats_.end()) throw std::invalid_argument("unknown running stats " + path);
  return it->second;
}

bool ParameterSet::has_stats(const std::string& path) const {
  return stats_.count(path) > 0;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [path, entry] : entries_) n += entry.value.size();
  return n;
}

void ParameterSet::zero_grads() {
  for (auto& [path, entry] : entries_) entry.grad.fill(0.0);
}

namespace {

void hash_bytes(std::uint64_t& h, const void* data, std::size_t bytes) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void hash_tensor(std::uint64_t& h, const Tensor& t) {
  hash_bytes(h, t.data(), t.size() * sizeof(double));
}

}  // namespace

std::uint64_t ParameterSet::state_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& path : order_) {
    hash_bytes(h, path.data(), path.size());
    hash_tensor(h, entries_.at(path).value);
  }
  for (const std::string& path : stats_order_) {
    const RunningStats& s = stats_.at(path);
    hash_bytes(h, path.data(), path.size());
    hash_tensor(h, s.mean);
    hash_tensor(h, s.var);
    hash_bytes(h, &s.updates, sizeof(s.updates));
  }
  return h;
}

// --- BoundParams ---

BoundParams::BoundParams(Graph& graph, ParameterSet& params, bool trainable)
    : graph_(&graph), params_(&params), trainable_(trainable) {
  for (const std::string& path : params.paths()) {
    values_[path] = graph.leaf(params.param(path), trainable);
  }
}

Value BoundParams::at(const std::string& path) const {
  auto it = values_.find(path);
  if (it == values_.end()) throw std::invalid_argument("parameter not bound: " + path);
  return it->second;
}

void BoundParams::pull_gradients() {
  if (!trainable_) return;
  for (const auto& [path, v] : values_) {
    if (!graph_->has_grad(v)) continue;
    Tensor g = graph_->grad(v);
    Tensor& slot = params_->grad(path);
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
  }
}

// --- init ---

namespace {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

std::string layer_path(std::size_t index, const char* name) {
  std::ostringstream out;
  out << "L" << index << "." << name;
  return out.str();
}

std::size_t norm_channels(const std::vector<std::size_t>& sample_shape) {
  // sample_shape excludes batch: [d] -> d channels, [c, h, w] -> c channels.
  return sample_shape[0];
}

}  // namespace

std::vector<std::size_t> init_layer_params(const std::vector<LayerSpec>& specs,
                                           const std::vector<std::size_t>& input_shape,
                                           ParameterSet& params, Rng& rng) {
  std::vector<std::size_t> shape = input_shape;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const LayerSpec& spec = specs[k];
    spec.validate();
    switch (spec.kind) {
      case LayerKind::kDense: {
        if (shape.size() != 1 || shape[0] != spec.in_dim) {
          std::ostringstream msg;
          msg << "layer " << k << " (dense): expected input dim " << spec.in_dim;
          throw std::invalid_argument(msg.str());
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
        params.add(layer_path(k, "weight"),
                   uniform_tensor({spec.out_dim, spec.in_dim}, bound, rng));
        params.add(layer_path(k, "bias"), Tensor({spec.out_dim}));
        shape = {spec.out_dim};
        break;
      }
      case LayerKind::kConv2d: {
        if (shape.size() != 3 || shape[0] != spec.in_channels) {
          std::ostringstream msg;
          msg << "layer " << k << " (conv2d): expected " << spec.in_channels
              << " input channels";
          throw std::invalid_argument(msg.str());
        }
        if (spec.kernel > shape[1] || spec.kernel > shape[2]) {
          std::ostringstream msg;
          msg << "layer " << k << " (conv2d): kernel exceeds spatial extent";
          throw std::invalid_argument(msg.str());
        }
        const double fan_in =
            static_cast<double>(spec.in_channels * spec.kernel * spec.kernel);
        const double bound = 1.0 / std::sqrt(fan_in);
        params.add(layer_path(k, "weight"),
                   uniform_tensor({spec.out_channels, spec.in_channels, spec.kernel,
                                   spec.kernel},
                                  bound, rng));
        params.add(layer_path(k, "bias"), Tensor({spec.out_channels}));
        shape = {spec.out_channels, (shape[1] - spec.kernel) / spec.stride + 1,
                 (shape[2] - spec.kernel) / spec.stride + 1};
        break;
      }
      case LayerKind::kInstanceNorm: {
        if (spec.affine) {
          const std::size_t c = norm_channels(shape);
          Tensor gamma({c});
          gamma.fill(1.0);
          params.add(layer_path(k, "gamma"), std::move(gamma));
          params.add(layer_path(k, "beta"), Tensor({c}));
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t c = norm_channels(shape);
        Tensor gamma({c});
        gamma.fill(1.0);
        params.add(layer_path(k, "gamma"), std::move(gamma));
        params.add(layer_path(k, "beta"), Tensor({c}));
        RunningStats& stats = params.stats(layer_path(k, "stats"));
        stats.mean = Tensor({c});
        stats.var = Tensor({c});
        stats.var.fill(1.0);
        stats.updates = 1;  // fresh models are evaluable with identity stats
        break;
      }
      case LayerKind::kRelu:
        break;
      case LayerKind::kGlobalAvgPool:
        if (shape.size() != 3) {
          std::ostringstream msg;
          msg << "layer " << k << " (global_avg_pool): expected [c,h,w] input";
          throw std::invalid_argument(msg.str());
        }
        shape = {shape[0]};
        break;
    }
  }
  return shape;
}

Value forward_layers(Graph& graph, const std::vector<LayerSpec>& specs,
                     BoundParams& bound, Value x, const ForwardOptions& options) {
  Value cur = x;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const LayerSpec& spec = specs[k];
    try {
      switch (spec.kind) {
        case LayerKind::kDense:
          cur = graph.dense(cur, bound.at(layer_path(k, "weight")),
                            bound.at(layer_path(k, "bias")));
          break;
        case LayerKind::kConv2d:
          cur = graph.conv2d(cur, bound.at(layer_path(k, "weight")),
                             bound.at(layer_path(k, "bias")), spec.stride);
          break;
        case LayerKind::kRelu:
          cur = graph.relu(cur);
          break;
        case LayerKind::kInstanceNorm:
          cur = graph.instance_norm(cur, spec.epsilon);
          if (spec.affine) {
            cur = graph.channel_affine(cur, bound.at(layer_path(k, "gamma")),
                                       bound.at(layer_path(k, "beta")));
          }
          break;
        case LayerKind::kBatchNorm: {
          RunningStats& stats = bound.params().stats(layer_path(k, "stats"));
          if (options.training) {
            cur = graph.batch_norm_train(cur, spec.epsilon, &stats, spec.momentum,
                                         options.update_bn_stats);
          } else {
            cur = graph.batch_norm_eval(cur, spec.epsilon, stats);
          }
          cur = graph.channel_affine(cur, bound.at(layer_path(k, "gamma")),
                                     bound.at(layer_path(k, "beta")));
          break;
        }
        case LayerKind::kGlobalAvgPool:
          cur = graph.global_avg_pool(cur);
          break;
      }
    } catch (const std::invalid_argument& e) {
      std::ostringstream msg;
      msg << "layer " << k << " (" << layer_kind_name(spec.kind) << "): " << e.what();
      throw std::invalid_argument(msg.str());
    }
  }
  return cur;
}

Tensor forward_layers_eval(const std::vector<LayerSpec>& specs, ParameterSet& params,
                           const Tensor& x, const ForwardOptions& options) {
  Graph graph;
  BoundParams bound(graph, params, false);
  Value out = forward_layers(graph, specs, bound, graph.leaf(x), options);
  return graph.value(out);
}

// --- 32-bit inference path ---

namespace {

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

std::vector<float> to_f32(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

}  // namespace

Tensor forward_layers_f32(const std::vector<LayerSpec>& specs, ParameterSet& params,
                          const Tensor& x) {
  const std::size_t n = x.dim(0);
  std::vector<std::size_t> shape(x.shape().begin() + 1, x.shape().end());
  std::vector<float> cur = to_f32(x);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const LayerSpec& spec = specs[k];
    switch (spec.kind) {
      case LayerKind::kDense: {
        std::vector<float> w = to_f32(params.param(layer_path(k, "weight")).values());
        std::vector<float> b = to_f32(params.param(layer_path(k, "bias")).values());
        std::vector<float> out(n * spec.out_dim);
        detail::dense_forward(cur.data(), w.data(), b.data(), n, spec.in_dim,
                              spec.out_dim, out.data());
        cur = std::move(out);
        shape = {spec.out_dim};
        break;
      }
      case LayerKind::kConv2d: {
        std::vector<float> w = to_f32(params.param(layer_path(k, "weight")).values());
        std::vector<float> b = to_f32(params.param(layer_path(k, "bias")).values());
        const std::size_t h = shape[1], wd = shape[2];
        const std::size_t oh = (h - spec.kernel) / spec.stride + 1;
        const std::size_t ow = (wd - spec.kernel) / spec.stride + 1;
        std::vector<float> out(n * spec.out_channels * oh * ow);
        detail::conv2d_forward(cur.data(), w.data(), b.data(), n, spec.in_channels, h,
                               wd, spec.out_channels, spec.kernel, spec.kernel,
                               spec.stride, out.data());
        cur = std::move(out);
        shape = {spec.out_channels, oh, ow};
        break;
      }
      case LayerKind::kRelu:
        detail::relu_forward(cur.data(), cur.size(), cur.data());
        break;
      case LayerKind::kInstanceNorm: {
        const std::size_t groups = shape.size() == 1 ? n : n * shape[0];
        const std::size_t group_size = cur.size() / groups;
        std::vector<float> out(cur.size());
        detail::group_norm_forward(cur.data(), groups, group_size,
                                   static_cast<float>(spec.epsilon), out.data(),
                                   static_cast<float*>(nullptr));
        cur = std::move(out);
        if (spec.affine) {
          std::vector<float> g = to_f32(params.param(layer_path(k, "gamma")).values());
          std::vector<float> b = to_f32(params.param(layer_path(k, "beta")).values());
          const std::size_t channels = shape[0];
          const std::size_t spatial = cur.size() / (n * channels);
          detail::channel_affine_forward(cur.data(), g.data(), b.data(), n, channels,
                                         spatial, cur.data());
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const RunningStats& stats = params.stats(layer_path(k, "stats"));
        if (!stats.initialized()) {
          throw std::invalid_argument("batch_norm: eval mode with uninitialized running stats");
        }
        std::vector<float> mean = to_f32(stats.mean.values());
        std::vector<float> var = to_f32(stats.var.values());
        std::vector<float> g = to_f32(params.param(layer_path(k, "gamma")).values());
        std::vector<float> b = to_f32(params.param(layer_path(k, "beta")).values());
        const std::size_t channels = shape[0];
        const std::size_t spatial = cur.size() / (n * channels);
        detail::channel_norm_apply(cur.data(), mean.data(), var.data(),
                                   static_cast<float>(spec.epsilon), n, channels,
                                   spatial, cur.data());
        detail::channel_affine_forward(cur.data(), g.data(), b.data(), n, channels,
                                       spatial, cur.data());
        break;
      }
      case LayerKind::kGlobalAvgPool: {
        const std::size_t channels = shape[0];
        const std::size_t spatial = shape[1] * shape[2];
        std::vector<float> out(n * channels);
        detail::global_avg_pool_forward(cur.data(), n, channels, spatial, out.data());
        cur = std::move(out);
        shape = {channels};
        break;
      }
    }
  }
  std::vector<std::size_t> out_shape{n};
  out_shape.insert(out_shape.end(), shape.begin(), shape.end());
  Tensor out(out_shape);
  for (std::size_t i = 0; i < cur.size(); ++i) out[i] = static_cast<double>(cur[i]);
  return out;
}

Tensor instance_normalize(const Tensor& x, double epsilon) {
  Graph graph;
  return graph.value(graph.instance_norm(graph.leaf(x), epsilon));
}

Tensor batch_normalize(const Tensor& x, ParameterSet& params, NormMode mode,
                       double epsilon, double momentum) {
  const std::size_t channels = x.dim(1);
  if (!params.has("gamma")) {
    Tensor gamma({channels});
    gamma.fill(1.0);
    params.add("gamma", std::move(gamma));
    params.add("beta", Tensor({channels}));
    params.stats("stats");  // starts uninitialized
  }
  Graph graph;
  BoundParams bound(graph, params, false);
  Value in = graph.leaf(x);
  Value normed;
  if (mode == NormMode::kTrain) {
    normed = graph.batch_norm_train(in, epsilon, &params.stats("stats"), momentum, true);
  } else {
    normed = graph.batch_norm_eval(in, epsilon, params.stats("stats"));
  }
  Value out = graph.channel_affine(normed, bound.at("gamma"), bound.at("beta"));
  return graph.value(out);
}

}  // namespace mmfa
