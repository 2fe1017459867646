#ifndef MMFA_LAYERS_HPP_
#define MMFA_LAYERS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmfa/graph.hpp"
#include "mmfa/rng.hpp"
#include "mmfa/tensor.hpp"

namespace mmfa {

enum class LayerKind {
  kDense,
  kConv2d,
  kRelu,
  kInstanceNorm,
  kBatchNorm,
  kGlobalAvgPool,
};

const char* layer_kind_name(LayerKind kind);

/// One layer of a feed-forward stack. Only the fields relevant to `kind` are
/// read. Conv is supported at small scale (kernel <= 5, channels <= 32); the
/// dense path is the default backbone.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;

  // dense
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  // conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;

  // normalization
  double epsilon = 1e-5;
  bool affine = true;       // learned gamma/beta after normalizing
  double momentum = 0.1;    // weight kept on the previous running statistic

  static LayerSpec dense(std::size_t in_dim, std::size_t out_dim);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel, std::size_t stride = 1);
  static LayerSpec relu();
  static LayerSpec instance_norm(double epsilon = 1e-5, bool affine = false);
  static LayerSpec batch_norm(double epsilon = 1e-5, double momentum = 0.1);
  static LayerSpec global_avg_pool();

  void validate() const;
};

/// Named parameters of one sub-network plus batch-norm running statistics.
/// Every trainable parameter has a same-shaped gradient slot. Registration
/// order is preserved and defines the serialization order.
class ParameterSet {
 public:
  Tensor& add(const std::string& path, Tensor init);

  bool has(const std::string& path) const;
  Tensor& param(const std::string& path);
  const Tensor& param(const std::string& path) const;
  Tensor& grad(const std::string& path);
  const Tensor& grad(const std::string& path) const;

  RunningStats& stats(const std::string& path);
  const RunningStats& stats(const std::string& path) const;
  bool has_stats(const std::string& path) const;

  const std::vector<std::string>& paths() const { return order_; }
  const std::vector<std::string>& stats_paths() const { return stats_order_; }

  std::size_t parameter_count() const;
  void zero_grads();

  /// FNV-1a over parameter and running-stat bytes; used by the freeze tests.
  std::uint64_t state_hash() const;

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
  };
  std::map<std::string, Entry> entries_;
  std::map<std::string, RunningStats> stats_;
  std::vector<std::string> order_;
  std::vector<std::string> stats_order_;
};

/// Execution switches for a layer stack pass.
struct ForwardOptions {
  bool training = false;        // batch norm: batch stats vs running stats
  bool update_bn_stats = false; // only honored when training
};

/// Binds a ParameterSet's tensors into a graph as leaves so a forward pass
/// can be differentiated and the gradients pulled back out by path.
class BoundParams {
 public:
  BoundParams(Graph& graph, ParameterSet& params, bool trainable);

  Value at(const std::string& path) const;
  ParameterSet& params() { return *params_; }
  bool trainable() const { return trainable_; }

  /// Copies gradients from the graph into the ParameterSet grad slots
  /// (accumulating, so zero_grads() first when starting a fresh step).
  void pull_gradients();

 private:
  Graph* graph_;
  ParameterSet* params_;
  bool trainable_;
  std::map<std::string, Value> values_;
};

/// Registers parameters for a layer stack under `params`, seeded and
/// deterministic: weights fan-in-scaled uniform, biases zero, gamma 1, beta 0.
/// input_shape excludes the batch axis. Returns the output sample shape.
std::vector<std::size_t> init_layer_params(const std::vector<LayerSpec>& specs,
                                           const std::vector<std::size_t>& input_shape,
                                           ParameterSet& params, Rng& rng);

/// Runs the stack inside `graph`. Shape errors are reported with the layer
/// index. The returned Value plus the graph form the tape for gradient().
Value forward_layers(Graph& graph, const std::vector<LayerSpec>& specs,
                     BoundParams& bound, Value x, const ForwardOptions& options);

/// Convenience eval-style forward that owns its graph and returns the output.
Tensor forward_layers_eval(const std::vector<LayerSpec>& specs, ParameterSet& params,
                           const Tensor& x, const ForwardOptions& options);

/// 32-bit fast path: runs the stack in float arithmetic (eval-mode batch
/// norm only). The result agrees with the 64-bit path to ~1e-3.
Tensor forward_layers_f32(const std::vector<LayerSpec>& specs, ParameterSet& params,
                          const Tensor& x);

// --- stand-alone normalization entry points ---

/// Per-sample (instance) normalization; see Graph::instance_norm for the
/// axis convention.
Tensor instance_normalize(const Tensor& x, double epsilon);

enum class NormMode { kTrain, kEval };

/// Batch normalization over a stand-alone parameter set holding
/// "gamma"/"beta" and running stats under "stats".
Tensor batch_normalize(const Tensor& x, ParameterSet& params, NormMode mode,
                       double epsilon = 1e-5, double momentum = 0.1);

}  // namespace mmfa

#endif  // MMFA_LAYERS_HPP_
