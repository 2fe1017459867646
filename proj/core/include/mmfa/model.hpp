#ifndef MMFA_MODEL_HPP_
#define MMFA_MODEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mmfa/layers.hpp"

namespace mmfa {

enum class InputMode { kVector, kImage };

/// Architecture of the full network: feature extractor E (backbone with
/// instance norm in the leading blocks, batch norm in the rest and after the
/// feature head), encoder Q, decoder P, domain discriminator D, and the
/// identity classification head. The hidden code H = Q(E(x)) is the
/// representation used by every loss and by retrieval.
struct ModelConfig {
  InputMode mode = InputMode::kVector;
  std::size_t input_dim = 16;  // vector mode
  std::size_t image_channels = 1, image_height = 8, image_width = 8;

  std::vector<std::size_t> block_widths{32, 32, 32};  // dense widths / conv channels
  std::size_t in_blocks = 2;  // leading blocks normalized per sample
  std::size_t hidden_dim = 16;
  std::size_t conv_kernel = 3;

  std::size_t identity_count = 0;  // C, usually derived from the dataset
  std::size_t domain_count = 0;    // K (training domains)

  std::uint64_t seed = 1;
  double norm_epsilon = 1e-5;
  double bn_momentum = 0.1;  // weight kept on the old running statistic

  std::size_t feature_dim() const { return block_widths.back(); }
  std::vector<std::size_t> input_shape() const;  // sample shape without batch
  void validate() const;
};

struct ModelState {
  ModelConfig config;
  ParameterSet extractor;      // E
  ParameterSet encoder;        // Q
  ParameterSet decoder;        // P
  ParameterSet discriminator;  // D
  ParameterSet identity_head;

  std::vector<LayerSpec> extractor_specs;
  std::vector<LayerSpec> encoder_specs;
  std::vector<LayerSpec> decoder_specs;
  std::vector<LayerSpec> discriminator_specs;
  std::vector<LayerSpec> identity_specs;

  /// Hash over E, Q, P and identity-head parameters and running stats.
  std::uint64_t feature_path_hash() const;
  /// Hash over discriminator parameters.
  std::uint64_t discriminator_hash() const;
};

/// Deterministic seeded initialization: fan-in-scaled uniform weights, zero
/// biases, gamma 1 / beta 0, running stats (0, 1) so fresh models evaluate.
ModelState init_model(const ModelConfig& config);

/// Builds the per-subnetwork layer lists for a validated config.
void build_model_specs(ModelState& state);

/// One differentiable pass over the full network. Binds the five parameter
/// sets into a graph; sub-network outputs are built on demand.
class ModelPass {
 public:
  struct Options {
    bool training = false;
    bool update_bn_stats = false;
    bool grad_extractor = false;
    bool grad_encoder = false;
    bool grad_decoder = false;
    bool grad_discriminator = false;
    bool grad_identity_head = false;
  };

  ModelPass(ModelState& state, const Options& options);

  Graph& graph() { return graph_; }
  ModelState& state() { return *state_; }

  Value extract(const Tensor& batch);  // X = E(batch)
  Value encode(Value features);        // H = Q(X)
  Value decode(Value codes);           // X_rec = P(H)
  Value discriminate(Value codes);     // domain logits = D(H)
  Value classify(Value codes);         // identity logits

  /// backward() then copy gradients of every grad-enabled set into its slots.
  void backprop(Value loss);

 private:
  ModelState* state_;
  Options options_;
  Graph graph_;
  BoundParams extractor_;
  BoundParams encoder_;
  BoundParams decoder_;
  BoundParams discriminator_;
  BoundParams identity_;
};

// Eval-mode conveniences (running statistics, no gradients).
Tensor extract_features(ModelState& state, const Tensor& batch);
/// Train-mode forward without running-stat updates, for inspection.
Tensor extract_features_train(ModelState& state, const Tensor& batch);
/// 32-bit fast path for feature extraction; agrees with the 64-bit path to
/// about 1e-3.
Tensor extract_features_f32(ModelState& state, const Tensor& batch);
Tensor encode(ModelState& state, const Tensor& features);
Tensor decode(ModelState& state, const Tensor& codes);
Tensor discriminate(ModelState& state, const Tensor& codes);
Tensor classify_identity(ModelState& state, const Tensor& codes);

/// Checkpoint: text header (magic, format version, config, tensor table)
/// then a zero byte and a little-endian float64 payload in declared order.
/// save(load(f)) is byte-identical to f.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

const char* input_mode_name(InputMode mode);
InputMode input_mode_from_name(const std::string& name);

}  // namespace mmfa

#endif  // MMFA_MODEL_HPP_
