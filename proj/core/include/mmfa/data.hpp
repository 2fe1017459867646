#ifndef MMFA_DATA_HPP_
#define MMFA_DATA_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mmfa/tensor.hpp"

namespace mmfa {

enum class DataMode { kVector, kImage };

/// One domain's style: per-channel (image) or per-feature (vector) affine
/// gain/bias, an optional full-rank mixing matrix, and sensor noise.
struct DomainSpec {
  int domain_id = 0;
  std::vector<double> gain;    // positive, per channel/feature
  std::vector<double> bias;    // per channel/feature
  std::vector<double> mixing;  // row-major square matrix; empty = identity
  double noise_sigma = 0.0;
};

/// Generator configuration. Each training domain draws fresh identities
/// (identity index spaces are disjoint across domains); the held-out domain
/// gets both fresh identities and a style outside the training style range.
struct SynthConfig {
  std::size_t train_domains = 3;          // K_train; one extra held-out domain
  std::size_t identities_per_domain = 20; // I
  std::size_t samples_per_identity = 4;   // m, >= 2 (probe + gallery views)
  DataMode mode = DataMode::kVector;
  std::size_t dim = 16;  // vector mode
  std::size_t channels = 1, height = 8, width = 8;

  double prototype_spread = 1.2;  // identity content scale
  double view_sigma = 0.3;        // within-identity view noise
  double noise_sigma = 0.05;      // sensor noise after styling

  // Style layout: training domains get scalar log-gains evenly spaced in
  // [-style_log_gain_range, +range] and scalar offsets spaced by
  // style_offset_step; per-feature jitter is added on top. The held-out
  // domain sits outside both training ranges.
  double style_log_gain_range = 0.35;
  double style_offset_step = 1.5;
  double style_jitter = 0.15;
  bool style_mixing = false;
  double mixing_strength = 0.1;
  double unseen_gain_boost = 0.2;
  double unseen_offset_boost = 0.5;
  // Shot-level style: every sample additionally gets its own scalar affine
  // (log-gain and offset with this spread) on top of the domain style, the
  // per-sample analogue of exposure/contrast drift between shots. The
  // held-out camera is less stable than the source ones.
  double shot_sigma = 0.3;
  double unseen_shot_sigma = 1.0;

  std::uint64_t seed = 7;

  std::size_t feature_count() const;
  std::vector<std::size_t> sample_shape() const;
  void validate() const;
};

/// In-memory multi-domain corpus. Values are stored in 32-bit floats (the
/// file payload precision); compute paths widen to 64-bit on batch assembly.
struct Dataset {
  DataMode mode = DataMode::kVector;
  std::vector<std::size_t> sample_shape;  // {d} or {c, h, w}
  std::vector<float> values;              // sample_count x sample_size
  std::vector<int> identities;
  std::vector<int> domains;
  std::size_t domain_count = 0;  // including the held-out domain
  int holdout_domain = -1;
  std::vector<std::string> domain_names;
  std::size_t identity_count = 0;
  std::uint64_t seed = 0;

  std::size_t sample_size() const { return shape_product(sample_shape); }
  std::size_t size() const { return identities.size(); }

  /// Batch tensor [k, ...sample_shape] in 64-bit for the given sample rows.
  Tensor gather(const std::vector<std::size_t>& rows) const;
  std::vector<std::size_t> indices_of_domain(int domain) const;
  std::vector<std::size_t> train_indices() const;  // all rows outside holdout
  std::size_t train_identity_count() const;
  std::size_t train_domain_count() const;

  void validate() const;
};

Dataset generate_synthetic(const SynthConfig& config);

/// Bit-exact file format: magic "MMFA1", text header, zero byte, float32
/// little-endian payload. write then read is the identity on the in-memory
/// dataset; read validates magic, header consistency, and payload length
/// with distinct errors.
void write_dataset(const Dataset& data, const std::string& path);
Dataset read_dataset(const std::string& path);

/// Single-shot probe/gallery split of one domain: per identity one probe and
/// one gallery sample, disjoint, chosen by the trial seed.
struct EvalSplit {
  std::vector<std::size_t> probe;
  std::vector<std::size_t> gallery;
};
EvalSplit make_eval_split(const Dataset& data, int domain, std::uint64_t trial_seed);

const char* data_mode_name(DataMode mode);
DataMode data_mode_from_name(const std::string& name);

}  // namespace mmfa

#endif  // MMFA_DATA_HPP_
