#include "mmfa/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mmfa/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset payload assumes a little-endian host");

namespace mmfa {

const char* data_mode_name(DataMode mode) {
  return mode == DataMode::kVector ? "vector" : "image";
}

DataMode data_mode_from_name(const std::string& name) {
  if (name == "vector") return DataMode::kVector;
  if (name == "image") return DataMode::kImage;
  throw std::invalid_argument("unknown data mode '" + name + "'");
}

std::size_t SynthConfig::feature_count() const {
  return mode == DataMode::kVector ? dim : channels * height * width;
}

std::vector<std::size_t> SynthConfig::sample_shape() const {
  if (mode == DataMode::kVector) return {dim};
  return {channels, height, width};
}

void SynthConfig::validate() const {
  if (train_domains < 2) throw std::invalid_argument("need at least 2 training domains");
  if (identities_per_domain < 2) throw std::invalid_argument("need >= 2 identities per domain");
  if (samples_per_identity < 2) {
    throw std::invalid_argument("need >= 2 samples per identity (probe + gallery views)");
  }
  if (feature_count() == 0) throw std::invalid_argument("sample dims must be positive");
  if (prototype_spread <= 0.0) throw std::invalid_argument("prototype spread must be > 0");
  if (view_sigma < 0.0 || noise_sigma < 0.0 || style_jitter < 0.0) {
    throw std::invalid_argument("noise magnitudes must be >= 0");
  }
  if (mixing_strength < 0.0) throw std::invalid_argument("mixing strength must be >= 0");
  if (shot_sigma < 0.0 || unseen_shot_sigma < 0.0) {
    throw std::invalid_argument("shot sigmas must be >= 0");
  }
}

Tensor Dataset::gather(const std::vector<std::size_t>& rows) const {
  const std::size_t step = sample_size();
  std::vector<std::size_t> shape{rows.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= size()) throw std::invalid_argument("sample index out of range");
    const float* src = values.data() + rows[r] * step;
    double* dst = out.data() + r * step;
    for (std::size_t i = 0; i < step; ++i) dst[i] = static_cast<double>(src[i]);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of_domain(int domain) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (domains[i] == domain) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (domains[i] != holdout_domain) out.push_back(i);
  }
  return out;
}

std::size_t Dataset::train_identity_count() const {
  std::set<int> ids;
  for (std::size_t i = 0; i < size(); ++i) {
    if (domains[i] != holdout_domain) ids.insert(identities[i]);
  }
  return ids.size();
}

std::size_t Dataset::train_domain_count() const {
  std::set<int> doms;
  for (int d : domains) {
    if (d != holdout_domain) doms.insert(d);
  }
  return doms.size();
}

void Dataset::validate() const {
  if (domain_count == 0) throw std::runtime_error("dataset validation error: domain count is 0");
  if (identities.size() != domains.size()) {
    throw std::runtime_error("dataset validation error: label table sizes disagree");
  }
  if (values.size() != size() * sample_size()) {
    throw std::runtime_error("dataset validation error: value count does not match samples");
  }
  if (domain_names.size() != domain_count) {
    throw std::runtime_error("dataset validation error: domain name count mismatch");
  }
  for (int d : domains) {
    if (d < 0 || static_cast<std::size_t>(d) >= domain_count) {
      throw std::runtime_error("dataset validation error: domain label out of range");
    }
  }
  for (int id : identities) {
    if (id < 0 || static_cast<std::size_t>(id) >= identity_count) {
      throw std::runtime_error("dataset validation error: identity label out of range");
    }
  }
}

namespace {

// cond(I + s*G) <= (1 + s||G||_F)/(1 - s||G||_F) when s||G||_F < 1, so
// keeping s||G||_F <= 0.5 bounds the condition number by 3.
std::vector<double> draw_mixing(std::size_t dim, double strength, Rng& rng) {
  const double scale = strength / std::sqrt(static_cast<double>(dim));
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<double> g(dim * dim);
    double frob = 0.0;
    for (double& v : g) {
      v = scale * rng.normal();
      frob += v * v;
    }
    if (std::sqrt(frob) > 0.5) continue;
    std::vector<double> m(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) m[i * dim + j] = g[i * dim + j];
      m[i * dim + i] += 1.0;
    }
    return m;
  }
  throw std::runtime_error("could not draw a well-conditioned mixing matrix");
}

DomainSpec make_domain_style(const SynthConfig& cfg, std::size_t domain, bool holdout,
                             Rng& rng) {
  DomainSpec spec;
  spec.domain_id = static_cast<int>(domain);
  spec.noise_sigma = cfg.noise_sigma;

  const std::size_t k = cfg.train_domains;
  double log_gain, offset;
  if (!holdout) {
    const double t = k > 1 ? static_cast<double>(domain) / static_cast<double>(k - 1) : 0.5;
    log_gain = -cfg.style_log_gain_range + 2.0 * cfg.style_log_gain_range * t;
    offset = (static_cast<double>(domain) - static_cast<double>(k - 1) / 2.0) *
             cfg.style_offset_step;
  } else {
    // outside the training style range: larger gain, offset above the maximum
    log_gain = cfg.style_log_gain_range + cfg.unseen_gain_boost;
    offset = (static_cast<double>(k - 1) / 2.0) * cfg.style_offset_step +
             cfg.unseen_offset_boost;
  }

  // Per-channel style in image mode, per-feature in vector mode. The scalar
  // part is removable by per-sample normalization; the jitter is not.
  const std::size_t style_dims =
      cfg.mode == DataMode::kVector ? cfg.dim : cfg.channels;
  spec.gain.resize(style_dims);
  spec.bias.resize(style_dims);
  for (std::size_t f = 0; f < style_dims; ++f) {
    spec.gain[f] = std::exp(log_gain + cfg.style_jitter * rng.normal());
    spec.bias[f] = offset + cfg.style_jitter * rng.normal();
  }
  if (cfg.style_mixing && cfg.mode == DataMode::kVector) {
    spec.mixing = draw_mixing(cfg.dim, cfg.mixing_strength, rng);
  }
  return spec;
}

void apply_style(const SynthConfig& cfg, const DomainSpec& spec, double shot_sigma,
                 const std::vector<double>& raw, std::vector<double>& out, Rng& rng) {
  const std::size_t n = raw.size();
  out.resize(n);
  if (cfg.mode == DataMode::kVector) {
    std::vector<double> gained(n);
    for (std::size_t f = 0; f < n; ++f) gained[f] = spec.gain[f] * raw[f];
    if (!spec.mixing.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += spec.mixing[i * n + j] * gained[j];
        out[i] = acc;
      }
    } else {
      out = gained;
    }
    for (std::size_t f = 0; f < n; ++f) out[f] += spec.bias[f];
  } else {
    const std::size_t spatial = cfg.height * cfg.width;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      for (std::size_t s = 0; s < spatial; ++s) {
        out[c * spatial + s] = spec.gain[c] * raw[c * spatial + s] + spec.bias[c];
      }
    }
  }
  // per-shot scalar affine drift; removable per sample, unlike the noise
  // below. Draws are clipped at 2 sigma, as exposure drift is bounded.
  const double shot_gain = std::exp(shot_sigma * std::clamp(rng.normal(), -2.0, 2.0));
  const double shot_offset = shot_sigma * std::clamp(rng.normal(), -2.0, 2.0);
  for (std::size_t f = 0; f < n; ++f) {
    out[f] = shot_gain * out[f] + shot_offset + spec.noise_sigma * rng.normal();
  }
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Dataset data;
  data.mode = cfg.mode;
  data.sample_shape = cfg.sample_shape();
  data.seed = cfg.seed;
  data.domain_count = cfg.train_domains + 1;
  data.holdout_domain = static_cast<int>(cfg.train_domains);
  data.identity_count = data.domain_count * cfg.identities_per_domain;
  for (std::size_t d = 0; d < cfg.train_domains; ++d) {
    data.domain_names.push_back("dom" + std::to_string(d));
  }
  data.domain_names.push_back("unseen");

  const std::size_t features = cfg.feature_count();
  const std::size_t total_samples =
      data.domain_count * cfg.identities_per_domain * cfg.samples_per_identity;
  data.values.reserve(total_samples * features);
  data.identities.reserve(total_samples);
  data.domains.reserve(total_samples);

  Rng rng(cfg.seed);
  std::vector<double> raw(features), styled(features);
  for (std::size_t d = 0; d < data.domain_count; ++d) {
    const bool holdout = d == cfg.train_domains;
    const DomainSpec spec = make_domain_style(cfg, d, holdout, rng);
    const double shot_sigma = holdout ? cfg.unseen_shot_sigma : cfg.shot_sigma;
    for (std::size_t i = 0; i < cfg.identities_per_domain; ++i) {
      const int identity = static_cast<int>(d * cfg.identities_per_domain + i);
      std::vector<double> prototype(features);
      for (double& v : prototype) v = cfg.prototype_spread * rng.normal();
      for (std::size_t s = 0; s < cfg.samples_per_identity; ++s) {
        for (std::size_t f = 0; f < features; ++f) {
          raw[f] = prototype[f] + cfg.view_sigma * rng.normal();
        }
        apply_style(cfg, spec, shot_sigma, raw, styled, rng);
        for (double v : styled) data.values.push_back(static_cast<float>(v));
        data.identities.push_back(identity);
        data.domains.push_back(static_cast<int>(d));
      }
    }
  }
  data.validate();
  return data;
}

// --- file format ---

namespace {

constexpr const char* kDatasetMagic = "MMFA1";
constexpr int kDatasetVersion = 1;

}  // namespace

void write_dataset(const Dataset& data, const std::string& path) {
  data.validate();
  std::ostringstream header;
  header << kDatasetMagic << "\n";
  header << "format_version = " << kDatasetVersion << "\n";
  header << "mode = " << data_mode_name(data.mode) << "\n";
  header << "sample_shape =";
  for (std::size_t d : data.sample_shape) header << " " << d;
  header << "\n";
  header << "sample_count = " << data.size() << "\n";
  header << "domain_count = " << data.domain_count << "\n";
  header << "holdout_domain = " << data.holdout_domain << "\n";
  header << "domain_names =";
  for (const std::string& name : data.domain_names) header << " " << name;
  header << "\n";
  header << "identity_count = " << data.identity_count << "\n";
  header << "seed = " << data.seed << "\n";
  header << "samples =";
  for (std::size_t i = 0; i < data.size(); ++i) {
    header << " " << data.identities[i] << ":" << data.domains[i];
  }
  header << "\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  const std::string header_str = header.str();
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.put('\0');
  out.write(reinterpret_cast<const char*>(data.values.data()),
            static_cast<std::streamsize>(data.values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write on dataset file " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);

  std::string header;
  std::getline(in, header, '\0');
  std::istringstream header_in(header);
  std::string line;
  if (!std::getline(header_in, line) || line != kDatasetMagic) {
    throw std::runtime_error("dataset file " + path + ": bad magic");
  }

  Dataset data;
  std::size_t sample_count = 0;
  bool saw_samples = false;
  while (std::getline(header_in, line)) {
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("dataset header line without '=': " + line);
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      if (a == std::string::npos) return std::string();
      return s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "format_version") {
      if (std::stoi(value) != kDatasetVersion) {
        throw std::runtime_error("unsupported dataset format version " + value);
      }
    } else if (key == "mode") {
      data.mode = data_mode_from_name(value);
    } else if (key == "sample_shape") {
      std::istringstream v(value);
      std::size_t dim;
      data.sample_shape.clear();
      while (v >> dim) data.sample_shape.push_back(dim);
    } else if (key == "sample_count") {
      sample_count = std::stoull(value);
    } else if (key == "domain_count") {
      data.domain_count = std::stoull(value);
    } else if (key == "holdout_domain") {
      data.holdout_domain = std::stoi(value);
    } else if (key == "domain_names") {
      std::istringstream v(value);
      std::string name;
      while (v >> name) data.domain_names.push_back(name);
    } else if (key == "identity_count") {
      data.identity_count = std::stoull(value);
    } else if (key == "seed") {
      data.seed = std::stoull(value);
    } else if (key == "samples") {
      std::istringstream v(value);
      std::string pair;
      while (v >> pair) {
        const std::size_t colon = pair.find(':');
        if (colon == std::string::npos) {
          throw std::runtime_error("dataset sample table entry without ':': " + pair);
        }
        data.identities.push_back(std::stoi(pair.substr(0, colon)));
        data.domains.push_back(std::stoi(pair.substr(colon + 1)));
      }
      saw_samples = true;
    } else {
      throw std::runtime_error("dataset header: unknown key '" + key + "'");
    }
  }
  if (!saw_samples || data.identities.size() != sample_count) {
    std::ostringstream msg;
    msg << "dataset file " << path << ": header/payload inconsistency (sample table has "
        << data.identities.size() << " entries, header declares " << sample_count << ")";
    throw std::runtime_error(msg.str());
  }

  const std::size_t expected_bytes = sample_count * data.sample_size() * sizeof(float);
  data.values.resize(sample_count * data.sample_size());
  in.read(reinterpret_cast<char*>(data.values.data()),
          static_cast<std::streamsize>(expected_bytes));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got < expected_bytes) {
    std::ostringstream msg;
    msg << "dataset file " << path << ": truncated payload (expected " << expected_bytes
        << " bytes, got " << got << ")";
    throw std::runtime_error(msg.str());
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw std::runtime_error("dataset file " + path + ": payload longer than header declares");
  }
  data.validate();
  return data;
}

EvalSplit make_eval_split(const Dataset& data, int domain, std::uint64_t trial_seed) {
  const std::vector<std::size_t> rows = data.indices_of_domain(domain);
  if (rows.empty()) throw std::invalid_argument("eval split: domain has no samples");

  std::map<int, std::vector<std::size_t>> by_identity;
  for (std::size_t r : rows) by_identity[data.identities[r]].push_back(r);

  Rng rng(trial_seed);
  EvalSplit split;
  for (auto& [identity, samples] : by_identity) {
    if (samples.size() < 2) {
      throw std::invalid_argument("eval split: identity " + std::to_string(identity) +
                                  " has fewer than 2 samples");
    }
    rng.shuffle(samples);
    split.probe.push_back(samples[0]);
    split.gallery.push_back(samples[1]);
  }
  return split;
}

}  // namespace mmfa
