#include "mmfa/model.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mmfa/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace mmfa {

const char* input_mode_name(InputMode mode) {
  return mode == InputMode::kVector ? "vector" : "image";
}

InputMode input_mode_from_name(const std::string& name) {
  if (name == "vector") return InputMode::kVector;
  if (name == "image") return InputMode::kImage;
  throw std::invalid_argument("unknown input mode '" + name + "'");
}

std::vector<std::size_t> ModelConfig::input_shape() const {
  if (mode == InputMode::kVector) return {input_dim};
  return {image_channels, image_height, image_width};
}

void ModelConfig::validate() const {
  if (block_widths.empty()) throw std::invalid_argument("model needs at least one block");
  for (std::size_t w : block_widths) {
    if (w == 0) throw std::invalid_argument("block widths must be positive");
  }
  if (in_blocks > block_widths.size()) {
    throw std::invalid_argument("in_blocks exceeds the number of blocks");
  }
  if (hidden_dim == 0 || hidden_dim > feature_dim()) {
    throw std::invalid_argument("hidden dim must be in [1, feature dim]");
  }
  if (mode == InputMode::kVector) {
    if (input_dim == 0) throw std::invalid_argument("input dim must be positive");
  } else {
    if (image_channels == 0 || image_height == 0 || image_width == 0) {
      throw std::invalid_argument("image dims must be positive");
    }
  }
  if (identity_count < 2) throw std::invalid_argument("identity count must be >= 2");
  if (domain_count < 2) throw std::invalid_argument("domain count must be >= 2");
  if (norm_epsilon <= 0.0) throw std::invalid_argument("norm epsilon must be > 0");
  if (bn_momentum < 0.0 || bn_momentum >= 1.0) {
    throw std::invalid_argument("bn momentum must be in [0, 1)");
  }
}

void build_model_specs(ModelState& state) {
  const ModelConfig& cfg = state.config;
  state.extractor_specs.clear();

  // Backbone blocks are norm-first (norm -> linear -> relu) so the leading
  // instance norm sees the raw input and cancels per-sample styling exactly,
  // independent of trained weights and biases.
  auto norm_for_block = [&](std::size_t k) {
    if (k < cfg.in_blocks) return LayerSpec::instance_norm(cfg.norm_epsilon, false);
    return LayerSpec::batch_norm(cfg.norm_epsilon, cfg.bn_momentum);
  };

  if (cfg.mode == InputMode::kVector) {
    std::size_t cur = cfg.input_dim;
    for (std::size_t k = 0; k < cfg.block_widths.size(); ++k) {
      state.extractor_specs.push_back(norm_for_block(k));
      state.extractor_specs.push_back(LayerSpec::dense(cur, cfg.block_widths[k]));
      state.extractor_specs.push_back(LayerSpec::relu());
      cur = cfg.block_widths[k];
    }
  } else {
    std::size_t cur = cfg.image_channels;
    for (std::size_t k = 0; k < cfg.block_widths.size(); ++k) {
      state.extractor_specs.push_back(norm_for_block(k));
      state.extractor_specs.push_back(
          LayerSpec::conv2d(cur, cfg.block_widths[k], cfg.conv_kernel));
      state.extractor_specs.push_back(LayerSpec::relu());
      cur = cfg.block_widths[k];
    }
    state.extractor_specs.push_back(LayerSpec::global_avg_pool());
  }
  // feature head batch norm ("after global average pooling" in image mode)
  state.extractor_specs.push_back(LayerSpec::batch_norm(cfg.norm_epsilon, cfg.bn_momentum));

  const std::size_t f = cfg.feature_dim();
  const std::size_t h = cfg.hidden_dim;
  state.encoder_specs = {LayerSpec::dense(f, h), LayerSpec::relu()};
  state.decoder_specs = {LayerSpec::dense(h, f)};
  state.discriminator_specs = {LayerSpec::dense(h, h), LayerSpec::relu(),
                               LayerSpec::dense(h, cfg.domain_count)};
  state.identity_specs = {LayerSpec::dense(h, h), LayerSpec::relu(),
                          LayerSpec::dense(h, cfg.identity_count)};
}

ModelState init_model(const ModelConfig& config) {
  config.validate();
  ModelState state;
  state.config = config;
  build_model_specs(state);

  Rng rng(config.seed);
  const std::vector<std::size_t> out_shape = init_layer_params(
      state.extractor_specs, config.input_shape(), state.extractor, rng);
  if (out_shape != std::vector<std::size_t>{config.feature_dim()}) {
    throw std::invalid_argument("backbone output does not match feature dim");
  }
  init_layer_params(state.encoder_specs, {config.feature_dim()}, state.encoder, rng);
  init_layer_params(state.decoder_specs, {config.hidden_dim}, state.decoder, rng);
  init_layer_params(state.discriminator_specs, {config.hidden_dim}, state.discriminator,
                    rng);
  init_layer_params(state.identity_specs, {config.hidden_dim}, state.identity_head, rng);
  return state;
}

std::uint64_t ModelState::feature_path_hash() const {
  // combine sub-hashes: order matters, collisions irrelevant for tests
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (const ParameterSet* set : {&extractor, &encoder, &decoder, &identity_head}) {
    h = h * 0x100000001b3ULL ^ set->state_hash();
  }
  return h;
}

std::uint64_t ModelState::discriminator_hash() const { return discriminator.state_hash(); }

// --- ModelPass ---

ModelPass::ModelPass(ModelState& state, const Options& options)
    : state_(&state),
      options_(options),
      extractor_(graph_, state.extractor, options.grad_extractor),
      encoder_(graph_, state.encoder, options.grad_encoder),
      decoder_(graph_, state.decoder, options.grad_decoder),
      discriminator_(graph_, state.discriminator, options.grad_discriminator),
      identity_(graph_, state.identity_head, options.grad_identity_head) {}

Value ModelPass::extract(const Tensor& batch) {
  ForwardOptions fwd{options_.training, options_.training && options_.update_bn_stats};
  Value x = graph_.leaf(batch);
  return forward_layers(graph_, state_->extractor_specs, extractor_, x, fwd);
}

Value ModelPass::encode(Value features) {
  ForwardOptions fwd{options_.training, false};
  return forward_layers(graph_, state_->encoder_specs, encoder_, features, fwd);
}

Value ModelPass::decode(Value codes) {
  ForwardOptions fwd{options_.training, false};
  return forward_layers(graph_, state_->decoder_specs, decoder_, codes, fwd);
}

Value ModelPass::discriminate(Value codes) {
  ForwardOptions fwd{options_.training, false};
  return forward_layers(graph_, state_->discriminator_specs, discriminator_, codes, fwd);
}

Value ModelPass::classify(Value codes) {
  ForwardOptions fwd{options_.training, false};
  return forward_layers(graph_, state_->identity_specs, identity_, codes, fwd);
}

void ModelPass::backprop(Value loss) {
  graph_.backward(loss);
  for (BoundParams* bound :
       {&extractor_, &encoder_, &decoder_, &discriminator_, &identity_}) {
    bound->pull_gradients();
  }
}

// --- plain forwards ---

Tensor extract_features(ModelState& state, const Tensor& batch) {
  ModelPass pass(state, {});
  return pass.graph().value(pass.extract(batch));
}

Tensor extract_features_train(ModelState& state, const Tensor& batch) {
  ModelPass::Options options;
  options.training = true;
  options.update_bn_stats = false;
  ModelPass pass(state, options);
  return pass.graph().value(pass.extract(batch));
}

Tensor extract_features_f32(ModelState& state, const Tensor& batch) {
  return forward_layers_f32(state.extractor_specs, state.extractor, batch);
}

Tensor encode(ModelState& state, const Tensor& features) {
  ModelPass pass(state, {});
  return pass.graph().value(pass.encode(pass.graph().leaf(features)));
}

Tensor decode(ModelState& state, const Tensor& codes) {
  ModelPass pass(state, {});
  return pass.graph().value(pass.decode(pass.graph().leaf(codes)));
}

Tensor discriminate(ModelState& state, const Tensor& codes) {
  ModelPass pass(state, {});
  return pass.graph().value(pass.discriminate(pass.graph().leaf(codes)));
}

Tensor classify_identity(ModelState& state, const Tensor& codes) {
  ModelPass pass(state, {});
  return pass.graph().value(pass.classify(pass.graph().leaf(codes)));
}

// --- checkpoint I/O ---

namespace {

constexpr const char* kCheckpointMagic = "MMFAMODEL1";
constexpr int kCheckpointVersion = 1;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct NamedSet {
  const char* name;
  const ParameterSet* set;
};

struct MutableNamedSet {
  const char* name;
  ParameterSet* set;
};

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << " ";
    out << v[i];
  }
  return out.str();
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
  const ModelConfig& cfg = state.config;
  std::ostringstream header;
  header << kCheckpointMagic << "\n";
  header << "format_version = " << kCheckpointVersion << "\n";
  header << "mode = " << input_mode_name(cfg.mode) << "\n";
  header << "input_dim = " << cfg.input_dim << "\n";
  header << "image_channels = " << cfg.image_channels << "\n";
  header << "image_height = " << cfg.image_height << "\n";
  header << "image_width = " << cfg.image_width << "\n";
  header << "block_widths = " << join_sizes(cfg.block_widths) << "\n";
  header << "in_blocks = " << cfg.in_blocks << "\n";
  header << "hidden_dim = " << cfg.hidden_dim << "\n";
  header << "conv_kernel = " << cfg.conv_kernel << "\n";
  header << "identity_count = " << cfg.identity_count << "\n";
  header << "domain_count = " << cfg.domain_count << "\n";
  header << "seed = " << cfg.seed << "\n";
  header << "norm_epsilon = " << format_double(cfg.norm_epsilon) << "\n";
  header << "bn_momentum = " << format_double(cfg.bn_momentum) << "\n";

  const NamedSet sets[] = {{"extractor", &state.extractor},
                           {"encoder", &state.encoder},
                           {"decoder", &state.decoder},
                           {"discriminator", &state.discriminator},
                           {"identity_head", &state.identity_head}};

  std::vector<double> payload;
  for (const NamedSet& named : sets) {
    for (const std::string& p : named.set->paths()) {
      const Tensor& t = named.set->param(p);
      header << "tensor = " << named.name << " " << p << " "
             << join_sizes(t.shape()) << "\n";
      payload.insert(payload.end(), t.values().begin(), t.values().end());
    }
    for (const std::string& p : named.set->stats_paths()) {
      const RunningStats& s = named.set->stats(p);
      header << "stats = " << named.name << " " << p << " " << s.mean.size() << " "
             << s.updates << "\n";
      payload.insert(payload.end(), s.mean.values().begin(), s.mean.values().end());
      payload.insert(payload.end(), s.var.values().begin(), s.var.values().end());
    }
  }
  header << "payload_doubles = " << payload.size() << "\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint file " + path);
  const std::string header_str = header.str();
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.put('\0');
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write on checkpoint file " + path);
}

namespace {

struct HeaderLine {
  std::string key;
  std::string value;
};

HeaderLine split_header_line(const std::string& line) {
  const std::size_t eq = line.find('=');
  if (eq == std::string::npos) {
    throw std::runtime_error("checkpoint header line without '=': " + line);
  }
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    if (a == std::string::npos) return std::string();
    return s.substr(a, b - a + 1);
  };
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::size_t> out;
  std::size_t v;
  while (in >> v) out.push_back(v);
  return out;
}

}  // namespace

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file " + path);

  std::string header;
  std::getline(in, header, '\0');
  std::istringstream header_in(header);
  std::string line;
  if (!std::getline(header_in, line) || line != kCheckpointMagic) {
    throw std::runtime_error("checkpoint file " + path + ": bad magic");
  }

  ModelConfig cfg;
  // Declarations are kept in header order; the payload is laid out in
  // exactly that order.
  struct Decl {
    bool is_stats = false;
    std::string set, p;
    std::vector<std::size_t> shape;  // tensor decls
    std::size_t channels = 0;        // stats decls
    std::uint64_t updates = 0;
  };
  std::vector<Decl> decls;
  std::size_t payload_doubles = 0;
  bool saw_payload_count = false;

  while (std::getline(header_in, line)) {
    if (line.empty()) continue;
    const HeaderLine kv = split_header_line(line);
    if (kv.key == "format_version") {
      if (std::stoi(kv.value) != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint format version " + kv.value);
      }
    } else if (kv.key == "mode") {
      cfg.mode = input_mode_from_name(kv.value);
    } else if (kv.key == "input_dim") {
      cfg.input_dim = std::stoull(kv.value);
    } else if (kv.key == "image_channels") {
      cfg.image_channels = std::stoull(kv.value);
    } else if (kv.key == "image_height") {
      cfg.image_height = std::stoull(kv.value);
    } else if (kv.key == "image_width") {
      cfg.image_width = std::stoull(kv.value);
    } else if (kv.key == "block_widths") {
      cfg.block_widths = parse_sizes(kv.value);
    } else if (kv.key == "in_blocks") {
      cfg.in_blocks = std::stoull(kv.value);
    } else if (kv.key == "hidden_dim") {
      cfg.hidden_dim = std::stoull(kv.value);
    } else if (kv.key == "conv_kernel") {
      cfg.conv_kernel = std::stoull(kv.value);
    } else if (kv.key == "identity_count") {
      cfg.identity_count = std::stoull(kv.value);
    } else if (kv.key == "domain_count") {
      cfg.domain_count = std::stoull(kv.value);
    } else if (kv.key == "seed") {
      cfg.seed = std::stoull(kv.value);
    } else if (kv.key == "norm_epsilon") {
      cfg.norm_epsilon = std::stod(kv.value);
    } else if (kv.key == "bn_momentum") {
      cfg.bn_momentum = std::stod(kv.value);
    } else if (kv.key == "tensor") {
      std::istringstream v(kv.value);
      Decl d;
      v >> d.set >> d.p;
      std::size_t dim;
      while (v >> dim) d.shape.push_back(dim);
      decls.push_back(std::move(d));
    } else if (kv.key == "stats") {
      std::istringstream v(kv.value);
      Decl d;
      d.is_stats = true;
      v >> d.set >> d.p >> d.channels >> d.updates;
      decls.push_back(std::move(d));
    } else if (kv.key == "payload_doubles") {
      payload_doubles = std::stoull(kv.value);
      saw_payload_count = true;
    } else {
      throw std::runtime_error("checkpoint header: unknown key '" + kv.key + "'");
    }
  }
  if (!saw_payload_count) {
    throw std::runtime_error("checkpoint file " + path + ": missing payload_doubles");
  }

  std::vector<double> payload(payload_doubles);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload_doubles * sizeof(double)));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != payload_doubles * sizeof(double)) {
    std::ostringstream msg;
    msg << "checkpoint file " << path << ": truncated payload (expected "
        << payload_doubles * sizeof(double) << " bytes, got " << got << ")";
    throw std::runtime_error(msg.str());
  }

  ModelState state = init_model(cfg);
  MutableNamedSet sets[] = {{"extractor", &state.extractor},
                            {"encoder", &state.encoder},
                            {"decoder", &state.decoder},
                            {"discriminator", &state.discriminator},
                            {"identity_head", &state.identity_head}};
  auto set_by_name = [&](const std::string& name) -> ParameterSet& {
    for (MutableNamedSet& named : sets) {
      if (name == named.name) return *named.set;
    }
    throw std::runtime_error("checkpoint references unknown network '" + name + "'");
  };

  std::size_t offset = 0;
  auto take = [&](std::size_t count) {
    if (offset + count > payload.size()) {
      throw std::runtime_error("checkpoint payload shorter than tensor table");
    }
    const double* p = payload.data() + offset;
    offset += count;
    return p;
  };

  for (const Decl& d : decls) {
    ParameterSet& set = set_by_name(d.set);
    if (!d.is_stats) {
      Tensor& t = set.param(d.p);
      if (t.shape() != d.shape) {
        throw std::runtime_error("checkpoint tensor shape mismatch for " + d.set + "." + d.p);
      }
      const double* src = take(t.size());
      std::memcpy(t.data(), src, t.size() * sizeof(double));
    } else {
      RunningStats& s = set.stats(d.p);
      if (s.mean.size() != d.channels) {
        throw std::runtime_error("checkpoint stats shape mismatch for " + d.set + "." + d.p);
      }
      const double* mean = take(d.channels);
      std::memcpy(s.mean.data(), mean, d.channels * sizeof(double));
      const double* var = take(d.channels);
      std::memcpy(s.var.data(), var, d.channels * sizeof(double));
      s.updates = d.updates;
    }
  }
  if (offset != payload.size()) {
    throw std::runtime_error("checkpoint payload longer than tensor table");
  }
  return state;
}

}  // namespace mmfa
