#include "mmfa/runconfig.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace mmfa {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true/false, got '" + s + "'");
}

std::size_t parse_size(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("expected integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("expected number, got '" + s + "'");
  return v;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::istringstream in(s);
  std::vector<T> out;
  std::string tok;
  while (in >> tok) out.push_back(parse(tok));
  if (out.empty()) throw std::invalid_argument("expected non-empty list");
  return out;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v, std::string (*fmt)(T)) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << " ";
    out << fmt(v[i]);
  }
  return out.str();
}

std::string fmt_size(std::size_t v) { return std::to_string(v); }

struct SchemaEntry {
  const char* key;
  const char* description;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<SchemaEntry>& schema() {
  static const std::vector<SchemaEntry> entries = {
      // --- model ---
      {"model.mode", "input mode: vector | image",
       [](const RunConfig& c) { return std::string(input_mode_name(c.model.mode)); },
       [](RunConfig& c, const std::string& v) { c.model.mode = input_mode_from_name(v); }},
      {"model.input_dim", "feature dimension of vector-mode inputs",
       [](const RunConfig& c) { return fmt_size(c.model.input_dim); },
       [](RunConfig& c, const std::string& v) { c.model.input_dim = parse_size(v); }},
      {"model.image_channels", "image-mode channels",
       [](const RunConfig& c) { return fmt_size(c.model.image_channels); },
       [](RunConfig& c, const std::string& v) { c.model.image_channels = parse_size(v); }},
      {"model.image_height", "image-mode height",
       [](const RunConfig& c) { return fmt_size(c.model.image_height); },
       [](RunConfig& c, const std::string& v) { c.model.image_height = parse_size(v); }},
      {"model.image_width", "image-mode width",
       [](const RunConfig& c) { return fmt_size(c.model.image_width); },
       [](RunConfig& c, const std::string& v) { c.model.image_width = parse_size(v); }},
      {"model.block_widths", "backbone block widths (dense) or channels (conv)",
       [](const RunConfig& c) { return fmt_list(c.model.block_widths, fmt_size); },
       [](RunConfig& c, const std::string& v) {
         c.model.block_widths = parse_list<std::size_t>(v, parse_size);
       }},
      {"model.in_blocks", "leading backbone blocks normalized per sample",
       [](const RunConfig& c) { return fmt_size(c.model.in_blocks); },
       [](RunConfig& c, const std::string& v) { c.model.in_blocks = parse_size(v); }},
      {"model.hidden_dim", "hidden code dimension (the retrieval representation)",
       [](const RunConfig& c) { return fmt_size(c.model.hidden_dim); },
       [](RunConfig& c, const std::string& v) { c.model.hidden_dim = parse_size(v); }},
      {"model.conv_kernel", "conv kernel size in image mode (<= 5)",
       [](const RunConfig& c) { return fmt_size(c.model.conv_kernel); },
       [](RunConfig& c, const std::string& v) { c.model.conv_kernel = parse_size(v); }},
      {"model.identity_count", "identity classes; 0 = derive from the dataset",
       [](const RunConfig& c) { return fmt_size(c.model.identity_count); },
       [](RunConfig& c, const std::string& v) { c.model.identity_count = parse_size(v); }},
      {"model.domain_count", "training domains; 0 = derive from the dataset",
       [](const RunConfig& c) { return fmt_size(c.model.domain_count); },
       [](RunConfig& c, const std::string& v) { c.model.domain_count = parse_size(v); }},
      {"model.seed", "parameter initialization seed",
       [](const RunConfig& c) { return std::to_string(c.model.seed); },
       [](RunConfig& c, const std::string& v) { c.model.seed = std::stoull(v); }},
      {"model.norm_epsilon", "epsilon inside instance/batch normalization",
       [](const RunConfig& c) { return fmt_double(c.model.norm_epsilon); },
       [](RunConfig& c, const std::string& v) { c.model.norm_epsilon = parse_double(v); }},
      {"model.bn_momentum", "weight kept on the previous running statistic",
       [](const RunConfig& c) { return fmt_double(c.model.bn_momentum); },
       [](RunConfig& c, const std::string& v) { c.model.bn_momentum = parse_double(v); }},

      // --- train ---
      {"train.lambda_triplet", "weight of the triplet loss",
       [](const RunConfig& c) { return fmt_double(c.train.lambda_triplet); },
       [](RunConfig& c, const std::string& v) { c.train.lambda_triplet = parse_double(v); }},
      {"train.lambda_reconstruction", "weight of the reconstruction loss",
       [](const RunConfig& c) { return fmt_double(c.train.lambda_reconstruction); },
       [](RunConfig& c, const std::string& v) {
         c.train.lambda_reconstruction = parse_double(v);
       }},
      {"train.lambda_mmd", "weight of the kernel distribution-alignment loss",
       [](const RunConfig& c) { return fmt_double(c.train.lambda_mmd); },
       [](RunConfig& c, const std::string& v) { c.train.lambda_mmd = parse_double(v); }},
      {"train.lambda_adversarial", "weight of the domain-adversarial loss",
       [](const RunConfig& c) { return fmt_double(c.train.lambda_adversarial); },
       [](RunConfig& c, const std::string& v) {
         c.train.lambda_adversarial = parse_double(v);
       }},
      {"train.margin", "triplet distance margin",
       [](const RunConfig& c) { return fmt_double(c.train.margin); },
       [](RunConfig& c, const std::string& v) { c.train.margin = parse_double(v); }},
      {"train.mmd_bandwidths", "RBF kernel bandwidths",
       [](const RunConfig& c) { return fmt_list(c.train.kernel.bandwidths, fmt_double); },
       [](RunConfig& c, const std::string& v) {
         c.train.kernel.bandwidths = parse_list<double>(v, parse_double);
       }},
      {"train.mmd_combine", "multi-bandwidth combination: mean | sum",
       [](const RunConfig& c) {
         return std::string(c.train.kernel.combine == KernelSpec::Combine::kMean ? "mean"
                                                                                 : "sum");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "mean") {
           c.train.kernel.combine = KernelSpec::Combine::kMean;
         } else if (v == "sum") {
           c.train.kernel.combine = KernelSpec::Combine::kSum;
         } else {
           throw std::invalid_argument("expected mean|sum, got '" + v + "'");
         }
       }},
      {"train.mmd_form", "per-pair regularizer power: squared | root",
       [](const RunConfig& c) {
         return std::string(c.train.mmd_form == MmdForm::kSquared ? "squared" : "root");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "squared") {
           c.train.mmd_form = MmdForm::kSquared;
         } else if (v == "root") {
           c.train.mmd_form = MmdForm::kRoot;
         } else {
           throw std::invalid_argument("expected squared|root, got '" + v + "'");
         }
       }},
      {"train.epochs", "training epochs",
       [](const RunConfig& c) { return fmt_size(c.train.epochs); },
       [](RunConfig& c, const std::string& v) { c.train.epochs = parse_size(v); }},
      {"train.batch_p", "identities per batch (PK sampling)",
       [](const RunConfig& c) { return fmt_size(c.train.batch_p); },
       [](RunConfig& c, const std::string& v) { c.train.batch_p = parse_size(v); }},
      {"train.batch_k", "samples per identity per batch (PK sampling)",
       [](const RunConfig& c) { return fmt_size(c.train.batch_k); },
       [](RunConfig& c, const std::string& v) { c.train.batch_k = parse_size(v); }},
      {"train.base_lr", "base learning rate",
       [](const RunConfig& c) { return fmt_double(c.train.base_lr); },
       [](RunConfig& c, const std::string& v) { c.train.base_lr = parse_double(v); }},
      {"train.warmup_epochs", "linear warm-up length in epochs",
       [](const RunConfig& c) { return fmt_size(c.train.warmup_epochs); },
       [](RunConfig& c, const std::string& v) { c.train.warmup_epochs = parse_size(v); }},
      {"train.decay_epochs", "epochs at which the rate is multiplied by decay_factor",
       [](const RunConfig& c) { return fmt_list(c.train.decay_epochs, fmt_size); },
       [](RunConfig& c, const std::string& v) {
         c.train.decay_epochs = parse_list<std::size_t>(v, parse_size);
       }},
      {"train.decay_factor", "staircase factor (0.1 default; 0.9 for the literal reading)",
       [](const RunConfig& c) { return fmt_double(c.train.decay_factor); },
       [](RunConfig& c, const std::string& v) { c.train.decay_factor = parse_double(v); }},
      {"train.discriminator_steps", "discriminator updates per iteration",
       [](const RunConfig& c) { return fmt_size(c.train.discriminator_steps); },
       [](RunConfig& c, const std::string& v) {
         c.train.discriminator_steps = parse_size(v);
       }},
      {"train.seed", "batch sampling seed",
       [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& v) { c.train.seed = std::stoull(v); }},
      {"train.checkpoint_every", "checkpoint cadence in epochs (0 = final only)",
       [](const RunConfig& c) { return fmt_size(c.train.checkpoint_every); },
       [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = parse_size(v); }},
      {"train.use_in", "ablation toggle: per-sample normalization in early blocks",
       [](const RunConfig& c) { return fmt_bool(c.train.use_in); },
       [](RunConfig& c, const std::string& v) { c.train.use_in = parse_bool(v); }},
      {"train.use_triplet", "ablation toggle: triplet loss",
       [](const RunConfig& c) { return fmt_bool(c.train.use_triplet); },
       [](RunConfig& c, const std::string& v) { c.train.use_triplet = parse_bool(v); }},
      {"train.use_aae", "ablation toggle: auto-encoder + adversarial training",
       [](const RunConfig& c) { return fmt_bool(c.train.use_aae); },
       [](RunConfig& c, const std::string& v) { c.train.use_aae = parse_bool(v); }},
      {"train.use_mmd", "ablation toggle: kernel distribution alignment",
       [](const RunConfig& c) { return fmt_bool(c.train.use_mmd); },
       [](RunConfig& c, const std::string& v) { c.train.use_mmd = parse_bool(v); }},
      {"train.write_step_log", "also write steps.csv during training",
       [](const RunConfig& c) { return fmt_bool(c.train.write_step_log); },
       [](RunConfig& c, const std::string& v) { c.train.write_step_log = parse_bool(v); }},

      // --- data ---
      {"data.train_domains", "number of source domains",
       [](const RunConfig& c) { return fmt_size(c.data.train_domains); },
       [](RunConfig& c, const std::string& v) { c.data.train_domains = parse_size(v); }},
      {"data.identities_per_domain", "identities per domain",
       [](const RunConfig& c) { return fmt_size(c.data.identities_per_domain); },
       [](RunConfig& c, const std::string& v) {
         c.data.identities_per_domain = parse_size(v);
       }},
      {"data.samples_per_identity", "views per identity (>= 2)",
       [](const RunConfig& c) { return fmt_size(c.data.samples_per_identity); },
       [](RunConfig& c, const std::string& v) {
         c.data.samples_per_identity = parse_size(v);
       }},
      {"data.prototype_spread", "identity content scale",
       [](const RunConfig& c) { return fmt_double(c.data.prototype_spread); },
       [](RunConfig& c, const std::string& v) { c.data.prototype_spread = parse_double(v); }},
      {"data.view_sigma", "within-identity view noise",
       [](const RunConfig& c) { return fmt_double(c.data.view_sigma); },
       [](RunConfig& c, const std::string& v) { c.data.view_sigma = parse_double(v); }},
      {"data.noise_sigma", "sensor noise applied after styling",
       [](const RunConfig& c) { return fmt_double(c.data.noise_sigma); },
       [](RunConfig& c, const std::string& v) { c.data.noise_sigma = parse_double(v); }},
      {"data.style_log_gain_range", "half-range of training-domain scalar log gains",
       [](const RunConfig& c) { return fmt_double(c.data.style_log_gain_range); },
       [](RunConfig& c, const std::string& v) {
         c.data.style_log_gain_range = parse_double(v);
       }},
      {"data.style_offset_step", "spacing of training-domain scalar offsets",
       [](const RunConfig& c) { return fmt_double(c.data.style_offset_step); },
       [](RunConfig& c, const std::string& v) {
         c.data.style_offset_step = parse_double(v);
       }},
      {"data.style_jitter", "per-feature style deviation (not removable per sample)",
       [](const RunConfig& c) { return fmt_double(c.data.style_jitter); },
       [](RunConfig& c, const std::string& v) { c.data.style_jitter = parse_double(v); }},
      {"data.style_mixing", "apply a full-rank linear mixing per domain (vector mode)",
       [](const RunConfig& c) { return fmt_bool(c.data.style_mixing); },
       [](RunConfig& c, const std::string& v) { c.data.style_mixing = parse_bool(v); }},
      {"data.mixing_strength", "off-identity magnitude of the mixing matrix",
       [](const RunConfig& c) { return fmt_double(c.data.mixing_strength); },
       [](RunConfig& c, const std::string& v) { c.data.mixing_strength = parse_double(v); }},
      {"data.unseen_gain_boost", "held-out log gain beyond the training range",
       [](const RunConfig& c) { return fmt_double(c.data.unseen_gain_boost); },
       [](RunConfig& c, const std::string& v) { c.data.unseen_gain_boost = parse_double(v); }},
      {"data.unseen_offset_boost", "held-out offset beyond the training range",
       [](const RunConfig& c) { return fmt_double(c.data.unseen_offset_boost); },
       [](RunConfig& c, const std::string& v) {
         c.data.unseen_offset_boost = parse_double(v);
       }},
      {"data.shot_sigma", "per-sample scalar style drift in source domains",
       [](const RunConfig& c) { return fmt_double(c.data.shot_sigma); },
       [](RunConfig& c, const std::string& v) { c.data.shot_sigma = parse_double(v); }},
      {"data.unseen_shot_sigma", "per-sample scalar style drift in the held-out domain",
       [](const RunConfig& c) { return fmt_double(c.data.unseen_shot_sigma); },
       [](RunConfig& c, const std::string& v) {
         c.data.unseen_shot_sigma = parse_double(v);
       }},
      {"data.seed", "generator seed",
       [](const RunConfig& c) { return std::to_string(c.data.seed); },
       [](RunConfig& c, const std::string& v) { c.data.seed = std::stoull(v); }},

      // --- eval ---
      {"eval.trials", "random probe/gallery selections per report",
       [](const RunConfig& c) { return fmt_size(c.eval.trials); },
       [](RunConfig& c, const std::string& v) { c.eval.trials = parse_size(v); }},
      {"eval.max_rank", "CMC curve length",
       [](const RunConfig& c) { return fmt_size(c.eval.max_rank); },
       [](RunConfig& c, const std::string& v) { c.eval.max_rank = parse_size(v); }},
      {"eval.seed", "trial selection seed",
       [](const RunConfig& c) { return std::to_string(c.eval.seed); },
       [](RunConfig& c, const std::string& v) { c.eval.seed = std::stoull(v); }},
      {"eval.normalize", "l2-normalize codes before matching",
       [](const RunConfig& c) { return fmt_bool(c.eval.normalize); },
       [](RunConfig& c, const std::string& v) { c.eval.normalize = parse_bool(v); }},
      {"eval.probe_holdout_fraction", "held-out fraction for the domain probe",
       [](const RunConfig& c) { return fmt_double(c.eval.probe_holdout_fraction); },
       [](RunConfig& c, const std::string& v) {
         c.eval.probe_holdout_fraction = parse_double(v);
       }},
  };
  return entries;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    const auto b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  " is not 'key = value': '" + line + "'");
    }
    auto trim = [](std::string s) {
      const auto x = s.find_first_not_of(" \t");
      const auto y = s.find_last_not_of(" \t");
      if (x == std::string::npos) return std::string();
      return s.substr(x, y - x + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    const auto& entries = schema();
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const SchemaEntry& e) { return key == e.key; });
    if (it == entries.end()) {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
    try {
      it->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    } catch (const std::exception& e) {
      throw std::invalid_argument("config key '" + key + "': invalid value '" + value + "'");
    }
  }
  return config;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& config) {
  std::ostringstream out;
  for (const SchemaEntry& e : schema()) {
    out << e.key << " = " << e.get(config) << "\n";
  }
  return out.str();
}

std::string config_help() {
  RunConfig defaults;
  std::ostringstream out;
  for (const SchemaEntry& e : schema()) {
    out << "  " << e.key << " = " << e.get(defaults) << "\n      " << e.description
        << "\n";
  }
  return out.str();
}

SynthConfig effective_synth_config(const RunConfig& config) {
  SynthConfig synth = config.data;
  synth.mode =
      config.model.mode == InputMode::kVector ? DataMode::kVector : DataMode::kImage;
  synth.dim = config.model.input_dim;
  synth.channels = config.model.image_channels;
  synth.height = config.model.image_height;
  synth.width = config.model.image_width;
  return synth;
}

ModelConfig effective_model_config(const RunConfig& config, const Dataset& data) {
  ModelConfig model = config.model;
  if (!config.train.use_in) model.in_blocks = 0;

  const std::size_t data_identities = data.train_identity_count();
  const std::size_t data_domains = data.train_domain_count();
  if (model.identity_count == 0) {
    model.identity_count = data_identities;
  } else if (model.identity_count != data_identities) {
    std::ostringstream msg;
    msg << "model.identity_count = " << model.identity_count << " but the dataset has "
        << data_identities << " training identities";
    throw std::invalid_argument(msg.str());
  }
  if (model.domain_count == 0) {
    model.domain_count = data_domains;
  } else if (model.domain_count != data_domains) {
    std::ostringstream msg;
    msg << "model.domain_count = " << model.domain_count << " but the dataset has "
        << data_domains << " training domains";
    throw std::invalid_argument(msg.str());
  }
  return model;
}

}  // namespace mmfa
