#include "mmfa/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "mmfa/eval.hpp"
#include "mmfa/runconfig.hpp"
#include "mmfa/train.hpp"

namespace mmfa::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kDatasetFormatVersion = 1;
constexpr int kCheckpointFormatVersion = 1;

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("short write on " + path);
}

std::string provenance_block(const RunConfig& config) {
  std::ostringstream out;
  out << "# provenance: re-running with this file reproduces the outputs byte-exactly\n";
  out << "# dataset_format_version = " << kDatasetFormatVersion << "\n";
  out << "# checkpoint_format_version = " << kCheckpointFormatVersion << "\n";
  out << serialize_config(config);
  return out.str();
}

void require_args(const std::vector<std::string>& args, std::size_t count,
                  const char* grammar) {
  if (args.size() != count) {
    throw std::invalid_argument(std::string("expected: ") + grammar);
  }
}

void check_model_matches_dataset(const ModelConfig& model, const Dataset& data) {
  const bool vector_model = model.mode == InputMode::kVector;
  const bool vector_data = data.mode == DataMode::kVector;
  if (vector_model != vector_data) {
    throw std::invalid_argument("checkpoint/dataset mismatch: model mode '" +
                                std::string(input_mode_name(model.mode)) +
                                "' vs dataset mode '" +
                                std::string(data_mode_name(data.mode)) + "'");
  }
  const std::vector<std::size_t> expected = model.input_shape();
  if (expected != data.sample_shape) {
    std::ostringstream msg;
    msg << "checkpoint/dataset mismatch: model expects sample shape [";
    for (std::size_t i = 0; i < expected.size(); ++i) {
      msg << (i ? " " : "") << expected[i];
    }
    msg << "] but dataset has [";
    for (std::size_t i = 0; i < data.sample_shape.size(); ++i) {
      msg << (i ? " " : "") << data.sample_shape[i];
    }
    msg << "]";
    throw std::invalid_argument(msg.str());
  }
}

struct TrainedRun {
  ModelState model;
  TrainResult result;
};

TrainedRun train_on(const RunConfig& config, const Dataset& data) {
  TrainedRun run{init_model(effective_model_config(config, data)), {}};
  run.result = run_training(run.model, data, config.train);
  return run;
}

void write_train_outputs(const RunConfig& config, const TrainedRun& run,
                         const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/provenance.cfg", provenance_block(config));
  write_text_file(out_dir + "/metrics.csv", metrics_csv(run.result.epochs));
  if (config.train.write_step_log) {
    write_text_file(out_dir + "/steps.csv", step_log_csv(run.result.steps));
  }
  save_checkpoint(run.model, out_dir + "/model_final.ckpt");
}

EvalReport evaluate_model(ModelState& model, const Dataset& data,
                          const EvalSettings& settings, const std::string& config_echo) {
  EvalReport report = run_protocol(model, data, data.holdout_domain, settings.trials,
                                   settings.max_rank, settings.seed, settings.normalize);
  const std::vector<std::size_t> train_rows = data.train_indices();
  const Tensor codes = encode_dataset(model, data, train_rows);
  std::vector<int> domains;
  domains.reserve(train_rows.size());
  for (std::size_t r : train_rows) domains.push_back(data.domains[r]);
  report.domain_probe_accuracy = probe_domain_accuracy(
      codes, domains, settings.probe_holdout_fraction, settings.seed);
  report.config_echo = config_echo;
  return report;
}

void write_report(const EvalReport& report, const std::string& prefix) {
  write_text_file(prefix + ".json", report.to_json());
  write_text_file(prefix + ".csv", report.to_csv());
}

int cmd_gen_data(const std::vector<std::string>& args) {
  require_args(args, 2, "gen-data <config> <out-dataset>");
  const RunConfig config = load_config_file(args[0]);
  const Dataset data = generate_synthetic(effective_synth_config(config));
  write_dataset(data, args[1]);
  std::cout << "wrote " << args[1] << ": " << data.size() << " samples, "
            << data.domain_count << " domains (holdout '"
            << data.domain_names[data.holdout_domain] << "'), " << data.identity_count
            << " identities\n";
  return 0;
}

int cmd_train(const std::vector<std::string>& args) {
  require_args(args, 3, "train <config> <dataset> <out-dir>");
  const RunConfig config = load_config_file(args[0]);
  const Dataset data = read_dataset(args[1]);
  check_model_matches_dataset(config.model, data);

  TrainedRun run{init_model(effective_model_config(config, data)), {}};
  fs::create_directories(args[2]);
  EpochHook hook;
  if (config.train.checkpoint_every > 0) {
    const std::string dir = args[2];
    const std::size_t every = config.train.checkpoint_every;
    hook = [dir, every](std::size_t epoch, const ModelState& state) {
      if (epoch % every == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "/checkpoint_epoch%04zu.ckpt", epoch);
        save_checkpoint(state, dir + name);
      }
    };
  }
  run.result = run_training(run.model, data, config.train, {}, hook);
  write_train_outputs(config, run, args[2]);
  const EpochMetrics& last = run.result.epochs.back();
  std::cout << "trained " << config.train.epochs << " epochs; final total loss "
            << last.feature.total << "; outputs in " << args[2] << "\n";
  return 0;
}

int cmd_extract(const std::vector<std::string>& args) {
  require_args(args, 3, "extract <checkpoint> <dataset> <out-features>");
  ModelState model = load_checkpoint(args[0]);
  const Dataset data = read_dataset(args[1]);
  check_model_matches_dataset(model.config, data);

  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Tensor codes = encode_dataset(model, data, rows);

  std::ostringstream out;
  out << "# hidden codes, one row per sample\n";
  out << "# checkpoint = " << args[0] << "\n";
  out << "# dataset = " << args[1] << " (seed " << data.seed << ")\n";
  out << "# checkpoint_format_version = " << kCheckpointFormatVersion << "\n";
  out << "index,identity,domain";
  for (std::size_t k = 0; k < codes.dim(1); ++k) out << ",h" << k;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << i << "," << data.identities[i] << "," << data.domains[i];
    for (std::size_t k = 0; k < codes.dim(1); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", codes.at(i, k));
      out << "," << buf;
    }
    out << "\n";
  }
  write_text_file(args[2], out.str());
  std::cout << "wrote " << args[2] << ": " << data.size() << " rows, dim "
            << codes.dim(1) << "\n";
  return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
  if (args.size() != 3 && args.size() != 4) {
    throw std::invalid_argument("expected: eval <checkpoint> <dataset> <report-prefix> [config]");
  }
  ModelState model = load_checkpoint(args[0]);
  const Dataset data = read_dataset(args[1]);
  check_model_matches_dataset(model.config, data);

  RunConfig config;
  if (args.size() == 4) config = load_config_file(args[3]);
  std::ostringstream echo;
  echo << "checkpoint = " << args[0] << "; dataset = " << args[1] << "; trials = "
       << config.eval.trials << "; max_rank = " << config.eval.max_rank
       << "; seed = " << config.eval.seed;

  const EvalReport report = evaluate_model(model, data, config.eval, echo.str());
  write_report(report, args[2]);
  std::cout << "rank1 " << report.mean_rank1() << ", mAP " << report.mean_map
            << ", domain-probe accuracy " << report.domain_probe_accuracy << "; report at "
            << args[2] << ".json\n";
  return 0;
}

int cmd_grad_check(const std::vector<std::string>& args) {
  require_args(args, 1, "grad-check <config>");
  const RunConfig config = load_config_file(args[0]);
  const Dataset data = generate_synthetic(effective_synth_config(config));
  ModelState model = init_model(effective_model_config(config, data));

  Rng rng(config.train.seed);
  const std::size_t p = std::min<std::size_t>(config.train.batch_p, 4);
  const std::size_t k = std::min<std::size_t>(config.train.batch_k, 3);
  const LabeledBatch batch = sample_pk_batch(data, p, std::max<std::size_t>(k, 2), rng);

  const GradCheckOptions options;  // tolerance 1e-4, step 1e-5
  const std::vector<LossGradCheck> checks =
      check_model_loss_gradients(model, batch, config.train, options);
  bool all_passed = true;
  for (const LossGradCheck& check : checks) {
    std::cout << check.loss << ": " << check.report.summary() << "\n";
    all_passed = all_passed && check.report.passed;
  }
  std::cout << (all_passed ? "gradient check passed" : "gradient check FAILED") << "\n";
  return all_passed ? 0 : 2;
}

int cmd_ablate(const std::vector<std::string>& args) {
  require_args(args, 2, "ablate <config> <out-dir>");
  const RunConfig base = load_config_file(args[0]);
  const Dataset data = generate_synthetic(effective_synth_config(base));
  fs::create_directories(args[1]);

  struct Row {
    const char* name;
    bool use_in, use_triplet, use_aae, use_mmd;
  };
  const Row rows[] = {
      {"baseline", false, false, false, false},
      {"in", true, false, false, false},
      {"in_triplet", true, true, false, false},
      {"in_triplet_aae", true, true, true, false},
      {"full", true, true, true, true},
  };

  std::ostringstream summary;
  summary << "row,rank1,rank5,mAP,domain_probe_accuracy\n";
  for (const Row& row : rows) {
    RunConfig config = base;
    config.train.use_in = row.use_in;
    config.train.use_triplet = row.use_triplet;
    config.train.use_aae = row.use_aae;
    config.train.use_mmd = row.use_mmd;

    TrainedRun run = train_on(config, data);
    const std::string dir = args[1] + "/" + row.name;
    write_train_outputs(config, run, dir);
    const EvalReport report =
        evaluate_model(run.model, data, config.eval, std::string("ablation row ") + row.name);
    write_report(report, dir + "/report");

    const double r5 = report.mean_cmc.size() > 4 ? report.mean_cmc[4] : 0.0;
    summary << row.name << "," << report.mean_rank1() << "," << r5 << ","
            << report.mean_map << "," << report.domain_probe_accuracy << "\n";
    std::cout << row.name << ": rank1 " << report.mean_rank1() << ", probe accuracy "
              << report.domain_probe_accuracy << "\n";
  }
  write_text_file(args[1] + "/summary.csv", summary.str());
  std::cout << "ablation summary at " << args[1] << "/summary.csv\n";
  return 0;
}

}  // namespace

std::string usage() {
  std::ostringstream out;
  out << "mmfa - multi-domain adversarial feature generalization at desk scale\n\n";
  out << "usage:\n";
  out << "  mmfa gen-data <config> <out-dataset>     generate a synthetic corpus\n";
  out << "  mmfa train <config> <dataset> <out-dir>  train; writes metrics.csv + checkpoint\n";
  out << "  mmfa extract <ckpt> <dataset> <out-csv>  export hidden codes per sample\n";
  out << "  mmfa eval <ckpt> <dataset> <prefix> [config]\n";
  out << "                                           retrieval report (json + csv)\n";
  out << "  mmfa grad-check <config>                 finite-difference gradient check\n";
  out << "  mmfa ablate <config> <out-dir>           run the component-toggle rows\n";
  out << "  mmfa help                                this text\n\n";
  out << "exit codes: 0 success, 1 validation error, 2 runtime error\n\n";
  out << "config keys (defaults shown):\n" << config_help();
  return out.str();
}

int dispatch(const std::vector<std::string>& args) {
  try {
    if (args.empty()) {
      std::cerr << usage();
      return 1;
    }
    const std::string& command = args[0];
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    if (command == "help" || command == "--help" || command == "-h") {
      std::cout << usage();
      return 0;
    }
    if (command == "gen-data") return cmd_gen_data(rest);
    if (command == "train") return cmd_train(rest);
    if (command == "extract") return cmd_extract(rest);
    if (command == "eval") return cmd_eval(rest);
    if (command == "grad-check") return cmd_grad_check(rest);
    if (command == "ablate") return cmd_ablate(rest);
    std::cerr << "error: unknown subcommand '" << command << "'\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mmfa::cli
