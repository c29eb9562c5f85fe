#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crackseg/architectures.hpp"
#include "crackseg/config.hpp"
#include "crackseg/data.hpp"
#include "crackseg/gradcheck.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/train.hpp"

namespace {

using namespace crackseg;

constexpr float kGradTol = 1e-2f;

void print_epoch(size_t e, size_t total, const History& h) {
  std::printf("epoch %zu/%zu  train %.6f  val %.6f  (%.2fs)\n", e, total,
              static_cast<double>(h.train_loss[e - 1]),
              static_cast<double>(h.val_loss[e - 1]), h.seconds[e - 1]);
}

void print_full_history(const History& h) {
  for (size_t e = 1; e <= h.epochs(); ++e) print_epoch(e, h.epochs(), h);
}

UNetConfig unet_config_from(const RunConfig& rc) {
  UNetConfig c;
  c.in_channels = rc.in_channels;
  c.base_filters = rc.base_filters;
  c.depth = rc.depth;
  c.kernel = rc.kernel;
  return c;
}

TrainConfig train_config_from(const RunConfig& rc) {
  TrainConfig c;
  c.batch_size = rc.batch_size;
  c.epochs = rc.epochs;
  c.learning_rate = static_cast<float>(rc.learning_rate);
  if (rc.seed < 0) throw ConfigError("seed must be >= 0");
  c.seed = static_cast<unsigned>(rc.seed);
  c.optimizer = rc.optimizer;
  return c;
}

std::array<Dataset, 3> load_and_split(const RunConfig& rc) {
  if (rc.data.empty()) throw ConfigError("no dataset given (set --data)");
  const Dataset full = load_dataset_root(rc.data, rc.size);
  return split(full, rc.split_train, rc.split_val, rc.split_test,
               static_cast<unsigned>(rc.seed));
}

int cmd_gen_synth(int n, int size, int seed, const std::string& out) {
  if (n < 0) throw ConfigError("--n must be >= 0");
  if (seed < 0) throw ConfigError("--seed must be >= 0");
  ensure_outdir(out);
  const Dataset ds = gen_synthetic(n, size, static_cast<unsigned>(seed));
  export_dataset(ds, out);
  std::printf("wrote %d image/mask pairs under %s\n", n, out.c_str());
  return 0;
}

int cmd_train(const RunConfig& rc) {
  if (rc.model != "resunet" && rc.model != "unet" && rc.model != "segnet")
    throw ConfigError("--model must be resunet, unet or segnet (use train-ensemble "
                      "for the ensemble)");
  ensure_outdir(rc.out);
  auto parts = load_and_split(rc);
  std::printf("dataset: %zu train / %zu val / %zu test\n", parts[0].size(),
              parts[1].size(), parts[2].size());

  Model model = build_from_config(rc.model, detail::echo_unet_config(unet_config_from(rc)),
                                  static_cast<unsigned>(rc.seed));
  std::printf("%s: %lld parameters\n", rc.model.c_str(),
              static_cast<long long>(model.param_count()));
  const History h = train_model(model, parts[0], parts[1], train_config_from(rc));
  print_full_history(h);

  save_checkpoint(model, rc.out + "/checkpoint.crkn");
  write_history_csv(h, rc.out + "/history.csv", rc.timing);
  write_resolved_config(rc, rc.out + "/resolved_config.txt");
  std::printf("wrote %s/checkpoint.crkn and %s/history.csv\n", rc.out.c_str(),
              rc.out.c_str());
  return 0;
}

int cmd_train_ensemble(const RunConfig& rc) {
  ensure_outdir(rc.out);
  auto parts = load_and_split(rc);
  std::printf("dataset: %zu train / %zu val / %zu test\n", parts[0].size(),
              parts[1].size(), parts[2].size());

  EnsembleConfig ec;
  ec.kernels = parse_int_list(rc.kernels);
  ec.meta_channels = rc.meta_channels;
  ec.base = unet_config_from(rc);

  TrainConfig stage1 = train_config_from(rc);
  TrainConfig stage2 = stage1;
  if (rc.stage2_epochs > 0) stage2.epochs = rc.stage2_epochs;

  std::vector<Model> bases;
  auto [ensemble, hist] = train_ensemble_two_stage(ec, parts[0], parts[1], stage1,
                                                   stage2, &bases);
  for (size_t i = 0; i < bases.size(); ++i) {
    std::printf("base %zu (kernel %d):\n", i, ec.kernels[i]);
    print_full_history(hist[i]);
    save_checkpoint(bases[i], rc.out + "/base" + std::to_string(i) + ".crkn");
    write_history_csv(hist[i], rc.out + "/history_base" + std::to_string(i) + ".csv",
                      rc.timing);
  }
  std::printf("ensemble meta-model:\n");
  print_full_history(hist.back());
  save_checkpoint(ensemble, rc.out + "/ensemble.crkn");
  write_history_csv(hist.back(), rc.out + "/history_ensemble.csv", rc.timing);
  write_resolved_config(rc, rc.out + "/resolved_config.txt");
  std::printf("wrote %zu base checkpoints and %s/ensemble.crkn\n", bases.size(),
              rc.out.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, double threshold,
             int size, const std::string& out) {
  const Model model = load_checkpoint(checkpoint);
  const Dataset ds = load_dataset_root(data, size);
  const EvalReport rep = evaluate(model, ds, static_cast<float>(threshold));
  print_eval_table(std::cout, model.family(), rep);
  ensure_outdir(out);
  write_eval_csv(rep, out + "/eval.csv");
  std::printf("wrote %s/eval.csv (%zu samples)\n", out.c_str(), rep.rows.size());
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path,
                const std::string& out, const std::string& thresholded_out,
                double threshold, int size) {
  const Model model = load_checkpoint(checkpoint);
  const GrayImage raw = load_image_grayscale(image_path);
  const GrayImage resized = resize_bilinear(raw, size, size);
  std::vector<float> px(resized.pixels);
  const Tensor x = Tensor::from_data({1, 1, size, size}, std::move(px));
  const Tensor pred = model.forward(x);

  GrayImage prob(size, size);
  prob.pixels = pred.data();
  if (detail::has_suffix(out, ".pgm"))
    save_pgm(out, prob);
  else
    save_png_gray(out, prob);
  std::printf("wrote probability mask %s\n", out.c_str());

  if (!thresholded_out.empty()) {
    GrayImage hard(size, size);
    for (size_t i = 0; i < hard.pixels.size(); ++i)
      hard.pixels[i] = prob.pixels[i] >= static_cast<float>(threshold) ? 1.0f : 0.0f;
    if (detail::has_suffix(thresholded_out, ".pgm"))
      save_pgm(thresholded_out, hard);
    else
      save_png_gray(thresholded_out, hard);
    std::printf("wrote thresholded mask %s\n", thresholded_out.c_str());
  }
  return 0;
}

int cmd_gradcheck(int seed, int count) {
  if (seed < 0 || count < 1) throw ConfigError("gradcheck wants --seed >= 0, --count >= 1");
  float worst = 0.0f;
  std::string worst_case;
  std::map<std::string, float> per_op;
  for (int s = seed; s < seed + count; ++s) {
    for (const auto& r : run_standard_gradchecks(static_cast<unsigned>(s))) {
      per_op[r.name] = std::max(per_op[r.name], r.max_rel_err);
      if (r.max_rel_err > worst) {
        worst = r.max_rel_err;
        worst_case = r.name + " (seed " + std::to_string(s) + ")";
      }
    }
  }
  bool ok = true;
  for (const auto& [name, err] : per_op) {
    const bool pass = err < kGradTol;
    ok = ok && pass;
    std::printf("%-18s max rel err %.3e  %s\n", name.c_str(), static_cast<double>(err),
                pass ? "PASS" : "FAIL");
  }
  std::printf("%d seed(s), worst %.3e at %s\n", count, static_cast<double>(worst),
              worst_case.c_str());
  if (!ok)
    throw NumericError("gradient check failed: " + worst_case + " rel err " +
                       std::to_string(worst));
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  struct Series {
    std::string label;
    std::vector<std::string> train, val;
  };
  std::vector<Series> all;
  size_t max_rows = 0;
  for (const std::string& path : inputs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open history " + path);
    Series s;
    s.label = std::filesystem::path(path).stem().string();
    std::string line;
    if (!std::getline(in, line) || line.rfind("epoch,", 0) != 0)
      throw DataError("not a history CSV (missing header): " + path);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string epoch, train, val;
      if (!std::getline(ss, epoch, ',') || !std::getline(ss, train, ',') ||
          !std::getline(ss, val, ','))
        throw DataError("malformed history row in " + path + ": " + line);
      s.train.push_back(train);
      s.val.push_back(val);
    }
    max_rows = std::max(max_rows, s.train.size());
    all.push_back(std::move(s));
  }
  if (all.empty()) throw ConfigError("report needs at least one history CSV");

  std::ofstream o(out);
  if (!o) throw ConfigError("cannot write " + out);
  o << "epoch";
  for (const auto& s : all) o << "," << s.label << "_train," << s.label << "_val";
  o << "\n";
  for (size_t e = 0; e < max_rows; ++e) {
    o << (e + 1);
    for (const auto& s : all) {
      o << "," << (e < s.train.size() ? s.train[e] : "");
      o << "," << (e < s.val.size() ? s.val[e] : "");
    }
    o << "\n";
  }
  std::printf("merged %zu histories into %s\n", all.size(), out.c_str());
  return 0;
}

// Applies file config then flag overrides in the order CLI11 saw them.
void overlay(CLI::App* cmd, RunConfig& rc,
             const std::vector<std::pair<std::string, std::string>>& flag_keys) {
  for (const auto& [flag, key] : flag_keys) {
    const CLI::Option* opt = cmd->get_option(flag);
    if (opt->count() > 0) apply_config_kv(rc, key, opt->as<std::string>());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crackseg: residual U-Net crack segmentation with a frozen-base "
               "convolutional ensemble"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic crack dataset");
  int gen_n = 16, gen_size = 64, gen_seed = 0;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--size", gen_size, "square image size");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output dataset root")->required();

  // shared train-ish flag set
  auto add_run_flags = [](CLI::App* cmd, std::string& config_path) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--data", "dataset root (images/ + masks/)");
    cmd->add_option("--out", "output directory");
    cmd->add_option("--size", "resize edge length");
    cmd->add_option("--epochs", "training epochs");
    cmd->add_option("--batch-size", "minibatch size");
    cmd->add_option("--lr", "learning rate");
    cmd->add_option("--seed", "run seed");
    cmd->add_option("--optimizer", "adam or sgd");
    cmd->add_option("--depth", "pool stages");
    cmd->add_option("--base-filters", "channels at full resolution");
    cmd->add_option("--in-channels", "input channels");
    cmd->add_option("--split-train", "train ratio");
    cmd->add_option("--split-val", "val ratio");
    cmd->add_option("--split-test", "test ratio");
    cmd->add_flag("--timing", "write real wall-clock into history CSVs");
  };
  const std::vector<std::pair<std::string, std::string>> run_flag_keys = {
      {"--data", "data"},           {"--out", "out"},
      {"--size", "size"},           {"--epochs", "epochs"},
      {"--batch-size", "batch_size"}, {"--lr", "learning_rate"},
      {"--seed", "seed"},           {"--optimizer", "optimizer"},
      {"--depth", "depth"},         {"--base-filters", "base_filters"},
      {"--in-channels", "in_channels"}, {"--split-train", "split_train"},
      {"--split-val", "split_val"}, {"--split-test", "split_test"}};

  // train
  auto* train = app.add_subcommand("train", "train a single model");
  std::string train_config;
  add_run_flags(train, train_config);
  train->add_option("--model", "resunet, unet or segnet");
  train->add_option("--kernel", "conv kernel size (odd)");

  // train-ensemble
  auto* tens = app.add_subcommand("train-ensemble",
                                  "two-stage frozen-base ensemble training");
  std::string tens_config;
  add_run_flags(tens, tens_config);
  tens->add_option("--kernels", "comma-separated base kernel sizes");
  tens->add_option("--meta-channels", "meta-model width");
  tens->add_option("--stage2-epochs", "meta-model training epochs");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out = ".";
  double ev_threshold = 0.5;
  int ev_size = 128;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--threshold", ev_threshold, "binarization threshold");
  ev->add_option("--size", ev_size, "resize edge length");
  ev->add_option("--out", ev_out, "directory for eval.csv");

  // predict
  auto* pr = app.add_subcommand("predict", "write a predicted mask for one image");
  std::string pr_ckpt, pr_image, pr_out, pr_thr_out;
  double pr_threshold = 0.5;
  int pr_size = 128;
  pr->add_option("--checkpoint", pr_ckpt)->required();
  pr->add_option("--image", pr_image)->required();
  pr->add_option("--out", pr_out, "probability mask file (.png or .pgm)")->required();
  pr->add_option("--thresholded-out", pr_thr_out, "optional binarized mask file");
  pr->add_option("--threshold", pr_threshold);
  pr->add_option("--size", pr_size);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  int gc_seed = 0, gc_count = 10;
  gc->add_option("--seed", gc_seed, "first seed");
  gc->add_option("--count", gc_count, "number of seeds");

  // report
  auto* rep = app.add_subcommand("report", "merge history CSVs for plotting");
  std::vector<std::string> rep_inputs;
  std::string rep_out = "report.csv";
  rep->add_option("--out", rep_out, "merged CSV path");
  rep->add_option("inputs", rep_inputs, "history CSV files")->required();

  try {
    app.parse(argc, argv);

    if (*gen) return cmd_gen_synth(gen_n, gen_size, gen_seed, gen_out);
    if (*train) {
      RunConfig rc;
      if (!train_config.empty()) load_config_file(rc, train_config);
      overlay(train, rc, run_flag_keys);
      if (train->get_option("--model")->count())
        apply_config_kv(rc, "model", train->get_option("--model")->as<std::string>());
      if (train->get_option("--kernel")->count())
        apply_config_kv(rc, "kernel", train->get_option("--kernel")->as<std::string>());
      if (train->get_option("--timing")->count()) rc.timing = true;
      return cmd_train(rc);
    }
    if (*tens) {
      RunConfig rc;
      if (!tens_config.empty()) load_config_file(rc, tens_config);
      overlay(tens, rc, run_flag_keys);
      if (tens->get_option("--kernels")->count())
        apply_config_kv(rc, "kernels", tens->get_option("--kernels")->as<std::string>());
      if (tens->get_option("--meta-channels")->count())
        apply_config_kv(rc, "meta_channels",
                        tens->get_option("--meta-channels")->as<std::string>());
      if (tens->get_option("--stage2-epochs")->count())
        apply_config_kv(rc, "stage2_epochs",
                        tens->get_option("--stage2-epochs")->as<std::string>());
      if (tens->get_option("--timing")->count()) rc.timing = true;
      return cmd_train_ensemble(rc);
    }
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_threshold, ev_size, ev_out);
    if (*pr)
      return cmd_predict(pr_ckpt, pr_image, pr_out, pr_thr_out, pr_threshold, pr_size);
    if (*gc) return cmd_gradcheck(gc_seed, gc_count);
    if (*rep) return cmd_report(rep_inputs, rep_out);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
