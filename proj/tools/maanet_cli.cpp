// Command-line front end: dataset generation, training, evaluation, the
// ablation suite, cross-validation and heatmap export.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "maanet/synth.hpp"
#include "maanet/trainer.hpp"

namespace fs = std::filesystem;
using namespace maanet;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  f << text;
  if (!text.empty() && text.back() != '\n') f << "\n";
}

TrainConfig load_train_config(const std::string& config_path, const std::string& ablation,
                              std::uint64_t seed, bool seed_set, int epochs, bool epochs_set) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = train_config_from_json(read_file(config_path));
  if (!ablation.empty()) apply_ablation(cfg, ablation);
  if (seed_set) cfg.seed = seed;
  if (epochs_set) cfg.epochs = epochs;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAA-Net: multi-attribute attention network on synthetic ultrasound-like data"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  GenConfig gen_cfg;
  std::int64_t gen_n = 1000;
  std::string gen_out = "dataset", gen_config_path;
  double gen_pos_prob = -1.0;
  gen->add_option("--config", gen_config_path, "Generator config JSON file");
  gen->add_option("--n", gen_n, "Number of samples")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  auto* gen_size_opt = gen->add_option("--size", gen_cfg.size, "Image side length");
  auto* gen_seed_opt = gen->add_option("--seed", gen_cfg.seed, "Generator seed");
  gen->add_option("--pos-prob", gen_pos_prob, "Positive probability per attribute");
  auto* gen_k_opt =
      gen->add_option("--malig-k", gen_cfg.malig_k, "Suspicious-attribute count for malignancy");
  auto* gen_split_opt =
      gen->add_option("--split", gen_cfg.split_fractions, "Train/val/test fractions (3 values)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_data, tr_config, tr_ablation, tr_out = "run";
  std::uint64_t tr_seed = 0;
  int tr_epochs = 0;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--config", tr_config, "Train config JSON file");
  tr->add_option("--ablation", tr_ablation,
                 "baseline | attr | attr_attn | full | single:<attribute>");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Training seed");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "Override epoch count");
  tr->add_option("--out", tr_out, "Output directory")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "train | val | test")->capture_default_str();
  ev->add_option("--out", ev_out, "Optional report output path");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run the ablation suite");
  std::string ab_data, ab_config, ab_out = "ablation";
  std::vector<std::uint64_t> ab_seeds = {1, 2, 3};
  bool ab_singles = false;
  int ab_epochs = 0;
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--config", ab_config, "Base train config JSON file");
  ab->add_option("--seeds", ab_seeds, "Seeds (one run set per seed)")->capture_default_str();
  ab->add_flag("--singles", ab_singles, "Include single-attribute variants");
  auto* ab_epochs_opt = ab->add_option("--epochs", ab_epochs, "Override epoch count");
  ab->add_option("--out", ab_out, "Output directory")->capture_default_str();

  // xval
  auto* xv = app.add_subcommand("xval", "k-fold cross-validation");
  std::string xv_data, xv_config, xv_out = "xval";
  int xv_k = 5, xv_epochs = 0;
  std::uint64_t xv_seed = 0;
  xv->add_option("--data", xv_data, "Dataset directory")->required();
  xv->add_option("--config", xv_config, "Train config JSON file");
  xv->add_option("--k", xv_k, "Fold count")->capture_default_str();
  auto* xv_seed_opt = xv->add_option("--seed", xv_seed, "Seed");
  auto* xv_epochs_opt = xv->add_option("--epochs", xv_epochs, "Override epoch count");
  xv->add_option("--out", xv_out, "Output directory")->capture_default_str();

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "Export attention heatmaps as PGM");
  std::string hm_ckpt, hm_data, hm_out = "heatmaps";
  std::vector<std::string> hm_ids;
  int hm_n = 0;
  hm->add_option("--checkpoint", hm_ckpt, "Checkpoint path")->required();
  hm->add_option("--data", hm_data, "Dataset directory")->required();
  hm->add_option("--ids", hm_ids, "Sample ids (default: first --n of the test split)");
  hm->add_option("--n", hm_n, "Export the first n test samples")->capture_default_str();
  hm->add_option("--out", hm_out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (!gen_config_path.empty()) {
        GenConfig file_cfg = gen_config_from_json(read_file(gen_config_path));
        if (!gen_size_opt->empty()) file_cfg.size = gen_cfg.size;
        if (!gen_seed_opt->empty()) file_cfg.seed = gen_cfg.seed;
        if (!gen_k_opt->empty()) file_cfg.malig_k = gen_cfg.malig_k;
        if (!gen_split_opt->empty()) file_cfg.split_fractions = gen_cfg.split_fractions;
        gen_cfg = file_cfg;
      }
      if (gen_pos_prob >= 0.0)
        gen_cfg.pos_prob = {gen_pos_prob, gen_pos_prob, gen_pos_prob,
                            gen_pos_prob, gen_pos_prob, gen_pos_prob};
      generate_dataset(gen_cfg, gen_n, gen_out);
      std::cout << "wrote " << gen_n << " samples to " << gen_out << "\n";
    } else if (tr->parsed()) {
      TrainConfig cfg = load_train_config(tr_config, tr_ablation, tr_seed, !tr_seed_opt->empty(),
                                          tr_epochs, !tr_epochs_opt->empty());
      Dataset dataset = Dataset::load(tr_data);
      TrainResult result = train(dataset, cfg, fs::path(tr_out));
      std::cout << "best epoch " << result.log.best_epoch << " (val malignancy AUC "
                << result.log.best_val_malig_auc << ")\n";
      if (result.log.test) std::cout << result.log.test->to_json() << "\n";
    } else if (ev->parsed()) {
      MaaNet<float> model = load_model(ev_ckpt);
      Dataset dataset = Dataset::load(ev_data);
      MetricsReport report = evaluate(model, dataset, ev_split);
      const std::string text = report.to_json();
      std::cout << text << "\n";
      if (!ev_out.empty()) {
        write_file(ev_out, text);
        write_file(fs::path(ev_out).parent_path() / "model_config.json",
                   model_config_to_json(model.config()));
      }
    } else if (ab->parsed()) {
      TrainConfig cfg = load_train_config(ab_config, "", 0, false, ab_epochs,
                                          !ab_epochs_opt->empty());
      Dataset dataset = Dataset::load(ab_data);
      AblationResult result = ablation_suite(dataset, cfg, ab_seeds, ab_singles, fs::path(ab_out));
      std::cout << result.to_table();
    } else if (xv->parsed()) {
      TrainConfig cfg = load_train_config(xv_config, "", xv_seed, !xv_seed_opt->empty(), xv_epochs,
                                          !xv_epochs_opt->empty());
      Dataset dataset = Dataset::load(xv_data);
      CrossValidationResult result = cross_validate(dataset, cfg, xv_k);
      fs::create_directories(xv_out);
      write_file(fs::path(xv_out) / "config.json", train_config_to_json(cfg));
      write_file(fs::path(xv_out) / "xval.json", result.to_json());
      write_file(fs::path(xv_out) / "xval.txt", result.to_table());
      std::cout << result.to_table();
    } else if (hm->parsed()) {
      MaaNet<float> model = load_model(hm_ckpt);
      Dataset dataset = Dataset::load(hm_data);
      std::vector<int> indices;
      if (!hm_ids.empty()) {
        for (const auto& id : hm_ids) {
          int found = -1;
          for (int i = 0; i < dataset.size(); ++i)
            if (dataset.manifest.records[size_t(i)].id == id) found = i;
          if (found < 0) throw DataError("heatmap: unknown sample id " + id);
          indices.push_back(found);
        }
      } else {
        const auto test_ids = dataset.manifest.split_indices("test");
        const int n = hm_n > 0 ? std::min<int>(hm_n, static_cast<int>(test_ids.size()))
                               : std::min<int>(4, static_cast<int>(test_ids.size()));
        indices.assign(test_ids.begin(), test_ids.begin() + n);
      }
      export_heatmaps(model, dataset, indices, hm_out);
      write_file(fs::path(hm_out) / "model_config.json", model_config_to_json(model.config()));
      std::cout << "wrote " << indices.size() * 8 << " files to " << hm_out << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
