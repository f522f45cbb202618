#include "maanet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "maanet/sgd.hpp"

namespace maanet {

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2");
  if (lr0 <= 0) throw ConfigError("TrainConfig: lr0 must be positive");
  if (lr_decay <= 0) throw ConfigError("TrainConfig: lr_decay must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("TrainConfig: momentum must be in [0,1)");
  if (weight_decay < 0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (weights.attr < 0 || weights.attn < 0 || weights.spatial < 0)
    throw ConfigError("TrainConfig: loss weights must be >= 0");
  if (spatial_loss_on && !model.attn_branch)
    throw ConfigError("TrainConfig: spatial loss requires the attention branch");
}

std::array<bool, kHeadCount> TrainConfig::active_heads() const {
  std::array<bool, kHeadCount> active{};
  active[0] = true;
  if (model.attr_branch)
    for (int a = 0; a < kAttributeCount; ++a)
      active[size_t(1 + a)] = model.enabled_attributes[size_t(a)];
  return active;
}

void apply_ablation(TrainConfig& config, const std::string& name) {
  config.model.enabled_attributes = {true, true, true, true, true, true};
  if (name == "baseline") {
    config.model.attr_branch = false;
    config.model.attn_branch = false;
    config.spatial_loss_on = false;
  } else if (name == "attr") {
    config.model.attr_branch = true;
    config.model.attn_branch = false;
    config.spatial_loss_on = false;
  } else if (name == "attr_attn") {
    config.model.attr_branch = true;
    config.model.attn_branch = true;
    config.spatial_loss_on = false;
  } else if (name == "full") {
    config.model.attr_branch = true;
    config.model.attn_branch = true;
    config.spatial_loss_on = true;
  } else if (name.rfind("single:", 0) == 0) {
    const std::string attr = name.substr(7);
    config.model.attr_branch = true;
    config.model.attn_branch = false;
    config.spatial_loss_on = false;
    config.model.enabled_attributes = {};
    bool found = false;
    for (int a = 0; a < kAttributeCount; ++a)
      if (attr == kHeadNames[size_t(1 + a)]) {
        config.model.enabled_attributes[size_t(a)] = true;
        found = true;
      }
    if (!found) throw ConfigError("apply_ablation: unknown attribute '" + attr + "'");
  } else {
    throw ConfigError("apply_ablation: unknown ablation '" + name + "'");
  }
}

std::string train_config_to_json(const TrainConfig& config) {
  nlohmann::ordered_json j;
  j["model"] = nlohmann::ordered_json::parse(model_config_to_json(config.model));
  j["epochs"] = config.epochs;
  j["batch_size"] = config.batch_size;
  j["lr0"] = config.lr0;
  j["lr_milestones"] = config.lr_milestones;
  j["lr_decay"] = config.lr_decay;
  j["momentum"] = config.momentum;
  j["weight_decay"] = config.weight_decay;
  j["seed"] = config.seed;
  j["spatial_loss"] = config.spatial_loss_on;
  j["weights"] = {{"attr", config.weights.attr},
                  {"attn", config.weights.attn},
                  {"spatial", config.weights.spatial}};
  j["augment"] = {{"enabled", config.augment.enabled},
                  {"scale_min", config.augment.scale_min},
                  {"scale_max", config.augment.scale_max},
                  {"flip_prob", config.augment.flip_prob}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("train config: bad JSON: ") + e.what());
  }
  TrainConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model").dump());
  if (j.contains("epochs")) c.epochs = j.at("epochs");
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size");
  if (j.contains("lr0")) c.lr0 = j.at("lr0");
  if (j.contains("lr_milestones")) c.lr_milestones = j.at("lr_milestones").get<std::vector<int>>();
  if (j.contains("lr_decay")) c.lr_decay = j.at("lr_decay");
  if (j.contains("momentum")) c.momentum = j.at("momentum");
  if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay");
  if (j.contains("seed")) c.seed = j.at("seed");
  if (j.contains("spatial_loss")) c.spatial_loss_on = j.at("spatial_loss");
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    if (w.contains("attr")) c.weights.attr = w.at("attr");
    if (w.contains("attn")) c.weights.attn = w.at("attn");
    if (w.contains("spatial")) c.weights.spatial = w.at("spatial");
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    if (a.contains("enabled")) c.augment.enabled = a.at("enabled");
    if (a.contains("scale_min")) c.augment.scale_min = a.at("scale_min");
    if (a.contains("scale_max")) c.augment.scale_max = a.at("scale_max");
    if (a.contains("flip_prob")) c.augment.flip_prob = a.at("flip_prob");
  }
  c.validate();
  return c;
}

double lr_at(const TrainConfig& config, int epoch) {
  double lr = config.lr0;
  for (int m : config.lr_milestones)
    if (epoch >= m) lr *= config.lr_decay;
  return lr;
}

namespace {

nlohmann::ordered_json report_json(const MetricsReport& r) {
  return nlohmann::ordered_json::parse(r.to_json());
}

void hash_double(std::uint64_t& h, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, 8);
  h = hash_combine(h, bits);
}

}  // namespace

std::string RunLog::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json eps = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    nlohmann::ordered_json je;
    je["epoch"] = e.epoch;
    je["lr"] = e.lr;
    je["l_attr"] = e.losses.l_attr;
    je["l_attn"] = e.losses.l_attn;
    je["l_spatial"] = e.losses.l_spatial;
    je["total"] = e.losses.total;
    je["val"] = report_json(e.val);
    eps.push_back(je);
  }
  j["epochs"] = eps;
  j["best_epoch"] = best_epoch;
  j["best_val_malig_auc"] = best_val_malig_auc;
  if (test) j["test"] = report_json(*test);
  return j.dump(2);
}

std::uint64_t RunLog::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto hash_report = [&h](const MetricsReport& r) {
    for (const auto& a : r.head_auc) {
      hash_double(h, a.defined ? a.value : -1.0);
    }
    hash_double(h, r.malignancy.acc);
    hash_double(h, r.malignancy.f1);
    hash_double(h, r.malignancy.spec);
    hash_double(h, r.malignancy.rec);
    hash_double(h, r.malignancy.prec);
    hash_double(h, r.avg_attribute_auc);
    hash_double(h, r.hit_rate_defined ? r.hits.rate : -1.0);
  };
  for (const auto& e : epochs) {
    h = hash_combine(h, static_cast<std::uint64_t>(e.epoch));
    hash_double(h, e.lr);
    hash_double(h, e.losses.l_attr);
    hash_double(h, e.losses.l_attn);
    hash_double(h, e.losses.l_spatial);
    hash_double(h, e.losses.total);
    hash_report(e.val);
  }
  if (test) hash_report(*test);
  return h;
}

MetricsReport evaluate(MaaNet<float>& model, const Dataset& dataset, const std::string& split,
                       int batch_size) {
  const bool was_training = model.is_training();
  model.eval();
  const ModelConfig& mc = model.config();
  AugmentPolicy no_aug;
  no_aug.enabled = false;
  BatchStream stream(dataset, split, batch_size, mc.input_size, mc.map_size(), no_aug, 0,
                     /*training=*/false);

  std::vector<std::array<double, kHeadCount>> probs;
  std::vector<LabelVector> labels;
  std::vector<ImageF> maps;
  std::vector<ImageU8> masks;

  stream.start_epoch(0);
  while (auto batch = stream.next()) {
    ModelOutput<float> out = model.forward(batch->images);
    auto p = predict_probs(out);
    for (size_t b = 0; b < batch->indices.size(); ++b) {
      probs.push_back(p[b]);
      labels.push_back(dataset.manifest.records[size_t(batch->indices[b])].labels);
      if (mc.attn_branch) {
        ImageF m(mc.map_size(), mc.map_size());
        for (int y = 0; y < mc.map_size(); ++y)
          for (int x = 0; x < mc.map_size(); ++x)
            m.at(y, x) = out.maps.at(static_cast<int>(b), 0, y, x);
        maps.push_back(std::move(m));
        masks.push_back(dataset.masks[size_t(batch->indices[b])]);
      }
    }
  }
  if (was_training) model.train();

  MetricsReport report;
  report.samples = static_cast<long>(probs.size());
  const auto active = [&mc]() {
    std::array<bool, kHeadCount> a{};
    a[0] = true;
    if (mc.attr_branch)
      for (int i = 0; i < kAttributeCount; ++i) a[size_t(1 + i)] = mc.enabled_attributes[size_t(i)];
    return a;
  }();

  std::vector<double> malig_scores;
  std::vector<int> malig_labels;
  for (int c = 0; c < kHeadCount; ++c) {
    if (!active[size_t(c)]) continue;
    std::vector<double> scores;
    std::vector<int> lab;
    for (size_t i = 0; i < probs.size(); ++i) {
      scores.push_back(probs[i][size_t(c)]);
      lab.push_back(labels[i][size_t(c)]);
    }
    if (c == 0) {
      malig_scores = scores;
      malig_labels = lab;
    }
    try {
      report.head_auc[size_t(c)].value = auc(scores, lab);
      report.head_auc[size_t(c)].defined = true;
    } catch (const ContractError&) {
      report.head_auc[size_t(c)].defined = false;  // single-class split; run continues
    }
  }
  report.malignancy = confusion_metrics(malig_scores, malig_labels, 0.5);

  double auc_sum = 0;
  for (int c = 1; c < kHeadCount; ++c)
    if (report.head_auc[size_t(c)].defined) {
      auc_sum += report.head_auc[size_t(c)].value;
      ++report.defined_attribute_aucs;
    }
  report.avg_attribute_auc =
      report.defined_attribute_aucs > 0 ? auc_sum / report.defined_attribute_aucs : 0.0;

  if (mc.attn_branch && !maps.empty()) {
    try {
      report.hits = hit_rate(maps, masks);
      report.hit_rate_defined = true;
    } catch (const ContractError&) {
      report.hit_rate_defined = false;
    }
  }
  return report;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream cf(*out_dir / "config.json");
    cf << train_config_to_json(config) << "\n";
  }

  MaaNet<float> model(config.model);
  model.init(InitPolicy{config.seed});
  auto params = model.parameters();
  SgdState<float> opt;
  opt.momentum = static_cast<float>(config.momentum);
  opt.weight_decay = static_cast<float>(config.weight_decay);
  opt.attach(params);

  BatchStream stream(dataset, "train", config.batch_size, config.model.input_size,
                     config.model.map_size(), config.augment, hash_combine(config.seed, 0x9d5f),
                     /*training=*/true);
  const auto active = config.active_heads();

  TrainResult result;
  result.log.best_val_malig_auc = -1.0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    opt.learning_rate = static_cast<float>(lr);
    model.train();
    stream.start_epoch(epoch);

    double sum_attr = 0, sum_attn = 0, sum_spatial = 0, sum_total = 0;
    int batches = 0;
    while (auto batch = stream.next()) {
      try {
        Graph<float> tape;
        ModelOutput<float> out = model.forward(batch->images);
        Tensor<float> l_attr = attr_loss(out.attr_logits, batch->labels, active);
        Tensor<float> l_attn, l_spatial;
        if (config.model.attn_branch) l_attn = attn_loss(out.attn_logits, batch->labels, active);
        if (config.spatial_loss_on)
          l_spatial = spatial_loss(channel_slice(out.maps, 0), batch->masks_small);
        Tensor<float> total = combine(l_attr, l_attn, l_spatial, config.weights);
        tape.backward(total);
        sgd_step(params, opt);

        sum_attr += l_attr.item();
        if (l_attn.valid()) sum_attn += l_attn.item();
        if (l_spatial.valid()) sum_spatial += l_spatial.item();
        sum_total += total.item();
        ++batches;
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batches) + ": " + e.what());
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.losses.attr_on = true;
    log.losses.attn_on = config.model.attn_branch;
    log.losses.spatial_on = config.spatial_loss_on;
    log.losses.l_attr = batches ? sum_attr / batches : 0;
    log.losses.l_attn = batches ? sum_attn / batches : 0;
    log.losses.l_spatial = batches ? sum_spatial / batches : 0;
    log.losses.total = batches ? sum_total / batches : 0;
    log.val = evaluate(model, dataset, "val", config.batch_size);
    result.log.epochs.push_back(log);

    const double val_auc =
        log.val.head_auc[0].defined ? log.val.head_auc[0].value : -1.0;
    if (val_auc > result.log.best_val_malig_auc) {
      result.log.best_val_malig_auc = val_auc;
      result.log.best_epoch = epoch;
      result.best_checkpoint =
          snapshot(model, &opt, epoch, {hash_combine(config.seed, 0x9d5f)});
    }
  }

  result.final_checkpoint =
      snapshot(model, &opt, config.epochs - 1, {hash_combine(config.seed, 0x9d5f)});
  if (result.log.best_epoch < 0) result.best_checkpoint = result.final_checkpoint;

  model.eval();
  result.log.test = evaluate(model, dataset, "test", config.batch_size);

  if (out_dir) {
    write_checkpoint(*out_dir / "final.ckpt", result.final_checkpoint);
    write_checkpoint(*out_dir / "best.ckpt", result.best_checkpoint);
    std::ofstream lf(*out_dir / "runlog.json");
    lf << result.log.to_json() << "\n";
  }
  return result;
}

namespace {

const std::vector<std::string> kAblationNames = {"baseline", "attr", "attr_attn", "full"};

std::string ablation_display_name(const std::string& key) {
  if (key == "baseline") return "Baseline";
  if (key == "attr") return "Baseline+Attr";
  if (key == "attr_attn") return "Baseline+Attr+Attn";
  if (key == "full") return "MAA-Net";
  if (key.rfind("single:", 0) == 0) {
    std::string a = key.substr(7);
    a[0] = static_cast<char>(std::toupper(a[0]));
    return "Baseline+" + a.substr(0, 1);
  }
  return key;
}

std::string fmt_auc(const HeadAuc& a) {
  if (!a.defined) return "  --  ";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%0.4f", a.value);
  return buf;
}

}  // namespace

AblationResult ablation_suite(const Dataset& dataset, const TrainConfig& base,
                              const std::vector<std::uint64_t>& seeds,
                              bool include_single_attributes,
                              const std::optional<std::filesystem::path>& out_dir) {
  std::vector<std::string> names = kAblationNames;
  if (include_single_attributes)
    for (int a = 0; a < kAttributeCount; ++a)
      names.insert(names.end() - 2, std::string("single:") + kHeadNames[size_t(1 + a)]);

  AblationResult result;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream cf(*out_dir / "base_config.json");
    cf << train_config_to_json(base) << "\n";
  }
  for (std::uint64_t seed : seeds) {
    for (const auto& name : names) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      apply_ablation(cfg, name);
      std::optional<std::filesystem::path> run_dir;
      if (out_dir)
        run_dir = *out_dir / (name + "_seed" + std::to_string(seed));
      TrainResult tr = train(dataset, cfg, run_dir);
      AblationRow row;
      row.name = ablation_display_name(name);
      row.seed = seed;
      row.metrics = *tr.log.test;
      result.rows.push_back(std::move(row));
    }
  }
  if (out_dir) {
    std::ofstream tf(*out_dir / "ablation.json");
    tf << result.to_json() << "\n";
    std::ofstream tt(*out_dir / "ablation.txt");
    tt << result.to_table();
  }
  return result;
}

std::string AblationResult::to_table() const {
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-22s %6s | %8s %8s %8s %8s %8s %8s %8s %8s | %7s %7s %7s %7s %7s\n",
                "Model", "seed", "Malig", "Calci", "Shape", "Ratio", "Boundary", "Margin", "Echo",
                "Avg", "Acc", "F1", "Spec", "Rec", "Prec");
  s += buf;
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    std::snprintf(buf, sizeof buf,
                  "%-22s %6llu | %8s %8s %8s %8s %8s %8s %8s %8.4f | %7.4f %7.4f %7.4f %7.4f %7.4f\n",
                  r.name.c_str(), static_cast<unsigned long long>(r.seed),
                  fmt_auc(m.head_auc[0]).c_str(), fmt_auc(m.head_auc[1]).c_str(),
                  fmt_auc(m.head_auc[2]).c_str(), fmt_auc(m.head_auc[3]).c_str(),
                  fmt_auc(m.head_auc[4]).c_str(), fmt_auc(m.head_auc[5]).c_str(),
                  fmt_auc(m.head_auc[6]).c_str(), m.avg_attribute_auc, m.malignancy.acc,
                  m.malignancy.f1, m.malignancy.spec, m.malignancy.rec, m.malignancy.prec);
    s += buf;
  }
  return s;
}

std::string AblationResult::to_json() const {
  nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["seed"] = r.seed;
    j["metrics"] = report_json(r.metrics);
    rows_json.push_back(j);
  }
  nlohmann::ordered_json j;
  j["rows"] = rows_json;
  return j.dump(2);
}

CrossValidationResult cross_validate(const Dataset& dataset, const TrainConfig& config, int k) {
  if (k < 2) throw ConfigError("cross_validate: k must be >= 2");
  const int n = dataset.size();
  const auto folds = kfold_split(n, k, config.seed);

  CrossValidationResult result;
  for (int fold = 0; fold < k; ++fold) {
    Dataset ds = dataset;  // reassign split tags per fold
    std::vector<char> is_test(static_cast<size_t>(n), 0);
    for (int idx : folds[size_t(fold)]) is_test[size_t(idx)] = 1;
    std::vector<int> train_ids;
    for (int i = 0; i < n; ++i)
      if (!is_test[size_t(i)]) train_ids.push_back(i);
    // 20% of the training portion becomes the validation split.
    RngStream rng = substream(config.seed, "xval_fold" + std::to_string(fold));
    for (int i = static_cast<int>(train_ids.size()) - 1; i > 0; --i)
      std::swap(train_ids[size_t(i)], train_ids[size_t(rng.uniform_int(0, i))]);
    const size_t n_val = train_ids.size() / 5;
    std::vector<char> is_val(static_cast<size_t>(n), 0);
    for (size_t i = 0; i < n_val; ++i) is_val[size_t(train_ids[i])] = 1;
    for (int i = 0; i < n; ++i)
      ds.manifest.records[size_t(i)].split =
          is_test[size_t(i)] ? "test" : (is_val[size_t(i)] ? "val" : "train");

    TrainConfig fold_cfg = config;
    fold_cfg.seed = hash_combine(config.seed, static_cast<std::uint64_t>(fold));
    TrainResult tr = train(ds, fold_cfg);
    result.folds.push_back(*tr.log.test);
  }

  // Mean and population std over folds, per metric.
  auto collect = [&](auto getter) {
    std::vector<double> vals;
    for (const auto& f : result.folds) {
      double v;
      if (getter(f, v)) vals.push_back(v);
    }
    double mean = 0, sd = 0;
    if (!vals.empty()) {
      mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
      for (double v : vals) sd += (v - mean) * (v - mean);
      sd = std::sqrt(sd / vals.size());
    }
    return std::pair<double, double>(mean, sd);
  };

  for (int c = 0; c < kHeadCount; ++c) {
    auto [mean, sd] = collect([c](const MetricsReport& f, double& v) {
      if (!f.head_auc[size_t(c)].defined) return false;
      v = f.head_auc[size_t(c)].value;
      return true;
    });
    const bool any = std::any_of(result.folds.begin(), result.folds.end(),
                                 [c](const MetricsReport& f) { return f.head_auc[size_t(c)].defined; });
    result.mean.head_auc[size_t(c)] = {mean, any};
    result.stddev.head_auc[size_t(c)] = {sd, any};
  }
  auto set_confusion = [&](auto member) {
    auto [mean, sd] = collect([member](const MetricsReport& f, double& v) {
      v = f.malignancy.*member;
      return true;
    });
    result.mean.malignancy.*member = mean;
    result.stddev.malignancy.*member = sd;
  };
  set_confusion(&ConfusionMetrics::acc);
  set_confusion(&ConfusionMetrics::f1);
  set_confusion(&ConfusionMetrics::spec);
  set_confusion(&ConfusionMetrics::rec);
  set_confusion(&ConfusionMetrics::prec);
  {
    auto [mean, sd] = collect([](const MetricsReport& f, double& v) {
      v = f.avg_attribute_auc;
      return f.defined_attribute_aucs > 0;
    });
    result.mean.avg_attribute_auc = mean;
    result.stddev.avg_attribute_auc = sd;
    result.mean.defined_attribute_aucs = kAttributeCount;
    result.stddev.defined_attribute_aucs = kAttributeCount;
  }
  {
    auto [mean, sd] = collect([](const MetricsReport& f, double& v) {
      if (!f.hit_rate_defined) return false;
      v = f.hits.rate;
      return true;
    });
    const bool any = std::any_of(result.folds.begin(), result.folds.end(),
                                 [](const MetricsReport& f) { return f.hit_rate_defined; });
    result.mean.hits.rate = mean;
    result.mean.hit_rate_defined = any;
    result.stddev.hits.rate = sd;
    result.stddev.hit_rate_defined = any;
  }
  return result;
}

std::string CrossValidationResult::to_table() const {
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s | %8s %8s %8s %8s %8s %8s %8s %8s | %7s %7s %7s %7s %7s\n",
                "Fold", "Malig", "Calci", "Shape", "Ratio", "Boundary", "Margin", "Echo", "Avg",
                "Acc", "F1", "Spec", "Rec", "Prec");
  s += buf;
  auto row = [&](const std::string& label, const MetricsReport& m) {
    std::snprintf(buf, sizeof buf,
                  "%-8s | %8s %8s %8s %8s %8s %8s %8s %8.4f | %7.4f %7.4f %7.4f %7.4f %7.4f\n",
                  label.c_str(), fmt_auc(m.head_auc[0]).c_str(), fmt_auc(m.head_auc[1]).c_str(),
                  fmt_auc(m.head_auc[2]).c_str(), fmt_auc(m.head_auc[3]).c_str(),
                  fmt_auc(m.head_auc[4]).c_str(), fmt_auc(m.head_auc[5]).c_str(),
                  fmt_auc(m.head_auc[6]).c_str(), m.avg_attribute_auc, m.malignancy.acc,
                  m.malignancy.f1, m.malignancy.spec, m.malignancy.rec, m.malignancy.prec);
    s += buf;
  };
  for (size_t i = 0; i < folds.size(); ++i) row("Fold" + std::to_string(i + 1), folds[i]);
  row("Average", mean);
  row("STD", stddev);
  return s;
}

std::string CrossValidationResult::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json fj = nlohmann::ordered_json::array();
  for (const auto& f : folds) fj.push_back(report_json(f));
  j["folds"] = fj;
  j["average"] = report_json(mean);
  j["std"] = report_json(stddev);
  return j.dump(2);
}

void export_heatmaps(MaaNet<float>& model, const Dataset& dataset,
                     const std::vector<int>& indices, const std::filesystem::path& out_dir) {
  if (!model.config().attn_branch)
    throw ConfigError("export_heatmaps: model has no attention branch");
  std::filesystem::create_directories(out_dir);
  model.eval();
  const int S = model.config().input_size;
  const int ms = model.config().map_size();

  for (int idx : indices) {
    if (idx < 0 || idx >= dataset.size())
      throw DataError("export_heatmaps: sample index out of range: " + std::to_string(idx));
    const auto& rec = dataset.manifest.records[size_t(idx)];

    ImageF img = to_float(dataset.images[size_t(idx)]);
    if (img.h != img.w) img = pad_to_square(img);
    if (img.h != S) img = resize_bilinear(img, S, S);

    Tensor<float> input = Tensor<float>::uninit({1, 1, S, S});
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) input.at(0, 0, y, x) = img.at(y, x);
    ModelOutput<float> out = model.forward(input);

    for (int c = 0; c < kHeadCount; ++c) {
      ImageF m(ms, ms);
      for (int y = 0; y < ms; ++y)
        for (int x = 0; x < ms; ++x) m.at(y, x) = out.maps.at(0, c, y, x);
      const ImageF up = resize_bilinear(m, S, S);
      write_pgm(out_dir / (rec.id + "_" + kHeadNames[size_t(c)] + ".pgm"), quantize(up));
    }
    write_pgm(out_dir / (rec.id + "_input.pgm"), quantize(img));
  }
}

}  // namespace maanet
