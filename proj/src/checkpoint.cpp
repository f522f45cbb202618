#include "maanet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace maanet {

std::string model_config_to_json(const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["input_size"] = config.input_size;
  j["stage_channels"] = config.stage_channels;
  j["tap_stride"] = config.tap_stride;
  j["stream_width"] = config.stream_width;
  j["attr_branch"] = config.attr_branch;
  j["attn_branch"] = config.attn_branch;
  j["enabled_attributes"] = config.enabled_attributes;
  j["malig_head"] = config.malig_head == MaligHeadMode::GapConcat ? "gap_concat" : "logit_concat";
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model config: bad JSON: ") + e.what());
  }
  ModelConfig c;
  if (j.contains("input_size")) c.input_size = j.at("input_size");
  if (j.contains("stage_channels")) c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  if (j.contains("tap_stride")) c.tap_stride = j.at("tap_stride");
  if (j.contains("stream_width")) c.stream_width = j.at("stream_width");
  if (j.contains("attr_branch")) c.attr_branch = j.at("attr_branch");
  if (j.contains("attn_branch")) c.attn_branch = j.at("attn_branch");
  if (j.contains("enabled_attributes"))
    c.enabled_attributes = j.at("enabled_attributes").get<std::array<bool, 6>>();
  if (j.contains("malig_head")) {
    const std::string m = j.at("malig_head");
    if (m == "gap_concat") c.malig_head = MaligHeadMode::GapConcat;
    else if (m == "logit_concat") c.malig_head = MaligHeadMode::LogitConcat;
    else throw ConfigError("model config: unknown malig_head '" + m + "'");
  }
  c.validate();
  return c;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_i32(std::ostream& os, std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw DataError(std::string("checkpoint: truncated reading ") + what);
  return v;
}
std::uint64_t get_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8))
    throw DataError(std::string("checkpoint: truncated reading ") + what);
  return v;
}
std::int32_t get_i32(std::istream& is, const char* what) {
  std::int32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw DataError(std::string("checkpoint: truncated reading ") + what);
  return v;
}

void put_tensor(std::ostream& os, const CheckpointTensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.name.size()));
  os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  put_u32(os, static_cast<std::uint32_t>(t.shape.rank));
  for (int i = 0; i < t.shape.rank; ++i) put_u32(os, static_cast<std::uint32_t>(t.shape[i]));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

CheckpointTensor get_tensor(std::istream& is) {
  CheckpointTensor t;
  const std::uint32_t name_len = get_u32(is, "tensor name length");
  t.name.resize(name_len);
  if (!is.read(t.name.data(), name_len)) throw DataError("checkpoint: truncated tensor name");
  const std::uint32_t rank = get_u32(is, "tensor rank");
  if (rank < 1 || rank > 4) throw DataError("checkpoint: bad tensor rank");
  std::array<int, 4> dims{1, 1, 1, 1};
  std::int64_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = static_cast<int>(get_u32(is, "tensor dim"));
    numel *= dims[i];
  }
  switch (rank) {
    case 1: t.shape = {dims[0]}; break;
    case 2: t.shape = {dims[0], dims[1]}; break;
    case 3: t.shape = {dims[0], dims[1], dims[2]}; break;
    default: t.shape = {dims[0], dims[1], dims[2], dims[3]}; break;
  }
  t.data.resize(static_cast<size_t>(numel));
  if (!is.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float))))
    throw DataError("checkpoint: truncated tensor data for " + t.name);
  return t;
}

}  // namespace

Checkpoint snapshot(const MaaNet<float>& model, const SgdState<float>* opt, int epoch,
                    const std::vector<std::uint64_t>& rng_states) {
  Checkpoint c;
  c.model_config_json = model_config_to_json(model.config());
  c.config_digest = model.config().digest();
  c.epoch = epoch;
  c.rng_states = rng_states;
  for (const auto& e : model.registry().entries()) {
    CheckpointTensor t;
    t.name = e.name;
    t.shape = e.tensor.shape();
    t.data.assign(e.tensor.data(), e.tensor.data() + e.tensor.numel());
    c.tensors.push_back(std::move(t));
  }
  if (opt) {
    c.has_optimizer = true;
    std::size_t vi = 0;
    for (const auto& e : model.registry().entries()) {
      if (e.is_buffer) continue;
      if (vi >= opt->velocity.size())
        throw ContractError("snapshot: optimizer state shorter than parameter list");
      CheckpointTensor t;
      t.name = "opt." + e.name;
      t.shape = e.tensor.shape();
      t.data.assign(opt->velocity[vi].data(), opt->velocity[vi].data() + opt->velocity[vi].size());
      c.velocities.push_back(std::move(t));
      ++vi;
    }
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_checkpoint: cannot open " + path.string());
  os.write("MAAN", 4);
  put_u32(os, ckpt.version);
  put_u32(os, static_cast<std::uint32_t>(ckpt.model_config_json.size()));
  os.write(ckpt.model_config_json.data(),
           static_cast<std::streamsize>(ckpt.model_config_json.size()));
  put_u64(os, ckpt.config_digest);
  put_i32(os, ckpt.epoch);
  put_u32(os, static_cast<std::uint32_t>(ckpt.rng_states.size()));
  for (auto s : ckpt.rng_states) put_u64(os, s);
  put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) put_tensor(os, t);
  os.put(ckpt.has_optimizer ? 1 : 0);
  if (ckpt.has_optimizer) {
    put_u32(os, static_cast<std::uint32_t>(ckpt.velocities.size()));
    for (const auto& t : ckpt.velocities) put_tensor(os, t);
  }
  if (!os) throw DataError("write_checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_checkpoint: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MAAN", 4) != 0)
    throw DataError("read_checkpoint: bad magic in " + path.string());
  Checkpoint c;
  c.version = get_u32(is, "version");
  if (c.version != 1) throw DataError("read_checkpoint: unsupported version");
  const std::uint32_t cfg_len = get_u32(is, "config length");
  c.model_config_json.resize(cfg_len);
  if (!is.read(c.model_config_json.data(), cfg_len))
    throw DataError("read_checkpoint: truncated config");
  c.config_digest = get_u64(is, "config digest");
  c.epoch = get_i32(is, "epoch");
  const std::uint32_t n_rng = get_u32(is, "rng count");
  for (std::uint32_t i = 0; i < n_rng; ++i) c.rng_states.push_back(get_u64(is, "rng state"));
  const std::uint32_t n_tensors = get_u32(is, "tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) c.tensors.push_back(get_tensor(is));
  char has_opt = 0;
  if (!is.get(has_opt)) throw DataError("read_checkpoint: truncated optimizer flag");
  c.has_optimizer = has_opt == 1;
  if (c.has_optimizer) {
    const std::uint32_t n_vel = get_u32(is, "velocity count");
    for (std::uint32_t i = 0; i < n_vel; ++i) c.velocities.push_back(get_tensor(is));
  }
  return c;
}

void restore(MaaNet<float>& model, const Checkpoint& ckpt, SgdState<float>* opt) {
  if (ckpt.config_digest != model.config().digest())
    throw ConfigError("restore: checkpoint config digest mismatch (model " +
                      model.config().canonical() + ")");
  const auto& entries = model.registry().entries();
  if (entries.size() != ckpt.tensors.size())
    throw DataError("restore: tensor count mismatch");
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& src = ckpt.tensors[i];
    const auto& dst = entries[i];
    if (src.name != dst.name || !(src.shape == dst.tensor.shape()))
      throw DataError("restore: tensor layout mismatch at " + src.name);
    auto& v = const_cast<Tensor<float>&>(dst.tensor).values();
    for (std::int64_t j = 0; j < v.size(); ++j) v[j] = src.data[size_t(j)];
    const_cast<Tensor<float>&>(dst.tensor).zero_grad();
  }
  if (opt) {
    if (!ckpt.has_optimizer) throw DataError("restore: checkpoint has no optimizer state");
    auto params = model.parameters();
    opt->attach(params);
    if (ckpt.velocities.size() != opt->velocity.size())
      throw DataError("restore: velocity count mismatch");
    for (size_t i = 0; i < ckpt.velocities.size(); ++i) {
      auto& v = opt->velocity[i];
      if (static_cast<std::int64_t>(ckpt.velocities[i].data.size()) != v.size())
        throw DataError("restore: velocity dims mismatch at " + ckpt.velocities[i].name);
      for (std::int64_t j = 0; j < v.size(); ++j) v[j] = ckpt.velocities[i].data[size_t(j)];
    }
  }
}

MaaNet<float> load_model(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path);
  MaaNet<float> model(model_config_from_json(c.model_config_json));
  restore(model, c);
  model.eval();
  return model;
}

}  // namespace maanet
