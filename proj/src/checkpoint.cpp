#include "maskcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "maskcl/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskcl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json to_json(const ModelConfig& config) {
  const BranchArchitecture& a = config.backbone;
  return json{{"in_channels", a.in_channels},
              {"height", a.height},
              {"width", a.width},
              {"channels", a.channels},
              {"kernel", a.kernel},
              {"stripes", a.stripes},
              {"feature_dim", a.feature_dim},
              {"head_activation", config.head_activation == Activation::elu ? "elu" : "none"}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model", "must be an object");
  ModelConfig config;
  BranchArchitecture& a = config.backbone;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "in_channels") a.in_channels = value.get<int>();
      else if (key == "height") a.height = value.get<int>();
      else if (key == "width") a.width = value.get<int>();
      else if (key == "channels") a.channels = value.get<std::vector<int>>();
      else if (key == "kernel") a.kernel = value.get<int>();
      else if (key == "stripes") a.stripes = value.get<int>();
      else if (key == "feature_dim") a.feature_dim = value.get<int>();
      else if (key == "head_activation") {
        const auto name = value.get<std::string>();
        if (name == "elu") config.head_activation = Activation::elu;
        else if (name == "none") config.head_activation = Activation::none;
        else throw ConfigError("model.head_activation", "expected 'none' or 'elu', got '" + name + "'");
      } else {
        throw ConfigError("model." + key, "unknown key");
      }
    } catch (const json::exception& e) {
      throw ConfigError("model." + key, e.what());
    }
  }
  validate(config.backbone);
  return config;
}

namespace {

void write_values(std::ofstream& out, const double* data, Eigen::Index n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_values(std::ifstream& in, double* data, Eigen::Index n, const fs::path& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw SchemaError("checkpoint " + path.string() + " is truncated");
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const ModelParams<double>& m = ckpt.model;
  json header{{"format", kCheckpointFormat},
              {"model", to_json(m.config)},
              {"epoch", ckpt.epoch},
              {"seed", ckpt.seed},
              {"sizes",
               {{"rgb_branch", m.rgb_branch.size()},
                {"mask_branch", m.mask_branch.size()},
                {"predictor", m.predictor.size()},
                {"fusion", m.fusion.size()}}},
              {"banks", nullptr}};
  if (ckpt.banks) {
    const BankTriplet<double>& b = *ckpt.banks;
    if (b.mask.entries.rows() != b.rgb.size() || b.fused.entries.rows() != b.rgb.size() ||
        b.mask.dim() != b.rgb.dim() || b.fused.dim() != b.rgb.dim())
      throw InvariantError("save_checkpoint: banks differ in shape");
    header["banks"] = {{"n", b.rgb.size()}, {"d", b.rgb.dim()}, {"alpha", b.rgb.alpha}};
  }
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << kCheckpointFormat << '\n';
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* params : {&m.rgb_branch.parameters(), &m.mask_branch.parameters(), &m.predictor.parameters(),
                               &m.fusion.parameters()})
      write_values(out, params->data(), params->size());
    if (ckpt.banks)
      for (const auto* bank : {&ckpt.banks->rgb, &ckpt.banks->mask, &ckpt.banks->fused})
        write_values(out, bank->entries.data(), bank->entries.size());
    if (!out.flush()) {
      fs::remove(tmp, ec);
      throw IoError("cannot write checkpoint " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing checkpoint " + path.string());
  std::string tag;
  std::getline(in, tag);
  if (tag != kCheckpointFormat) throw SchemaError(path.string() + " is not a " + kCheckpointFormat + " checkpoint");
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || length > (1u << 24)) throw SchemaError("checkpoint " + path.string() + " has a corrupt header");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw SchemaError("checkpoint " + path.string() + " is truncated");

  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    ckpt.model = empty_model<double>(model_config_from_json(header.at("model")));
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    const json& sizes = header.at("sizes");
    ModelParams<double>& m = ckpt.model;
    if (sizes.at("rgb_branch").get<Eigen::Index>() != m.rgb_branch.size() ||
        sizes.at("mask_branch").get<Eigen::Index>() != m.mask_branch.size() ||
        sizes.at("predictor").get<Eigen::Index>() != m.predictor.size() ||
        sizes.at("fusion").get<Eigen::Index>() != m.fusion.size())
      throw SchemaError("checkpoint " + path.string() + ": parameter sizes do not match the architecture");
    for (auto* params : {&m.rgb_branch.parameters(), &m.mask_branch.parameters(), &m.predictor.parameters(),
                         &m.fusion.parameters()})
      read_values(in, params->data(), params->size(), path);
    const json& banks = header.at("banks");
    if (!banks.is_null()) {
      const auto n = banks.at("n").get<Eigen::Index>();
      const auto d = banks.at("d").get<Eigen::Index>();
      const auto alpha = banks.at("alpha").get<double>();
      if (d != m.feature_dim()) throw SchemaError("checkpoint " + path.string() + ": bank width differs from D");
      BankTriplet<double> triplet;
      for (FeatureBank<double>* bank : {&triplet.rgb, &triplet.mask, &triplet.fused}) {
        bank->alpha = alpha;
        bank->entries.resize(n, d);
        read_values(in, bank->entries.data(), bank->entries.size(), path);
      }
      ckpt.banks = std::move(triplet);
    }
  } catch (const json::exception& e) {
    throw SchemaError("checkpoint " + path.string() + " header: " + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError("checkpoint " + path.string() + " header: " + e.what());
  }
  if (in.peek() != std::ifstream::traits_type::eof())
    throw SchemaError("checkpoint " + path.string() + " has trailing bytes");
  return ckpt;
}

}  // namespace maskcl
