#include "fusedet/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fusedet/tensor_io.hpp"

namespace fs = std::filesystem;

namespace fusedet {

namespace {

std::map<std::string, std::string> parse_kv(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

}  // namespace

void save_checkpoint(const std::string& dir, DetectorModel& model) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw TensorError("cannot write checkpoint manifest in " + dir);

  const DetectorConfig& c = model.cfg;
  manifest << "fusedet-checkpoint v1\n";
  manifest << "config input_h=" << c.input_h << " input_w=" << c.input_w << " stride=" << c.stride
           << " channels=" << c.channels << " classes=" << c.num_classes
           << " attention=" << attention_kind_name(c.attention) << " unet_levels=" << c.unet_levels
           << " top_k=" << c.top_k << " score_threshold=" << c.score_threshold << "\n";
  manifest << "window n=" << model.n << " mode="
           << (model.window_mode == WindowMode::past_only ? "past_only" : "symmetric") << "\n";
  manifest << "fusion tag=" << fusion_tag_name(model.fusion.strategy.tag) << " n="
           << model.fusion.strategy.n << " mode="
           << (model.fusion.strategy.params.mode == FusionMode::per_channel ? "per_channel"
                                                                            : "shared")
           << " bias="
           << ((model.fusion.strategy.tag == FusionTag::learned &&
                model.fusion.strategy.params.has_bias()) ||
                       (model.fusion.strategy.tag == FusionTag::concat_conv &&
                        model.fusion.strategy.concat_params.has_bias())
                   ? 1
                   : 0)
           << "\n";

  for (const ParamRef& p : model.parameters()) {
    const std::string file = p.name + ".fftn";
    save_tensor((fs::path(dir) / file).string(), *p.value);
    manifest << "tensor " << p.name << " " << file << " shape=" << shape_str(p.value->shape)
             << "\n";
  }
}

DetectorModel load_checkpoint(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw TensorError("cannot read checkpoint manifest in " + dir);

  std::string line;
  if (!std::getline(manifest, line) || line != "fusedet-checkpoint v1") {
    throw TensorError("bad checkpoint manifest header in " + dir);
  }

  DetectorConfig cfg;
  int n = 0;
  WindowMode wmode = WindowMode::symmetric;
  FusionTag tag = FusionTag::none;
  FusionMode fmode = FusionMode::shared;
  bool fusion_bias = false;
  std::vector<std::pair<std::string, std::string>> tensors;

  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    const std::string rest = line.substr(std::min(line.size(), kind.size() + 1));
    if (kind == "config") {
      auto kv = parse_kv(rest);
      cfg.input_h = std::stoi(kv.at("input_h"));
      cfg.input_w = std::stoi(kv.at("input_w"));
      cfg.stride = std::stoi(kv.at("stride"));
      cfg.channels = std::stoi(kv.at("channels"));
      cfg.num_classes = std::stoi(kv.at("classes"));
      cfg.attention = attention_kind_from_name(kv.at("attention"));
      cfg.unet_levels = std::stoi(kv.at("unet_levels"));
      cfg.top_k = std::stoi(kv.at("top_k"));
      cfg.score_threshold = std::stof(kv.at("score_threshold"));
    } else if (kind == "window") {
      auto kv = parse_kv(rest);
      n = std::stoi(kv.at("n"));
      wmode = kv.at("mode") == "past_only" ? WindowMode::past_only : WindowMode::symmetric;
    } else if (kind == "fusion") {
      auto kv = parse_kv(rest);
      tag = fusion_tag_from_name(kv.at("tag"));
      fmode = kv.at("mode") == "per_channel" ? FusionMode::per_channel : FusionMode::shared;
      fusion_bias = kv.count("bias") && kv.at("bias") == "1";
    } else if (kind == "tensor") {
      std::istringstream ts(rest);
      std::string name, file;
      ts >> name >> file;
      tensors.emplace_back(name, file);
    }
  }

  DetectorModel model = DetectorModel::create(cfg, n, wmode, tag, FusionInit::identity, fmode, 0);
  if (tag == FusionTag::learned && fusion_bias) {
    model.fusion.strategy.params.bias = Tensor({cfg.channels});
    model.fusion.bias_grad = Tensor({cfg.channels});
  }

  std::map<std::string, ParamRef> by_name;
  for (ParamRef p : model.parameters()) by_name[p.name] = p;
  for (const auto& [name, file] : tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw TensorError("checkpoint tensor has no home: " + name);
    Tensor t = load_tensor((fs::path(dir) / file).string());
    if (t.shape != it->second.value->shape) {
      throw TensorError("checkpoint tensor " + name + " shape " + shape_str(t.shape) +
                        " does not match model shape " + shape_str(it->second.value->shape));
    }
    *it->second.value = std::move(t);
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw TensorError("checkpoint missing tensor: " + by_name.begin()->first);
  }
  return model;
}

}  // namespace fusedet
