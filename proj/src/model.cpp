#include "alignmamba/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "alignmamba/config.hpp"
#include "alignmamba/mat1.hpp"

namespace alignmamba::model {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelConfig::validate() const {
  if (modalities.empty()) throw ConfigError("model.modalities", "at least one modality required");
  for (const auto& m : modalities) {
    if (m.d_in == 0 || m.steps == 0) {
      throw ConfigError("model.modalities", "modality '" + m.name + "' needs d_in, steps >= 1");
    }
  }
  if (d_model == 0) throw ConfigError("model.d_model", "must be >= 1");
  if (d_state == 0) throw ConfigError("model.d_state", "must be >= 1");
  if (d_conv == 0) throw ConfigError("model.d_conv", "must be >= 1");
  if (expand == 0) throw ConfigError("model.expand", "must be >= 1");
  if (unimodal_layers < 1 || unimodal_layers > max_layers) {
    throw ConfigError("model.unimodal_layers",
                      "must lie in [1, " + std::to_string(max_layers) + "]");
  }
  if (fusion_layers < 1 || fusion_layers > max_layers) {
    throw ConfigError("model.fusion_layers", "must lie in [1, " + std::to_string(max_layers) + "]");
  }
  if (head == Head::classification && num_classes < 2) {
    throw ConfigError("model.num_classes", "classification needs >= 2 classes");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout", "must lie in [0, 1)");
  align.validate();
  if (align.anchor != kLastModality && align.anchor >= modalities.size()) {
    throw ConfigError("align.anchor", "anchor " + std::to_string(align.anchor) +
                                          " outside the configured modalities");
  }
}

ssm::MambaConfig ModelConfig::mamba() const {
  ssm::MambaConfig c;
  c.d_model = d_model;
  c.d_inner = expand * d_model;
  c.d_state = d_state;
  c.d_conv = d_conv;
  return c.resolved();
}

AlignMamba2::AlignMamba2(ModelConfig cfg) : config_(std::move(cfg)) {
  config_.validate();
  const auto mc = config_.mamba();
  const std::size_t M = config_.modalities.size();
  // One stream per component, so that ablation variants share every weight
  // they have in common.
  auto stream = [&](std::uint64_t tag, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed),
                      static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
  };
  for (std::size_t m = 0; m < M; ++m) {
    auto rng = stream(1, m);
    encoders.emplace_back(config_.modalities[m].d_in, config_.d_model);
    encoders.back().init_uniform(rng);
    unimodal.emplace_back();
    for (std::size_t l = 0; l < config_.unimodal_layers; ++l) {
      unimodal.back().emplace_back(mc);
      unimodal.back().back().init(rng);
    }
  }
  for (std::size_t l = 0; l < config_.fusion_layers; ++l) {
    auto shared_rng = stream(2, l);
    if (config_.use_moe) {
      auto expert_rng = stream(3, l);
      fusion_moe.emplace_back(mc, M, config_.routing);
      fusion_moe.back().init(shared_rng, expert_rng);
    } else {
      fusion_plain.emplace_back(mc);
      fusion_plain.back().init(shared_rng);
    }
  }
  auto head_rng = stream(4);
  head = Linear(config_.d_model, config_.output_dim());
  head.init_uniform(head_rng);
}

std::vector<NamedParam> AlignMamba2::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t m = 0; m < encoders.size(); ++m) {
    const std::string tag = "modality" + std::to_string(m);
    encoders[m].collect(tag + ".encoder", out);
    for (std::size_t l = 0; l < unimodal[m].size(); ++l) {
      unimodal[m][l].collect(tag + ".mamba" + std::to_string(l), out);
    }
  }
  for (std::size_t l = 0; l < fusion_moe.size(); ++l) {
    fusion_moe[l].collect("fusion" + std::to_string(l), out);
  }
  for (std::size_t l = 0; l < fusion_plain.size(); ++l) {
    fusion_plain[l].collect("fusion" + std::to_string(l), out);
  }
  head.collect("head", out);
  return out;
}

std::map<ModalityId, Var> AlignMamba2::encode(Binder& bind, const MultimodalSample& sample,
                                              DropoutRng rng) const {
  const std::size_t M = config_.modalities.size();
  if (sample.features.size() != M) {
    throw Error("encode: sample carries " + std::to_string(sample.features.size()) +
                " modalities, model expects " + std::to_string(M));
  }
  std::map<ModalityId, Var> reps;
  for (std::size_t m = 0; m < M; ++m) {
    const Tensor& X = sample.features[m];
    if (X.rank() != 2 || X.dim(1) != config_.modalities[m].d_in || X.dim(0) == 0) {
      throw ShapeError("encode: modality '" + config_.modalities[m].name + "' input " +
                       to_string(X.shape()) + " incompatible with d_in " +
                       std::to_string(config_.modalities[m].d_in));
    }
    Var h = encoders[m](bind, bind.tape().constant(X));
    if (rng) h = dropout(h, config_.dropout, *rng);
    for (const auto& layer : unimodal[m]) h = ssm::mamba_forward(layer, bind, h);
    reps.emplace(static_cast<ModalityId>(m), h);
  }
  return reps;
}

Var AlignMamba2::fuse(Binder& bind, const std::map<ModalityId, Var>& reps,
                      std::vector<ModalityId>* ids_out) const {
  std::vector<Var> parts;
  std::vector<ModalityId> ids;
  for (const auto& [m, H] : reps) {
    if (H.value().rank() != 2 || H.dim(1) != config_.d_model) {
      throw ShapeError("fuse: modality " + std::to_string(m) + " representation " +
                       to_string(H.shape()) + " does not match d_model " +
                       std::to_string(config_.d_model));
    }
    parts.push_back(H);
    ids.insert(ids.end(), H.dim(0), m);
  }
  Var z = concat(parts, 0);
  for (const auto& layer : fusion_moe) z = moe::moe_mamba_forward(layer, bind, z, ids);
  for (const auto& layer : fusion_plain) z = ssm::mamba_forward(layer, bind, z);
  if (ids_out) *ids_out = std::move(ids);
  return z;
}

Var AlignMamba2::predict(Binder& bind, Var Z, DropoutRng rng) const {
  if (Z.value().rank() != 2 || Z.dim(0) == 0) {
    throw ShapeError("predict: fused sequence " + to_string(Z.shape()) + " is empty");
  }
  Var pooled = reshape(mean(Z, {0}), {1, config_.d_model});
  if (rng) pooled = dropout(pooled, config_.dropout, *rng);
  return reshape(head(bind, pooled), {config_.output_dim()});
}

AlignMamba2::Forward AlignMamba2::forward(Binder& bind, const MultimodalSample& sample,
                                          DropoutRng rng) const {
  Forward f;
  f.reps = encode(bind, sample, rng);
  f.fused = fuse(bind, f.reps);
  f.output = predict(bind, f.fused, rng);
  return f;
}

Var task_loss(Var output, double label, Head head) {
  Tape& tape = *output.tape;
  if (head == Head::classification) {
    const std::size_t C = output.value().size();
    if (!(label >= 0.0) || label != std::floor(label) || label >= static_cast<double>(C)) {
      throw Error("task_loss: label " + std::to_string(label) +
                  " is not a class index for " + std::to_string(C) + " classes");
    }
    const auto cls = static_cast<std::size_t>(label);
    Var lp = log_softmax(reshape(output, {1, C}), 1);
    return neg(reshape(slice(lp, {{0, 1}, {cls, cls + 1}}), {}));
  }
  if (output.value().size() != 1) {
    throw Error("task_loss: regression head must produce one value, got " +
                to_string(output.shape()));
  }
  return reshape(abs(sub(output, tape.constant(Tensor({1}, {label})))), {});
}

LossTerms total_loss(Var output, double label, const std::map<ModalityId, Var>& reps,
                     const ModelConfig& cfg) {
  Tape& tape = *output.tape;
  LossTerms t;
  t.task = task_loss(output, label, cfg.head);
  if (reps.size() >= 2) {
    const auto a = align::alignment_loss(reps, cfg.align);
    t.ot = a.ot;
    t.mmd = a.mmd;
    t.total = add(t.task, a.total);
  } else {
    t.ot = tape.constant(Tensor::scalar(0.0));
    t.mmd = tape.constant(Tensor::scalar(0.0));
    t.total = t.task;
  }
  return t;
}

double prediction(const Tensor& output, Head head) {
  if (head == Head::regression) return output[0];
  return static_cast<double>(moe::argmax_lowest(output.data()));
}

void save_checkpoint(const fs::path& dir, AlignMamba2& model) {
  fs::create_directories(dir / "params");
  json manifest;
  manifest["format"] = "alignmamba-checkpoint/1";
  manifest["config"] = model_config_to_json(model.config());
  json params = json::object();
  for (const auto& p : model.parameters()) {
    const fs::path rel = fs::path("params") / (p.name + ".mat1");
    save_mat1(dir / rel, *p.value);
    params[p.name] = rel.generic_string();
  }
  manifest["parameters"] = std::move(params);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("failed to write checkpoint manifest in " + dir.string());
}

AlignMamba2 load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open checkpoint manifest " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, std::string("checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "alignmamba-checkpoint/1") {
    throw Error("checkpoint manifest: unsupported format");
  }
  AlignMamba2 model(model_config_from_json(manifest.at("config")));
  const json& files = manifest.at("parameters");
  auto params = model.parameters();
  if (files.size() != params.size()) {
    throw Error("checkpoint holds " + std::to_string(files.size()) + " parameters, model has " +
                std::to_string(params.size()));
  }
  for (auto& p : params) {
    if (!files.contains(p.name)) throw Error("checkpoint is missing parameter " + p.name);
    Tensor t = load_mat1(dir / files.at(p.name).get<std::string>());
    if (t.shape() != p.value->shape()) {
      throw ShapeError("checkpoint parameter " + p.name + " has shape " + to_string(t.shape()) +
                       ", model expects " + to_string(p.value->shape()));
    }
    *p.value = std::move(t);
  }
  return model;
}

}  // namespace alignmamba::model
