#include "alignmamba/config.hpp"

#include <fstream>
#include <set>
#include <string>
#include <type_traits>

#include "alignmamba/errors.hpp"

namespace alignmamba {

using nlohmann::json;

namespace {

// Reads keys out of one JSON object, remembering which ones were consumed so
// that leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!j_.at(key).is_number_unsigned()) {
        throw ConfigError(full(key), "must be a non-negative integer");
      }
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(full(key), "has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(full(k), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<data::ModalitySpec> read_modalities(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "must be an array");
  std::vector<data::ModalitySpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Section s(j[i], path + "[" + std::to_string(i) + "]");
    data::ModalitySpec m;
    s.get("name", m.name);
    s.get("d_in", m.d_in);
    s.get("steps", m.steps);
    s.finish();
    out.push_back(std::move(m));
  }
  return out;
}

json modalities_to_json(const std::vector<data::ModalitySpec>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back({{"name", m.name}, {"d_in", m.d_in}, {"steps", m.steps}});
  return out;
}

void read_align(const json& j, align::AlignConfig& a, const std::string& path) {
  Section s(j, path);
  s.get("lambda_ot", a.lambda_ot);
  s.get("lambda_mmd", a.lambda_mmd);
  s.get("blur", a.blur);
  s.get("sigma", a.sigma);
  s.get("unbiased_mmd", a.unbiased_mmd);
  std::string bw = a.bandwidth == align::BandwidthRule::fixed ? "fixed" : "inverse_dim";
  s.get("bandwidth", bw);
  if (bw == "inverse_dim") {
    a.bandwidth = align::BandwidthRule::inverse_dim;
  } else if (bw == "fixed") {
    a.bandwidth = align::BandwidthRule::fixed;
  } else {
    throw ConfigError(s.full("bandwidth"), "expected \"inverse_dim\" or \"fixed\", got \"" + bw + "\"");
  }
  if (const json* anchor = s.child("anchor")) {
    if (anchor->is_string() && anchor->get<std::string>() == "last") {
      a.anchor = kLastModality;
    } else if (anchor->is_number_unsigned()) {
      a.anchor = anchor->get<ModalityId>();
    } else {
      throw ConfigError(s.full("anchor"), "expected a modality index or \"last\"");
    }
  }
  s.finish();
}

json align_to_json(const align::AlignConfig& a) {
  json j{{"lambda_ot", a.lambda_ot},
         {"lambda_mmd", a.lambda_mmd},
         {"blur", a.blur},
         {"bandwidth", a.bandwidth == align::BandwidthRule::fixed ? "fixed" : "inverse_dim"},
         {"sigma", a.sigma},
         {"unbiased_mmd", a.unbiased_mmd}};
  if (a.anchor == kLastModality) {
    j["anchor"] = "last";
  } else {
    j["anchor"] = a.anchor;
  }
  return j;
}

// Shared by the run config "model" section and checkpoint manifests; the
// latter also carry modalities and align.
void read_model(Section& s, model::ModelConfig& m) {
  s.get("d_model", m.d_model);
  s.get("d_state", m.d_state);
  s.get("d_conv", m.d_conv);
  s.get("expand", m.expand);
  s.get("unimodal_layers", m.unimodal_layers);
  s.get("fusion_layers", m.fusion_layers);
  s.get("max_layers", m.max_layers);
  s.get("num_classes", m.num_classes);
  s.get("dropout", m.dropout);
  s.get("use_moe", m.use_moe);
  s.get("seed", m.seed);
  std::string head = m.head == model::Head::regression ? "regression" : "classification";
  s.get("head", head);
  if (head == "classification") {
    m.head = model::Head::classification;
  } else if (head == "regression") {
    m.head = model::Head::regression;
  } else {
    throw ConfigError(s.full("head"), "expected \"classification\" or \"regression\"");
  }
  std::string routing = m.routing == moe::Routing::learnable ? "learnable" : "deterministic";
  s.get("routing", routing);
  if (routing == "deterministic") {
    m.routing = moe::Routing::deterministic;
  } else if (routing == "learnable") {
    m.routing = moe::Routing::learnable;
  } else {
    throw ConfigError(s.full("routing"), "expected \"deterministic\" or \"learnable\"");
  }
}

json model_fields(const model::ModelConfig& m) {
  return {{"d_model", m.d_model},
          {"d_state", m.d_state},
          {"d_conv", m.d_conv},
          {"expand", m.expand},
          {"unimodal_layers", m.unimodal_layers},
          {"fusion_layers", m.fusion_layers},
          {"max_layers", m.max_layers},
          {"head", m.head == model::Head::regression ? "regression" : "classification"},
          {"num_classes", m.num_classes},
          {"dropout", m.dropout},
          {"use_moe", m.use_moe},
          {"routing", m.routing == moe::Routing::learnable ? "learnable" : "deterministic"},
          {"seed", m.seed}};
}

}  // namespace

json model_config_to_json(const model::ModelConfig& cfg) {
  json j = model_fields(cfg);
  j["modalities"] = modalities_to_json(cfg.modalities);
  j["align"] = align_to_json(cfg.align);
  return j;
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig m;
  Section s(j, "model");
  read_model(s, m);
  if (const json* ms = s.child("modalities")) m.modalities = read_modalities(*ms, "model.modalities");
  if (const json* a = s.child("align")) read_align(*a, m.align, "model.align");
  s.finish();
  m.validate();
  return m;
}

model::ModelConfig RunConfig::model_for(const data::Dataset& ds) const {
  model::ModelConfig m = model;
  m.modalities = ds.modalities;
  if (m.head == model::Head::classification) m.num_classes = ds.num_classes;
  if (ablation.no_alignment) {
    m.align.lambda_ot = 0.0;
    m.align.lambda_mmd = 0.0;
  }
  if (ablation.no_moe) m.use_moe = false;
  if (ablation.learnable_routing) m.routing = moe::Routing::learnable;
  m.validate();
  return m;
}

void RunConfig::validate() const {
  synth.validate();
  train.validate();
  model.align.validate();
  model::ModelConfig probe = model;
  probe.modalities = synth.modalities;
  if (probe.head == model::Head::classification) probe.num_classes = synth.num_classes;
  probe.validate();
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  Section root(j, "");
  if (const json* sj = root.child("synth")) {
    Section s(*sj, "synth");
    auto& c = cfg.synth;
    if (const json* ms = s.child("modalities")) c.modalities = read_modalities(*ms, "synth.modalities");
    s.get("num_classes", c.num_classes);
    s.get("samples_per_class", c.samples_per_class);
    s.get("latent_dim", c.latent_dim);
    s.get("rho", c.rho);
    s.get("signal", c.signal);
    s.get("noise", c.noise);
    s.get("position_jitter", c.position_jitter);
    s.get("standardize", c.standardize);
    s.get("train_fraction", c.train_fraction);
    s.get("val_fraction", c.val_fraction);
    s.get("seed", c.seed);
    s.finish();
  }
  if (const json* mj = root.child("model")) {
    Section s(*mj, "model");
    read_model(s, cfg.model);
    s.finish();
  }
  if (const json* aj = root.child("align")) read_align(*aj, cfg.model.align, "align");
  if (const json* tj = root.child("train")) {
    Section s(*tj, "train");
    auto& t = cfg.train;
    s.get("learning_rate", t.learning_rate);
    s.get("batch_size", t.batch_size);
    s.get("max_epochs", t.max_epochs);
    s.get("grad_clip", t.grad_clip);
    s.get("early_stop_patience", t.early_stop_patience);
    s.get("plateau_factor", t.plateau_factor);
    s.get("plateau_patience", t.plateau_patience);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("adam_eps", t.adam_eps);
    s.get("seed", t.seed);
    s.finish();
  }
  if (const json* bj = root.child("ablation")) {
    Section s(*bj, "ablation");
    s.get("no_alignment", cfg.ablation.no_alignment);
    s.get("no_moe", cfg.ablation.no_moe);
    s.get("learnable_routing", cfg.ablation.learnable_routing);
    s.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  const auto& c = cfg.synth;
  const auto& t = cfg.train;
  return {
      {"synth",
       {{"modalities", modalities_to_json(c.modalities)},
        {"num_classes", c.num_classes},
        {"samples_per_class", c.samples_per_class},
        {"latent_dim", c.latent_dim},
        {"rho", c.rho},
        {"signal", c.signal},
        {"noise", c.noise},
        {"position_jitter", c.position_jitter},
        {"standardize", c.standardize},
        {"train_fraction", c.train_fraction},
        {"val_fraction", c.val_fraction},
        {"seed", c.seed}}},
      {"model", model_fields(cfg.model)},
      {"align", align_to_json(cfg.model.align)},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"max_epochs", t.max_epochs},
        {"grad_clip", t.grad_clip},
        {"early_stop_patience", t.early_stop_patience},
        {"plateau_factor", t.plateau_factor},
        {"plateau_patience", t.plateau_patience},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"seed", t.seed}}},
      {"ablation",
       {{"no_alignment", cfg.ablation.no_alignment},
        {"no_moe", cfg.ablation.no_moe},
        {"learnable_routing", cfg.ablation.learnable_routing}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace alignmamba
