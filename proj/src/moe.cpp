#include "alignmamba/moe.hpp"

#include <cmath>
#include <optional>

namespace alignmamba::moe {

ExpertSet::ExpertSet(std::size_t modalities, std::size_t in, std::size_t out)
    : specific(modalities, Linear(in, out)), shared(in, out) {
  if (modalities == 0) throw Error("ExpertSet: at least one modality required");
}

void ExpertSet::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t m = 0; m < specific.size(); ++m) {
    specific[m].collect(prefix + ".expert" + std::to_string(m), out);
  }
  shared.collect(prefix + ".shared", out);
}

void ExpertSet::init(std::mt19937_64& rng, double specific_scale) {
  shared.init_uniform(rng);
  for (auto& e : specific) e.init_uniform(rng, specific_scale);
}

namespace {

void check_modality(const ExpertSet& experts, ModalityId m) {
  if (m >= experts.modality_count()) {
    throw Error("unknown modality id " + std::to_string(m) + " (configured " +
                std::to_string(experts.modality_count()) + ")");
  }
}

double dot_column(const Tensor& W, const Tensor& h, std::size_t col) {
  const std::size_t in = W.dim(0), out = W.dim(1);
  double acc = 0.0;
  for (std::size_t k = 0; k < in; ++k) acc += h[k] * W[k * out + col];
  return acc;
}

}  // namespace

Tensor moe_project(const ExpertSet& experts, const Tensor& h, ModalityId m) {
  check_modality(experts, m);
  if (h.size() != experts.in_dim()) {
    throw ShapeError("moe_project: token " + to_string(h.shape()) + " vs expert input " +
                     std::to_string(experts.in_dim()));
  }
  const Linear& e = experts.specific[m];
  const Linear& s = experts.shared;
  Tensor out({experts.out_dim()});
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = (dot_column(e.weight, h, j) + e.bias[j]) +
             (dot_column(s.weight, h, j) + s.bias[j]);
  }
  return out;
}

Var moe_project(const ExpertSet& experts, Binder& bind, Var H,
                const std::vector<ModalityId>& ids) {
  if (H.value().rank() != 2 || H.dim(1) != experts.in_dim()) {
    throw ShapeError("moe_project: input " + to_string(H.shape()) + " vs expert input " +
                     std::to_string(experts.in_dim()));
  }
  const std::size_t T = H.dim(0);
  if (ids.size() != T) {
    throw ShapeError("moe_project: " + std::to_string(ids.size()) +
                     " modality ids for " + std::to_string(T) + " tokens");
  }
  std::vector<std::vector<std::size_t>> rows(experts.modality_count());
  for (std::size_t t = 0; t < T; ++t) {
    check_modality(experts, ids[t]);
    rows[ids[t]].push_back(t);
  }
  // specific[m](h) + shared(h) == h (W_m + W_s) + (b_m + b_s): one
  // matmul per modality segment.
  Var W_s = bind(experts.shared.weight);
  Var b_s = bind(experts.shared.bias);
  std::optional<Var> out;
  for (std::size_t m = 0; m < rows.size(); ++m) {
    if (rows[m].empty()) continue;
    Var W = add(bind(experts.specific[m].weight), W_s);
    Var b = add(bind(experts.specific[m].bias), b_s);
    Var part = rows[m].size() == T ? linear(H, W, b)
                                   : scatter_rows(linear(gather_rows(H, rows[m]), W, b),
                                                  rows[m], T);
    out = out ? add(*out, part) : part;
  }
  return *out;
}

std::size_t argmax_lowest(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

std::size_t learnable_route(const Linear& gate, const Tensor& h) {
  if (h.size() != gate.in_dim()) {
    throw ShapeError("learnable_route: token " + to_string(h.shape()) + " vs gate input " +
                     std::to_string(gate.in_dim()));
  }
  std::vector<double> logits(gate.out_dim());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    logits[k] = dot_column(gate.weight, h, k) + gate.bias[k];
  }
  return argmax_lowest(logits);
}

Route route(const Linear& gate, Binder& bind, Var H) {
  if (H.value().rank() != 2 || gate.in_dim() != H.dim(1)) {
    throw ShapeError("route: input " + to_string(H.shape()) + " vs gate input " +
                     std::to_string(gate.in_dim()));
  }
  const std::size_t T = H.dim(0), M = gate.out_dim();
  Route r{softmax(gate(bind, H), 1), std::vector<std::size_t>(T)};
  for (std::size_t t = 0; t < T; ++t) {
    r.chosen[t] = argmax_lowest(r.probs.value().data().subspan(t * M, M));
  }
  return r;
}

Var moe_project_routed(const ExpertSet& experts, Binder& bind, Var H, const Route& r) {
  const std::size_t T = H.dim(0), M = experts.modality_count();
  if (r.chosen.size() != T || r.probs.dim(1) != M) {
    throw ShapeError("moe_project_routed: route covers " + std::to_string(r.chosen.size()) +
                     " tokens over " + std::to_string(r.probs.dim(1)) + " experts");
  }
  std::vector<std::vector<std::size_t>> rows(M);
  for (std::size_t t = 0; t < T; ++t) rows[r.chosen[t]].push_back(t);
  Var out = experts.shared(bind, H);
  for (std::size_t k = 0; k < M; ++k) {
    if (rows[k].empty()) continue;
    const std::size_t n = rows[k].size();
    Var y = experts.specific[k](bind, gather_rows(H, rows[k]));
    Var p = reshape(slice(gather_rows(r.probs, rows[k]), {{0, n}, {k, k + 1}}), {n});
    out = add(out, scatter_rows(scale_rows(y, p), rows[k], T));
  }
  return out;
}

Var moe_project_learnable(const ExpertSet& experts, const Linear& gate, Binder& bind,
                          Var H, std::vector<std::size_t>* chosen) {
  if (gate.out_dim() != experts.modality_count() || gate.in_dim() != experts.in_dim()) {
    throw ShapeError("moe_project_learnable: gate [" + std::to_string(gate.in_dim()) + ", " +
                     std::to_string(gate.out_dim()) + "] vs experts");
  }
  Route r = route(gate, bind, H);
  if (chosen) *chosen = r.chosen;
  return moe_project_routed(experts, bind, H, r);
}

MoEMambaLayer::MoEMambaLayer(const ssm::MambaConfig& cfg, std::size_t modalities,
                             Routing routing_mode)
    : config(cfg.resolved()),
      routing(routing_mode),
      moe_in(modalities, config.d_model, 2 * config.d_inner),
      core(config),
      moe_out(modalities, config.d_inner, config.d_model) {
  if (routing == Routing::learnable) gate = Linear(config.d_model, modalities);
}

void MoEMambaLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  moe_in.collect(prefix + ".moe_in", out);
  core.collect(prefix + ".core", out);
  moe_out.collect(prefix + ".moe_out", out);
  if (routing == Routing::learnable) gate.collect(prefix + ".gate", out);
}

void MoEMambaLayer::init(std::mt19937_64& rng) { init(rng, rng); }

void MoEMambaLayer::init(std::mt19937_64& shared_rng, std::mt19937_64& expert_rng) {
  // Same draw order as MambaLayer::init, so a plain layer seeded alike gets
  // exactly these shared weights.
  moe_in.shared.init_uniform(shared_rng);
  core.init(config, shared_rng);
  moe_out.shared.init_uniform(shared_rng);
  for (auto& e : moe_in.specific) e.init_uniform(expert_rng, kSpecificScale);
  for (auto& e : moe_out.specific) e.init_uniform(expert_rng, kSpecificScale);
  if (routing == Routing::learnable) gate.init_uniform(expert_rng);
}

Var moe_mamba_forward(const MoEMambaLayer& layer, Binder& bind, Var x,
                      const std::vector<ModalityId>& ids) {
  if (x.value().rank() != 2 || x.dim(1) != layer.config.d_model) {
    throw ShapeError("moe_mamba_forward: input " + to_string(x.shape()) +
                     " does not match d_model " + std::to_string(layer.config.d_model));
  }
  const std::size_t T = x.dim(0), D = layer.config.d_inner;
  if (T == 0) throw ShapeError("moe_mamba_forward: empty sequence");
  if (ids.size() != T) {
    throw ShapeError("moe_mamba_forward: " + std::to_string(ids.size()) +
                     " modality ids for " + std::to_string(T) + " tokens");
  }
  // Learnable routing decides once per token from the layer input and sends
  // the token to the same expert index in both projections.
  const bool learnable = layer.routing == Routing::learnable;
  std::optional<Route> r;
  if (learnable) r = route(layer.gate, bind, x);
  Var xz = learnable ? moe_project_routed(layer.moe_in, bind, x, *r)
                     : moe_project(layer.moe_in, bind, x, ids);
  Var value = slice(xz, {{0, T}, {0, D}});
  Var gate = slice(xz, {{0, T}, {D, 2 * D}});
  Var y = layer.core(bind, value, gate);
  Var out = learnable ? moe_project_routed(layer.moe_out, bind, y, *r)
                      : moe_project(layer.moe_out, bind, y, ids);
  return add(x, out);
}

Tensor moe_mamba_forward(const MoEMambaLayer& layer, const Tensor& x,
                         const std::vector<ModalityId>& ids) {
  Tape tape;
  Binder bind(tape, false);
  return moe_mamba_forward(layer, bind, tape.constant(x), ids).value();
}

}  // namespace alignmamba::moe
