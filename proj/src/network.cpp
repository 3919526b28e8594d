#include "npt/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace npt {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::concat1: return "concat1";
    case Variant::no_spadain: return "no_spadain";
    case Variant::maxpool: return "maxpool";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::full, Variant::concat1, Variant::no_spadain, Variant::maxpool}) {
    if (name == variant_name(v)) return v;
  }
  throw std::invalid_argument("unknown variant '" + name + "' (expected full, concat1, no_spadain or maxpool)");
}

namespace {

template <typename P, typename F>
void visit_linear_p(const std::string& name, P& lin, F& f) {
  f(name + ".weight", lin.weight);
  f(name + ".bias", lin.bias);
}

template <typename P, typename F>
void visit_spadain_p(const std::string& name, P& unit, F& f) {
  visit_linear_p(name + ".gamma", unit.gamma, f);
  visit_linear_p(name + ".beta", unit.beta, f);
}

template <typename P, typename F>
void visit_resblock_p(const std::string& name, P& block, bool modulated, F& f) {
  if (modulated) visit_spadain_p(name + ".spadain_1", block.spadain_1, f);
  visit_linear_p(name + ".conv_1", block.conv_1, f);
  if (modulated) visit_spadain_p(name + ".spadain_2", block.spadain_2, f);
  visit_linear_p(name + ".conv_2", block.conv_2, f);
  if (modulated) visit_spadain_p(name + ".spadain_skip", block.spadain_skip, f);
  visit_linear_p(name + ".conv_skip", block.conv_skip, f);
}

template <typename P, typename F>
void visit_model(P& p, const ModelConfig& cfg, F& f) {
  visit_linear_p("enc_conv1", p.enc_conv1, f);
  visit_linear_p("enc_conv2", p.enc_conv2, f);
  visit_linear_p("enc_conv3", p.enc_conv3, f);
  visit_linear_p("dec_conv0", p.dec_conv0, f);
  const bool blocks = cfg.variant != Variant::concat1;
  const bool modulated = cfg.variant != Variant::no_spadain;
  if (blocks) visit_resblock_p("resblock_1", p.resblock_1, modulated, f);
  visit_linear_p("dec_conv1", p.dec_conv1, f);
  if (blocks) visit_resblock_p("resblock_2", p.resblock_2, modulated, f);
  visit_linear_p("dec_conv2", p.dec_conv2, f);
  if (blocks) visit_resblock_p("resblock_3", p.resblock_3, modulated, f);
  visit_linear_p("dec_conv_out", p.dec_conv_out, f);
}

template <typename T>
LinearParams<T> zero_linear(Index cin, Index cout) {
  return {Tensor3<T>(1, cout, cin), Tensor3<T>(1, cout, 1)};
}

template <typename T>
SpadainParams<T> zero_spadain(Index width) {
  return {zero_linear<T>(3, width), zero_linear<T>(3, width)};
}

template <typename T>
ResBlockParams<T> zero_resblock(Index width) {
  return {zero_spadain<T>(width), zero_spadain<T>(width), zero_spadain<T>(width),
          zero_linear<T>(width, width), zero_linear<T>(width, width), zero_linear<T>(width, width)};
}

template <typename T>
ModelParams<T> zero_params(const ModelConfig& cfg) {
  const auto& w = cfg.widths;
  if (w.c1 < 1 || w.c2 < 1 || w.c3 < 1 || w.w2 < 1 || w.w3 < 1) throw std::invalid_argument("widths must be positive");
  const Index z = w.c3 + 3;
  ModelParams<T> p;
  p.enc_conv1 = zero_linear<T>(3, w.c1);
  p.enc_conv2 = zero_linear<T>(w.c1, w.c2);
  p.enc_conv3 = zero_linear<T>(w.c2, w.c3);
  p.dec_conv0 = zero_linear<T>(z, z);
  p.dec_conv1 = zero_linear<T>(z, w.w2);
  p.dec_conv2 = zero_linear<T>(w.w2, w.w3);
  p.dec_conv_out = zero_linear<T>(w.w3, 3);
  if (cfg.variant != Variant::concat1) {
    p.resblock_1 = zero_resblock<T>(z);
    p.resblock_2 = zero_resblock<T>(w.w2);
    p.resblock_3 = zero_resblock<T>(w.w3);
  }
  return p;
}

template <typename T>
Var<T> linear(Var<T> x, const LinearParams<T>& lin, ParamBinder<T>& bind) {
  return pointwise_linear(x, bind(lin.weight), bind(lin.bias));
}

}  // namespace

template <typename T>
void ModelParams<T>::visit(const ModelConfig& cfg, const std::function<void(const std::string&, Tensor3<T>&)>& f) {
  visit_model(*this, cfg, f);
}

template <typename T>
void ModelParams<T>::visit(const ModelConfig& cfg,
                           const std::function<void(const std::string&, const Tensor3<T>&)>& f) const {
  visit_model(*this, cfg, f);
}

template <typename T>
Index ModelParams<T>::parameter_count(const ModelConfig& cfg) const {
  Index total = 0;
  visit(cfg, std::function<void(const std::string&, const Tensor3<T>&)>(
                 [&](const std::string&, const Tensor3<T>& t) { total += t.size(); }));
  return total;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  auto cl = [](const LinearParams<T>& l) { return LinearParams<U>{l.weight.template cast<U>(), l.bias.template cast<U>()}; };
  auto cs = [&](const SpadainParams<T>& s) { return SpadainParams<U>{cl(s.gamma), cl(s.beta)}; };
  auto cr = [&](const ResBlockParams<T>& r) {
    return ResBlockParams<U>{cs(r.spadain_1), cs(r.spadain_2), cs(r.spadain_skip), cl(r.conv_1), cl(r.conv_2), cl(r.conv_skip)};
  };
  out.enc_conv1 = cl(enc_conv1);
  out.enc_conv2 = cl(enc_conv2);
  out.enc_conv3 = cl(enc_conv3);
  out.dec_conv0 = cl(dec_conv0);
  out.resblock_1 = cr(resblock_1);
  out.dec_conv1 = cl(dec_conv1);
  out.resblock_2 = cr(resblock_2);
  out.dec_conv2 = cl(dec_conv2);
  out.resblock_3 = cr(resblock_3);
  out.dec_conv_out = cl(dec_conv_out);
  return out;
}

template <typename T>
Var<T> ParamBinder<T>::operator()(const Tensor3<T>& param) {
  auto it = bound_.find(&param);
  if (it != bound_.end()) return it->second;
  auto v = tape_.leaf(param, requires_grad_, "param");
  bound_.emplace(&param, v);
  return v;
}

template <typename T>
Var<T> ParamBinder<T>::find(const Tensor3<T>& param) const {
  auto it = bound_.find(&param);
  return it == bound_.end() ? Var<T>{} : it->second;
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> encode_pose(Var<T> pose_mesh, const ModelParams<T>& p, const ModelConfig& cfg, ParamBinder<T>& bind) {
  if (pose_mesh.shape().c != 3) throw ShapeError("encode_pose: expected 3 input channels, got " + pose_mesh.shape().str());
  auto h = relu(instance_norm(linear(pose_mesh, p.enc_conv1, bind), cfg.eps));
  h = relu(instance_norm(linear(h, p.enc_conv2, bind), cfg.eps));
  return relu(instance_norm(linear(h, p.enc_conv3, bind), cfg.eps));
}

template <typename T>
Var<T> spadain(Var<T> h, Var<T> id_mesh, const SpadainParams<T>& u, double eps, ParamBinder<T>& bind, bool normalize,
               SpadainTrace<T>* trace, const std::string& name) {
  const Shape hs = h.shape(), ms = id_mesh.shape();
  if (hs.n != ms.n || hs.v != ms.v || ms.c != 3) {
    throw ShapeError("spadain: features " + hs.str() + " incompatible with identity mesh " + ms.str());
  }
  auto normalized = normalize ? instance_norm(h, eps) : h;
  if (trace) {
    trace->names.push_back(name);
    trace->inputs.push_back(h);
    trace->normalized.push_back(normalized);
  }
  auto gamma = linear(id_mesh, u.gamma, bind);
  auto beta = linear(id_mesh, u.beta, bind);
  if (gamma.shape().c != hs.c) {
    throw ShapeError("spadain: modulation width " + std::to_string(gamma.shape().c) + " does not match features " + hs.str());
  }
  return add(mul(gamma, normalized), beta);
}

template <typename T>
Var<T> spadain_resblock(Var<T> h, Var<T> id_mesh, const ResBlockParams<T>& r, double eps, ParamBinder<T>& bind,
                        ResBlockOptions opts, SpadainTrace<T>* trace, const std::string& name) {
  const Index width = r.conv_1.weight.c();
  if (h.shape().c != width) {
    throw ShapeError(name + ": block width " + std::to_string(width) + " does not match input " + h.shape().str());
  }
  auto unit = [&](Var<T> x, const SpadainParams<T>& u, bool normalize, const std::string& unit_name) {
    if (opts.modulate) return spadain(x, id_mesh, u, eps, bind, normalize, trace, name + "." + unit_name);
    return normalize ? instance_norm(x, eps) : x;
  };
  auto main = relu(linear(unit(h, r.spadain_1, opts.normalize_input, "spadain_1"), r.conv_1, bind));
  main = relu(linear(unit(main, r.spadain_2, true, "spadain_2"), r.conv_2, bind));
  auto skip = relu(linear(unit(h, r.spadain_skip, opts.normalize_input, "spadain_skip"), r.conv_skip, bind));
  return add(main, skip);
}

template <typename T>
Var<T> forward(Var<T> pose_mesh, Var<T> id_mesh, const ModelParams<T>& p, const ModelConfig& cfg, ParamBinder<T>& bind,
               SpadainTrace<T>* trace) {
  const Shape ps = pose_mesh.shape(), is = id_mesh.shape();
  if (ps.c != 3 || is.c != 3) throw ShapeError("forward: meshes must have 3 channels, got " + ps.str() + " and " + is.str());
  if (ps.n != is.n || ps.v != is.v) {
    throw ShapeError("forward: pose mesh " + ps.str() + " and identity mesh " + is.str() +
                     " must have the same batch size and vertex count");
  }
  auto features = encode_pose(pose_mesh, p, cfg, bind);
  if (cfg.variant == Variant::maxpool) features = broadcast_vertices(global_max_pool(features), is.v);
  auto h = linear(concat_channels(features, id_mesh), p.dec_conv0, bind);

  if (cfg.variant == Variant::concat1) {
    h = relu(h);
    h = relu(linear(h, p.dec_conv1, bind));
    h = relu(linear(h, p.dec_conv2, bind));
    return tanh_act(linear(h, p.dec_conv_out, bind));
  }

  ResBlockOptions first{.modulate = cfg.variant != Variant::no_spadain,
                        .normalize_input = cfg.variant != Variant::maxpool};
  ResBlockOptions rest{.modulate = first.modulate, .normalize_input = true};
  h = spadain_resblock(h, id_mesh, p.resblock_1, cfg.eps, bind, first, trace, "resblock_1");
  h = linear(h, p.dec_conv1, bind);
  h = spadain_resblock(h, id_mesh, p.resblock_2, cfg.eps, bind, rest, trace, "resblock_2");
  h = linear(h, p.dec_conv2, bind);
  h = spadain_resblock(h, id_mesh, p.resblock_3, cfg.eps, bind, rest, trace, "resblock_3");
  return tanh_act(linear(h, p.dec_conv_out, bind));
}

template <typename T>
Tensor3<T> predict(const Tensor3<T>& pose_mesh, const Tensor3<T>& id_mesh, const ModelParams<T>& p,
                   const ModelConfig& cfg) {
  Tape<T> tape;
  ParamBinder<T> bind(tape, false);
  return forward(tape.leaf(pose_mesh, false), tape.leaf(id_mesh, false), p, cfg, bind).value();
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = zero_params<T>(cfg);
  std::mt19937_64 rng(seed);
  p.visit(cfg, std::function<void(const std::string&, Tensor3<T>&)>([&](const std::string& name, Tensor3<T>& t) {
    if (name.ends_with(".bias")) {
      if (name.ends_with(".gamma.bias")) t.fill(static_cast<T>(cfg.gamma_bias_init));
      return;
    }
    const double s = std::sqrt(1.0 / static_cast<double>(t.v()));
    std::uniform_real_distribution<double> u(-s, s);
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
  }));
  return p;
}

// Used by the checkpoint reader to build the expected layout.
template <typename T>
ModelParams<T> zero_model_params(const ModelConfig& cfg) {
  return zero_params<T>(cfg);
}

#define NPT_INSTANTIATE(T)                                                                                          \
  template struct ModelParams<T>;                                                                                   \
  template class ParamBinder<T>;                                                                                    \
  template Var<T> encode_pose(Var<T>, const ModelParams<T>&, const ModelConfig&, ParamBinder<T>&);                  \
  template Var<T> spadain(Var<T>, Var<T>, const SpadainParams<T>&, double, ParamBinder<T>&, bool, SpadainTrace<T>*, \
                          const std::string&);                                                                      \
  template Var<T> spadain_resblock(Var<T>, Var<T>, const ResBlockParams<T>&, double, ParamBinder<T>&,               \
                                   ResBlockOptions, SpadainTrace<T>*, const std::string&);                          \
  template Var<T> forward(Var<T>, Var<T>, const ModelParams<T>&, const ModelConfig&, ParamBinder<T>&,               \
                          SpadainTrace<T>*);                                                                        \
  template Tensor3<T> predict(const Tensor3<T>&, const Tensor3<T>&, const ModelParams<T>&, const ModelConfig&);     \
  template ModelParams<T> init_params(const ModelConfig&, std::uint64_t);                                           \
  template ModelParams<T> zero_model_params(const ModelConfig&);

NPT_INSTANTIATE(float)
NPT_INSTANTIATE(double)
#undef NPT_INSTANTIATE

template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace npt
