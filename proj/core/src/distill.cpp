#include "slick/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "slick/losses.hpp"

namespace slick {

void DistillConfig::validate() const {
  if (tau <= 0.0) throw std::invalid_argument("distill config: tau must be positive");
  for (double v : {lambda_m, lambda_c, lambda_f, lambda_g, lambda_kd, lambda_multi, lambda_refine,
                   lambda_attn, lambda1, lambda2, lambda3}) {
    if (v < 0.0) throw std::invalid_argument("distill config: lambda weights must be non-negative");
  }
  if (alpha_scales.empty()) throw std::invalid_argument("distill config: alpha_scales is empty");
  double sum = 0.0;
  for (double a : alpha_scales) {
    if (a < 0.0) throw std::invalid_argument("distill config: alpha_scales must be non-negative");
    sum += a;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("distill config: alpha_scales must sum to 1");
  }
}

DistillConfig DistillConfig::appendix_preset(double l1, double l2, double l3, double temperature) {
  DistillConfig cfg;
  cfg.mode = Mode::kAppendix;
  cfg.tau = temperature;
  cfg.lambda1 = l1;
  cfg.lambda2 = l2;
  cfg.lambda3 = l3;
  cfg.lambda_m = 0.0;
  cfg.lambda_g = 0.0;
  cfg.lambda_c = l2;
  cfg.lambda_f = l3;
  cfg.alpha_scales = {1.0};
  cfg.validate();
  return cfg;
}

DistillProjections DistillProjections::init(const ModelConfig& teacher, const ModelConfig& student,
                                            uint64_t seed) {
  DistillProjections proj;
  proj.shared_levels = std::min(teacher.levels, student.levels);
  Rng rng(seed);
  auto make = [&rng](int in, int out) {
    if (in == out) {
      std::vector<double> eye(static_cast<size_t>(in) * out, 0.0);
      for (int i = 0; i < in; ++i) eye[static_cast<size_t>(i) * out + i] = 1.0;
      return Tensor::param({in, out}, std::move(eye));
    }
    return randn({in, out}, rng, std::sqrt(1.0 / in)).set_requires_grad(true);
  };
  for (int l = 1; l <= proj.shared_levels; ++l) {
    proj.params.tensors.emplace("proj.level" + std::to_string(l),
                                make(student.channels, teacher.channels));
  }
  proj.params.tensors.emplace("proj.embed", make(student.query_dim, teacher.query_dim));
  return proj;
}

namespace {

Tensor project_channels(const Tensor& features, const Tensor& proj) {
  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  if (proj.dim(0) != c) throw std::invalid_argument("channel projection shape mismatch");
  return reshape(matmul(reshape(features, {h * w, c}), proj), {h, w, proj.dim(1)});
}

Tensor project_vec(const Tensor& v, const Tensor& proj) {
  return reshape(matmul(reshape(v, {1, v.dim(0)}), proj), {proj.dim(1)});
}

std::map<PartId, Tensor> node_embeddings(const std::vector<InstancePrediction>& instances,
                                         const std::vector<PartId>& parts, int dim,
                                         const Tensor* proj) {
  std::map<PartId, Tensor> nodes;
  std::map<PartId, int> counts;
  for (PartId p : parts) {
    nodes.emplace(p, Tensor::zeros({dim}));
    counts[p] = 0;
  }
  for (const auto& inst : instances) {
    if (!inst.part_assignment.has_value()) continue;
    auto it = nodes.find(*inst.part_assignment);
    if (it == nodes.end()) continue;
    Tensor e = proj != nullptr ? project_vec(inst.embedding, *proj) : inst.embedding;
    it->second = counts[it->first] == 0 ? e : add(it->second, e);
    ++counts[it->first];
  }
  for (auto& [p, t] : nodes) {
    if (counts[p] > 1) t = scale(t, 1.0 / counts[p]);
  }
  return nodes;
}

}  // namespace

PairedOutputs pair_outputs(const ForwardResult& teacher, const ForwardResult& student,
                           const StructuralPriorGraph& graph, const DistillProjections& proj) {
  PairedOutputs out;
  std::vector<std::vector<uint8_t>> tm, sm;
  for (const auto& i : teacher.instances) tm.push_back(binarize(i.soft_mask.value()));
  for (const auto& i : student.instances) sm.push_back(binarize(i.soft_mask.value()));
  MatchResult pairing = match_masks(tm, sm, 0.1);
  for (const auto& [ti, si] : pairing.pairs) {
    out.instances.emplace_back(teacher.instances[static_cast<size_t>(ti)],
                               student.instances[static_cast<size_t>(si)]);
  }
  const int shared = static_cast<int>(
      std::min(teacher.pyramid.levels.size(), student.pyramid.levels.size()));
  for (int l = 0; l < shared; ++l) {
    out.features.emplace_back(teacher.pyramid.levels[static_cast<size_t>(l)],
                              student.pyramid.levels[static_cast<size_t>(l)]);
    out.feature_proj.push_back(proj.level(l + 1));
    out.attention.emplace_back(teacher.attention_maps[static_cast<size_t>(l)],
                               student.attention_maps[static_cast<size_t>(l)]);
  }
  const int tdim = teacher.instances.empty() ? proj.embed().dim(1)
                                             : teacher.instances[0].embedding.dim(0);
  const Tensor& emb_proj = proj.embed();
  out.teacher_nodes = node_embeddings(teacher.instances, graph.parts, tdim, nullptr);
  out.student_nodes = node_embeddings(student.instances, graph.parts, tdim, &emb_proj);
  out.edges = graph.edges();
  return out;
}

Tensor mask_kd(const std::vector<std::pair<Tensor, Tensor>>& mask_logit_pairs, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("mask_kd: tau must be positive");
  if (mask_logit_pairs.empty()) return Tensor::scalar(0.0);
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& [t, s] : mask_logit_pairs) {
    Tensor st = s;
    if (!same_shape(t.shape(), s.shape())) {
      st = upsample_bilinear(s, t.dim(0), t.dim(1));
    }
    acc = add(acc, bernoulli_kl_mean(t, st, tau));
  }
  return scale(acc, 1.0 / static_cast<double>(mask_logit_pairs.size()));
}

Tensor class_kd(const Tensor& teacher_probs, const Tensor& student_probs) {
  return cross_entropy_probs(teacher_probs, student_probs);
}

double entropy(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Tensor class_kl(const Tensor& teacher_probs, const Tensor& student_probs) {
  const double h = entropy(teacher_probs.value());
  return add_scalar(class_kd(teacher_probs, student_probs), -h);
}

Tensor standardize_channels(const Tensor& features, double eps) {
  if (features.rank() != 3) throw std::invalid_argument("standardize_channels expects [H,W,C]");
  const int h = features.dim(0), w = features.dim(1);
  Tensor mu = channel_mean(features);
  Tensor centered = sub(features, broadcast_c(mu, h, w));
  Tensor var = channel_mean(mul(centered, centered));
  Tensor inv_std = recip(sqrt_t(add_scalar(var, eps)));
  return mul(centered, broadcast_c(inv_std, h, w));
}

Tensor feature_kd(const std::vector<std::pair<Tensor, Tensor>>& feature_pairs,
                  const std::vector<Tensor>& projections) {
  if (feature_pairs.size() != projections.size()) {
    throw std::invalid_argument("feature_kd: one projection per level required");
  }
  Tensor acc = Tensor::scalar(0.0);
  for (size_t l = 0; l < feature_pairs.size(); ++l) {
    const Tensor& ft = feature_pairs[l].first;
    Tensor fs = feature_pairs[l].second;
    if (fs.dim(0) != ft.dim(0) || fs.dim(1) != ft.dim(1)) {
      fs = upsample_bilinear(fs, ft.dim(0), ft.dim(1));
    }
    fs = project_channels(fs, projections[l]);
    acc = add(acc, l2_norm_sq(sub(standardize_channels(ft), standardize_channels(fs))));
  }
  return acc;
}

Tensor graph_kd(const std::map<PartId, Tensor>& teacher_nodes,
                const std::map<PartId, Tensor>& student_nodes, const std::vector<IdPair>& edges) {
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& [a, b] : edges) {
    auto ta = teacher_nodes.find(a), tb = teacher_nodes.find(b);
    auto sa = student_nodes.find(a), sb = student_nodes.find(b);
    if (ta == teacher_nodes.end() || tb == teacher_nodes.end() || sa == student_nodes.end() ||
        sb == student_nodes.end()) {
      throw std::invalid_argument("graph_kd: edge references a node without an embedding");
    }
    Tensor dt = sub(ta->second, tb->second);
    Tensor ds = sub(sa->second, sb->second);
    acc = add(acc, l2_norm_sq(sub(dt, ds)));
  }
  return acc;
}

Tensor attn_transfer(const std::vector<std::pair<Tensor, Tensor>>& attention_pairs) {
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& [at, as_] : attention_pairs) {
    Tensor a = at;
    Tensor b = as_;
    if (!same_shape(a.shape(), b.shape())) {
      b = upsample_bilinear(b, a.dim(0), a.dim(1));
    }
    Tensor an = mul_scalar_t(a, recip(add_scalar(sum_all(a), 1e-12)));
    Tensor bn = mul_scalar_t(b, recip(add_scalar(sum_all(b), 1e-12)));
    acc = add(acc, l1_norm(sub(an, bn)));
  }
  return acc;
}

DistillTerms distill_loss(const PairedOutputs& pair, const DistillConfig& cfg) {
  cfg.validate();
  DistillTerms terms;

  std::vector<std::pair<Tensor, Tensor>> mask_pairs;
  mask_pairs.reserve(pair.instances.size());
  for (const auto& [t, s] : pair.instances) mask_pairs.emplace_back(t.mask_logits, s.mask_logits);
  terms.mask = mask_kd(mask_pairs, cfg.tau);

  const double tcl = cfg.class_temperature();
  if (pair.instances.empty()) {
    terms.cls = Tensor::scalar(0.0);
  } else {
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& [t, s] : pair.instances) {
      acc = add(acc, class_kl(softmax(t.part_logits, tcl), softmax(s.part_logits, tcl)));
      acc = add(acc, class_kl(softmax(t.damage_logits, tcl), softmax(s.damage_logits, tcl)));
    }
    terms.cls = scale(acc, 1.0 / static_cast<double>(pair.instances.size()));
  }

  terms.feature = feature_kd(pair.features, pair.feature_proj);
  terms.graph = graph_kd(pair.teacher_nodes, pair.student_nodes, pair.edges);
  terms.attn = attn_transfer(pair.attention);
  terms.total = add(add(scale(terms.mask, cfg.lambda_m), scale(terms.cls, cfg.lambda_c)),
                    add(scale(terms.feature, cfg.lambda_f), scale(terms.graph, cfg.lambda_g)));
  if (cfg.lambda_attn > 0.0) {
    terms.total = add(terms.total, scale(terms.attn, cfg.lambda_attn));
  }
  return terms;
}

PairedOutputs pair_at_scale(const PairedOutputs& pair, int scale) {
  if (scale < 0 || scale >= static_cast<int>(pair.features.size())) {
    throw std::invalid_argument("pair_at_scale: scale out of range");
  }
  PairedOutputs out;
  const Tensor& ref = pair.features[static_cast<size_t>(scale)].first;
  const int h = ref.dim(0), w = ref.dim(1);
  for (const auto& [t, s] : pair.instances) {
    InstancePrediction ts = t, ss = s;
    ts.mask_logits = upsample_bilinear(t.mask_logits, h, w);
    ss.mask_logits = upsample_bilinear(s.mask_logits, h, w);
    out.instances.emplace_back(std::move(ts), std::move(ss));
  }
  out.features.push_back(pair.features[static_cast<size_t>(scale)]);
  out.feature_proj.push_back(pair.feature_proj[static_cast<size_t>(scale)]);
  out.attention.push_back(pair.attention[static_cast<size_t>(scale)]);
  out.teacher_nodes = pair.teacher_nodes;
  out.student_nodes = pair.student_nodes;
  out.edges = pair.edges;
  return out;
}

Tensor multi_scale(const std::vector<PairedOutputs>& pairs_per_scale,
                   const std::vector<double>& alpha, const DistillConfig& cfg) {
  if (pairs_per_scale.size() != alpha.size()) {
    throw std::invalid_argument("multi_scale: scale/weight count mismatch");
  }
  Tensor acc = Tensor::scalar(0.0);
  for (size_t s = 0; s < pairs_per_scale.size(); ++s) {
    if (alpha[s] == 0.0) continue;
    acc = add(acc, scale(distill_loss(pairs_per_scale[s], cfg).total, alpha[s]));
  }
  return acc;
}

Tensor total_objective(const Tensor& seg_loss, const Tensor& distill, const Tensor& multi,
                       const Tensor& refine, const DistillConfig& cfg) {
  return add(add(seg_loss, scale(distill, cfg.lambda_kd)),
             add(scale(multi, cfg.lambda_multi), scale(refine, cfg.lambda_refine)));
}

LipschitzResult lipschitz_check(const std::vector<double>& z_teacher,
                                const std::vector<double>& z_student, double tau) {
  if (z_teacher.size() != z_student.size() || z_teacher.empty()) {
    throw std::invalid_argument("lipschitz_check: logit vectors must be non-empty and equal length");
  }
  if (tau <= 0.0) throw std::invalid_argument("lipschitz_check: tau must be positive");
  const size_t k = z_teacher.size();
  auto softmax_of = [tau](const std::vector<double>& z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    std::vector<double> p(z.size());
    double denom = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
      p[i] = std::exp((z[i] - mx) / tau);
      denom += p[i];
    }
    for (double& v : p) v /= denom;
    return p;
  };
  const auto pt = softmax_of(z_teacher);
  const auto ps = softmax_of(z_student);
  double lhs = 0.0, gap_sq = 0.0;
  for (size_t i = 0; i < k; ++i) {
    lhs += std::fabs(ps[i] - pt[i]);
    const double dz = z_student[i] - z_teacher[i];
    gap_sq += dz * dz;
  }
  const double rhs = std::sqrt(static_cast<double>(k)) / tau * std::sqrt(gap_sq);
  return LipschitzResult{lhs, rhs, lhs <= rhs + 1e-12};
}

}  // namespace slick
