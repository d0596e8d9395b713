#include "slick/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "slick/serialize.hpp"

namespace slick {

using nlohmann::json;

namespace {

// y = x W + b over rows of a [rows, in] matrix.
Tensor linear2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  const int rows = y.dim(0), cols = y.dim(1);
  return add(y, reshape(broadcast_c(b, rows, 1), {rows, cols}));
}

// v W for a rank-1 vector.
Tensor vecmat(const Tensor& v, const Tensor& w) {
  return reshape(matmul(reshape(v, {1, v.dim(0)}), w), {w.dim(1)});
}

Tensor class_head(const Tensor& embeddings, const ParamSet& p) {
  Tensor h = relu(linear2d(embeddings, p.at("head.w1"), p.at("head.b1")));
  return linear2d(h, p.at("head.w2"), p.at("head.b2"));
}

// Per-pixel channel energy normalized to unit mass; the spatial attention
// summary exported per level.
Tensor attention_map_of(const Tensor& features) {
  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  Tensor sq = mul(features, features);
  Tensor energy = reshape(matmul(reshape(sq, {h * w, c}), Tensor::full({c, 1}, 1.0)), {h, w});
  Tensor total = recip(add_scalar(sum_all(energy), 1e-12));
  return mul_scalar_t(energy, total);
}

}  // namespace

// ---- types -----------------------------------------------------------------

void FeaturePyramid::validate() const {
  if (levels.size() < 2) throw std::invalid_argument("feature pyramid needs at least 2 levels");
  const int c = levels[0].dim(2);
  for (size_t l = 0; l < levels.size(); ++l) {
    if (levels[l].rank() != 3) throw std::invalid_argument("pyramid level must be [H,W,C]");
    if (levels[l].dim(2) != c) throw std::invalid_argument("pyramid levels disagree on channels");
    if (l > 0) {
      const int eh = (levels[l - 1].dim(0) + 1) / 2;
      const int ew = (levels[l - 1].dim(1) + 1) / 2;
      if (levels[l].dim(0) != eh || levels[l].dim(1) != ew) {
        throw std::invalid_argument("pyramid level " + std::to_string(l + 1) +
                                    " does not halve the previous level");
      }
    }
  }
}

DamageHeatmap DamageHeatmap::zeros(int h, int w) { return DamageHeatmap{Tensor::zeros({h, w, 1})}; }

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
  };
  positive(channels, "channels");
  positive(levels, "levels");
  positive(query_dim, "query_dim");
  positive(num_queries, "num_queries");
  positive(kernel_size, "kernel_size");
  positive(num_parts, "num_parts");
  positive(num_damages, "num_damages");
  positive(se_reduction, "se_reduction");
  positive(fusion_dim, "fusion_dim");
  if (levels < 2) throw std::invalid_argument("model config: levels must be >= 2");
  if (channels % se_reduction != 0) {
    throw std::invalid_argument("model config: se_reduction must divide channels");
  }
  if (kernel_size % 2 == 0) throw std::invalid_argument("model config: kernel_size must be odd");
}

void ModelConfig::validate_teacher_student(const ModelConfig& teacher, const ModelConfig& student) {
  teacher.validate();
  student.validate();
  if (!(teacher.channels > student.channels && teacher.levels > student.levels &&
        teacher.query_dim > student.query_dim && teacher.num_queries > student.num_queries)) {
    throw std::invalid_argument(
        "teacher config must strictly dominate the student in channels, levels, query_dim and "
        "num_queries");
  }
}

double score_of(const std::vector<double>& part_probs, const std::vector<double>& damage_probs) {
  double mp = 0.0, md = 0.0;
  for (double v : part_probs) mp = std::max(mp, v);
  for (double v : damage_probs) md = std::max(md, v);
  return mp * md;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<Tensor> ParamSet::all() const {
  std::vector<Tensor> out;
  out.reserve(tensors.size());
  for (const auto& [name, t] : tensors) out.push_back(t);
  return out;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : tensors) t.zero_grad();
}

void ParamSet::set_requires_grad(bool v) {
  for (auto& [name, t] : tensors) t.set_requires_grad(v);
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, t] : tensors) {
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    out.tensors.emplace(name, std::move(c));
  }
  return out;
}

// ---- init / checkpoint -----------------------------------------------------

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams mp;
  mp.config = cfg;
  auto& p = mp.params.tensors;

  auto he = [&rng](Shape shape, int fan_in) {
    return randn(std::move(shape), rng, std::sqrt(2.0 / fan_in)).set_requires_grad(true);
  };
  const int c = cfg.channels, d = cfg.query_dim, z = cfg.fusion_dim, g = cfg.encoder_width();

  Tensor stem = he({3, 3, 4, c}, 9 * 4);
  // Conditioning channel starts disconnected so a first pass without it and
  // a refinement pass with a zero map coincide.
  {
    auto& v = stem.mutable_value();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        for (int oc = 0; oc < c; ++oc) v[((ky * 3 + kx) * 4 + 3) * static_cast<size_t>(c) + oc] = 0.0;
  }
  p.emplace("stem.w", stem);
  p.emplace("stem.b", Tensor::param({c}, std::vector<double>(static_cast<size_t>(c), 0.0)));
  for (int l = 2; l <= cfg.levels; ++l) {
    p.emplace("level" + std::to_string(l) + ".w", he({3, 3, c, c}, 9 * c));
    p.emplace("level" + std::to_string(l) + ".b",
              Tensor::param({c}, std::vector<double>(static_cast<size_t>(c), 0.0)));
  }
  p.emplace("loc.w1", he({c + 1, c}, c + 1));
  p.emplace("loc.b1", Tensor::param({c}, std::vector<double>(static_cast<size_t>(c), 0.0)));
  p.emplace("loc.w2", he({c, c}, c));
  p.emplace("loc.b2", Tensor::param({c}, std::vector<double>(static_cast<size_t>(c), 0.0)));
  p.emplace("se.w1", he({c, c / cfg.se_reduction}, c));
  p.emplace("se.w2", he({c / cfg.se_reduction, c}, c / cfg.se_reduction));
  for (const char* stream : {"syn", "geom", "real"}) {
    p.emplace(std::string("fuse.") + stream + ".w", he({3, 3, 3, g}, 27));
    p.emplace(std::string("fuse.") + stream + ".b",
              Tensor::param({g}, std::vector<double>(static_cast<size_t>(g), 0.0)));
  }
  p.emplace("fuse.mlp.w1", he({3 * g, z}, 3 * g));
  p.emplace("fuse.mlp.b1", Tensor::param({z}, std::vector<double>(static_cast<size_t>(z), 0.0)));
  p.emplace("fuse.mlp.w2", he({z, z}, z));
  p.emplace("fuse.mlp.b2", Tensor::param({z}, std::vector<double>(static_cast<size_t>(z), 0.0)));
  // FiLM starts at the identity (gamma=1, beta=0).
  p.emplace("film.gamma.w", Tensor::param({z, c}, std::vector<double>(static_cast<size_t>(z) * c, 0.0)));
  p.emplace("film.gamma.b", Tensor::param({c}, std::vector<double>(static_cast<size_t>(c), 1.0)));
  p.emplace("film.beta.w", Tensor::param({z, c}, std::vector<double>(static_cast<size_t>(z) * c, 0.0)));
  p.emplace("film.beta.b", Tensor::param({c}, std::vector<double>(static_cast<size_t>(c), 0.0)));
  p.emplace("queries", randn({cfg.num_queries, d}, rng, 1.0).set_requires_grad(true));
  p.emplace("pool.wq", he({d, d}, d));
  p.emplace("pool.wk", he({c, d}, c));
  p.emplace("pool.wv", he({c, c}, c));
  p.emplace("pool.we", he({c, d}, c));
  p.emplace("pool.be", Tensor::param({d}, std::vector<double>(static_cast<size_t>(d), 0.0)));
  p.emplace("prior.wq", he({d, d}, d));
  p.emplace("prior.wk", he({d, d}, d));
  p.emplace("prior.wv", he({d, d}, d));
  const int hd = cfg.class_head_hidden(), out = cfg.class_head_out();
  p.emplace("head.w1", he({d, hd}, d));
  p.emplace("head.b1", Tensor::param({hd}, std::vector<double>(static_cast<size_t>(hd), 0.0)));
  p.emplace("head.w2", he({hd, out}, hd));
  p.emplace("head.b2", Tensor::param({out}, std::vector<double>(static_cast<size_t>(out), 0.0)));
  p.emplace("phi.w", he({d, cfg.kernel_size * cfg.kernel_size * c}, d));
  return mp;
}

void ModelParams::save(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  json manifest;
  manifest["config"] = {
      {"channels", config.channels},       {"levels", config.levels},
      {"query_dim", config.query_dim},     {"num_queries", config.num_queries},
      {"kernel_size", config.kernel_size}, {"num_parts", config.num_parts},
      {"num_damages", config.num_damages}, {"se_reduction", config.se_reduction},
      {"fusion_dim", config.fusion_dim}};
  json names = json::array();
  json shapes = json::object();
  for (const auto& [name, t] : params.tensors) {
    names.push_back(name);
    shapes[name] = t.shape();
    write_slkt(dir / "params" / (name + ".slkt"), t);
  }
  manifest["params"] = names;
  manifest["shapes"] = shapes;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ModelParams ModelParams::load(const std::filesystem::path& dir) {
  json manifest = json::parse(read_text_file(dir / "manifest.json"));
  ModelParams mp;
  const auto& c = manifest.at("config");
  mp.config.channels = c.at("channels").get<int>();
  mp.config.levels = c.at("levels").get<int>();
  mp.config.query_dim = c.at("query_dim").get<int>();
  mp.config.num_queries = c.at("num_queries").get<int>();
  mp.config.kernel_size = c.at("kernel_size").get<int>();
  mp.config.num_parts = c.at("num_parts").get<int>();
  mp.config.num_damages = c.at("num_damages").get<int>();
  mp.config.se_reduction = c.at("se_reduction").get<int>();
  mp.config.fusion_dim = c.at("fusion_dim").get<int>();
  mp.config.validate();
  for (const auto& name : manifest.at("params")) {
    const std::string n = name.get<std::string>();
    Tensor t = read_slkt(dir / "params" / (n + ".slkt"));
    t.set_requires_grad(true);
    mp.params.tensors.emplace(n, std::move(t));
  }
  return mp;
}

// ---- blocks ----------------------------------------------------------------

FeaturePyramid encode(const Tensor& x, const ModelConfig& cfg, const ParamSet& params) {
  if (x.rank() != 3 || (x.dim(2) != 3 && x.dim(2) != 4)) {
    throw std::invalid_argument("encode expects [H,W,3] or [H,W,4] input");
  }
  const int h = x.dim(0), w = x.dim(1);
  const int min_side = 1 << cfg.levels;
  if (h < min_side || w < min_side) {
    throw std::invalid_argument("image " + std::to_string(h) + "x" + std::to_string(w) +
                                " too small for " + std::to_string(cfg.levels) + " pyramid levels");
  }
  Tensor x4 = x.dim(2) == 4 ? x : concat_last(x, Tensor::zeros({h, w, 1}));
  FeaturePyramid pyr;
  Tensor f = relu(conv2d(x4, params.at("stem.w"), params.at("stem.b")));
  pyr.levels.push_back(f);
  for (int l = 2; l <= cfg.levels; ++l) {
    f = relu(conv2d(avg_pool2(f), params.at("level" + std::to_string(l) + ".w"),
                    params.at("level" + std::to_string(l) + ".b")));
    pyr.levels.push_back(f);
  }
  return pyr;
}

Tensor prior_bias_matrix(const StructuralPriorGraph& graph,
                         const std::vector<std::optional<PartId>>& token_parts, int count) {
  if (static_cast<int>(token_parts.size()) != count) {
    throw std::invalid_argument("token_parts length does not match token count");
  }
  for (const auto& tp : token_parts) {
    if (tp.has_value() && !graph.has_part(*tp)) {
      throw std::invalid_argument("unknown part id " + std::to_string(*tp) + " in token_parts");
    }
  }
  std::vector<double> delta(static_cast<size_t>(count) * count, 0.0);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < count; ++j) {
      if (i == j || !token_parts[i] || !token_parts[j]) continue;
      delta[static_cast<size_t>(i) * count + j] =
          graph.related(*token_parts[i], *token_parts[j]) ? graph.bias_pos : graph.bias_neg;
    }
  }
  return Tensor::from({count, count}, std::move(delta));
}

Tensor prior_attention(const Tensor& tokens, const StructuralPriorGraph& graph,
                       const std::vector<std::optional<PartId>>& token_parts, const Tensor& w_q,
                       const Tensor& w_k, const Tensor& w_v) {
  if (tokens.rank() != 2) throw std::invalid_argument("prior_attention expects [T,C] tokens");
  const int t = tokens.dim(0);
  Tensor delta = prior_bias_matrix(graph, token_parts, t);
  Tensor q = matmul(tokens, w_q);
  Tensor k = matmul(tokens, w_k);
  Tensor v = matmul(tokens, w_v);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = add(scale(matmul(q, transpose(k)), inv_sqrt_dk), delta);
  return matmul(softmax(scores), v);
}

Tensor loc_attention(const Tensor& features, const DamageHeatmap& heat, const Tensor& w1,
                     const Tensor& b1, const Tensor& w2, const Tensor& b2,
                     MlpActivation activation) {
  if (features.rank() != 3) throw std::invalid_argument("loc_attention expects [H,W,C] features");
  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  Tensor hm = heat.map;
  if (hm.dim(0) != h || hm.dim(1) != w) hm = resample_nearest(hm, h, w);
  Tensor cat = concat_last(features, hm);
  if (w1.dim(0) != c + 1) {
    throw std::invalid_argument("loc_attention: first layer expects " + std::to_string(c + 1) +
                                " input channels, got " + std::to_string(w1.dim(0)));
  }
  Tensor flat = reshape(cat, {h * w, c + 1});
  Tensor hidden = linear2d(flat, w1, b1);
  if (activation == MlpActivation::kRelu) hidden = relu(hidden);
  Tensor out = linear2d(hidden, w2, b2);
  return reshape(out, {h, w, w2.dim(1)});
}

DamageHeatmap weak_heatmap(int h, int w, const std::vector<Rect>& boxes,
                           const std::vector<Tensor>& scratch_maps) {
  std::vector<double> map(static_cast<size_t>(h) * w, 0.0);
  for (const Rect& r : boxes) {
    if (r.y0 < 0 || r.x0 < 0 || r.y1 > h || r.x1 > w || r.y0 > r.y1 || r.x0 > r.x1) {
      throw std::invalid_argument("weak_heatmap: box outside image bounds");
    }
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) map[static_cast<size_t>(y) * w + x] = 0.7;
  }
  for (const Tensor& s : scratch_maps) {
    if (s.rank() != 2 || s.dim(0) != h || s.dim(1) != w) {
      throw std::invalid_argument("weak_heatmap: scratch map must be [H,W]");
    }
    for (size_t i = 0; i < map.size(); ++i) map[i] += s.value()[i];
  }
  for (double& v : map) v = std::min(1.0, std::max(0.0, v));
  return DamageHeatmap{Tensor::from({h, w, 1}, std::move(map))};
}

std::vector<Tensor> isr_mask_logits(const std::vector<InstanceQuery>& queries,
                                    const Tensor& features, const Tensor& phi_weights,
                                    int kernel_size) {
  if (features.rank() != 3) throw std::invalid_argument("isr_masks expects [H,W,C] features");
  const int c = features.dim(2);
  const int k = kernel_size;
  if (phi_weights.dim(1) != k * k * c) {
    throw std::invalid_argument("phi weights must map query_dim -> k*k*C");
  }
  std::vector<Tensor> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    Tensor flat = matmul(reshape(q.embedding, {1, q.embedding.dim(0)}), phi_weights);
    Tensor kernel = reshape(flat, {k, k, c, 1});
    Tensor corr = conv2d(features, kernel);  // correlation orientation
    out.push_back(reshape(corr, {features.dim(0), features.dim(1)}));
  }
  return out;
}

std::vector<Tensor> isr_masks(const std::vector<InstanceQuery>& queries, const Tensor& features,
                              const Tensor& phi_weights, int kernel_size) {
  std::vector<Tensor> logits = isr_mask_logits(queries, features, phi_weights, kernel_size);
  std::vector<Tensor> out;
  out.reserve(logits.size());
  for (const auto& l : logits) out.push_back(sigmoid(l));
  return out;
}

Tensor c3_calibrate(const Tensor& features, const Tensor& w1, const Tensor& w2) {
  if (features.rank() != 3) throw std::invalid_argument("c3_calibrate expects [H,W,C] features");
  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  if (w1.dim(0) != c || w2.dim(1) != c || w1.dim(1) != w2.dim(0)) {
    throw std::invalid_argument("c3_calibrate: weight shapes incompatible with channel count");
  }
  Tensor pooled = channel_mean(features);
  Tensor gate = sigmoid(vecmat(relu(vecmat(pooled, w1)), w2));
  return mul(features, broadcast_c(gate, h, w));
}

Tensor fuse_knowledge(const Tensor& image, const ModelConfig& cfg, const ParamSet& params) {
  Tensor rgb = image.dim(2) == 3 ? image : slice_last(image, 0, 3);
  std::vector<Tensor> streams;
  for (const char* stream : {"syn", "geom", "real"}) {
    Tensor e = avg_pool2(rgb);
    e = relu(conv2d(e, params.at(std::string("fuse.") + stream + ".w"),
                    params.at(std::string("fuse.") + stream + ".b")));
    e = avg_pool2(e);
    streams.push_back(channel_mean(e));
  }
  Tensor cat = concat_last(concat_last(streams[0], streams[1]), streams[2]);
  Tensor hidden = relu(add(vecmat(cat, params.at("fuse.mlp.w1")), params.at("fuse.mlp.b1")));
  return add(vecmat(hidden, params.at("fuse.mlp.w2")), params.at("fuse.mlp.b2"));
}

Tensor film_modulate(const Tensor& features, const Tensor& z, const Tensor& gamma_w,
                     const Tensor& gamma_b, const Tensor& beta_w, const Tensor& beta_b) {
  if (features.rank() != 3) throw std::invalid_argument("film_modulate expects [H,W,C] features");
  const int h = features.dim(0), w = features.dim(1);
  Tensor gamma = add(vecmat(z, gamma_w), gamma_b);
  Tensor beta = add(vecmat(z, beta_w), beta_b);
  return add(mul(features, broadcast_c(gamma, h, w)), broadcast_c(beta, h, w));
}

// ---- full forward ----------------------------------------------------------

ForwardResult forward(const Tensor& image, const DamageHeatmap& heat,
                      const StructuralPriorGraph& graph, const ModelConfig& cfg,
                      const ParamSet& params, const ForwardOptions& opts) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(2) != 3) throw std::invalid_argument("forward expects [H,W,3] image");
  const int h = image.dim(0), w = image.dim(1);

  Tensor aux;
  if (opts.conditioning.has_value()) {
    aux = *opts.conditioning;
    if (aux.rank() != 2 || aux.dim(0) != h || aux.dim(1) != w) {
      throw std::invalid_argument("conditioning channel must be [H,W]");
    }
    aux = reshape(aux, {h, w, 1});
  } else {
    aux = Tensor::zeros({h, w, 1});
  }
  Tensor x4 = concat_last(image, aux);

  ForwardResult res;
  res.pyramid = encode(x4, cfg, params);
  for (const Tensor& level : res.pyramid.levels) {
    res.attention_maps.push_back(attention_map_of(level));
  }

  Tensor f = res.pyramid.levels.back();
  f = loc_attention(f, heat, params.at("loc.w1"), params.at("loc.b1"), params.at("loc.w2"),
                    params.at("loc.b2"));
  f = c3_calibrate(f, params.at("se.w1"), params.at("se.w2"));
  res.fused_z = fuse_knowledge(image, cfg, params);
  f = film_modulate(f, res.fused_z, params.at("film.gamma.w"), params.at("film.gamma.b"),
                    params.at("film.beta.w"), params.at("film.beta.b"));

  const int fh = f.dim(0), fw = f.dim(1), c = cfg.channels, d = cfg.query_dim;
  const int n = cfg.num_queries, kp = cfg.num_parts, kd = cfg.num_damages;

  // Queries pool the modulated map by cross-attention.
  Tensor tokens = reshape(f, {fh * fw, c});
  Tensor keys = matmul(tokens, params.at("pool.wk"));
  Tensor values = matmul(tokens, params.at("pool.wv"));
  Tensor q = matmul(params.at("queries"), params.at("pool.wq"));
  Tensor attn = softmax(scale(matmul(q, transpose(keys)), 1.0 / std::sqrt(static_cast<double>(d))));
  Tensor pooled = matmul(attn, values);
  Tensor e1 = relu(linear2d(pooled, params.at("pool.we"), params.at("pool.be")));

  // First-pass part logits give each query a part identity unless the caller
  // supplies assignments.
  std::vector<std::optional<PartId>> assignments(static_cast<size_t>(n));
  if (opts.part_assignments.has_value()) {
    if (static_cast<int>(opts.part_assignments->size()) != n) {
      throw std::invalid_argument("part_assignments length must equal num_queries");
    }
    assignments = *opts.part_assignments;
  } else {
    NoGrad ng;
    Tensor logits1 = class_head(e1, params);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int p = 1; p < kp; ++p) {
        if (logits1.at({i, p}) > logits1.at({i, best})) best = p;
      }
      assignments[static_cast<size_t>(i)] = best;
    }
  }

  Tensor e2 = prior_attention(e1, graph, assignments, params.at("prior.wq"), params.at("prior.wk"),
                              params.at("prior.wv"));
  Tensor emb = add(e1, e2);
  Tensor logits = class_head(emb, params);

  res.instances.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    InstancePrediction& inst = res.instances[static_cast<size_t>(i)];
    inst.embedding = row(emb, i);
    Tensor li = row(logits, i);
    inst.part_logits = slice_last(li, 0, kp + 1);
    inst.damage_logits = slice_last(li, kp + 1, kp + 1 + kd + 1);
    InstanceQuery iq{inst.embedding, assignments[static_cast<size_t>(i)]};
    Tensor small = isr_mask_logits({iq}, f, params.at("phi.w"), cfg.kernel_size)[0];
    inst.mask_logits = (fh == h && fw == w) ? small : upsample_bilinear(small, h, w);
    inst.soft_mask = sigmoid(inst.mask_logits);
    Tensor pp = softmax(inst.part_logits);
    Tensor dp = softmax(inst.damage_logits);
    inst.part_probs.assign(pp.value().begin(), pp.value().begin() + kp);
    inst.damage_probs.assign(dp.value().begin(), dp.value().begin() + kd);
    inst.score = score_of(inst.part_probs, inst.damage_probs);
    inst.part_assignment = assignments[static_cast<size_t>(i)];
  }
  return res;
}

}  // namespace slick
