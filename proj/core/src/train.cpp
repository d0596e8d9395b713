#include "slick/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "json.hpp"
#include "slick/losses.hpp"
#include "slick/serialize.hpp"

namespace slick {

// ---- optimizer ---------------------------------------------------------------

AdamW::AdamW(OptimizerConfig cfg, std::vector<Tensor> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double cosine_cycle_scale(int64_t step, int cycle_steps) {
  const int64_t pos = step % cycle_steps;
  return 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(pos) / cycle_steps));
}

double AdamW::current_lr() const {
  const double base = cfg_.step_size;
  if (cfg_.schedule == "cosine") return base * cosine_cycle_scale(t_, cfg_.cycle_steps);
  return base;
}

void AdamW::step() {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& value = params_[i].mutable_value();
    auto& grad = params_[i].mutable_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < value.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * grad[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * grad[k] * grad[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      value[k] -= lr * (mhat / (std::sqrt(vhat) + kEps) + cfg_.weight_decay * value[k]);
      grad[k] = 0.0;
    }
  }
}

double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.mutable_grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

int thread_count() {
  const char* env = std::getenv("SLICK_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

// ---- supervised objective -----------------------------------------------------

namespace {

// Unmatched ground truth takes the best free prediction by soft IoU, ties by
// lower prediction index.
std::vector<std::pair<int, int>> training_assignment(const ForwardResult& fr,
                                                     const std::vector<GroundTruthInstance>& truths,
                                                     MatchResult* out_match) {
  MatchResult m = match(fr.instances, truths);
  std::vector<bool> pred_used(fr.instances.size(), false);
  for (const auto& [p, t] : m.pairs) pred_used[static_cast<size_t>(p)] = true;
  std::vector<std::pair<int, int>> pairs = m.pairs;
  for (int ti : m.unmatched_truths) {
    int best = -1;
    double best_iou = -1.0;
    for (size_t p = 0; p < fr.instances.size(); ++p) {
      if (pred_used[p]) continue;
      const double iou = soft_mask_iou(fr.instances[p].soft_mask.value(),
                                       truths[static_cast<size_t>(ti)].mask.value());
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(p);
      }
    }
    if (best >= 0) {
      pred_used[static_cast<size_t>(best)] = true;
      pairs.emplace_back(best, ti);
    }
  }
  if (out_match != nullptr) *out_match = std::move(m);
  return pairs;
}

constexpr double kNoObjectWeight = 0.1;

}  // namespace

SupervisedLossValues supervised_losses(const ForwardResult& fr, const SceneSample& sample,
                                       const LossWeights& weights, const ModelConfig& cfg,
                                       const ParamSet& params, const StructuralPriorGraph& graph,
                                       std::optional<GridTransform> cons_transform) {
  weights.validate();
  const auto truths = sample.truths();
  SupervisedLossValues out;

  std::vector<std::pair<int, int>> pairs = training_assignment(fr, truths, nullptr);
  std::vector<bool> paired(fr.instances.size(), false);
  for (const auto& [p, t] : pairs) paired[static_cast<size_t>(p)] = true;

  Tensor seg = Tensor::scalar(0.0);
  Tensor bnd = Tensor::scalar(0.0);
  Tensor aux = Tensor::scalar(0.0);
  double bnd_metric = 0.0;
  for (const auto& [pi, ti] : pairs) {
    const InstancePrediction& pred = fr.instances[static_cast<size_t>(pi)];
    const GroundTruthInstance& truth = truths[static_cast<size_t>(ti)];
    seg = add(seg, dice_bce(pred.soft_mask, truth.mask));
    bnd = add(bnd, boundary_surrogate(pred.soft_mask, truth.mask));
    bnd_metric += boundary(pred.soft_mask, truth.mask);
    aux = add(aux, aux_joint(pred.part_logits, pred.damage_logits, truth.part_id, truth.damage_id));
  }
  if (!pairs.empty()) {
    const double inv = 1.0 / static_cast<double>(pairs.size());
    seg = scale(seg, inv);
    bnd = scale(bnd, inv);
    aux = scale(aux, inv);
    bnd_metric *= inv;
  }

  // no-object targets for leftover predictions
  int unmatched = 0;
  Tensor noobj = Tensor::scalar(0.0);
  for (size_t p = 0; p < fr.instances.size(); ++p) {
    if (paired[p]) continue;
    const auto& pred = fr.instances[p];
    noobj = add(noobj, aux_joint(pred.part_logits, pred.damage_logits, cfg.num_parts, cfg.num_damages));
    ++unmatched;
  }
  if (unmatched > 0) {
    aux = add(aux, scale(noobj, kNoObjectWeight / static_cast<double>(unmatched)));
  }

  Tensor cons = Tensor::scalar(0.0);
  if (cons_transform.has_value() && weights.lambda_cons > 0.0) {
    MaskForwardFn fwd = [&](const Tensor& img, const DamageHeatmap& hm) {
      ForwardResult r = forward(img, hm, graph, cfg, params);
      std::vector<Tensor> masks;
      masks.reserve(r.instances.size());
      for (const auto& inst : r.instances) masks.push_back(inst.soft_mask);
      return masks;
    };
    cons = consistency(fwd, sample.image, sample.heatmap, *cons_transform);
  }

  out.seg = seg;
  out.bnd = bnd;
  out.aux = aux;
  out.cons = cons;
  out.total = total(seg, bnd, aux, cons, weights);
  out.bnd_metric = bnd_metric;
  out.matched = static_cast<int>(pairs.size());
  return out;
}

// ---- teacher training ----------------------------------------------------------

namespace {

std::vector<std::vector<int>> make_batches(size_t count, int batch_size, Rng& rng) {
  std::vector<int> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
  }
  return batches;
}

GridTransform cons_cycle(int64_t step, bool square) {
  if (!square) return (step % 2 == 0) ? GridTransform::kHFlip : GridTransform::kRot180;
  switch (step % 4) {
    case 0: return GridTransform::kHFlip;
    case 1: return GridTransform::kRot90;
    case 2: return GridTransform::kRot180;
    default: return GridTransform::kRot270;
  }
}

// Per-sample gradient work for one teacher batch shard; gradients land in the
// shard's own parameter clones.
struct TeacherShardStats {
  double loss = 0.0;
  double seg = 0.0, bnd = 0.0, aux = 0.0, cons = 0.0, bnd_metric = 0.0;
};

TeacherShardStats teacher_shard(const std::vector<int>& indices, const Dataset& data,
                                const StructuralPriorGraph& graph, const RunConfig& rc,
                                const ParamSet& params, int batch_n, int64_t step_base) {
  TeacherShardStats stats;
  for (size_t k = 0; k < indices.size(); ++k) {
    const SceneSample& sample = data.samples[static_cast<size_t>(indices[k])];
    const bool square = sample.image.dim(0) == sample.image.dim(1);
    Tape tape;
    ForwardResult fr = forward(sample.image, sample.heatmap, graph, rc.teacher, params);
    std::optional<GridTransform> ct;
    if (rc.loss.lambda_cons > 0.0) ct = cons_cycle(step_base + static_cast<int64_t>(k), square);
    SupervisedLossValues s =
        supervised_losses(fr, sample, rc.loss, rc.teacher, params, graph, ct);
    Tensor scaled = scale(s.total, 1.0 / static_cast<double>(batch_n));
    tape.backward(scaled);
    stats.loss += s.total.item();
    stats.seg += s.seg.item();
    stats.bnd += s.bnd.item();
    stats.aux += s.aux.item();
    stats.cons += s.cons.item();
    stats.bnd_metric += s.bnd_metric;
  }
  return stats;
}

// Shards a batch across workers; each worker owns cloned parameters and an
// indexed stats slot, and the master accumulates worker gradients in
// worker-index order.
template <typename ShardFn>
void run_sharded(const std::vector<int>& batch, int workers, ParamSet& master_params,
                 const ShardFn& shard_fn) {
  if (workers <= 1 || batch.size() <= 1) {
    shard_fn(batch, master_params, 0);
    return;
  }
  const int n = std::min<int>(workers, static_cast<int>(batch.size()));
  std::vector<std::vector<int>> shards(static_cast<size_t>(n));
  for (size_t i = 0; i < batch.size(); ++i) {
    shards[i % static_cast<size_t>(n)].push_back(batch[i]);
  }
  std::vector<ParamSet> clones;
  clones.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) clones.push_back(master_params.clone());
  std::vector<std::thread> threads;
  for (int i = 0; i < n; ++i) {
    threads.emplace_back(
        [&, i]() { shard_fn(shards[static_cast<size_t>(i)], clones[static_cast<size_t>(i)], i); });
  }
  for (auto& t : threads) t.join();
  // fixed worker-index reduction order keeps the sum deterministic
  for (int i = 0; i < n; ++i) {
    for (auto& [name, tensor] : master_params.tensors) {
      auto& dst = tensor.mutable_grad();
      const auto& src = clones[static_cast<size_t>(i)].at(name).grad();
      for (size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

}  // namespace

TeacherTrainResult train_teacher(const RunConfig& rc, const Dataset& data,
                                 const StructuralPriorGraph& graph) {
  rc.validate();
  if (data.samples.empty()) throw std::invalid_argument("train_teacher: empty dataset");
  TeacherTrainResult res;
  res.model = ModelParams::init(rc.teacher, rc.seed);
  ParamSet& params = res.model.params;
  AdamW opt(rc.optimizer, params.all());
  Rng order_rng(rc.seed ^ 0x7261696e);
  const int workers = thread_count();

  int64_t step = 0;
  for (int epoch = 0; epoch < rc.epochs; ++epoch) {
    EpochStats es;
    double seg = 0, bnd = 0, aux = 0, cons = 0, bndm = 0;
    size_t count = 0;
    for (const auto& batch : make_batches(data.samples.size(), rc.batch_size, order_rng)) {
      params.zero_grad();
      std::vector<TeacherShardStats> worker_stats(static_cast<size_t>(workers) + 1);
      run_sharded(batch, workers, params,
                  [&](const std::vector<int>& shard, ParamSet& p, int widx) {
                    worker_stats[static_cast<size_t>(widx)] =
                        teacher_shard(shard, data, graph, rc, p, static_cast<int>(batch.size()), step);
                  });
      TeacherShardStats acc;
      for (const auto& s : worker_stats) {
        acc.loss += s.loss;
        acc.seg += s.seg;
        acc.bnd += s.bnd;
        acc.aux += s.aux;
        acc.cons += s.cons;
        acc.bnd_metric += s.bnd_metric;
      }
      auto plist = params.all();
      clip_global_norm(plist, rc.optimizer.clip_norm);
      opt.step();
      es.loss += acc.loss;
      seg += acc.seg;
      bnd += acc.bnd;
      aux += acc.aux;
      cons += acc.cons;
      bndm += acc.bnd_metric;
      count += batch.size();
      ++step;
    }
    const double inv = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
    es.loss *= inv;
    es.terms = {{"seg", seg * inv},   {"bnd", bnd * inv},          {"aux", aux * inv},
                {"cons", cons * inv}, {"bnd_metric", bndm * inv}};
    res.epochs.push_back(std::move(es));
  }
  return res;
}

// ---- distillation ---------------------------------------------------------------

namespace {

struct DistillShardStats {
  double objective = 0.0;
  double seg = 0.0, mask = 0.0, cls = 0.0, feature = 0.0, graph = 0.0, multi = 0.0, refine = 0.0;
  double distill_total = 0.0;
};

}  // namespace

DistillTrainResult distill_student(const RunConfig& rc, const ModelParams& teacher,
                                   const Dataset& data, const StructuralPriorGraph& graph) {
  rc.validate();
  ModelConfig::validate_teacher_student(teacher.config, rc.student);
  if (data.samples.empty()) throw std::invalid_argument("distill_student: empty dataset");

  DistillTrainResult res;
  res.student = ModelParams::init(rc.student, rc.seed + 1);
  res.projections = DistillProjections::init(teacher.config, rc.student);

  ModelParams frozen;
  frozen.config = teacher.config;
  frozen.params = teacher.params.clone();
  frozen.params.set_requires_grad(false);

  // student and projection parameters train jointly
  ParamSet joint;
  for (const auto& [name, t] : res.student.params.tensors) joint.tensors.emplace("student." + name, t);
  for (const auto& [name, t] : res.projections.params.tensors) joint.tensors.emplace(name, t);
  AdamW opt(rc.optimizer, joint.all());

  Rng order_rng(rc.seed ^ 0x64697374);
  const int workers = thread_count();
  const DistillConfig& dc = rc.distill;
  const size_t n_scales = std::min<size_t>(dc.alpha_scales.size(),
                                           static_cast<size_t>(std::min(teacher.config.levels, rc.student.levels)));

  int64_t step = 0;
  for (int epoch = 0; epoch < rc.epochs; ++epoch) {
    EpochStats es;
    DistillShardStats tot;
    size_t count = 0;
    for (const auto& batch : make_batches(data.samples.size(), rc.batch_size, order_rng)) {
      joint.zero_grad();
      std::vector<DistillShardStats> worker_stats(static_cast<size_t>(workers) + 1);

      auto shard_fn = [&](const std::vector<int>& shard, ParamSet& shard_params, int widx) {
        DistillShardStats& acc = worker_stats[static_cast<size_t>(widx)];
        // split the joint clone back into student params and projections
        ParamSet sparams;
        DistillProjections sproj;
        sproj.shared_levels = res.projections.shared_levels;
        for (const auto& [name, t] : shard_params.tensors) {
          if (name.rfind("student.", 0) == 0) {
            sparams.tensors.emplace(name.substr(8), t);
          } else {
            sproj.params.tensors.emplace(name, t);
          }
        }
        for (int idx : shard) {
          const SceneSample& sample = data.samples[static_cast<size_t>(idx)];
          ForwardResult t_fr;
          {
            NoGrad ng;
            t_fr = forward(sample.image, sample.heatmap, graph, teacher.config, frozen.params);
          }
          Tape tape;
          ForwardResult s_fr = forward(sample.image, sample.heatmap, graph, rc.student, sparams);
          SupervisedLossValues sup = supervised_losses(s_fr, sample, rc.loss, rc.student, sparams,
                                                       graph, std::nullopt);
          PairedOutputs pair = pair_outputs(t_fr, s_fr, graph, sproj);
          DistillTerms terms = distill_loss(pair, dc);

          Tensor multi = Tensor::scalar(0.0);
          if (dc.lambda_multi > 0.0 && n_scales > 0) {
            std::vector<PairedOutputs> scaled;
            std::vector<double> alpha(dc.alpha_scales.begin(),
                                      dc.alpha_scales.begin() + static_cast<long>(n_scales));
            double asum = 0.0;
            for (double a : alpha) asum += a;
            for (double& a : alpha) a /= asum;  // renormalize over available levels
            for (size_t s = 0; s < n_scales; ++s) scaled.push_back(pair_at_scale(pair, static_cast<int>(s)));
            multi = multi_scale(scaled, alpha, dc);
          }

          Tensor refine = Tensor::scalar(0.0);
          if (dc.lambda_refine > 0.0) {
            RefineResult rr = bootstrap_refine(sample.image, sample.heatmap, graph, rc.student,
                                               sparams, s_fr);
            refine = rr.refine_loss;
          }

          Tensor seg_component = dc.mode == DistillConfig::Mode::kAppendix
                                     ? scale(sup.aux, dc.lambda1)
                                     : sup.total;
          Tensor obj = total_objective(seg_component, terms.total, multi, refine, dc);
          Tensor scaled_obj = scale(obj, 1.0 / static_cast<double>(batch.size()));
          tape.backward(scaled_obj);

          acc.objective += obj.item();
          acc.seg += seg_component.item();
          acc.mask += terms.mask.item();
          acc.cls += terms.cls.item();
          acc.feature += terms.feature.item();
          acc.graph += terms.graph.item();
          acc.multi += multi.item();
          acc.refine += refine.item();
          acc.distill_total += terms.total.item();
        }
      };
      run_sharded(batch, workers, joint, shard_fn);

      auto plist = joint.all();
      clip_global_norm(plist, rc.optimizer.clip_norm);
      opt.step();
      count += batch.size();
      ++step;
      for (const auto& acc : worker_stats) {
        tot.objective += acc.objective;
        tot.seg += acc.seg;
        tot.mask += acc.mask;
        tot.cls += acc.cls;
        tot.feature += acc.feature;
        tot.graph += acc.graph;
        tot.multi += acc.multi;
        tot.refine += acc.refine;
        tot.distill_total += acc.distill_total;
      }
    }
    const double inv = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
    es.loss = tot.objective * inv;
    es.terms = {{"seg", tot.seg * inv},         {"mask_kd", tot.mask * inv},
                {"class_kd", tot.cls * inv},    {"feature_kd", tot.feature * inv},
                {"graph_kd", tot.graph * inv},  {"multi", tot.multi * inv},
                {"refine", tot.refine * inv},   {"distill", tot.distill_total * inv}};
    res.epochs.push_back(std::move(es));
  }
  return res;
}

double eval_mean_iou(const ModelParams& model, const Dataset& data,
                     const StructuralPriorGraph& graph, const NmsConfig& nms) {
  double acc = 0.0;
  size_t total_truths = 0;
  for (const auto& sample : data.samples) {
    const auto preds = predict(model, sample.image, sample.heatmap, graph, nms);
    std::vector<std::vector<uint8_t>> pred_masks;
    pred_masks.reserve(preds.size());
    for (const auto& p : preds) pred_masks.push_back(binarize(p.soft_mask.value()));
    for (const auto& truth : sample.truths()) {
      const auto tm = binarize(truth.mask.value());
      double best = 0.0;
      for (const auto& pm : pred_masks) best = std::max(best, mask_iou(pm, tm));
      acc += best;
      ++total_truths;
    }
  }
  return total_truths == 0 ? 0.0 : acc / static_cast<double>(total_truths);
}

void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                        const RunConfig& rc) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string cfg = rc.to_json();
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = hex64(fnv1a(cfg.data(), cfg.size()));
  j["seed"] = rc.seed;
  j["version"] = "0.1.0";
  j["threads"] = thread_count();
  write_text_file(out_dir / "run_manifest.json", j.dump(2) + "\n");
}

}  // namespace slick
