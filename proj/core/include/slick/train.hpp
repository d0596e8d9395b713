#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "slick/config.hpp"
#include "slick/distill.hpp"
#include "slick/infer.hpp"
#include "slick/synthdata.hpp"

namespace slick {

// Decoupled-weight-decay Adam with optional cyclical cosine schedule and
// global-norm gradient clipping.  Parameter order is fixed at construction,
// so moment state stays aligned across steps.
class AdamW {
 public:
  AdamW(OptimizerConfig cfg, std::vector<Tensor> params);
  void step();  // consumes accumulated grads, zeroes them afterwards
  int64_t steps_taken() const { return t_; }
  double current_lr() const;

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// Scales grads so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::vector<Tensor>& params, double max_norm);

double cosine_cycle_scale(int64_t step, int cycle_steps);

// Worker count from SLICK_THREADS (default 1).
int thread_count();

struct SupervisedLossValues {
  Tensor seg;
  Tensor bnd;   // differentiable surrogate
  Tensor aux;
  Tensor cons;
  Tensor total;
  double bnd_metric = 0.0;  // hard boundary loss, reported not trained
  int matched = 0;
};

// Matching-based supervised objective for one scene.  match() drives the
// pairing; ground-truth instances left unmatched are force-assigned to their
// best remaining prediction so the mask head receives gradient from the very
// first step.  `cons_transform` enables the consistency term (requires a
// second forward pass).
SupervisedLossValues supervised_losses(const ForwardResult& fr, const SceneSample& sample,
                                       const LossWeights& weights, const ModelConfig& cfg,
                                       const ParamSet& params, const StructuralPriorGraph& graph,
                                       std::optional<GridTransform> cons_transform);

struct EpochStats {
  double loss = 0.0;
  std::map<std::string, double> terms;
};

struct TeacherTrainResult {
  ModelParams model;
  std::vector<EpochStats> epochs;
};

TeacherTrainResult train_teacher(const RunConfig& rc, const Dataset& data,
                                 const StructuralPriorGraph& graph);

struct DistillTrainResult {
  ModelParams student;
  DistillProjections projections;
  std::vector<EpochStats> epochs;  // terms include mask/class/feature/graph components
};

DistillTrainResult distill_student(const RunConfig& rc, const ModelParams& teacher,
                                   const Dataset& data, const StructuralPriorGraph& graph);

// Mean over ground-truth instances of the best binarized IoU among the
// model's post-NMS predictions.
double eval_mean_iou(const ModelParams& model, const Dataset& data,
                     const StructuralPriorGraph& graph, const NmsConfig& nms);

// Deterministic run provenance record written under --out.
void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                        const RunConfig& rc);

}  // namespace slick
