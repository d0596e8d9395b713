#include "slick/config.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "slick/serialize.hpp"

namespace slick {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (step_size <= 0.0) throw ConfigError("optimizer.step_size", "must be positive");
  if (weight_decay < 0.0) throw ConfigError("optimizer.weight_decay", "must be non-negative");
  if (clip_norm <= 0.0) throw ConfigError("optimizer.clip_norm", "must be positive");
  if (schedule != "cosine" && schedule != "constant") {
    throw ConfigError("optimizer.schedule", "must be 'cosine' or 'constant'");
  }
  if (cycle_steps <= 0) throw ConfigError("optimizer.cycle_steps", "must be positive");
}

RunConfig RunConfig::defaults() {
  RunConfig rc;
  rc.teacher = ModelConfig{32, 3, 32, 12, 1, 6, 4, 4, 12};
  rc.student = ModelConfig{6, 2, 16, 8, 1, 6, 4, 2, 8};
  return rc;
}

void RunConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs", "must be non-negative");
  if (batch_size <= 0) throw ConfigError("batch_size", "must be positive");
  try {
    teacher.validate();
  } catch (const std::exception& e) {
    throw ConfigError("teacher", e.what());
  }
  try {
    student.validate();
  } catch (const std::exception& e) {
    throw ConfigError("student", e.what());
  }
  try {
    loss.validate();
  } catch (const std::exception& e) {
    throw ConfigError("loss", e.what());
  }
  try {
    distill.validate();
  } catch (const std::exception& e) {
    throw ConfigError("distill", e.what());
  }
  optimizer.validate();
}

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"channels", m.channels},         {"levels", m.levels},
              {"query_dim", m.query_dim},       {"num_queries", m.num_queries},
              {"kernel_size", m.kernel_size},   {"num_parts", m.num_parts},
              {"num_damages", m.num_damages},   {"se_reduction", m.se_reduction},
              {"fusion_dim", m.fusion_dim}};
}

// type-checked extractors -----------------------------------------------------

double want_number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key, "expected a number");
  return j.get<double>();
}

int want_int(const json& j, const std::string& key) {
  if (!j.is_number_integer()) throw ConfigError(key, "expected an integer");
  return j.get<int>();
}

uint64_t want_u64(const json& j, const std::string& key) {
  if (!j.is_number_unsigned() && !j.is_number_integer()) throw ConfigError(key, "expected an integer");
  if (j.is_number_integer() && j.get<int64_t>() < 0) throw ConfigError(key, "must be non-negative");
  return j.get<uint64_t>();
}

std::string want_string(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key, "expected a string");
  return j.get<std::string>();
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.count(it.key()) == 0) {
      throw ConfigError(prefix.empty() ? it.key() : prefix + "." + it.key(), "unknown key");
    }
  }
}

ModelConfig parse_model(const json& j, const std::string& prefix, const ModelConfig& base) {
  if (!j.is_object()) throw ConfigError(prefix, "expected an object");
  static const std::set<std::string> known = {"channels",    "levels",      "query_dim",
                                              "num_queries", "kernel_size", "num_parts",
                                              "num_damages", "se_reduction", "fusion_dim"};
  reject_unknown(j, known, prefix);
  ModelConfig m = base;
  auto grab = [&](const char* key, int& field) {
    if (j.contains(key)) field = want_int(j.at(key), prefix + "." + key);
  };
  grab("channels", m.channels);
  grab("levels", m.levels);
  grab("query_dim", m.query_dim);
  grab("num_queries", m.num_queries);
  grab("kernel_size", m.kernel_size);
  grab("num_parts", m.num_parts);
  grab("num_damages", m.num_damages);
  grab("se_reduction", m.se_reduction);
  grab("fusion_dim", m.fusion_dim);
  return m;
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["dataset"] = dataset;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["teacher"] = model_to_json(teacher);
  j["student"] = model_to_json(student);
  j["loss"] = {{"lambda_seg", loss.lambda_seg},
               {"lambda_bnd", loss.lambda_bnd},
               {"lambda_aux", loss.lambda_aux},
               {"lambda_cons", loss.lambda_cons}};
  j["distill"] = {{"tau", distill.tau},
                  {"lambda_m", distill.lambda_m},
                  {"lambda_c", distill.lambda_c},
                  {"lambda_f", distill.lambda_f},
                  {"lambda_g", distill.lambda_g},
                  {"alpha_scales", distill.alpha_scales},
                  {"lambda_kd", distill.lambda_kd},
                  {"lambda_multi", distill.lambda_multi},
                  {"lambda_refine", distill.lambda_refine},
                  {"lambda_attn", distill.lambda_attn},
                  {"mode", distill.mode == DistillConfig::Mode::kAppendix ? "appendix" : "standard"},
                  {"lambda1", distill.lambda1},
                  {"lambda2", distill.lambda2},
                  {"lambda3", distill.lambda3}};
  j["optimizer"] = {{"step_size", optimizer.step_size},
                    {"weight_decay", optimizer.weight_decay},
                    {"clip_norm", optimizer.clip_norm},
                    {"schedule", optimizer.schedule},
                    {"cycle_steps", optimizer.cycle_steps}};
  return j.dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  static const std::set<std::string> known = {"seed",    "dataset", "epochs",    "batch_size",
                                              "teacher", "student", "loss",      "distill",
                                              "optimizer"};
  reject_unknown(j, known, "");

  RunConfig rc = RunConfig::defaults();
  if (j.contains("seed")) rc.seed = want_u64(j.at("seed"), "seed");
  if (j.contains("dataset")) rc.dataset = want_string(j.at("dataset"), "dataset");
  if (j.contains("epochs")) rc.epochs = want_int(j.at("epochs"), "epochs");
  if (j.contains("batch_size")) rc.batch_size = want_int(j.at("batch_size"), "batch_size");
  if (j.contains("teacher")) rc.teacher = parse_model(j.at("teacher"), "teacher", rc.teacher);
  if (j.contains("student")) rc.student = parse_model(j.at("student"), "student", rc.student);

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    if (!l.is_object()) throw ConfigError("loss", "expected an object");
    static const std::set<std::string> lk = {"lambda_seg", "lambda_bnd", "lambda_aux", "lambda_cons"};
    reject_unknown(l, lk, "loss");
    if (l.contains("lambda_seg")) rc.loss.lambda_seg = want_number(l.at("lambda_seg"), "loss.lambda_seg");
    if (l.contains("lambda_bnd")) rc.loss.lambda_bnd = want_number(l.at("lambda_bnd"), "loss.lambda_bnd");
    if (l.contains("lambda_aux")) rc.loss.lambda_aux = want_number(l.at("lambda_aux"), "loss.lambda_aux");
    if (l.contains("lambda_cons")) rc.loss.lambda_cons = want_number(l.at("lambda_cons"), "loss.lambda_cons");
  }

  if (j.contains("distill")) {
    const json& d = j.at("distill");
    if (!d.is_object()) throw ConfigError("distill", "expected an object");
    static const std::set<std::string> dk = {"tau",        "lambda_m",     "lambda_c",
                                             "lambda_f",   "lambda_g",     "alpha_scales",
                                             "lambda_kd",  "lambda_multi", "lambda_refine",
                                             "lambda_attn", "mode",        "lambda1",
                                             "lambda2",    "lambda3"};
    reject_unknown(d, dk, "distill");
    auto num = [&](const char* key, double& field) {
      if (d.contains(key)) field = want_number(d.at(key), std::string("distill.") + key);
    };
    num("tau", rc.distill.tau);
    num("lambda_m", rc.distill.lambda_m);
    num("lambda_c", rc.distill.lambda_c);
    num("lambda_f", rc.distill.lambda_f);
    num("lambda_g", rc.distill.lambda_g);
    num("lambda_kd", rc.distill.lambda_kd);
    num("lambda_multi", rc.distill.lambda_multi);
    num("lambda_refine", rc.distill.lambda_refine);
    num("lambda_attn", rc.distill.lambda_attn);
    num("lambda1", rc.distill.lambda1);
    num("lambda2", rc.distill.lambda2);
    num("lambda3", rc.distill.lambda3);
    if (d.contains("alpha_scales")) {
      if (!d.at("alpha_scales").is_array()) throw ConfigError("distill.alpha_scales", "expected an array");
      rc.distill.alpha_scales.clear();
      for (const auto& a : d.at("alpha_scales")) {
        rc.distill.alpha_scales.push_back(want_number(a, "distill.alpha_scales"));
      }
    }
    if (d.contains("mode")) {
      const std::string m = want_string(d.at("mode"), "distill.mode");
      if (m == "standard") {
        rc.distill.mode = DistillConfig::Mode::kStandard;
      } else if (m == "appendix") {
        rc.distill.mode = DistillConfig::Mode::kAppendix;
      } else {
        throw ConfigError("distill.mode", "must be 'standard' or 'appendix'");
      }
    }
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    if (!o.is_object()) throw ConfigError("optimizer", "expected an object");
    static const std::set<std::string> ok = {"step_size", "weight_decay", "clip_norm", "schedule",
                                             "cycle_steps"};
    reject_unknown(o, ok, "optimizer");
    if (o.contains("step_size")) rc.optimizer.step_size = want_number(o.at("step_size"), "optimizer.step_size");
    if (o.contains("weight_decay"))
      rc.optimizer.weight_decay = want_number(o.at("weight_decay"), "optimizer.weight_decay");
    if (o.contains("clip_norm")) rc.optimizer.clip_norm = want_number(o.at("clip_norm"), "optimizer.clip_norm");
    if (o.contains("schedule")) rc.optimizer.schedule = want_string(o.at("schedule"), "optimizer.schedule");
    if (o.contains("cycle_steps")) rc.optimizer.cycle_steps = want_int(o.at("cycle_steps"), "optimizer.cycle_steps");
  }

  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path));
}

}  // namespace slick
