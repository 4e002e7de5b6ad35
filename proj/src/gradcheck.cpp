#include "vqag/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"

namespace vqag {

double GradReport::max_rel_error() const {
  double worst = 0;
  for (const auto& g : groups) worst = std::max(worst, g.max_rel_error);
  return worst;
}

std::string GradReport::to_json() const {
  nlohmann::ordered_json j;
  j["pathway"] = pathway;
  j["seed"] = seed;
  j["reseeds"] = reseeds;
  j["tolerance"] = tolerance;
  j["max_rel_error"] = max_rel_error();
  j["passed"] = passed();
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : groups) {
    j["groups"].push_back({{"group", g.group},
                           {"max_rel_error", g.max_rel_error},
                           {"max_abs_error", g.max_abs_error},
                           {"eps", g.eps},
                           {"precision", g.precision},
                           {"elements", g.elements}});
  }
  return j.dump();
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

MatrixXd fd_gradient(const std::function<double()>& loss_fn, Parameter<double>& p, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("fd_gradient: eps must lie in [1e-7, 1e-3]");
  MatrixXd g(p.value.rows(), p.value.cols());
  for (Index i = 0; i < p.value.size(); ++i) {
    double& x = p.value.data()[i];
    const double saved = x;
    x = saved + eps;
    const double up = loss_fn();
    x = saved - eps;
    const double down = loss_fn();
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleError("fd_gradient: non-finite loss perturbing " + p.name + "[" + std::to_string(i) + "]");
    }
    g.data()[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

std::string parameter_group(const std::string& name) {
  if (name == "embeddings") return "embeddings";
  if (name.rfind("gru.", 0) == 0) return "gru";
  if (name.rfind("graph.", 0) == 0) return "F";
  if (name.rfind("attention.", 0) == 0) return "attention";
  if (name.rfind("mlp.", 0) == 0) return "mlp";
  if (name.rfind("conv", 0) == 0) {
    if (name.find(".log_sigma") != std::string::npos) return "log_sigma";
    if (name.find(".mu") != std::string::npos) return "mu";
    if (name.find(".G") != std::string::npos) return "G";
  }
  return name;
}

namespace {

struct Instance {
  Model<double> model;
  Scene scene;
  std::vector<Index> tokens;
  VectorXd targets;
};

Instance make_instance(const GradCheckOptions& opts, std::uint64_t seed) {
  Rng rng(seed);
  Instance inst{Model<double>(opts.config, rng.next_u64()), {}, {}, {}};
  // Every parameter (biases included) drawn nonzero so each path carries gradient.
  for (auto* p : inst.model.parameters()) {
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.normal(0.0, 0.5);
  }
  for (auto& layer : inst.model.convs) {
    for (Index k = 0; k < layer.kernels(); ++k) {
      layer.mu.value(k, 0) = rng.uniform(0.0, 0.5);
      layer.mu.value(k, 1) = rng.uniform(-3.0, 3.0);
      layer.log_sigma.value(k, 0) = std::log(rng.uniform(0.2, 0.6));
      layer.log_sigma.value(k, 1) = std::log(rng.uniform(0.8, 2.0));
    }
  }
  inst.scene.image_id = 0;
  inst.scene.features.resize(opts.nodes, opts.config.d_v_raw);
  for (Index i = 0; i < inst.scene.features.size(); ++i) inst.scene.features.data()[i] = rng.normal();
  for (Index i = 0; i < opts.nodes; ++i) {
    const double w = rng.uniform(0.05, 0.3), h = rng.uniform(0.05, 0.3);
    const double x = rng.uniform(0.0, 1.0 - w), y = rng.uniform(0.0, 1.0 - h);
    inst.scene.boxes.push_back({x, y, x + w, y + h});
  }
  for (Index t = 0; t < opts.question_length; ++t) {
    inst.tokens.push_back(1 + static_cast<Index>(rng.index(static_cast<std::uint64_t>(opts.config.vocab_size - 1))));
  }
  inst.targets.resize(opts.config.classes);
  for (Index c = 0; c < opts.config.classes; ++c) inst.targets(c) = rng.uniform();
  return inst;
}

bool tie_free(const ForwardTrace<double>& t, Index m, double gap) {
  if (t.graph.A.size() == 0) return true;
  for (Index i = 0; i < t.graph.A.rows(); ++i) {
    if (top_m_gap(t.graph.A.row(i), m) <= gap) return false;
  }
  return true;
}

}  // namespace

GradReport check_model(const GradCheckOptions& opts) {
  opts.config.validate();
  if (opts.nodes < opts.config.m) throw ConfigError("gradcheck: nodes must be >= m");
  GradReport report;
  report.tolerance = opts.tolerance;
  report.pathway = to_string(opts.config.pathway);

  for (int attempt = 0;; ++attempt) {
    if (attempt > opts.max_reseeds) {
      throw OracleError("gradcheck: top-m ties persisted after " + std::to_string(opts.max_reseeds) + " reseeds");
    }
    const std::uint64_t seed = opts.seed + static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ULL;
    Instance inst = make_instance(opts, seed);
    ForwardTrace<double> trace;
    inst.model.forward(inst.scene, inst.tokens, Mode::Eval, nullptr, &trace);
    if (opts.config.pathway == Pathway::Graph && !tie_free(trace, opts.config.m, opts.tie_gap)) continue;

    report.seed = seed;
    report.reseeds = attempt;
    inst.model.set_mutation(opts.mutation);
    inst.model.zero_grad();
    inst.model.backward(trace, inst.targets);

    auto loss_fn = [&inst]() {
      const VectorXd logits = inst.model.forward(inst.scene, inst.tokens, Mode::Eval);
      return soft_bce_loss(inst.targets, logits);
    };
    std::map<std::string, GroupReport> groups;
    std::vector<std::string> order;
    for (auto* p : inst.model.parameters()) {
      if (!p->trainable) continue;
      const std::string group = parameter_group(p->name);
      if (!groups.count(group)) {
        order.push_back(group);
        groups[group] = GroupReport{group, 0, 0, opts.eps, "double", 0};
      }
      const MatrixXd numeric = fd_gradient(loss_fn, *p, opts.eps);
      auto& g = groups[group];
      for (Index i = 0; i < numeric.size(); ++i) {
        const double a = p->grad.data()[i];
        const double b = numeric.data()[i];
        g.max_rel_error = std::max(g.max_rel_error, relative_error(a, b));
        g.max_abs_error = std::max(g.max_abs_error, std::abs(a - b));
      }
      g.elements += numeric.size();
    }
    for (const auto& name : order) report.groups.push_back(groups[name]);
    return report;
  }
}

}  // namespace vqag
