#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vqag/model.hpp"

namespace vqag {

struct GroupReport {
  std::string group;
  double max_rel_error = 0;
  double max_abs_error = 0;
  double eps = 0;
  std::string precision = "double";
  Index elements = 0;
};

struct GradReport {
  std::vector<GroupReport> groups;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;       // seed actually used after any reseeding
  int reseeds = 0;
  std::string pathway = "graph";

  double max_rel_error() const;
  bool passed() const { return !groups.empty() && max_rel_error() < tolerance; }
  // One JSON object; stable key order.
  std::string to_json() const;
};

// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

// Central differences (L(p + eps) - L(p - eps)) / (2 eps) for every element
// of p.value. The parameter is restored exactly afterwards.
MatrixXd fd_gradient(const std::function<double()>& loss_fn, Parameter<double>& p, double eps);

// Parameter name -> reporting group (gru, embeddings, F, mu, log_sigma, G, mlp, attention).
std::string parameter_group(const std::string& name);

struct GradCheckOptions {
  ModelConfig config = ModelConfig::tiny();
  std::uint64_t seed = 7;
  double eps = 1e-5;
  double tolerance = 1e-4;
  Index nodes = 5;
  Index question_length = 4;
  double tie_gap = 1e-6;
  int max_reseeds = 10;
  Mutation mutation = Mutation::None;
};

// Random model + random scene/question at a tie-free point; compares analytic
// and finite-difference gradients for every trainable parameter group.
GradReport check_model(const GradCheckOptions& opts);

}  // namespace vqag
