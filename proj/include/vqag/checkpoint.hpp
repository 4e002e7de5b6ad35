#pragma once

#include <string>
#include <vector>

#include "vqag/model.hpp"
#include "vqag/question_encoder.hpp"
#include "vqag/trainer.hpp"

namespace vqag {

// Single-file container:
//   line 1  "VQAGCKPT <version>"
//   line 2  JSON manifest (configs, vocabularies, progress, and for every array
//           its name, shape and byte offset relative to the data section)
//   rest    raw little-endian arrays in manifest order (parameter values, then
//           Adam first and second moments)
inline constexpr int kCheckpointVersion = 1;

template <typename Scalar>
struct Checkpoint {
  Model<Scalar> model;
  TrainConfig train;
  TrainState<Scalar> state;
  Vocabulary words;
  std::vector<std::string> answer_classes;
};

// Written to a temporary sibling and renamed into place, so a crash never
// leaves a truncated file behind.
template <typename Scalar>
void save_checkpoint(const std::string& path, const Model<Scalar>& model, const TrainConfig& train,
                     const TrainState<Scalar>& state, const Vocabulary& words,
                     const std::vector<std::string>& answer_classes);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path);

}  // namespace vqag
