#pragma once

#include <string>

#include "entitynlm/corpus.hpp"
#include "entitynlm/model.hpp"

namespace enlm {

struct Checkpoint {
  model::ModelParams params;
  corpus::Vocabulary vocab;
};

// Versioned little-endian binary: configuration, vocabulary (with hash),
// class assignment, then every parameter tensor with its name and shape.
std::string serialize_checkpoint(const model::ModelParams& params, const corpus::Vocabulary& vocab);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::string& path, const model::ModelParams& params, const corpus::Vocabulary& vocab);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace enlm
