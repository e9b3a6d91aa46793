#pragma once

#include <string>

#include "mpnet/model.hpp"

namespace mpnet {

/// Binary checkpoint: magic + format version + the model spec as a text
/// header + per-parameter records (name, shape, little-endian f32
/// payload). Portable across platforms; round trips bitwise.
void save_checkpoint(const Model<float>& model, const std::string& path);

/// Rebuilds a model from the checkpoint's own spec header and restores
/// every parameter.
Model<float> load_checkpoint(const std::string& path);

/// Restores parameters into an existing model. The checkpoint must carry
/// exactly this model's parameter set; any mismatch is an error naming
/// the offending parameter.
void restore_checkpoint(Model<float>& model, const std::string& path);

/// Spec <-> header text (key=value lines). Exposed for the config module
/// and tests.
std::string model_spec_to_text(const ModelSpec& spec);
ModelSpec model_spec_from_text(const std::string& text);

}  // namespace mpnet
