#pragma once

#include <cstdint>

#include "json.hpp"
#include "spotfast/model.hpp"

namespace spotfast {

/// Shapes a forward pass of `cfg` would produce, computed without building
/// the model. Entry names match ForwardTrace::shapes.
ShapeTrace infer_shapes(const ModelConfig& cfg, std::int64_t batch, bool with_transformer = true);

/// Width of the classifier input (4 C_spot + 4 C_fast).
inline std::int64_t fused_width(const ModelConfig& cfg) {
  return 4 * cfg.backbone.c_spot() + 4 * cfg.backbone.c_fast();
}

nlohmann::ordered_json shapes_to_json(const ShapeTrace& trace);

}  // namespace spotfast
