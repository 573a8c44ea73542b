#pragma once

#include <vector>

namespace qdmsim {

/// Reduced representation of one frame; 4 coordinates for the shipped
/// configurations. Carries only the image's position in the analysis order,
/// never a chip identity.
struct LatentPoint {
  std::vector<double> coords;
  int source_frame = -1;
};

}  // namespace qdmsim
