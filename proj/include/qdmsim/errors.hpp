#pragma once

#include <stdexcept>
#include <string>

namespace qdmsim {

/// Invalid static configuration (bad taps, unknown primitive kind, bad grid).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Placement region cannot hold the requested cells.
struct capacity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Array/image dimensions do not match what an operation requires.
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Measurement-protocol violation (missing base frames, wrong chip count).
struct protocol_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Out-of-domain scalar parameter (sigma <= 0, empty crop).
struct parameter_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Field evaluation point inside the guard region of a segment.
struct singularity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An operation was applied to the wrong block kind.
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Layer chain whose shapes do not compose.
struct architecture_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Nonlinear fit failed to converge; carries the best residual reached.
struct fit_error : std::runtime_error {
  fit_error(const std::string& what, double residual)
      : std::runtime_error(what), best_residual(residual) {}
  double best_residual;
};

/// Text-parse failure with source position.
struct parse_error : std::runtime_error {
  parse_error(const std::string& what, int line_, int column_)
      : std::runtime_error(what + " (line " + std::to_string(line_) +
                           ", column " + std::to_string(column_) + ")"),
        line(line_), column(column_) {}
  int line;
  int column;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace qdmsim
