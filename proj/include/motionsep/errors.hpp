#pragma once

#include <stdexcept>
#include <string>

namespace motionsep {

// Error taxonomy. Everything derives from std::runtime_error so callers can
// catch coarsely; the CLI maps each kind to a distinct nonzero exit code.

// Invalid or inconsistent configuration (bad field value, unknown key,
// missing section, schema mismatch).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatch in an operation or file.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid adapter injection plan (unknown path, duplicate entry, bad rank).
struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Label outside the closed vocabulary (motion, shape, palette bin).
struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required artifact (checkpoint, manifest, clip directory) is missing.
struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corrupt or foreign file fed to a loader (bad magic, truncated payload).
struct FileFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A measured quality gate failed (e.g., the motion judge's holdout accuracy
// fell below the validity threshold it must clear before use).
struct MetricGateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace motionsep
