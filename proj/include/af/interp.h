//===- interp.h - Reference interpreter and metrics engine ------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//
//
// Deterministic tree-walking execution of verified programs. Arithmetic is
// carried in double precision and rounded to the declared element type at
// each store; integers are exact. Per-memory-space and per-buffer traffic,
// flop, fragment-op and correction-op counters double as the traffic witness
// for every transformation.
//
//===----------------------------------------------------------------------===//

#ifndef AF_INTERP_H
#define AF_INTERP_H

#include "af/ir.h"

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace af {

struct InterpError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TensorValue {
  std::vector<int64_t> shape;
  ElementType type = ElementType::F32;
  std::vector<double> data;

  int64_t numElements() const {
    int64_t n = 1;
    for (int64_t d : shape)
      n *= d;
    return n;
  }
};

struct SpaceCounters {
  int64_t loads = 0, stores = 0;
  int64_t loadBytes = 0, storeBytes = 0;

  int64_t traffic() const { return loads + stores; }
  int64_t trafficBytes() const { return loadBytes + storeBytes; }
};

struct BufferCounters {
  int64_t loads = 0, stores = 0;
  int64_t loadBytes = 0, storeBytes = 0;
  MemorySpace space = MemorySpace::Global;
};

struct Metrics {
  SpaceCounters global, shared, registers;
  int64_t flops = 0; // scalar flops; a multiply-add counts as 2
  int64_t fragmentLoads = 0, fragmentComputes = 0, fragmentStores = 0;
  int64_t nestCount = 0;
  int64_t correctionOps = 0;
  std::map<std::string, BufferCounters> perBuffer;

  const SpaceCounters &space(MemorySpace s) const {
    return s == MemorySpace::Global ? global
           : s == MemorySpace::Shared ? shared
                                      : registers;
  }
  SpaceCounters &space(MemorySpace s) {
    return s == MemorySpace::Global ? global
           : s == MemorySpace::Shared ? shared
                                      : registers;
  }
  /// JSON text with the pinned schema (docs/metrics_schema.md).
  std::string toJson() const;
};

struct InterpOptions {
  bool checkParallelConflicts = false;
  std::string traceBuffer; // record flat addresses of accesses to this buffer
};

struct InterpResult {
  std::map<std::string, TensorValue> outputs;
  Metrics metrics;
  std::vector<int64_t> trace;
};

/// Executes `funcName` (default: "main", or the sole function). Inputs must
/// match declared buffer shapes/types for every `input` buffer. Hard failures
/// (out-of-bounds access, read of register value before write, use before
/// await) throw InterpError with a loop-iv trace.
InterpResult interpret(const Program &p,
                       const std::map<std::string, TensorValue> &inputs,
                       const InterpOptions &options = {},
                       const std::string &funcName = "");

// --- Output comparison -----------------------------------------------------

enum class TolProfile { F32, F16Fragment, AttentionRR, Int };

double tolProfileValue(TolProfile p);

struct ComparisonReport {
  bool passed = false;
  double maxAbsErr = 0;
  double maxRelErr = 0;
  int64_t worstIndex = -1;
  std::string message;
};

/// Element-wise check: |a-b| <= tol * max(|a|, |b|, 1). Int profile requires
/// exact equality. Shape mismatch throws InterpError.
ComparisonReport compareTensors(const TensorValue &a, const TensorValue &b,
                                TolProfile profile);
ComparisonReport compareOutputs(const std::map<std::string, TensorValue> &a,
                                const std::map<std::string, TensorValue> &b,
                                TolProfile profile);

/// Per-counter deltas (after - before) and ratios, as JSON text.
std::string diffMetrics(const Metrics &before, const Metrics &after);

// --- Numeric helpers --------------------------------------------------------

/// Round-to-nearest-even conversion through IEEE binary16.
double roundToF16(double v);
/// Rounds `v` to the storage grid of `t` (saturating for integer types).
double roundToType(double v, ElementType t);

/// Deterministic test-input generation: uniform values in [lo, hi) for float
/// buffers, integers in [-4, 4] for int buffers, from a splitmix64 stream.
TensorValue makeRandomTensor(const BufferDecl &decl, uint64_t seed,
                             double lo = 0.0, double hi = 1.0);
std::map<std::string, TensorValue>
makeRandomInputs(const Program &p, uint64_t seed, double lo = 0.0,
                 double hi = 1.0);

} // namespace af

#endif // AF_INTERP_H
