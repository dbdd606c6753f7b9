//===- fusion.h - Slicing-based fusion pass -----------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//
//
// Producer-into-consumer and consumer-into-producer fusion with legality
// checks, the redundancy/footprint cost model, buffer privatization, and
// kind-based pruning.
//
//===----------------------------------------------------------------------===//

#ifndef AF_FUSION_H
#define AF_FUSION_H

#include "af/analysis.h"
#include "af/ir.h"

#include <optional>
#include <string>

namespace af {

enum class FusionDirection { ProducerIntoConsumer, ConsumerIntoProducer };

struct FusionCandidate {
  int sourceNest = -1; // index into the function body
  int destNest = -1;
  FusionDirection direction = FusionDirection::ProducerIntoConsumer;
  int depth = 0;
  std::string buffer;
  SliceDescriptor slice;
};

struct FusionCostReport {
  double redundancyRatio = 0.0;
  bool preservesParallelism = true;
  bool preservesVectorizability = true;
  std::optional<int64_t> privateBufferBytes;
  MemorySpace privateSpace = MemorySpace::Shared;
  bool scalarReplacement = false;
  bool bufferEliminated = false;
  bool accepted = false;
  std::string rejectReason;
};

/// Cost/legality verdict. Accept requires: redundancy within the configured
/// threshold, private footprint within the remaining shared capacity,
/// kind-rule pruning (no matmul-matmul or reduction-reduction fusion, no
/// non-trivial source into a broadcast consumer), no intervening conflicting
/// memory operations, and parallelism preservation.
FusionCostReport evaluateFusion(const FusionCandidate &cand, const Program &p,
                                const TargetConfig &cfg,
                                const std::string &funcName = "main");

/// Applies an accepted candidate in place: the source body is cloned at the
/// fusion depth with slice bounds; accesses are rebased onto a private buffer
/// when the intermediate dies (erased afterwards); innermost single-point
/// slices turn into scalar replacement. Throws on post-fusion verification
/// failure (must never happen on accepted candidates).
void applyFusion(const FusionCandidate &cand, const FusionCostReport &report,
                 Program &p, const std::string &funcName = "main");

/// Greedy worklist over the producer-consumer DAG: consumers in reverse
/// topological (reverse textual) order, deepest legal depth first, until
/// fixpoint. Deterministic.
Program runFusionPass(Program p, const TargetConfig &cfg);

/// Shared helper: total bytes of shared-space buffers currently declared.
int64_t sharedBytesInUse(const Program &p);

} // namespace af

#endif // AF_FUSION_H
