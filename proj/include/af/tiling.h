//===- tiling.h - Tiling, fast buffers, spill, overlap, orchestration ----------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//
//
// Multi-level strip-mine-and-interchange tiling, fast-buffer (packing)
// generation with copy nests, the two-phase tiling/fusion orchestration,
// parallel-band conversion, capacity spill, and loop-shifted copy-compute
// overlap with async copies.
//
//===----------------------------------------------------------------------===//

#ifndef AF_TILING_H
#define AF_TILING_H

#include "af/analysis.h"
#include "af/ir.h"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace af {

struct TileSpec {
  std::vector<int64_t> tileSizes; // per band loop; 1 = untiled
  int levels = 1;                 // block, then register/warp level
  std::vector<int64_t> secondLevel; // sizes when levels == 2
};

struct TilingError {
  std::string reason;
};

/// Strip-mine-and-interchange form: inter-tile band (tile_space attr) outside,
/// intra band inside; partial tiles through min-bounds. Fails with
/// "illegal-tiling" when a non-reduction dependence is carried by a tiled
/// loop, or the band is not perfectly nested.
std::optional<Op> tileNest(const Program &p, const Op &nest,
                           const TileSpec &spec, TilingError *err = nullptr);

/// Splits reduction-init stores at intermediate depths into their own fill
/// nests so the remaining band is perfect. Returns {fills..., mainNest}.
std::vector<Op> distributeReductionInit(const Op &nest);

struct FastBufferError {
  std::string reason; // "footprint-exceeds-capacity" and friends
};

/// Per qualifying global buffer (temporal reuse > 1, constant tile region):
/// allocates a shared tile, emits copy-in (copy_nest attr) at the innermost
/// tile loop the region depends on, rewrites compute accesses, and emits
/// copy-out for written regions. Mutates the nest and the program's buffer
/// table; `zeroPadKTail` is used by the conv packing wrapper.
bool generateFastBuffers(Program &p, Op &nest, const TargetConfig &cfg,
                         FastBufferError *err = nullptr);

/// While shared usage at any point exceeds capacity, demotes the shared
/// packing buffer with the lowest reuse factor back to global (removing its
/// copy nests). Fusion-private buffers are not demotable.
Program spillOverCapacity(Program p, const TargetConfig &cfg);

/// Max concurrent shared-space bytes over all program points.
int64_t peakSharedUsage(const Program &p);

/// Converts each outermost contiguous band of dependence-free loops into one
/// multi-dimensional ParallelLoop; inner bands likewise. Reductions stay
/// sequential.
Program parallelizeBands(Program p);

struct OverlapReport {
  int stagesUsed = 0;
  std::string note; // set when falling back to fewer stages
};

/// Loop-shifting copy-compute overlap: copy nests under a sequential tile
/// loop become async copies issued `copyStages - 1` iterations ahead, with
/// multi-buffered (x stages) fast buffers and awaits before first use.
/// Falls back to fewer stages (min 1: plain async/await wrapping) when
/// multi-buffering exceeds the shared budget.
OverlapReport overlapCopyCompute(Program &p, Op &nest, const TargetConfig &cfg);

/// The two-round pipeline: (1) tile key nests (matmuls incl. conv-lowered,
/// destination stencils), (2) early fast buffers for matmul/conv,
/// (2.5) `midHook` (attention passes), (3) fusion, (4) tile remaining nests,
/// (5) late fast buffers, (6) `mmaHook` (matrix-unit mapping), (7) spill,
/// (8) overlap, (9) parallel bands. Hooks may be null.
struct OrchestrateOptions {
  bool enableFusion = true;
  bool enableOverlap = true;
  bool enableParallelize = true;
  std::function<Program(Program)> midHook;  // between phases 2 and 3
  std::function<Program(Program)> mmaHook;  // phase 6
  /// Nest indices (top-level) excluded from key-nest tiling (attention DAGs).
  std::vector<int> excludeFromKeyTiling;
};

Program orchestrate(Program p, const TargetConfig &cfg,
                    const OrchestrateOptions &options = {});

} // namespace af

#endif // AF_TILING_H
