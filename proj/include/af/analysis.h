//===- analysis.h - Affine access analyses -----------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//
//
// Lightweight affine machinery shared by every pass: contiguity and
// vectorizability facts from structural inspection of mod/floordiv terms,
// memory dependence testing (per-dimension arithmetic-progression fast path,
// Fourier-Motzkin emptiness fallback), producer slice computation for fusion,
// temporal reuse estimation, and nest-kind classification.
//
//===----------------------------------------------------------------------===//

#ifndef AF_ANALYSIS_H
#define AF_ANALYSIS_H

#include "af/ir.h"

#include <optional>
#include <string>
#include <vector>

namespace af {

// --- Nest shape -------------------------------------------------------------

/// The chain of For loops from a nest root, following the unique loop path.
/// Most lowered nests are a single path (each body holds at most one loop);
/// `singlePath` is false otherwise and only the first path is recorded.
struct LoopChain {
  std::vector<const Op *> loops;
  bool singlePath = true;

  int depth() const { return static_cast<int>(loops.size()); }
  int indexOf(const std::string &iv) const {
    for (size_t i = 0; i < loops.size(); ++i)
      if (loops[i]->iv == iv)
        return static_cast<int>(i);
    return -1;
  }
};

LoopChain buildLoopChain(const Op &nestRoot);

/// An access site together with its enclosing loops (outermost first,
/// including loops outside the nest root when collected that way).
struct AccessInstance {
  const Op *op = nullptr;
  std::vector<const Op *> loopChain;
  bool isStore = false;
};

/// All scalar load/store instances on `buffer` under `root` (pre-order).
std::vector<AccessInstance> collectAccesses(const Op &root,
                                            const std::string &buffer);
std::vector<AccessInstance> collectAccesses(const std::vector<Op> &ops,
                                            const std::string &buffer);

// --- Contiguity (4.1) --------------------------------------------------------

struct ContiguityResult {
  std::string iv;
  int64_t maxContiguousRun = 1;
  /// (interval, stride) facts: flat-address stride within aligned intervals
  /// of the given length, e.g. {(2, 1), (4, 9)} for the packing access.
  std::vector<std::pair<int64_t, int64_t>> stridePattern;
};

/// Largest power-of-two L <= min(maxWidth, ivExtent) such that L consecutive
/// iv values (aligned at multiples of L) address L consecutive elements under
/// row-major layout. Structural inspection only; unanalyzable patterns give 1.
ContiguityResult contiguityAlongIv(const Program &p, const Op &accessOp,
                                   const std::string &iv, int64_t ivExtent,
                                   int64_t maxWidth);

// --- Dependence (4.2) ---------------------------------------------------------

struct DependenceResult {
  bool exists = false;
  /// Optional per-buffer-dimension info (fast path only): true when dependent
  /// pairs can differ in that dimension.
  std::vector<bool> dimVaries;
  bool exact = true; // false when decided conservatively (cap exceeded)
};

/// May iterations of `src` (a store) and `dst` touch the same element?
/// The first `commonDepth` loops of both chains must be the same loops and are
/// treated as equal on both sides. With strictAtDepth >= 0 (an index into the
/// chains), additionally requires src's iv < dst's iv at that position
/// (loop-carried queries).
DependenceResult dependenceExists(const Program &p, const AccessInstance &src,
                                  const AccessInstance &dst, int commonDepth,
                                  int strictAtDepth = -1);

/// True when no loop-carried dependence prevents running `loop` iterations in
/// parallel; accumulator self-updates count as carried (not parallel).
bool loopIsParallel(const Program &p, const Op &nestRoot, const Op &loop);

/// True when every carried dependence on `loop` is an associative accumulator
/// self-update (load-update-store of the same location).
bool loopIsReduction(const Program &p, const Op &nestRoot, const Op &loop);

/// A band is tileable iff every loop is parallel or a reduction.
bool bandIsTileable(const Program &p, const Op &nestRoot,
                    const std::vector<const Op *> &band);

// --- Slices (4.2) --------------------------------------------------------------

struct SliceDescriptor {
  /// Per producer loop (outermost first): bounds over the destination ivs
  /// outer to `insertionDepth` (map dims bind to dstIvs).
  std::vector<std::pair<AffineMap, AffineMap>> producerBounds;
  std::vector<std::string> dstIvs;
  int insertionDepth = 0;
  double redundancyRatio = 0.0;
  /// Constant slice box extent per producer loop, -1 when varying.
  std::vector<int64_t> boxExtents;
  /// Per buffer dim: the (unclamped) lower bound of the read region as an
  /// expr over dstIvs, and the constant box extent (-1 when varying). These
  /// drive buffer privatization: private[idx - lo] replaces buf[idx].
  std::vector<AffineExpr> bufferDimLo;
  std::vector<int64_t> bufferBox;
};

struct SliceFailure {
  std::string reason;
};

/// Computes the producer slice needed by all loads of `buffer` inside the
/// consumer nest when inserted at `depth` (loops outer to depth become
/// parameters). Returns nullopt with the failure reason when bounds cannot be
/// expressed affinely (caller must skip fusion).
std::optional<SliceDescriptor> computeSlice(const Program &p,
                                            const Op &producer,
                                            const Op &consumer,
                                            const std::string &buffer,
                                            int depth,
                                            SliceFailure *failure = nullptr);

/// The rectangular region of a buffer touched by a set of accesses, as a
/// function of the parameter ivs (all other enclosing ivs are substituted
/// through their bounds). Extents must be constant.
struct RegionBox {
  std::vector<AffineExpr> lo; // per buffer dim, over paramIvs
  std::vector<int64_t> extents;
  std::vector<std::string> paramIvs;

  int64_t numElements() const {
    int64_t n = 1;
    for (int64_t e : extents)
      n *= e;
    return n;
  }
};

std::optional<RegionBox>
computeRegionBox(const Program &p, std::span<const AccessInstance> accesses,
                 const std::vector<std::string> &paramIvs);

// --- Classification (A.4) -------------------------------------------------------

/// Pure function of access structure; kinds never change program semantics.
NestKind classifyNestKind(const Program &p, const Op &nestRoot);

/// Ratio of dynamic accesses to distinct elements touched for `buffer` inside
/// the nest: the product of trip counts of enclosing loops absent from the
/// access map (max over accesses). 1 means no temporal reuse.
double temporalReuseFactor(const Program &p, const Op &nestRoot,
                           const std::string &buffer);

// --- Trip counting helpers -------------------------------------------------------

/// Total iterations of the loop chain under `nestRoot` (product of dynamic
/// trip counts), evaluated numerically. Returns -1 beyond `cap`.
int64_t countNestIterations(const Op &nestRoot, int64_t cap = 1 << 24);

} // namespace af

#endif // AF_ANALYSIS_H
