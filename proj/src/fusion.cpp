//===- fusion.cpp - Slicing-based fusion pass -----------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/fusion.h"

#include "af/printer.h"
#include "af/verify.h"

#include <algorithm>
#include <cassert>
#include <set>

namespace af {

int64_t sharedBytesInUse(const Program &p) {
  int64_t total = 0;
  for (const auto &b : p.buffers)
    if (b.space == MemorySpace::Shared)
      total += b.byteSize();
  return total;
}

namespace {

bool nestHasArith(const Op &nest) {
  bool any = false;
  walkOps(nest, [&](const Op &o) {
    if (o.kind == OpKind::Arith || o.kind == OpKind::MmaCompute)
      any = true;
  });
  return any;
}

/// All loads of `buffer` in nests other than body[destIdx] / body[srcIdx].
bool bufferReadOutside(const std::vector<Op> &body, const std::string &buffer,
                       int srcIdx, int destIdx) {
  for (size_t i = 0; i < body.size(); ++i) {
    if (static_cast<int>(i) == srcIdx || static_cast<int>(i) == destIdx)
      continue;
    if (readsBuffer(body[i], buffer))
      return true;
  }
  return false;
}

bool bufferWrittenOutside(const std::vector<Op> &body, const std::string &buffer,
                          int srcIdx, int destIdx) {
  for (size_t i = 0; i < body.size(); ++i) {
    if (static_cast<int>(i) == srcIdx || static_cast<int>(i) == destIdx)
      continue;
    if (writesBuffer(body[i], buffer))
      return true;
  }
  return false;
}

std::set<std::string> toSet(const std::vector<std::string> &v) {
  return {v.begin(), v.end()};
}

bool intersects(const std::set<std::string> &a, const std::set<std::string> &b) {
  for (const auto &x : a)
    if (b.count(x))
      return true;
  return false;
}

} // namespace

FusionCostReport evaluateFusion(const FusionCandidate &cand, const Program &p,
                                const TargetConfig &cfg,
                                const std::string &funcName) {
  FusionCostReport rep;
  const Function *fn = p.findFunction(funcName);
  assert(fn);
  const Op &src = fn->body[cand.sourceNest];
  const Op &dst = fn->body[cand.destNest];
  auto reject = [&](const std::string &why) {
    rep.accepted = false;
    rep.rejectReason = why;
    return rep;
  };

  // Kind-rule pruning.
  NestKind srcKind = src.kindAttr().value_or(NestKind::Misc);
  NestKind dstKind = dst.kindAttr().value_or(NestKind::Misc);
  if (srcKind == NestKind::Matmul && dstKind == NestKind::Matmul)
    return reject("kind-rule: fusion between two matmul nests is not attempted");
  if (srcKind == NestKind::Reduction && dstKind == NestKind::Reduction)
    return reject("kind-rule: fusion between two reduction nests is not attempted");
  if (dstKind == NestKind::Broadcast && nestHasArith(src))
    return reject("kind-rule: non-trivial source into a broadcasting consumer");

  const Op &producer =
      cand.direction == FusionDirection::ProducerIntoConsumer ? src : dst;
  const Op &consumer =
      cand.direction == FusionDirection::ProducerIntoConsumer ? dst : src;
  int producerIdx = cand.direction == FusionDirection::ProducerIntoConsumer
                        ? cand.sourceNest
                        : cand.destNest;
  int consumerIdx = cand.direction == FusionDirection::ProducerIntoConsumer
                        ? cand.destNest
                        : cand.sourceNest;

  // The intermediate must have a single writer (the producer) and no readers
  // outside the consumer, or the source cannot be safely handled post-fusion.
  if (bufferWrittenOutside(fn->body, cand.buffer, producerIdx, -1))
    return reject("intermediate has another writer");
  if (bufferReadOutside(fn->body, cand.buffer, producerIdx, consumerIdx))
    return reject("intermediate is read by another nest");
  if (writesBuffer(consumer, cand.buffer) &&
      cand.direction == FusionDirection::ProducerIntoConsumer)
    return reject("consumer writes the intermediate");

  // Intervening conflicting memory operations between the two nests.
  int lo = std::min(producerIdx, consumerIdx);
  int hi = std::max(producerIdx, consumerIdx);
  auto producerReads = toSet(buffersRead(producer));
  auto consumerReads = toSet(buffersRead(consumer));
  auto consumerWrites = toSet(buffersWritten(consumer));
  for (int i = lo + 1; i < hi; ++i) {
    const Op &mid = fn->body[i];
    auto midReads = toSet(buffersRead(mid));
    auto midWrites = toSet(buffersWritten(mid));
    if (midWrites.count(cand.buffer) || midReads.count(cand.buffer))
      return reject("intervening conflicting memory operations on the buffer");
    if (cand.direction == FusionDirection::ProducerIntoConsumer) {
      // The producer slice re-executes later: its inputs must not change.
      if (intersects(midWrites, producerReads))
        return reject("intervening nest writes a producer input");
    } else {
      // The consumer executes earlier: its inputs/outputs must not interfere.
      if (intersects(midWrites, consumerReads) ||
          intersects(midWrites, consumerWrites) ||
          intersects(midReads, consumerWrites))
        return reject("intervening nest conflicts with the moved consumer");
    }
  }

  rep.redundancyRatio = cand.slice.redundancyRatio;
  if (rep.redundancyRatio > cfg.redundancyThreshold)
    return reject("redundant computation exceeds the threshold");

  const BufferDecl *buf = p.findBuffer(cand.buffer);
  assert(buf);
  bool erasable = !buf->isInput && !buf->isOutput;

  // Privatization decision.
  bool boxConst = !cand.slice.bufferBox.empty();
  int64_t boxElems = 1;
  for (int64_t e : cand.slice.bufferBox) {
    if (e < 0)
      boxConst = false;
    else
      boxElems *= e;
  }
  bool singlePoint = boxConst && boxElems == 1;
  // Scalar replacement: innermost single-point slice over a pointwise-style
  // producer (single-level loop chain bodies only).
  if (cand.direction == FusionDirection::ProducerIntoConsumer && singlePoint) {
    LoopChain pchain = buildLoopChain(producer);
    bool allPoints = true;
    for (int64_t e : cand.slice.boxExtents)
      if (e != 1)
        allPoints = false;
    if (allPoints && pchain.singlePath && erasable) {
      rep.scalarReplacement = true;
      rep.bufferEliminated = true;
      rep.preservesParallelism = true;
      rep.accepted = true;
      return rep;
    }
  }
  if (cand.direction == FusionDirection::ConsumerIntoProducer) {
    // Only the single-point form is implemented: consumer arithmetic lands at
    // the producer store. Requires a pointwise-shaped consumer whose load of
    // the buffer is an invertible identity-style access.
    LoopChain cchain = buildLoopChain(consumer);
    if (!cchain.singlePath)
      return reject("consumer-into-producer requires a single-path consumer");
    for (size_t k = 0; k + 1 < cchain.loops.size(); ++k)
      for (const Op &child : cchain.loops[k]->body)
        if (!child.isLoop())
          return reject("consumer-into-producer requires a perfect consumer nest");
    auto cloadsAll = collectAccesses(consumer, cand.buffer);
    const Op *theLoad = nullptr;
    for (const auto &a : cloadsAll) {
      if (a.isStore)
        return reject("consumer writes the intermediate");
      if (theLoad)
        return reject("consumer loads the intermediate more than once");
      theLoad = a.op;
    }
    if (!theLoad)
      return reject("consumer does not load the intermediate");
    std::set<std::string> covered;
    for (const auto &r : theLoad->access.results) {
      LinearForm lf = decompose(r);
      if (!lf.divTerms.empty() || lf.dimCoeffs.size() > 1)
        return reject("consumer load access is not invertible");
      if (lf.dimCoeffs.size() == 1) {
        if (lf.dimCoeffs.begin()->second != 1)
          return reject("consumer load access is not invertible");
        covered.insert(theLoad->accessOperands[lf.dimCoeffs.begin()->first]);
      }
    }
    for (const Op *loop : cchain.loops)
      if (!covered.count(loop->iv))
        return reject("consumer iv not determined by the intermediate access");
    rep.bufferEliminated = false;
    rep.preservesParallelism = true;
    rep.accepted = true;
    return rep;
  }

  if (erasable && boxConst) {
    rep.bufferEliminated = true;
    rep.privateSpace = boxElems <= cfg.registerElemsCap ? MemorySpace::Register
                                                        : MemorySpace::Shared;
    int64_t bytes = boxElems * elementWidthBytes(buf->elementType);
    rep.privateBufferBytes = bytes;
    if (rep.privateSpace == MemorySpace::Shared) {
      int64_t remaining = cfg.sharedCapacityBytes - sharedBytesInUse(p);
      if (bytes > remaining)
        return reject("private buffer does not fit in remaining fast memory");
    }
    rep.preservesParallelism = true;
  } else {
    // The slice writes the original buffer; overlapping slices across
    // destination iterations would break outer parallelism.
    rep.bufferEliminated = false;
    rep.preservesParallelism = rep.redundancyRatio == 0.0;
    if (!rep.preservesParallelism)
      return reject("fusion would break destination parallelism");
  }

  // Vectorizability: innermost contiguity of the consumer's loads of the
  // buffer before vs after privatization (reported, not enforced).
  if (rep.bufferEliminated && boxConst) {
    auto loads = collectAccesses(consumer, cand.buffer);
    for (const auto &l : loads) {
      if (l.isStore || l.loopChain.empty())
        continue;
      const Op *inner = l.loopChain.back();
      int64_t extent = constTripCount(*inner);
      if (extent <= 0)
        extent = 8;
      auto before = contiguityAlongIv(p, *l.op, inner->iv, extent,
                                      cfg.maxVectorWidthElems);
      // After privatization the innermost box dim is still unit-stride when
      // it was before; a coarse proxy: the private row length must not be 1
      // while the original run exceeded 1.
      if (before.maxContiguousRun > 1 && cand.slice.bufferBox.back() == 1)
        rep.preservesVectorizability = false;
    }
  }

  rep.accepted = true;
  return rep;
}

//===----------------------------------------------------------------------===//
// applyFusion
//===----------------------------------------------------------------------===//

namespace {

/// Renames every use of value `from` (as an operand) to `to` under `ops`.
void replaceOperandUses(std::vector<Op> &ops, const std::string &from,
                        const Operand &to) {
  walkOps(ops, [&](Op &o) {
    for (auto &operand : o.operands)
      if (!operand.isImm && operand.value == from)
        operand = to;
  });
}

/// The mutable loop at the end of the iv path, plus the body that contains it.
Op *followIvPath(Op &root, std::span<const std::string> ivs) {
  Op *cur = &root;
  assert(cur->kind == OpKind::For && cur->iv == ivs[0]);
  for (size_t i = 1; i < ivs.size(); ++i) {
    Op *next = nullptr;
    for (Op &child : cur->body)
      if (child.kind == OpKind::For && child.iv == ivs[i])
        next = &child;
    assert(next && "iv path broken");
    cur = next;
  }
  return cur;
}

thread_local int fusionCounter = 0;

} // namespace

namespace detail {
void resetFusionNameCounter() { fusionCounter = 0; }
} // namespace detail

void applyFusion(const FusionCandidate &cand, const FusionCostReport &report,
                 Program &p, const std::string &funcName) {
  Function *fn = p.findFunction(funcName);
  assert(fn);
  int producerIdx = cand.direction == FusionDirection::ProducerIntoConsumer
                        ? cand.sourceNest
                        : cand.destNest;
  int consumerIdx = cand.direction == FusionDirection::ProducerIntoConsumer
                        ? cand.destNest
                        : cand.sourceNest;
  Op &producer = fn->body[producerIdx];
  Op &consumer = fn->body[consumerIdx];
  std::string suffix = ".f" + std::to_string(fusionCounter++);

  if (cand.direction == FusionDirection::ConsumerIntoProducer) {
    // Single-point form: clone the consumer's innermost body right after the
    // producer's store of the buffer, substituting consumer ivs.
    LoopChain cchain = buildLoopChain(consumer);
    assert(cchain.singlePath);
    LoopChain pchain = buildLoopChain(producer);
    auto paccesses = collectAccesses(producer, cand.buffer);
    const Op *pstore = nullptr;
    for (auto &a : paccesses)
      if (a.isStore)
        pstore = a.op;
    assert(pstore);
    // Consumer iv values in terms of the producer's store subscripts: the
    // consumer load access must be per-dim single-iv; invert it.
    auto caccesses = collectAccesses(consumer, cand.buffer);
    const Op *cload = nullptr;
    for (auto &a : caccesses)
      if (!a.isStore)
        cload = a.op;
    assert(cload);
    // Map consumer iv -> expr over producer store's operand ivs.
    std::map<std::string, AffineExpr> consumerIvExpr;
    for (size_t d = 0; d < cload->access.results.size(); ++d) {
      LinearForm lf = decompose(cload->access.results[d]);
      if (lf.dimCoeffs.size() != 1 || !lf.divTerms.empty())
        continue;
      auto [dim, coeff] = *lf.dimCoeffs.begin();
      if (coeff != 1)
        continue;
      // consumerIv + c == storeExpr_d  =>  consumerIv = storeExpr_d - c.
      consumerIvExpr[cload->accessOperands[dim]] =
          (pstore->access.results[d] - lf.constant).canonicalize();
    }
    // Clone the consumer's innermost body (all non-loop ops).
    const Op *cinner = cchain.loops.back();
    std::vector<Op> cloned;
    for (const Op &op : cinner->body)
      if (!op.isLoop())
        cloned.push_back(op);
    uniquifyNames(cloned, suffix);
    // Rewrite accesses: substitute consumer ivs with producer-side exprs.
    for (Op &op : cloned) {
      if (op.kind != OpKind::Load && op.kind != OpKind::Store)
        continue;
      std::vector<AffineExpr> repl(op.accessOperands.size());
      std::vector<std::string> newOperands = op.accessOperands;
      bool changed = false;
      for (size_t i = 0; i < op.accessOperands.size(); ++i) {
        auto it = consumerIvExpr.find(op.accessOperands[i]);
        if (it == consumerIvExpr.end())
          continue;
        // Splice the expr (over pstore operands) in; extend operand list.
        unsigned base = static_cast<unsigned>(newOperands.size());
        std::vector<AffineExpr> shift;
        for (size_t k = 0; k < pstore->accessOperands.size(); ++k) {
          shift.push_back(AffineExpr::dim(base + static_cast<unsigned>(k)));
          newOperands.push_back(pstore->accessOperands[k]);
        }
        repl[i] = it->second.replaceDims(shift);
        changed = true;
      }
      if (changed) {
        op.access.numDims = static_cast<unsigned>(newOperands.size());
        op.accessOperands = newOperands;
        op.access = op.access.replaceDims(repl);
        for (auto &r : op.access.results)
          r = r.canonicalize();
        compactAccess(op.access, op.accessOperands);
      }
    }
    // The cloned load of the buffer reads the just-stored value.
    for (auto it = cloned.begin(); it != cloned.end();) {
      if (it->kind == OpKind::Load && it->buffer == cand.buffer) {
        replaceOperandUses(cloned, it->result, pstore->operands[0]);
        it = cloned.erase(it);
      } else {
        ++it;
      }
    }
    // Insert after the producer store (which lives in the innermost block).
    std::vector<std::string> pivs;
    for (const Op *l : pchain.loops)
      pivs.push_back(l->iv);
    Op *pinner = followIvPath(producer, pivs);
    auto pos = pinner->body.end();
    for (auto it = pinner->body.begin(); it != pinner->body.end(); ++it)
      if (it->kind == OpKind::Store && it->buffer == cand.buffer)
        pos = it + 1;
    pinner->body.insert(pos, cloned.begin(), cloned.end());
    // The consumer nest is gone; the intermediate keeps its (now possibly
    // dead) stores, which is harmless.
    fn->body.erase(fn->body.begin() + consumerIdx);
    VerifyReport vr = verifyProgram(p);
    if (!vr.ok())
      throw std::runtime_error("post-fusion verification failed:\n" + vr.str());
    return;
  }

  // --- Producer-into-consumer ---------------------------------------------
  LoopChain pchain = buildLoopChain(producer);
  assert(pchain.singlePath);
  auto paccessesAll = collectAccesses(producer, cand.buffer);
  const Op *pstoreOp = nullptr;
  for (auto &a : paccessesAll)
    if (a.isStore)
      pstoreOp = a.op;
  assert(pstoreOp);

  if (report.scalarReplacement) {
    // Inline the producer's bodies with ivs substituted by the point exprs.
    // Point expr for producer loop k: slice lower bound (single result).
    std::map<std::string, AffineExpr> pointExpr; // over dstIvs
    for (size_t k = 0; k < pchain.loops.size(); ++k) {
      assert(cand.slice.producerBounds[k].first.results.size() == 1);
      pointExpr[pchain.loops[k]->iv] =
          cand.slice.producerBounds[k].first.results[0];
    }
    // Gather the producer's straight-line ops along the chain.
    std::vector<Op> flat;
    const Op *cur = &producer;
    while (true) {
      const Op *next = nullptr;
      for (const Op &child : cur->body) {
        if (child.isLoop())
          next = &child;
        else
          flat.push_back(child);
      }
      if (!next)
        break;
      cur = next;
    }
    // For each load of the buffer in the consumer, inline a fresh copy:
    // substitute the producer ivs first (names still original), then uniquify
    // the cloned value names.
    int instance = 0;
    std::function<void(Op &)> inlineInto = [&](Op &op) {
      for (size_t i = 0; i < op.body.size(); ++i) {
        inlineInto(op.body[i]);
        if (op.body[i].kind != OpKind::Load || op.body[i].buffer != cand.buffer)
          continue;
        std::vector<Op> clone = flat;
        for (Op &c : clone) {
          if (c.kind != OpKind::Load && c.kind != OpKind::Store)
            continue;
          std::vector<AffineExpr> repl(c.accessOperands.size());
          std::vector<std::string> operands = c.accessOperands;
          bool changed = false;
          for (size_t oi = 0; oi < c.accessOperands.size(); ++oi) {
            auto it = pointExpr.find(c.accessOperands[oi]);
            if (it == pointExpr.end())
              continue;
            unsigned baseIdx = static_cast<unsigned>(operands.size());
            std::vector<AffineExpr> shift;
            for (size_t k = 0; k < cand.slice.dstIvs.size(); ++k) {
              shift.push_back(AffineExpr::dim(baseIdx + static_cast<unsigned>(k)));
              operands.push_back(cand.slice.dstIvs[k]);
            }
            repl[oi] = it->second.replaceDims(shift);
            changed = true;
          }
          if (changed) {
            c.access.numDims = static_cast<unsigned>(operands.size());
            c.accessOperands = operands;
            c.access = c.access.replaceDims(repl);
            for (auto &r : c.access.results)
              r = r.canonicalize();
            compactAccess(c.access, c.accessOperands);
          }
        }
        uniquifyNames(clone, suffix + "_" + std::to_string(instance++));
        // The cloned store of the buffer defines the replacement value.
        Operand value;
        for (auto it = clone.begin(); it != clone.end();) {
          if (it->kind == OpKind::Store && it->buffer == cand.buffer) {
            value = it->operands[0];
            it = clone.erase(it);
          } else {
            ++it;
          }
        }
        std::string loadResult = op.body[i].result;
        op.body.erase(op.body.begin() + i);
        op.body.insert(op.body.begin() + i, clone.begin(), clone.end());
        replaceOperandUses(op.body, loadResult, value);
        i += clone.size() - 1;
      }
    };
    inlineInto(consumer);
    fn->body.erase(fn->body.begin() + producerIdx);
    p.eraseBuffer(cand.buffer);
    VerifyReport vr = verifyProgram(p);
    if (!vr.ok())
      throw std::runtime_error("post-fusion verification failed:\n" + vr.str());
    return;
  }

  // General form: slice loops inserted at the fusion depth.
  // 1) Locate the insertion block: the body of the consumer's loop at depth
  //    d-1 along the shared load path.
  auto caccesses = collectAccesses(consumer, cand.buffer);
  const AccessInstance *firstLoad = nullptr;
  for (const auto &a : caccesses)
    if (!a.isStore && !firstLoad)
      firstLoad = &a;
  assert(firstLoad);
  std::vector<std::string> pathIvs;
  for (int i = 0; i < cand.depth; ++i)
    pathIvs.push_back(firstLoad->loopChain[i]->iv);
  Op *hostLoop = followIvPath(consumer, pathIvs);
  // 2) Clone the producer structure loop by loop, replacing each loop's
  //    bounds with the slice bounds (over dstIvs); then uniquify every name
  //    defined inside.
  size_t level = 0;
  std::function<Op(const Op &)> cloneLevel = [&](const Op &loop) -> Op {
    size_t k = level++;
    Op out = makeFor(loop.iv, cand.slice.producerBounds[k].first,
                     cand.slice.producerBounds[k].second, loop.step,
                     cand.slice.dstIvs);
    for (const Op &child : loop.body) {
      if (child.isLoop())
        out.body.push_back(cloneLevel(child));
      else
        out.body.push_back(child);
    }
    return out;
  };
  Op sliceNest = cloneLevel(producer);
  sliceNest.attrs = producer.attrs;
  sliceNest.attrs.erase(attr::kKind);
  uniquifyNames(sliceNest, suffix);

  // 3) Privatize when the buffer dies.
  if (report.bufferEliminated) {
    const BufferDecl *orig = p.findBuffer(cand.buffer);
    BufferDecl priv;
    priv.id = cand.buffer + suffix;
    priv.shape = cand.slice.bufferBox;
    priv.elementType = orig->elementType;
    priv.space = report.privateSpace;
    p.buffers.push_back(priv);

    BufferRebase rebase;
    rebase.fromId = cand.buffer;
    rebase.toId = priv.id;
    rebase.offsets = cand.slice.bufferDimLo;
    rebase.offsetIvs = cand.slice.dstIvs;
    rebaseBufferAccesses(sliceNest, rebase);
    // Rewrite the consumer's loads under the host loop.
    for (Op &child : hostLoop->body)
      rebaseBufferAccesses(child, rebase);

    // Insert alloc/slice at the front, dealloc at the end of the host block.
    std::vector<Op> newBody;
    newBody.push_back(makeAlloc(priv.id));
    newBody.push_back(std::move(sliceNest));
    for (Op &child : hostLoop->body)
      newBody.push_back(std::move(child));
    newBody.push_back(makeDealloc(priv.id));
    hostLoop->body = std::move(newBody);
    p.eraseBuffer(cand.buffer);
  } else {
    // Insert before the first child that reads the buffer.
    auto pos = hostLoop->body.begin();
    for (auto it = hostLoop->body.begin(); it != hostLoop->body.end(); ++it)
      if (readsBuffer(*it, cand.buffer)) {
        pos = it;
        break;
      }
    hostLoop->body.insert(pos, std::move(sliceNest));
  }
  fn->body.erase(fn->body.begin() + producerIdx);

  VerifyReport vr = verifyProgram(p);
  if (!vr.ok())
    throw std::runtime_error("post-fusion verification failed:\n" + vr.str());
}

//===----------------------------------------------------------------------===//
// runFusionPass
//===----------------------------------------------------------------------===//

Program runFusionPass(Program p, const TargetConfig &cfg) {
  Function *fn = p.findFunction("main");
  if (!fn)
    return p;
  detail::resetFusionNameCounter();
  bool changed = true;
  while (changed) {
    changed = false;
    // Consumers in reverse topological order == reverse textual order (the
    // lowered program is topologically sorted by construction).
    for (int ci = static_cast<int>(fn->body.size()) - 1; ci >= 0 && !changed;
         --ci) {
      if (!fn->body[ci].isLoop() || fn->body[ci].kind == OpKind::Parallel)
        continue;
      // Buffers this consumer reads, in first-load order.
      auto reads = buffersRead(fn->body[ci]);
      for (const auto &buffer : reads) {
        if (changed)
          break;
        // Producer: the last earlier nest writing the buffer.
        int pi = -1;
        for (int i = 0; i < ci; ++i)
          if (writesBuffer(fn->body[i], buffer))
            pi = i;
        if (pi < 0)
          continue;
        if (!fn->body[pi].isLoop() || fn->body[pi].kind == OpKind::Parallel)
          continue;
        // Deepest legal fusion depth first: the longest loop prefix shared by
        // every load of the buffer.
        std::vector<AccessInstance> loads;
        for (auto &a : collectAccesses(fn->body[ci], buffer))
          if (!a.isStore)
            loads.push_back(a);
        if (loads.empty())
          continue;
        int maxDepth = static_cast<int>(loads[0].loopChain.size());
        for (const auto &l : loads) {
          int common = 0;
          while (common < static_cast<int>(l.loopChain.size()) &&
                 common < static_cast<int>(loads[0].loopChain.size()) &&
                 l.loopChain[common] == loads[0].loopChain[common])
            ++common;
          maxDepth = std::min(maxDepth, common);
        }
        if (maxDepth <= 0)
          continue;
        for (int d = maxDepth; d >= 1 && !changed; --d) {
          FusionCandidate cand;
          cand.sourceNest = pi;
          cand.destNest = ci;
          cand.direction = FusionDirection::ProducerIntoConsumer;
          cand.depth = d;
          cand.buffer = buffer;
          SliceFailure failure;
          auto slice =
              computeSlice(p, fn->body[pi], fn->body[ci], buffer, d, &failure);
          if (!slice)
            continue;
          cand.slice = *slice;
          FusionCostReport rep = evaluateFusion(cand, p, cfg);
          if (!rep.accepted)
            continue;
          applyFusion(cand, rep, p);
          changed = true;
        }
      }
    }
  }
  return p;
}

} // namespace af
