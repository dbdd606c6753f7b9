//===- interp.cpp - Reference interpreter and metrics engine -----------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/interp.h"

#include "af/printer.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>

using json = nlohmann::json;

namespace af {

double roundToF16(double v) {
  if (std::isnan(v) || std::isinf(v))
    return v;
  float f = static_cast<float>(v);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  uint32_t sign = (bits >> 16) & 0x8000u;
  int32_t exponent = static_cast<int32_t>((bits >> 23) & 0xff) - 127 + 15;
  uint32_t mantissa = bits & 0x7fffffu;
  uint16_t half;
  if (exponent >= 31) {
    half = static_cast<uint16_t>(sign | 0x7c00u); // overflow -> inf
  } else if (exponent <= 0) {
    if (exponent < -10) {
      half = static_cast<uint16_t>(sign); // underflow -> zero
    } else {
      // Subnormal: shift with round-to-nearest-even.
      mantissa |= 0x800000u;
      int shift = 14 - exponent;
      uint32_t m = mantissa >> shift;
      uint32_t rem = mantissa & ((1u << shift) - 1);
      uint32_t halfway = 1u << (shift - 1);
      if (rem > halfway || (rem == halfway && (m & 1)))
        ++m;
      half = static_cast<uint16_t>(sign | m);
    }
  } else {
    uint32_t m = mantissa >> 13;
    uint32_t rem = mantissa & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (m & 1)))
      ++m;
    uint32_t combined = (static_cast<uint32_t>(exponent) << 10) + m;
    if (combined >= 0x7c00u)
      combined = 0x7c00u; // mantissa carry overflowed the exponent
    half = static_cast<uint16_t>(sign | combined);
  }
  // Expand back to double.
  uint32_t hSign = (half & 0x8000u) << 16;
  uint32_t hExp = (half >> 10) & 0x1f;
  uint32_t hMant = half & 0x3ffu;
  uint32_t outBits;
  if (hExp == 0) {
    if (hMant == 0) {
      outBits = hSign;
    } else {
      int e = -1;
      uint32_t m = hMant;
      do {
        ++e;
        m <<= 1;
      } while (!(m & 0x400u));
      outBits = hSign | ((127 - 15 - e) << 23) | ((m & 0x3ffu) << 13);
    }
  } else if (hExp == 31) {
    outBits = hSign | 0x7f800000u | (hMant << 13);
  } else {
    outBits = hSign | ((hExp - 15 + 127) << 23) | (hMant << 13);
  }
  float out;
  std::memcpy(&out, &outBits, 4);
  return static_cast<double>(out);
}

double roundToType(double v, ElementType t) {
  switch (t) {
  case ElementType::F32:
    return static_cast<double>(static_cast<float>(v));
  case ElementType::F16:
    return roundToF16(v);
  case ElementType::I8: {
    double r = std::nearbyint(v);
    return std::clamp(r, -128.0, 127.0);
  }
  case ElementType::I32: {
    double r = std::nearbyint(v);
    return std::clamp(r, -2147483648.0, 2147483647.0);
  }
  }
  return v;
}

double tolProfileValue(TolProfile p) {
  switch (p) {
  case TolProfile::F32:
    return 1e-6;
  case TolProfile::F16Fragment:
    return 2e-3;
  case TolProfile::AttentionRR:
    return 1e-3;
  case TolProfile::Int:
    return 0.0;
  }
  return 1e-6;
}

namespace {

struct Fragment {
  double data[16 * 16] = {};
  ElementType type = ElementType::F32;
};

struct Value {
  double scalar = 0;
  std::shared_ptr<Fragment> fragment; // non-null for fragment values
};

struct BufferState {
  const BufferDecl *decl = nullptr;
  std::vector<double> data;
  std::vector<uint8_t> written;
  std::vector<int64_t> strides;
  bool live = true;     // false between dealloc and (re-)alloc
  bool allocManaged = false;
};

struct PendingBox {
  std::vector<int64_t> lo, hi; // inclusive box per dim
  bool contains(std::span<const int64_t> idx) const {
    for (size_t i = 0; i < lo.size(); ++i)
      if (idx[i] < lo[i] || idx[i] > hi[i])
        return false;
    return true;
  }
  bool empty = true;
};

struct PendingCopy {
  const Op *op = nullptr;
  std::unordered_map<std::string, int64_t> ivSnapshot;
  PendingBox dstBox;
};

struct ConflictCtx {
  std::unordered_map<int64_t, int64_t> writerIteration; // key: buf-hash ^ addr
  int64_t currentIteration = 0;
  bool full = true;
};

class Interpreter {
public:
  Interpreter(const Program &p, const InterpOptions &options)
      : program(p), options(options) {}

  InterpResult run(const std::map<std::string, TensorValue> &inputs,
                   const std::string &funcName) {
    const Function *fn = nullptr;
    if (funcName.empty()) {
      fn = program.findFunction("main");
      if (!fn && program.functions.size() == 1)
        fn = &program.functions[0];
    } else {
      fn = program.findFunction(funcName);
    }
    if (!fn)
      throw InterpError("no such function: " +
                        (funcName.empty() ? "main" : funcName));

    for (const auto &b : program.buffers) {
      BufferState st;
      st.decl = &b;
      st.data.assign(b.numElements(), 0.0);
      st.written.assign(b.numElements(), 0);
      st.strides = b.strides();
      buffers.emplace(b.id, std::move(st));
      result.metrics.perBuffer[b.id].space = b.space;
    }
    // Alloc-managed buffers start dead.
    walkOps(fn->body, [&](const Op &op) {
      if (op.kind == OpKind::Alloc) {
        auto it = buffers.find(op.buffer);
        if (it != buffers.end()) {
          it->second.allocManaged = true;
          it->second.live = false;
        }
      }
    });
    for (const auto &b : program.buffers) {
      if (!b.isInput)
        continue;
      auto it = inputs.find(b.id);
      if (it == inputs.end())
        throw InterpError("missing input for buffer " + b.id);
      const TensorValue &tv = it->second;
      if (tv.shape != b.shape)
        throw InterpError("input shape mismatch for buffer " + b.id);
      BufferState &st = buffers.at(b.id);
      for (int64_t i = 0; i < b.numElements(); ++i)
        st.data[i] = roundToType(tv.data[i], b.elementType);
      std::fill(st.written.begin(), st.written.end(), 1);
    }
    for (const Op &op : fn->body)
      if (op.isLoop())
        ++result.metrics.nestCount;

    for (const Op &op : fn->body)
      exec(op);

    for (const auto &b : program.buffers) {
      if (!b.isOutput)
        continue;
      const BufferState &st = buffers.at(b.id);
      TensorValue tv;
      tv.shape = b.shape;
      tv.type = b.elementType;
      tv.data = st.data;
      result.outputs.emplace(b.id, std::move(tv));
    }
    return std::move(result);
  }

private:
  const Program &program;
  const InterpOptions &options;
  InterpResult result;
  std::unordered_map<std::string, BufferState> buffers;
  std::unordered_map<std::string, int64_t> ivEnv;
  std::unordered_map<std::string, Value> valueEnv;
  std::vector<PendingCopy> pendingCopies;
  std::vector<std::string> pendingTags;
  std::vector<ConflictCtx> conflictStack;

  [[noreturn]] void fail(const std::string &msg) {
    std::ostringstream os;
    os << msg << " [ivs:";
    std::map<std::string, int64_t> sorted(ivEnv.begin(), ivEnv.end());
    for (const auto &[k, v] : sorted)
      os << " " << k << "=" << v;
    os << "]";
    throw InterpError(os.str());
  }

  std::vector<int64_t> mapDims(const std::vector<std::string> &operands) {
    std::vector<int64_t> dims;
    dims.reserve(operands.size());
    for (const auto &name : operands) {
      auto it = ivEnv.find(name);
      if (it == ivEnv.end())
        fail("unbound iv " + name);
      dims.push_back(it->second);
    }
    return dims;
  }

  BufferState &bufferState(const std::string &id) {
    auto it = buffers.find(id);
    if (it == buffers.end())
      fail("unknown buffer " + id);
    return it->second;
  }

  int64_t flatIndex(const BufferState &st, std::span<const int64_t> idx,
                    const std::string &bufId) {
    const auto &shape = st.decl->shape;
    if (idx.size() != shape.size())
      fail("rank mismatch on access to " + bufId);
    int64_t flat = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= shape[i]) {
        std::ostringstream os;
        os << "out-of-bounds access to " << bufId << " at [";
        for (size_t j = 0; j < idx.size(); ++j)
          os << (j ? ", " : "") << idx[j];
        os << "]";
        fail(os.str());
      }
      flat += idx[i] * st.strides[i];
    }
    return flat;
  }

  void countAccess(const std::string &bufId, const BufferState &st, bool isStore,
                   int64_t elements) {
    int width = elementWidthBytes(st.decl->elementType);
    auto &sc = result.metrics.space(st.decl->space);
    auto &bc = result.metrics.perBuffer[bufId];
    if (isStore) {
      sc.stores += elements;
      sc.storeBytes += elements * width;
      bc.stores += elements;
      bc.storeBytes += elements * width;
    } else {
      sc.loads += elements;
      sc.loadBytes += elements * width;
      bc.loads += elements;
      bc.loadBytes += elements * width;
    }
  }

  void checkPendingRead(const std::string &bufId, std::span<const int64_t> idx) {
    for (const auto &pc : pendingCopies)
      if (pc.op->buffer == bufId && !pc.dstBox.empty && pc.dstBox.contains(idx))
        fail("use-before-await on async-copied region of " + bufId);
  }

  double loadScalar(const Op &op) {
    BufferState &st = bufferState(op.buffer);
    if (!st.live)
      fail("access to dead buffer " + op.buffer);
    auto idx = op.access.eval(mapDims(op.accessOperands));
    checkPendingRead(op.buffer, idx);
    int64_t flat = flatIndex(st, idx, op.buffer);
    if (!st.written[flat] && st.decl->space == MemorySpace::Register)
      fail("read of register-space value before write in " + op.buffer);
    countAccess(op.buffer, st, false, 1);
    if (op.buffer == options.traceBuffer)
      result.trace.push_back(flat);
    return st.data[flat];
  }

  void storeScalar(const Op &op, double v) {
    BufferState &st = bufferState(op.buffer);
    if (!st.live)
      fail("access to dead buffer " + op.buffer);
    auto idx = op.access.eval(mapDims(op.accessOperands));
    int64_t flat = flatIndex(st, idx, op.buffer);
    st.data[flat] = roundToType(v, st.decl->elementType);
    st.written[flat] = 1;
    countAccess(op.buffer, st, true, 1);
    if (op.buffer == options.traceBuffer)
      result.trace.push_back(flat);
    noteConflictWrite(op.buffer, flat);
  }

  void noteConflictWrite(const std::string &bufId, int64_t flat) {
    if (conflictStack.empty())
      return;
    int64_t key = static_cast<int64_t>(std::hash<std::string>{}(bufId)) ^
                  (flat * 0x9e3779b97f4a7c15ll);
    for (auto &ctx : conflictStack) {
      auto [it, inserted] = ctx.writerIteration.emplace(key, ctx.currentIteration);
      if (!inserted && it->second != ctx.currentIteration)
        fail("parallel write-write conflict on " + bufId);
    }
  }

  Value &getValue(const std::string &name) {
    auto it = valueEnv.find(name);
    if (it == valueEnv.end()) {
      auto iv = ivEnv.find(name);
      if (iv != ivEnv.end()) {
        static thread_local Value tmp;
        tmp.scalar = static_cast<double>(iv->second);
        tmp.fragment.reset();
        return tmp;
      }
      fail("use of undefined value " + name);
    }
    return it->second;
  }

  double scalarOperand(const Operand &o) {
    if (o.isImm)
      return o.imm;
    Value &v = getValue(o.value);
    if (v.fragment)
      fail("fragment value where scalar expected: " + o.value);
    return v.scalar;
  }

  std::shared_ptr<Fragment> fragmentOperand(const Operand &o) {
    if (o.isImm)
      fail("immediate where fragment expected");
    Value &v = getValue(o.value);
    if (!v.fragment)
      fail("scalar value where fragment expected: " + o.value);
    return v.fragment;
  }

  void exec(const Op &op) {
    switch (op.kind) {
    case OpKind::For:
      execFor(op);
      break;
    case OpKind::Parallel:
      execParallel(op);
      break;
    case OpKind::Load:
      valueEnv[op.result] = Value{loadScalar(op), nullptr};
      break;
    case OpKind::Store:
      storeScalar(op, scalarOperand(op.operands[0]));
      break;
    case OpKind::Arith:
      execArith(op);
      break;
    case OpKind::MmaLoad:
      execMmaLoad(op);
      break;
    case OpKind::MmaCompute:
      execMmaCompute(op);
      break;
    case OpKind::MmaStore:
      execMmaStore(op);
      break;
    case OpKind::AsyncCopy:
      execAsyncCopy(op);
      break;
    case OpKind::AwaitCopies:
      execAwait(op);
      break;
    case OpKind::Alloc: {
      BufferState &st = bufferState(op.buffer);
      st.live = true;
      std::fill(st.written.begin(), st.written.end(), 0);
      break;
    }
    case OpKind::Dealloc: {
      BufferState &st = bufferState(op.buffer);
      st.live = false;
      break;
    }
    }
  }

  void execFor(const Op &op) {
    auto dims = mapDims(op.mapOperands);
    int64_t lb = op.lower.evalMax(dims);
    int64_t ub = op.upper.evalMin(dims);
    for (int64_t v = lb; v < ub; v += op.step) {
      ivEnv[op.iv] = v;
      for (const Op &child : op.body)
        exec(child);
    }
    ivEnv.erase(op.iv);
  }

  void execParallel(const Op &op) {
    auto dims = mapDims(op.mapOperands);
    size_t n = op.ivs.size();
    std::vector<int64_t> lbs(n), ubs(n);
    int64_t total = 1;
    for (size_t i = 0; i < n; ++i) {
      lbs[i] = op.lowers[i].evalMax(dims);
      ubs[i] = op.uppers[i].evalMin(dims);
      total *= std::max<int64_t>(0, ubs[i] - lbs[i]);
    }
    bool track = options.checkParallelConflicts;
    if (track) {
      conflictStack.push_back({});
      conflictStack.back().full = total <= 10000;
    }
    std::vector<int64_t> idx(lbs);
    int64_t iteration = 0;
    std::function<void(size_t)> loop = [&](size_t d) {
      if (d == n) {
        if (track) {
          // Sample iterations beyond the full-check budget.
          conflictStack.back().currentIteration = iteration;
          bool sampled = conflictStack.back().full || (iteration % 17 == 0);
          if (!sampled) {
            ConflictCtx saved = std::move(conflictStack.back());
            conflictStack.pop_back();
            for (const Op &child : op.body)
              exec(child);
            conflictStack.push_back(std::move(saved));
            ++iteration;
            return;
          }
        }
        for (const Op &child : op.body)
          exec(child);
        ++iteration;
        return;
      }
      for (int64_t v = lbs[d]; v < ubs[d]; ++v) {
        idx[d] = v;
        ivEnv[op.ivs[d]] = v;
        loop(d + 1);
      }
      ivEnv.erase(op.ivs[d]);
    };
    loop(0);
    if (track)
      conflictStack.pop_back();
  }

  void execArith(const Op &op) {
    double r = 0;
    auto a = [&](int i) { return scalarOperand(op.operands[i]); };
    switch (op.arith) {
    case ArithKind::Add:
      r = a(0) + a(1);
      break;
    case ArithKind::Mul:
      r = a(0) * a(1);
      break;
    case ArithKind::Sub:
      r = a(0) - a(1);
      break;
    case ArithKind::Div:
      r = a(0) / a(1);
      break;
    case ArithKind::Max:
      r = std::max(a(0), a(1));
      break;
    case ArithKind::Exp:
      r = std::exp(a(0));
      break;
    case ArithKind::Negate:
      r = -a(0);
      break;
    case ArithKind::Cast:
      r = op.castType == ElementType::I8 || op.castType == ElementType::I32
              ? roundToType(std::trunc(a(0)), op.castType)
              : roundToType(a(0), op.castType);
      break;
    case ArithKind::Fma:
      r = a(0) * a(1) + a(2);
      break;
    case ArithKind::Select:
      r = a(0) != 0 ? a(1) : a(2);
      break;
    case ArithKind::CmpEq:
      r = a(0) == a(1) ? 1.0 : 0.0;
      break;
    case ArithKind::CmpLt:
      r = a(0) < a(1) ? 1.0 : 0.0;
      break;
    case ArithKind::CmpLe:
      r = a(0) <= a(1) ? 1.0 : 0.0;
      break;
    case ArithKind::Quant: {
      double scaled = a(0) / op.scale;
      double rounded = std::round(scaled); // round half away from zero
      r = std::clamp(rounded, -128.0, 127.0);
      break;
    }
    case ArithKind::Dequant:
      r = a(0) * op.scale;
      break;
    }
    result.metrics.flops += arithFlops(op.arith);
    if (op.hasAttr("correction"))
      ++result.metrics.correctionOps;
    valueEnv[op.result] = Value{r, nullptr};
  }

  void execMmaLoad(const Op &op) {
    BufferState &st = bufferState(op.buffer);
    if (!st.live)
      fail("access to dead buffer " + op.buffer);
    if (st.decl->shape.size() != 2)
      fail("mma_load requires a rank-2 buffer: " + op.buffer);
    auto base = op.access.eval(mapDims(op.accessOperands));
    auto frag = std::make_shared<Fragment>();
    frag->type = st.decl->elementType;
    for (int64_t r = 0; r < 16; ++r)
      for (int64_t c = 0; c < 16; ++c) {
        int64_t idx[2] = {base[0] + r, base[1] + c};
        checkPendingRead(op.buffer, idx);
        int64_t flat = flatIndex(st, idx, op.buffer);
        frag->data[r * 16 + c] = st.data[flat];
      }
    countAccess(op.buffer, st, false, 256);
    ++result.metrics.fragmentLoads;
    valueEnv[op.result] = Value{0, frag};
  }

  void execMmaCompute(const Op &op) {
    auto a = fragmentOperand(op.operands[0]);
    auto b = fragmentOperand(op.operands[1]);
    auto c = fragmentOperand(op.operands[2]);
    auto out = std::make_shared<Fragment>();
    out->type = c->type;
    for (int r = 0; r < 16; ++r)
      for (int cc = 0; cc < 16; ++cc) {
        double acc = c->data[r * 16 + cc];
        for (int k = 0; k < 16; ++k)
          acc += a->data[r * 16 + k] * b->data[k * 16 + cc];
        out->data[r * 16 + cc] = roundToType(acc, out->type);
      }
    ++result.metrics.fragmentComputes;
    valueEnv[op.result] = Value{0, out};
  }

  void execMmaStore(const Op &op) {
    auto frag = fragmentOperand(op.operands[0]);
    BufferState &st = bufferState(op.buffer);
    if (!st.live)
      fail("access to dead buffer " + op.buffer);
    if (st.decl->shape.size() != 2)
      fail("mma_store requires a rank-2 buffer: " + op.buffer);
    auto base = op.access.eval(mapDims(op.accessOperands));
    for (int64_t r = 0; r < 16; ++r)
      for (int64_t c = 0; c < 16; ++c) {
        int64_t idx[2] = {base[0] + r, base[1] + c};
        int64_t flat = flatIndex(st, idx, op.buffer);
        st.data[flat] = roundToType(frag->data[r * 16 + c], st.decl->elementType);
        st.written[flat] = 1;
        noteConflictWrite(op.buffer, flat);
      }
    countAccess(op.buffer, st, true, 256);
    ++result.metrics.fragmentStores;
  }

  /// Computes the box of dst indices the copy body will write, by walking the
  /// loop structure and evaluating store access maps only.
  void collectDstBox(const Op &op, const std::string &dst, PendingBox &box) {
    switch (op.kind) {
    case OpKind::For: {
      auto dims = mapDims(op.mapOperands);
      int64_t lb = op.lower.evalMax(dims);
      int64_t ub = op.upper.evalMin(dims);
      for (int64_t v = lb; v < ub; v += op.step) {
        ivEnv[op.iv] = v;
        for (const Op &child : op.body)
          collectDstBox(child, dst, box);
      }
      ivEnv.erase(op.iv);
      break;
    }
    case OpKind::Store:
      if (op.buffer == dst) {
        auto idx = op.access.eval(mapDims(op.accessOperands));
        if (box.empty) {
          box.lo.assign(idx.begin(), idx.end());
          box.hi.assign(idx.begin(), idx.end());
          box.empty = false;
        } else {
          for (size_t i = 0; i < idx.size(); ++i) {
            box.lo[i] = std::min(box.lo[i], idx[i]);
            box.hi[i] = std::max(box.hi[i], idx[i]);
          }
        }
      }
      break;
    default:
      break;
    }
  }

  void execAsyncCopy(const Op &op) {
    PendingCopy pc;
    pc.op = &op;
    pc.ivSnapshot = ivEnv;
    for (const Op &child : op.body)
      collectDstBox(child, op.buffer, pc.dstBox);
    pendingCopies.push_back(std::move(pc));
  }

  void execAwait(const Op &op) {
    // Completion-at-wait: run every pending copy with this tag now, in issue
    // order, under its captured iv environment.
    std::vector<PendingCopy> ready;
    for (auto it = pendingCopies.begin(); it != pendingCopies.end();) {
      if (it->op->tag == op.tag) {
        ready.push_back(std::move(*it));
        it = pendingCopies.erase(it);
      } else {
        ++it;
      }
    }
    for (auto &pc : ready) {
      auto savedIvs = ivEnv;
      ivEnv = pc.ivSnapshot;
      for (const Op &child : pc.op->body)
        exec(child);
      ivEnv = std::move(savedIvs);
    }
  }
};

} // namespace

InterpResult interpret(const Program &p,
                       const std::map<std::string, TensorValue> &inputs,
                       const InterpOptions &options,
                       const std::string &funcName) {
  Interpreter interp(p, options);
  return interp.run(inputs, funcName);
}

ComparisonReport compareTensors(const TensorValue &a, const TensorValue &b,
                                TolProfile profile) {
  if (a.shape != b.shape)
    throw InterpError("compare: shape mismatch");
  ComparisonReport rep;
  rep.passed = true;
  double tol = tolProfileValue(profile);
  for (int64_t i = 0; i < a.numElements(); ++i) {
    double av = a.data[i], bv = b.data[i];
    double abs = std::fabs(av - bv);
    double denom = std::max({std::fabs(av), std::fabs(bv), 1.0});
    double rel = abs / denom;
    if (abs > rep.maxAbsErr) {
      rep.maxAbsErr = abs;
    }
    if (rel > rep.maxRelErr) {
      rep.maxRelErr = rel;
      rep.worstIndex = i;
    }
    bool ok = profile == TolProfile::Int ? (abs == 0.0) : (abs <= tol * denom);
    if (!ok && rep.passed) {
      rep.passed = false;
      std::ostringstream os;
      os << "mismatch at flat index " << i << ": " << av << " vs " << bv;
      rep.message = os.str();
    }
    if (!std::isfinite(av) || !std::isfinite(bv)) {
      rep.passed = false;
      rep.message = "non-finite value at flat index " + std::to_string(i);
    }
  }
  return rep;
}

ComparisonReport compareOutputs(const std::map<std::string, TensorValue> &a,
                                const std::map<std::string, TensorValue> &b,
                                TolProfile profile) {
  ComparisonReport rep;
  rep.passed = true;
  if (a.size() != b.size())
    throw InterpError("compare: output sets differ in size");
  for (const auto &[name, ta] : a) {
    auto it = b.find(name);
    if (it == b.end())
      throw InterpError("compare: missing output " + name);
    ComparisonReport r = compareTensors(ta, it->second, profile);
    rep.maxAbsErr = std::max(rep.maxAbsErr, r.maxAbsErr);
    if (r.maxRelErr > rep.maxRelErr) {
      rep.maxRelErr = r.maxRelErr;
      rep.worstIndex = r.worstIndex;
    }
    if (!r.passed && rep.passed) {
      rep.passed = false;
      rep.message = name + ": " + r.message;
    }
  }
  return rep;
}

namespace {

json countersJson(const SpaceCounters &c) {
  return json{{"loads", c.loads},
              {"stores", c.stores},
              {"load_bytes", c.loadBytes},
              {"store_bytes", c.storeBytes}};
}

json metricsJson(const Metrics &m) {
  json per = json::object();
  for (const auto &[id, c] : m.perBuffer) {
    per[id] = json{{"loads", c.loads},
                   {"stores", c.stores},
                   {"load_bytes", c.loadBytes},
                   {"store_bytes", c.storeBytes},
                   {"space", memorySpaceName(c.space)}};
  }
  return json{{"global", countersJson(m.global)},
              {"shared", countersJson(m.shared)},
              {"register", countersJson(m.registers)},
              {"flops", m.flops},
              {"fragment_ops",
               json{{"load", m.fragmentLoads},
                    {"compute", m.fragmentComputes},
                    {"store", m.fragmentStores}}},
              {"nest_count", m.nestCount},
              {"correction_ops", m.correctionOps},
              {"per_buffer", per}};
}

} // namespace

std::string Metrics::toJson() const { return metricsJson(*this).dump(2); }

std::string diffMetrics(const Metrics &before, const Metrics &after) {
  json b = metricsJson(before);
  json a = metricsJson(after);
  json delta;
  for (const char *space : {"global", "shared", "register"}) {
    json d;
    for (const char *key : {"loads", "stores", "load_bytes", "store_bytes"}) {
      int64_t bv = b[space][key], av = a[space][key];
      d[key] = json{{"before", bv},
                    {"after", av},
                    {"delta", av - bv},
                    {"ratio", bv == 0 ? (av == 0 ? 1.0 : -1.0)
                                      : static_cast<double>(av) / bv}};
    }
    delta[space] = d;
  }
  for (const char *key : {"flops", "nest_count", "correction_ops"}) {
    int64_t bv = b[key], av = a[key];
    delta[key] = json{{"before", bv}, {"after", av}, {"delta", av - bv}};
  }
  return delta.dump(2);
}

namespace {

uint64_t splitmix64(uint64_t &state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

} // namespace

TensorValue makeRandomTensor(const BufferDecl &decl, uint64_t seed, double lo,
                             double hi) {
  TensorValue tv;
  tv.shape = decl.shape;
  tv.type = decl.elementType;
  tv.data.resize(decl.numElements());
  uint64_t state = seed ^ std::hash<std::string>{}(decl.id);
  for (auto &v : tv.data) {
    uint64_t bits = splitmix64(state);
    if (isIntType(decl.elementType)) {
      v = static_cast<double>(static_cast<int64_t>(bits % 9) - 4);
    } else {
      double u = static_cast<double>(bits >> 11) * (1.0 / 9007199254740992.0);
      v = lo + u * (hi - lo);
    }
  }
  return tv;
}

std::map<std::string, TensorValue>
makeRandomInputs(const Program &p, uint64_t seed, double lo, double hi) {
  std::map<std::string, TensorValue> inputs;
  for (const auto &b : p.buffers)
    if (b.isInput)
      inputs.emplace(b.id, makeRandomTensor(b, seed, lo, hi));
  return inputs;
}

} // namespace af
