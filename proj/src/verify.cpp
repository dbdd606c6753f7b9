//===- verify.cpp - Program verifier -----------------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/verify.h"

#include <map>
#include <set>
#include <sstream>

namespace af {

std::string VerifyReport::str() const {
  std::ostringstream os;
  for (const auto &v : violations)
    os << v.message << " [" << v.site << "]\n";
  return os.str();
}

namespace {

enum class ValueKind { Scalar, Fragment };

class Verifier {
public:
  Verifier(const Program &p, VerifyReport &report) : program(p), report(report) {}

  void run() {
    for (const auto &b : program.buffers) {
      if (b.shape.empty())
        emit("buffer " + b.id + " has empty shape", b.id);
      for (int64_t d : b.shape)
        if (d <= 0)
          emit("buffer " + b.id + " has non-positive extent", b.id);
      if (b.space == MemorySpace::Register &&
          b.numElements() > program.target.registerElemsCap)
        emit("register-space buffer " + b.id + " exceeds element cap (" +
                 std::to_string(b.numElements()) + " > " +
                 std::to_string(program.target.registerElemsCap) + ")",
             b.id);
    }
    std::set<std::string> ids;
    for (const auto &b : program.buffers)
      if (!ids.insert(b.id).second)
        emit("duplicate buffer id " + b.id, b.id);
    for (const auto &f : program.functions)
      verifyFunction(f);
  }

private:
  const Program &program;
  VerifyReport &report;
  std::string fnName;

  // Per-function state.
  std::set<std::string> definedOnce;          // all def sites seen
  std::vector<std::set<std::string>> scopes;  // visible values per scope level
  std::vector<std::set<std::string>> ivScopes;
  std::map<std::string, ValueKind> valueKinds;
  std::set<std::string> asyncTags;
  std::map<std::string, std::set<std::string>> pendingByBuffer;

  void emit(const std::string &msg, const std::string &site) {
    report.violations.push_back({msg, fnName.empty() ? site : fnName + ": " + site});
  }

  bool inScope(const std::vector<std::set<std::string>> &stack,
               const std::string &name) const {
    for (const auto &s : stack)
      if (s.count(name))
        return true;
    return false;
  }

  void defineValue(const std::string &name, ValueKind kind, const std::string &site) {
    if (name.empty())
      return;
    if (!definedOnce.insert(name).second)
      emit("SSA violation: " + name + " defined more than once", site);
    scopes.back().insert(name);
    valueKinds[name] = kind;
  }

  void defineIv(const std::string &name, const std::string &site) {
    if (!definedOnce.insert(name).second)
      emit("SSA violation: iv " + name + " defined more than once", site);
    ivScopes.back().insert(name);
  }

  void checkOperand(const Operand &o, const std::string &site,
                    ValueKind expect = ValueKind::Scalar) {
    if (o.isImm)
      return;
    if (!inScope(scopes, o.value) && !inScope(ivScopes, o.value)) {
      emit("use of undefined value " + o.value, site);
      return;
    }
    auto it = valueKinds.find(o.value);
    ValueKind k = it == valueKinds.end() ? ValueKind::Scalar : it->second;
    if (k != expect)
      emit(std::string("operand ") + o.value + " has wrong value kind (" +
               (expect == ValueKind::Fragment ? "fragment" : "scalar") +
               " expected)",
           site);
  }

  void checkMapOperands(const std::vector<std::string> &operands,
                        const std::string &site) {
    for (const auto &name : operands)
      if (!inScope(ivScopes, name))
        emit("map operand " + name + " is not an enclosing loop iv", site);
  }

  void checkMapStructure(const AffineMap &map,
                         const std::vector<std::string> &operands,
                         const std::string &site) {
    if (map.numDims != operands.size())
      emit("map dim count does not match operand count", site);
    for (const auto &r : map.results) {
      if (r.isNull()) {
        emit("null affine expr in map", site);
        continue;
      }
      r.walk([&](const AffineExpr &e) {
        if (e.kind() == AffineExpr::Kind::Dim && e.index() >= operands.size())
          emit("affine expr references dim out of range", site);
        if ((e.kind() == AffineExpr::Kind::FloorDiv ||
             e.kind() == AffineExpr::Kind::Mod) &&
            e.rhsConstant() <= 0)
          emit("non-positive divisor", site);
      });
    }
  }

  void verifyFunction(const Function &f) {
    fnName = "@" + f.name;
    definedOnce.clear();
    valueKinds.clear();
    asyncTags.clear();
    pendingByBuffer.clear();
    scopes.assign(1, {});
    ivScopes.assign(1, {});
    // Collect all async tags for the await-without-copy check.
    std::set<std::string> awaitTags;
    walkOps(f.body, [&](const Op &op) {
      if (op.kind == OpKind::AsyncCopy)
        asyncTags.insert(op.tag);
      if (op.kind == OpKind::AwaitCopies)
        awaitTags.insert(op.tag);
    });
    for (const auto &tag : awaitTags)
      if (!asyncTags.count(tag))
        emit("await_copies \"" + tag + "\" with no async copy", "await");
    verifyBlock(f.body);
  }

  void verifyBlock(const std::vector<Op> &block) {
    // Alloc/dealloc matching within this block.
    std::map<std::string, int> allocAt;
    for (size_t i = 0; i < block.size(); ++i) {
      const Op &op = block[i];
      if (op.kind == OpKind::Alloc) {
        if (allocAt.count(op.buffer))
          emit("buffer " + op.buffer + " allocated twice in block", op.buffer);
        allocAt[op.buffer] = static_cast<int>(i);
      } else if (op.kind == OpKind::Dealloc) {
        if (!allocAt.count(op.buffer)) {
          // Dealloc without alloc in this block: only valid if the buffer is
          // not alloc-managed at all (program-level storage has no dealloc).
          emit("dealloc of " + op.buffer + " without matching alloc in block",
               op.buffer);
        } else {
          allocAt.erase(op.buffer);
        }
      }
    }
    for (const auto &[buf, idx] : allocAt)
      emit("alloc of " + buf + " has no matching dealloc in block", buf);

    for (const Op &op : block)
      verifyOp(op);
  }

  void verifyOp(const Op &op) {
    switch (op.kind) {
    case OpKind::For: {
      std::string site = "for " + op.iv;
      if (op.step <= 0)
        emit("non-positive step", site);
      checkMapOperands(op.mapOperands, site);
      checkMapStructure(op.lower, op.mapOperands, site);
      checkMapStructure(op.upper, op.mapOperands, site);
      if (op.lower.results.empty() || op.upper.results.empty())
        emit("empty bound map", site);
      scopes.push_back({});
      ivScopes.push_back({});
      defineIv(op.iv, site);
      verifyBlock(op.body);
      scopes.pop_back();
      ivScopes.pop_back();
      break;
    }
    case OpKind::Parallel: {
      std::string site = "parallel";
      if (op.ivs.empty() || op.lowers.size() != op.ivs.size() ||
          op.uppers.size() != op.ivs.size())
        emit("parallel bound count does not match iv count", site);
      checkMapOperands(op.mapOperands, site);
      for (const auto &m : op.lowers)
        checkMapStructure(m, op.mapOperands, site);
      for (const auto &m : op.uppers)
        checkMapStructure(m, op.mapOperands, site);
      scopes.push_back({});
      ivScopes.push_back({});
      for (const auto &iv : op.ivs)
        defineIv(iv, site);
      verifyBlock(op.body);
      scopes.pop_back();
      ivScopes.pop_back();
      break;
    }
    case OpKind::Load:
    case OpKind::MmaLoad: {
      std::string site =
          (op.kind == OpKind::Load ? "load " : "mma_load ") + op.buffer;
      checkAccess(op, site);
      notePendingRead(op.buffer, site);
      defineValue(op.result,
                  op.kind == OpKind::MmaLoad ? ValueKind::Fragment
                                             : ValueKind::Scalar,
                  site);
      break;
    }
    case OpKind::Store:
    case OpKind::MmaStore: {
      std::string site =
          (op.kind == OpKind::Store ? "store " : "mma_store ") + op.buffer;
      checkAccess(op, site);
      checkOperand(op.operands.at(0), site,
                   op.kind == OpKind::MmaStore ? ValueKind::Fragment
                                               : ValueKind::Scalar);
      break;
    }
    case OpKind::Arith: {
      std::string site = op.result + " = " + arithKindName(op.arith);
      if (static_cast<int>(op.operands.size()) != arithArity(op.arith))
        emit("wrong operand count for " + std::string(arithKindName(op.arith)),
             site);
      for (const auto &o : op.operands)
        checkOperand(o, site);
      if ((op.arith == ArithKind::Quant || op.arith == ArithKind::Dequant) &&
          op.scale <= 0)
        emit("non-positive quant scale", site);
      defineValue(op.result, ValueKind::Scalar, site);
      break;
    }
    case OpKind::MmaCompute: {
      std::string site = op.result + " = mma_compute";
      if (op.operands.size() != 3)
        emit("mma_compute takes 3 operands", site);
      for (const auto &o : op.operands)
        checkOperand(o, site, ValueKind::Fragment);
      defineValue(op.result, ValueKind::Fragment, site);
      break;
    }
    case OpKind::AsyncCopy: {
      std::string site = "async_copy \"" + op.tag + "\"";
      if (!program.findBuffer(op.buffer))
        emit("unknown buffer " + op.buffer, site);
      if (!program.findBuffer(op.srcBuffer))
        emit("unknown buffer " + op.srcBuffer, site);
      scopes.push_back({});
      ivScopes.push_back({});
      verifyBlock(op.body);
      scopes.pop_back();
      ivScopes.pop_back();
      pendingByBuffer[op.buffer].insert(op.tag);
      break;
    }
    case OpKind::AwaitCopies: {
      for (auto &[buf, tags] : pendingByBuffer)
        tags.erase(op.tag);
      break;
    }
    case OpKind::Alloc:
    case OpKind::Dealloc: {
      std::string site =
          (op.kind == OpKind::Alloc ? "alloc " : "dealloc ") + op.buffer;
      if (!program.findBuffer(op.buffer))
        emit("unknown buffer " + op.buffer, site);
      break;
    }
    }
  }

  void notePendingRead(const std::string &buffer, const std::string &site) {
    auto it = pendingByBuffer.find(buffer);
    if (it != pendingByBuffer.end() && !it->second.empty())
      emit("unsynchronized async copy: load from " + buffer +
               " with pending tag \"" + *it->second.begin() + "\"",
           site);
  }

  void checkAccess(const Op &op, const std::string &site) {
    const BufferDecl *buf = program.findBuffer(op.buffer);
    if (!buf) {
      emit("unknown buffer " + op.buffer, site);
      return;
    }
    if (op.access.results.size() != buf->shape.size())
      emit("rank mismatch: access has " +
               std::to_string(op.access.results.size()) + " subscripts, buffer " +
               op.buffer + " has rank " + std::to_string(buf->shape.size()),
           site);
    checkMapOperands(op.accessOperands, site);
    checkMapStructure(op.access, op.accessOperands, site);
  }
};

} // namespace

VerifyReport verifyProgram(const Program &p) {
  VerifyReport report;
  Verifier(p, report).run();
  return report;
}

} // namespace af
