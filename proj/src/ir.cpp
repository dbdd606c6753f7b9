//===- ir.cpp - Region-based affine loop-nest IR ---------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/ir.h"

#include <algorithm>
#include <cassert>
#include <set>

namespace af {

int elementWidthBytes(ElementType t) {
  switch (t) {
  case ElementType::F32:
    return 4;
  case ElementType::F16:
    return 2;
  case ElementType::I8:
    return 1;
  case ElementType::I32:
    return 4;
  }
  return 4;
}

const char *elementTypeName(ElementType t) {
  switch (t) {
  case ElementType::F32:
    return "f32";
  case ElementType::F16:
    return "f16";
  case ElementType::I8:
    return "i8";
  case ElementType::I32:
    return "i32";
  }
  return "f32";
}

std::optional<ElementType> parseElementType(const std::string &s) {
  if (s == "f32")
    return ElementType::F32;
  if (s == "f16")
    return ElementType::F16;
  if (s == "i8")
    return ElementType::I8;
  if (s == "i32")
    return ElementType::I32;
  return std::nullopt;
}

bool isIntType(ElementType t) {
  return t == ElementType::I8 || t == ElementType::I32;
}

const char *memorySpaceName(MemorySpace s) {
  switch (s) {
  case MemorySpace::Global:
    return "global";
  case MemorySpace::Shared:
    return "shared";
  case MemorySpace::Register:
    return "register";
  }
  return "global";
}

std::optional<MemorySpace> parseMemorySpace(const std::string &s) {
  if (s == "global")
    return MemorySpace::Global;
  if (s == "shared")
    return MemorySpace::Shared;
  if (s == "register")
    return MemorySpace::Register;
  return std::nullopt;
}

std::vector<int64_t> BufferDecl::strides() const {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[i] = s[i + 1] * shape[i + 1];
  return s;
}

const char *nestKindName(NestKind k) {
  switch (k) {
  case NestKind::Pointwise:
    return "pointwise";
  case NestKind::Broadcast:
    return "broadcast";
  case NestKind::Stencil:
    return "stencil";
  case NestKind::Reduction:
    return "reduction";
  case NestKind::Matmul:
    return "matmul";
  case NestKind::Misc:
    return "misc";
  }
  return "misc";
}

std::optional<NestKind> parseNestKind(const std::string &s) {
  for (NestKind k : {NestKind::Pointwise, NestKind::Broadcast, NestKind::Stencil,
                     NestKind::Reduction, NestKind::Matmul, NestKind::Misc})
    if (s == nestKindName(k))
      return k;
  return std::nullopt;
}

const char *arithKindName(ArithKind k) {
  switch (k) {
  case ArithKind::Add:
    return "add";
  case ArithKind::Mul:
    return "mul";
  case ArithKind::Sub:
    return "sub";
  case ArithKind::Div:
    return "div";
  case ArithKind::Max:
    return "max";
  case ArithKind::Exp:
    return "exp";
  case ArithKind::Negate:
    return "negate";
  case ArithKind::Cast:
    return "cast";
  case ArithKind::Fma:
    return "fma";
  case ArithKind::Select:
    return "select";
  case ArithKind::CmpEq:
    return "cmp eq";
  case ArithKind::CmpLt:
    return "cmp lt";
  case ArithKind::CmpLe:
    return "cmp le";
  case ArithKind::Quant:
    return "quant";
  case ArithKind::Dequant:
    return "dequant";
  }
  return "add";
}

std::optional<ArithKind> parseArithKind(const std::string &s) {
  for (ArithKind k :
       {ArithKind::Add, ArithKind::Mul, ArithKind::Sub, ArithKind::Div,
        ArithKind::Max, ArithKind::Exp, ArithKind::Negate, ArithKind::Cast,
        ArithKind::Fma, ArithKind::Select, ArithKind::Quant, ArithKind::Dequant})
    if (s == arithKindName(k))
      return k;
  return std::nullopt;
}

int arithArity(ArithKind k) {
  switch (k) {
  case ArithKind::Exp:
  case ArithKind::Negate:
  case ArithKind::Cast:
  case ArithKind::Quant:
  case ArithKind::Dequant:
    return 1;
  case ArithKind::Fma:
  case ArithKind::Select:
    return 3;
  default:
    return 2;
  }
}

int arithFlops(ArithKind k) {
  switch (k) {
  case ArithKind::Fma:
    return 2;
  case ArithKind::Select:
  case ArithKind::CmpEq:
  case ArithKind::CmpLt:
  case ArithKind::CmpLe:
  case ArithKind::Cast:
    return 0;
  default:
    return 1;
  }
}

std::optional<std::string> Op::strAttr(const std::string &key) const {
  auto it = attrs.find(key);
  if (it == attrs.end() || (it->second.kind != AttrValue::Kind::Str &&
                            it->second.kind != AttrValue::Kind::Sym))
    return std::nullopt;
  return it->second.s;
}

std::optional<NestKind> Op::kindAttr() const {
  auto s = strAttr(attr::kKind);
  if (!s)
    return std::nullopt;
  return parseNestKind(*s);
}

void Op::setKindAttr(NestKind k) {
  attrs[attr::kKind] = AttrValue::str(nestKindName(k));
}

Op makeFor(std::string iv, AffineMap lower, AffineMap upper, int64_t step,
           std::vector<std::string> mapOperands) {
  Op op;
  op.kind = OpKind::For;
  op.iv = std::move(iv);
  op.lower = std::move(lower);
  op.upper = std::move(upper);
  op.step = step;
  op.mapOperands = std::move(mapOperands);
  return op;
}

Op makeForConst(std::string iv, int64_t lower, int64_t upper, int64_t step) {
  return makeFor(std::move(iv), AffineMap::constantMap(lower),
                 AffineMap::constantMap(upper), step);
}

Op makeLoad(std::string result, std::string buffer, AffineMap access,
            std::vector<std::string> accessOperands) {
  Op op;
  op.kind = OpKind::Load;
  op.result = std::move(result);
  op.buffer = std::move(buffer);
  op.access = std::move(access);
  op.accessOperands = std::move(accessOperands);
  return op;
}

Op makeStore(Operand value, std::string buffer, AffineMap access,
             std::vector<std::string> accessOperands) {
  Op op;
  op.kind = OpKind::Store;
  op.operands = {std::move(value)};
  op.buffer = std::move(buffer);
  op.access = std::move(access);
  op.accessOperands = std::move(accessOperands);
  return op;
}

Op makeArith(std::string result, ArithKind kind, std::vector<Operand> operands) {
  Op op;
  op.kind = OpKind::Arith;
  op.result = std::move(result);
  op.arith = kind;
  op.operands = std::move(operands);
  return op;
}

Op makeAlloc(std::string buffer) {
  Op op;
  op.kind = OpKind::Alloc;
  op.buffer = std::move(buffer);
  return op;
}

Op makeDealloc(std::string buffer) {
  Op op;
  op.kind = OpKind::Dealloc;
  op.buffer = std::move(buffer);
  return op;
}

const BufferDecl *Program::findBuffer(const std::string &id) const {
  for (const auto &b : buffers)
    if (b.id == id)
      return &b;
  return nullptr;
}

BufferDecl *Program::findBuffer(const std::string &id) {
  for (auto &b : buffers)
    if (b.id == id)
      return &b;
  return nullptr;
}

const Function *Program::findFunction(const std::string &name) const {
  for (const auto &f : functions)
    if (f.name == name)
      return &f;
  return nullptr;
}

Function *Program::findFunction(const std::string &name) {
  for (auto &f : functions)
    if (f.name == name)
      return &f;
  return nullptr;
}

void Program::eraseBuffer(const std::string &id) {
  buffers.erase(std::remove_if(buffers.begin(), buffers.end(),
                               [&](const BufferDecl &b) { return b.id == id; }),
                buffers.end());
}

void walkOps(const Op &op, const std::function<void(const Op &)> &fn) {
  fn(op);
  for (const Op &child : op.body)
    walkOps(child, fn);
}

void walkOps(Op &op, const std::function<void(Op &)> &fn) {
  fn(op);
  for (Op &child : op.body)
    walkOps(child, fn);
}

void walkOps(const std::vector<Op> &ops, const std::function<void(const Op &)> &fn) {
  for (const Op &op : ops)
    walkOps(op, fn);
}

void walkOps(std::vector<Op> &ops, const std::function<void(Op &)> &fn) {
  for (Op &op : ops)
    walkOps(op, fn);
}

void walkWithIvs(
    const Op &op, std::vector<std::string> &stack,
    const std::function<void(const Op &, const std::vector<std::string> &)> &fn) {
  fn(op, stack);
  size_t pushed = 0;
  if (op.kind == OpKind::For) {
    stack.push_back(op.iv);
    pushed = 1;
  } else if (op.kind == OpKind::Parallel) {
    for (const auto &iv : op.ivs)
      stack.push_back(iv);
    pushed = op.ivs.size();
  }
  for (const Op &child : op.body)
    walkWithIvs(child, stack, fn);
  stack.resize(stack.size() - pushed);
}

std::vector<std::string> buffersRead(const Op &op) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  walkOps(op, [&](const Op &o) {
    std::string id;
    if (o.kind == OpKind::Load || o.kind == OpKind::MmaLoad)
      id = o.buffer;
    else if (o.kind == OpKind::AsyncCopy)
      id = o.srcBuffer;
    if (!id.empty() && seen.insert(id).second)
      out.push_back(id);
  });
  return out;
}

std::vector<std::string> buffersWritten(const Op &op) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  walkOps(op, [&](const Op &o) {
    std::string id;
    if (o.kind == OpKind::Store || o.kind == OpKind::MmaStore ||
        o.kind == OpKind::AsyncCopy)
      id = o.buffer;
    if (!id.empty() && seen.insert(id).second)
      out.push_back(id);
  });
  return out;
}

bool readsBuffer(const Op &op, const std::string &id) {
  auto v = buffersRead(op);
  return std::find(v.begin(), v.end(), id) != v.end();
}

bool writesBuffer(const Op &op, const std::string &id) {
  auto v = buffersWritten(op);
  return std::find(v.begin(), v.end(), id) != v.end();
}

namespace {

void collectDefinedNames(const Op &op, std::set<std::string> &names) {
  walkOps(op, [&](const Op &o) {
    if (!o.result.empty())
      names.insert(o.result);
    if (o.kind == OpKind::For)
      names.insert(o.iv);
    for (const auto &iv : o.ivs)
      names.insert(iv);
  });
}

void applyRename(Op &op, const std::map<std::string, std::string> &map) {
  auto fix = [&](std::string &name) {
    auto it = map.find(name);
    if (it != map.end())
      name = it->second;
  };
  walkOps(op, [&](Op &o) {
    fix(o.iv);
    for (auto &iv : o.ivs)
      fix(iv);
    fix(o.result);
    for (auto &operand : o.operands)
      if (!operand.isImm)
        fix(operand.value);
    for (auto &name : o.mapOperands)
      fix(name);
    for (auto &name : o.accessOperands)
      fix(name);
  });
}

} // namespace

void uniquifyNames(Op &op, const std::string &suffix) {
  std::set<std::string> defined;
  collectDefinedNames(op, defined);
  std::map<std::string, std::string> renames;
  for (const auto &n : defined)
    renames[n] = n + suffix;
  applyRename(op, renames);
}

void uniquifyNames(std::vector<Op> &ops, const std::string &suffix) {
  std::set<std::string> defined;
  for (Op &op : ops)
    collectDefinedNames(op, defined);
  std::map<std::string, std::string> renames;
  for (const auto &n : defined)
    renames[n] = n + suffix;
  for (Op &op : ops)
    applyRename(op, renames);
}

NameGen::NameGen(const Program &p) {
  for (const auto &b : p.buffers)
    taken.push_back(b.id);
  for (const auto &f : p.functions)
    for (const Op &op : f.body)
      walkOps(op, [&](const Op &o) {
        if (!o.result.empty())
          taken.push_back(o.result);
        if (!o.iv.empty())
          taken.push_back(o.iv);
        for (const auto &iv : o.ivs)
          taken.push_back(iv);
      });
}

bool NameGen::isTaken(const std::string &s) const {
  return std::find(taken.begin(), taken.end(), s) != taken.end();
}

std::string NameGen::fresh(const std::string &base) {
  int &n = counters[base];
  std::string candidate;
  do {
    candidate = "%" + base + std::to_string(n++);
  } while (isTaken(candidate));
  taken.push_back(candidate);
  return candidate;
}

void renameIvReferences(Op &op, const std::map<std::string, std::string> &renames) {
  applyRename(op, renames);
}

void compactAccess(AffineMap &map, std::vector<std::string> &operands) {
  std::vector<std::string> newOperands;
  std::vector<AffineExpr> remap(operands.size());
  for (size_t i = 0; i < operands.size(); ++i) {
    bool used = false;
    for (const auto &r : map.results)
      if (!r.isNull() && r.usesDim(static_cast<unsigned>(i)))
        used = true;
    if (used) {
      remap[i] = AffineExpr::dim(static_cast<unsigned>(newOperands.size()));
      newOperands.push_back(operands[i]);
    }
  }
  map = map.replaceDims(remap);
  map.numDims = static_cast<unsigned>(newOperands.size());
  operands = std::move(newOperands);
}

void substituteIvConstant(Op &op, const std::string &iv, int64_t value) {
  walkOps(op, [&](Op &o) {
    auto substInMap = [&](AffineMap &map, std::vector<std::string> &operands) {
      std::vector<AffineExpr> repl(operands.size());
      bool any = false;
      for (size_t i = 0; i < operands.size(); ++i)
        if (operands[i] == iv) {
          repl[i] = AffineExpr::constant(value);
          any = true;
        }
      if (!any)
        return;
      map = map.replaceDims(repl).canonicalize();
      compactAccess(map, operands);
    };
    substInMap(o.access, o.accessOperands);
    if (o.kind == OpKind::For || o.kind == OpKind::Parallel) {
      std::vector<AffineExpr> repl(o.mapOperands.size());
      bool any = false;
      for (size_t i = 0; i < o.mapOperands.size(); ++i)
        if (o.mapOperands[i] == iv) {
          repl[i] = AffineExpr::constant(value);
          any = true;
        }
      if (any) {
        o.lower = o.lower.replaceDims(repl).canonicalize();
        o.upper = o.upper.replaceDims(repl).canonicalize();
        for (auto &m : o.lowers)
          m = m.replaceDims(repl).canonicalize();
        for (auto &m : o.uppers)
          m = m.replaceDims(repl).canonicalize();
      }
    }
  });
}

void rebaseBufferAccesses(Op &op, const BufferRebase &rebase) {
  walkOps(op, [&](Op &o) {
    bool touches = (o.kind == OpKind::Load || o.kind == OpKind::Store ||
                    o.kind == OpKind::MmaLoad || o.kind == OpKind::MmaStore) &&
                   o.buffer == rebase.fromId;
    if (!touches)
      return;
    o.buffer = rebase.toId;
    if (rebase.offsets.empty())
      return;
    assert(o.access.results.size() == rebase.offsets.size());
    // Build offset expressions over this access's operand list.
    for (size_t d = 0; d < o.access.results.size(); ++d) {
      if (rebase.offsets[d].isNull())
        continue;
      // Re-index the offset expr (over offsetIvs) onto this op's operands.
      std::vector<AffineExpr> repl(rebase.offsetIvs.size());
      for (size_t i = 0; i < rebase.offsetIvs.size(); ++i) {
        auto it = std::find(o.accessOperands.begin(), o.accessOperands.end(),
                            rebase.offsetIvs[i]);
        if (it != o.accessOperands.end()) {
          repl[i] = AffineExpr::dim(
              static_cast<unsigned>(it - o.accessOperands.begin()));
        } else {
          o.accessOperands.push_back(rebase.offsetIvs[i]);
          unsigned idx = static_cast<unsigned>(o.accessOperands.size() - 1);
          o.access.numDims = idx + 1;
          repl[i] = AffineExpr::dim(idx);
        }
      }
      AffineExpr offset = rebase.offsets[d].replaceDims(repl);
      o.access.results[d] = (o.access.results[d] - offset).canonicalize();
    }
  });
}

int64_t constTripCount(const Op &loop) {
  assert(loop.kind == OpKind::For);
  if (!loop.lower.isSingleConstant() || !loop.upper.isSingleConstant())
    return -1;
  int64_t span = loop.upper.singleConstant() - loop.lower.singleConstant();
  if (span <= 0)
    return 0;
  return (span + loop.step - 1) / loop.step;
}

} // namespace af
