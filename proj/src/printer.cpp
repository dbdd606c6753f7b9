//===- printer.cpp - Textual IR emission ------------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/printer.h"

#include <charconv>
#include <sstream>

namespace af {

std::string formatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
    s += ".0";
  return s;
}

namespace {

std::string operandStr(const Operand &o) {
  if (!o.isImm)
    return o.value;
  if (o.immIsInt)
    return std::to_string(static_cast<int64_t>(o.imm));
  return formatDouble(o.imm);
}

std::string boundStr(const AffineMap &map, std::span<const std::string> dims,
                     bool isLower, bool bare = false) {
  std::ostringstream os;
  if (map.results.size() == 1) {
    if (bare)
      os << map.results[0].str(dims);
    else
      os << "(" << map.results[0].str(dims) << ")";
  } else {
    os << (isLower ? "max(" : "min(");
    for (size_t i = 0; i < map.results.size(); ++i) {
      if (i)
        os << ", ";
      os << map.results[i].str(dims);
    }
    os << ")";
  }
  return os.str();
}

std::string accessStr(const AffineMap &map, std::span<const std::string> dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < map.results.size(); ++i) {
    if (i)
      os << ", ";
    os << map.results[i].str(dims);
  }
  os << "]";
  return os.str();
}

std::string attrsStr(const Attrs &attrs) {
  if (attrs.empty())
    return "";
  std::ostringstream os;
  os << " attrs{";
  bool first = true;
  for (const auto &[key, value] : attrs) {
    if (!first)
      os << ", ";
    first = false;
    os << key;
    switch (value.kind) {
    case AttrValue::Kind::Flag:
      break;
    case AttrValue::Kind::Int:
      os << "=" << value.i;
      break;
    case AttrValue::Kind::Str:
      os << "=\"" << value.s << "\"";
      break;
    case AttrValue::Kind::Sym:
      os << "={" << value.s << "}";
      break;
    }
  }
  os << "}";
  return os.str();
}

void printOpInto(std::ostringstream &os, const Op &op, int indent) {
  std::string pad(indent * 2, ' ');
  switch (op.kind) {
  case OpKind::For:
    os << pad << "for " << op.iv << " = "
       << boundStr(op.lower, op.mapOperands, true) << " to "
       << boundStr(op.upper, op.mapOperands, false) << " step " << op.step
       << " {\n";
    for (const Op &child : op.body)
      printOpInto(os, child, indent + 1);
    os << pad << "}" << attrsStr(op.attrs) << "\n";
    break;
  case OpKind::Parallel: {
    os << pad << "parallel (";
    for (size_t i = 0; i < op.ivs.size(); ++i)
      os << (i ? ", " : "") << op.ivs[i];
    os << ") = (";
    for (size_t i = 0; i < op.lowers.size(); ++i)
      os << (i ? ", " : "") << boundStr(op.lowers[i], op.mapOperands, true, true);
    os << ") to (";
    for (size_t i = 0; i < op.uppers.size(); ++i)
      os << (i ? ", " : "") << boundStr(op.uppers[i], op.mapOperands, false, true);
    os << ") {\n";
    for (const Op &child : op.body)
      printOpInto(os, child, indent + 1);
    os << pad << "}" << attrsStr(op.attrs) << "\n";
    break;
  }
  case OpKind::Load:
    os << pad << op.result << " = load " << op.buffer
       << accessStr(op.access, op.accessOperands) << "\n";
    break;
  case OpKind::Store:
    os << pad << "store " << operandStr(op.operands[0]) << ", " << op.buffer
       << accessStr(op.access, op.accessOperands) << "\n";
    break;
  case OpKind::Arith: {
    os << pad << op.result << " = " << arithKindName(op.arith);
    if (op.arith == ArithKind::CmpEq || op.arith == ArithKind::CmpLt ||
        op.arith == ArithKind::CmpLe)
      os << ",";
    for (size_t i = 0; i < op.operands.size(); ++i)
      os << (i ? ", " : " ") << operandStr(op.operands[i]);
    if (op.arith == ArithKind::Cast)
      os << " : " << elementTypeName(op.castType);
    if (op.arith == ArithKind::Quant || op.arith == ArithKind::Dequant)
      os << " scale " << formatDouble(op.scale);
    os << "\n";
    break;
  }
  case OpKind::MmaLoad:
    os << pad << op.result << " = mma_load " << op.buffer
       << accessStr(op.access, op.accessOperands) << " : "
       << (op.mmaRole == MmaRole::A ? "A" : op.mmaRole == MmaRole::B ? "B" : "C")
       << "\n";
    break;
  case OpKind::MmaCompute:
    os << pad << op.result << " = mma_compute " << operandStr(op.operands[0])
       << ", " << operandStr(op.operands[1]) << ", "
       << operandStr(op.operands[2]) << "\n";
    break;
  case OpKind::MmaStore:
    os << pad << "mma_store " << operandStr(op.operands[0]) << ", " << op.buffer
       << accessStr(op.access, op.accessOperands) << "\n";
    break;
  case OpKind::AsyncCopy:
    os << pad << "async_copy \"" << op.tag << "\" dst " << op.buffer << " src "
       << op.srcBuffer << " {\n";
    for (const Op &child : op.body)
      printOpInto(os, child, indent + 1);
    os << pad << "}\n";
    break;
  case OpKind::AwaitCopies:
    os << pad << "await_copies \"" << op.tag << "\"\n";
    break;
  case OpKind::Alloc:
    os << pad << "alloc " << op.buffer << "\n";
    break;
  case OpKind::Dealloc:
    os << pad << "dealloc " << op.buffer << "\n";
    break;
  }
}

} // namespace

std::string printOp(const Op &op, int indent) {
  std::ostringstream os;
  printOpInto(os, op, indent);
  return os.str();
}

std::string printProgram(const Program &p) {
  std::ostringstream os;
  for (const auto &b : p.buffers) {
    os << "buffer " << b.id << " : <";
    for (size_t i = 0; i < b.shape.size(); ++i)
      os << (i ? "x" : "") << b.shape[i];
    os << " x " << elementTypeName(b.elementType) << ", "
       << memorySpaceName(b.space) << ">";
    if (b.isInput)
      os << " input";
    if (b.isOutput)
      os << " output";
    os << "\n";
  }
  for (const auto &f : p.functions) {
    os << "func @" << f.name << " {\n";
    for (const Op &op : f.body)
      printOpInto(os, op, 1);
    os << "}\n";
  }
  return os.str();
}

} // namespace af
