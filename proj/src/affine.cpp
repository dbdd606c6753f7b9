//===- affine.cpp - Quasi-affine expressions and maps ---------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/affine.h"

#include <algorithm>
#include <cassert>
#include <sstream>

namespace af {

int64_t floorDiv(int64_t a, int64_t b) {
  assert(b > 0 && "divisor must be positive");
  int64_t q = a / b;
  if ((a % b != 0) && (a < 0))
    --q;
  return q;
}

int64_t floorMod(int64_t a, int64_t b) {
  assert(b > 0 && "modulus must be positive");
  int64_t r = a % b;
  if (r < 0)
    r += b;
  return r;
}

struct AffineExpr::Node {
  Kind kind;
  int64_t value = 0;   // Constant value, Dim/Symbol index, or rhs constant.
  AffineExpr lhs, rhs; // Children for Add; lhs only for MulConst/Div/Mod.
};

AffineExpr AffineExpr::constant(int64_t value) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Constant;
  n->value = value;
  return AffineExpr(std::move(n));
}

AffineExpr AffineExpr::dim(unsigned index) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Dim;
  n->value = index;
  return AffineExpr(std::move(n));
}

AffineExpr AffineExpr::symbol(unsigned index) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Symbol;
  n->value = index;
  return AffineExpr(std::move(n));
}

AffineExpr AffineExpr::floorDiv(int64_t divisor) const {
  if (divisor <= 0)
    throw AffineError("non-positive divisor");
  if (isConstant())
    return constant(af::floorDiv(value(), divisor));
  if (divisor == 1)
    return *this;
  auto n = std::make_shared<Node>();
  n->kind = Kind::FloorDiv;
  n->value = divisor;
  n->lhs = *this;
  return AffineExpr(std::move(n));
}

AffineExpr AffineExpr::mod(int64_t modulus) const {
  if (modulus <= 0)
    throw AffineError("non-positive divisor");
  if (isConstant())
    return constant(af::floorMod(value(), modulus));
  if (modulus == 1)
    return constant(0);
  auto n = std::make_shared<Node>();
  n->kind = Kind::Mod;
  n->value = modulus;
  n->lhs = *this;
  return AffineExpr(std::move(n));
}

AffineExpr AffineExpr::operator+(const AffineExpr &rhs) const {
  if (isConstant() && rhs.isConstant())
    return constant(value() + rhs.value());
  if (isConstant() && value() == 0)
    return rhs;
  if (rhs.isConstant() && rhs.value() == 0)
    return *this;
  auto n = std::make_shared<Node>();
  n->kind = Kind::Add;
  n->lhs = *this;
  n->rhs = rhs;
  return AffineExpr(std::move(n));
}

AffineExpr AffineExpr::operator*(int64_t factor) const {
  if (isConstant())
    return constant(value() * factor);
  if (factor == 1)
    return *this;
  if (factor == 0)
    return constant(0);
  auto n = std::make_shared<Node>();
  n->kind = Kind::MulConst;
  n->value = factor;
  n->lhs = *this;
  return AffineExpr(std::move(n));
}

AffineExpr::Kind AffineExpr::kind() const {
  assert(node && "null AffineExpr");
  return node->kind;
}

int64_t AffineExpr::value() const {
  assert(kind() == Kind::Constant);
  return node->value;
}

unsigned AffineExpr::index() const {
  assert(kind() == Kind::Dim || kind() == Kind::Symbol);
  return static_cast<unsigned>(node->value);
}

int64_t AffineExpr::rhsConstant() const {
  assert(kind() == Kind::MulConst || kind() == Kind::FloorDiv ||
         kind() == Kind::Mod);
  return node->value;
}

const AffineExpr &AffineExpr::lhs() const {
  assert(node && !node->lhs.isNull());
  return node->lhs;
}

const AffineExpr &AffineExpr::rhs() const {
  assert(kind() == Kind::Add);
  return node->rhs;
}

bool AffineExpr::operator==(const AffineExpr &other) const {
  if (node == other.node)
    return true;
  if (!node || !other.node)
    return false;
  if (node->kind != other.node->kind || node->value != other.node->value)
    return false;
  switch (node->kind) {
  case Kind::Constant:
  case Kind::Dim:
  case Kind::Symbol:
    return true;
  case Kind::Add:
    return node->lhs == other.node->lhs && node->rhs == other.node->rhs;
  case Kind::MulConst:
  case Kind::FloorDiv:
  case Kind::Mod:
    return node->lhs == other.node->lhs;
  }
  return false;
}

int64_t AffineExpr::eval(std::span<const int64_t> dims,
                         std::span<const int64_t> symbols) const {
  switch (kind()) {
  case Kind::Constant:
    return node->value;
  case Kind::Dim:
    assert(index() < dims.size() && "dim operand missing");
    return dims[index()];
  case Kind::Symbol:
    assert(index() < symbols.size() && "symbol operand missing");
    return symbols[index()];
  case Kind::Add:
    return node->lhs.eval(dims, symbols) + node->rhs.eval(dims, symbols);
  case Kind::MulConst:
    return node->lhs.eval(dims, symbols) * node->value;
  case Kind::FloorDiv:
    return af::floorDiv(node->lhs.eval(dims, symbols), node->value);
  case Kind::Mod:
    return af::floorMod(node->lhs.eval(dims, symbols), node->value);
  }
  return 0;
}

AffineExpr AffineExpr::canonicalize() const {
  switch (kind()) {
  case Kind::Constant:
  case Kind::Dim:
  case Kind::Symbol:
    return *this;
  case Kind::Add:
    return node->lhs.canonicalize() + node->rhs.canonicalize();
  case Kind::MulConst:
    return node->lhs.canonicalize() * node->value;
  case Kind::FloorDiv:
    return node->lhs.canonicalize().floorDiv(node->value);
  case Kind::Mod:
    return node->lhs.canonicalize().mod(node->value);
  }
  return *this;
}

AffineExpr AffineExpr::replaceDims(std::span<const AffineExpr> dims) const {
  switch (kind()) {
  case Kind::Constant:
  case Kind::Symbol:
    return *this;
  case Kind::Dim:
    if (index() < dims.size() && !dims[index()].isNull())
      return dims[index()];
    return *this;
  case Kind::Add:
    return node->lhs.replaceDims(dims) + node->rhs.replaceDims(dims);
  case Kind::MulConst:
    return node->lhs.replaceDims(dims) * node->value;
  case Kind::FloorDiv:
    return node->lhs.replaceDims(dims).floorDiv(node->value);
  case Kind::Mod:
    return node->lhs.replaceDims(dims).mod(node->value);
  }
  return *this;
}

AffineExpr AffineExpr::shiftDims(unsigned shift) const {
  if (shift == 0)
    return *this;
  unsigned n = numDimsUsed();
  std::vector<AffineExpr> repl(n);
  for (unsigned i = 0; i < n; ++i)
    repl[i] = dim(i + shift);
  return replaceDims(repl);
}

void AffineExpr::walk(
    const std::function<void(const AffineExpr &)> &fn) const {
  fn(*this);
  switch (kind()) {
  case Kind::Add:
    node->lhs.walk(fn);
    node->rhs.walk(fn);
    break;
  case Kind::MulConst:
  case Kind::FloorDiv:
  case Kind::Mod:
    node->lhs.walk(fn);
    break;
  default:
    break;
  }
}

bool AffineExpr::usesDim(unsigned index) const {
  bool found = false;
  walk([&](const AffineExpr &e) {
    if (e.kind() == Kind::Dim && e.index() == index)
      found = true;
  });
  return found;
}

unsigned AffineExpr::numDimsUsed() const {
  unsigned n = 0;
  walk([&](const AffineExpr &e) {
    if (e.kind() == Kind::Dim)
      n = std::max(n, e.index() + 1);
  });
  return n;
}

unsigned AffineExpr::numSymbolsUsed() const {
  unsigned n = 0;
  walk([&](const AffineExpr &e) {
    if (e.kind() == Kind::Symbol)
      n = std::max(n, e.index() + 1);
  });
  return n;
}

bool AffineExpr::isPureAffine() const {
  bool pure = true;
  walk([&](const AffineExpr &e) {
    if (e.kind() == Kind::FloorDiv || e.kind() == Kind::Mod)
      pure = false;
  });
  return pure;
}

namespace {

enum class Prec { Add, Mul, Atom };

void printExpr(std::ostringstream &os, const AffineExpr &e,
               std::span<const std::string> dimNames,
               std::span<const std::string> symNames, Prec parent) {
  using Kind = AffineExpr::Kind;
  auto paren = [&](Prec mine, auto &&fn) {
    bool need = static_cast<int>(mine) < static_cast<int>(parent);
    if (need)
      os << "(";
    fn();
    if (need)
      os << ")";
  };
  switch (e.kind()) {
  case Kind::Constant:
    os << e.value();
    break;
  case Kind::Dim:
    if (e.index() < dimNames.size())
      os << dimNames[e.index()];
    else
      os << "d" << e.index();
    break;
  case Kind::Symbol:
    if (e.index() < symNames.size())
      os << symNames[e.index()];
    else
      os << "s" << e.index();
    break;
  case Kind::Add: {
    // Print `a + (-c)` and `a + e*-1` in subtractive form.
    const AffineExpr &r = e.rhs();
    bool sub = (r.kind() == Kind::Constant && r.value() < 0) ||
               (r.kind() == Kind::MulConst && r.rhsConstant() == -1);
    paren(Prec::Add, [&] {
      printExpr(os, e.lhs(), dimNames, symNames, Prec::Add);
      if (sub && r.kind() == Kind::Constant) {
        os << " - " << -r.value();
      } else if (sub) {
        os << " - ";
        printExpr(os, r.lhs(), dimNames, symNames, Prec::Atom);
      } else {
        os << " + ";
        printExpr(os, r, dimNames, symNames, Prec::Add);
      }
    });
    break;
  }
  case Kind::MulConst:
    paren(Prec::Mul, [&] {
      printExpr(os, e.lhs(), dimNames, symNames, Prec::Atom);
      os << " * " << e.rhsConstant();
    });
    break;
  case Kind::FloorDiv:
    paren(Prec::Mul, [&] {
      printExpr(os, e.lhs(), dimNames, symNames, Prec::Atom);
      os << " floordiv " << e.rhsConstant();
    });
    break;
  case Kind::Mod:
    paren(Prec::Mul, [&] {
      printExpr(os, e.lhs(), dimNames, symNames, Prec::Atom);
      os << " mod " << e.rhsConstant();
    });
    break;
  }
}

} // namespace

std::string AffineExpr::str(std::span<const std::string> dimNames,
                            std::span<const std::string> symNames) const {
  std::ostringstream os;
  printExpr(os, *this, dimNames, symNames, Prec::Add);
  return os.str();
}

AffineMap AffineMap::identity(unsigned numDims) {
  std::vector<AffineExpr> res;
  res.reserve(numDims);
  for (unsigned i = 0; i < numDims; ++i)
    res.push_back(AffineExpr::dim(i));
  return AffineMap(numDims, 0, std::move(res));
}

std::vector<int64_t> AffineMap::eval(std::span<const int64_t> dims,
                                     std::span<const int64_t> symbols) const {
  std::vector<int64_t> out;
  out.reserve(results.size());
  for (const auto &r : results)
    out.push_back(r.eval(dims, symbols));
  return out;
}

int64_t AffineMap::evalMax(std::span<const int64_t> dims,
                           std::span<const int64_t> symbols) const {
  assert(!results.empty());
  int64_t best = results[0].eval(dims, symbols);
  for (size_t i = 1; i < results.size(); ++i)
    best = std::max(best, results[i].eval(dims, symbols));
  return best;
}

int64_t AffineMap::evalMin(std::span<const int64_t> dims,
                           std::span<const int64_t> symbols) const {
  assert(!results.empty());
  int64_t best = results[0].eval(dims, symbols);
  for (size_t i = 1; i < results.size(); ++i)
    best = std::min(best, results[i].eval(dims, symbols));
  return best;
}

AffineMap AffineMap::canonicalize() const {
  AffineMap out = *this;
  for (auto &r : out.results)
    r = r.canonicalize();
  return out;
}

AffineMap AffineMap::replaceDims(std::span<const AffineExpr> dims) const {
  AffineMap out = *this;
  for (auto &r : out.results)
    r = r.replaceDims(dims);
  return out;
}

namespace {

void decomposeInto(const AffineExpr &e, int64_t coeff, LinearForm &out) {
  using Kind = AffineExpr::Kind;
  switch (e.kind()) {
  case Kind::Constant:
    out.constant += coeff * e.value();
    break;
  case Kind::Dim:
    out.dimCoeffs[e.index()] += coeff;
    break;
  case Kind::Symbol:
    out.symCoeffs[e.index()] += coeff;
    break;
  case Kind::Add:
    decomposeInto(e.lhs(), coeff, out);
    decomposeInto(e.rhs(), coeff, out);
    break;
  case Kind::MulConst:
    decomposeInto(e.lhs(), coeff * e.rhsConstant(), out);
    break;
  case Kind::FloorDiv:
    out.divTerms.push_back({e.lhs(), e.rhsConstant(), false, coeff});
    break;
  case Kind::Mod:
    out.divTerms.push_back({e.lhs(), e.rhsConstant(), true, coeff});
    break;
  }
}

} // namespace

LinearForm decompose(const AffineExpr &expr) {
  LinearForm out;
  decomposeInto(expr, 1, out);
  // Drop zero coefficients accumulated by cancellation.
  for (auto it = out.dimCoeffs.begin(); it != out.dimCoeffs.end();)
    it = it->second == 0 ? out.dimCoeffs.erase(it) : std::next(it);
  for (auto it = out.symCoeffs.begin(); it != out.symCoeffs.end();)
    it = it->second == 0 ? out.symCoeffs.erase(it) : std::next(it);
  return out;
}

} // namespace af
