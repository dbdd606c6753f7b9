//===- affine.h - Quasi-affine expressions and maps -----------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//
//
// Quasi-affine index arithmetic over loop induction variables: add,
// constant-multiply, floordiv and mod by positive constants. Expressions are
// immutable trees with structural equality; maps bundle an ordered list of
// result expressions over (dims, symbols).
//
//===----------------------------------------------------------------------===//

#ifndef AF_AFFINE_H
#define AF_AFFINE_H

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace af {

/// Raised on structurally invalid expressions (e.g. non-positive divisor).
struct AffineError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class AffineExpr {
public:
  enum class Kind { Constant, Dim, Symbol, Add, MulConst, FloorDiv, Mod };

  AffineExpr() = default;

  static AffineExpr constant(int64_t value);
  static AffineExpr dim(unsigned index);
  static AffineExpr symbol(unsigned index);

  /// Throws AffineError("non-positive divisor") when the constant is <= 0.
  AffineExpr floorDiv(int64_t divisor) const;
  AffineExpr mod(int64_t modulus) const;

  AffineExpr operator+(const AffineExpr &rhs) const;
  AffineExpr operator+(int64_t rhs) const { return *this + constant(rhs); }
  AffineExpr operator-(const AffineExpr &rhs) const { return *this + rhs * -1; }
  AffineExpr operator-(int64_t rhs) const { return *this + constant(-rhs); }
  AffineExpr operator*(int64_t factor) const;

  bool isNull() const { return !node; }
  Kind kind() const;
  bool isConstant() const { return kind() == Kind::Constant; }
  /// Valid for Constant nodes.
  int64_t value() const;
  /// Valid for Dim/Symbol nodes.
  unsigned index() const;
  /// Valid for MulConst (factor), FloorDiv (divisor), Mod (modulus).
  int64_t rhsConstant() const;
  /// Left child of Add; sole child of MulConst/FloorDiv/Mod.
  const AffineExpr &lhs() const;
  /// Right child of Add.
  const AffineExpr &rhs() const;

  bool operator==(const AffineExpr &other) const;
  bool operator!=(const AffineExpr &other) const { return !(*this == other); }

  /// Mathematical-floor division / always-non-negative mod, matching eval().
  int64_t eval(std::span<const int64_t> dims,
               std::span<const int64_t> symbols = {}) const;

  /// Folds constant subtrees bottom-up; idempotent.
  AffineExpr canonicalize() const;

  /// Substitutes dims[i] for Dim(i); out-of-range dims are kept as-is.
  AffineExpr replaceDims(std::span<const AffineExpr> dims) const;
  /// Adds `shift` to every dim index.
  AffineExpr shiftDims(unsigned shift) const;

  void walk(const std::function<void(const AffineExpr &)> &fn) const;

  bool usesDim(unsigned index) const;
  /// 1 + max dim index used, 0 if none.
  unsigned numDimsUsed() const;
  unsigned numSymbolsUsed() const;
  /// True when no FloorDiv/Mod appears anywhere in the tree.
  bool isPureAffine() const;

  std::string str(std::span<const std::string> dimNames = {},
                  std::span<const std::string> symNames = {}) const;

private:
  struct Node;
  explicit AffineExpr(std::shared_ptr<const Node> n) : node(std::move(n)) {}
  std::shared_ptr<const Node> node;
};

inline AffineExpr operator+(int64_t lhs, const AffineExpr &rhs) {
  return rhs + lhs;
}
inline AffineExpr operator*(int64_t factor, const AffineExpr &expr) {
  return expr * factor;
}

/// Floor division with mathematical semantics (rounds toward -inf).
int64_t floorDiv(int64_t a, int64_t b);
/// Mod with result always in [0, b).
int64_t floorMod(int64_t a, int64_t b);

struct AffineMap {
  unsigned numDims = 0;
  unsigned numSymbols = 0;
  std::vector<AffineExpr> results;

  AffineMap() = default;
  AffineMap(unsigned dims, unsigned syms, std::vector<AffineExpr> res)
      : numDims(dims), numSymbols(syms), results(std::move(res)) {}

  static AffineMap constantMap(int64_t value) {
    return AffineMap(0, 0, {AffineExpr::constant(value)});
  }
  /// The d-dimensional identity map (d0, d1, ..., d_{n-1}).
  static AffineMap identity(unsigned numDims);

  bool operator==(const AffineMap &other) const = default;

  std::vector<int64_t> eval(std::span<const int64_t> dims,
                            std::span<const int64_t> symbols = {}) const;
  /// max over results -- the value of a lower-bound map.
  int64_t evalMax(std::span<const int64_t> dims,
                  std::span<const int64_t> symbols = {}) const;
  /// min over results -- the value of an upper-bound map.
  int64_t evalMin(std::span<const int64_t> dims,
                  std::span<const int64_t> symbols = {}) const;

  AffineMap canonicalize() const;
  AffineMap replaceDims(std::span<const AffineExpr> dims) const;

  /// Single-result constant map accessor; nullopt when not of that shape.
  bool isSingleConstant() const {
    return results.size() == 1 && results[0].isConstant();
  }
  int64_t singleConstant() const { return results[0].value(); }
};

/// Decomposition of a quasi-affine expression into a linear part over dims
/// plus opaque floordiv/mod terms with integer coefficients. Used by the
/// structural analyses (contiguity, dependence fast path, slice bounds).
struct LinearForm {
  struct DivTerm {
    AffineExpr arg;      // the inner expression
    int64_t divisor;     // > 0
    bool isMod;          // floordiv otherwise
    int64_t coeff;       // multiplier of this term
    bool operator==(const DivTerm &) const = default;
  };
  std::map<unsigned, int64_t> dimCoeffs;
  std::map<unsigned, int64_t> symCoeffs;
  int64_t constant = 0;
  std::vector<DivTerm> divTerms;

  bool isPureLinear() const { return divTerms.empty(); }
  /// Linear in exactly one dim with unit-or-any coefficient and no divs.
  bool isSingleDimLinear() const {
    return divTerms.empty() && symCoeffs.empty() && dimCoeffs.size() <= 1;
  }
};

/// Flattens `expr` into a LinearForm. Always succeeds; nested div/mod args are
/// kept opaque inside DivTerms.
LinearForm decompose(const AffineExpr &expr);

} // namespace af

#endif // AF_AFFINE_H
