//===- analysis.cpp - Affine access analyses ----------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/analysis.h"

#include <algorithm>
#include <cassert>
#include <functional>
#include <map>
#include <numeric>
#include <set>

namespace af {

LoopChain buildLoopChain(const Op &nestRoot) {
  LoopChain chain;
  const Op *cur = &nestRoot;
  while (cur && cur->kind == OpKind::For) {
    chain.loops.push_back(cur);
    const Op *next = nullptr;
    for (const Op &child : cur->body) {
      if (child.isLoop()) {
        if (next) {
          chain.singlePath = false;
          break;
        }
        next = &child;
      }
    }
    if (!chain.singlePath)
      break;
    cur = next;
  }
  return chain;
}

namespace {

void collectAccessesImpl(const Op &op, std::vector<const Op *> &chain,
                         const std::string &buffer,
                         std::vector<AccessInstance> &out) {
  if ((op.kind == OpKind::Load || op.kind == OpKind::Store) &&
      op.buffer == buffer)
    out.push_back({&op, chain, op.kind == OpKind::Store});
  if (op.kind == OpKind::For)
    chain.push_back(&op);
  for (const Op &child : op.body)
    collectAccessesImpl(child, chain, buffer, out);
  if (op.kind == OpKind::For)
    chain.pop_back();
}

} // namespace

std::vector<AccessInstance> collectAccesses(const Op &root,
                                            const std::string &buffer) {
  std::vector<AccessInstance> out;
  std::vector<const Op *> chain;
  collectAccessesImpl(root, chain, buffer, out);
  return out;
}

std::vector<AccessInstance> collectAccesses(const std::vector<Op> &ops,
                                            const std::string &buffer) {
  std::vector<AccessInstance> out;
  std::vector<const Op *> chain;
  for (const Op &op : ops)
    collectAccessesImpl(op, chain, buffer, out);
  return out;
}

//===----------------------------------------------------------------------===//
// Contiguity
//===----------------------------------------------------------------------===//

namespace {

/// Behavior of a subscript expression over aligned runs of L consecutive
/// values of one iv.
struct RunBehavior {
  bool unknown = false;
  bool involvesIv = false;
  // When linear: value = slope * iv + offset within each aligned run.
  int64_t slope = 0;       // 0 means run-constant (or iv-free)
  int64_t constOffset = 0; // only meaningful when pureOffset
  bool pureOffset = true;  // offset free of other ivs/symbols

  static RunBehavior unknownB() {
    RunBehavior b;
    b.unknown = true;
    return b;
  }
};

RunBehavior analyzeRun(const AffineExpr &e, unsigned ivDim, int64_t L) {
  using Kind = AffineExpr::Kind;
  switch (e.kind()) {
  case Kind::Constant: {
    RunBehavior b;
    b.constOffset = e.value();
    return b;
  }
  case Kind::Dim: {
    RunBehavior b;
    if (e.index() == ivDim) {
      b.involvesIv = true;
      b.slope = 1;
    } else {
      b.pureOffset = false;
    }
    return b;
  }
  case Kind::Symbol: {
    RunBehavior b;
    b.pureOffset = false;
    return b;
  }
  case Kind::Add: {
    RunBehavior a = analyzeRun(e.lhs(), ivDim, L);
    RunBehavior c = analyzeRun(e.rhs(), ivDim, L);
    if (a.unknown || c.unknown)
      return RunBehavior::unknownB();
    RunBehavior b;
    b.involvesIv = a.involvesIv || c.involvesIv;
    b.slope = a.slope + c.slope;
    b.constOffset = a.constOffset + c.constOffset;
    b.pureOffset = a.pureOffset && c.pureOffset;
    return b;
  }
  case Kind::MulConst: {
    RunBehavior a = analyzeRun(e.lhs(), ivDim, L);
    if (a.unknown)
      return a;
    a.slope *= e.rhsConstant();
    a.constOffset *= e.rhsConstant();
    return a;
  }
  case Kind::FloorDiv:
  case Kind::Mod: {
    RunBehavior a = analyzeRun(e.lhs(), ivDim, L);
    if (a.unknown)
      return a;
    int64_t m = e.rhsConstant();
    if (!a.involvesIv || a.slope == 0) {
      // iv-free, or run-constant already; fold when pure.
      RunBehavior b;
      b.involvesIv = a.involvesIv;
      if (a.pureOffset && a.slope == 0 && !a.involvesIv) {
        b.constOffset = e.kind() == Kind::FloorDiv ? floorDiv(a.constOffset, m)
                                                   : floorMod(a.constOffset, m);
      } else {
        b.pureOffset = false;
      }
      return b;
    }
    int64_t s = a.slope;
    if (s <= 0 || !a.pureOffset)
      return RunBehavior::unknownB();
    // No multiple of m may fall strictly inside any aligned run:
    // (c mod g) + s*(L-1) <= g - 1 with g = gcd(s*L, m).
    int64_t g = std::gcd(s * L, m);
    int64_t c = floorMod(a.constOffset, g);
    bool runSafe = c + s * (L - 1) <= g - 1;
    if (!runSafe)
      return RunBehavior::unknownB();
    RunBehavior b;
    b.involvesIv = true;
    if (e.kind() == Kind::FloorDiv) {
      b.slope = 0;        // constant within every aligned run
      b.pureOffset = false; // value varies across runs
    } else {
      b.slope = s; // mod advances linearly inside the run
      b.pureOffset = false;
    }
    return b;
  }
  }
  return RunBehavior::unknownB();
}

int64_t floorPow2(int64_t v) {
  int64_t p = 1;
  while (p * 2 <= v)
    p *= 2;
  return p;
}

} // namespace

ContiguityResult contiguityAlongIv(const Program &p, const Op &accessOp,
                                   const std::string &iv, int64_t ivExtent,
                                   int64_t maxWidth) {
  ContiguityResult result;
  result.iv = iv;
  const BufferDecl *buf = p.findBuffer(accessOp.buffer);
  if (!buf || ivExtent < 1)
    return result;
  auto strides = buf->strides();
  int ivDim = -1;
  for (size_t i = 0; i < accessOp.accessOperands.size(); ++i)
    if (accessOp.accessOperands[i] == iv)
      ivDim = static_cast<int>(i);
  if (ivDim < 0) {
    // Access independent of the iv: trivially "contiguous" run of 1.
    result.maxContiguousRun = 1;
    return result;
  }

  int64_t best = 1;
  int64_t start = std::min(maxWidth, floorPow2(ivExtent));
  for (int64_t L = start; L > 1; L /= 2) {
    bool ok = true;
    int64_t perStep = 0;
    for (size_t d = 0; d < accessOp.access.results.size() && ok; ++d) {
      RunBehavior b =
          analyzeRun(accessOp.access.results[d], static_cast<unsigned>(ivDim), L);
      if (b.unknown) {
        ok = false;
        break;
      }
      perStep += b.slope * strides[d];
    }
    if (ok && perStep == 1) {
      best = L;
      break;
    }
  }
  result.maxContiguousRun = best;

  // Descriptive stride facts from a numeric probe (other ivs at zero).
  auto flatAt = [&](int64_t v) {
    std::vector<int64_t> dims(accessOp.accessOperands.size(), 0);
    dims[ivDim] = v;
    auto idx = accessOp.access.eval(dims);
    int64_t flat = 0;
    for (size_t i = 0; i < idx.size(); ++i)
      flat += idx[i] * strides[i];
    return flat;
  };
  result.stridePattern.push_back({best, best > 1 ? 1 : flatAt(1) - flatAt(0)});
  if (best < ivExtent)
    result.stridePattern.push_back({2 * best, flatAt(best) - flatAt(best - 1)});
  return result;
}

//===----------------------------------------------------------------------===//
// Fourier-Motzkin emptiness and the dependence fast path
//===----------------------------------------------------------------------===//

namespace {

using I128 = __int128;

constexpr int kMaxVars = 12;
constexpr int kMaxRows = 64;

/// Rows encode sum(coeff[i] * v[i]) + back() >= 0.
class FMSystem {
public:
  int addVar() {
    ++numVars;
    for (auto &row : rows)
      row.insert(row.end() - 1, 0);
    return numVars - 1;
  }

  bool tooBig() const { return big || numVars > kMaxVars; }

  void addIneq(const std::map<int, int64_t> &coeffs, int64_t c) {
    std::vector<int64_t> row(numVars + 1, 0);
    for (auto [v, a] : coeffs)
      row[v] = a;
    row[numVars] = c;
    pushRow(std::move(row));
  }

  /// Equality with an integer-gcd cut: if gcd of coefficients does not divide
  /// the constant, the system is integer-infeasible.
  void addEq(const std::map<int, int64_t> &coeffs, int64_t c) {
    int64_t g = 0;
    for (auto [v, a] : coeffs)
      g = std::gcd(g, std::abs(a));
    if (g == 0) {
      if (c != 0)
        contradiction = true;
      return;
    }
    if (c % g != 0) {
      contradiction = true;
      return;
    }
    addIneq(coeffs, c);
    std::map<int, int64_t> neg;
    for (auto [v, a] : coeffs)
      neg[v] = -a;
    addIneq(neg, -c);
  }

  /// True when definitely integer-infeasible. False means rationally feasible
  /// (or undecided due to size caps; check tooBig()).
  bool infeasible() {
    if (contradiction)
      return true;
    if (tooBig())
      return false;
    for (int v = numVars - 1; v >= 0; --v) {
      if (!eliminate(v))
        return contradiction; // blew the cap; treat as feasible
      if (contradiction)
        return true;
    }
    return contradiction;
  }

private:
  int numVars = 0;
  std::vector<std::vector<int64_t>> rows;
  bool contradiction = false;
  bool big = false;

  void pushRow(std::vector<int64_t> row) {
    // Normalize by gcd of the variable coefficients and constant.
    int64_t g = 0;
    for (size_t i = 0; i + 1 < row.size(); ++i)
      g = std::gcd(g, std::abs(row[i]));
    if (g == 0) {
      if (row.back() < 0)
        contradiction = true;
      return;
    }
    // Integer rounding of the constant: a*x + c >= 0 <=> x >= ceil(-c/a)...
    // dividing all coeffs by g keeps soundness with floor on the constant.
    for (size_t i = 0; i + 1 < row.size(); ++i)
      row[i] /= g;
    row.back() = floorDiv(row.back(), g);
    rows.push_back(std::move(row));
    if (static_cast<int>(rows.size()) > kMaxRows)
      big = true;
  }

  bool eliminate(int v) {
    std::vector<std::vector<int64_t>> pos, neg, rest;
    for (auto &row : rows) {
      if (row[v] > 0)
        pos.push_back(row);
      else if (row[v] < 0)
        neg.push_back(row);
      else
        rest.push_back(row);
    }
    if (pos.size() * neg.size() + rest.size() > kMaxRows * 4) {
      big = true;
      return false;
    }
    std::vector<std::vector<int64_t>> next = std::move(rest);
    for (const auto &rp : pos)
      for (const auto &rn : neg) {
        // rn[v] < 0 < rp[v]; combined = (-rn[v])*rp + rp[v]*rn.
        I128 a = -static_cast<I128>(rn[v]);
        I128 b = static_cast<I128>(rp[v]);
        std::vector<int64_t> row(rp.size(), 0);
        bool overflow = false;
        for (size_t i = 0; i < rp.size(); ++i) {
          I128 val = a * rp[i] + b * rn[i];
          if (val > INT64_MAX / 2 || val < INT64_MIN / 2) {
            overflow = true;
            break;
          }
          row[i] = static_cast<int64_t>(val);
        }
        if (overflow) {
          big = true;
          return false;
        }
        // Drop the (zero) eliminated coefficient.
        int64_t g = 0;
        for (size_t i = 0; i + 1 < row.size(); ++i)
          g = std::gcd(g, std::abs(row[i]));
        if (g == 0) {
          if (row.back() < 0) {
            contradiction = true;
            return true;
          }
          continue;
        }
        for (size_t i = 0; i + 1 < row.size(); ++i)
          row[i] /= g;
        row.back() = floorDiv(row.back(), g);
        next.push_back(std::move(row));
        if (static_cast<int>(next.size()) > kMaxRows * 4) {
          big = true;
          return false;
        }
      }
    rows = std::move(next);
    return true;
  }
};

/// Builds FM constraints from two access instances.
class DependenceBuilder {
public:
  DependenceBuilder(const AccessInstance &src, const AccessInstance &dst,
                    int commonDepth)
      : src(src), dst(dst), commonDepth(commonDepth) {}

  /// side: 0 = src, 1 = dst. Returns var index for the iv at position `pos`
  /// of that side's chain, creating it (with bound constraints) on demand.
  int ivVar(int side, int pos) {
    bool common = pos < commonDepth;
    auto &cache = common ? commonVars : sideVars[side];
    auto it = cache.find(pos);
    if (it != cache.end())
      return it->second;
    int v = fm.addVar();
    cache[pos] = v;
    const Op *loop = (side == 0 ? src : dst).loopChain[pos];
    // Bound constraints: iv >= each lower result; iv <= each upper result - 1.
    // Bounds referencing ivs outside the chain (e.g. enclosing parallel ivs)
    // are dropped: fewer constraints only widens the domain, which keeps
    // emptiness answers sound.
    for (const auto &r : loop->lower.results) {
      // v - r >= 0, with r expanded negated.
      std::map<int, int64_t> coeffs;
      int64_t c = 0;
      if (!expand(r, loop->mapOperands, side, pos, coeffs, c, -1))
        continue;
      coeffs[v] += 1;
      fm.addIneq(coeffs, c);
    }
    for (const auto &r : loop->upper.results) {
      std::map<int, int64_t> coeffs;
      int64_t c = 0;
      if (!expand(r, loop->mapOperands, side, pos, coeffs, c, +1))
        continue;
      coeffs[v] -= 1;
      fm.addIneq(coeffs, c - 1);
    }
    // Step alignment: iv = lb + step * t for single-result constant lb.
    if (loop->step > 1 && loop->lower.isSingleConstant()) {
      int t = fm.addVar();
      std::map<int, int64_t> coeffs{{v, 1}, {t, -loop->step}};
      fm.addEq(coeffs, -loop->lower.singleConstant());
      std::map<int, int64_t> tpos{{t, 1}};
      fm.addIneq(tpos, 0);
    }
    return v;
  }

  /// Adds `sign * expr` (over `operands` of `side`, ivs resolved against the
  /// chain at positions < posLimit or the full chain when posLimit < 0) into
  /// (coeffs, c). Div/mod introduce aux vars. Returns false on failure.
  bool expand(const AffineExpr &e, const std::vector<std::string> &operands,
              int side, int posLimit, std::map<int, int64_t> &coeffs, int64_t &c,
              int sign) {
    return expandScaled(e, operands, side, posLimit, coeffs, c, sign);
  }

  bool expandScaled(const AffineExpr &e, const std::vector<std::string> &operands,
                    int side, int posLimit, std::map<int, int64_t> &coeffs,
                    int64_t &c, int64_t scale) {
    using Kind = AffineExpr::Kind;
    switch (e.kind()) {
    case Kind::Constant:
      c += scale * e.value();
      return true;
    case Kind::Symbol:
      return false;
    case Kind::Dim: {
      if (e.index() >= operands.size())
        return false;
      int pos = chainPos(side, operands[e.index()], posLimit);
      if (pos < 0)
        return false;
      coeffs[ivVar(side, pos)] += scale;
      return true;
    }
    case Kind::Add:
      return expandScaled(e.lhs(), operands, side, posLimit, coeffs, c, scale) &&
             expandScaled(e.rhs(), operands, side, posLimit, coeffs, c, scale);
    case Kind::MulConst:
      return expandScaled(e.lhs(), operands, side, posLimit, coeffs, c,
                          scale * e.rhsConstant());
    case Kind::FloorDiv:
    case Kind::Mod: {
      std::map<int, int64_t> argCoeffs;
      int64_t argC = 0;
      if (!expandScaled(e.lhs(), operands, side, posLimit, argCoeffs, argC, 1))
        return false;
      int64_t m = e.rhsConstant();
      int q = fm.addVar();
      // 0 <= arg - m*q <= m-1
      std::map<int, int64_t> low = argCoeffs;
      low[q] -= m;
      fm.addIneq(low, argC);
      std::map<int, int64_t> high;
      for (auto [v, a] : argCoeffs)
        high[v] = -a;
      high[q] += m;
      fm.addIneq(high, m - 1 - argC);
      if (e.kind() == Kind::FloorDiv) {
        coeffs[q] += scale;
      } else {
        for (auto [v, a] : argCoeffs)
          coeffs[v] += scale * a;
        c += scale * argC;
        coeffs[q] -= scale * m;
      }
      return true;
    }
    }
    return false;
  }

  int chainPos(int side, const std::string &iv, int posLimit) const {
    const auto &chain = (side == 0 ? src : dst).loopChain;
    int limit = posLimit < 0 ? static_cast<int>(chain.size()) : posLimit;
    for (int i = 0; i < limit; ++i)
      if (chain[i]->iv == iv)
        return i;
    return -1;
  }

  DependenceResult solve(int strictAtDepth) {
    const AffineMap &sa = src.op->access;
    const AffineMap &da = dst.op->access;
    if (sa.results.size() != da.results.size())
      return {true, {}, false};
    for (size_t d = 0; d < sa.results.size(); ++d) {
      std::map<int, int64_t> coeffs;
      int64_t c = 0;
      bool okDim =
          expand(sa.results[d], src.op->accessOperands, 0, -1, coeffs, c, +1);
      std::map<int, int64_t> dstCoeffs;
      int64_t dstC = 0;
      okDim = okDim && expand(da.results[d], dst.op->accessOperands, 1, -1,
                              dstCoeffs, dstC, +1);
      if (!okDim || !ok)
        return {true, {}, false};
      for (auto [v, a] : dstCoeffs)
        coeffs[v] -= a;
      fm.addEq(coeffs, c - dstC);
    }
    if (strictAtDepth >= 0) {
      // src iv < dst iv at that chain position.
      int vs = ivVar(0, strictAtDepth);
      int vd = ivVar(1, strictAtDepth);
      std::map<int, int64_t> coeffs{{vd, 1}, {vs, -1}};
      fm.addIneq(coeffs, -1);
    }
    if (!ok || fm.tooBig())
      return {true, {}, false};
    bool empty = fm.infeasible();
    if (fm.tooBig())
      return {true, {}, false};
    // Emptiness is exact (rational infeasibility implies integer
    // infeasibility); a feasible relaxation may still lack integer points.
    return {!empty, {}, empty};
  }

private:
  const AccessInstance &src;
  const AccessInstance &dst;
  int commonDepth;
  FMSystem fm;
  std::map<int, int> commonVars;
  std::map<int, int> sideVars[2];
  bool ok = true;
};

/// Arithmetic-progression form of a subscript: value = a*iv + c with iv at a
/// known chain position, plus identical common-iv linear parts on both sides.
struct APForm {
  bool valid = false;
  int64_t a = 0; // 0 when constant
  int64_t c = 0;
  int pos = -1;              // chain position of the own iv (-1 constant)
  std::map<int, int64_t> commonPart; // chainPos -> coeff for common ivs
};

APForm apForm(const AffineExpr &e, const AccessInstance &inst, int commonDepth) {
  APForm f;
  LinearForm lf = decompose(e);
  if (!lf.divTerms.empty() || !lf.symCoeffs.empty())
    return f;
  f.c = lf.constant;
  for (auto [dim, coeff] : lf.dimCoeffs) {
    if (dim >= inst.op->accessOperands.size())
      return f;
    const std::string &iv = inst.op->accessOperands[dim];
    int pos = -1;
    for (size_t i = 0; i < inst.loopChain.size(); ++i)
      if (inst.loopChain[i]->iv == iv)
        pos = static_cast<int>(i);
    if (pos < 0)
      return f;
    if (pos < commonDepth) {
      f.commonPart[pos] += coeff;
    } else {
      if (f.pos >= 0 && f.pos != pos)
        return f; // two own ivs in one dim
      f.pos = pos;
      f.a += coeff;
    }
  }
  if (f.pos >= 0 && f.a == 0)
    f.pos = -1;
  f.valid = true;
  return f;
}

/// Constant [lo, hi) iteration range of the loop at `pos`, or nullopt.
std::optional<std::pair<int64_t, int64_t>> constRange(const Op *loop) {
  if (loop->lower.isSingleConstant() && loop->upper.isSingleConstant())
    return std::make_pair(loop->lower.singleConstant(),
                          loop->upper.singleConstant());
  return std::nullopt;
}

int64_t egcd(int64_t a, int64_t b, int64_t &x, int64_t &y) {
  if (b == 0) {
    x = 1;
    y = 0;
    return a;
  }
  int64_t x1, y1;
  int64_t g = egcd(b, a % b, x1, y1);
  x = y1;
  y = x1 - (a / b) * y1;
  return g;
}

/// Does {a1*x + c1 : x in [l1,u1)} intersect {a2*y + c2 : y in [l2,u2)}?
/// Steps s1/s2 stride the x/y domains. Exact.
bool apIntersect(int64_t a1, int64_t c1, int64_t l1, int64_t u1, int64_t s1,
                 int64_t a2, int64_t c2, int64_t l2, int64_t u2, int64_t s2) {
  if (l1 >= u1 || l2 >= u2)
    return false;
  // Fold the loop step into the progression: x = l + s*t.
  c1 += a1 * l1;
  a1 *= s1;
  int64_t n1 = (u1 - l1 + s1 - 1) / s1; // t in [0, n1)
  c2 += a2 * l2;
  a2 *= s2;
  int64_t n2 = (u2 - l2 + s2 - 1) / s2;
  // Normalize negative strides by reversing the index range.
  if (a1 < 0) {
    c1 += a1 * (n1 - 1);
    a1 = -a1;
  }
  if (a2 < 0) {
    c2 += a2 * (n2 - 1);
    a2 = -a2;
  }
  if (a1 == 0 && a2 == 0)
    return c1 == c2;
  if (a1 == 0)
    return (c1 - c2) % a2 == 0 && (c1 - c2) / a2 >= 0 && (c1 - c2) / a2 < n2;
  if (a2 == 0)
    return (c2 - c1) % a1 == 0 && (c2 - c1) / a1 >= 0 && (c2 - c1) / a1 < n1;
  // a1*t1 - a2*t2 = c2 - c1 with t1 in [0,n1), t2 in [0,n2).
  int64_t x, y;
  int64_t g = egcd(a1, a2, x, y);
  int64_t rhs = c2 - c1;
  if (rhs % g != 0)
    return false;
  // t1 = x*(rhs/g) + k*(a2/g); find k such that t1 in range, then check t2.
  I128 t1base = static_cast<I128>(x) * (rhs / g);
  int64_t stride = a2 / g;
  // Smallest k with t1 >= 0.
  I128 k0 = t1base >= 0 ? -(t1base / stride) : ((-t1base + stride - 1) / stride);
  for (I128 k = k0; ; ++k) {
    I128 t1 = t1base + k * stride;
    if (t1 < 0)
      continue;
    if (t1 >= n1)
      return false;
    I128 t2 = (static_cast<I128>(a1) * t1 - rhs);
    if (t2 % a2 != 0) {
      continue; // should not happen; defensive
    }
    t2 /= a2;
    if (t2 >= 0 && t2 < n2)
      return true;
    if (t2 >= n2 && a1 > 0)
      return false; // t2 grows with t1
    // t2 < 0: keep increasing k.
  }
}

} // namespace

DependenceResult dependenceExists(const Program &p, const AccessInstance &src,
                                  const AccessInstance &dst, int commonDepth,
                                  int strictAtDepth) {
  (void)p;
  const AffineMap &sa = src.op->access;
  const AffineMap &da = dst.op->access;
  if (src.op->buffer != dst.op->buffer)
    return {false, {}, true};
  if (sa.results.size() != da.results.size())
    return {true, {}, false};

  // Fast path: every dim is single-own-iv linear with identical common parts,
  // constant loop ranges, and each own iv appears in at most one dim.
  if (strictAtDepth < 0) {
    bool fastOk = true;
    std::vector<APForm> sForms, dForms;
    std::set<int> sUsed, dUsed;
    for (size_t d = 0; d < sa.results.size() && fastOk; ++d) {
      APForm fs = apForm(sa.results[d], src, commonDepth);
      APForm fd = apForm(da.results[d], dst, commonDepth);
      if (!fs.valid || !fd.valid || fs.commonPart != fd.commonPart) {
        fastOk = false;
        break;
      }
      if (fs.pos >= 0 && !sUsed.insert(fs.pos).second)
        fastOk = false;
      if (fd.pos >= 0 && !dUsed.insert(fd.pos).second)
        fastOk = false;
      sForms.push_back(fs);
      dForms.push_back(fd);
    }
    if (fastOk) {
      DependenceResult res;
      res.exists = true;
      res.exact = true;
      for (size_t d = 0; d < sForms.size(); ++d) {
        const APForm &fs = sForms[d];
        const APForm &fd = dForms[d];
        int64_t l1 = 0, u1 = 1, s1 = 1, l2 = 0, u2 = 1, s2 = 1;
        if (fs.pos >= 0) {
          auto r = constRange(src.loopChain[fs.pos]);
          if (!r) {
            fastOk = false;
            break;
          }
          l1 = r->first;
          u1 = r->second;
          s1 = src.loopChain[fs.pos]->step;
        }
        if (fd.pos >= 0) {
          auto r = constRange(dst.loopChain[fd.pos]);
          if (!r) {
            fastOk = false;
            break;
          }
          l2 = r->first;
          u2 = r->second;
          s2 = dst.loopChain[fd.pos]->step;
        }
        bool overlap = apIntersect(fs.pos >= 0 ? fs.a : 0, fs.c, l1, u1, s1,
                                   fd.pos >= 0 ? fd.a : 0, fd.c, l2, u2, s2);
        if (!overlap) {
          res.exists = false;
          break;
        }
        bool varies = fs.a != fd.a || fs.c != fd.c || fs.pos != fd.pos;
        res.dimVaries.push_back(varies);
      }
      if (fastOk) {
        if (!res.exists)
          res.dimVaries.clear();
        return res;
      }
    }
  }

  DependenceBuilder builder(src, dst, commonDepth);
  return builder.solve(strictAtDepth);
}

//===----------------------------------------------------------------------===//
// Parallelism / reduction recognition
//===----------------------------------------------------------------------===//

namespace {

/// True when the store's value chains back to a load of the same buffer with
/// the identical access (an associative accumulator update).
bool isAccumulatorStore(const Op &root, const Op &store) {
  // Def map for values under root.
  std::map<std::string, const Op *> defs;
  walkOps(root, [&](const Op &o) {
    if (!o.result.empty())
      defs[o.result] = &o;
  });
  std::function<bool(const Operand &)> reaches = [&](const Operand &o) -> bool {
    if (o.isImm)
      return false;
    auto it = defs.find(o.value);
    if (it == defs.end())
      return false;
    const Op *def = it->second;
    if (def->kind == OpKind::Load)
      return def->buffer == store.buffer && def->access == store.access &&
             def->accessOperands == store.accessOperands;
    if (def->kind == OpKind::Arith) {
      switch (def->arith) {
      case ArithKind::Add:
      case ArithKind::Mul:
      case ArithKind::Max:
      case ArithKind::Fma:
        for (const auto &operand : def->operands)
          if (reaches(operand))
            return true;
        return false;
      default:
        return false;
      }
    }
    return false;
  };
  return reaches(store.operands[0]);
}

struct CarriedInfo {
  bool carried = false;
  bool onlyAccumulator = true;
};

CarriedInfo carriedDependences(const Program &p, const Op &nestRoot,
                               const Op &loop) {
  CarriedInfo info;
  // Collect accesses grouped by buffer, with chains rooted at nestRoot.
  std::set<std::string> bufs;
  walkOps(loop, [&](const Op &o) {
    if (o.kind == OpKind::Load || o.kind == OpKind::Store)
      bufs.insert(o.buffer);
  });
  for (const auto &buf : bufs) {
    auto accesses = collectAccesses(nestRoot, buf);
    // Keep only the ones under `loop`.
    std::vector<AccessInstance> here;
    for (auto &a : accesses) {
      bool under = false;
      for (const Op *l : a.loopChain)
        if (l == &loop)
          under = true;
      if (under)
        here.push_back(a);
    }
    int loopPos = -1;
    for (auto &a : here) {
      for (size_t i = 0; i < a.loopChain.size(); ++i)
        if (a.loopChain[i] == &loop)
          loopPos = static_cast<int>(i);
    }
    for (const auto &s : here) {
      if (!s.isStore)
        continue;
      for (const auto &a : here) {
        if (s.op == a.op && !a.isStore)
          continue;
        bool accumulatorPair =
            a.op->access == s.op->access &&
            a.op->accessOperands == s.op->accessOperands &&
            a.op->buffer == s.op->buffer && isAccumulatorStore(nestRoot, *s.op);
        auto res = dependenceExists(p, s, a, loopPos, loopPos);
        if (res.exists) {
          info.carried = true;
          if (!accumulatorPair)
            info.onlyAccumulator = false;
        }
      }
    }
  }
  return info;
}

} // namespace

bool loopIsParallel(const Program &p, const Op &nestRoot, const Op &loop) {
  return !carriedDependences(p, nestRoot, loop).carried;
}

bool loopIsReduction(const Program &p, const Op &nestRoot, const Op &loop) {
  CarriedInfo info = carriedDependences(p, nestRoot, loop);
  return info.carried && info.onlyAccumulator;
}

bool bandIsTileable(const Program &p, const Op &nestRoot,
                    const std::vector<const Op *> &band) {
  for (const Op *loop : band) {
    CarriedInfo info = carriedDependences(p, nestRoot, *loop);
    if (info.carried && !info.onlyAccumulator)
      return false;
  }
  return true;
}

//===----------------------------------------------------------------------===//
// Trip counting
//===----------------------------------------------------------------------===//

namespace {

int64_t countIterationsImpl(const Op &op, std::map<std::string, int64_t> &env,
                            int64_t cap, bool &over) {
  if (op.kind != OpKind::For) {
    int64_t total = 0;
    for (const Op &child : op.body) {
      if (child.isLoop())
        total += countIterationsImpl(child, env, cap, over);
      if (over)
        return -1;
    }
    return total;
  }
  std::vector<int64_t> dims;
  for (const auto &name : op.mapOperands)
    dims.push_back(env.count(name) ? env[name] : 0);
  int64_t lb = op.lower.evalMax(dims);
  int64_t ub = op.upper.evalMin(dims);
  bool hasInner = false;
  for (const Op &child : op.body)
    if (child.isLoop())
      hasInner = true;
  if (!hasInner)
    return std::max<int64_t>(0, (ub - lb + op.step - 1) / op.step);
  int64_t total = 0;
  for (int64_t v = lb; v < ub; v += op.step) {
    env[op.iv] = v;
    for (const Op &child : op.body)
      if (child.isLoop())
        total += countIterationsImpl(child, env, cap, over);
    if (total > cap) {
      over = true;
      env.erase(op.iv);
      return -1;
    }
  }
  env.erase(op.iv);
  return total;
}

} // namespace

int64_t countNestIterations(const Op &nestRoot, int64_t cap) {
  std::map<std::string, int64_t> env;
  bool over = false;
  int64_t n = countIterationsImpl(nestRoot, env, cap, over);
  return over ? -1 : n;
}

//===----------------------------------------------------------------------===//
// Slice computation
//===----------------------------------------------------------------------===//

namespace {

struct IvRange {
  AffineExpr lo, hi; // inclusive, over dst outer ivs (dims 0..d-1)
  bool wholeDim = false;
};

/// Range of `expr` (over the load's operands) as [lo, hi] exprs over the dst
/// outer ivs; inner ivs are substituted through their (single-result) bounds.
bool exprRange(const AffineExpr &expr, const std::vector<std::string> &operands,
               const std::vector<std::string> &outerIvs,
               const std::map<std::string, IvRange> &innerRanges,
               AffineExpr &lo, AffineExpr &hi) {
  LinearForm lf = decompose(expr);
  if (!lf.symCoeffs.empty())
    return false;
  // Div terms over outer ivs only are allowed (kept opaque but identical in
  // lo and hi); over inner ivs they defeat the range computation.
  AffineExpr loAcc = AffineExpr::constant(lf.constant);
  AffineExpr hiAcc = AffineExpr::constant(lf.constant);
  auto outerIndex = [&](const std::string &name) {
    for (size_t i = 0; i < outerIvs.size(); ++i)
      if (outerIvs[i] == name)
        return static_cast<int>(i);
    return -1;
  };
  for (auto [dim, coeff] : lf.dimCoeffs) {
    const std::string &name = operands[dim];
    int oi = outerIndex(name);
    if (oi >= 0) {
      AffineExpr term = AffineExpr::dim(static_cast<unsigned>(oi)) * coeff;
      loAcc = loAcc + term;
      hiAcc = hiAcc + term;
      continue;
    }
    auto it = innerRanges.find(name);
    if (it == innerRanges.end())
      return false;
    if (it->second.wholeDim)
      return false;
    if (coeff >= 0) {
      loAcc = loAcc + it->second.lo * coeff;
      hiAcc = hiAcc + it->second.hi * coeff;
    } else {
      loAcc = loAcc + it->second.hi * coeff;
      hiAcc = hiAcc + it->second.lo * coeff;
    }
  }
  for (const auto &divTerm : lf.divTerms) {
    // Allowed only when the argument involves outer ivs exclusively.
    LinearForm argLf = decompose(divTerm.arg);
    for (auto [dim, coeff] : argLf.dimCoeffs) {
      (void)coeff;
      if (outerIndex(operands[dim]) < 0)
        return false;
    }
    if (!argLf.divTerms.empty())
      return false;
    // Rebuild the div term over outer dims.
    std::vector<AffineExpr> repl(operands.size());
    for (size_t i = 0; i < operands.size(); ++i) {
      int oi = outerIndex(operands[i]);
      if (oi >= 0)
        repl[i] = AffineExpr::dim(static_cast<unsigned>(oi));
    }
    AffineExpr arg = divTerm.arg.replaceDims(repl);
    AffineExpr term = divTerm.isMod ? arg.mod(divTerm.divisor)
                                    : arg.floorDiv(divTerm.divisor);
    term = term * divTerm.coeff;
    loAcc = loAcc + term;
    hiAcc = hiAcc + term;
  }
  lo = loAcc.canonicalize();
  hi = hiAcc.canonicalize();
  return true;
}

/// expr1 - expr2 as a constant, when the linear parts and div terms cancel.
std::optional<int64_t> constDiff(const AffineExpr &a, const AffineExpr &b) {
  LinearForm la = decompose(a.canonicalize());
  LinearForm lb = decompose(b.canonicalize());
  if (la.dimCoeffs != lb.dimCoeffs || la.symCoeffs != lb.symCoeffs)
    return std::nullopt;
  auto sortKey = [](const LinearForm::DivTerm &t) {
    return std::make_tuple(t.divisor, t.isMod, t.coeff);
  };
  auto da = la.divTerms, db = lb.divTerms;
  if (da.size() != db.size())
    return std::nullopt;
  std::stable_sort(da.begin(), da.end(), [&](auto &x, auto &y) {
    return sortKey(x) < sortKey(y);
  });
  std::stable_sort(db.begin(), db.end(), [&](auto &x, auto &y) {
    return sortKey(x) < sortKey(y);
  });
  for (size_t i = 0; i < da.size(); ++i)
    if (!(da[i] == db[i]))
      return std::nullopt;
  return la.constant - lb.constant;
}

} // namespace

std::optional<SliceDescriptor> computeSlice(const Program &p,
                                            const Op &producer,
                                            const Op &consumer,
                                            const std::string &buffer,
                                            int depth, SliceFailure *failure) {
  auto fail = [&](const std::string &why) -> std::optional<SliceDescriptor> {
    if (failure)
      failure->reason = why;
    return std::nullopt;
  };
  const BufferDecl *buf = p.findBuffer(buffer);
  if (!buf)
    return fail("unknown buffer");
  LoopChain pchain = buildLoopChain(producer);
  if (!pchain.singlePath || pchain.loops.empty())
    return fail("producer is not a single loop path");
  auto paccesses = collectAccesses(producer, buffer);
  const Op *store = nullptr;
  for (const auto &a : paccesses)
    if (a.isStore) {
      if (store)
        return fail("producer has multiple stores of the buffer");
      store = a.op;
    }
  if (!store)
    return fail("producer does not store the buffer");

  auto caccesses = collectAccesses(consumer, buffer);
  std::vector<const AccessInstance *> loads;
  for (const auto &a : caccesses)
    if (!a.isStore)
      loads.push_back(&a);
  if (loads.empty())
    return fail("consumer does not load the buffer");
  for (const auto *l : loads)
    if (static_cast<int>(l->loopChain.size()) < depth)
      return fail("fusion depth exceeds a load's loop depth");
  // All loads must share the first `depth` loops.
  for (const auto *l : loads)
    for (int i = 0; i < depth; ++i)
      if (l->loopChain[i] != loads[0]->loopChain[i])
        return fail("loads do not share the outer loops at this depth");

  SliceDescriptor slice;
  slice.insertionDepth = depth;
  for (int i = 0; i < depth; ++i)
    slice.dstIvs.push_back(loads[0]->loopChain[i]->iv);

  // Per buffer dim, the union [lo, hi] of all loads' ranges.
  size_t rank = buf->shape.size();
  std::vector<AffineExpr> dimLo(rank), dimHi(rank);
  std::vector<bool> wholeDim(rank, false);
  for (const auto *l : loads) {
    // Ranges of this load's inner ivs, innermost-last.
    std::map<std::string, IvRange> innerRanges;
    for (size_t i = depth; i < l->loopChain.size(); ++i) {
      const Op *loop = l->loopChain[i];
      IvRange r;
      if (loop->lower.results.size() != 1 || loop->upper.results.size() != 1) {
        r.wholeDim = true;
      } else {
        AffineExpr llo, lhi, ulo, uhi;
        bool okL = exprRange(loop->lower.results[0], loop->mapOperands,
                             slice.dstIvs, innerRanges, llo, lhi);
        bool okU = exprRange(loop->upper.results[0], loop->mapOperands,
                             slice.dstIvs, innerRanges, ulo, uhi);
        if (okL && okU) {
          r.lo = llo;
          r.hi = (uhi - 1).canonicalize();
        } else {
          r.wholeDim = true;
        }
      }
      innerRanges[loop->iv] = r;
    }
    for (size_t d = 0; d < rank; ++d) {
      AffineExpr lo, hi;
      bool ok = exprRange(l->op->access.results[d], l->op->accessOperands,
                          slice.dstIvs, innerRanges, lo, hi);
      if (!ok) {
        wholeDim[d] = true;
        continue;
      }
      if (dimLo[d].isNull()) {
        dimLo[d] = lo;
        dimHi[d] = hi;
      } else {
        auto dl = constDiff(lo, dimLo[d]);
        auto dh = constDiff(hi, dimHi[d]);
        if (!dl || !dh)
          return fail("load ranges do not differ by constants");
        if (*dl < 0)
          dimLo[d] = lo;
        if (*dh > 0)
          dimHi[d] = hi;
      }
    }
  }

  // Per-buffer-dim privatization facts.
  for (size_t d = 0; d < rank; ++d) {
    if (wholeDim[d] || dimLo[d].isNull()) {
      slice.bufferDimLo.push_back(AffineExpr::constant(0));
      slice.bufferBox.push_back(buf->shape[d]);
    } else {
      slice.bufferDimLo.push_back(dimLo[d]);
      auto ext = constDiff(dimHi[d], dimLo[d]);
      slice.bufferBox.push_back(ext ? *ext + 1 : -1);
    }
  }

  // Invert the producer store access: per constrained dim, a single producer
  // iv with unit coefficient.
  std::vector<AffineExpr> ivLo(pchain.loops.size()), ivHi(pchain.loops.size());
  for (size_t d = 0; d < rank; ++d) {
    const AffineExpr &se = store->access.results[d];
    LinearForm lf = decompose(se);
    if (!lf.divTerms.empty() || !lf.symCoeffs.empty())
      return fail("producer store access is not invertible");
    if (lf.dimCoeffs.empty())
      continue; // constant dim constrains nothing
    if (lf.dimCoeffs.size() > 1)
      return fail("producer store access mixes ivs in one dim");
    auto [dim, coeff] = *lf.dimCoeffs.begin();
    if (coeff != 1)
      return fail("producer store access has non-unit stride");
    const std::string &ivName = store->accessOperands[dim];
    int pos = pchain.indexOf(ivName);
    if (pos < 0)
      return fail("producer store iv not on the loop chain");
    if (wholeDim[d]) {
      // Consumer may read the whole dim: keep original bounds.
      continue;
    }
    AffineExpr lo = (dimLo[d] - lf.constant).canonicalize();
    AffineExpr hi = (dimHi[d] - lf.constant).canonicalize();
    if (ivLo[pos].isNull()) {
      ivLo[pos] = lo;
      ivHi[pos] = hi;
    } else {
      auto dl = constDiff(lo, ivLo[pos]);
      auto dh = constDiff(hi, ivHi[pos]);
      if (!dl || !dh)
        return fail("conflicting producer iv constraints");
      if (*dl > 0)
        ivLo[pos] = lo;
      if (*dh < 0)
        ivHi[pos] = hi;
    }
  }

  unsigned numDims = static_cast<unsigned>(depth);
  for (size_t i = 0; i < pchain.loops.size(); ++i) {
    const Op *loop = pchain.loops[i];
    if (!loop->lower.isSingleConstant() || !loop->upper.isSingleConstant())
      return fail("non-constant producer bounds");
    int64_t olb = loop->lower.singleConstant();
    int64_t oub = loop->upper.singleConstant();
    AffineMap lower, upper;
    lower.numDims = upper.numDims = numDims;
    if (ivLo[i].isNull()) {
      lower.results = {AffineExpr::constant(olb)};
      upper.results = {AffineExpr::constant(oub)};
      slice.boxExtents.push_back(oub - olb);
    } else {
      // Clamp to the original domain; producing max/min bound maps.
      lower.results = {ivLo[i], AffineExpr::constant(olb)};
      upper.results = {(ivHi[i] + 1).canonicalize(), AffineExpr::constant(oub)};
      auto ext = constDiff(ivHi[i], ivLo[i]);
      slice.boxExtents.push_back(ext ? *ext + 1 : -1);
      // Drop redundant clamps when the slice is statically inside the domain.
      if (ext) {
        if (ivLo[i].isConstant()) {
          // Fully constant bounds: intersect numerically.
          int64_t lo = std::max(olb, ivLo[i].value());
          int64_t hi = std::min(oub, ivHi[i].value() + 1);
          lower.results = {AffineExpr::constant(lo)};
          upper.results = {AffineExpr::constant(hi)};
          slice.boxExtents.back() = std::max<int64_t>(0, hi - lo);
        }
      }
    }
    slice.producerBounds.push_back({lower.canonicalize(), upper.canonicalize()});
  }

  // Redundancy: slice iterations summed over destination outer iterations vs
  // the original producer iterations.
  int64_t origIters = countNestIterations(producer);
  if (origIters <= 0)
    return fail("cannot count producer iterations");

  // Enumerate the destination outer domain numerically.
  int64_t totalSlice = 0;
  bool over = false;
  std::function<void(int, std::map<std::string, int64_t> &)> enumerate =
      [&](int level, std::map<std::string, int64_t> &env) {
        if (over)
          return;
        if (level == depth) {
          std::vector<int64_t> dims;
          for (const auto &iv : slice.dstIvs)
            dims.push_back(env[iv]);
          int64_t prod = 1;
          for (const auto &[lo, hi] : slice.producerBounds) {
            int64_t l = lo.evalMax(dims);
            int64_t u = hi.evalMin(dims);
            prod *= std::max<int64_t>(0, u - l);
          }
          totalSlice += prod;
          if (totalSlice > (1ll << 40))
            over = true;
          return;
        }
        const Op *loop = loads[0]->loopChain[level];
        std::vector<int64_t> outerDims;
        for (const auto &name : loop->mapOperands)
          outerDims.push_back(env.count(name) ? env[name] : 0);
        int64_t lb = loop->lower.evalMax(outerDims);
        int64_t ub = loop->upper.evalMin(outerDims);
        for (int64_t v = lb; v < ub && !over; v += loop->step) {
          env[loop->iv] = v;
          enumerate(level + 1, env);
        }
        env.erase(loop->iv);
      };
  std::map<std::string, int64_t> env;
  enumerate(0, env);
  if (over)
    return fail("slice domain too large to evaluate");
  slice.redundancyRatio =
      std::max(0.0, static_cast<double>(totalSlice - origIters) /
                        static_cast<double>(origIters));
  return slice;
}

std::optional<RegionBox>
computeRegionBox(const Program &p, std::span<const AccessInstance> accesses,
                 const std::vector<std::string> &paramIvs) {
  if (accesses.empty())
    return std::nullopt;
  const BufferDecl *buf = p.findBuffer(accesses[0].op->buffer);
  if (!buf)
    return std::nullopt;
  size_t rank = buf->shape.size();
  std::vector<AffineExpr> dimLo(rank), dimHi(rank);
  auto isParam = [&](const std::string &iv) {
    return std::find(paramIvs.begin(), paramIvs.end(), iv) != paramIvs.end();
  };
  for (const auto &a : accesses) {
    std::map<std::string, IvRange> innerRanges;
    for (const Op *loop : a.loopChain) {
      if (isParam(loop->iv))
        continue;
      IvRange r;
      if (loop->lower.results.size() != 1 || loop->upper.results.size() != 1) {
        // Clamped bounds: use the unclamped candidate (first result is the
        // domain constant for lower=max(...), the extent for upper=min(...)).
        AffineExpr lo0 = loop->lower.results[0];
        AffineExpr hi0 = loop->upper.results[0];
        if (lo0.isConstant() && hi0.isConstant()) {
          r.lo = lo0;
          r.hi = (hi0 - 1).canonicalize();
        } else {
          r.wholeDim = true;
        }
      } else {
        AffineExpr llo, lhi, ulo, uhi;
        bool okL = exprRange(loop->lower.results[0], loop->mapOperands,
                             paramIvs, innerRanges, llo, lhi);
        bool okU = exprRange(loop->upper.results[0], loop->mapOperands,
                             paramIvs, innerRanges, ulo, uhi);
        if (okL && okU) {
          r.lo = llo;
          r.hi = (uhi - 1).canonicalize();
        } else {
          r.wholeDim = true;
        }
      }
      innerRanges[loop->iv] = r;
    }
    for (size_t d = 0; d < rank; ++d) {
      AffineExpr lo, hi;
      bool ok = exprRange(a.op->access.results[d], a.op->accessOperands,
                          paramIvs, innerRanges, lo, hi);
      if (!ok) {
        lo = AffineExpr::constant(0);
        hi = AffineExpr::constant(buf->shape[d] - 1);
      }
      if (dimLo[d].isNull()) {
        dimLo[d] = lo;
        dimHi[d] = hi;
      } else {
        auto dl = constDiff(lo, dimLo[d]);
        auto dh = constDiff(hi, dimHi[d]);
        if (!dl || !dh)
          return std::nullopt;
        if (*dl < 0)
          dimLo[d] = lo;
        if (*dh > 0)
          dimHi[d] = hi;
      }
    }
  }
  RegionBox box;
  box.paramIvs = paramIvs;
  for (size_t d = 0; d < rank; ++d) {
    auto ext = constDiff(dimHi[d], dimLo[d]);
    if (!ext)
      return std::nullopt;
    box.lo.push_back(dimLo[d]);
    box.extents.push_back(*ext + 1);
  }
  return box;
}

//===----------------------------------------------------------------------===//
// Nest kind classification
//===----------------------------------------------------------------------===//

namespace {

struct LoadShape {
  enum Kind { Scalar, Identity, Projection, Offset, Complex } kind = Complex;
};

/// Extracts per-dim (iv, offset) facts for an access with constant dims
/// allowed. Fails on div/mod, non-unit coefficients, or multi-iv dims.
bool accessIvSequence(const Op &access, std::vector<std::string> &ivSeq,
                      std::vector<int64_t> &offsets) {
  for (const auto &r : access.access.results) {
    LinearForm lf = decompose(r);
    if (!lf.divTerms.empty() || !lf.symCoeffs.empty())
      return false;
    if (lf.dimCoeffs.empty())
      continue; // constant dim
    if (lf.dimCoeffs.size() > 1)
      return false;
    auto [dim, coeff] = *lf.dimCoeffs.begin();
    if (coeff != 1)
      return false;
    ivSeq.push_back(access.accessOperands[dim]);
    offsets.push_back(lf.constant);
  }
  return true;
}

bool isOrderPreservingSubsequence(const std::vector<std::string> &sub,
                                  const std::vector<std::string> &full) {
  size_t i = 0;
  for (const auto &s : sub) {
    while (i < full.size() && full[i] != s)
      ++i;
    if (i == full.size())
      return false;
    ++i;
  }
  return true;
}

} // namespace

NestKind classifyNestKind(const Program &p, const Op &nestRoot) {
  (void)p;
  LoopChain chain = buildLoopChain(nestRoot);
  if (!chain.singlePath || chain.loops.empty())
    return NestKind::Misc;
  std::vector<std::string> nestIvs;
  for (const Op *loop : chain.loops)
    nestIvs.push_back(loop->iv);

  const Op *deepest = chain.loops.back();
  std::vector<const Op *> loadsV;
  const Op *store = nullptr;
  for (const Op &op : deepest->body) {
    if (op.kind == OpKind::Load)
      loadsV.push_back(&op);
    else if (op.kind == OpKind::Store) {
      if (store)
        return NestKind::Misc;
      store = &op;
    } else if (op.kind != OpKind::Arith) {
      return NestKind::Misc;
    }
  }
  if (!store)
    return NestKind::Misc;

  std::vector<std::string> storeIvs;
  std::vector<int64_t> storeOffsets;
  if (!accessIvSequence(*store, storeIvs, storeOffsets))
    return NestKind::Misc;
  for (int64_t off : storeOffsets)
    if (off != 0)
      return NestKind::Misc;
  // Each store iv must be distinct.
  std::set<std::string> storeIvSet(storeIvs.begin(), storeIvs.end());
  if (storeIvSet.size() != storeIvs.size())
    return NestKind::Misc;

  // Reduction family: the store omits at least one nest iv used by a load,
  // with an associative self-update.
  std::vector<std::string> omitted;
  for (const auto &iv : nestIvs)
    if (!storeIvSet.count(iv))
      omitted.push_back(iv);
  if (!omitted.empty()) {
    bool omittedUsed = false;
    for (const Op *l : loadsV)
      for (const auto &iv : omitted)
        for (const auto &operand : l->accessOperands)
          if (operand == iv)
            omittedUsed = true;
    if (!omittedUsed)
      return NestKind::Misc; // dead loops; be conservative
    if (!isAccumulatorStore(nestRoot, *store))
      return NestKind::Misc;
    // Split accumulator load from data loads.
    std::vector<const Op *> dataLoads;
    for (const Op *l : loadsV) {
      bool isAcc = l->buffer == store->buffer && l->access == store->access &&
                   l->accessOperands == store->accessOperands;
      if (!isAcc)
        dataLoads.push_back(l);
    }
    if (dataLoads.size() == 2) {
      auto ivsOf = [&](const Op *l) {
        std::set<std::string> s;
        for (size_t i = 0; i < l->accessOperands.size(); ++i)
          for (const auto &r : l->access.results)
            if (r.usesDim(static_cast<unsigned>(i)))
              s.insert(l->accessOperands[i]);
        return s;
      };
      std::set<std::string> a = ivsOf(dataLoads[0]);
      std::set<std::string> b = ivsOf(dataLoads[1]);
      std::set<std::string> shared;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                            std::inserter(shared, shared.begin()));
      std::set<std::string> sharedMinusStore;
      for (const auto &iv : shared)
        if (!storeIvSet.count(iv))
          sharedMinusStore.insert(iv);
      std::set<std::string> omittedSet(omitted.begin(), omitted.end());
      // The loads' shared non-store ivs are exactly the reduction ivs.
      if (sharedMinusStore == omittedSet)
        return NestKind::Matmul;
    }
    return NestKind::Reduction;
  }

  // Store covers all nest ivs; require identity order.
  if (storeIvs != nestIvs)
    return NestKind::Misc;

  bool anyOffset = false;
  bool anyFullIdentity = false;
  bool allProjectionsOrScalar = true;
  for (const Op *l : loadsV) {
    std::vector<std::string> ivSeq;
    std::vector<int64_t> offsets;
    if (!accessIvSequence(*l, ivSeq, offsets))
      return NestKind::Misc;
    bool hasOffset = false;
    for (int64_t off : offsets)
      if (off != 0)
        hasOffset = true;
    if (ivSeq.empty()) {
      continue; // scalar/broadcast load
    }
    if (!isOrderPreservingSubsequence(ivSeq, storeIvs))
      return NestKind::Misc;
    if (hasOffset) {
      anyOffset = true;
      allProjectionsOrScalar = false;
    } else if (ivSeq == storeIvs) {
      anyFullIdentity = true;
      allProjectionsOrScalar = false;
    }
  }
  if (anyOffset)
    return NestKind::Stencil;
  if (anyFullIdentity)
    return NestKind::Pointwise;
  if (allProjectionsOrScalar)
    return NestKind::Broadcast;
  return NestKind::Misc;
}

//===----------------------------------------------------------------------===//
// Temporal reuse
//===----------------------------------------------------------------------===//

double temporalReuseFactor(const Program &p, const Op &nestRoot,
                           const std::string &buffer) {
  (void)p;
  auto accesses = collectAccesses(nestRoot, buffer);
  double best = 1.0;
  for (const auto &a : accesses) {
    // Ivs the access uses directly, plus (transitively) the ivs feeding
    // their loop bounds: a tiled intra iv spans a range set by its inter iv,
    // so the inter iv is not "absent" even when the map never names it.
    std::set<std::string> used;
    for (size_t i = 0; i < a.op->accessOperands.size(); ++i)
      for (const auto &r : a.op->access.results)
        if (r.usesDim(static_cast<unsigned>(i)))
          used.insert(a.op->accessOperands[i]);
    bool grew = true;
    while (grew) {
      grew = false;
      for (const Op *loop : a.loopChain) {
        if (!used.count(loop->iv))
          continue;
        for (const auto &operand : loop->mapOperands)
          if (used.insert(operand).second)
            grew = true;
      }
    }
    double factor = 1.0;
    for (const Op *loop : a.loopChain) {
      if (used.count(loop->iv))
        continue;
      // Evaluate the trip count with outer ivs at zero (nominal tile).
      std::vector<int64_t> dims(loop->mapOperands.size(), 0);
      int64_t trip = std::max<int64_t>(
          0, (loop->upper.evalMin(dims) - loop->lower.evalMax(dims) +
              loop->step - 1) /
                 loop->step);
      factor *= static_cast<double>(std::max<int64_t>(1, trip));
    }
    best = std::max(best, factor);
  }
  return best;
}

} // namespace af
