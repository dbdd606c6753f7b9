//===- ir.h - Region-based affine loop-nest IR -----------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//
//
// The loop-nest IR every pass consumes and produces: buffers with shapes,
// element types and memory spaces; for/parallel loops with affine bound maps;
// loads/stores through affine access maps; scalar arithmetic in SSA form;
// 16x16 matrix-fragment ops; async copies; and a per-op attribute map.
//
//===----------------------------------------------------------------------===//

#ifndef AF_IR_H
#define AF_IR_H

#include "af/affine.h"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace af {

enum class ElementType { F32, F16, I8, I32 };

int elementWidthBytes(ElementType t);
const char *elementTypeName(ElementType t);
std::optional<ElementType> parseElementType(const std::string &s);
bool isIntType(ElementType t);

enum class MemorySpace { Global, Shared, Register };

const char *memorySpaceName(MemorySpace s);
std::optional<MemorySpace> parseMemorySpace(const std::string &s);

struct BufferDecl {
  std::string id; // "%name"
  std::vector<int64_t> shape;
  ElementType elementType = ElementType::F32;
  MemorySpace space = MemorySpace::Global;
  bool isInput = false;
  bool isOutput = false;

  int64_t numElements() const {
    int64_t n = 1;
    for (int64_t d : shape)
      n *= d;
    return n;
  }
  int64_t byteSize() const { return numElements() * elementWidthBytes(elementType); }
  /// Row-major strides in elements.
  std::vector<int64_t> strides() const;

  bool operator==(const BufferDecl &) const = default;
};

/// Attribute values: flags, integers, quoted strings, or bare symbols
/// (printed in braces, e.g. matmul_info={virtual_matmul}).
struct AttrValue {
  enum class Kind { Flag, Int, Str, Sym };
  Kind kind = Kind::Flag;
  int64_t i = 0;
  std::string s;

  static AttrValue flag() { return {}; }
  static AttrValue num(int64_t v) { return {Kind::Int, v, {}}; }
  static AttrValue str(std::string v) { return {Kind::Str, 0, std::move(v)}; }
  static AttrValue sym(std::string v) { return {Kind::Sym, 0, std::move(v)}; }

  bool operator==(const AttrValue &) const = default;
};

using Attrs = std::map<std::string, AttrValue>;

namespace attr {
inline constexpr const char *kKind = "kind";
inline constexpr const char *kParallel = "parallel";
inline constexpr const char *kCopyNest = "copy_nest";
inline constexpr const char *kComputeNest = "compute_nest";
inline constexpr const char *kTileSpace = "tile_space";
inline constexpr const char *kTarget = "target";
inline constexpr const char *kMatmulInfo = "matmul_info";
} // namespace attr

enum class NestKind { Pointwise, Broadcast, Stencil, Reduction, Matmul, Misc };

const char *nestKindName(NestKind k);
std::optional<NestKind> parseNestKind(const std::string &s);

enum class OpKind {
  For,
  Parallel,
  Load,
  Store,
  Arith,
  MmaLoad,
  MmaCompute,
  MmaStore,
  AsyncCopy,
  AwaitCopies,
  Alloc,
  Dealloc,
};

enum class ArithKind {
  Add,
  Mul,
  Sub,
  Div,
  Max,
  Exp,
  Negate,
  Cast,
  Fma,
  Select,
  CmpEq,
  CmpLt,
  CmpLe,
  Quant,
  Dequant,
};

const char *arithKindName(ArithKind k);
std::optional<ArithKind> parseArithKind(const std::string &s);
int arithArity(ArithKind k);
/// Mul-add counts as 2 per the flop convention; compares/selects are free.
int arithFlops(ArithKind k);

/// An SSA value reference or an immediate constant.
struct Operand {
  bool isImm = false;
  std::string value;   // "%name" when !isImm
  double imm = 0.0;    // when isImm
  bool immIsInt = false;

  static Operand val(std::string name) { return {false, std::move(name), 0.0, false}; }
  static Operand immF(double v) { return {true, {}, v, false}; }
  static Operand immI(int64_t v) { return {true, {}, static_cast<double>(v), true}; }

  bool operator==(const Operand &) const = default;
};

enum class MmaRole { A, B, C };

struct Op {
  OpKind kind;
  Attrs attrs;

  // For: iv; Parallel: ivs. Bound maps' dims bind to mapOperands (outer ivs).
  std::string iv;
  std::vector<std::string> ivs;
  std::vector<std::string> mapOperands;
  AffineMap lower, upper;               // For: single pair.
  std::vector<AffineMap> lowers, uppers; // Parallel: one pair per iv.
  int64_t step = 1;
  std::vector<Op> body; // For / Parallel / AsyncCopy.

  // Load/Store/MmaLoad/MmaStore/Alloc/Dealloc.
  std::string buffer;
  AffineMap access;                      // dims bind to accessOperands
  std::vector<std::string> accessOperands;

  // Value-producing ops.
  std::string result;
  ArithKind arith = ArithKind::Add;
  std::vector<Operand> operands;
  ElementType castType = ElementType::F32; // Cast target.
  double scale = 1.0;                      // Quant/Dequant.
  MmaRole mmaRole = MmaRole::A;

  // AsyncCopy/AwaitCopies.
  std::string tag;
  std::string srcBuffer; // AsyncCopy: dst is `buffer`.

  bool operator==(const Op &) const = default;

  bool isLoop() const { return kind == OpKind::For || kind == OpKind::Parallel; }
  bool hasAttr(const std::string &key) const { return attrs.count(key) != 0; }
  std::optional<std::string> strAttr(const std::string &key) const;
  std::optional<NestKind> kindAttr() const;
  void setKindAttr(NestKind k);
};

// --- Op builders ---------------------------------------------------------

Op makeFor(std::string iv, AffineMap lower, AffineMap upper, int64_t step,
           std::vector<std::string> mapOperands = {});
Op makeForConst(std::string iv, int64_t lower, int64_t upper, int64_t step = 1);
Op makeLoad(std::string result, std::string buffer, AffineMap access,
            std::vector<std::string> accessOperands);
Op makeStore(Operand value, std::string buffer, AffineMap access,
             std::vector<std::string> accessOperands);
Op makeArith(std::string result, ArithKind kind, std::vector<Operand> operands);
Op makeAlloc(std::string buffer);
Op makeDealloc(std::string buffer);

struct Function {
  std::string name;
  std::vector<Op> body;

  bool operator==(const Function &) const = default;
};

/// Target/config knobs shared by the passes (see tiling module docs).
struct TargetConfig {
  int64_t sharedCapacityBytes = 48 * 1024;
  int64_t registerElemsCap = 256;
  int64_t maxVectorWidthElems = 8;
  int64_t mmaTile = 16;
  double redundancyThreshold = 0.10;
  int64_t copyStages = 2;
  // Default tile sizes per kind.
  std::vector<int64_t> matmulTiles = {64, 64, 32};
  int64_t mmaFragmentTile = 16;
  int64_t stencilInnerTile = 128;
  // Frontend: reduction loops with total trip count <= this unroll into
  // expression form at lowering time (gives stencil-form depthwise convs).
  int64_t unrollReductionLimit = 8;
  // Attention knobs.
  int64_t attentionKBlock = 16;
  int64_t attentionMaxHeadDim = 128;
  int64_t attentionMinSeqLen = 1;
  // Optional per-run override of stencil destination tiles (z, y, x order).
  std::vector<int64_t> stencilTilesOverride;

  bool operator==(const TargetConfig &) const = default;
};

struct Program {
  std::vector<BufferDecl> buffers;
  std::vector<Function> functions;
  TargetConfig target;

  const BufferDecl *findBuffer(const std::string &id) const;
  BufferDecl *findBuffer(const std::string &id);
  const Function *findFunction(const std::string &name) const;
  Function *findFunction(const std::string &name);
  void eraseBuffer(const std::string &id);

  bool operator==(const Program &other) const {
    return buffers == other.buffers && functions == other.functions;
  }
};

// --- Traversal and rewriting helpers -------------------------------------

/// Pre-order walk over an op tree (including `op` itself).
void walkOps(const Op &op, const std::function<void(const Op &)> &fn);
void walkOps(Op &op, const std::function<void(Op &)> &fn);
void walkOps(const std::vector<Op> &ops, const std::function<void(const Op &)> &fn);
void walkOps(std::vector<Op> &ops, const std::function<void(Op &)> &fn);

/// Collects the loop ivs on the path from the root to each op; fn receives
/// every op with the enclosing iv stack (outermost first).
void walkWithIvs(const Op &op, std::vector<std::string> &stack,
                 const std::function<void(const Op &, const std::vector<std::string> &)> &fn);

/// All buffers loaded (resp. stored, incl. mma and async-copy) under `op`.
std::vector<std::string> buffersRead(const Op &op);
std::vector<std::string> buffersWritten(const Op &op);
bool readsBuffer(const Op &op, const std::string &id);
bool writesBuffer(const Op &op, const std::string &id);

/// Renames every SSA value and iv defined under `op` by appending `suffix`,
/// leaving references to outer (undefined-here) names untouched.
void uniquifyNames(Op &op, const std::string &suffix);
void uniquifyNames(std::vector<Op> &ops, const std::string &suffix);

/// Fresh-name helper: returns "%<base><n>" unique across the program.
class NameGen {
public:
  explicit NameGen(const Program &p);
  std::string fresh(const std::string &base);

private:
  std::map<std::string, int> counters;
  std::vector<std::string> taken;
  bool isTaken(const std::string &s) const;
};

/// Remaps dim names inside every access/bound map under `op`: wherever an
/// operand name appears in `from`, replaces the operand with `to[i]`.
void renameIvReferences(Op &op, const std::map<std::string, std::string> &renames);

/// Substitutes a constant value for an iv in all maps under `op` (used when
/// eliminating extent-1 loops).
void substituteIvConstant(Op &op, const std::string &iv, int64_t value);

/// Drops operands whose dim is unused by any map result, renumbering the
/// remaining dims. The textual format's canonical form: operand lists contain
/// exactly the referenced ivs.
void compactAccess(AffineMap &map, std::vector<std::string> &operands);

/// Replaces every reference to buffer `fromId` with `toId`, rewriting access
/// maps through `rebase`: newAccess[d] = access[d] - rebase[d] where rebase
/// results are expressed over the same access operands. Pass an empty map to
/// keep accesses unchanged.
struct BufferRebase {
  std::string fromId;
  std::string toId;
  // For each buffer dim of `from`, an expr over namedIvs to subtract.
  std::vector<AffineExpr> offsets;
  std::vector<std::string> offsetIvs;
  // Optional dim remap: target dim j of `to` takes source dim srcDims[j]
  // (identity when empty and ranks match).
};
void rebaseBufferAccesses(Op &op, const BufferRebase &rebase);

int64_t constTripCount(const Op &loop); // -1 when bounds are not constant.

} // namespace af

#endif // AF_IR_H
