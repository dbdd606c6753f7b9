//===- frontend.h - Tensor-op graph lowering ---------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//
//
// Lowers a small tensor-operator graph (JSON) through bufferization to affine
// loop nests: one global buffer per tensor edge, one (possibly imperfect)
// nest per op, kind attributes assigned by classification.
//
//===----------------------------------------------------------------------===//

#ifndef AF_FRONTEND_H
#define AF_FRONTEND_H

#include "af/ir.h"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace af {

struct GraphError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TensorDesc {
  std::string id;
  std::vector<int64_t> shape;
  ElementType dtype = ElementType::F32;
};

struct TensorOpNode {
  std::string op;
  std::vector<std::string> inputs;
  std::string output;
  // Parsed attributes (op-specific).
  std::vector<int64_t> perm;      // transpose
  std::vector<int64_t> dims;      // broadcast_in_dim
  int64_t strideY = 1, strideX = 1;
  int64_t dilY = 1, dilX = 1;
  bool samePadding = false;
  bool transposed = false;
  std::string reduceOp;           // "sum" | "max"
  int64_t axis = -1;              // reduce / softmax
  double scale = 1.0;             // quantize / dequantize
};

struct TensorGraph {
  std::vector<TensorDesc> tensors;
  std::vector<TensorOpNode> ops;
  std::vector<std::string> outputs; // explicit output ids (optional)

  const TensorDesc *find(const std::string &id) const;
  std::vector<std::string> inputIds() const;  // tensors never produced
  std::vector<std::string> outputIds() const; // declared or never consumed
};

/// Parses the graph JSON: {"tensors": [{"id","shape","dtype"}],
/// "ops": [{"op","inputs","output","attrs"}], "outputs": [...]}.
/// Throws GraphError on malformed documents or unsupported ops.
TensorGraph parseGraphJson(const std::string &text);

/// Shape/type propagation check; throws GraphError("shape-mismatch ...") or
/// GraphError("unsupported-op ...").
void checkGraph(const TensorGraph &g);

/// Conv output geometry shared with oracles and the implicit-GEMM rewrite.
struct ConvGeometry {
  int64_t outH, outW, padY, padX;
};
ConvGeometry convGeometry(int64_t inH, int64_t inW, int64_t kH, int64_t kW,
                          const TensorOpNode &node);

/// Lowers a checked graph to affine nests in function "main". One global
/// buffer per tensor edge; every nest carries a kind attribute.
Program lowerGraphToAffine(const TensorGraph &g, const TargetConfig &cfg);

} // namespace af

#endif // AF_FRONTEND_H
