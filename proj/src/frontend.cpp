//===- frontend.cpp - Tensor-op graph lowering ---------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/frontend.h"

#include "af/analysis.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cassert>
#include <set>

using json = nlohmann::json;

namespace af {

const TensorDesc *TensorGraph::find(const std::string &id) const {
  for (const auto &t : tensors)
    if (t.id == id)
      return &t;
  return nullptr;
}

std::vector<std::string> TensorGraph::inputIds() const {
  std::set<std::string> produced;
  for (const auto &op : ops)
    produced.insert(op.output);
  std::vector<std::string> out;
  for (const auto &t : tensors)
    if (!produced.count(t.id))
      out.push_back(t.id);
  return out;
}

std::vector<std::string> TensorGraph::outputIds() const {
  if (!outputs.empty())
    return outputs;
  std::set<std::string> consumed;
  for (const auto &op : ops)
    for (const auto &in : op.inputs)
      consumed.insert(in);
  std::set<std::string> produced;
  for (const auto &op : ops)
    produced.insert(op.output);
  std::vector<std::string> out;
  for (const auto &t : tensors)
    if (produced.count(t.id) && !consumed.count(t.id))
      out.push_back(t.id);
  return out;
}

TensorGraph parseGraphJson(const std::string &text) {
  json g;
  try {
    g = json::parse(text);
  } catch (const json::exception &e) {
    throw GraphError(std::string("graph json parse error: ") + e.what());
  }
  TensorGraph graph;
  if (!g.contains("tensors") || !g.contains("ops"))
    throw GraphError("graph json must contain \"tensors\" and \"ops\"");
  for (const auto &t : g.at("tensors")) {
    TensorDesc d;
    d.id = t.at("id");
    d.shape = t.at("shape").get<std::vector<int64_t>>();
    auto ty = parseElementType(t.value("dtype", "f32"));
    if (!ty)
      throw GraphError("unknown dtype for tensor " + d.id);
    d.dtype = *ty;
    graph.tensors.push_back(std::move(d));
  }
  for (const auto &n : g.at("ops")) {
    TensorOpNode node;
    node.op = n.at("op");
    node.inputs = n.at("inputs").get<std::vector<std::string>>();
    node.output = n.at("output");
    json attrs = n.value("attrs", json::object());
    if (attrs.contains("perm"))
      node.perm = attrs.at("perm").get<std::vector<int64_t>>();
    if (attrs.contains("dims"))
      node.dims = attrs.at("dims").get<std::vector<int64_t>>();
    auto pair = [&](const char *key, int64_t &a, int64_t &b) {
      if (!attrs.contains(key))
        return;
      const json &v = attrs.at(key);
      if (v.is_array()) {
        a = v[0].get<int64_t>();
        b = v[1].get<int64_t>();
      } else {
        a = b = v.get<int64_t>();
      }
    };
    pair("stride", node.strideY, node.strideX);
    pair("dilation", node.dilY, node.dilX);
    node.samePadding = attrs.value("padding", "valid") == std::string("same");
    node.transposed = attrs.value("transposed", false);
    if (attrs.contains("op"))
      node.reduceOp = attrs.at("op");
    if (attrs.contains("axis"))
      node.axis = attrs.at("axis");
    if (attrs.contains("scale"))
      node.scale = attrs.at("scale");
    graph.ops.push_back(std::move(node));
  }
  if (g.contains("outputs"))
    graph.outputs = g.at("outputs").get<std::vector<std::string>>();
  return graph;
}

ConvGeometry convGeometry(int64_t inH, int64_t inW, int64_t kH, int64_t kW,
                          const TensorOpNode &node) {
  ConvGeometry d{};
  if (!node.transposed) {
    if (node.samePadding) {
      d.outH = (inH + node.strideY - 1) / node.strideY;
      d.outW = (inW + node.strideX - 1) / node.strideX;
      int64_t padTotalY = std::max<int64_t>(
          0, (d.outH - 1) * node.strideY + (kH - 1) * node.dilY + 1 - inH);
      int64_t padTotalX = std::max<int64_t>(
          0, (d.outW - 1) * node.strideX + (kW - 1) * node.dilX + 1 - inW);
      d.padY = padTotalY / 2;
      d.padX = padTotalX / 2;
    } else {
      d.outH = (inH - (kH - 1) * node.dilY - 1) / node.strideY + 1;
      d.outW = (inW - (kW - 1) * node.dilX - 1) / node.strideX + 1;
    }
  } else {
    if (node.samePadding) {
      d.outH = inH * node.strideY;
      d.outW = inW * node.strideX;
      int64_t padTotalY = (kH - 1) * node.dilY + 1 - node.strideY;
      int64_t padTotalX = (kW - 1) * node.dilX + 1 - node.strideX;
      if (padTotalY < 0 || padTotalX < 0)
        throw GraphError("unsupported-op: transposed same-padding with "
                         "stride exceeding the kernel span");
      d.padY = padTotalY / 2;
      d.padX = padTotalX / 2;
    } else {
      d.outH = (inH - 1) * node.strideY + (kH - 1) * node.dilY + 1;
      d.outW = (inW - 1) * node.strideX + (kW - 1) * node.dilX + 1;
    }
  }
  return d;
}

namespace {

const std::set<std::string> kSupportedOps = {
    "conv2d",    "matmul",   "batch_matmul", "transpose",
    "add",       "mul",      "sub",          "exp",
    "max",       "broadcast_in_dim", "reduce", "softmax",
    "reshape",   "quantize", "dequantize"};

std::vector<int64_t> expectedShape(const TensorGraph &g,
                                   const TensorOpNode &node) {
  auto in = [&](size_t i) -> const TensorDesc & {
    const TensorDesc *t = g.find(node.inputs.at(i));
    if (!t)
      throw GraphError("unknown tensor " + node.inputs.at(i));
    return *t;
  };
  if (node.op == "add" || node.op == "mul" || node.op == "sub" ||
      node.op == "max") {
    if (in(0).shape != in(1).shape)
      throw GraphError("shape-mismatch: elementwise operands of " +
                       node.output);
    return in(0).shape;
  }
  if (node.op == "exp" || node.op == "softmax" || node.op == "quantize" ||
      node.op == "dequantize")
    return in(0).shape;
  if (node.op == "transpose") {
    const auto &s = in(0).shape;
    if (node.perm.size() != s.size())
      throw GraphError("shape-mismatch: transpose perm rank");
    std::vector<int64_t> out(s.size());
    for (size_t d = 0; d < s.size(); ++d)
      out[d] = s[node.perm[d]];
    return out;
  }
  if (node.op == "broadcast_in_dim") {
    const TensorDesc *outT = g.find(node.output);
    if (!outT)
      throw GraphError("unknown tensor " + node.output);
    const auto &s = in(0).shape;
    if (node.dims.size() != s.size())
      throw GraphError("shape-mismatch: broadcast_in_dim dims rank");
    for (size_t d = 0; d < s.size(); ++d)
      if (outT->shape.at(node.dims[d]) != s[d])
        throw GraphError("shape-mismatch: broadcast_in_dim extents");
    return outT->shape;
  }
  if (node.op == "reshape") {
    const TensorDesc *outT = g.find(node.output);
    if (!outT)
      throw GraphError("unknown tensor " + node.output);
    int64_t inN = 1, outN = 1;
    for (int64_t d : in(0).shape)
      inN *= d;
    for (int64_t d : outT->shape)
      outN *= d;
    if (inN != outN)
      throw GraphError("shape-mismatch: reshape element count");
    return outT->shape;
  }
  if (node.op == "reduce") {
    const auto &s = in(0).shape;
    int64_t axis = node.axis < 0 ? node.axis + s.size() : node.axis;
    if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
      throw GraphError("shape-mismatch: reduce axis out of range");
    std::vector<int64_t> out;
    for (size_t d = 0; d < s.size(); ++d)
      if (static_cast<int64_t>(d) != axis)
        out.push_back(s[d]);
    if (out.empty())
      out.push_back(1);
    return out;
  }
  if (node.op == "matmul") {
    const auto &a = in(0).shape;
    const auto &b = in(1).shape;
    if (a.size() != 2 || b.size() != 2 || a[1] != b[0])
      throw GraphError("shape-mismatch: matmul operands of " + node.output);
    return {a[0], b[1]};
  }
  if (node.op == "batch_matmul") {
    const auto &a = in(0).shape;
    const auto &b = in(1).shape;
    if (a.size() != b.size() || a.size() < 2)
      throw GraphError("shape-mismatch: batch_matmul rank");
    for (size_t d = 0; d + 2 < a.size(); ++d)
      if (a[d] != b[d])
        throw GraphError("shape-mismatch: batch_matmul batch dims");
    if (a.back() != b[b.size() - 2])
      throw GraphError("shape-mismatch: batch_matmul contraction");
    std::vector<int64_t> out(a.begin(), a.end() - 1);
    out.push_back(b.back());
    return out;
  }
  if (node.op == "conv2d") {
    const auto &inS = in(0).shape;
    const auto &wS = in(1).shape;
    if (inS.size() != 4 || wS.size() != 4)
      throw GraphError("shape-mismatch: conv2d operands must be rank 4");
    int64_t ic = node.transposed ? wS[0] : wS[1];
    if (inS[1] != ic)
      throw GraphError("shape-mismatch: conv2d channel count");
    ConvGeometry geo = convGeometry(inS[2], inS[3], wS[2], wS[3], node);
    if (geo.outH <= 0 || geo.outW <= 0)
      throw GraphError("shape-mismatch: conv2d spatial dims not positive");
    int64_t oc = node.transposed ? wS[1] : wS[0];
    return {inS[0], oc, geo.outH, geo.outW};
  }
  throw GraphError("unsupported-op: " + node.op);
}

} // namespace

void checkGraph(const TensorGraph &g) {
  std::set<std::string> seen;
  for (const auto &t : g.tensors) {
    if (!seen.insert(t.id).second)
      throw GraphError("duplicate tensor id " + t.id);
    for (int64_t d : t.shape)
      if (d <= 0)
        throw GraphError("non-positive extent in tensor " + t.id);
  }
  std::set<std::string> defined;
  for (const auto &id : g.inputIds())
    defined.insert(id);
  for (const auto &node : g.ops) {
    if (!kSupportedOps.count(node.op))
      throw GraphError("unsupported-op: " + node.op);
    for (const auto &in : node.inputs) {
      if (!g.find(in))
        throw GraphError("unknown tensor " + in);
      if (!defined.count(in))
        throw GraphError("tensor " + in + " used before being produced");
    }
    const TensorDesc *out = g.find(node.output);
    if (!out)
      throw GraphError("unknown tensor " + node.output);
    auto shape = expectedShape(g, node);
    if (shape != out->shape)
      throw GraphError("shape-mismatch: " + node.output + " declared shape "
                       "does not match op result");
    defined.insert(node.output);
  }
}

//===----------------------------------------------------------------------===//
// Lowering
//===----------------------------------------------------------------------===//

namespace {

/// Wraps `body` in loops, outermost first.
Op wrapLoops(std::vector<Op> loops, std::vector<Op> body) {
  assert(!loops.empty());
  loops.back().body = std::move(body);
  for (size_t i = loops.size() - 1; i > 0; --i) {
    std::vector<Op> inner;
    inner.push_back(std::move(loops[i]));
    loops[i - 1].body = std::move(inner);
  }
  return std::move(loops[0]);
}

class Lowerer {
public:
  Lowerer(const TensorGraph &g, const TargetConfig &cfg) : graph(g), cfg(cfg) {
    program.target = cfg;
  }

  Program run() {
    auto inputs = graph.inputIds();
    auto outputs = graph.outputIds();
    for (const auto &t : graph.tensors) {
      BufferDecl b;
      b.id = "%" + t.id;
      b.shape = t.shape;
      b.elementType = t.dtype;
      b.space = MemorySpace::Global;
      b.isInput = std::find(inputs.begin(), inputs.end(), t.id) != inputs.end();
      b.isOutput =
          std::find(outputs.begin(), outputs.end(), t.id) != outputs.end();
      program.buffers.push_back(std::move(b));
    }
    names = std::make_unique<NameGen>(program);
    Function f;
    f.name = "main";
    for (const auto &node : graph.ops)
      lowerOp(node, f.body);
    program.functions.push_back(std::move(f));
    // Assign kind attributes by classification.
    for (Op &op : program.functions[0].body)
      if (op.kind == OpKind::For && !op.hasAttr(attr::kKind))
        op.setKindAttr(classifyNestKind(program, op));
    return std::move(program);
  }

private:
  const TensorGraph &graph;
  TargetConfig cfg;
  Program program;
  std::unique_ptr<NameGen> names;

  const TensorDesc &tensor(const std::string &id) const {
    const TensorDesc *t = graph.find(id);
    assert(t);
    return *t;
  }

  /// A loop frame over `extents`: one iv per dim with extent > 1 (at least
  /// one loop overall), constants elsewhere.
  struct Frame {
    std::vector<Op> loops;            // outermost first
    std::vector<AffineExpr> idx;      // per dim, over `ivs`
    std::vector<std::string> ivs;     // loop ivs in order
    std::vector<int64_t> extents;
  };

  Frame makeFrame(const std::vector<int64_t> &extents,
                  const std::vector<std::string> &baseNames) {
    Frame fr;
    fr.extents = extents;
    unsigned nextDim = 0;
    for (size_t d = 0; d < extents.size(); ++d) {
      bool needLoop =
          extents[d] > 1 ||
          (d + 1 == extents.size() && fr.loops.empty());
      if (needLoop) {
        std::string iv = names->fresh(
            d < baseNames.size() ? baseNames[d] : "i" + std::to_string(d));
        fr.loops.push_back(makeForConst(iv, 0, extents[d]));
        fr.ivs.push_back(iv);
        fr.idx.push_back(AffineExpr::dim(nextDim++));
      } else {
        fr.idx.push_back(AffineExpr::constant(0));
      }
    }
    return fr;
  }

  /// Builds a (map, operands) access from per-dim exprs over frame iv dims.
  static std::pair<AffineMap, std::vector<std::string>>
  access(const Frame &fr, std::vector<AffineExpr> exprs) {
    AffineMap map(static_cast<unsigned>(fr.ivs.size()), 0, std::move(exprs));
    std::vector<std::string> operands = fr.ivs;
    for (auto &r : map.results)
      r = r.canonicalize();
    compactAccess(map, operands);
    return {map, operands};
  }

  Op load(const Frame &fr, std::string result, const std::string &buffer,
          std::vector<AffineExpr> exprs) {
    auto [map, operands] = access(fr, std::move(exprs));
    return makeLoad(std::move(result), buffer, map, operands);
  }

  Op store(const Frame &fr, Operand value, const std::string &buffer,
           std::vector<AffineExpr> exprs) {
    auto [map, operands] = access(fr, std::move(exprs));
    return makeStore(std::move(value), buffer, map, operands);
  }

  void lowerOp(const TensorOpNode &node, std::vector<Op> &out) {
    if (node.op == "add" || node.op == "mul" || node.op == "sub" ||
        node.op == "max") {
      ArithKind k = node.op == "add"   ? ArithKind::Add
                    : node.op == "mul" ? ArithKind::Mul
                    : node.op == "sub" ? ArithKind::Sub
                                       : ArithKind::Max;
      lowerElementwiseBinary(node, k, out);
    } else if (node.op == "exp") {
      lowerElementwiseUnary(node, ArithKind::Exp, out);
    } else if (node.op == "quantize") {
      lowerElementwiseUnary(node, ArithKind::Quant, out);
    } else if (node.op == "dequantize") {
      lowerElementwiseUnary(node, ArithKind::Dequant, out);
    } else if (node.op == "transpose") {
      lowerTranspose(node, out);
    } else if (node.op == "broadcast_in_dim") {
      lowerBroadcast(node, out);
    } else if (node.op == "reshape") {
      lowerReshape(node, out);
    } else if (node.op == "reduce") {
      lowerReduce(node, node.reduceOp == "max", "%" + node.inputs[0],
                  "%" + node.output, out);
    } else if (node.op == "softmax") {
      lowerSoftmax(node, out);
    } else if (node.op == "matmul" || node.op == "batch_matmul") {
      lowerMatmul(node, out);
    } else if (node.op == "conv2d") {
      lowerConv(node, out);
    } else {
      throw GraphError("unsupported-op: " + node.op);
    }
  }

  void lowerElementwiseBinary(const TensorOpNode &node, ArithKind k,
                              std::vector<Op> &out) {
    const auto &shape = tensor(node.output).shape;
    Frame fr = makeFrame(shape, {});
    std::string a = names->fresh("v"), b = names->fresh("v"),
                r = names->fresh("v");
    std::vector<Op> body;
    body.push_back(load(fr, a, "%" + node.inputs[0], fr.idx));
    body.push_back(load(fr, b, "%" + node.inputs[1], fr.idx));
    body.push_back(makeArith(r, k, {Operand::val(a), Operand::val(b)}));
    body.push_back(store(fr, Operand::val(r), "%" + node.output, fr.idx));
    out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
  }

  void lowerElementwiseUnary(const TensorOpNode &node, ArithKind k,
                             std::vector<Op> &out) {
    const auto &shape = tensor(node.output).shape;
    Frame fr = makeFrame(shape, {});
    std::string a = names->fresh("v"), r = names->fresh("v");
    std::vector<Op> body;
    body.push_back(load(fr, a, "%" + node.inputs[0], fr.idx));
    Op arith = makeArith(r, k, {Operand::val(a)});
    arith.scale = node.scale;
    body.push_back(std::move(arith));
    body.push_back(store(fr, Operand::val(r), "%" + node.output, fr.idx));
    out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
  }

  void lowerTranspose(const TensorOpNode &node, std::vector<Op> &out) {
    const auto &shape = tensor(node.output).shape;
    Frame fr = makeFrame(shape, {});
    // out[d] = in[perm[d]]: input dim perm[d] is indexed by output iv d.
    std::vector<AffineExpr> inIdx(shape.size());
    for (size_t d = 0; d < shape.size(); ++d)
      inIdx[node.perm[d]] = fr.idx[d];
    std::string v = names->fresh("v");
    std::vector<Op> body;
    body.push_back(load(fr, v, "%" + node.inputs[0], std::move(inIdx)));
    body.push_back(store(fr, Operand::val(v), "%" + node.output, fr.idx));
    out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
  }

  void lowerBroadcast(const TensorOpNode &node, std::vector<Op> &out) {
    const auto &shape = tensor(node.output).shape;
    Frame fr = makeFrame(shape, {});
    std::vector<AffineExpr> inIdx;
    for (size_t d = 0; d < node.dims.size(); ++d)
      inIdx.push_back(fr.idx[node.dims[d]]);
    std::string v = names->fresh("v");
    std::vector<Op> body;
    body.push_back(load(fr, v, "%" + node.inputs[0], std::move(inIdx)));
    body.push_back(store(fr, Operand::val(v), "%" + node.output, fr.idx));
    out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
  }

  void lowerReshape(const TensorOpNode &node, std::vector<Op> &out) {
    const auto &outShape = tensor(node.output).shape;
    const auto &inShape = tensor(node.inputs[0]).shape;
    Frame fr = makeFrame(outShape, {});
    // Extent-1 insertion/removal keeps a direct dim correspondence.
    auto strip = [](const std::vector<int64_t> &s) {
      std::vector<int64_t> r;
      for (int64_t d : s)
        if (d != 1)
          r.push_back(d);
      return r;
    };
    std::vector<AffineExpr> inIdx;
    if (strip(inShape) == strip(outShape)) {
      size_t oi = 0;
      for (size_t d = 0; d < inShape.size(); ++d) {
        if (inShape[d] == 1) {
          inIdx.push_back(AffineExpr::constant(0));
          continue;
        }
        while (oi < outShape.size() && outShape[oi] == 1)
          ++oi;
        inIdx.push_back(fr.idx[oi++]);
      }
    } else {
      // General flat-index remap through floordiv/mod.
      AffineExpr flat = AffineExpr::constant(0);
      int64_t stride = 1;
      for (int d = static_cast<int>(outShape.size()) - 1; d >= 0; --d) {
        flat = flat + fr.idx[d] * stride;
        stride *= outShape[d];
      }
      std::vector<int64_t> inStrides(inShape.size(), 1);
      for (int d = static_cast<int>(inShape.size()) - 2; d >= 0; --d)
        inStrides[d] = inStrides[d + 1] * inShape[d + 1];
      for (size_t d = 0; d < inShape.size(); ++d) {
        AffineExpr e = flat.floorDiv(inStrides[d]);
        if (d > 0)
          e = e.mod(inShape[d]);
        inIdx.push_back(e);
      }
    }
    std::string v = names->fresh("v");
    std::vector<Op> body;
    body.push_back(load(fr, v, "%" + node.inputs[0], std::move(inIdx)));
    body.push_back(store(fr, Operand::val(v), "%" + node.output, fr.idx));
    out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
  }

  /// Reduce along `axis` of the input, writing the rank-reduced output.
  /// The reduction loop always runs innermost; the init store sits right
  /// before it (one imperfect nest).
  void lowerReduce(const TensorOpNode &node, bool isMax,
                   const std::string &inBuf, const std::string &outBuf,
                   std::vector<Op> &out) {
    const auto &inShape = tensor(node.inputs[0]).shape;
    int64_t axis = node.axis < 0
                       ? node.axis + static_cast<int64_t>(inShape.size())
                       : node.axis;
    lowerReduceShaped(inShape, axis, isMax, inBuf, outBuf, out);
  }

  void lowerSoftmax(const TensorOpNode &node, std::vector<Op> &out) {
    const TensorDesc &in = tensor(node.inputs[0]);
    int64_t axis = node.axis < 0
                       ? node.axis + static_cast<int64_t>(in.shape.size())
                       : node.axis;
    // Intermediates: row max, shifted exp, row sum.
    std::vector<int64_t> redShape;
    for (size_t d = 0; d < in.shape.size(); ++d)
      if (static_cast<int64_t>(d) != axis)
        redShape.push_back(in.shape[d]);
    if (redShape.empty())
      redShape.push_back(1);
    std::string mBuf = addBuffer(node.output + ".rowmax", redShape, in.dtype);
    std::string eBuf = addBuffer(node.output + ".exp", in.shape, in.dtype);
    std::string sBuf = addBuffer(node.output + ".rowsum", redShape, in.dtype);

    // 1) row max (reduction)
    TensorOpNode rm = node;
    rm.axis = axis;
    lowerReduce(rm, /*isMax=*/true, "%" + node.inputs[0], mBuf, out);
    // 2) shifted exp (pointwise)
    {
      Frame fr = makeFrame(in.shape, {});
      std::vector<AffineExpr> redIdx;
      for (size_t d = 0; d < in.shape.size(); ++d)
        if (static_cast<int64_t>(d) != axis)
          redIdx.push_back(fr.idx[d]);
      if (redIdx.empty())
        redIdx.push_back(AffineExpr::constant(0));
      std::string x = names->fresh("v"), m = names->fresh("v"),
                  sft = names->fresh("v"), ex = names->fresh("v");
      std::vector<Op> body;
      body.push_back(load(fr, x, "%" + node.inputs[0], fr.idx));
      body.push_back(load(fr, m, mBuf, redIdx));
      body.push_back(makeArith(sft, ArithKind::Sub,
                               {Operand::val(x), Operand::val(m)}));
      body.push_back(makeArith(ex, ArithKind::Exp, {Operand::val(sft)}));
      body.push_back(store(fr, Operand::val(ex), eBuf, fr.idx));
      out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
    }
    // 3) row sum (reduction)
    lowerReduceShaped(in.shape, axis, /*isMax=*/false, eBuf, sBuf, out);
    // 4) divide (pointwise)
    {
      Frame fr = makeFrame(in.shape, {});
      std::vector<AffineExpr> redIdx;
      for (size_t d = 0; d < in.shape.size(); ++d)
        if (static_cast<int64_t>(d) != axis)
          redIdx.push_back(fr.idx[d]);
      if (redIdx.empty())
        redIdx.push_back(AffineExpr::constant(0));
      std::string e = names->fresh("v"), s = names->fresh("v"),
                  r = names->fresh("v");
      std::vector<Op> body;
      body.push_back(load(fr, e, eBuf, fr.idx));
      body.push_back(load(fr, s, sBuf, redIdx));
      body.push_back(
          makeArith(r, ArithKind::Div, {Operand::val(e), Operand::val(s)}));
      body.push_back(store(fr, Operand::val(r), "%" + node.output, fr.idx));
      out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
    }
  }

  /// lowerReduce for a buffer not in the graph (softmax intermediates).
  void lowerReduceShaped(const std::vector<int64_t> &inShape, int64_t axis,
                         bool isMax, const std::string &inBuf,
                         const std::string &outBuf, std::vector<Op> &out) {
    std::vector<int64_t> outExtents;
    for (size_t d = 0; d < inShape.size(); ++d)
      if (static_cast<int64_t>(d) != axis)
        outExtents.push_back(inShape[d]);
    if (outExtents.empty())
      outExtents.push_back(1);
    Frame fr = makeFrame(outExtents, {});
    std::string axisIv = names->fresh("r");
    Op axisLoop = makeForConst(axisIv, 0, inShape[axis]);
    unsigned axisDim = static_cast<unsigned>(fr.ivs.size());
    std::vector<AffineExpr> inIdx;
    {
      size_t o = 0;
      for (size_t d = 0; d < inShape.size(); ++d) {
        if (static_cast<int64_t>(d) == axis)
          inIdx.push_back(AffineExpr::dim(axisDim));
        else
          inIdx.push_back(fr.idx[o++]);
      }
    }
    std::vector<AffineExpr> outIdx = fr.idx;
    auto [outMap, outOperands] = access(fr, outIdx);
    std::string acc = names->fresh("acc"), x = names->fresh("v"),
                upd = names->fresh("v");
    std::vector<Op> inner;
    inner.push_back(makeLoad(acc, outBuf, outMap, outOperands));
    {
      AffineMap map(axisDim + 1, 0, inIdx);
      std::vector<std::string> operands = fr.ivs;
      operands.push_back(axisIv);
      for (auto &r : map.results)
        r = r.canonicalize();
      compactAccess(map, operands);
      inner.push_back(makeLoad(x, inBuf, map, operands));
    }
    inner.push_back(makeArith(upd, isMax ? ArithKind::Max : ArithKind::Add,
                              {Operand::val(acc), Operand::val(x)}));
    inner.push_back(makeStore(Operand::val(upd), outBuf, outMap, outOperands));
    axisLoop.body = std::move(inner);
    std::vector<Op> body;
    body.push_back(makeStore(isMax ? Operand::immF(-3.0e38) : Operand::immF(0.0),
                             outBuf, outMap, outOperands));
    body.push_back(std::move(axisLoop));
    out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
  }

  /// Matmul / batch matmul: one imperfect nest with the init store at the
  /// second-to-innermost depth.
  void lowerMatmul(const TensorOpNode &node, std::vector<Op> &out) {
    const auto &aShape = tensor(node.inputs[0]).shape;
    const auto &outShape = tensor(node.output).shape;
    size_t rank = outShape.size();
    int64_t K = aShape.back();
    Frame fr = makeFrame(outShape, rank == 2
                                       ? std::vector<std::string>{"i", "j"}
                                       : std::vector<std::string>{});
    std::string kIv = names->fresh("k");
    Op kLoop = makeForConst(kIv, 0, K);
    unsigned kDim = static_cast<unsigned>(fr.ivs.size());

    // a[batch..., i, k], b[batch..., k, j], c[batch..., i, j]
    std::vector<AffineExpr> aIdx, bIdx;
    for (size_t d = 0; d + 2 < rank; ++d) {
      aIdx.push_back(fr.idx[d]);
      bIdx.push_back(fr.idx[d]);
    }
    aIdx.push_back(fr.idx[rank - 2]);
    aIdx.push_back(AffineExpr::dim(kDim));
    bIdx.push_back(AffineExpr::dim(kDim));
    bIdx.push_back(fr.idx[rank - 1]);

    auto accessWithK = [&](std::vector<AffineExpr> exprs) {
      AffineMap map(kDim + 1, 0, std::move(exprs));
      std::vector<std::string> operands = fr.ivs;
      operands.push_back(kIv);
      for (auto &r : map.results)
        r = r.canonicalize();
      compactAccess(map, operands);
      return std::make_pair(map, operands);
    };
    auto [cMap, cOperands] = access(fr, fr.idx);
    std::string a = names->fresh("v"), b = names->fresh("v"),
                c = names->fresh("v"), m = names->fresh("v");
    std::vector<Op> inner;
    {
      auto [am, ao] = accessWithK(aIdx);
      inner.push_back(makeLoad(a, "%" + node.inputs[0], am, ao));
      auto [bm, bo] = accessWithK(bIdx);
      inner.push_back(makeLoad(b, "%" + node.inputs[1], bm, bo));
    }
    inner.push_back(makeLoad(c, "%" + node.output, cMap, cOperands));
    inner.push_back(makeArith(
        m, ArithKind::Fma, {Operand::val(a), Operand::val(b), Operand::val(c)}));
    inner.push_back(makeStore(Operand::val(m), "%" + node.output, cMap, cOperands));
    kLoop.body = std::move(inner);

    bool isInt = isIntType(tensor(node.output).dtype);
    std::vector<Op> body;
    body.push_back(makeStore(isInt ? Operand::immI(0) : Operand::immF(0.0),
                             "%" + node.output, cMap, cOperands));
    body.push_back(std::move(kLoop));
    out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
  }

  std::string addBuffer(const std::string &name, std::vector<int64_t> shape,
                        ElementType type,
                        MemorySpace space = MemorySpace::Global) {
    BufferDecl b;
    b.id = "%" + name;
    b.shape = std::move(shape);
    b.elementType = type;
    b.space = space;
    program.buffers.push_back(b);
    return b.id;
  }

  /// Direct convolution. Non-transposed: a 7-loop nest (b, oc, oy, ox / ic,
  /// ky, kx) with clamped kernel bounds materializing `same` padding; tiny
  /// reductions are unrolled into stencil-expression form. Transposed convs
  /// lower to [zero-fill, stride-stuff scatter, valid conv with flipped
  /// weights].
  void lowerConv(const TensorOpNode &node, std::vector<Op> &out) {
    const TensorDesc &in = tensor(node.inputs[0]);
    const TensorDesc &w = tensor(node.inputs[1]);
    const TensorDesc &outT = tensor(node.output);
    int64_t B = in.shape[0], IC = in.shape[1], H = in.shape[2], W = in.shape[3];
    int64_t KH = w.shape[2], KW = w.shape[3];
    ConvGeometry geo = convGeometry(H, W, KH, KW, node);

    std::string inBuf = "%" + node.inputs[0];
    bool flipWeights = false;
    int64_t sy = node.strideY, sx = node.strideX;
    int64_t py = geo.padY, px = geo.padX;
    if (node.transposed) {
      // Stuffed input: insert (s-1) zeros between elements plus border room.
      int64_t padTotalY = node.samePadding
                              ? (KH - 1) * node.dilY + 1 - node.strideY
                              : 0;
      int64_t padTotalX = node.samePadding
                              ? (KW - 1) * node.dilX + 1 - node.strideX
                              : 0;
      int64_t padBeginY = (KH - 1) * node.dilY - padTotalY / 2;
      int64_t padBeginX = (KW - 1) * node.dilX - padTotalX / 2;
      int64_t stuffedH = (H - 1) * node.strideY + 1 + 2 * (KH - 1) * node.dilY -
                         padTotalY;
      int64_t stuffedW = (W - 1) * node.strideX + 1 + 2 * (KW - 1) * node.dilX -
                         padTotalX;
      std::string stuffed = addBuffer(node.output + ".stuffed",
                                      {B, IC, stuffedH, stuffedW}, in.dtype);
      // Zero fill.
      {
        Frame fr = makeFrame({B, IC, stuffedH, stuffedW}, {"b", "c", "y", "x"});
        std::vector<Op> body;
        body.push_back(store(fr, Operand::immF(0.0), stuffed, fr.idx));
        out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
      }
      // Scatter.
      {
        Frame fr = makeFrame({B, IC, H, W}, {"b", "c", "y", "x"});
        std::vector<AffineExpr> dst = fr.idx;
        dst[2] = (fr.idx[2] * node.strideY + padBeginY).canonicalize();
        dst[3] = (fr.idx[3] * node.strideX + padBeginX).canonicalize();
        std::string v = names->fresh("v");
        std::vector<Op> body;
        body.push_back(load(fr, v, inBuf, fr.idx));
        body.push_back(store(fr, Operand::val(v), stuffed, std::move(dst)));
        out.push_back(wrapLoops(std::move(fr.loops), std::move(body)));
      }
      inBuf = stuffed;
      flipWeights = true;
      sy = sx = 1;
      py = px = 0;
    }

    const BufferDecl *inDecl = program.findBuffer(inBuf);
    int64_t inH = inDecl->shape[2], inW = inDecl->shape[3];
    int64_t OC = outT.shape[1], OH = outT.shape[2], OW = outT.shape[3];

    Frame fr = makeFrame({B, OC, OH, OW}, {"b", "oc", "oy", "ox"});
    auto [outMap, outOperands] = access(fr, fr.idx);

    // Weight access for output channel `ocExpr` and kernel position (ky, kx)
    // exprs over a given dim arity.
    auto weightIdx = [&](AffineExpr ocE, AffineExpr icE, AffineExpr kyE,
                         AffineExpr kxE) {
      std::vector<AffineExpr> idx(4);
      if (flipWeights) {
        kyE = (AffineExpr::constant(KH - 1) - kyE).canonicalize();
        kxE = (AffineExpr::constant(KW - 1) - kxE).canonicalize();
      }
      if (node.transposed) {
        idx[0] = icE; // [IC, OC, KH, KW]
        idx[1] = ocE;
      } else {
        idx[0] = ocE; // [OC, IC, KH, KW]
        idx[1] = icE;
      }
      idx[2] = kyE;
      idx[3] = kxE;
      return idx;
    };

    bool clamped = py > 0 || px > 0;
    int64_t reductionSize = IC * KH * KW;
    bool unroll = !clamped && reductionSize <= cfg.unrollReductionLimit;

    Op nest;
    if (unroll) {
      // Expression-form body: sum of shifted loads times weight loads.
      std::vector<Op> body;
      std::string sum;
      for (int64_t ic = 0; ic < IC; ++ic)
        for (int64_t ky = 0; ky < KH; ++ky)
          for (int64_t kx = 0; kx < KW; ++kx) {
            std::vector<AffineExpr> inIdx(4);
            inIdx[0] = fr.idx[0];
            inIdx[1] = AffineExpr::constant(ic);
            inIdx[2] = (fr.idx[2] * sy + ky * node.dilY - py).canonicalize();
            inIdx[3] = (fr.idx[3] * sx + kx * node.dilX - px).canonicalize();
            std::string xv = names->fresh("v");
            body.push_back(load(fr, xv, inBuf, std::move(inIdx)));
            std::string wv = names->fresh("w");
            body.push_back(load(fr, wv, "%" + node.inputs[1],
                                weightIdx(fr.idx[1], AffineExpr::constant(ic),
                                          AffineExpr::constant(ky),
                                          AffineExpr::constant(kx))));
            std::string prod = names->fresh("v");
            if (sum.empty()) {
              body.push_back(makeArith(prod, ArithKind::Mul,
                                       {Operand::val(xv), Operand::val(wv)}));
            } else {
              body.push_back(makeArith(prod, ArithKind::Fma,
                                       {Operand::val(xv), Operand::val(wv),
                                        Operand::val(sum)}));
            }
            sum = prod;
          }
      body.push_back(store(fr, Operand::val(sum), "%" + node.output, fr.idx));
      nest = wrapLoops(std::move(fr.loops), std::move(body));
    } else {
      // Reduction loops ic, ky, kx with clamped kernel bounds when padded.
      std::string icIv = names->fresh("ic"), kyIv = names->fresh("ky"),
                  kxIv = names->fresh("kx");
      unsigned icDim = static_cast<unsigned>(fr.ivs.size());
      unsigned kyDim = icDim + 1, kxDim = icDim + 2;
      Op icLoop = makeForConst(icIv, 0, IC);
      auto clampLoop = [&](const std::string &iv, int64_t K, int64_t pad,
                           int64_t stride, int64_t dil, int oDim,
                           int64_t inExtent) {
        if (pad == 0)
          return makeForConst(iv, 0, K);
        // ceil((pad - o*s)/d) <= k < ceil((inExtent + pad - o*s)/d)
        const AffineExpr &oExpr = fr.idx[oDim];
        std::vector<std::string> operands;
        AffineExpr o;
        if (oExpr.kind() == AffineExpr::Kind::Dim) {
          operands = {fr.ivs[oExpr.index()]};
          o = AffineExpr::dim(0);
        } else {
          o = oExpr; // constant (extent-1 output dim)
        }
        AffineExpr lo = (AffineExpr::constant(pad) - o * stride +
                         AffineExpr::constant(dil - 1))
                            .floorDiv(dil);
        AffineExpr hi = (AffineExpr::constant(inExtent + pad - 1) - o * stride)
                            .floorDiv(dil) +
                        1;
        unsigned nd = operands.empty() ? 0 : 1;
        AffineMap lower(nd, 0, {AffineExpr::constant(0), lo.canonicalize()});
        AffineMap upper(nd, 0, {AffineExpr::constant(K), hi.canonicalize()});
        return makeFor(iv, lower, upper, 1, operands);
      };
      Op kyLoop = clampLoop(kyIv, KH, py, sy, node.dilY, 2, inH);
      Op kxLoop = clampLoop(kxIv, KW, px, sx, node.dilX, 3, inW);

      std::vector<AffineExpr> inIdx(4);
      inIdx[0] = fr.idx[0];
      inIdx[1] = AffineExpr::dim(icDim);
      inIdx[2] =
          (fr.idx[2] * sy + AffineExpr::dim(kyDim) * node.dilY - py).canonicalize();
      inIdx[3] =
          (fr.idx[3] * sx + AffineExpr::dim(kxDim) * node.dilX - px).canonicalize();
      auto accessK = [&](std::vector<AffineExpr> exprs) {
        AffineMap map(kxDim + 1, 0, std::move(exprs));
        std::vector<std::string> operands = fr.ivs;
        operands.push_back(icIv);
        operands.push_back(kyIv);
        operands.push_back(kxIv);
        for (auto &r : map.results)
          r = r.canonicalize();
        compactAccess(map, operands);
        return std::make_pair(map, operands);
      };
      std::string xv = names->fresh("v"), wv = names->fresh("w"),
                  cv = names->fresh("v"), mv = names->fresh("v");
      std::vector<Op> inner;
      {
        auto [im, io] = accessK(inIdx);
        inner.push_back(makeLoad(xv, inBuf, im, io));
        auto [wm, wo] = accessK(weightIdx(fr.idx[1], AffineExpr::dim(icDim),
                                          AffineExpr::dim(kyDim),
                                          AffineExpr::dim(kxDim)));
        inner.push_back(makeLoad(wv, "%" + node.inputs[1], wm, wo));
      }
      inner.push_back(makeLoad(cv, "%" + node.output, outMap, outOperands));
      inner.push_back(makeArith(mv, ArithKind::Fma,
                                {Operand::val(xv), Operand::val(wv),
                                 Operand::val(cv)}));
      inner.push_back(
          makeStore(Operand::val(mv), "%" + node.output, outMap, outOperands));

      kxLoop.body = std::move(inner);
      kyLoop.body.push_back(std::move(kxLoop));
      icLoop.body.push_back(std::move(kyLoop));
      bool isInt = isIntType(outT.dtype);
      std::vector<Op> body;
      body.push_back(makeStore(isInt ? Operand::immI(0) : Operand::immF(0.0),
                               "%" + node.output, outMap, outOperands));
      body.push_back(std::move(icLoop));
      nest = wrapLoops(std::move(fr.loops), std::move(body));
    }
    // Conv metadata for the implicit-GEMM rewrite: the effective valid-form
    // parameters realized by this nest.
    nest.attrs["conv.sy"] = AttrValue::num(sy);
    nest.attrs["conv.sx"] = AttrValue::num(sx);
    nest.attrs["conv.dy"] = AttrValue::num(node.dilY);
    nest.attrs["conv.dx"] = AttrValue::num(node.dilX);
    nest.attrs["conv.py"] = AttrValue::num(py);
    nest.attrs["conv.px"] = AttrValue::num(px);
    nest.attrs["conv.kh"] = AttrValue::num(KH);
    nest.attrs["conv.kw"] = AttrValue::num(KW);
    nest.attrs["conv.in"] = AttrValue::str(inBuf);
    nest.attrs["conv.w"] = AttrValue::str("%" + node.inputs[1]);
    nest.attrs["conv.out"] = AttrValue::str("%" + node.output);
    if (flipWeights)
      nest.attrs["conv.wflip"] = AttrValue::flag();
    if (node.transposed)
      nest.attrs["conv.wlayout"] = AttrValue::str("io");
    out.push_back(std::move(nest));
  }
};

} // namespace

Program lowerGraphToAffine(const TensorGraph &g, const TargetConfig &cfg) {
  checkGraph(g);
  Lowerer lowerer(g, cfg);
  return lowerer.run();
}

} // namespace af
