//===- oracles.cpp - Independent brute-force references ------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "oracles.h"

#include <nlohmann/json.hpp>

#include <cassert>
#include <cmath>
#include <functional>
#include <set>
#include <stdexcept>

using json = nlohmann::json;

namespace af::oracle {

Tensor zeros(std::vector<int64_t> shape, ElementType t) {
  Tensor out;
  out.shape = std::move(shape);
  out.type = t;
  out.data.assign(out.numElements(), 0.0);
  return out;
}

int64_t flatIndex(const Tensor &t, std::span<const int64_t> idx) {
  int64_t flat = 0;
  for (size_t i = 0; i < t.shape.size(); ++i) {
    assert(idx[i] >= 0 && idx[i] < t.shape[i]);
    flat = flat * t.shape[i] + idx[i];
  }
  return flat;
}

ConvDims convOutputDims(int64_t inH, int64_t inW, int64_t kH, int64_t kW,
                        const ConvSpec &spec) {
  ConvDims d{};
  if (!spec.transposed) {
    if (spec.samePadding) {
      d.outH = (inH + spec.strideY - 1) / spec.strideY;
      d.outW = (inW + spec.strideX - 1) / spec.strideX;
      int64_t padTotalY =
          std::max<int64_t>(0, (d.outH - 1) * spec.strideY +
                                   (kH - 1) * spec.dilY + 1 - inH);
      int64_t padTotalX =
          std::max<int64_t>(0, (d.outW - 1) * spec.strideX +
                                   (kW - 1) * spec.dilX + 1 - inW);
      d.padY = padTotalY / 2;
      d.padX = padTotalX / 2;
    } else {
      d.outH = (inH - (kH - 1) * spec.dilY - 1) / spec.strideY + 1;
      d.outW = (inW - (kW - 1) * spec.dilX - 1) / spec.strideX + 1;
      d.padY = d.padX = 0;
    }
  } else {
    if (spec.samePadding) {
      d.outH = inH * spec.strideY;
      d.outW = inW * spec.strideX;
      int64_t padTotalY = (kH - 1) * spec.dilY + 1 - spec.strideY;
      int64_t padTotalX = (kW - 1) * spec.dilX + 1 - spec.strideX;
      if (padTotalY < 0 || padTotalX < 0)
        throw std::runtime_error("unsupported transposed same-padding config");
      d.padY = padTotalY / 2;
      d.padX = padTotalX / 2;
    } else {
      d.outH = (inH - 1) * spec.strideY + (kH - 1) * spec.dilY + 1;
      d.outW = (inW - 1) * spec.strideX + (kW - 1) * spec.dilX + 1;
      d.padY = d.padX = 0;
    }
  }
  return d;
}

Tensor convReference(const Tensor &in, const Tensor &w, const ConvSpec &spec,
                     ElementType accType) {
  int64_t B = in.shape[0], IC = in.shape[1], H = in.shape[2], W = in.shape[3];
  int64_t OC = spec.transposed ? w.shape[1] : w.shape[0];
  int64_t KH = w.shape[2], KW = w.shape[3];
  ConvDims d = convOutputDims(H, W, KH, KW, spec);
  Tensor out = zeros({B, OC, d.outH, d.outW}, accType);
  auto inAt = [&](int64_t b, int64_t c, int64_t y, int64_t x) -> double {
    if (y < 0 || y >= H || x < 0 || x >= W)
      return 0.0;
    double v = in.data[((b * IC + c) * H + y) * W + x];
    return roundToType(v, in.type);
  };
  auto wAt = [&](int64_t i0, int64_t i1, int64_t ky, int64_t kx) {
    return roundToType(
        w.data[((i0 * w.shape[1] + i1) * KH + ky) * KW + kx], w.type);
  };
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oc = 0; oc < OC; ++oc)
      for (int64_t oy = 0; oy < d.outH; ++oy)
        for (int64_t ox = 0; ox < d.outW; ++ox) {
          double acc = 0;
          for (int64_t ic = 0; ic < IC; ++ic)
            for (int64_t ky = 0; ky < KH; ++ky)
              for (int64_t kx = 0; kx < KW; ++kx) {
                if (!spec.transposed) {
                  int64_t iy = oy * spec.strideY + ky * spec.dilY - d.padY;
                  int64_t ix = ox * spec.strideX + kx * spec.dilX - d.padX;
                  acc += inAt(b, ic, iy, ix) * wAt(oc, ic, ky, kx);
                } else {
                  int64_t ny = oy + d.padY - ky * spec.dilY;
                  int64_t nx = ox + d.padX - kx * spec.dilX;
                  if (ny % spec.strideY != 0 || nx % spec.strideX != 0)
                    continue;
                  acc += inAt(b, ic, ny / spec.strideY, nx / spec.strideX) *
                         wAt(ic, oc, ky, kx);
                }
              }
          out.data[((b * OC + oc) * d.outH + oy) * d.outW + ox] =
              roundToType(acc, accType);
        }
  return out;
}

Tensor matmulReference(const Tensor &a, const Tensor &b) {
  int64_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
  Tensor out = zeros({M, N});
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < K; ++k)
        acc += roundToType(a.data[i * K + k], a.type) *
               roundToType(b.data[k * N + j], b.type);
      out.data[i * N + j] = roundToType(acc, ElementType::F32);
    }
  return out;
}

Tensor matmulReferenceInt(const Tensor &a, const Tensor &b) {
  int64_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
  Tensor out = zeros({M, N}, ElementType::I32);
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      int64_t acc = 0;
      for (int64_t k = 0; k < K; ++k)
        acc += static_cast<int64_t>(a.data[i * K + k]) *
               static_cast<int64_t>(b.data[k * N + j]);
      out.data[i * N + j] = static_cast<double>(acc);
    }
  return out;
}

Tensor batchMatmulReference(const Tensor &a, const Tensor &b) {
  size_t rank = a.shape.size();
  int64_t M = a.shape[rank - 2], K = a.shape[rank - 1];
  int64_t N = b.shape[rank - 1];
  int64_t batch = 1;
  std::vector<int64_t> outShape;
  for (size_t i = 0; i + 2 < rank; ++i) {
    batch *= a.shape[i];
    outShape.push_back(a.shape[i]);
  }
  outShape.push_back(M);
  outShape.push_back(N);
  Tensor out = zeros(outShape);
  for (int64_t g = 0; g < batch; ++g)
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < N; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < K; ++k)
          acc += roundToType(a.data[(g * M + i) * K + k], a.type) *
                 roundToType(b.data[(g * K + k) * N + j], b.type);
        out.data[(g * M + i) * N + j] = roundToType(acc, ElementType::F32);
      }
  return out;
}

Tensor softmaxReference(const Tensor &x) {
  Tensor out = zeros(x.shape, x.type);
  int64_t inner = x.shape.back();
  int64_t outer = x.numElements() / inner;
  for (int64_t r = 0; r < outer; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < inner; ++c)
      m = std::max(m, x.data[r * inner + c]);
    double sum = 0;
    for (int64_t c = 0; c < inner; ++c)
      sum += std::exp(x.data[r * inner + c] - m);
    for (int64_t c = 0; c < inner; ++c)
      out.data[r * inner + c] = std::exp(x.data[r * inner + c] - m) / sum;
  }
  return out;
}

Tensor attentionReference(const Tensor &q, const Tensor &k, const Tensor &v,
                          const Tensor &bias) {
  int64_t B = q.shape[0], H = q.shape[1], N = q.shape[2], D = q.shape[3];
  int64_t Dv = v.shape[3];
  Tensor out = zeros({B, H, N, Dv});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h) {
      std::vector<double> scores(N * N);
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j) {
          double acc = 0;
          for (int64_t d = 0; d < D; ++d)
            acc += roundToType(q.data[((b * H + h) * N + i) * D + d], q.type) *
                   roundToType(k.data[((b * H + h) * N + j) * D + d], k.type);
          scores[i * N + j] =
              acc + roundToType(bias.data[((b * H + h) * N + i) * N + j],
                                bias.type);
        }
      for (int64_t i = 0; i < N; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < N; ++j)
          m = std::max(m, scores[i * N + j]);
        double sum = 0;
        for (int64_t j = 0; j < N; ++j)
          sum += std::exp(scores[i * N + j] - m);
        for (int64_t d = 0; d < Dv; ++d) {
          double acc = 0;
          for (int64_t j = 0; j < N; ++j)
            acc += std::exp(scores[i * N + j] - m) / sum *
                   roundToType(v.data[((b * H + h) * N + j) * Dv + d], v.type);
          out.data[((b * H + h) * N + i) * Dv + d] = acc;
        }
      }
    }
  return out;
}

//===----------------------------------------------------------------------===//
// Graph-level reference evaluator
//===----------------------------------------------------------------------===//

namespace {

std::vector<int64_t> multiIndex(int64_t flat, const std::vector<int64_t> &shape) {
  std::vector<int64_t> idx(shape.size());
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    idx[i] = flat % shape[i];
    flat /= shape[i];
  }
  return idx;
}

} // namespace

std::map<std::string, Tensor>
evalGraphReference(const std::string &graphJson,
                   const std::map<std::string, Tensor> &inputs) {
  json g = json::parse(graphJson);
  std::map<std::string, Tensor> env = inputs;
  std::map<std::string, json> tensorDecl;
  for (const auto &t : g.at("tensors"))
    tensorDecl[t.at("id")] = t;
  auto typeOf = [&](const std::string &id) {
    return *parseElementType(tensorDecl.at(id).value("dtype", "f32"));
  };
  auto shapeOf = [&](const std::string &id) {
    return tensorDecl.at(id).at("shape").get<std::vector<int64_t>>();
  };
  // Round declared inputs onto their storage grid first.
  for (auto &[id, t] : env) {
    ElementType ty = typeOf(id);
    t.type = ty;
    for (auto &v : t.data)
      v = roundToType(v, ty);
  }

  for (const auto &node : g.at("ops")) {
    std::string op = node.at("op");
    std::vector<std::string> ins =
        node.at("inputs").get<std::vector<std::string>>();
    std::string outId = node.at("output");
    json attrs = node.value("attrs", json::object());
    ElementType outType = typeOf(outId);
    auto outShape = shapeOf(outId);
    Tensor out = zeros(outShape, outType);

    auto elementwise = [&](auto fn) {
      const Tensor &a = env.at(ins[0]);
      const Tensor &b = env.at(ins[1]);
      for (int64_t i = 0; i < out.numElements(); ++i)
        out.data[i] = roundToType(fn(a.data[i], b.data[i]), outType);
    };

    if (op == "add") {
      elementwise([](double a, double b) { return a + b; });
    } else if (op == "mul") {
      elementwise([](double a, double b) { return a * b; });
    } else if (op == "sub") {
      elementwise([](double a, double b) { return a - b; });
    } else if (op == "max") {
      elementwise([](double a, double b) { return std::max(a, b); });
    } else if (op == "exp") {
      const Tensor &a = env.at(ins[0]);
      for (int64_t i = 0; i < out.numElements(); ++i)
        out.data[i] = roundToType(std::exp(a.data[i]), outType);
    } else if (op == "transpose") {
      const Tensor &a = env.at(ins[0]);
      auto perm = attrs.at("perm").get<std::vector<int64_t>>();
      for (int64_t f = 0; f < out.numElements(); ++f) {
        auto oidx = multiIndex(f, out.shape);
        std::vector<int64_t> iidx(oidx.size());
        for (size_t d = 0; d < perm.size(); ++d)
          iidx[perm[d]] = oidx[d];
        out.data[f] = a.data[flatIndex(a, iidx)];
      }
    } else if (op == "broadcast_in_dim") {
      const Tensor &a = env.at(ins[0]);
      auto dims = attrs.at("dims").get<std::vector<int64_t>>();
      for (int64_t f = 0; f < out.numElements(); ++f) {
        auto oidx = multiIndex(f, out.shape);
        std::vector<int64_t> iidx(a.shape.size());
        for (size_t d = 0; d < dims.size(); ++d)
          iidx[d] = oidx[dims[d]];
        out.data[f] = a.data[flatIndex(a, iidx)];
      }
    } else if (op == "reshape") {
      out.data = env.at(ins[0]).data;
      for (auto &v : out.data)
        v = roundToType(v, outType);
    } else if (op == "reduce") {
      const Tensor &a = env.at(ins[0]);
      std::string kind = attrs.at("op");
      int64_t axis = attrs.at("axis");
      if (axis < 0)
        axis += static_cast<int64_t>(a.shape.size());
      for (int64_t f = 0; f < out.numElements(); ++f) {
        auto oidx = multiIndex(f, out.shape);
        std::vector<int64_t> iidx(a.shape.size());
        for (size_t d = 0, o = 0; d < a.shape.size(); ++d)
          if (static_cast<int64_t>(d) != axis)
            iidx[d] = oidx[o++];
        double acc = kind == "max" ? -std::numeric_limits<double>::infinity() : 0;
        for (int64_t v = 0; v < a.shape[axis]; ++v) {
          iidx[axis] = v;
          double x = a.data[flatIndex(a, iidx)];
          acc = kind == "max" ? std::max(acc, x) : acc + x;
        }
        out.data[f] = roundToType(acc, outType);
      }
    } else if (op == "softmax") {
      out = softmaxReference(env.at(ins[0]));
      for (auto &v : out.data)
        v = roundToType(v, outType);
      out.type = outType;
    } else if (op == "matmul") {
      const Tensor &a = env.at(ins[0]);
      if (isIntType(a.type))
        out = matmulReferenceInt(a, env.at(ins[1]));
      else
        out = matmulReference(a, env.at(ins[1]));
      out.type = outType;
    } else if (op == "batch_matmul") {
      out = batchMatmulReference(env.at(ins[0]), env.at(ins[1]));
      out.type = outType;
    } else if (op == "conv2d") {
      ConvSpec spec;
      if (attrs.contains("stride")) {
        auto s = attrs.at("stride");
        spec.strideY = s.is_array() ? s[0].get<int64_t>() : s.get<int64_t>();
        spec.strideX = s.is_array() ? s[1].get<int64_t>() : s.get<int64_t>();
      }
      if (attrs.contains("dilation")) {
        auto s = attrs.at("dilation");
        spec.dilY = s.is_array() ? s[0].get<int64_t>() : s.get<int64_t>();
        spec.dilX = s.is_array() ? s[1].get<int64_t>() : s.get<int64_t>();
      }
      spec.samePadding = attrs.value("padding", "valid") == std::string("same");
      spec.transposed = attrs.value("transposed", false);
      out = convReference(env.at(ins[0]), env.at(ins[1]), spec, outType);
    } else if (op == "quantize") {
      const Tensor &a = env.at(ins[0]);
      double scale = attrs.at("scale");
      for (int64_t i = 0; i < out.numElements(); ++i)
        out.data[i] =
            std::clamp(std::round(a.data[i] / scale), -128.0, 127.0);
    } else if (op == "dequantize") {
      const Tensor &a = env.at(ins[0]);
      double scale = attrs.at("scale");
      for (int64_t i = 0; i < out.numElements(); ++i)
        out.data[i] = roundToType(a.data[i] * scale, outType);
    } else {
      throw std::runtime_error("oracle: unsupported op " + op);
    }
    out.shape = outShape;
    env[outId] = std::move(out);
  }

  // Outputs: tensors never consumed, or the explicit list.
  std::map<std::string, Tensor> outputs;
  std::set<std::string> consumed;
  for (const auto &node : g.at("ops"))
    for (const auto &in : node.at("inputs"))
      consumed.insert(in.get<std::string>());
  std::set<std::string> produced;
  for (const auto &node : g.at("ops"))
    produced.insert(node.at("output").get<std::string>());
  if (g.contains("outputs")) {
    for (const auto &id : g.at("outputs"))
      outputs["%" + id.get<std::string>()] = env.at(id.get<std::string>());
  } else {
    for (const auto &[id, decl] : tensorDecl)
      if (produced.count(id) && !consumed.count(id))
        outputs["%" + id] = env.at(id);
  }
  return outputs;
}

//===----------------------------------------------------------------------===//
// Enumeration oracles
//===----------------------------------------------------------------------===//

bool bruteForceDependence(const Program &p, const AccessInstance &src,
                          const AccessInstance &dst, int commonDepth,
                          int strictAtDepth) {
  const BufferDecl *buf = p.findBuffer(src.op->buffer);
  if (!buf || src.op->buffer != dst.op->buffer)
    return false;
  auto strides = buf->strides();
  // Enumerate both iteration spaces (sharing the common prefix).
  std::map<std::string, int64_t> env;
  std::vector<int64_t> srcAddrsScratch;

  std::function<bool(size_t)> runDst = [&](size_t level) -> bool {
    if (level == dst.loopChain.size()) {
      std::vector<int64_t> dims;
      for (const auto &name : dst.op->accessOperands)
        dims.push_back(env.at(name));
      auto idx = dst.op->access.eval(dims);
      int64_t flat = 0;
      for (size_t i = 0; i < idx.size(); ++i)
        flat += idx[i] * strides[i];
      for (int64_t a : srcAddrsScratch)
        if (a == flat)
          return true;
      return false;
    }
    const Op *loop = dst.loopChain[level];
    std::vector<int64_t> outer;
    for (const auto &name : loop->mapOperands)
      outer.push_back(env.at(name));
    int64_t lb = loop->lower.evalMax(outer);
    int64_t ub = loop->upper.evalMin(outer);
    for (int64_t v = lb; v < ub; v += loop->step) {
      env[loop->iv] = v;
      if (runDst(level + 1))
        return true;
    }
    env.erase(loop->iv);
    return false;
  };

  std::function<bool(size_t)> runSrc = [&](size_t level) -> bool {
    if (level == src.loopChain.size()) {
      std::vector<int64_t> dims;
      for (const auto &name : src.op->accessOperands)
        dims.push_back(env.at(name));
      auto idx = src.op->access.eval(dims);
      int64_t flat = 0;
      for (size_t i = 0; i < idx.size(); ++i)
        flat += idx[i] * strides[i];
      srcAddrsScratch.assign(1, flat);
      // For the strict (loop-carried) case the dst domain is restricted below.
      return runDst(commonDepth);
    }
    const Op *loop = src.loopChain[level];
    std::vector<int64_t> outer;
    for (const auto &name : loop->mapOperands)
      outer.push_back(env.at(name));
    int64_t lb = loop->lower.evalMax(outer);
    int64_t ub = loop->upper.evalMin(outer);
    for (int64_t v = lb; v < ub; v += loop->step) {
      env[loop->iv] = v;
      bool hit;
      if (static_cast<int>(level) == strictAtDepth) {
        // dst iv at this position must be strictly greater; enumerate the
        // remaining src levels normally, and let runDst re-bind from
        // commonDepth: enforce by renaming dst iv ranges via env marker.
        hit = runSrc(level + 1);
      } else {
        hit = runSrc(level + 1);
      }
      if (hit) {
        // Validate strict constraint if any by post-filtering below.
        return true;
      }
    }
    env.erase(loop->iv);
    return false;
  };

  if (strictAtDepth < 0)
    return runSrc(0);

  // Strict variant: enumerate pairs explicitly (small domains only).
  struct Iter {
    std::vector<int64_t> ivs;
    int64_t addr;
  };
  std::vector<Iter> srcIters, dstIters;
  std::function<void(const AccessInstance &, size_t, std::vector<Iter> &)> gen =
      [&](const AccessInstance &inst, size_t level, std::vector<Iter> &out) {
        if (level == inst.loopChain.size()) {
          std::vector<int64_t> dims;
          for (const auto &name : inst.op->accessOperands)
            dims.push_back(env.at(name));
          auto idx = inst.op->access.eval(dims);
          int64_t flat = 0;
          for (size_t i = 0; i < idx.size(); ++i)
            flat += idx[i] * strides[i];
          Iter it;
          for (const Op *l : inst.loopChain)
            it.ivs.push_back(env.at(l->iv));
          it.addr = flat;
          out.push_back(it);
          return;
        }
        const Op *loop = inst.loopChain[level];
        std::vector<int64_t> outer;
        for (const auto &name : loop->mapOperands)
          outer.push_back(env.at(name));
        int64_t lb = loop->lower.evalMax(outer);
        int64_t ub = loop->upper.evalMin(outer);
        for (int64_t v = lb; v < ub; v += loop->step) {
          env[loop->iv] = v;
          gen(inst, level + 1, out);
        }
        env.erase(loop->iv);
      };
  gen(src, 0, srcIters);
  gen(dst, 0, dstIters);
  for (const auto &s : srcIters)
    for (const auto &d : dstIters) {
      if (s.addr != d.addr)
        continue;
      bool commonOk = true;
      for (int i = 0; i < commonDepth; ++i)
        if (s.ivs[i] != d.ivs[i])
          commonOk = false;
      if (!commonOk)
        continue;
      if (s.ivs[strictAtDepth] < d.ivs[strictAtDepth])
        return true;
    }
  return false;
}

std::vector<int64_t> enumerateAddresses(const Program &p, const Op &accessOp,
                                        const std::string &iv, int64_t extent,
                                        int64_t others) {
  const BufferDecl *buf = p.findBuffer(accessOp.buffer);
  auto strides = buf->strides();
  std::vector<int64_t> out;
  for (int64_t v = 0; v < extent; ++v) {
    std::vector<int64_t> dims(accessOp.accessOperands.size(), others);
    for (size_t i = 0; i < accessOp.accessOperands.size(); ++i)
      if (accessOp.accessOperands[i] == iv)
        dims[i] = v;
    auto idx = accessOp.access.eval(dims);
    int64_t flat = 0;
    for (size_t i = 0; i < idx.size(); ++i)
      flat += idx[i] * strides[i];
    out.push_back(flat);
  }
  return out;
}

} // namespace af::oracle
