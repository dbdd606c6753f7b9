//===- test_analysis.cpp - Contiguity, dependence, slice, kinds ----------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "af/analysis.h"
#include "oracles.h"
#include "testsupport.h"

using namespace af;

namespace {

const Op *firstLoad(const Op &root) {
  const Op *found = nullptr;
  walkOps(root, [&](const Op &o) {
    if (!found && o.kind == OpKind::Load)
      found = &o;
  });
  return found;
}

/// Brute-force confirmation that runs of L are contiguous; with
/// expectMaximal, also that runs of 2L are not.
void confirmRunLength(const Program &p, const Op &load, const std::string &iv,
                      int64_t extent, int64_t L, bool expectMaximal = true) {
  auto addrs = oracle::enumerateAddresses(p, load, iv, extent);
  for (int64_t start = 0; start + L <= extent; start += L)
    for (int64_t i = 1; i < L; ++i)
      CHECK(addrs[start + i] == addrs[start + i - 1] + 1);
  if (expectMaximal && 2 * L <= extent) {
    bool all2L = true;
    for (int64_t start = 0; start + 2 * L <= extent; start += 2 * L)
      for (int64_t i = 1; i < 2 * L; ++i)
        if (addrs[start + i] != addrs[start + i - 1] + 1)
          all2L = false;
    CHECK_FALSE(all2L);
  }
}

} // namespace

TEST_CASE("packing access has contiguity exactly 2 along the inner iv") {
  // 4-d f16 tensor; the inner iv appears in the two innermost subscripts
  // through floordiv/mod, giving spatial reuse in intervals of two but not
  // four or eight.
  Program p = test::parse(R"(
buffer %src : <8x4094x510x10 x f16, global> input
buffer %dst : <64x128 x f16, shared>
func @main {
  alloc %dst
  for %i = (0) to (64) step 1 {
    for %j = (0) to (128) step 1 {
      %v = load %src[%i floordiv 32, %i * 2 + %j floordiv 64, (%j floordiv 2) mod 32, %j mod 2 + 3]
      store %v, %dst[%i, %j]
    }
  } attrs{copy_nest}
  dealloc %dst
}
)");
  test::expectVerifies(p);
  const Op *load = firstLoad(p.functions[0].body[1]);
  REQUIRE(load);
  auto res = contiguityAlongIv(p, *load, "%j", 128, 8);
  CHECK(res.maxContiguousRun == 2);
  CHECK(res.maxContiguousRun != 4);
  CHECK(res.maxContiguousRun != 8);
  confirmRunLength(p, *load, "%j", 128, 2);
  // Stride facts: unit stride within pairs, a jump at pair boundaries.
  REQUIRE(res.stridePattern.size() == 2);
  CHECK(res.stridePattern[0] == std::pair<int64_t, int64_t>{2, 1});
  CHECK(res.stridePattern[1].second != 1);
}

TEST_CASE("identity innermost access: extent and vector-width capped") {
  Program p = test::parse(R"(
buffer %A : <16x48 x f32, global> input
buffer %B : <16x48 x f32, global> output
func @main {
  for %i = (0) to (16) step 1 {
    for %j = (0) to (48) step 1 {
      %v = load %A[%i, %j]
      store %v, %B[%i, %j]
    }
  }
}
)");
  const Op *load = firstLoad(p.functions[0].body[0]);
  // run = min(pow2_floor(extent), max vector width)
  CHECK(contiguityAlongIv(p, *load, "%j", 48, 8).maxContiguousRun == 8);
  CHECK(contiguityAlongIv(p, *load, "%j", 48, 16).maxContiguousRun == 16);
  CHECK(contiguityAlongIv(p, *load, "%j", 48, 64).maxContiguousRun == 32);
  CHECK(contiguityAlongIv(p, *load, "%j", 6, 16).maxContiguousRun == 4);
  // Outer iv: stride is the row length, no contiguity.
  CHECK(contiguityAlongIv(p, *load, "%i", 16, 8).maxContiguousRun == 1);
  confirmRunLength(p, *load, "%j", 48, 8, /*expectMaximal=*/false);
}

TEST_CASE("strided access A[2j] has run 1") {
  Program p = test::parse(R"(
buffer %A : <64 x f32, global> input
buffer %B : <32 x f32, global> output
func @main {
  for %j = (0) to (32) step 1 {
    %v = load %A[%j * 2]
    store %v, %B[%j]
  }
}
)");
  const Op *load = firstLoad(p.functions[0].body[0]);
  CHECK(contiguityAlongIv(p, *load, "%j", 32, 8).maxContiguousRun == 1);
}

TEST_CASE("misaligned floordiv offset breaks run constancy") {
  Program p = test::parse(R"(
buffer %A : <32x2 x f32, global> input
buffer %B : <64 x f32, global> output
func @main {
  for %j = (0) to (64) step 1 {
    %v = load %A[(%j + 1) floordiv 2, (%j + 1) mod 2]
    store %v, %B[%j]
  }
}
)");
  const Op *load = firstLoad(p.functions[0].body[0]);
  // (j+1) pairs straddle the aligned runs: only run 1 is safe.
  CHECK(contiguityAlongIv(p, *load, "%j", 64, 8).maxContiguousRun == 1);
  // The aligned variant is contiguous in pairs.
  Program q = test::parse(R"(
buffer %A : <32x2 x f32, global> input
buffer %B : <64 x f32, global> output
func @main {
  for %j = (0) to (64) step 1 {
    %v = load %A[%j floordiv 2, %j mod 2]
    store %v, %B[%j]
  }
}
)");
  const Op *load2 = firstLoad(q.functions[0].body[0]);
  // (j/2)*2 + j%2 == j is fully contiguous, but the structural method only
  // certifies the mod-2 pairs; the sound under-approximation is 2.
  CHECK(contiguityAlongIv(q, *load2, "%j", 64, 8).maxContiguousRun == 2);
  confirmRunLength(q, *load2, "%j", 64, 2, /*expectMaximal=*/false);
}

//===----------------------------------------------------------------------===//
// Dependence
//===----------------------------------------------------------------------===//

namespace {

struct TwoNests {
  Program p;
  AccessInstance store;
  AccessInstance load;
};

/// Builds: nest0 writes %B via storeExpr(i), nest1 reads %B via loadExpr(j).
TwoNests makeWriteRead(int64_t extent0, int64_t extent1, int64_t bufLen,
                       AffineExpr storeExpr, AffineExpr loadExpr) {
  TwoNests t;
  BufferDecl b{"%B", {bufLen}, ElementType::F32, MemorySpace::Global, false, false};
  BufferDecl out{"%O", {extent1}, ElementType::F32, MemorySpace::Global, false, true};
  t.p.buffers = {b, out};
  Function f;
  f.name = "main";
  Op w = makeForConst("%i", 0, extent0);
  w.body.push_back(makeArith("%c", ArithKind::Add, {Operand::immF(1), Operand::immF(2)}));
  AffineMap sm(1, 0, {storeExpr});
  w.body.push_back(makeStore(Operand::val("%c"), "%B", sm, {"%i"}));
  Op r = makeForConst("%j", 0, extent1);
  AffineMap lm(1, 0, {loadExpr});
  r.body.push_back(makeLoad("%v", "%B", lm, {"%j"}));
  r.body.push_back(makeStore(Operand::val("%v"), "%O",
                             AffineMap(1, 0, {AffineExpr::dim(0)}), {"%j"}));
  f.body.push_back(std::move(w));
  f.body.push_back(std::move(r));
  t.p.functions.push_back(std::move(f));
  const Op &wref = t.p.functions[0].body[0];
  const Op &rref = t.p.functions[0].body[1];
  t.store = {&wref.body[1], {&wref}, true};
  t.load = {&rref.body[0], {&rref}, false};
  return t;
}

} // namespace

TEST_CASE("same-range write/read dependence exists") {
  auto t = makeWriteRead(10, 10, 32, AffineExpr::dim(0), AffineExpr::dim(0));
  auto res = dependenceExists(t.p, t.store, t.load, 0);
  CHECK(res.exists);
  CHECK(res.exact);
  CHECK(oracle::bruteForceDependence(t.p, t.store, t.load, 0));
}

TEST_CASE("disjoint offset ranges: no dependence") {
  // B[i] written over [0,10), B[j+20] read over [0,10).
  auto t = makeWriteRead(10, 10, 32, AffineExpr::dim(0), AffineExpr::dim(0) + 20);
  auto res = dependenceExists(t.p, t.store, t.load, 0);
  CHECK_FALSE(res.exists);
  CHECK_FALSE(oracle::bruteForceDependence(t.p, t.store, t.load, 0));
}

TEST_CASE("parity-disjoint strided accesses: exact") {
  // B[2i] vs B[2j+1]: never alias.
  auto t = makeWriteRead(10, 10, 32, AffineExpr::dim(0) * 2,
                         AffineExpr::dim(0) * 2 + 1);
  auto res = dependenceExists(t.p, t.store, t.load, 0);
  CHECK_FALSE(res.exists);
  CHECK_FALSE(oracle::bruteForceDependence(t.p, t.store, t.load, 0));
}

TEST_CASE("stencil consumer offsets: dependence only in the offset dimension") {
  Program p = test::parse(R"(
buffer %T : <3x64x16 x f32, global>
buffer %O : <3x62x16 x f32, global> output
func @main {
  for %z = (0) to (3) step 1 {
    for %y = (0) to (64) step 1 {
      for %x = (0) to (16) step 1 {
        %c = add 1.0, 2.0
        store %c, %T[%z, %y, %x]
      }
    }
  }
  for %z2 = (0) to (3) step 1 {
    for %y2 = (0) to (62) step 1 {
      for %x2 = (0) to (16) step 1 {
        %a = load %T[%z2, %y2, %x2]
        %b = load %T[%z2, %y2 + 1, %x2]
        %d = load %T[%z2, %y2 + 2, %x2]
        %s = add %a, %b
        %s2 = add %s, %d
        store %s2, %O[%z2, %y2, %x2]
      }
    }
  }
}
)");
  auto stores = collectAccesses(p.functions[0].body[0], "%T");
  auto reads = collectAccesses(p.functions[0].body[1], "%T");
  REQUIRE(stores.size() == 1);
  REQUIRE(reads.size() == 3);
  for (size_t i = 0; i < reads.size(); ++i) {
    auto res = dependenceExists(p, stores[0], reads[i], 0);
    CHECK(res.exists);
    CHECK(res.exact);
    REQUIRE(res.dimVaries.size() == 3);
    CHECK_FALSE(res.dimVaries[0]);
    CHECK(res.dimVaries[1] == (i != 0)); // delta in {0,1,2}
    CHECK_FALSE(res.dimVaries[2]);
    CHECK(oracle::bruteForceDependence(p, stores[0], reads[i], 0));
  }
}

TEST_CASE("FM fallback handles floordiv/mod accesses") {
  // Write B[4a + b] as B[i floordiv 4, ...]-style composed access vs a
  // disjoint tail region.
  Program p = test::parse(R"(
buffer %B : <8x4 x f32, global>
buffer %O : <16 x f32, global> output
func @main {
  for %i = (0) to (16) step 1 {
    %c = add 1.0, 0.0
    store %c, %B[%i floordiv 4, %i mod 4]
  }
  for %j = (0) to (16) step 1 {
    %v = load %B[(%j + 16) floordiv 4, %j mod 4]
    store %v, %O[%j]
  }
}
)");
  auto stores = collectAccesses(p.functions[0].body[0], "%B");
  auto loads = collectAccesses(p.functions[0].body[1], "%B");
  auto res = dependenceExists(p, stores[0], loads[0], 0);
  CHECK_FALSE(res.exists);
  CHECK_FALSE(oracle::bruteForceDependence(p, stores[0], loads[0], 0));

  // Overlapping region found through the same composed maps.
  Program q = test::parse(R"(
buffer %B : <8x4 x f32, global>
buffer %O : <16 x f32, global> output
func @main {
  for %i = (0) to (16) step 1 {
    %c = add 1.0, 0.0
    store %c, %B[%i floordiv 4, %i mod 4]
  }
  for %j = (0) to (16) step 1 {
    %v = load %B[(%j + 12) floordiv 4, %j mod 4]
    store %v, %O[%j]
  }
}
)");
  auto stores2 = collectAccesses(q.functions[0].body[0], "%B");
  auto loads2 = collectAccesses(q.functions[0].body[1], "%B");
  CHECK(dependenceExists(q, stores2[0], loads2[0], 0).exists);
  CHECK(oracle::bruteForceDependence(q, stores2[0], loads2[0], 0));
}

TEST_CASE("oracle agreement on randomized small access pairs") {
  uint64_t state = 99;
  auto next = [&]() {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    return static_cast<int64_t>(state >> 35);
  };
  int checked = 0;
  for (int trial = 0; trial < 80; ++trial) {
    int64_t a1 = next() % 4 - 1, c1 = next() % 12, a2 = next() % 4 - 1,
            c2 = next() % 12;
    if (a1 == 0 && a2 == 0)
      continue;
    int64_t n = 6 + next() % 6;
    int64_t len = 64;
    auto expr = [&](int64_t a, int64_t c) { return AffineExpr::dim(0) * a + c; };
    auto t = makeWriteRead(n, n, len, expr(a1, c1), expr(a2, c2));
    auto res = dependenceExists(t.p, t.store, t.load, 0);
    bool truth = oracle::bruteForceDependence(t.p, t.store, t.load, 0);
    if (res.exact) {
      CHECK(res.exists == truth);
      ++checked;
    } else {
      CHECK(res.exists); // conservative answers must claim dependence
    }
  }
  CHECK(checked > 40);

  // A second family through the tile-decomposed FM path, where the integer
  // tightening keeps emptiness answers exact.
  for (int64_t shift : {4, 8, 12, 16, 20}) {
    Program p = test::parse(
        "buffer %B : <16x4 x f32, global>\n"
        "buffer %O : <16 x f32, global> output\n"
        "func @main {\n"
        "  for %i = (0) to (16) step 1 {\n"
        "    %c = add 1.0, 0.0\n"
        "    store %c, %B[%i floordiv 4, %i mod 4]\n"
        "  }\n"
        "  for %j = (0) to (8) step 1 {\n"
        "    %v = load %B[(%j + " + std::to_string(shift) + ") floordiv 4, %j mod 4]\n"
        "    store %v, %O[%j]\n"
        "  }\n"
        "}\n");
    auto stores = collectAccesses(p.functions[0].body[0], "%B");
    auto loads = collectAccesses(p.functions[0].body[1], "%B");
    bool truth = oracle::bruteForceDependence(p, stores[0], loads[0], 0);
    auto res = dependenceExists(p, stores[0], loads[0], 0);
    if (res.exact)
      CHECK(res.exists == truth);
    else
      CHECK(res.exists);
  }
}

TEST_CASE("loop parallelism and reduction recognition") {
  Program p = test::parse(R"(
buffer %A : <8x8 x f32, global> input
buffer %B : <8x8 x f32, global> input
buffer %C : <8x8 x f32, global> output
buffer %S : <8 x f32, global>
func @main {
  for %i = (0) to (8) step 1 {
    for %j = (0) to (8) step 1 {
      store 0.0, %C[%i, %j]
      for %k = (0) to (8) step 1 {
        %a = load %A[%i, %k]
        %b = load %B[%k, %j]
        %c = load %C[%i, %j]
        %m = fma %a, %b, %c
        store %m, %C[%i, %j]
      }
    }
  }
  for %i2 = (1) to (8) step 1 {
    %x = load %S[%i2 - 1]
    %y = add %x, 1.0
    store %y, %S[%i2]
  }
}
)");
  const Op &matmul = p.functions[0].body[0];
  LoopChain chain = buildLoopChain(matmul);
  REQUIRE(chain.depth() == 3);
  CHECK(loopIsParallel(p, matmul, *chain.loops[0]));
  CHECK(loopIsParallel(p, matmul, *chain.loops[1]));
  CHECK_FALSE(loopIsParallel(p, matmul, *chain.loops[2]));
  CHECK(loopIsReduction(p, matmul, *chain.loops[2]));
  CHECK(bandIsTileable(p, matmul, chain.loops));

  // The serial recurrence is neither parallel nor a reduction.
  const Op &recurrence = p.functions[0].body[1];
  LoopChain rchain = buildLoopChain(recurrence);
  CHECK_FALSE(loopIsParallel(p, recurrence, *rchain.loops[0]));
  CHECK_FALSE(loopIsReduction(p, recurrence, *rchain.loops[0]));
  CHECK_FALSE(bandIsTileable(p, recurrence, rchain.loops));
}

//===----------------------------------------------------------------------===//
// Slices
//===----------------------------------------------------------------------===//

TEST_CASE("pointwise producer slice at depth 1 is a single point") {
  Program p = test::parse(R"(
buffer %A : <32 x f32, global> input
buffer %B : <32 x f32, global>
buffer %C : <32 x f32, global> output
func @main {
  for %i = (0) to (32) step 1 {
    %a = load %A[%i]
    %b = mul %a, 2.0
    store %b, %B[%i]
  }
  for %j = (0) to (32) step 1 {
    %v = load %B[%j]
    %w = add %v, 1.0
    store %w, %C[%j]
  }
}
)");
  auto slice = computeSlice(p, p.functions[0].body[0], p.functions[0].body[1],
                            "%B", 1);
  REQUIRE(slice.has_value());
  CHECK(slice->insertionDepth == 1);
  REQUIRE(slice->producerBounds.size() == 1);
  REQUIRE(slice->boxExtents.size() == 1);
  CHECK(slice->boxExtents[0] == 1);
  CHECK(slice->redundancyRatio == 0.0);
  CHECK(slice->dstIvs == std::vector<std::string>{"%j"});
}

TEST_CASE("3-wide stencil consumer slice: width T+2, redundancy 2/T") {
  // Producer over [0,26); consumer tiled by T=6 reads B[x..x+2].
  Program p = test::parse(R"(
buffer %A : <26 x f32, global> input
buffer %B : <26 x f32, global>
buffer %C : <24 x f32, global> output
func @main {
  for %x = (0) to (26) step 1 {
    %a = load %A[%x]
    %b = mul %a, 2.0
    store %b, %B[%x]
  }
  for %t = (0) to (4) step 1 {
    for %x2 = (%t * 6) to (%t * 6 + 6) step 1 {
      %v0 = load %B[%x2]
      %v1 = load %B[%x2 + 1]
      %v2 = load %B[%x2 + 2]
      %s = add %v0, %v1
      %s2 = add %s, %v2
      store %s2, %C[%x2]
    }
  }
}
)");
  auto slice = computeSlice(p, p.functions[0].body[0], p.functions[0].body[1],
                            "%B", 1);
  REQUIRE(slice.has_value());
  REQUIRE(slice->boxExtents.size() == 1);
  CHECK(slice->boxExtents[0] == 6 + 2);
  // Brute-force count: fused executes 4 tiles x 8 producer iterations = 32
  // vs 26 original; measured ratio must match the closed form within the
  // boundary-clamp correction. The last tile clamps to the domain, so the
  // exact count is 3*8 + 8 = 32 ... ratio = (32-26)/26.
  double expected = (4.0 * 8.0 - 26.0) / 26.0;
  CHECK(slice->redundancyRatio == doctest::Approx(expected));
  // The closed-form 2/T figure matches the unclamped interior tiles:
  // (T+2)/T - 1 == 2/6.
  CHECK((8.0 / 6.0) - 1.0 == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("slice over the Fig-5 shaped blur pair yields the 1x126x6 box") {
  // Producer: horizontal 3-tap over [3,250,24]; consumer: vertical 3-tap
  // tiled (1,124,6) reading rows y..y+2, fused under the x-tile loop (d=3).
  Program p = test::parse(R"(
buffer %img : <3x250x26 x f32, global> input
buffer %bx : <3x250x24 x f32, global>
buffer %out : <3x248x24 x f32, global> output
func @main {
  for %z = (0) to (3) step 1 {
    for %y = (0) to (250) step 1 {
      for %x = (0) to (24) step 1 {
        %a = load %img[%z, %y, %x]
        %b = load %img[%z, %y, %x + 1]
        %c = load %img[%z, %y, %x + 2]
        %s = add %a, %b
        %s2 = add %s, %c
        store %s2, %bx[%z, %y, %x]
      }
    }
  } attrs{kind="stencil"}
  for %zt = (0) to (3) step 1 {
    for %yt = (0) to (2) step 1 {
      for %xt = (0) to (4) step 1 {
        for %y2 = (%yt * 124) to (%yt * 124 + 124) step 1 {
          for %x2 = (%xt * 6) to (%xt * 6 + 6) step 1 {
            %v0 = load %bx[%zt, %y2, %x2]
            %v1 = load %bx[%zt, %y2 + 1, %x2]
            %v2 = load %bx[%zt, %y2 + 2, %x2]
            %s = add %v0, %v1
            %s2 = add %s, %v2
            store %s2, %out[%zt, %y2, %x2]
          }
        }
      }
    }
  } attrs{kind="stencil"}
}
)");
  auto slice = computeSlice(p, p.functions[0].body[0], p.functions[0].body[1],
                            "%bx", 3);
  REQUIRE(slice.has_value());
  REQUIRE(slice->boxExtents.size() == 3);
  CHECK(slice->boxExtents[0] == 1);
  CHECK(slice->boxExtents[1] == 126); // 124 + halo 2
  CHECK(slice->boxExtents[2] == 6);
  // Redundancy: 3*2*4 slices of 756 vs 3*250*24 original iterations.
  double expected = (3 * 2 * 4 * 756.0 - 18000.0) / 18000.0;
  CHECK(slice->redundancyRatio == doctest::Approx(expected));
  CHECK(slice->redundancyRatio < 0.10);
}

//===----------------------------------------------------------------------===//
// Kind classification
//===----------------------------------------------------------------------===//

namespace {

NestKind classifyText(const std::string &text) {
  static std::vector<Program> keepAlive;
  keepAlive.push_back(test::parse(text));
  Program &p = keepAlive.back();
  return classifyNestKind(p, p.functions[0].body[0]);
}

} // namespace

TEST_CASE("canonical matmul pattern classifies as matmul") {
  CHECK(classifyText(R"(
buffer %A : <8x4 x f32, global> input
buffer %B : <4x8 x f32, global> input
buffer %C : <8x8 x f32, global> output
func @main {
  for %i = (0) to (8) step 1 {
    for %j = (0) to (8) step 1 {
      store 0.0, %C[%i, %j]
      for %k = (0) to (4) step 1 {
        %a = load %A[%i, %k]
        %b = load %B[%k, %j]
        %c = load %C[%i, %j]
        %m = fma %a, %b, %c
        store %m, %C[%i, %j]
      }
    }
  }
}
)") == NestKind::Matmul);
}

TEST_CASE("broadcast: out[i][j][k] = in[k]") {
  CHECK(classifyText(R"(
buffer %in : <8 x f32, global> input
buffer %out : <2x4x8 x f32, global> output
func @main {
  for %i = (0) to (2) step 1 {
    for %j = (0) to (4) step 1 {
      for %k = (0) to (8) step 1 {
        %v = load %in[%k]
        store %v, %out[%i, %j, %k]
      }
    }
  }
}
)") == NestKind::Broadcast);
}

TEST_CASE("5-point stencil classifies as stencil") {
  CHECK(classifyText(R"(
buffer %in : <18x18 x f32, global> input
buffer %out : <16x16 x f32, global> output
func @main {
  for %i = (0) to (16) step 1 {
    for %j = (0) to (16) step 1 {
      %c = load %in[%i + 1, %j + 1]
      %n = load %in[%i, %j + 1]
      %s = load %in[%i + 2, %j + 1]
      %w = load %in[%i + 1, %j]
      %e = load %in[%i + 1, %j + 2]
      %t1 = add %c, %n
      %t2 = add %t1, %s
      %t3 = add %t2, %w
      %t4 = add %t3, %e
      store %t4, %out[%i, %j]
    }
  }
}
)") == NestKind::Stencil);
}

TEST_CASE("pointwise, reduction, and misc") {
  CHECK(classifyText(R"(
buffer %a : <4x4 x f32, global> input
buffer %m : <4 x f32, global> input
buffer %e : <4x4 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    for %j = (0) to (4) step 1 {
      %x = load %a[%i, %j]
      %mm = load %m[%i]
      %s = sub %x, %mm
      %y = exp %s
      store %y, %e[%i, %j]
    }
  }
}
)") == NestKind::Pointwise);

  CHECK(classifyText(R"(
buffer %a : <4x8 x f32, global> input
buffer %s : <4 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    store 0.0, %s[%i]
    for %j = (0) to (8) step 1 {
      %acc = load %s[%i]
      %x = load %a[%i, %j]
      %y = add %acc, %x
      store %y, %s[%i]
    }
  }
}
)") == NestKind::Reduction);

  // Transposed load order is not order-preserving: misc.
  CHECK(classifyText(R"(
buffer %a : <4x4 x f32, global> input
buffer %t : <4x4 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    for %j = (0) to (4) step 1 {
      %x = load %a[%j, %i]
      store %x, %t[%i, %j]
    }
  }
}
)") == NestKind::Misc);
}

TEST_CASE("batched contraction still classifies as matmul") {
  CHECK(classifyText(R"(
buffer %A : <2x4x3 x f32, global> input
buffer %B : <2x3x5 x f32, global> input
buffer %C : <2x4x5 x f32, global> output
func @main {
  for %b = (0) to (2) step 1 {
    for %i = (0) to (4) step 1 {
      for %j = (0) to (5) step 1 {
        store 0.0, %C[%b, %i, %j]
        for %k = (0) to (3) step 1 {
          %a = load %A[%b, %i, %k]
          %bb = load %B[%b, %k, %j]
          %c = load %C[%b, %i, %j]
          %m = fma %a, %bb, %c
          store %m, %C[%b, %i, %j]
        }
      }
    }
  }
}
)") == NestKind::Matmul);
}

//===----------------------------------------------------------------------===//
// Temporal reuse
//===----------------------------------------------------------------------===//

TEST_CASE("temporal reuse factor from absent ivs") {
  Program p = test::parse(R"(
buffer %A : <4x2 x f32, global> input
buffer %B : <2x8 x f32, global> input
buffer %C : <4x8 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    for %j = (0) to (8) step 1 {
      store 0.0, %C[%i, %j]
      for %k = (0) to (2) step 1 {
        %a = load %A[%i, %k]
        %b = load %B[%k, %j]
        %c = load %C[%i, %j]
        %m = fma %a, %b, %c
        store %m, %C[%i, %j]
      }
    }
  }
}
)");
  const Op &nest = p.functions[0].body[0];
  // A[i,k] inside (i,j,k): j absent, trip 8.
  CHECK(temporalReuseFactor(p, nest, "%A") == doctest::Approx(8.0));
  // B[k,j]: i absent, trip 4.
  CHECK(temporalReuseFactor(p, nest, "%B") == doctest::Approx(4.0));
  // C[i,j]: k absent for each access, trip 2.
  CHECK(temporalReuseFactor(p, nest, "%C") == doctest::Approx(2.0));
}

TEST_CASE("identity access has factor 1") {
  Program p = test::parse(R"(
buffer %A : <4x8 x f32, global> input
buffer %B : <4x8 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    for %j = (0) to (8) step 1 {
      %v = load %A[%i, %j]
      store %v, %B[%i, %j]
    }
  }
}
)");
  CHECK(temporalReuseFactor(p, p.functions[0].body[0], "%A") == 1.0);
}
