//===- test_ir_roundtrip.cpp - Textual format round-trip ---------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testsupport.h"

using namespace af;

namespace {

void checkRoundTrip(const std::string &text) {
  Program p1 = test::parse(text);
  std::string printed = printProgram(p1);
  Program p2 = test::parse(printed);
  CHECK(p1 == p2);
  // Printing is a fixpoint after one round.
  CHECK(printProgram(p2) == printed);
}

} // namespace

TEST_CASE("empty function round-trips") {
  checkRoundTrip("func @main {\n}\n");
}

TEST_CASE("2-d copy nest round-trips") {
  checkRoundTrip(R"(
buffer %A : <4x8 x f32, global> input
buffer %B : <4x8 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    for %j = (0) to (8) step 1 {
      %v = load %A[%i, %j]
      store %v, %B[%i, %j]
    }
  } attrs{kind="pointwise", parallel}
}
)");
}

TEST_CASE("fused stencil analog with alloc and scaled bounds") {
  checkRoundTrip(R"(
buffer %img : <3x250x26 x f32, global> input
buffer %out : <3x248x24 x f32, global> output
buffer %tile : <1x126x6 x f32, shared>
func @main {
  for %z = (0) to (3) step 1 {
    for %yt = (0) to (2) step 1 {
      for %xt = (0) to (4) step 1 {
        alloc %tile
        for %y = (%yt * 124) to (%yt * 124 + 126) step 1 {
          for %x = (%xt * 6) to (%xt * 6 + 6) step 1 {
            %a = load %img[%z, %y, %x]
            %b = load %img[%z, %y, %x + 1]
            %c = load %img[%z, %y, %x + 2]
            %s1 = add %a, %b
            %s2 = add %s1, %c
            store %s2, %tile[0, %y - %yt * 124, %x - %xt * 6]
          }
        } attrs{kind="stencil"}
        for %y2 = (0) to (124) step 1 {
          for %x2 = (0) to (6) step 1 {
            %d = load %tile[0, %y2, %x2]
            %e = load %tile[0, %y2 + 1, %x2]
            %f = load %tile[0, %y2 + 2, %x2]
            %t1 = add %d, %e
            %t2 = add %t1, %f
            store %t2, %out[%z, %yt * 124 + %y2, %xt * 6 + %x2]
          }
        } attrs{kind="stencil"}
        dealloc %tile
      }
    }
  } attrs{kind="stencil", tile_space}
}
)");
}

TEST_CASE("all op kinds round-trip") {
  checkRoundTrip(R"(
buffer %A : <32x32 x f16, global> input
buffer %As : <32x32 x f16, shared>
buffer %C : <32x32 x f32, global> output
buffer %Cs : <32x32 x f32, shared>
buffer %q : <16 x i8, global>
func @main {
  alloc %As
  alloc %Cs
  async_copy "t0" dst %As src %A {
    for %i = (0) to (32) step 1 {
      for %j = (0) to (32) step 1 {
        %v = load %A[%i, %j]
        store %v, %As[%i, %j]
      }
    } attrs{copy_nest}
  }
  await_copies "t0"
  parallel (%ti, %tj) = (0, 0) to (2, 2) {
    %fa = mma_load %As[%ti * 16, %tj * 16] : A
    %fb = mma_load %As[%tj * 16, %ti * 16] : B
    %fc = mma_load %Cs[%ti * 16, %tj * 16] : C
    %fd = mma_compute %fa, %fb, %fc
    mma_store %fd, %Cs[%ti * 16, %tj * 16]
  } attrs{kind="matmul", matmul_info={virtual_matmul}}
  for %i = max(0, 3) to min(32, 40) step 2 {
    %x = load %Cs[%i, %i]
    %y = exp %x
    %z = negate %y
    %w = fma %x, %y, %z
    %p = cmp lt, %w, 0.5
    %s = select %p, %w, 1.5
    %c8 = quant %s scale 0.02
    %cf = dequant %c8 scale 0.02
    %ci = cast %cf : i8
    %m = max %cf, %s
    %d = div %m, 2.0
    %e = sub %d, -3.25
    store %ci, %q[%i floordiv 2]
    store %e, %C[%i, %i mod 7]
  }
  dealloc %Cs
  dealloc %As
}
)");
}

TEST_CASE("parse errors carry location and expectation") {
  try {
    parseProgram("func @f {\n  for %i = (0 to (4) step 1 {}\n}");
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(e.line == 2);
    CHECK(std::string(e.what()).find("expected") != std::string::npos);
  }
  // Non-positive divisor in an affine expr is rejected at parse time.
  try {
    parseProgram("buffer %A : <4 x f32, global>\n"
                 "func @f {\n  for %i = (0) to (4) step 1 {\n"
                 "    %v = load %A[%i floordiv 0]\n  }\n}");
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(std::string(e.what()).find("non-positive divisor") != std::string::npos);
  }
}

TEST_CASE("generated corpus round-trips") {
  uint64_t state = 12345;
  auto next = [&]() {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    return state >> 33;
  };
  for (int trial = 0; trial < 20; ++trial) {
    Program p;
    BufferDecl a{"%A", {8, 16}, ElementType::F32, MemorySpace::Global, true, false};
    BufferDecl b{"%B", {8, 16}, ElementType::F32, MemorySpace::Global, false, true};
    p.buffers = {a, b};
    Function f;
    f.name = "main";
    Op outer = makeForConst("%i", 0, 8, 1 + static_cast<int64_t>(next() % 3));
    Op inner = makeForConst("%j", 0, 16, 1);
    AffineExpr di = AffineExpr::dim(0), dj = AffineExpr::dim(1);
    AffineExpr e0 =
        di * static_cast<int64_t>(next() % 3) + dj.floorDiv(1 + next() % 4);
    AffineExpr e1 = (dj + static_cast<int64_t>(next() % 5)).mod(16);
    AffineMap loadMap(2, 0, {di.mod(8), e1});
    std::vector<std::string> loadOps = {"%i", "%j"};
    compactAccess(loadMap, loadOps);
    inner.body.push_back(makeLoad("%v", "%A", loadMap, loadOps));
    inner.body.push_back(makeArith(
        "%w", ArithKind::Mul, {Operand::val("%v"), Operand::immF(0.5)}));
    AffineMap storeMap(2, 0, {e0.mod(8), dj});
    std::vector<std::string> storeOps = {"%i", "%j"};
    compactAccess(storeMap, storeOps);
    inner.body.push_back(
        makeStore(Operand::val("%w"), "%B", storeMap, storeOps));
    outer.body.push_back(std::move(inner));
    if (next() % 2)
      outer.attrs["kind"] = AttrValue::str("pointwise");
    if (next() % 2)
      outer.attrs["parallel"] = AttrValue::flag();
    f.body.push_back(std::move(outer));
    p.functions.push_back(std::move(f));

    std::string printed = printProgram(p);
    Program q = test::parse(printed);
    CHECK(p == q);
    CHECK(printProgram(q) == printed);
  }
}
