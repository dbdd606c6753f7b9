//===- test_interp.cpp - Interpreter and metrics unit tests -------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testsupport.h"

#include <cmath>

using namespace af;

namespace {

const char *kMatmul2x2 = R"(
buffer %A : <2x2 x f32, global> input
buffer %B : <2x2 x f32, global> input
buffer %C : <2x2 x f32, global> output
func @main {
  for %i = (0) to (2) step 1 {
    for %j = (0) to (2) step 1 {
      store 0.0, %C[%i, %j]
      for %k = (0) to (2) step 1 {
        %a = load %A[%i, %k]
        %b = load %B[%k, %j]
        %c = load %C[%i, %j]
        %m = fma %a, %b, %c
        store %m, %C[%i, %j]
      }
    }
  } attrs{kind="matmul"}
}
)";

TensorValue tensor(std::vector<int64_t> shape, std::vector<double> data,
                   ElementType t = ElementType::F32) {
  TensorValue tv;
  tv.shape = std::move(shape);
  tv.type = t;
  tv.data = std::move(data);
  return tv;
}

} // namespace

TEST_CASE("2x2 matmul: identity times A equals A") {
  Program p = test::parse(kMatmul2x2);
  test::expectVerifies(p);
  std::map<std::string, TensorValue> inputs;
  inputs["%A"] = tensor({2, 2}, {1, 0, 0, 1});
  inputs["%B"] = tensor({2, 2}, {3.5, -2, 0.25, 7});
  auto res = interpret(p, inputs);
  REQUIRE(res.outputs.count("%C"));
  CHECK(res.outputs["%C"].data == std::vector<double>{3.5, -2, 0.25, 7});
  // Traffic: 3 loads and 1 store per k-iteration plus the init store.
  CHECK(res.metrics.global.loads == 2 * 2 * 2 * 3);
  CHECK(res.metrics.global.stores == 2 * 2 * (1 + 2));
  CHECK(res.metrics.flops == 2 * 2 * 2 * 2); // fma = 2 flops
  CHECK(res.metrics.nestCount == 1);
}

TEST_CASE("determinism: same seed, same outputs and metrics") {
  Program p = test::parse(kMatmul2x2);
  auto r1 = test::runWithRandomInputs(p, 42);
  auto r2 = test::runWithRandomInputs(p, 42);
  CHECK(r1.outputs.at("%C").data == r2.outputs.at("%C").data);
  CHECK(r1.metrics.toJson() == r2.metrics.toJson());
}

TEST_CASE("f16 stores round to nearest-even half precision") {
  Program p = test::parse(R"(
buffer %A : <2 x f32, global> input
buffer %B : <2 x f16, global> output
func @main {
  for %i = (0) to (2) step 1 {
    %v = load %A[%i]
    store %v, %B[%i]
  }
}
)");
  std::map<std::string, TensorValue> inputs;
  inputs["%A"] = tensor({2}, {1.0009765625, 0.3333333333333});
  auto res = interpret(p, inputs);
  // 1.0009765625 is exactly representable in f16; 1/3 rounds to 0.33325195.
  CHECK(res.outputs["%B"].data[0] == doctest::Approx(1.0009765625).epsilon(1e-12));
  CHECK(res.outputs["%B"].data[1] == doctest::Approx(0.333251953125).epsilon(1e-12));
  CHECK(roundToF16(65520.0) == std::numeric_limits<double>::infinity());
  CHECK(roundToF16(-0.0) == 0.0);
  CHECK(roundToF16(6.103515625e-05) == 6.103515625e-05); // smallest normal
}

TEST_CASE("out-of-bounds access fails with iv trace") {
  Program p = test::parse(R"(
buffer %A : <4 x f32, global> input
buffer %B : <4 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    %v = load %A[%i + 1]
    store %v, %B[%i]
  }
}
)");
  std::map<std::string, TensorValue> inputs;
  inputs["%A"] = tensor({4}, {0, 1, 2, 3});
  try {
    interpret(p, inputs);
    FAIL("expected InterpError");
  } catch (const InterpError &e) {
    std::string msg = e.what();
    CHECK(msg.find("out-of-bounds") != std::string::npos);
    CHECK(msg.find("%i=3") != std::string::npos);
  }
}

TEST_CASE("use-before-await on async-copied region fails") {
  Program p = test::parse(R"(
buffer %A : <8 x f32, global> input
buffer %As : <8 x f32, shared>
buffer %B : <8 x f32, global> output
func @main {
  alloc %As
  for %z = (0) to (8) step 1 {
    store 0.0, %As[%z]
  }
  async_copy "t" dst %As src %A {
    for %i = (0) to (8) step 1 {
      %v = load %A[%i]
      store %v, %As[%i]
    }
  }
  for %j = (0) to (8) step 1 {
    %w = load %As[%j]
    store %w, %B[%j]
  }
  await_copies "t"
  dealloc %As
}
)");
  std::map<std::string, TensorValue> inputs;
  inputs["%A"] = tensor({8}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK_THROWS_WITH_AS(interpret(p, inputs),
                       doctest::Contains("use-before-await"), InterpError);
}

TEST_CASE("async copy completes at the await") {
  Program p = test::parse(R"(
buffer %A : <4 x f32, global> input
buffer %As : <4 x f32, shared>
buffer %B : <4 x f32, global> output
func @main {
  alloc %As
  async_copy "t" dst %As src %A {
    for %i = (0) to (4) step 1 {
      %v = load %A[%i]
      store %v, %As[%i]
    }
  }
  await_copies "t"
  for %j = (0) to (4) step 1 {
    %w = load %As[%j]
    store %w, %B[%j]
  }
  dealloc %As
}
)");
  std::map<std::string, TensorValue> inputs;
  inputs["%A"] = tensor({4}, {5, 6, 7, 8});
  auto res = interpret(p, inputs);
  CHECK(res.outputs["%B"].data == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("read of register value before write fails") {
  Program p = test::parse(R"(
buffer %R : <4 x f32, register>
buffer %B : <4 x f32, global> output
func @main {
  alloc %R
  for %i = (0) to (4) step 1 {
    %v = load %R[%i]
    store %v, %B[%i]
  }
  dealloc %R
}
)");
  CHECK_THROWS_WITH_AS(interpret(p, {}),
                       doctest::Contains("register-space value before write"),
                       InterpError);
}

TEST_CASE("parallel write-conflict detection") {
  Program p = test::parse(R"(
buffer %B : <4 x f32, global> output
func @main {
  parallel (%i, %j) = (0, 0) to (4, 4) {
    %v = add 1.0, 2.0
    store %v, %B[%i]
  }
}
)");
  InterpOptions opts;
  opts.checkParallelConflicts = true;
  CHECK_THROWS_WITH_AS(interpret(p, {}, opts),
                       doctest::Contains("write-write conflict"), InterpError);
  // Disjoint writes are fine.
  Program q = test::parse(R"(
buffer %B : <4x4 x f32, global> output
func @main {
  parallel (%i, %j) = (0, 0) to (4, 4) {
    %v = add 1.0, 2.0
    store %v, %B[%i, %j]
  }
}
)");
  CHECK_NOTHROW(interpret(q, {}, opts));
}

TEST_CASE("mma compute is an exact 16x16x16 multiply-accumulate") {
  Program p = test::parse(R"(
buffer %A : <16x16 x f16, global> input
buffer %B : <16x16 x f16, global> input
buffer %C : <16x16 x f32, global> output
func @main {
  for %z = (0) to (16) step 1 {
    for %w = (0) to (16) step 1 {
      store 0.0, %C[%z, %w]
    }
  }
  %fa = mma_load %A[0, 0] : A
  %fb = mma_load %B[0, 0] : B
  %fc = mma_load %C[0, 0] : C
  %fo = mma_compute %fa, %fb, %fc
  mma_store %fo, %C[0, 0]
}
)");
  auto inputs = makeRandomInputs(p, 7);
  auto res = interpret(p, inputs);
  // Reference: compute in double on the f16-rounded inputs.
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      double acc = 0;
      for (int k = 0; k < 16; ++k)
        acc += roundToF16(inputs["%A"].data[i * 16 + k]) *
               roundToF16(inputs["%B"].data[k * 16 + j]);
      acc = roundToType(acc, ElementType::F32);
      CHECK(res.outputs["%C"].data[i * 16 + j] == acc);
    }
  CHECK(res.metrics.fragmentComputes == 1);
  CHECK(res.metrics.fragmentLoads == 3);
  CHECK(res.metrics.fragmentStores == 1);
  CHECK(res.metrics.flops == 0); // no scalar flops
}

TEST_CASE("compare profiles") {
  TensorValue a = tensor({3}, {1.0, 2.0, 3.0});
  TensorValue b = tensor({3}, {1.0, 2.0, 3.0});
  auto rep = compareTensors(a, b, TolProfile::F32);
  CHECK(rep.passed);
  CHECK(rep.maxAbsErr == 0.0);

  TensorValue c = tensor({3}, {1.0, 2.0, 3.1});
  auto rep2 = compareTensors(a, c, TolProfile::F32);
  CHECK_FALSE(rep2.passed);
  CHECK(rep2.worstIndex == 2);

  auto rep3 = compareTensors(a, c, TolProfile::Int);
  CHECK_FALSE(rep3.passed);
  CHECK_THROWS_AS(compareTensors(a, tensor({2}, {1, 2}), TolProfile::F32),
                  InterpError);
}

TEST_CASE("metrics json and diff") {
  Program p = test::parse(kMatmul2x2);
  auto res = test::runWithRandomInputs(p, 3);
  std::string js = res.metrics.toJson();
  CHECK(js.find("\"global\"") != std::string::npos);
  CHECK(js.find("\"per_buffer\"") != std::string::npos);
  Metrics empty;
  std::string diff = diffMetrics(empty, res.metrics);
  CHECK(diff.find("\"delta\"") != std::string::npos);
}

TEST_CASE("quant and dequant stubs") {
  Program p = test::parse(R"(
buffer %A : <4 x f32, global> input
buffer %Q : <4 x i8, global> output
buffer %D : <4 x f32, global> output
func @main {
  for %i = (0) to (4) step 1 {
    %v = load %A[%i]
    %q = quant %v scale 0.5
    %d = dequant %q scale 0.5
    store %q, %Q[%i]
    store %d, %D[%i]
  }
}
)");
  std::map<std::string, TensorValue> inputs;
  inputs["%A"] = tensor({4}, {0.74, -0.76, 100.0, -0.25});
  auto res = interpret(p, inputs);
  // round-half-away-from-zero then clamp to [-128, 127].
  CHECK(res.outputs["%Q"].data == std::vector<double>{1, -2, 127, -1});
  CHECK(res.outputs["%D"].data == std::vector<double>{0.5, -1.0, 63.5, -0.5});
}
