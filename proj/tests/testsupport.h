//===- testsupport.h - Shared test helpers ----------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#ifndef AF_TESTSUPPORT_H
#define AF_TESTSUPPORT_H

#include "af/interp.h"
#include "af/ir.h"
#include "af/parser.h"
#include "af/printer.h"
#include "af/verify.h"

#include <string>

namespace af::test {

/// Parses, failing the test with the parse error message on bad input.
Program parse(const std::string &text);

/// REQUIREs a clean verifier report and returns it.
void expectVerifies(const Program &p);

/// Interprets with generated inputs; convenience for oracle comparisons.
InterpResult runWithRandomInputs(const Program &p, uint64_t seed,
                                 const InterpOptions &options = {});

} // namespace af::test

#endif // AF_TESTSUPPORT_H
