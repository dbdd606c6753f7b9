//===- verify.h - Program verifier ------------------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#ifndef AF_VERIFY_H
#define AF_VERIFY_H

#include "af/ir.h"

#include <string>
#include <vector>

namespace af {

struct Violation {
  std::string message;
  std::string site; // function name and op summary
};

struct VerifyReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string str() const;
};

/// Structural checks: SSA (single def, def-before-use), iv scoping of bound
/// and access maps, access-map arity vs buffer rank, matched alloc/dealloc,
/// async-copy synchronization, positive steps/extents, register-space size
/// caps. Violations are data, not failures.
VerifyReport verifyProgram(const Program &p);

} // namespace af

#endif // AF_VERIFY_H
