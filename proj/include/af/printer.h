//===- printer.h - Textual IR emission -------------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#ifndef AF_PRINTER_H
#define AF_PRINTER_H

#include "af/ir.h"

#include <string>

namespace af {

/// Prints a program in the textual format accepted by parse_ir. The output is
/// deterministic: attrs are emitted in sorted key order and floats use the
/// shortest round-tripping form.
std::string printProgram(const Program &p);
std::string printOp(const Op &op, int indent = 0);

/// Shortest round-trip formatting for double immediates ("2.0", "0.25", ...).
std::string formatDouble(double v);

} // namespace af

#endif // AF_PRINTER_H
