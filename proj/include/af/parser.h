//===- parser.h - Textual IR parsing ----------------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#ifndef AF_PARSER_H
#define AF_PARSER_H

#include "af/ir.h"

#include <stdexcept>
#include <string>

namespace af {

struct ParseError : public std::runtime_error {
  int line;
  int col;
  std::string expected;

  ParseError(int line, int col, const std::string &message,
             std::string expectedTokens = "")
      : std::runtime_error("parse error at " + std::to_string(line) + ":" +
                           std::to_string(col) + ": " + message +
                           (expectedTokens.empty()
                                ? ""
                                : " (expected " + expectedTokens + ")")),
        line(line), col(col), expected(std::move(expectedTokens)) {}
};

/// Parses the textual IR format produced by printProgram. Throws ParseError
/// with line/column and the expected-token set on malformed input.
Program parseProgram(const std::string &text);

} // namespace af

#endif // AF_PARSER_H
