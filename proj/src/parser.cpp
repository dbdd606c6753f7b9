//===- parser.cpp - Textual IR parsing --------------------------------------===//
//
// Part of the AffineForge project, under the Apache License v2.0.
// SPDX-License-Identifier: Apache-2.0
//
//===----------------------------------------------------------------------===//

#include "af/parser.h"

#include <cctype>
#include <charconv>
#include <optional>
#include <vector>

namespace af {

namespace {

enum class Tok {
  Ident,   // bare word: for, load, x4094, f32, ...
  ValueId, // %name
  FuncId,  // @name
  Number,  // integer or float literal (without sign)
  String,  // "..."
  Punct,   // single char: { } ( ) [ ] < > : , = + - * used as spelling
  End,
};

struct Token {
  Tok kind;
  std::string text;
  double num = 0;
  bool isFloat = false;
  int line = 1, col = 1;
};

class Lexer {
public:
  explicit Lexer(const std::string &text) : src(text) { next(); }

  const Token &peek() const { return tok; }
  Token take() {
    Token t = tok;
    next();
    return t;
  }

private:
  void next() {
    while (pos < src.size()) {
      char c = src[pos];
      if (c == '\n') {
        ++line;
        lineStart = pos + 1;
        ++pos;
      } else if (isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else if (c == '/' && pos + 1 < src.size() && src[pos + 1] == '/') {
        while (pos < src.size() && src[pos] != '\n')
          ++pos;
      } else {
        break;
      }
    }
    tok.line = line;
    tok.col = static_cast<int>(pos - lineStart) + 1;
    if (pos >= src.size()) {
      tok.kind = Tok::End;
      tok.text = "<eof>";
      return;
    }
    char c = src[pos];
    if (c == '%' || c == '@') {
      size_t start = pos++;
      while (pos < src.size() &&
             (isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_' ||
              src[pos] == '.'))
        ++pos;
      tok.kind = c == '%' ? Tok::ValueId : Tok::FuncId;
      tok.text = src.substr(start, pos - start);
    } else if (isdigit(static_cast<unsigned char>(c))) {
      size_t start = pos;
      bool isFloat = false;
      while (pos < src.size() && isdigit(static_cast<unsigned char>(src[pos])))
        ++pos;
      if (pos < src.size() && src[pos] == '.' && pos + 1 < src.size() &&
          isdigit(static_cast<unsigned char>(src[pos + 1]))) {
        isFloat = true;
        ++pos;
        while (pos < src.size() && isdigit(static_cast<unsigned char>(src[pos])))
          ++pos;
      }
      if (pos < src.size() && (src[pos] == 'e' || src[pos] == 'E') &&
          pos + 1 < src.size() &&
          (isdigit(static_cast<unsigned char>(src[pos + 1])) ||
           src[pos + 1] == '-' || src[pos + 1] == '+')) {
        isFloat = true;
        ++pos;
        if (src[pos] == '-' || src[pos] == '+')
          ++pos;
        while (pos < src.size() && isdigit(static_cast<unsigned char>(src[pos])))
          ++pos;
      }
      tok.kind = Tok::Number;
      tok.text = src.substr(start, pos - start);
      tok.isFloat = isFloat;
      tok.num = strtod(tok.text.c_str(), nullptr);
    } else if (isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos;
      while (pos < src.size() &&
             (isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
        ++pos;
      tok.kind = Tok::Ident;
      tok.text = src.substr(start, pos - start);
    } else if (c == '"') {
      size_t start = ++pos;
      while (pos < src.size() && src[pos] != '"')
        ++pos;
      tok.kind = Tok::String;
      tok.text = src.substr(start, pos - start);
      if (pos < src.size())
        ++pos;
    } else {
      tok.kind = Tok::Punct;
      tok.text = std::string(1, c);
      ++pos;
    }
  }

  const std::string &src;
  size_t pos = 0;
  size_t lineStart = 0;
  int line = 1;
  Token tok;
};

class Parser {
public:
  explicit Parser(const std::string &text) : lex(text) {}

  Program parse() {
    Program p;
    while (lex.peek().kind != Tok::End) {
      if (isIdent("buffer")) {
        p.buffers.push_back(parseBuffer());
      } else if (isIdent("func")) {
        p.functions.push_back(parseFunction());
      } else {
        fail("top-level declaration", "'buffer' or 'func'");
      }
    }
    return p;
  }

private:
  Lexer lex;

  [[noreturn]] void fail(const std::string &what, const std::string &expected = "") {
    const Token &t = lex.peek();
    throw ParseError(t.line, t.col, "unexpected '" + t.text + "' while parsing " + what,
                     expected);
  }

  bool isIdent(const char *s) {
    return lex.peek().kind == Tok::Ident && lex.peek().text == s;
  }
  bool isPunct(const char *s) {
    return lex.peek().kind == Tok::Punct && lex.peek().text == s;
  }

  void expectIdent(const char *s) {
    if (!isIdent(s))
      fail("statement", std::string("'") + s + "'");
    lex.take();
  }
  void expectPunct(const char *s) {
    if (!isPunct(s))
      fail("statement", std::string("'") + s + "'");
    lex.take();
  }
  std::string expectValueId() {
    if (lex.peek().kind != Tok::ValueId)
      fail("statement", "'%name'");
    return lex.take().text;
  }
  int64_t expectInt() {
    bool neg = false;
    if (isPunct("-")) {
      lex.take();
      neg = true;
    }
    if (lex.peek().kind != Tok::Number || lex.peek().isFloat)
      fail("statement", "integer");
    int64_t v = static_cast<int64_t>(lex.take().num);
    return neg ? -v : v;
  }
  double expectNumber() {
    bool neg = false;
    if (isPunct("-")) {
      lex.take();
      neg = true;
    }
    if (lex.peek().kind != Tok::Number)
      fail("statement", "number");
    double v = lex.take().num;
    return neg ? -v : v;
  }

  BufferDecl parseBuffer() {
    expectIdent("buffer");
    BufferDecl b;
    b.id = expectValueId();
    expectPunct(":");
    expectPunct("<");
    // Shape: INT possibly followed by idents like "x4094x510x10", then
    // "x <type>".
    b.shape.push_back(expectInt());
    while (true) {
      if (lex.peek().kind == Tok::Ident && lex.peek().text[0] == 'x') {
        std::string word = lex.peek().text;
        // Either a glued extent list ("x4094x510") or the separator "x".
        if (word == "x") {
          lex.take();
          break;
        }
        // Split on 'x'; all chunks must be integers.
        std::vector<int64_t> extents;
        bool ok = true;
        size_t i = 1;
        while (i < word.size()) {
          size_t j = word.find('x', i);
          std::string chunk = word.substr(i, j == std::string::npos ? j : j - i);
          if (chunk.empty() ||
              chunk.find_first_not_of("0123456789") != std::string::npos) {
            ok = false;
            break;
          }
          extents.push_back(std::stoll(chunk));
          if (j == std::string::npos)
            break;
          i = j + 1;
        }
        if (!ok)
          fail("buffer shape", "extent list");
        lex.take();
        for (int64_t e : extents)
          b.shape.push_back(e);
      } else {
        fail("buffer shape", "'x'");
      }
    }
    if (lex.peek().kind != Tok::Ident)
      fail("buffer element type", "f32/f16/i8/i32");
    auto ty = parseElementType(lex.take().text);
    if (!ty)
      fail("buffer element type", "f32/f16/i8/i32");
    b.elementType = *ty;
    expectPunct(",");
    if (lex.peek().kind != Tok::Ident)
      fail("buffer memory space", "global/shared/register");
    auto sp = parseMemorySpace(lex.take().text);
    if (!sp)
      fail("buffer memory space", "global/shared/register");
    b.space = *sp;
    expectPunct(">");
    while (lex.peek().kind == Tok::Ident &&
           (lex.peek().text == "input" || lex.peek().text == "output")) {
      if (lex.take().text == "input")
        b.isInput = true;
      else
        b.isOutput = true;
    }
    for (int64_t d : b.shape)
      if (d <= 0)
        throw ParseError(lex.peek().line, lex.peek().col,
                         "non-positive buffer extent");
    return b;
  }

  Function parseFunction() {
    expectIdent("func");
    if (lex.peek().kind != Tok::FuncId)
      fail("function", "'@name'");
    Function f;
    f.name = lex.take().text.substr(1);
    expectPunct("{");
    while (!isPunct("}"))
      f.body.push_back(parseOp());
    expectPunct("}");
    return f;
  }

  // --- Affine expressions -------------------------------------------------

  struct ExprCtx {
    std::vector<std::string> *operands;
    unsigned dimIndexOf(const std::string &name) {
      for (size_t i = 0; i < operands->size(); ++i)
        if ((*operands)[i] == name)
          return static_cast<unsigned>(i);
      operands->push_back(name);
      return static_cast<unsigned>(operands->size() - 1);
    }
  };

  AffineExpr parseExpr(ExprCtx &ctx) {
    AffineExpr lhs = parseTerm(ctx);
    while (isPunct("+") || isPunct("-")) {
      bool add = lex.take().text == "+";
      AffineExpr rhs = parseTerm(ctx);
      lhs = add ? lhs + rhs : lhs - rhs;
    }
    return lhs;
  }

  AffineExpr parseTerm(ExprCtx &ctx) {
    const Token &start = lex.peek();
    AffineExpr e = parseFactor(ctx);
    while (true) {
      if (isPunct("*")) {
        lex.take();
        if (lex.peek().kind == Tok::Number || isPunct("-")) {
          e = e * expectInt();
        } else if (e.isConstant()) {
          int64_t c = e.value();
          e = parseFactor(ctx) * c;
        } else {
          throw ParseError(start.line, start.col,
                           "non-affine multiplication (both factors non-constant)");
        }
      } else if (isIdent("floordiv")) {
        lex.take();
        int64_t d = expectInt();
        try {
          e = e.floorDiv(d);
        } catch (const AffineError &err) {
          throw ParseError(start.line, start.col, err.what());
        }
      } else if (isIdent("mod")) {
        lex.take();
        int64_t m = expectInt();
        try {
          e = e.mod(m);
        } catch (const AffineError &err) {
          throw ParseError(start.line, start.col, err.what());
        }
      } else {
        break;
      }
    }
    return e;
  }

  AffineExpr parseFactor(ExprCtx &ctx) {
    if (isPunct("(")) {
      lex.take();
      AffineExpr e = parseExpr(ctx);
      expectPunct(")");
      return e;
    }
    if (isPunct("-")) {
      lex.take();
      return parseFactor(ctx) * -1;
    }
    if (lex.peek().kind == Tok::Number) {
      if (lex.peek().isFloat)
        fail("affine expression", "integer");
      return AffineExpr::constant(static_cast<int64_t>(lex.take().num));
    }
    if (lex.peek().kind == Tok::ValueId)
      return AffineExpr::dim(ctx.dimIndexOf(lex.take().text));
    if (lex.peek().kind == Tok::Ident && lex.peek().text.size() > 1 &&
        lex.peek().text[0] == 's' &&
        lex.peek().text.find_first_not_of("0123456789", 1) == std::string::npos)
      return AffineExpr::symbol(
          static_cast<unsigned>(std::stoul(lex.take().text.substr(1))));
    fail("affine expression", "constant, %iv, sN, or '('");
  }

  /// Parses `(expr)` | `max(e, ...)` | `min(e, ...)` | bare expr (when
  /// bare=true). isLower selects which of max/min is legal.
  AffineMap parseBound(ExprCtx &ctx, bool isLower, bool bare) {
    AffineMap map;
    if (isIdent(isLower ? "max" : "min")) {
      lex.take();
      expectPunct("(");
      map.results.push_back(parseExpr(ctx));
      while (isPunct(",")) {
        lex.take();
        map.results.push_back(parseExpr(ctx));
      }
      expectPunct(")");
    } else if (!bare && isPunct("(")) {
      lex.take();
      map.results.push_back(parseExpr(ctx));
      expectPunct(")");
    } else if (bare) {
      map.results.push_back(parseExpr(ctx));
    } else {
      fail("loop bound", isLower ? "'(' or 'max'" : "'(' or 'min'");
    }
    map.numDims = static_cast<unsigned>(ctx.operands->size());
    return map;
  }

  /// Parses `[expr, expr, ...]` into an access map + operand list.
  void parseAccess(Op &op) {
    expectPunct("[");
    ExprCtx ctx{&op.accessOperands};
    if (!isPunct("]")) {
      op.access.results.push_back(parseExpr(ctx));
      while (isPunct(",")) {
        lex.take();
        op.access.results.push_back(parseExpr(ctx));
      }
    }
    expectPunct("]");
    op.access.numDims = static_cast<unsigned>(op.accessOperands.size());
    for (const auto &r : op.access.results)
      op.access.numSymbols =
          std::max(op.access.numSymbols, r.numSymbolsUsed());
  }

  Operand parseOperand() {
    if (lex.peek().kind == Tok::ValueId)
      return Operand::val(lex.take().text);
    bool neg = false;
    if (isPunct("-")) {
      lex.take();
      neg = true;
    }
    if (lex.peek().kind != Tok::Number)
      fail("operand", "%value or literal");
    Token t = lex.take();
    double v = neg ? -t.num : t.num;
    return t.isFloat ? Operand::immF(v) : Operand::immI(static_cast<int64_t>(v));
  }

  void parseAttrs(Op &op) {
    if (!isIdent("attrs"))
      return;
    lex.take();
    expectPunct("{");
    while (!isPunct("}")) {
      if (lex.peek().kind != Tok::Ident)
        fail("attribute", "name");
      std::string key = lex.take().text;
      AttrValue value = AttrValue::flag();
      if (isPunct("=")) {
        lex.take();
        if (lex.peek().kind == Tok::String) {
          value = AttrValue::str(lex.take().text);
        } else if (lex.peek().kind == Tok::Number || isPunct("-")) {
          value = AttrValue::num(expectInt());
        } else if (isPunct("{")) {
          lex.take();
          if (lex.peek().kind != Tok::Ident)
            fail("attribute", "symbol");
          value = AttrValue::sym(lex.take().text);
          expectPunct("}");
        } else {
          fail("attribute value", "string, integer, or {symbol}");
        }
      }
      op.attrs[key] = value;
      if (isPunct(","))
        lex.take();
      else
        break;
    }
    expectPunct("}");
  }

  Op parseOp() {
    if (isIdent("for"))
      return parseFor();
    if (isIdent("parallel"))
      return parseParallel();
    if (isIdent("store"))
      return parseStore();
    if (isIdent("mma_store"))
      return parseMmaStore();
    if (isIdent("async_copy"))
      return parseAsyncCopy();
    if (isIdent("await_copies")) {
      lex.take();
      Op op;
      op.kind = OpKind::AwaitCopies;
      if (lex.peek().kind != Tok::String)
        fail("await_copies", "\"tag\"");
      op.tag = lex.take().text;
      return op;
    }
    if (isIdent("alloc") || isIdent("dealloc")) {
      bool alloc = lex.take().text == "alloc";
      Op op;
      op.kind = alloc ? OpKind::Alloc : OpKind::Dealloc;
      op.buffer = expectValueId();
      return op;
    }
    if (lex.peek().kind == Tok::ValueId)
      return parseValueOp();
    fail("operation",
         "for/parallel/store/alloc/dealloc/async_copy/await_copies/%value");
  }

  Op parseFor() {
    expectIdent("for");
    Op op;
    op.kind = OpKind::For;
    op.iv = expectValueId();
    expectPunct("=");
    ExprCtx ctx{&op.mapOperands};
    op.lower = parseBound(ctx, /*isLower=*/true, /*bare=*/false);
    expectIdent("to");
    op.upper = parseBound(ctx, /*isLower=*/false, /*bare=*/false);
    op.lower.numDims = op.upper.numDims =
        static_cast<unsigned>(op.mapOperands.size());
    expectIdent("step");
    op.step = expectInt();
    if (op.step <= 0)
      throw ParseError(lex.peek().line, lex.peek().col, "non-positive step");
    expectPunct("{");
    while (!isPunct("}"))
      op.body.push_back(parseOp());
    expectPunct("}");
    parseAttrs(op);
    return op;
  }

  Op parseParallel() {
    expectIdent("parallel");
    Op op;
    op.kind = OpKind::Parallel;
    expectPunct("(");
    op.ivs.push_back(expectValueId());
    while (isPunct(",")) {
      lex.take();
      op.ivs.push_back(expectValueId());
    }
    expectPunct(")");
    expectPunct("=");
    ExprCtx ctx{&op.mapOperands};
    expectPunct("(");
    for (size_t i = 0; i < op.ivs.size(); ++i) {
      if (i)
        expectPunct(",");
      op.lowers.push_back(parseBound(ctx, true, /*bare=*/true));
    }
    expectPunct(")");
    expectIdent("to");
    expectPunct("(");
    for (size_t i = 0; i < op.ivs.size(); ++i) {
      if (i)
        expectPunct(",");
      op.uppers.push_back(parseBound(ctx, false, /*bare=*/true));
    }
    expectPunct(")");
    for (auto &m : op.lowers)
      m.numDims = static_cast<unsigned>(op.mapOperands.size());
    for (auto &m : op.uppers)
      m.numDims = static_cast<unsigned>(op.mapOperands.size());
    expectPunct("{");
    while (!isPunct("}"))
      op.body.push_back(parseOp());
    expectPunct("}");
    parseAttrs(op);
    return op;
  }

  Op parseStore() {
    expectIdent("store");
    Op op;
    op.kind = OpKind::Store;
    op.operands.push_back(parseOperand());
    expectPunct(",");
    op.buffer = expectValueId();
    parseAccess(op);
    return op;
  }

  Op parseMmaStore() {
    expectIdent("mma_store");
    Op op;
    op.kind = OpKind::MmaStore;
    op.operands.push_back(parseOperand());
    expectPunct(",");
    op.buffer = expectValueId();
    parseAccess(op);
    return op;
  }

  Op parseAsyncCopy() {
    expectIdent("async_copy");
    Op op;
    op.kind = OpKind::AsyncCopy;
    if (lex.peek().kind != Tok::String)
      fail("async_copy", "\"tag\"");
    op.tag = lex.take().text;
    expectIdent("dst");
    op.buffer = expectValueId();
    expectIdent("src");
    op.srcBuffer = expectValueId();
    expectPunct("{");
    while (!isPunct("}"))
      op.body.push_back(parseOp());
    expectPunct("}");
    return op;
  }

  Op parseValueOp() {
    Op op;
    op.result = expectValueId();
    expectPunct("=");
    if (lex.peek().kind != Tok::Ident)
      fail("operation", "op name");
    std::string name = lex.take().text;
    if (name == "load") {
      op.kind = OpKind::Load;
      op.buffer = expectValueId();
      parseAccess(op);
      return op;
    }
    if (name == "mma_load") {
      op.kind = OpKind::MmaLoad;
      op.buffer = expectValueId();
      parseAccess(op);
      expectPunct(":");
      if (lex.peek().kind != Tok::Ident)
        fail("mma_load role", "A/B/C");
      std::string role = lex.take().text;
      if (role == "A")
        op.mmaRole = MmaRole::A;
      else if (role == "B")
        op.mmaRole = MmaRole::B;
      else if (role == "C")
        op.mmaRole = MmaRole::C;
      else
        fail("mma_load role", "A/B/C");
      return op;
    }
    if (name == "mma_compute") {
      op.kind = OpKind::MmaCompute;
      op.operands.push_back(parseOperand());
      expectPunct(",");
      op.operands.push_back(parseOperand());
      expectPunct(",");
      op.operands.push_back(parseOperand());
      return op;
    }
    op.kind = OpKind::Arith;
    if (name == "cmp") {
      if (lex.peek().kind != Tok::Ident)
        fail("cmp predicate", "eq/lt/le");
      std::string pred = lex.take().text;
      if (pred == "eq")
        op.arith = ArithKind::CmpEq;
      else if (pred == "lt")
        op.arith = ArithKind::CmpLt;
      else if (pred == "le")
        op.arith = ArithKind::CmpLe;
      else
        fail("cmp predicate", "eq/lt/le");
      expectPunct(",");
    } else {
      auto kind = parseArithKind(name);
      if (!kind)
        fail("operation", "arith op name");
      op.arith = *kind;
    }
    int arity = arithArity(op.arith);
    for (int i = 0; i < arity; ++i) {
      if (i)
        expectPunct(",");
      op.operands.push_back(parseOperand());
    }
    if (op.arith == ArithKind::Cast) {
      expectPunct(":");
      if (lex.peek().kind != Tok::Ident)
        fail("cast type", "f32/f16/i8/i32");
      auto ty = parseElementType(lex.take().text);
      if (!ty)
        fail("cast type", "f32/f16/i8/i32");
      op.castType = *ty;
    }
    if (op.arith == ArithKind::Quant || op.arith == ArithKind::Dequant) {
      expectIdent("scale");
      op.scale = expectNumber();
    }
    return op;
  }
};

} // namespace

Program parseProgram(const std::string &text) {
  Parser parser(text);
  return parser.parse();
}

} // namespace af
