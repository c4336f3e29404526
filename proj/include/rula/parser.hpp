#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rula/ast.hpp"

namespace rula {

struct ParseError {
  ast::Span span;                     // furthest failure position
  std::vector<std::string> expected;  // grammar rule names or quoted tokens, sorted
  std::string found;                  // excerpt at the failure position
};

class ParseFailure : public std::runtime_error {
 public:
  explicit ParseFailure(ParseError err)
      : std::runtime_error("parse failure"), error_(std::move(err)) {}
  const ParseError& error() const noexcept { return error_; }

 private:
  ParseError error_;
};

// Throws ParseFailure.
ast::Program parse_program(std::string_view source, std::string file = {});

std::string render_error(const ParseError& err, std::string_view source);

// Line/column of a byte offset, both 1-based.
ast::Span locate(std::string_view source, std::size_t byte_start, std::size_t byte_end);

}  // namespace rula
