#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace tabtext {

/// A token and its byte range in the source text.
struct Token {
    std::string text;
    size_t begin = 0;
    size_t end = 0;
};

/// Tokenizer contract. Implementations must be deterministic, return no
/// tokens for empty input and keep each special marker as a single token.
class Tokenizer {
  public:
    virtual ~Tokenizer() = default;
    virtual std::string_view name() const = 0;
    virtual std::vector<Token> tokenize(std::string_view text) const = 0;

    std::vector<std::string> words(std::string_view text) const;
    size_t count(std::string_view text) const { return tokenize(text).size(); }
};

/// Splits on ASCII whitespace. Special markers glued to neighbouring text are
/// split out into their own tokens.
class WhitespaceTokenizer final : public Tokenizer {
  public:
    std::string_view name() const override { return "whitespace"; }
    std::vector<Token> tokenize(std::string_view text) const override;
};

std::unique_ptr<Tokenizer> make_tokenizer(std::string_view name);

}  // namespace tabtext
