#include "tabtext/tokenizer.hpp"

#include "tabtext/error.hpp"
#include "tabtext/text.hpp"

namespace tabtext {

std::vector<std::string> Tokenizer::words(std::string_view text) const
{
    std::vector<std::string> out;
    for (auto& t : tokenize(text)) {
        out.push_back(std::move(t.text));
    }
    return out;
}

namespace {

void emit_chunk(std::string_view text, size_t begin, size_t end, std::vector<Token>& out)
{
    while (begin < end) {
        std::string_view chunk = text.substr(begin, end - begin);
        size_t pos = find_special_marker(chunk);
        if (pos == std::string_view::npos) {
            out.push_back(Token{std::string(chunk), begin, end});
            return;
        }
        if (pos > 0) {
            out.push_back(Token{std::string(chunk.substr(0, pos)), begin, begin + pos});
        }
        size_t close = chunk.find(']', pos);
        out.push_back(Token{std::string(chunk.substr(pos, close + 1 - pos)), begin + pos, begin + close + 1});
        begin += close + 1;
    }
}

}  // namespace

std::vector<Token> WhitespaceTokenizer::tokenize(std::string_view text) const
{
    std::vector<Token> out;
    size_t i = 0;
    const size_t n = text.size();
    auto space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    while (i < n) {
        while (i < n && space(text[i])) {
            ++i;
        }
        size_t start = i;
        while (i < n && !space(text[i])) {
            ++i;
        }
        if (i > start) {
            emit_chunk(text, start, i, out);
        }
    }
    return out;
}

std::unique_ptr<Tokenizer> make_tokenizer(std::string_view name)
{
    if (name == "whitespace") {
        return std::make_unique<WhitespaceTokenizer>();
    }
    throw Error(ErrorKind::InvalidArgument, "unknown tokenizer '" + std::string(name) + "'");
}

}  // namespace tabtext
