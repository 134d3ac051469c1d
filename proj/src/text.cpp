#include "tabtext/text.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>

#include "tabtext/error.hpp"
#include "tabtext/jsonl.hpp"
#include "tabtext/rng.hpp"

namespace tabtext {

std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::MalformedRecord: return "malformed record";
    case ErrorKind::DuplicateId: return "duplicate id";
    case ErrorKind::EmptyHeader: return "empty header";
    case ErrorKind::RowLengthMismatch: return "row length mismatch";
    case ErrorKind::EmptyPassage: return "empty passage";
    case ErrorKind::DanglingTable: return "dangling table id";
    case ErrorKind::DanglingPassage: return "dangling passage id";
    case ErrorKind::IndexOutOfRange: return "index out of range";
    case ErrorKind::ReservedMarker: return "reserved marker in content";
    case ErrorKind::MissingAnswer: return "missing answer";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::BudgetTooSmall: return "budget too small";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::NonFiniteLoss: return "non-finite loss";
    case ErrorKind::Exhausted: return "no eligible candidate";
    case ErrorKind::Format: return "format";
    case ErrorKind::ConfigConflict: return "config conflict";
    case ErrorKind::ApproximateRecall: return "approximate recall below target";
    }
    return "unknown";
}

namespace {

bool is_space(unsigned char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_ascii_punct(unsigned char c)
{
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
           (c >= 123 && c <= 126);
}

char32_t fold_code_point(char32_t cp)
{
    if (cp >= U'A' && cp <= U'Z') {
        return cp + 32;
    }
    if (cp < 0x80) {
        return cp;
    }
    // Latin-1 supplement
    if ((cp >= 0xC0 && cp <= 0xDE) && cp != 0xD7) {
        return cp + 32;
    }
    if (cp == 0xB5) {
        return 0x3BC;
    }
    // Latin Extended-A: mostly even upper / odd lower pairs.
    if (cp >= 0x100 && cp <= 0x17F) {
        if (cp == 0x130 || cp == 0x131 || cp == 0x138 || cp == 0x149 || cp == 0x17F) {
            return cp == 0x17F ? U's' : cp;
        }
        bool odd_pairs = (cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E);
        if (odd_pairs) {
            return (cp % 2 == 1) ? cp + 1 : cp;
        }
        if (cp == 0x178) {
            return 0xFF;
        }
        return (cp % 2 == 0) ? cp + 1 : cp;
    }
    // Greek
    if (cp >= 0x391 && cp <= 0x3AB && cp != 0x3A2) {
        return cp + 32;
    }
    if (cp == 0x3C2) {
        return 0x3C3;
    }
    // Cyrillic
    if (cp >= 0x410 && cp <= 0x42F) {
        return cp + 32;
    }
    if (cp >= 0x400 && cp <= 0x40F) {
        return cp + 80;
    }
    return cp;
}

void append_utf8(std::string& out, char32_t cp)
{
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace

bool is_special_marker(std::string_view token)
{
    return std::find(kSpecialMarkers.begin(), kSpecialMarkers.end(), token) != kSpecialMarkers.end();
}

size_t find_special_marker(std::string_view text)
{
    size_t best = std::string_view::npos;
    for (auto marker : kSpecialMarkers) {
        best = std::min(best, text.find(marker));
    }
    return best;
}

std::string collapse_whitespace(std::string_view text)
{
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(ch);
    }
    return out;
}

std::string case_fold(std::string_view text)
{
    std::string out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        auto c = static_cast<unsigned char>(text[i]);
        size_t len = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            len = 1;
            cp = c;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        }
        bool valid = len > 0 && i + len <= text.size();
        for (size_t k = 1; valid && k < len; ++k) {
            auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xC0) != 0x80) {
                valid = false;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (!valid) {
            out.push_back(text[i]);
            ++i;
            continue;
        }
        append_utf8(out, fold_code_point(cp));
        i += len;
    }
    return out;
}

std::string normalize_text(std::string_view text)
{
    return collapse_whitespace(case_fold(text));
}

bool contains_normalized(std::string_view normalized_haystack, std::string_view normalized_needle)
{
    return !normalized_needle.empty() &&
           normalized_haystack.find(normalized_needle) != std::string_view::npos;
}

std::string term_key(std::string_view token)
{
    if (is_special_marker(token)) {
        return std::string(token);
    }
    size_t begin = 0;
    size_t end = token.size();
    while (begin < end && is_ascii_punct(static_cast<unsigned char>(token[begin]))) {
        ++begin;
    }
    while (end > begin && is_ascii_punct(static_cast<unsigned char>(token[end - 1]))) {
        --end;
    }
    return case_fold(token.substr(begin, end - begin));
}

uint64_t fnv1a64(std::span<const std::byte> bytes, uint64_t seed)
{
    uint64_t h = seed;
    for (auto b : bytes) {
        h ^= static_cast<uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a64(std::string_view text, uint64_t seed)
{
    return fnv1a64(std::as_bytes(std::span(text.data(), text.size())), seed);
}

std::string to_hex(uint64_t value)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

// --- rng -------------------------------------------------------------------

Rng Rng::derive(uint64_t seed, std::string_view key)
{
    uint64_t mixed = fnv1a64(key, seed ^ 0x9e3779b97f4a7c15ULL);
    // splitmix64 finalizer
    mixed += 0x9e3779b97f4a7c15ULL;
    mixed = (mixed ^ (mixed >> 30)) * 0xbf58476d1ce4e5b9ULL;
    mixed = (mixed ^ (mixed >> 27)) * 0x94d049bb133111ebULL;
    return Rng(mixed ^ (mixed >> 31));
}

uint64_t Rng::uniform_index(uint64_t n)
{
    if (n == 0) {
        throw Error(ErrorKind::InvalidArgument, "uniform_index over an empty range");
    }
    uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    uint64_t x = next();
    while (x >= limit) {
        x = next();
    }
    return x % n;
}

// --- jsonl -----------------------------------------------------------------

std::ofstream open_output(const std::filesystem::path& path, bool binary)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    return out;
}

std::ifstream open_input(const std::filesystem::path& path, bool binary)
{
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    }
    return in;
}

void for_each_line(const std::filesystem::path& path,
                   const std::function<void(const std::string&, size_t)>& fn)
{
    auto in = open_input(path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (collapse_whitespace(line).empty()) {
            continue;
        }
        fn(line, line_no);
    }
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, size_t)>& fn)
{
    for_each_line(path, [&](const std::string& line, size_t line_no) {
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::MalformedRecord,
                        path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!record.is_object()) {
            throw Error(ErrorKind::MalformedRecord, path.filename().string() + " line " +
                                                        std::to_string(line_no) + ": not an object");
        }
        try {
            fn(record, line_no);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::MalformedRecord) {
                throw Error(ErrorKind::MalformedRecord,
                            path.filename().string() + " " + (e.what() + to_string(e.kind()).size() + 2));
            }
            throw;
        }
    });
}

std::string dump_canonical(const json& value)
{
    return value.dump(-1, ' ', false, json::error_handler_t::strict);
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records)
{
    auto out = open_output(path);
    for (const auto& r : records) {
        out << dump_canonical(r) << '\n';
    }
    if (!out) {
        throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
    }
}

}  // namespace tabtext
