#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace tabtext {

inline constexpr std::string_view kTabMarker = "[TAB]";
inline constexpr std::string_view kPsgMarker = "[PSG]";
inline constexpr std::string_view kTitleMarker = "[TITLE]";
inline constexpr std::string_view kSecTitleMarker = "[SECTITLE]";
inline constexpr std::string_view kDataMarker = "[DATA]";
inline constexpr std::string_view kSepMarker = "[SEP]";

inline constexpr std::array<std::string_view, 6> kSpecialMarkers = {
    kTabMarker, kPsgMarker, kTitleMarker, kSecTitleMarker, kDataMarker, kSepMarker};

bool is_special_marker(std::string_view token);

/// Position of the first special marker inside `text`, or npos.
size_t find_special_marker(std::string_view text);

/// Collapse runs of whitespace to one ASCII space and trim both ends.
std::string collapse_whitespace(std::string_view text);

/// Simple (1:1) Unicode case folding over UTF-8 input. Covers ASCII, Latin-1,
/// Latin Extended-A, Greek and Cyrillic; other code points pass through.
/// Invalid UTF-8 bytes are copied unchanged.
std::string case_fold(std::string_view text);

/// Case fold followed by whitespace collapse; the form used for answer
/// containment tests.
std::string normalize_text(std::string_view text);

/// `needle` must already be normalized. Empty needles never match.
bool contains_normalized(std::string_view normalized_haystack, std::string_view normalized_needle);

/// Lookup key for a surface token: case folded, leading/trailing ASCII
/// punctuation stripped. Special markers are returned verbatim. Tokens made
/// only of punctuation yield an empty key.
std::string term_key(std::string_view token);

uint64_t fnv1a64(std::span<const std::byte> bytes, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a64(std::string_view text, uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex(uint64_t value);

}  // namespace tabtext
