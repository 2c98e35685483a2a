#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace metachain::text {

std::string to_lower(std::string_view s);

/// Strips ASCII whitespace from both ends.
std::string trim(std::string_view s);

/// Splits on runs of whitespace; no empty tokens.
std::vector<std::string> whitespace_tokens(std::string_view s);

/// Deletes ASCII punctuation characters (SQuAD-style, no replacement).
std::string strip_punctuation(std::string_view s);

/// Collapses internal whitespace runs to single spaces and trims the ends.
std::string collapse_whitespace(std::string_view s);

/// Keeps at most `limit` whitespace tokens, single-space joined.
std::string truncate_whitespace_tokens(std::string_view s, std::size_t limit);

/// Sentence boundaries are ". ", "? " and "! "; the terminator stays with
/// its sentence. A non-empty tail without a trailing terminator is kept.
std::vector<std::string> split_sentences(std::string_view s);

bool starts_with(std::string_view s, std::string_view prefix);

/// True for "unknown" in any casing after trimming; absent answers are
/// handled by callers.
bool is_unknown_marker(std::string_view s);

/// Strips whitespace and at most one trailing period. Parse rule for text
/// captured after an answer marker.
std::string strip_answer_decorations(std::string_view s);

/// FNV-1a, used to decorrelate seeds, not for content addressing.
std::uint64_t fnv1a64(std::string_view s);

}  // namespace metachain::text
