#pragma once

// Social-media text normalization applied before any text encoder sees a
// sample: mentions and URLs become placeholders, emoji become textual
// aliases or a generic token, punctuation variants are canonicalized and
// whitespace is collapsed. normalize() is total, deterministic, and
// idempotent; idempotence is what lets preprocessed manifests be fed back
// through the pipeline unchanged.

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace mmsa {

enum class EmojiMode {
  placeholder_token,  // every emoji becomes ":emoji:"
  textual_alias,      // known emoji become ":name:" aliases, unknown ":emoji:"
};

struct NormPolicy {
  std::string user_placeholder = "@USER";
  std::string url_placeholder = "HTTPURL";
  EmojiMode emoji_mode = EmojiMode::textual_alias;
  bool punctuation_canonicalization = true;
  // Optional whole-token substitutions, off (empty) by default. Values must
  // not themselves be keys, otherwise normalize would not be idempotent;
  // validate() rejects such tables.
  std::map<std::string, std::string> abbreviations;

  // Throws ConfigError on empty/whitespace placeholders or a
  // non-idempotent abbreviation table.
  void validate() const;
};

std::string normalize(std::string_view text, const NormPolicy& policy);

// Detection predicates used both by normalize and by the property tests.
// A "raw" mention/URL is one that is not the policy's own placeholder.
bool contains_raw_mention(std::string_view text, const NormPolicy& policy);
bool contains_raw_url(std::string_view text, const NormPolicy& policy);

bool is_valid_utf8(std::string_view text);

// Alias for a single emoji codepoint, if it is in the built-in table.
std::optional<std::string_view> emoji_alias(char32_t cp);
bool is_emoji_codepoint(char32_t cp);

}  // namespace mmsa
