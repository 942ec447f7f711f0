#include "mmsa/textnorm.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "mmsa/common.hpp"

namespace mmsa {

namespace {

constexpr char32_t kZwj = 0x200D;
constexpr char32_t kVs16 = 0xFE0F;
constexpr std::string_view kGenericEmojiToken = ":emoji:";

bool is_ascii_ws(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool is_word_cp(char32_t cp) {
  return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') ||
         (cp >= '0' && cp <= '9') || cp == '_';
}

// Decodes one codepoint at byte offset i; advances i. Invalid bytes are
// passed through one at a time so normalize stays total (ingestion is where
// invalid UTF-8 gets rejected).
char32_t next_cp(std::string_view s, size_t& i) {
  unsigned char b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1Fu;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0Fu;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07u;
  } else {
    ++i;
    return b0;
  }
  if (i + static_cast<size_t>(len) > s.size()) {
    ++i;
    return b0;
  }
  for (int k = 1; k < len; ++k) {
    unsigned char bk = static_cast<unsigned char>(s[i + static_cast<size_t>(k)]);
    if ((bk & 0xC0) != 0x80) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (bk & 0x3Fu);
  }
  i += static_cast<size_t>(len);
  return cp;
}

void append_cp(std::string& out, char32_t cp) {
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

bool is_skin_tone(char32_t cp) { return cp >= 0x1F3FB && cp <= 0x1F3FF; }

// Punctuation canonicalization: quote variants to ASCII quotes, dash
// variants to '-', ellipsis to "...", nbsp to a plain space.
const char* punct_mapping(char32_t cp) {
  switch (cp) {
    case 0x2018:
    case 0x2019:
    case 0x201A:
    case 0x2032:
      return "'";
    case 0x201C:
    case 0x201D:
    case 0x201E:
    case 0x2033:
      return "\"";
    case 0x2013:
    case 0x2014:
    case 0x2015:
      return "-";
    case 0x2026:
      return "...";
    case 0x00A0:
      return " ";
    default:
      return nullptr;
  }
}

bool starts_with_icase(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) {
      return false;
    }
  }
  return true;
}

// A URL is a maximal non-whitespace run that begins with a scheme or "www.".
bool is_url_run(std::string_view run) {
  return starts_with_icase(run, "http://") ||
         starts_with_icase(run, "https://") || starts_with_icase(run, "www.");
}

// Scans `run` for a mention starting at codepoint offset `i` (byte offset).
// A mention is '@' at the run start or after a non-word codepoint, followed
// by at least one ASCII word character. Returns the byte length of the
// matched "@word" span, or 0.
size_t mention_length_at(std::string_view run, size_t i, bool prev_is_word) {
  if (run[i] != '@' || prev_is_word) return 0;
  size_t j = i + 1;
  size_t words = 0;
  while (j < run.size()) {
    size_t k = j;
    char32_t cp = next_cp(run, k);
    if (!is_word_cp(cp)) break;
    j = k;
    ++words;
  }
  return words > 0 ? j - i : 0;
}

const std::unordered_map<char32_t, std::string_view>& alias_table() {
  static const std::unordered_map<char32_t, std::string_view> table = {
      {0x1F600, ":grinning_face:"},
      {0x1F601, ":beaming_face_with_smiling_eyes:"},
      {0x1F602, ":face_with_tears_of_joy:"},
      {0x1F603, ":grinning_face_with_big_eyes:"},
      {0x1F604, ":grinning_face_with_smiling_eyes:"},
      {0x1F605, ":grinning_face_with_sweat:"},
      {0x1F606, ":grinning_squinting_face:"},
      {0x1F607, ":smiling_face_with_halo:"},
      {0x1F609, ":winking_face:"},
      {0x1F60A, ":smiling_face_with_smiling_eyes:"},
      {0x1F60B, ":face_savoring_food:"},
      {0x1F60C, ":relieved_face:"},
      {0x1F60D, ":smiling_face_with_heart-eyes:"},
      {0x1F60E, ":smiling_face_with_sunglasses:"},
      {0x1F60F, ":smirking_face:"},
      {0x1F610, ":neutral_face:"},
      {0x1F612, ":unamused_face:"},
      {0x1F614, ":pensive_face:"},
      {0x1F615, ":confused_face:"},
      {0x1F618, ":face_blowing_a_kiss:"},
      {0x1F61C, ":winking_face_with_tongue:"},
      {0x1F61E, ":disappointed_face:"},
      {0x1F620, ":angry_face:"},
      {0x1F621, ":enraged_face:"},
      {0x1F622, ":crying_face:"},
      {0x1F624, ":face_with_steam_from_nose:"},
      {0x1F628, ":fearful_face:"},
      {0x1F629, ":weary_face:"},
      {0x1F62A, ":sleepy_face:"},
      {0x1F62B, ":tired_face:"},
      {0x1F62C, ":grimacing_face:"},
      {0x1F62D, ":loudly_crying_face:"},
      {0x1F631, ":face_screaming_in_fear:"},
      {0x1F633, ":flushed_face:"},
      {0x1F634, ":sleeping_face:"},
      {0x1F637, ":face_with_medical_mask:"},
      {0x1F641, ":slightly_frowning_face:"},
      {0x1F642, ":slightly_smiling_face:"},
      {0x1F643, ":upside-down_face:"},
      {0x1F644, ":face_with_rolling_eyes:"},
      {0x1F648, ":see-no-evil_monkey:"},
      {0x1F649, ":hear-no-evil_monkey:"},
      {0x1F64A, ":speak-no-evil_monkey:"},
      {0x1F64F, ":folded_hands:"},
      {0x1F44D, ":thumbs_up:"},
      {0x1F44E, ":thumbs_down:"},
      {0x1F44F, ":clapping_hands:"},
      {0x1F4AF, ":hundred_points:"},
      {0x1F525, ":fire:"},
      {0x1F389, ":party_popper:"},
      {0x1F494, ":broken_heart:"},
      {0x1F495, ":two_hearts:"},
      {0x1F496, ":sparkling_heart:"},
      {0x1F499, ":blue_heart:"},
      {0x1F49A, ":green_heart:"},
      {0x1F49B, ":yellow_heart:"},
      {0x1F49C, ":purple_heart:"},
      {0x2764, ":red_heart:"},
      {0x2665, ":heart_suit:"},
      {0x263A, ":smiling_face:"},
      {0x2B50, ":star:"},
      {0x2728, ":sparkles:"},
      {0x1F31F, ":glowing_star:"},
      {0x1F308, ":rainbow:"},
      {0x1F914, ":thinking_face:"},
      {0x1F917, ":smiling_face_with_open_hands:"},
      {0x1F923, ":rolling_on_the_floor_laughing:"},
      {0x1F970, ":smiling_face_with_hearts:"},
      {0x1F973, ":partying_face:"},
      {0x1F97A, ":pleading_face:"},
  };
  return table;
}

void emit_emoji(std::string& out, char32_t cp, EmojiMode mode) {
  if (mode == EmojiMode::placeholder_token) {
    out += kGenericEmojiToken;
    return;
  }
  auto alias = emoji_alias(cp);
  out += alias ? *alias : kGenericEmojiToken;
}

// Translates one non-whitespace run. URL runs collapse to the placeholder;
// otherwise mentions, emoji, and punctuation are rewritten in one walk.
void process_run(std::string_view run, const NormPolicy& policy,
                 std::string& out) {
  if (is_url_run(run)) {
    out += policy.url_placeholder;
    return;
  }
  size_t i = 0;
  bool prev_is_word = false;
  bool in_cluster = false;  // true right after an emoji, for ZWJ joining
  while (i < run.size()) {
    size_t mlen = mention_length_at(run, i, prev_is_word);
    if (mlen > 0) {
      out += policy.user_placeholder;
      i += mlen;
      prev_is_word = true;  // the consumed source span ends in a word char
      in_cluster = false;
      continue;
    }
    size_t start = i;
    char32_t cp = next_cp(run, i);
    if (is_emoji_codepoint(cp)) {
      if (in_cluster && policy.emoji_mode == EmojiMode::placeholder_token) {
        // joined continuation of a cluster already emitted as one token
      } else {
        emit_emoji(out, cp, policy.emoji_mode);
      }
      // swallow presentation selectors and skin tones
      while (i < run.size()) {
        size_t k = i;
        char32_t mod = next_cp(run, k);
        if (mod == kVs16 || is_skin_tone(mod)) {
          i = k;
        } else {
          break;
        }
      }
      // a ZWJ followed by another emoji continues the cluster
      if (i < run.size()) {
        size_t k = i;
        char32_t nxt = next_cp(run, k);
        if (nxt == kZwj) {
          size_t k2 = k;
          if (k2 < run.size() && is_emoji_codepoint(next_cp(run, k2))) {
            i = k;  // drop the ZWJ, loop handles the next emoji
            in_cluster = true;
            prev_is_word = false;
            continue;
          }
        }
      }
      in_cluster = false;
      prev_is_word = false;
      continue;
    }
    in_cluster = false;
    if (cp == kVs16 || cp == kZwj) {
      // stray joiners carry no content once their cluster is gone
      prev_is_word = false;
      continue;
    }
    if (policy.punctuation_canonicalization) {
      if (const char* mapped = punct_mapping(cp)) {
        out += mapped;
        prev_is_word = false;
        continue;
      }
    }
    out.append(run.substr(start, i - start));
    prev_is_word = is_word_cp(cp);
  }
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_ascii_ws(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::string apply_abbreviations(const std::string& s,
                                const std::map<std::string, std::string>& table) {
  std::string out;
  out.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    size_t j = s.find(' ', i);
    if (j == std::string::npos) j = s.size();
    std::string token = s.substr(i, j - i);
    auto it = table.find(token);
    out += (it != table.end()) ? it->second : token;
    if (j < s.size()) out.push_back(' ');
    i = j + 1;
  }
  return out;
}

}  // namespace

bool is_emoji_codepoint(char32_t cp) {
  return (cp >= 0x1F300 && cp <= 0x1F5FF) || (cp >= 0x1F600 && cp <= 0x1F64F) ||
         (cp >= 0x1F680 && cp <= 0x1F6FF) || (cp >= 0x1F900 && cp <= 0x1F9FF) ||
         (cp >= 0x1FA70 && cp <= 0x1FAFF) || (cp >= 0x2600 && cp <= 0x26FF) ||
         (cp >= 0x2700 && cp <= 0x27BF) || (cp >= 0x1F1E6 && cp <= 0x1F1FF) ||
         (cp >= 0x2B00 && cp <= 0x2B5F) || cp == 0x1F004 || cp == 0x1F0CF;
}

std::optional<std::string_view> emoji_alias(char32_t cp) {
  const auto& table = alias_table();
  auto it = table.find(cp);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

void NormPolicy::validate() const {
  auto check_placeholder = [](const std::string& p, const char* what) {
    if (p.empty()) {
      throw ConfigError(std::string(what) + " placeholder must be non-empty");
    }
    for (char c : p) {
      if (is_ascii_ws(c)) {
        throw ConfigError(std::string(what) +
                          " placeholder must not contain whitespace");
      }
    }
  };
  check_placeholder(user_placeholder, "user");
  check_placeholder(url_placeholder, "url");
  if (!abbreviations.empty()) {
    NormPolicy bare = *this;
    bare.abbreviations.clear();
    for (const auto& [key, value] : abbreviations) {
      if (key.find(' ') != std::string::npos || key.empty()) {
        throw ConfigError("abbreviation key must be a single token: '" + key +
                          "'");
      }
      if (normalize(value, bare) != value) {
        throw ConfigError("abbreviation value is not normalization-stable: '" +
                          value + "'");
      }
      std::istringstream vs(value);
      std::string vtok;
      while (vs >> vtok) {
        if (abbreviations.count(vtok) > 0) {
          throw ConfigError(
              "abbreviation table is not idempotent: value token '" + vtok +
              "' is also a key");
        }
      }
    }
  }
}

std::string normalize(std::string_view text, const NormPolicy& policy) {
  std::string staged;
  staged.reserve(text.size() + 16);
  size_t i = 0;
  while (i < text.size()) {
    if (is_ascii_ws(text[i])) {
      staged.push_back(' ');
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && !is_ascii_ws(text[j])) ++j;
    process_run(text.substr(i, j - i), policy, staged);
    i = j;
  }
  std::string out = collapse_whitespace(staged);
  if (!policy.abbreviations.empty()) {
    out = apply_abbreviations(out, policy.abbreviations);
    out = collapse_whitespace(out);
  }
  return out;
}

bool contains_raw_mention(std::string_view text, const NormPolicy& policy) {
  size_t i = 0;
  while (i < text.size()) {
    if (is_ascii_ws(text[i])) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && !is_ascii_ws(text[j])) ++j;
    std::string_view run = text.substr(i, j - i);
    size_t k = 0;
    bool prev_is_word = false;
    while (k < run.size()) {
      size_t mlen = mention_length_at(run, k, prev_is_word);
      if (mlen > 0) {
        if (run.substr(k, mlen) != policy.user_placeholder) return true;
        k += mlen;
        prev_is_word = true;
        continue;
      }
      char32_t cp = next_cp(run, k);
      prev_is_word = is_word_cp(cp);
    }
    i = j;
  }
  return false;
}

bool contains_raw_url(std::string_view text, const NormPolicy& policy) {
  size_t i = 0;
  while (i < text.size()) {
    if (is_ascii_ws(text[i])) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && !is_ascii_ws(text[j])) ++j;
    std::string_view run = text.substr(i, j - i);
    if (is_url_run(run) && run != policy.url_placeholder) return true;
    i = j;
  }
  return false;
}

bool is_valid_utf8(std::string_view text) {
  size_t i = 0;
  while (i < text.size()) {
    unsigned char b0 = static_cast<unsigned char>(text[i]);
    int len;
    char32_t cp_min;
    if (b0 < 0x80) {
      ++i;
      continue;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp_min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp_min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp_min = 0x10000;
    } else {
      return false;
    }
    if (i + static_cast<size_t>(len) > text.size()) return false;
    char32_t cp = b0 & (0xFFu >> (len + 1));
    for (int k = 1; k < len; ++k) {
      unsigned char bk = static_cast<unsigned char>(text[i + static_cast<size_t>(k)]);
      if ((bk & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (bk & 0x3Fu);
    }
    if (cp < cp_min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += static_cast<size_t>(len);
  }
  return true;
}

}  // namespace mmsa
