#include "relforge/text.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "relforge/errors.hpp"

namespace relforge {

namespace {

bool is_quote(UChar32 c) {
  switch (c) {
    case u'"':
    case u'\'':
    case u'`':
    case 0x201C:  // left double quotation mark
    case 0x201D:
    case 0x2018:
    case 0x2019:
    case 0x00AB:  // guillemets
    case 0x00BB:
    case 0x201E:
      return true;
    default:
      return false;
  }
}

icu::UnicodeString collapse_whitespace(const icu::UnicodeString& in) {
  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < in.length();) {
    UChar32 c = in.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.isEmpty();
      continue;
    }
    if (pending_space) {
      out.append(static_cast<UChar>(u' '));
      pending_space = false;
    }
    out.append(c);
  }
  return out;
}

icu::UnicodeString lower_nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = nfc->normalize(u, status);
  if (U_FAILURE(status)) throw DataError("cannot normalize text: " + std::string(text));
  normalized.toLower(icu::Locale::getRoot());
  return collapse_whitespace(normalized);
}

std::string to_utf8(const icu::UnicodeString& u) {
  std::string out;
  u.toUTF8String(out);
  return out;
}

}  // namespace

std::string normalize_surface(std::string_view text) {
  icu::UnicodeString u = lower_nfc(text);
  // Peel quotes and trailing periods until stable: "\"U.S.\"." -> "u.s"
  for (bool changed = true; changed;) {
    changed = false;
    while (!u.isEmpty() && is_quote(u.char32At(0))) {
      u.remove(0, U16_LENGTH(u.char32At(0)));
      changed = true;
    }
    while (!u.isEmpty()) {
      int32_t last = u.moveIndex32(u.length(), -1);
      UChar32 c = u.char32At(last);
      if (!is_quote(c) && c != u'.') break;
      u.truncate(last);
      changed = true;
    }
    u = collapse_whitespace(u);
  }
  return to_utf8(u);
}

std::string normalize_phrase(std::string_view text) { return to_utf8(lower_nfc(text)); }

std::string trim(std::string_view text) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  auto begin = text.find_first_not_of(ws);
  if (begin == std::string_view::npos) return {};
  auto end = text.find_last_not_of(ws);
  return std::string(text.substr(begin, end - begin + 1));
}

std::size_t utf8_length(std::string_view text) {
  std::size_t count = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0) != 0x80) ++count;
  }
  return count;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    std::string_view line =
        text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace relforge
