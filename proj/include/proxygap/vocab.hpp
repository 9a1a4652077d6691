#pragma once

#include <array>
#include <cstdint>

namespace proxygap {

using TokenId = uint8_t;

// Fixed 80-token vocabulary with a documented, bit-exact id layout:
//
//   0..2    scaffold: OPEN, MID, CLOSE
//   3       marker
//   4       query
//   5..6    label0, label1
//   7..22   relevance vocabulary (7..14 bucket 0, 15..22 bucket 1)
//   23..79  content vocabulary (background filler and distractors)
struct Vocabulary {
  static constexpr int total_size = 80;

  static constexpr TokenId open = 0;
  static constexpr TokenId mid = 1;
  static constexpr TokenId close = 2;
  static constexpr TokenId marker = 3;
  static constexpr TokenId query = 4;
  static constexpr TokenId label0 = 5;
  static constexpr TokenId label1 = 6;

  static constexpr TokenId relevance_begin = 7;   // inclusive
  static constexpr TokenId relevance_end = 23;    // exclusive
  static constexpr int relevance_size = 16;
  static constexpr int bucket_size = 8;

  static constexpr TokenId content_begin = 23;    // inclusive
  static constexpr TokenId content_end = 80;      // exclusive
  static constexpr int content_size = 57;

  static constexpr bool is_scaffold(TokenId t) { return t <= close; }
  static constexpr bool is_relevance(TokenId t) {
    return t >= relevance_begin && t < relevance_end;
  }
  static constexpr bool is_content(TokenId t) { return t >= content_begin; }
  static constexpr bool is_background(TokenId t) {
    return is_scaffold(t) || is_content(t);
  }

  // bucket of a relevance token; only meaningful when is_relevance(t)
  static constexpr int bucket_of(TokenId t) {
    return (t - relevance_begin) / bucket_size;
  }
  static constexpr TokenId relevance_token(int bucket, int index) {
    return static_cast<TokenId>(relevance_begin + bucket * bucket_size + index);
  }
  static constexpr TokenId content_token(int index) {
    return static_cast<TokenId>(content_begin + index);
  }
};

inline Vocabulary build_vocabulary() { return Vocabulary{}; }

}  // namespace proxygap
