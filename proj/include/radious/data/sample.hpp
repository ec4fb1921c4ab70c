#pragma once

#include <string>

#include "radious/error.hpp"
#include "radious/io/png.hpp"

namespace radious::data {

using io::GrayImage;

enum class SourceKind { kOpg, kPeriapical, kBitewing };

inline const char* to_string(SourceKind k) {
  switch (k) {
    case SourceKind::kOpg: return "opg";
    case SourceKind::kPeriapical: return "periapical";
    default: return "bitewing";
  }
}

inline SourceKind source_kind_from_string(const std::string& s) {
  if (s == "opg") return SourceKind::kOpg;
  if (s == "periapical") return SourceKind::kPeriapical;
  if (s == "bitewing") return SourceKind::kBitewing;
  fail("parse", "unknown source kind '" + s + "'");
}

// One radiograph: a grayscale intensity grid plus a same-extent grid of
// palette ids.
struct ImageSample {
  std::string id;
  GrayImage image;
  GrayImage mask;  // pixel value = palette id
  SourceKind source_kind = SourceKind::kOpg;
};

}  // namespace radious::data
