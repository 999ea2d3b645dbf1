#!/usr/bin/env python3
"""Regenerates src/unicode_tables.cpp from Python's unicodedata."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs):
    lines = [f"const std::array<CodepointRange, {len(rs)}> {name} = {{{{"]
    for a, b in rs:
        lines.append(f"    {{0x{a:04X}, 0x{b:04X}}},")
    lines.append("}};")
    return "\n".join(lines)


def main():
    punct = ranges(lambda c: unicodedata.category(chr(c)).startswith("P"))
    space = ranges(lambda c: unicodedata.category(chr(c)).startswith("Z")
                   or chr(c) in "\t\n\v\f\r\x1c\x1d\x1e\x1f\x85")
    out = [
        f"// Generated by tools/gen_unicode_tables.py (Unicode {unicodedata.unidata_version}). Do not edit.",
        '#include "comma/unicode.hpp"',
        "",
        "#include <array>",
        "",
        "namespace comma::unicode::detail {",
        "",
        emit("kPunctuation", punct),
        "",
        emit("kWhitespace", space),
        "",
        "std::span<const CodepointRange> punctuation_ranges() { return kPunctuation; }",
        "std::span<const CodepointRange> whitespace_ranges() { return kWhitespace; }",
        "",
        "}  // namespace comma::unicode::detail",
        "",
    ]
    sys.stdout.write("\n".join(out))


if __name__ == "__main__":
    main()
