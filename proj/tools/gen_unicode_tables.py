#!/usr/bin/env python3
"""Regenerates src/unicode_tables.inc from Python's unicodedata."""
import sys
import unicodedata

MAX = 0x110000


def ranges(pred):
    out, start = [], None
    for cp in range(MAX):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, MAX - 1))
    return out


def is_punct(cp):
    return unicodedata.category(chr(cp)).startswith("P")


def is_space(cp):
    return chr(cp).isspace() or unicodedata.category(chr(cp)) == "Zs"


def mapping(fn):
    out = []
    for cp in range(MAX):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        c = chr(cp)
        m = fn(c)
        if m != c:
            assert fn(m) == m, hex(cp)
            out.append((cp, m))
    return out


def esc(s):
    return "".join("\\x%02x" % b for b in s.encode("utf-8"))


def emit(f, name, rs):
    f.write("constexpr CodepointRange %s[] = {\n" % name)
    for a, b in rs:
        f.write("    {0x%X, 0x%X},\n" % (a, b))
    f.write("};\n\n")


def emit_map(f, name, ms):
    f.write("constexpr CaseMapping %s[] = {\n" % name)
    for cp, m in ms:
        f.write('    {0x%X, "%s"},\n' % (cp, esc(m)))
    f.write("};\n\n")


def main(path):
    with open(path, "w") as f:
        f.write("// Generated by tools/gen_unicode_tables.py (Unicode %s). Do not edit.\n\n"
                % unicodedata.unidata_version)
        emit(f, "kPunctuationRanges", ranges(is_punct))
        emit(f, "kWhitespaceRanges", ranges(is_space))
        emit_map(f, "kLowercase", mapping(str.lower))
        emit_map(f, "kCasefold", mapping(str.casefold))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/unicode_tables.inc")
