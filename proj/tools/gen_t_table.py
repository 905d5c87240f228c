"""Writes tests/t_table.inc: Student-t critical values from scipy, used as a
pinned oracle by the metric tests."""

import sys

from scipy import stats

LEVELS = (0.80, 0.90, 0.95, 0.98, 0.99)
MAX_DF = 100


def main(out_path):
    rows = []
    for df in range(1, MAX_DF + 1):
        vals = ", ".join(f"{stats.t.ppf((1 + lvl) / 2, df):.15g}" for lvl in LEVELS)
        rows.append(f"    {{{df}, {{{vals}}}}},")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("// Generated by tools/gen_t_table.py. Do not edit.\n")
        f.write("inline constexpr double kTLevels[] = {" + ", ".join(str(l) for l in LEVELS) + "};\n")
        f.write("struct TRow {\n  int df;\n  double t[5];\n};\n")
        f.write("inline constexpr TRow kTTable[] = {\n" + "\n".join(rows) + "\n};\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/t_table.inc")
