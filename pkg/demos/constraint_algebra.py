"""The constraint algebra and a change of frame, symbolically.

Builds the dispersion constraints C_1, C_2 and the global constraints f0, f1
in each regime, checks that they close, then conjugates a few operators with
the frame-change map T12 and prints the images.

    python demos/constraint_algebra.py
"""
from qrfsim import algebra as alg
from qrfsim.model import build_constraints


def main():
    for regime in ("galilean", "sr", "newtonian", "full"):
        cs = build_constraints(regime)
        rep = cs.first_class_report()
        open_pairs = [p["pair"] for p in rep["pairs"] if not p["exact_zero"]]
        print(f"{regime:9s}: {len(rep['pairs'])} commutators, {rep['failures']} survive truncation;"
              f" nonzero before truncation: {', '.join(open_pairs) or 'none'}")

    cs = build_constraints("full")
    print()
    print("f0 in the full regime has", len(cs.expanded["f0"].terms), "terms")

    rep = alg.verify_table("T12")
    print()
    for line in rep["lines"][:6]:
        print(("ok  " if line["pass"] else "BAD ") + line["line"])
    print(f"... {len(rep['lines'])} lines, {rep['failures']} failures")


if __name__ == "__main__":
    main()
