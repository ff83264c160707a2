"""Project adapted-baseline F1 across training-set sizes from two observed anchors."""

import argparse

from fincheck.metrics import scaling_projection

ANCHORS = {
    "HHEM-adapted": [(0, 76.3), (500, 81.7)],
    "SelfCheck-adapted": [(0, 72.8), (1000, 79.4)],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="0,500,1000,1600,2000,3200", help="comma list of example counts")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    cols = {name: scaling_projection(anchors, sizes) for name, anchors in ANCHORS.items()}
    print(f"{'examples':>9} " + " ".join(f"{n:>18}" for n in cols))
    for i, n in enumerate(sizes):
        print(f"{n:>9} " + " ".join(f"{cols[name][i]:>18.2f}" for name in cols))


if __name__ == "__main__":
    main()
