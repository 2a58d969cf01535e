"""Regenerate src/typoscan/data/adjacency_qwerty.json.

Keys are placed on a staggered grid (row offsets in key widths); two keys are
neighbors when they sit on the same row one key apart, or on adjacent rows
less than one key width apart horizontally.
"""
import json
import sys
from pathlib import Path

ROWS = [
    ("1234567890-", 0.0),
    ("qwertyuiop", 0.5),
    ("asdfghjkl", 0.75),
    ("zxcvbnm", 1.25),
]


def build():
    pos = {}
    for r, (keys, offset) in enumerate(ROWS):
        for i, k in enumerate(keys):
            pos[k] = (r, offset + i)
    adj = {}
    for k, (r, x) in pos.items():
        if k == "-":
            continue
        near = []
        for o, (ro, xo) in pos.items():
            if o == k:
                continue
            if ro == r and abs(xo - x) == 1:
                near.append(o)
            elif abs(ro - r) == 1 and abs(xo - x) < 1:
                near.append(o)
        adj[k] = sorted(near)
    return dict(sorted(adj.items()))


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "src/typoscan/data/adjacency_qwerty.json")
    out.write_text(json.dumps(build(), indent=1) + "\n", encoding="utf-8")
