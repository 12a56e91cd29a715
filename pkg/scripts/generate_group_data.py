#!/usr/bin/env python3
"""Regenerate src/sgflow/data/groups_core.json.

Groups are authored as generator coordinate triplets (e.g. "-y,x,z"); the
full operator lists are produced by closure.  Wyckoff positions are authored
as a single representative triplet (the first projection map); the remaining
maps are the distinct compositions g o w1 over the group, in operator order.

Wallpaper groups are embedded in 3D with a trivial z action so the same
machinery covers both dimensions.

Run from the repository root:  python scripts/generate_group_data.py
"""

from __future__ import annotations

import json
import re
import sys
from fractions import Fraction
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sgflow.sgdata import AffineOp, closure, load_dataset  # noqa: E402

_TERM = re.compile(r"([+-]?)(\d+/\d+|\d+|[xyz])")
_AXES = {"x": 0, "y": 1, "z": 2}


def parse_triplet(s: str) -> tuple[list[list[Fraction]], list[Fraction]]:
    """Parse 'x-y+1/2, x, z' into a rational (V, tau) pair."""
    rows, tau = [], []
    parts = s.replace(" ", "").split(",")
    if len(parts) != 3:
        raise ValueError(f"expected 3 components in {s!r}")
    for comp in parts:
        row = [Fraction(0)] * 3
        const = Fraction(0)
        pos = 0
        for m in _TERM.finditer(comp):
            if m.start() != pos:
                raise ValueError(f"cannot parse component {comp!r}")
            pos = m.end()
            sign = -1 if m.group(1) == "-" else 1
            tok = m.group(2)
            if tok in _AXES:
                row[_AXES[tok]] += sign
            else:
                const += sign * Fraction(tok)
        if pos != len(comp):
            raise ValueError(f"cannot parse component {comp!r}")
        rows.append(row)
        tau.append(const)
    return rows, tau


def op_from_triplet(s: str) -> AffineOp:
    rows, tau = parse_triplet(s)
    return AffineOp.make(rows, tau)


def rat(x: Fraction) -> list[int]:
    return [x.numerator, x.denominator]


def emit_op(op: AffineOp) -> dict:
    return {
        "rotation": [rat(v) for row in op.rotation for v in row],
        "translation": [rat(v) for v in op.translation],
    }


def expand_wyckoff(ops: list[AffineOp], seed: str, letter: str) -> dict:
    """All distinct g o w1 in operator order; label is multiplicity + letter."""
    w1 = op_from_triplet(seed)
    maps, seen = [], set()
    for g in ops:
        m = g.compose(w1)
        key = (m.rotation, m.translation)
        if key not in seen:
            seen.add(key)
            maps.append(m)
    return {
        "label": f"{len(maps)}{letter}",
        "maps": [{"V": emit_op(m)["rotation"], "tau": emit_op(m)["translation"]} for m in maps],
    }


# (number, name, generators, [(letter, representative triplet), ...])
# Wallpaper groups (dimension 2, embedded with trivial z).
WALLPAPER = [
    (1, "p1", ["x,y,z"], [("a", "x,y,z")]),
    (2, "p2", ["-x,-y,z"], [("a", "0,0,z"), ("b", "1/2,1/2,z"), ("e", "x,y,z")]),
    (3, "pm", ["-x,y,z"], [("a", "0,y,z"), ("c", "x,y,z")]),
    (4, "pg", ["-x,y+1/2,z"], [("a", "x,y,z")]),
    (5, "cm", ["-x,y,z", "x+1/2,y+1/2,z"], [("a", "0,y,z"), ("b", "x,y,z")]),
    (6, "p2mm", ["-x,y,z", "x,-y,z"], [("a", "0,0,z"), ("e", "x,0,z"), ("i", "x,y,z")]),
    (7, "p2mg", ["-x,-y,z", "-x+1/2,y,z"], [("a", "0,0,z"), ("c", "1/4,y,z"), ("d", "x,y,z")]),
    (8, "p2gg", ["-x,-y,z", "x+1/2,-y+1/2,z"], [("a", "0,0,z"), ("c", "x,y,z")]),
    (9, "c2mm", ["-x,-y,z", "-x,y,z", "x+1/2,y+1/2,z"],
     [("a", "0,0,z"), ("e", "x,0,z"), ("f", "x,y,z")]),
    (10, "p4", ["-y,x,z"], [("a", "0,0,z"), ("b", "1/2,1/2,z"), ("d", "x,y,z")]),
    (11, "p4mm", ["-y,x,z", "-x,y,z"],
     [("a", "0,0,z"), ("b", "1/2,1/2,z"), ("d", "x,x,z"), ("e", "x,0,z"), ("g", "x,y,z")]),
    (12, "p4gm", ["-y,x,z", "-x+1/2,y+1/2,z"], [("a", "0,0,z"), ("d", "x,y,z")]),
    (13, "p3", ["-y,x-y,z"], [("a", "0,0,z"), ("b", "1/3,2/3,z"), ("d", "x,y,z")]),
    (14, "p3m1", ["-y,x-y,z", "-y,-x,z"], [("a", "0,0,z"), ("d", "x,-x,z"), ("e", "x,y,z")]),
    (15, "p31m", ["-y,x-y,z", "y,x,z"], [("a", "0,0,z"), ("c", "x,x,z"), ("d", "x,y,z")]),
    (16, "p6", ["x-y,x,z"], [("a", "0,0,z"), ("d", "x,y,z")]),
    (17, "p6mm", ["x-y,x,z", "y,x,z"], [("a", "0,0,z"), ("e", "x,x,z"), ("f", "x,y,z")]),
]

# Representative 3D groups spanning the six crystal families.
SPACE_3D = [
    (1, "P1", ["x,y,z"], [("a", "x,y,z")]),
    (2, "P-1", ["-x,-y,-z"], [("a", "0,0,0"), ("h", "1/2,1/2,1/2"), ("i", "x,y,z")]),
    (3, "P2", ["-x,y,-z"], [("a", "0,y,0"), ("e", "x,y,z")]),
    (10, "P2/m", ["-x,y,-z", "-x,-y,-z"],
     [("a", "0,0,0"), ("i", "0,y,0"), ("m", "x,0,z"), ("o", "x,y,z")]),
    (16, "P222", ["-x,-y,z", "x,-y,-z"], [("a", "0,0,0"), ("u", "x,y,z")]),
    (47, "Pmmm", ["-x,y,z", "x,-y,z", "x,y,-z"],
     [("a", "0,0,0"), ("i", "x,0,0"), ("y", "x,y,0"), ("A", "x,y,z")]),
    (75, "P4", ["-y,x,z"], [("a", "0,0,z"), ("b", "1/2,1/2,z"), ("d", "x,y,z")]),
    (123, "P4/mmm", ["-y,x,z", "-x,y,z", "x,y,-z"],
     [("a", "0,0,0"), ("b", "0,0,1/2"), ("g", "0,0,z"), ("j", "x,x,0"), ("u", "x,y,z")]),
    (143, "P3", ["-y,x-y,z"], [("a", "0,0,z"), ("b", "1/3,2/3,z"), ("d", "x,y,z")]),
    (191, "P6/mmm", ["x-y,x,z", "y,x,-z", "-x,-y,-z"],
     [("a", "0,0,0"), ("c", "1/3,2/3,0"), ("j", "x,0,0"), ("r", "x,y,z")]),
    (221, "Pm-3m", ["-y,x,z", "z,x,y", "-x,-y,-z"],
     [("a", "0,0,0"), ("b", "1/2,1/2,1/2"), ("c", "0,1/2,1/2"),
      ("e", "x,0,0"), ("g", "x,x,x"), ("n", "x,y,z")]),
    (225, "Fm-3m", ["-y,x,z", "z,x,y", "-x,-y,-z", "x,y+1/2,z+1/2", "x+1/2,y,z+1/2"],
     [("a", "0,0,0"), ("c", "1/4,1/4,1/4"), ("e", "x,0,0"), ("l", "x,y,z")]),
]


def build() -> dict:
    groups = []
    for dim, table in ((2, WALLPAPER), (3, SPACE_3D)):
        for number, name, gens, wycks in table:
            gen_ops = [op_from_triplet(s) for s in gens]
            ops = closure(gen_ops)
            entry = {
                "dimension": dim,
                "number": number,
                "name": name,
                "setting": "origin at a fixed point of maximal site symmetry (ITA origin choice 2 style)",
                "generators": [emit_op(g) for g in gen_ops],
                "wyckoffs": [expand_wyckoff(ops, seed, letter) for letter, seed in wycks],
            }
            groups.append(entry)
            mults = [w["label"] for w in entry["wyckoffs"]]
            print(f"dim {dim} #{number:>3} {name:<8} order {len(ops):>3}  wyckoffs {mults}")
    return {"format": "sgflow-groups-v1", "groups": groups}


def main() -> None:
    out = Path(__file__).resolve().parent.parent / "src" / "sgflow" / "data" / "groups_core.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    data = build()
    out.write_text(json.dumps(data, indent=1) + "\n")
    print(f"wrote {out}")
    ds = load_dataset(out)
    print(f"verified: {len(ds.groups)} groups load cleanly")


if __name__ == "__main__":
    main()
