"""Randomized NOE fixtures given both as package objects and as plain tuples."""

from __future__ import annotations

from genguide.scorers import Restraint, RestraintGroup
from genguide.structure import AtomKey, AtomRecord, Structure

import oracles


def random_noe_instance(rng, max_groups: int = 50, max_members: int = 4):
    n_res = int(rng.integers(3, 12))
    atoms, coords = [], {}
    for r in range(1, n_res + 1):
        for name in ("N", "CA", "CB"):
            xyz = tuple(float(v) for v in rng.normal(scale=6.0, size=3))
            atoms.append(AtomRecord(AtomKey(r, name), "ALA", xyz))
            coords[(r, name)] = xyz
    names = ("CA", "CB", "N", "H", "HA", "HB2", "MB")
    groups, plain = [], []
    for gid in range(1, int(rng.integers(1, max_groups + 1)) + 1):
        members, pm = [], []
        for _ in range(int(rng.integers(1, max_members + 1))):
            ra, rb = (int(x) for x in rng.integers(1, n_res + 1, size=2))
            aa, ab = (str(x) for x in rng.choice(names, size=2))
            if (ra, oracles.carrier(aa)) == (rb, oracles.carrier(ab)):
                rb = ra % n_res + 1
            lo = float(rng.uniform(0, 4)) if rng.random() < 0.7 else 0.0
            up = lo + float(rng.uniform(0.5, 6))
            members.append(Restraint(AtomKey(ra, aa), AtomKey(rb, ab), lo, up))
            pm.append(((ra, aa), (rb, ab), lo, up))
        groups.append(RestraintGroup(gid, tuple(members)))
        plain.append(pm)
    return Structure("A", tuple(atoms), n_res), coords, groups, plain
