"""Protein structures as labelled atom sets, plus fixed-column PDB I/O.

Only ``ATOM`` records of the first model and the first chain are read.
Residues are renumbered to a contiguous ``1..N`` at parse time; the
author numbering survives in :attr:`Structure.author_numbering` so that
restraint files written against deposited numbering can be remapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyStructure, MalformedRecord, MissingAtom


@dataclass(frozen=True, order=True)
class AtomKey:
    residue_index: int
    atom_name: str

    def __post_init__(self):
        name = self.atom_name.strip()
        if name != self.atom_name:
            object.__setattr__(self, "atom_name", name)
        if not name:
            raise ValueError("atom_name must be non-empty")
        if self.residue_index < 1:
            raise ValueError(f"residue_index must be >= 1, got {self.residue_index}")

    def __str__(self) -> str:
        return f"{self.residue_index}:{self.atom_name}"


@dataclass(frozen=True)
class AtomRecord:
    key: AtomKey
    residue_type: str
    position: tuple[float, float, float]

    def __post_init__(self):
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise ValueError(f"non-finite or malformed position for {self.key}: {self.position}")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class Structure:
    """An immutable, canonically ordered set of atoms from one chain.

    ``author_numbering[i - 1]`` is the residue number the input file used
    for internal residue ``i``.
    """

    chain_id: str
    atoms: tuple[AtomRecord, ...]
    n_residues: int
    author_numbering: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        atoms = tuple(sorted(self.atoms, key=lambda a: (a.key.residue_index, a.key.atom_name)))
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise EmptyStructure("structure has no atoms")
        seen = set()
        for atom in atoms:
            if atom.key in seen:
                raise ValueError(f"duplicate atom key {atom.key}")
            seen.add(atom.key)
            if not 1 <= atom.key.residue_index <= self.n_residues:
                raise ValueError(
                    f"residue index {atom.key.residue_index} outside 1..{self.n_residues}"
                )
        if not self.author_numbering:
            object.__setattr__(self, "author_numbering", tuple(range(1, self.n_residues + 1)))
        elif len(self.author_numbering) != self.n_residues:
            raise ValueError("author_numbering must have one entry per residue")

    @classmethod
    def from_ca_trace(
        cls,
        coords,
        residue_types: Sequence[str] | None = None,
        chain_id: str = "A",
    ) -> "Structure":
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError(f"expected an (N, 3) array, got shape {coords.shape}")
        n = coords.shape[0]
        if residue_types is None:
            residue_types = ["ALA"] * n
        if len(residue_types) != n:
            raise ValueError("residue_types length must match the number of residues")
        atoms = tuple(
            AtomRecord(AtomKey(i + 1, "CA"), residue_types[i], tuple(coords[i]))
            for i in range(n)
        )
        return cls(chain_id, atoms, n)

    @cached_property
    def index(self) -> dict[AtomKey, int]:
        return {atom.key: i for i, atom in enumerate(self.atoms)}

    @cached_property
    def coordinates(self) -> np.ndarray:
        xyz = np.array([atom.position for atom in self.atoms], dtype=float)
        xyz.setflags(write=False)
        return xyz

    @cached_property
    def residue_types(self) -> tuple[str, ...]:
        types = ["UNK"] * self.n_residues
        for atom in self.atoms:
            types[atom.key.residue_index - 1] = atom.residue_type
        return tuple(types)

    @cached_property
    def author_to_internal(self) -> dict[int, int]:
        return {auth: i + 1 for i, auth in enumerate(self.author_numbering)}

    def __contains__(self, key: AtomKey) -> bool:
        return key in self.index

    def position(self, key: AtomKey) -> np.ndarray:
        try:
            return self.coordinates[self.index[key]]
        except KeyError:
            raise MissingAtom(key) from None

    def residue_type(self, residue_index: int) -> str:
        return self.residue_types[residue_index - 1]

    def atom_coordinates(self, atom_name: str) -> tuple[list[int], np.ndarray]:
        """Residue indices and positions of every atom called ``atom_name``."""
        rows = [i for i, a in enumerate(self.atoms) if a.key.atom_name == atom_name]
        residues = [self.atoms[i].key.residue_index for i in rows]
        return residues, self.coordinates[rows]

    def ca_trace(self) -> np.ndarray:
        residues, xyz = self.atom_coordinates("CA")
        if residues != list(range(1, self.n_residues + 1)):
            raise MissingAtom(AtomKey(_first_gap(residues, self.n_residues), "CA"))
        return xyz

    def with_coordinates(self, coords) -> "Structure":
        """Same atoms and labels with new positions (rows in atom order)."""
        coords = np.asarray(coords, dtype=float)
        atoms = tuple(
            AtomRecord(a.key, a.residue_type, tuple(coords[i])) for i, a in enumerate(self.atoms)
        )
        return Structure(self.chain_id, atoms, self.n_residues, self.author_numbering)


def _first_gap(residues: list[int], n: int) -> int:
    present = set(residues)
    for i in range(1, n + 1):
        if i not in present:
            return i
    return n


def distance(s: Structure, a: AtomKey, b: AtomKey) -> float:
    pa = s.position(a)
    pb = s.position(b)
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(pa, pb)))


def parse_pdb(text: str | Iterable[str]) -> Structure:
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = list(text)

    chain = None
    records = []
    author_numbers: list[int] = []
    seen_atoms = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if line.startswith("ENDMDL") and seen_atoms:
            break
        if not line.startswith("ATOM  "):
            continue
        if len(line) < 54:
            raise MalformedRecord("ATOM record shorter than 54 columns", lineno)
        altloc = line[16]
        if altloc not in (" ", "A"):
            continue
        chain_id = line[21]
        if chain is None:
            chain = chain_id
        elif chain_id != chain:
            continue
        try:
            name = line[12:16].strip()
            res_name = line[17:20].strip()
            res_seq = int(line[22:26])
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError as exc:
            raise MalformedRecord(f"cannot parse ATOM columns ({exc})", lineno) from None
        if not name:
            raise MalformedRecord("empty atom name", lineno)
        if not all(math.isfinite(c) for c in xyz):
            raise MalformedRecord("non-finite coordinate", lineno)
        seen_atoms = True
        if not author_numbers or author_numbers[-1] != res_seq:
            author_numbers.append(res_seq)
        records.append((lineno, len(author_numbers), name, res_name, xyz))

    if not records:
        raise EmptyStructure("no ATOM records found")

    atoms = []
    seen = set()
    for lineno, resi, name, res_name, xyz in records:
        key = AtomKey(resi, name)
        if key in seen:
            raise MalformedRecord(f"duplicate atom {name} in residue {author_numbers[resi - 1]}", lineno)
        seen.add(key)
        atoms.append(AtomRecord(key, res_name, xyz))
    return Structure(chain or "A", tuple(atoms), len(author_numbers), tuple(author_numbers))


def _format_name(name: str) -> str:
    # Names shorter than four characters start in column 14.
    if len(name) >= 4:
        return name[:4]
    return " " + name.ljust(3)


def write_pdb(s: Structure) -> str:
    lines = []
    chain = (s.chain_id or "A")[0]
    for serial, atom in enumerate(s.atoms, start=1):
        x, y, z = atom.position
        name = atom.key.atom_name
        element = name.lstrip("0123456789")[:1]
        lines.append(
            "ATOM  %5d %s %3s %1s%4d    %8.3f%8.3f%8.3f%6.2f%6.2f          %2s"
            % (
                serial % 100000,
                _format_name(name),
                atom.residue_type[:3],
                chain,
                atom.key.residue_index,
                x,
                y,
                z,
                1.0,
                0.0,
                element,
            )
        )
    lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"
