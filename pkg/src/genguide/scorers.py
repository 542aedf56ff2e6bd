"""Black-box objectives over structures: pairwise distances, NOE restraint
violations, and chemical-shift agreement.

Every scorer returns a loss (lower is better).  Scorer objects hold only
immutable data and are safe to call concurrently.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import statistics
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    EmptyGroupAfterMapping,
    EmptyRestraintSet,
    EmptyTargets,
    MalformedRecord,
    MissingAtom,
    NoOverlap,
    PredictorFailure,
    TooShort,
    UnknownAtomName,
)
from .structure import AtomKey, Structure, write_pdb

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairwiseTarget:
    a: AtomKey
    b: AtomKey
    target: float

    def __post_init__(self):
        if not self.target > 0:
            raise ValueError(f"target distance must be positive, got {self.target}")
        if self.a == self.b:
            raise ValueError("pairwise target needs two distinct atoms")


@dataclass(frozen=True)
class Restraint:
    a: AtomKey
    b: AtomKey
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper:
            raise ValueError(f"bounds must satisfy 0 <= lower <= upper, got [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class RestraintGroup:
    """Ambiguous NOE restraint: satisfied when any member is."""

    group_id: int
    members: tuple[Restraint, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError(f"restraint group {self.group_id} has no members")


@dataclass(frozen=True)
class ShiftEntry:
    residue_index: int
    atom_name: str
    shift: float


@dataclass(frozen=True)
class ShiftTable:
    entries: tuple[ShiftEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            key = (e.residue_index, e.atom_name)
            if key in seen:
                raise ValueError(f"duplicate shift entry {key}")
            if not math.isfinite(e.shift):
                raise ValueError(f"non-finite shift for {key}")
            seen.add(key)

    def as_dict(self) -> dict[tuple[int, str], float]:
        return {(e.residue_index, e.atom_name): e.shift for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class LossMode:
    kind: str
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("l1", "l2", "topk"):
            raise ValueError(f"unknown loss mode {self.kind!r}")
        if self.kind == "topk" and (self.k is None or self.k < 1):
            raise ValueError("topk mode needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> "LossMode":
        """Accept ``l1``, ``l2``, ``topk:K``."""
        if text.startswith("topk"):
            _, _, k = text.partition(":")
            return cls("topk", int(k) if k else 5)
        return cls(text)

    def __str__(self) -> str:
        return f"topk:{self.k}" if self.kind == "topk" else self.kind


L1 = LossMode("l1")
L2 = LossMode("l2")


# -- pairwise distances --------------------------------------------------------


def _pair_distances(s: Structure, pairs: Sequence[tuple[AtomKey, AtomKey]]) -> np.ndarray:
    try:
        ia = [s.index[a] for a, _ in pairs]
        ib = [s.index[b] for _, b in pairs]
    except KeyError as exc:
        raise MissingAtom(exc.args[0]) from None
    xyz = s.coordinates
    return np.linalg.norm(xyz[ia] - xyz[ib], axis=1)


def aggregate(deviations: np.ndarray, mode: LossMode) -> float:
    dev = np.abs(np.asarray(deviations, dtype=float))
    if mode.kind == "l1":
        return float(np.mean(dev))
    if mode.kind == "l2":
        return float(np.mean(dev**2))
    k = min(mode.k, dev.size)
    return float(np.mean(np.sort(dev)[-k:]))


def pairwise_loss(s: Structure, targets: Sequence[PairwiseTarget], mode: LossMode = L1) -> float:
    if not targets:
        raise EmptyTargets("no pairwise targets")
    d = _pair_distances(s, [(t.a, t.b) for t in targets])
    ref = np.array([t.target for t in targets])
    return aggregate(d - ref, mode)


class PairwiseScorer:
    def __init__(self, targets: Sequence[PairwiseTarget], mode: LossMode = L1):
        if not targets:
            raise EmptyTargets("no pairwise targets")
        self.targets = tuple(targets)
        self.mode = mode

    def __call__(self, s: Structure) -> float:
        return pairwise_loss(s, self.targets, self.mode)

    def report(self, s: Structure) -> dict[str, float]:
        return {"loss": self(s)}


# -- hydrogen to heavy atom mapping ------------------------------------------------

# Per-residue hydrogen (and pseudo-atom) carriers, written as
# "carrier: name name ...".  Both 1/2 and 2/3 methylene numbering are listed.
_SIDE_CHAIN_CARRIERS = {
    "ALA": "CB: HB HB1 HB2 HB3 MB QB",
    "ARG": "CB: HB1 HB2 HB3 QB; CG: HG1 HG2 HG3 QG; CD: HD1 HD2 HD3 QD; NE: HE; "
    "NH1: HH11 HH12 QH1; NH2: HH21 HH22 QH2",
    "ASN": "CB: HB1 HB2 HB3 QB; ND2: HD21 HD22 QD2",
    "ASP": "CB: HB1 HB2 HB3 QB; OD2: HD2",
    "CYS": "CB: HB1 HB2 HB3 QB; SG: HG",
    "GLN": "CB: HB1 HB2 HB3 QB; CG: HG1 HG2 HG3 QG; NE2: HE21 HE22 QE2",
    "GLU": "CB: HB1 HB2 HB3 QB; CG: HG1 HG2 HG3 QG; OE2: HE2",
    "GLY": "CA: HA1 HA2 HA3 QA",
    "HIS": "CB: HB1 HB2 HB3 QB; ND1: HD1; CD2: HD2; CE1: HE1; NE2: HE2",
    "ILE": "CB: HB; CG1: HG11 HG12 HG13 QG1; CG2: HG21 HG22 HG23 MG QG2 MG2; "
    "CD1: HD11 HD12 HD13 MD QD1 MD1",
    "LEU": "CB: HB1 HB2 HB3 QB; CG: HG QQD; CD1: HD11 HD12 HD13 MD1 QD1; "
    "CD2: HD21 HD22 HD23 MD2 QD2",
    "LYS": "CB: HB1 HB2 HB3 QB; CG: HG1 HG2 HG3 QG; CD: HD1 HD2 HD3 QD; "
    "CE: HE1 HE2 HE3 QE; NZ: HZ HZ1 HZ2 HZ3 QZ",
    "MET": "CB: HB1 HB2 HB3 QB; CG: HG1 HG2 HG3 QG; CE: HE HE1 HE2 HE3 ME QE",
    "PHE": "CB: HB1 HB2 HB3 QB; CG: QD; CD1: HD1; CD2: HD2; CE1: HE1; CE2: HE2; CZ: HZ QE QR",
    "PRO": "CB: HB1 HB2 HB3 QB; CG: HG1 HG2 HG3 QG; CD: HD1 HD2 HD3 QD",
    "SER": "CB: HB1 HB2 HB3 QB; OG: HG HG1",
    "THR": "CB: HB; OG1: HG1; CG2: HG21 HG22 HG23 MG QG2 MG2",
    "TRP": "CB: HB1 HB2 HB3 QB; CD1: HD1; NE1: HE1; CE3: HE3; CZ2: HZ2; CZ3: HZ3; CH2: HH2",
    "TYR": "CB: HB1 HB2 HB3 QB; CG: QD; CD1: HD1; CD2: HD2; CE1: HE1; CE2: HE2; CZ: QE QR; OH: HH",
    "VAL": "CB: HB QQG; CG1: HG11 HG12 HG13 MG1 QG1; CG2: HG21 HG22 HG23 MG2 QG2",
}

_BACKBONE_CARRIERS = {"H": "N", "HN": "N", "H1": "N", "H2": "N", "H3": "N", "HT1": "N",
                      "HT2": "N", "HT3": "N", "HA": "CA"}


def _build_heavy_table() -> dict[str, dict[str, str]]:
    table = {}
    for res, spec in _SIDE_CHAIN_CARRIERS.items():
        names = dict(_BACKBONE_CARRIERS)
        for clause in spec.split(";"):
            carrier, _, hydrogens = clause.partition(":")
            for h in hydrogens.split():
                names[h] = carrier.strip()
        table[res] = names
    # Protonation and naming variants.
    table["HID"] = table["HIE"] = table["HIP"] = table["HSD"] = table["HSE"] = table["HIS"]
    table["CYX"] = table["CYS"]
    table["MSE"] = table["MET"]
    return table


HEAVY_ATOM_TABLE = _build_heavy_table()
_HEAVY_ELEMENTS = ("C", "N", "O", "S")


def map_to_heavy(key: AtomKey, residue_type: str) -> AtomKey:
    """Replace a hydrogen or pseudo-atom by its covalently bonded heavy atom.

    Heavy atoms map to themselves.  Raises :class:`UnknownAtomName` when the
    name is neither a heavy atom nor listed for ``residue_type``.
    """
    name = key.atom_name.upper()
    if name[0].isdigit():
        # Legacy PDB hydrogen names put the index first ("1HB" is HB1).
        digits = name[: len(name) - len(name.lstrip("0123456789"))]
        name = name[len(digits):] + digits
    if name[0] in _HEAVY_ELEMENTS:
        return AtomKey(key.residue_index, name)
    table = HEAVY_ATOM_TABLE.get(residue_type.upper())
    if table is None:
        carrier = _BACKBONE_CARRIERS.get(name)
    else:
        carrier = table.get(name)
    if carrier is None:
        raise UnknownAtomName(f"no heavy-atom carrier for {name} in {residue_type}")
    return AtomKey(key.residue_index, carrier)


# -- NOE restraints --------------------------------------------------------------


def restraint_violation(d: float, lower: float, upper: float) -> float:
    return max(0.0, lower - d) + max(0.0, d - upper)


@dataclass(frozen=True)
class MappedGroup:
    group_id: int
    pairs: tuple[tuple[AtomKey, AtomKey], ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]


def _map_group(s: Structure, g: RestraintGroup) -> tuple[MappedGroup | None, int]:
    pairs, lower, upper = [], [], []
    dropped = 0
    for m in g.members:
        try:
            a = map_to_heavy(m.a, s.residue_type(m.a.residue_index))
            b = map_to_heavy(m.b, s.residue_type(m.b.residue_index))
        except (UnknownAtomName, IndexError) as exc:
            log.warning("group %s: dropping member %s-%s (%s)", g.group_id, m.a, m.b, exc)
            dropped += 1
            continue
        if a not in s or b not in s:
            dropped += 1
            continue
        pairs.append((a, b))
        lower.append(m.lower)
        upper.append(m.upper)
    if not pairs:
        return None, dropped
    return MappedGroup(g.group_id, tuple(pairs), tuple(lower), tuple(upper)), dropped


def _mapped_violation(s: Structure, g: MappedGroup) -> float:
    d = _pair_distances(s, g.pairs)
    lo = np.asarray(g.lower)
    up = np.asarray(g.upper)
    per_member = np.maximum(0.0, lo - d) + np.maximum(0.0, d - up)
    return float(np.min(per_member))


def group_violation(s: Structure, g: RestraintGroup) -> float:
    mapped, _ = _map_group(s, g)
    if mapped is None:
        raise EmptyGroupAfterMapping(f"restraint group {g.group_id} has no resolvable members")
    return _mapped_violation(s, mapped)


@dataclass(frozen=True)
class NoeReport:
    loss: float
    p_viol: float
    mean_viol: float
    median_viol: float
    violations: tuple[float, ...] = field(repr=False)
    group_ids: tuple[int, ...] = field(repr=False)
    n_dropped_groups: int = 0

    @property
    def metrics(self) -> tuple[float, float, float, float]:
        return (self.loss, self.p_viol, self.mean_viol, self.median_viol)


def summarize_violations(values: Sequence[float]) -> tuple[float, float, float, float]:
    """(loss, fraction violated, mean over violated, median over violated)."""
    if not values:
        raise EmptyRestraintSet("no restraint groups to summarize")
    violated = [v for v in values if v > 0.0]
    p = len(violated) / len(values)
    if not violated:
        return 0.0, 0.0, 0.0, 0.0
    mean = sum(violated) / len(violated)
    return p * mean, p, mean, float(statistics.median(violated))


def _noe_from_mapped(s, mapped: Sequence[MappedGroup], n_dropped: int) -> NoeReport:
    if not mapped:
        raise EmptyRestraintSet("no restraint group survived heavy-atom mapping")
    values = [_mapped_violation(s, g) for g in mapped]
    loss, p, mean, median = summarize_violations(values)
    return NoeReport(loss, p, mean, median, tuple(values), tuple(g.group_id for g in mapped), n_dropped)


def noe_loss(s: Structure, groups: Sequence[RestraintGroup]) -> NoeReport:
    if not groups:
        raise EmptyRestraintSet("no restraint groups")
    mapped, n_dropped = [], 0
    for g in groups:
        m, _ = _map_group(s, g)
        if m is None:
            log.warning("restraint group %s excluded: no resolvable members", g.group_id)
            n_dropped += 1
        else:
            mapped.append(m)
    return _noe_from_mapped(s, mapped, n_dropped)


class NoeScorer:
    """NOE violation loss; heavy-atom mapping is cached per atom layout."""

    def __init__(self, groups: Sequence[RestraintGroup]):
        if not groups:
            raise EmptyRestraintSet("no restraint groups")
        self.groups = tuple(groups)
        self._cache: dict = {}

    def _mapped(self, s: Structure):
        layout = (s.residue_types, tuple(a.key for a in s.atoms))
        hit = self._cache.get(layout)
        if hit is None:
            mapped, n_dropped = [], 0
            for g in self.groups:
                m, _ = _map_group(s, g)
                if m is None:
                    n_dropped += 1
                else:
                    mapped.append(m)
            if n_dropped:
                log.warning("%d of %d restraint groups unresolvable on this structure",
                            n_dropped, len(self.groups))
            hit = self._cache.setdefault(layout, (tuple(mapped), n_dropped))
        return hit

    def report(self, s: Structure) -> NoeReport:
        mapped, n_dropped = self._mapped(s)
        return _noe_from_mapped(s, mapped, n_dropped)

    def __call__(self, s: Structure) -> float:
        return self.report(s).loss


# -- chemical shifts ---------------------------------------------------------------

ShiftPredictor = Callable[[Structure], ShiftTable]

SYNTHETIC_BASE_PPM = 54.0
SYNTHETIC_AMPLITUDE_PPM = 4.0


def synthetic_shift_predict(s: Structure) -> ShiftTable:
    """Deterministic C-alpha pseudo-shifts from the virtual bond angle.

    Interior residues get ``54 + 4 cos(theta)`` ppm where theta is the angle
    at C-alpha(i) between its sequence neighbours; residues without both
    neighbours get 54 ppm.
    """
    residues, xyz = s.atom_coordinates("CA")
    if len(residues) < 3:
        raise TooShort("synthetic shifts need at least 3 C-alpha atoms")
    pos = dict(zip(residues, xyz))
    if not any(r - 1 in pos and r + 1 in pos for r in residues):
        raise TooShort("synthetic shifts need 3 consecutive C-alpha atoms")
    entries = []
    for r in residues:
        if r - 1 in pos and r + 1 in pos:
            u = pos[r - 1] - pos[r]
            v = pos[r + 1] - pos[r]
            cos_theta = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
            cos_theta = min(1.0, max(-1.0, cos_theta))
            shift = SYNTHETIC_BASE_PPM + SYNTHETIC_AMPLITUDE_PPM * cos_theta
        else:
            shift = SYNTHETIC_BASE_PPM
        entries.append(ShiftEntry(r, "CA", shift))
    return ShiftTable(tuple(entries))


def parse_shift_rows(text: str) -> ShiftTable:
    """Parse ``res,atom,shift_ppm`` CSV text; the header is required."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["res", "atom", "shift_ppm"]:
        raise MalformedRecord(f"expected header res,atom,shift_ppm, got {header}", 1)
    entries, seen = [], set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise MalformedRecord(f"expected 3 columns, got {len(row)}", lineno)
        try:
            res = int(row[0])
            atom = row[1].strip()
            shift = float(row[2])
        except ValueError as exc:
            raise MalformedRecord(str(exc), lineno) from None
        if not atom or not math.isfinite(shift) or res < 1:
            raise MalformedRecord("invalid residue, atom or shift", lineno)
        if (res, atom) in seen:
            raise DuplicateKey(f"line {lineno}: duplicate entry ({res}, {atom})")
        seen.add((res, atom))
        entries.append(ShiftEntry(res, atom, shift))
    return ShiftTable(tuple(entries))


def format_shift_csv(table: ShiftTable) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["res", "atom", "shift_ppm"])
    for e in table.entries:
        w.writerow([e.residue_index, e.atom_name, repr(e.shift)])
    return out.getvalue()


class ExternalShiftPredictor:
    """Run a shift predictor as a child process.

    The command receives a PDB path as its last argument and must print a
    ``res,atom,shift_ppm`` CSV on stdout and exit 0.
    """

    def __init__(self, command: Sequence[str] | str, timeout: float = 300.0):
        self.command = [command] if isinstance(command, str) else list(command)
        self.timeout = timeout

    def __call__(self, s: Structure) -> ShiftTable:
        fd, path = tempfile.mkstemp(suffix=".pdb", prefix="genguide_")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(write_pdb(s))
            try:
                proc = subprocess.run(
                    [*self.command, path],
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                raise PredictorFailure(f"predictor timed out after {self.timeout} s") from None
            except OSError as exc:
                raise PredictorFailure(f"cannot launch predictor: {exc}") from None
            if proc.returncode != 0:
                raise PredictorFailure(
                    f"predictor exited with status {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            try:
                return parse_shift_rows(proc.stdout)
            except Exception as exc:
                raise PredictorFailure(f"malformed predictor output: {exc}") from None
        finally:
            os.unlink(path)


@dataclass(frozen=True)
class ShiftReport:
    loss: float
    n_matched: int
    n_unmatched_experimental: int
    n_unmatched_predicted: int

    @property
    def coverage(self) -> float:
        total = self.n_matched + self.n_unmatched_experimental
        return self.n_matched / total if total else 0.0


def shift_report(
    s: Structure,
    experimental: ShiftTable,
    predictor: ShiftPredictor,
    mode: LossMode = L1,
    atom_filter: Iterable[str] | None = ("CA",),
) -> ShiftReport:
    if mode.kind not in ("l1", "l2"):
        raise ValueError("shift loss supports l1 and l2 only")
    predicted = predictor(s)
    keep = None if atom_filter is None else set(atom_filter)
    exp = {k: v for k, v in experimental.as_dict().items() if keep is None or k[1] in keep}
    pred = {k: v for k, v in predicted.as_dict().items() if keep is None or k[1] in keep}
    matched = sorted(exp.keys() & pred.keys())
    if not matched:
        raise NoOverlap("no shared (residue, atom) keys between experiment and prediction")
    dev = np.array([exp[k] - pred[k] for k in matched])
    return ShiftReport(aggregate(dev, mode), len(matched), len(exp) - len(matched), len(pred) - len(matched))


def shift_loss(
    s: Structure,
    experimental: ShiftTable,
    predictor: ShiftPredictor,
    mode: LossMode = L1,
    atom_filter: Iterable[str] | None = ("CA",),
) -> float:
    return shift_report(s, experimental, predictor, mode, atom_filter).loss


class ShiftScorer:
    def __init__(self, experimental: ShiftTable, predictor: ShiftPredictor = synthetic_shift_predict,
                 mode: LossMode = L1, atom_filter: Iterable[str] | None = ("CA",)):
        self.experimental = experimental
        self.predictor = predictor
        self.mode = mode
        self.atom_filter = None if atom_filter is None else tuple(atom_filter)

    def report(self, s: Structure) -> ShiftReport:
        return shift_report(s, self.experimental, self.predictor, self.mode, self.atom_filter)

    def __call__(self, s: Structure) -> float:
        return self.report(s).loss
