"""Experimental data ingestion: NMR-STAR restraint lists, pairwise targets
derived from a reference structure, and the CSV formats the scorers read.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    MalformedRecord,
    NoNoeLists,
    NoSuchAtoms,
    ResidueMappingError,
    StarSyntaxError,
    UnterminatedLoop,
)
from .scorers import (
    PairwiseTarget,
    Restraint,
    RestraintGroup,
    ShiftTable,
    format_shift_csv,
    parse_shift_rows,
)
from .structure import AtomKey, Structure

log = logging.getLogger(__name__)

NULL_VALUES = (".", "?")


# -- STAR document model -------------------------------------------------------------


@dataclass
class StarLoop:
    tags: list[str]
    rows: list[list[str]] = field(default_factory=list)

    def column(self, tag: str) -> int | None:
        """Index of ``tag`` matched on its name after the category dot."""
        want = tag.lower()
        for i, t in enumerate(self.tags):
            if t.lower() == want or t.lower().rsplit(".", 1)[-1] == want:
                return i
        return None

    @property
    def category(self) -> str:
        return self.tags[0].split(".", 1)[0] if self.tags else ""


@dataclass
class StarFrame:
    name: str
    tags: list[tuple[str, str]] = field(default_factory=list)
    loops: list[StarLoop] = field(default_factory=list)

    def get(self, tag: str, default: str | None = None) -> str | None:
        want = tag.lower()
        for t, v in self.tags:
            if t.lower() == want:
                return v
        return default


@dataclass
class StarDocument:
    name: str
    frames: list[StarFrame] = field(default_factory=list)
    # Items outside any save frame live in a nameless frame.
    globals: StarFrame = field(default_factory=lambda: StarFrame(""))


_TOKEN = re.compile(r"""\s*(?:(#.*)|('(?:[^']|'(?=\S))*'(?=\s|$))|("(?:[^"]|"(?=\S))*"(?=\s|$))|(\S+))""")


def _tokens(text: str):
    """Yield (value, is_keyword_capable, line, column)."""
    lines = text.split("\n")
    i = 0
    while i < len(lines):
        line = lines[i].rstrip("\r")
        if line.startswith(";"):
            start = i
            body = [line[1:]]
            i += 1
            while i < len(lines) and not lines[i].startswith(";"):
                body.append(lines[i].rstrip("\r"))
                i += 1
            if i >= len(lines):
                raise StarSyntaxError("unterminated semicolon text field", start + 1, 1)
            yield "\n".join(body), False, start + 1, 1
            rest = lines[i][1:]
            if rest.strip():
                raise StarSyntaxError("text after closing semicolon", i + 1, 2)
            i += 1
            continue
        pos = 0
        while pos < len(line):
            m = _TOKEN.match(line, pos)
            if m is None or m.end() == pos:
                break
            pos = m.end()
            comment, sq, dq, bare = m.groups()
            if comment is not None:
                break
            col = m.start(m.lastindex) + 1
            if sq is not None:
                yield sq[1:-1], False, i + 1, col
            elif dq is not None:
                yield dq[1:-1], False, i + 1, col
            elif bare is not None:
                if bare[0] in "'\"":
                    raise StarSyntaxError("unterminated quoted value", i + 1, col)
                yield bare, True, i + 1, col
        i += 1


def _is_keyword(tok: str, bare: bool, word: str) -> bool:
    return bare and tok.lower().startswith(word)


def parse_star(text: str) -> StarDocument:
    tokens = list(_tokens(text))
    if not tokens:
        raise StarSyntaxError("empty STAR input", 1, 1)
    pos = 0
    doc = None
    frame: StarFrame | None = None

    def current() -> StarFrame:
        return frame if frame is not None else doc.globals

    while pos < len(tokens):
        tok, bare, line, col = tokens[pos]
        if _is_keyword(tok, bare, "data_"):
            if doc is not None:
                raise StarSyntaxError("only one data block is supported", line, col)
            doc = StarDocument(tok[5:])
            pos += 1
            continue
        if doc is None:
            raise StarSyntaxError("content before data_ block", line, col)
        if _is_keyword(tok, bare, "save_"):
            if len(tok) > 5:
                if frame is not None:
                    raise StarSyntaxError("nested save frame", line, col)
                frame = StarFrame(tok[5:])
                doc.frames.append(frame)
            else:
                if frame is None:
                    raise StarSyntaxError("save_ without an open frame", line, col)
                frame = None
            pos += 1
            continue
        if _is_keyword(tok, bare, "loop_") and tok.lower() == "loop_":
            pos = _parse_loop(tokens, pos + 1, current(), line, col)
            continue
        if bare and tok.startswith("_"):
            if pos + 1 >= len(tokens):
                raise StarSyntaxError(f"tag {tok} has no value", line, col)
            val, vbare, vline, vcol = tokens[pos + 1]
            if vbare and (val.startswith("_") or val.lower() in ("loop_", "stop_")
                          or val.lower().startswith(("save_", "data_"))):
                raise StarSyntaxError(f"tag {tok} has no value", vline, vcol)
            current().tags.append((tok, val))
            pos += 2
            continue
        raise StarSyntaxError(f"unexpected token {tok!r}", line, col)
    if doc is None:
        raise StarSyntaxError("no data_ block", 1, 1)
    if frame is not None:
        raise StarSyntaxError(f"save frame {frame.name} not closed", tokens[-1][2], tokens[-1][3])
    return doc


def _parse_loop(tokens, pos: int, frame: StarFrame, line: int, col: int) -> int:
    tags = []
    while pos < len(tokens) and tokens[pos][1] and tokens[pos][0].startswith("_"):
        tags.append(tokens[pos][0])
        pos += 1
    if not tags:
        raise StarSyntaxError("loop_ without tags", line, col)
    values = []
    while pos < len(tokens):
        tok, bare, tline, tcol = tokens[pos]
        if bare and tok.lower() == "stop_":
            break
        if bare and (tok.lower() == "loop_" or tok.lower().startswith(("save_", "data_"))
                     or tok.startswith("_")):
            raise UnterminatedLoop("loop not closed with stop_", line, col)
        values.append(tok)
        pos += 1
    else:
        raise UnterminatedLoop("loop not closed with stop_", line, col)
    if len(values) % len(tags):
        raise StarSyntaxError(
            f"loop has {len(values)} values for {len(tags)} tags", line, col
        )
    n = len(tags)
    rows = [values[i : i + n] for i in range(0, len(values), n)]
    frame.loops.append(StarLoop(tags, rows))
    return pos + 1


_NEEDS_QUOTES = re.compile(r"\s|^[_#$'\"\[\]]|^(?:data_|save_|loop_|stop_|global_)", re.I)


def _format_value(value: str) -> str:
    if "\n" in value:
        return f";{value}\n;"
    if value == "":
        return "''"
    if value in NULL_VALUES or not _NEEDS_QUOTES.search(value):
        return value
    if "' " not in value and not value.endswith("'"):
        return f"'{value}'"
    if '" ' not in value and not value.endswith('"'):
        return f'"{value}"'
    return f";{value}\n;"


def _write_value(out: list[str], value: str, sep: str = " ") -> None:
    formatted = _format_value(value)
    if formatted.startswith(";"):
        out.append("\n" + formatted + "\n")
    else:
        out.append(sep + formatted)


def _write_items(frame: StarFrame, indent: str) -> list[str]:
    out = []
    for tag, value in frame.tags:
        out.append(f"{indent}{tag}")
        _write_value(out, value)
        out.append("\n")
    for loop in frame.loops:
        out.append(f"\n{indent}loop_\n")
        for tag in loop.tags:
            out.append(f"{indent}  {tag}\n")
        out.append("\n")
        for row in loop.rows:
            out.append(indent + " ")
            for value in row:
                _write_value(out, value)
            out.append("\n")
        out.append(f"{indent}stop_\n")
    return out


def write_star(doc: StarDocument) -> str:
    out = [f"data_{doc.name}\n\n"]
    out.extend(_write_items(doc.globals, ""))
    for frame in doc.frames:
        out.append(f"save_{frame.name}\n")
        out.extend(_write_items(frame, "   "))
        out.append("save_\n\n")
    return "".join(out)


# -- NOE restraint extraction ------------------------------------------------------------

_LIST_CATEGORY = "_gen_dist_constraint_list"
_ROW_CATEGORY = "_gen_dist_constraint"


def _float_or_none(value: str) -> float | None:
    if value in NULL_VALUES or value == "":
        return None
    return float(value)


def _restraint_frames(doc: StarDocument):
    for frame in doc.frames:
        ctype = frame.get(f"{_LIST_CATEGORY}.Constraint_type")
        category = frame.get(f"{_LIST_CATEGORY}.Sf_category")
        has_list_tags = any(t.lower().startswith(_LIST_CATEGORY + ".") for t, _ in frame.tags)
        if not has_list_tags and category != "gen_dist_constraints":
            continue
        yield frame, (ctype or "")


def extract_noe_groups(
    doc: StarDocument,
    residue_map: Mapping[int, int] | None = None,
) -> list[RestraintGroup]:
    """NOE restraint groups from the ``Gen_dist_constraint`` loops of a document.

    Only lists whose ``Constraint_type`` is NOE are used.  Rows sharing a
    constraint ``ID`` become one ambiguous group.  Missing lower bounds are
    set to 0; rows lacking an upper bound are dropped.  With
    ``residue_map`` (author number -> internal index, e.g.
    :attr:`Structure.author_to_internal`) author residue numbers are
    remapped and unmappable residues raise :class:`ResidueMappingError`.
    """
    groups: list[RestraintGroup] = []
    found = False
    used_ids: set[int] = set()
    for frame, ctype in _restraint_frames(doc):
        if ctype.strip().lower() != "noe":
            log.info("skipping restraint list %s of type %r", frame.name, ctype)
            continue
        for loop in frame.loops:
            if loop.category.lower() != _ROW_CATEGORY:
                continue
            found = True
            groups.extend(_groups_from_loop(loop, frame.name, residue_map, used_ids))
    if not found:
        raise NoNoeLists("no Gen_dist_constraint loop in an NOE-typed restraint list")
    return groups


def _groups_from_loop(loop: StarLoop, frame_name: str, residue_map, used_ids: set[int]):
    col = loop.column
    id_col = col("ID")
    lower_col = col("Distance_lower_bound_val")
    upper_col = col("Distance_upper_bound_val")
    if upper_col is None:
        raise MalformedRecord(f"{frame_name}: loop lacks Distance_upper_bound_val")
    if id_col is None:
        log.warning("%s: no constraint ID column, each row is its own group", frame_name)

    def residue(row, side: str) -> int:
        c = col(f"Auth_seq_ID_{side}")
        if residue_map is not None and c is not None and row[c] not in NULL_VALUES:
            raw = row[c]
            try:
                return residue_map[int(raw)]
            except (KeyError, ValueError):
                raise ResidueMappingError(f"{frame_name}: residue {raw} has no internal index") from None
        for name in (f"Seq_ID_{side}", f"Comp_index_ID_{side}", f"Auth_seq_ID_{side}"):
            c = col(name)
            if c is not None and row[c] not in NULL_VALUES:
                return int(row[c])
        raise MalformedRecord(f"{frame_name}: row without residue number")

    def atom(row, side: str) -> str:
        for name in (f"Atom_ID_{side}", f"Auth_atom_ID_{side}"):
            c = col(name)
            if c is not None and row[c] not in NULL_VALUES:
                return row[c]
        raise MalformedRecord(f"{frame_name}: row without atom name")

    order: list[int] = []
    members: dict[int, list[Restraint]] = {}
    for n, row in enumerate(loop.rows, start=1):
        gid = int(row[id_col]) if id_col is not None else n
        if gid not in members:
            order.append(gid)
            members[gid] = []
        upper = _float_or_none(row[upper_col])
        if upper is None:
            log.warning("%s: constraint %s row %d has no upper bound, dropped", frame_name, gid, n)
            continue
        lower = _float_or_none(row[lower_col]) if lower_col is not None else None
        lower = 0.0 if lower is None else lower
        a = AtomKey(residue(row, "1"), atom(row, "1"))
        b = AtomKey(residue(row, "2"), atom(row, "2"))
        try:
            members[gid].append(Restraint(a, b, lower, upper))
        except ValueError as exc:
            log.warning("%s: constraint %s dropped member (%s)", frame_name, gid, exc)

    # Constraint IDs restart per list; shift colliding ones past those already used.
    offset = max(used_ids) if used_ids and used_ids & set(order) else 0
    out = []
    for gid in order:
        if not members[gid]:
            log.warning("%s: constraint %s has no usable members, excluded", frame_name, gid)
            continue
        new_id = gid + offset
        used_ids.add(new_id)
        out.append(RestraintGroup(new_id, tuple(members[gid])))
    return out


# -- pairwise targets ---------------------------------------------------------------------


def derive_pairwise_targets(reference: Structure, cutoff: float = 5.0, atom_name: str = "CA") -> list[PairwiseTarget]:
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    residues, xyz = reference.atom_coordinates(atom_name)
    if not residues:
        raise NoSuchAtoms(f"reference has no {atom_name} atoms")
    targets = []
    for (i, ri), (j, rj) in itertools.combinations(enumerate(residues), 2):
        if ri == rj:
            continue
        d = math.sqrt(float(np.sum((xyz[i] - xyz[j]) ** 2)))
        if d <= cutoff and d > 0:
            targets.append(PairwiseTarget(AtomKey(ri, atom_name), AtomKey(rj, atom_name), d))
    return targets


# -- CSV formats ------------------------------------------------------------------------------

PAIRWISE_HEADER = ["res_a", "atom_a", "res_b", "atom_b", "target_angstrom"]
RESTRAINT_HEADER = ["group_id", "res_a", "atom_a", "res_b", "atom_b", "lower_angstrom", "upper_angstrom"]


def _read_rows(text: str, header: list[str]):
    reader = csv.reader(io.StringIO(text))
    got = next(reader, None)
    if got is None or [h.strip() for h in got] != header:
        raise MalformedRecord(f"expected header {','.join(header)}, got {got}", 1)
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise MalformedRecord(f"expected {len(header)} columns, got {len(row)}", lineno)
        yield lineno, [c.strip() for c in row]


def load_pairwise_csv(text: str) -> list[PairwiseTarget]:
    out = []
    for lineno, (ra, aa, rb, ab, target) in _read_rows(text, PAIRWISE_HEADER):
        try:
            out.append(PairwiseTarget(AtomKey(int(ra), aa), AtomKey(int(rb), ab), float(target)))
        except ValueError as exc:
            raise MalformedRecord(str(exc), lineno) from None
    return out


def format_pairwise_csv(targets: Sequence[PairwiseTarget]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PAIRWISE_HEADER)
    for t in targets:
        w.writerow([t.a.residue_index, t.a.atom_name, t.b.residue_index, t.b.atom_name, repr(t.target)])
    return buf.getvalue()


def load_restraint_csv(text: str) -> list[RestraintGroup]:
    order: list[int] = []
    members: dict[int, list[Restraint]] = {}
    for lineno, (gid, ra, aa, rb, ab, lo, up) in _read_rows(text, RESTRAINT_HEADER):
        try:
            g = int(gid)
            lower = _float_or_none(lo)
            r = Restraint(AtomKey(int(ra), aa), AtomKey(int(rb), ab), 0.0 if lower is None else lower, float(up))
        except ValueError as exc:
            raise MalformedRecord(str(exc), lineno) from None
        if g not in members:
            order.append(g)
            members[g] = []
        members[g].append(r)
    return [RestraintGroup(g, tuple(members[g])) for g in order]


def format_restraint_csv(groups: Sequence[RestraintGroup]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESTRAINT_HEADER)
    for g in groups:
        for m in g.members:
            w.writerow([g.group_id, m.a.residue_index, m.a.atom_name, m.b.residue_index,
                        m.b.atom_name, repr(m.lower), repr(m.upper)])
    return buf.getvalue()


def load_shift_csv(text: str) -> ShiftTable:
    return parse_shift_rows(text)


def format_shift_table(table: ShiftTable) -> str:
    return format_shift_csv(table)


def load_restraints(path, residue_map: Mapping[int, int] | None = None) -> list[RestraintGroup]:
    """Restraint groups from a ``.csv`` file or an NMR-STAR file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".csv":
        return load_restraint_csv(text)
    return extract_noe_groups(parse_star(text), residue_map)
