from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genguide.errors import EmptyStructure, MalformedRecord, MissingAtom
from genguide.structure import AtomKey, Structure, distance, parse_pdb, write_pdb


def atom_line(serial, name, res, seq, xyz, altloc=" ", chain="A"):
    padded = f" {name:<3s}" if len(name) < 4 else name
    return "ATOM  %5d %s%s%3s %s%4d    %8.3f%8.3f%8.3f  1.00  0.00           C" % (
        serial, padded, altloc, res, chain, seq, *xyz)


def test_minimal_three_ca_file():
    text = "\n".join(atom_line(i, "CA", "ALA", i, (i, 0, 0)) for i in (1, 2, 3))
    s = parse_pdb(text)
    assert s.n_residues == 3
    assert len(s.atoms) == 3


def test_altloc_a_retained_only():
    lines = [
        atom_line(1, "CA", "ALA", 1, (1.0, 0, 0), altloc="A"),
        atom_line(2, "CA", "ALA", 1, (9.0, 0, 0), altloc="B"),
    ]
    s = parse_pdb("\n".join(lines))
    assert len(s.atoms) == 1
    assert s.position(AtomKey(1, "CA"))[0] == 1.0


def test_residues_renumbered_and_author_map_kept():
    text = "\n".join(atom_line(i, "CA", "GLY", seq, (i, 0, 0)) for i, seq in enumerate((17, 18, 20), 1))
    s = parse_pdb(text)
    assert [a.key.residue_index for a in s.atoms] == [1, 2, 3]
    assert s.author_to_internal == {17: 1, 18: 2, 20: 3}


def test_first_model_and_first_chain_only():
    lines = [
        "MODEL        1",
        atom_line(1, "CA", "ALA", 1, (0, 0, 0)),
        atom_line(2, "CA", "ALA", 1, (5, 0, 0), chain="B"),
        "ENDMDL",
        "MODEL        2",
        atom_line(1, "CA", "ALA", 1, (7, 7, 7)),
        atom_line(2, "CA", "ALA", 2, (8, 8, 8)),
        "ENDMDL",
    ]
    s = parse_pdb("\n".join(lines))
    assert s.n_residues == 1
    assert s.chain_id == "A"


def test_hetatm_ignored():
    lines = [atom_line(1, "CA", "ALA", 1, (0, 0, 0)), "HETATM    2  O   HOH A 101       1.000   1.000   1.000  1.00  0.00           O"]
    assert len(parse_pdb("\n".join(lines)).atoms) == 1


def test_malformed_coordinate_reports_line():
    bad = atom_line(1, "CA", "ALA", 1, (0, 0, 0))
    bad = bad[:30] + "  abc.de" + bad[38:]
    with pytest.raises(MalformedRecord) as info:
        parse_pdb("REMARK first\n" + bad)
    assert info.value.line == 2


def test_empty_file():
    with pytest.raises(EmptyStructure):
        parse_pdb("REMARK nothing here\nEND\n")


def test_missing_ca_named():
    s = Structure.from_ca_trace(np.zeros((2, 3)) + [[0, 0, 0], [3.8, 0, 0]])
    short = Structure(s.chain_id, s.atoms[:1], 2)
    with pytest.raises(MissingAtom):
        short.ca_trace()


def test_single_atom_coordinate_columns():
    s = Structure.from_ca_trace([[1.0, 2.0, 3.0]])
    line = write_pdb(s).splitlines()[0]
    assert "1.000   2.000   3.000" in line
    assert line[30:54] == "   1.000   2.000   3.000"
    assert line[12:16] == " CA "


def test_golden_file_is_byte_identical(data_dir):
    golden = (data_dir / "golden_3res.pdb").read_text()
    s = parse_pdb(golden)
    assert write_pdb(s) == golden


def test_distance_textbook_cases():
    s = Structure.from_ca_trace([[0, 0, 0], [3, 4, 0]])
    assert distance(s, AtomKey(1, "CA"), AtomKey(2, "CA")) == 5.0
    assert distance(s, AtomKey(1, "CA"), AtomKey(1, "CA")) == 0.0


def test_distance_on_golden_pair_matches_hand_computation(data_dir):
    s = parse_pdb((data_dir / "golden_3res.pdb").read_text())
    # CA(1) at origin, CB(2) at (2.146, 3.682, 1.227), computed by hand.
    expected = math.sqrt(2.146**2 + 3.682**2 + 1.227**2)
    assert distance(s, AtomKey(1, "CA"), AtomKey(2, "CB")) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(4.434858, abs=1e-6)


def test_distance_missing_atom():
    s = Structure.from_ca_trace([[0, 0, 0]])
    with pytest.raises(MissingAtom):
        distance(s, AtomKey(1, "CA"), AtomKey(1, "CB"))


coords = st.lists(
    st.tuples(*[st.floats(-999.0, 999.0, allow_nan=False) for _ in range(3)]),
    min_size=1,
    max_size=12,
)


@settings(max_examples=60, deadline=None)
@given(coords)
def test_write_parse_round_trip(points):
    s = Structure.from_ca_trace(points, ["LEU"] * len(points))
    back = parse_pdb(write_pdb(s))
    assert [a.key for a in back.atoms] == [a.key for a in s.atoms]
    assert back.residue_types == s.residue_types
    assert np.max(np.abs(back.coordinates - s.coordinates)) <= 5e-4 + 1e-9
