"""SMILES parsing, atom featurization, and a GIN molecule encoder.

The parser covers a deliberately small grammar: organic-subset atoms
(B, C, N, O, P, S, F, Cl, Br, I), bracket atoms with an optional hydrogen
count and formal charge, explicit bonds ``- = # :``, parenthesised branches,
ring closures (single digits and ``%nn``), and lowercase aromatic atoms.
Stereochemistry marks, isotopes, and anything outside the supported element
set raise :class:`ParseError` so that dataset builders can drop the record.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ParseError, ShapeError
from .layers import init_linear

ORGANIC_ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_SYMBOLS = frozenset("bcnops")
AROMATIC_BOND = "aromatic"
BOND_ORDERS = (1, 2, 3, AROMATIC_BOND)
_BOND_INDEX = {order: i for i, order in enumerate(BOND_ORDERS)}
_BOND_CHARS = {"-": 1, "=": 2, "#": 3, ":": AROMATIC_BOND}

# one-hot over the supported elements, an "other" bucket, formal charge, aromatic flag
ATOM_FEATURE_DIM = len(ORGANIC_ELEMENTS) + 1 + 2


@dataclass(frozen=True)
class AtomRecord:
    element: str
    charge: int = 0
    aromatic: bool = False


@dataclass(frozen=True)
class MolecularGraph:
    """Attributed 2D molecular graph in SMILES first-appearance atom order."""

    atoms: tuple[AtomRecord, ...]
    bonds: tuple[tuple[int, int, object], ...] = ()
    source_smiles: str = ""

    def __post_init__(self):
        if len(self.atoms) < 1:
            raise ValueError("a molecular graph needs at least one atom")
        seen_pairs = set()
        for i, j, order in self.bonds:
            if not (0 <= i < len(self.atoms)) or not (0 <= j < len(self.atoms)):
                raise ValueError(f"bond ({i}, {j}) references a missing atom")
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            if order not in _BOND_INDEX:
                raise ValueError(f"unsupported bond order {order!r}")
            pair = (min(i, j), max(i, j))
            if pair in seen_pairs:
                raise ValueError(f"duplicate bond between atoms {pair[0]} and {pair[1]}")
            seen_pairs.add(pair)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)


def _parse_bracket_atom(smiles: str, start: int) -> tuple[AtomRecord, int]:
    """Parse a ``[...]`` atom starting at ``start`` (the ``[``). Returns (atom, end index past ``]``)."""
    end = smiles.find("]", start + 1)
    if end < 0:
        raise ParseError(f"unterminated bracket atom at position {start}: {smiles!r}")
    body = smiles[start + 1 : end]
    pos = 0
    if not body:
        raise ParseError(f"empty bracket atom at position {start}: {smiles!r}")
    if body[0].isdigit():
        raise ParseError(f"isotope specifications are not supported (position {start}): {smiles!r}")

    element = None
    aromatic = False
    for symbol in ("Cl", "Br"):
        if body.startswith(symbol):
            element, pos = symbol, len(symbol)
            break
    if element is None:
        ch = body[0]
        if ch in "BCNOPSFI":
            element, pos = ch, 1
        elif ch in AROMATIC_SYMBOLS:
            element, aromatic, pos = ch.upper(), True, 1
        elif ch == "@":
            raise ParseError(f"stereochemistry is not supported (position {start}): {smiles!r}")
        else:
            raise ParseError(f"unknown element in bracket atom at position {start}: {body!r}")

    # optional hydrogen count, consumed but not stored (the graph is heavy-atom only)
    if pos < len(body) and body[pos] == "H":
        pos += 1
        while pos < len(body) and body[pos].isdigit():
            pos += 1

    charge = 0
    if pos < len(body) and body[pos] in "+-":
        sign = 1 if body[pos] == "+" else -1
        sign_char = body[pos]
        pos += 1
        if pos < len(body) and body[pos].isdigit():
            digits = ""
            while pos < len(body) and body[pos].isdigit():
                digits += body[pos]
                pos += 1
            charge = sign * int(digits)
        else:
            magnitude = 1
            while pos < len(body) and body[pos] == sign_char:
                magnitude += 1
                pos += 1
            charge = sign * magnitude

    if pos != len(body):
        raise ParseError(f"unexpected token {body[pos]!r} in bracket atom at position {start}: {smiles!r}")
    return AtomRecord(element=element, charge=charge, aromatic=aromatic), end + 1


def parse_smiles(smiles: str) -> MolecularGraph:
    """Parse a SMILES string into a :class:`MolecularGraph`.

    Atom order is first-appearance order in the string, which is also the
    order used when atoms are injected as prompt tokens downstream.
    """
    if not smiles:
        raise ParseError("empty SMILES string")

    atoms: list[AtomRecord] = []
    bonds: list[tuple[int, int, object]] = []
    bond_pairs: set[tuple[int, int]] = set()
    prev: int | None = None
    pending_bond: object | None = None
    branch_stack: list[int] = []
    open_rings: dict[str, tuple[int, object | None]] = {}

    def add_bond(i: int, j: int, order: object | None, pos: int) -> None:
        if i == j:
            raise ParseError(f"ring closure bonds atom {i} to itself (position {pos}): {smiles!r}")
        if order is None:
            both_aromatic = atoms[i].aromatic and atoms[j].aromatic
            order = AROMATIC_BOND if both_aromatic else 1
        pair = (min(i, j), max(i, j))
        if pair in bond_pairs:
            raise ParseError(f"duplicate bond between atoms {pair[0]} and {pair[1]} (position {pos}): {smiles!r}")
        bond_pairs.add(pair)
        bonds.append((i, j, order))

    def add_atom(atom: AtomRecord, pos: int) -> None:
        nonlocal prev, pending_bond
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending_bond, pos)
        elif pending_bond is not None:
            raise ParseError(f"bond with no preceding atom (position {pos}): {smiles!r}")
        pending_bond = None
        prev = idx

    def close_or_open_ring(label: str, pos: int) -> None:
        nonlocal pending_bond
        if prev is None:
            raise ParseError(f"ring bond with no preceding atom (position {pos}): {smiles!r}")
        if label in open_rings:
            partner, open_order = open_rings.pop(label)
            if open_order is not None and pending_bond is not None and open_order != pending_bond:
                raise ParseError(f"conflicting bond orders on ring closure {label} (position {pos}): {smiles!r}")
            order = pending_bond if pending_bond is not None else open_order
            add_bond(partner, prev, order, pos)
        else:
            open_rings[label] = (prev, pending_bond)
        pending_bond = None

    i = 0
    n = len(smiles)
    while i < n:
        ch = smiles[i]
        if smiles.startswith(("Cl", "Br"), i):
            add_atom(AtomRecord(element=smiles[i : i + 2]), i)
            i += 2
        elif ch in "BCNOPSFI":
            add_atom(AtomRecord(element=ch), i)
            i += 1
        elif ch in AROMATIC_SYMBOLS:
            add_atom(AtomRecord(element=ch.upper(), aromatic=True), i)
            i += 1
        elif ch == "[":
            atom, i = _parse_bracket_atom(smiles, i)
            add_atom(atom, i)
        elif ch in _BOND_CHARS:
            if pending_bond is not None:
                raise ParseError(f"two consecutive bond symbols (position {i}): {smiles!r}")
            pending_bond = _BOND_CHARS[ch]
            i += 1
        elif ch == "(":
            if prev is None:
                raise ParseError(f"branch with no preceding atom (position {i}): {smiles!r}")
            if pending_bond is not None:
                raise ParseError(f"bond symbol before branch open (position {i}): {smiles!r}")
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise ParseError(f"unbalanced branch close (position {i}): {smiles!r}")
            if pending_bond is not None:
                raise ParseError(f"dangling bond before branch close (position {i}): {smiles!r}")
            prev = branch_stack.pop()
            i += 1
        elif ch.isdigit():
            close_or_open_ring(ch, i)
            i += 1
        elif ch == "%":
            if i + 2 >= n or not (smiles[i + 1].isdigit() and smiles[i + 2].isdigit()):
                raise ParseError(f"malformed %nn ring label (position {i}): {smiles!r}")
            close_or_open_ring(smiles[i + 1 : i + 3], i)
            i += 3
        elif ch in "@/\\":
            raise ParseError(f"stereochemistry is not supported (position {i}): {smiles!r}")
        else:
            raise ParseError(f"unknown token {ch!r} (position {i}): {smiles!r}")

    if branch_stack:
        raise ParseError(f"unbalanced branch: {len(branch_stack)} unclosed '(' in {smiles!r}")
    if open_rings:
        labels = ", ".join(sorted(open_rings))
        raise ParseError(f"dangling ring bond(s) {labels} in {smiles!r}")
    if pending_bond is not None:
        raise ParseError(f"dangling bond symbol at end of {smiles!r}")
    if not atoms:
        raise ParseError(f"no atoms in {smiles!r}")

    return MolecularGraph(atoms=tuple(atoms), bonds=tuple(bonds), source_smiles=smiles)


def atom_features(graph: MolecularGraph, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Initial per-atom features: element one-hot (+"other"), formal charge, aromatic flag."""
    out = torch.zeros(graph.num_atoms, ATOM_FEATURE_DIM, dtype=dtype)
    element_index = {el: k for k, el in enumerate(ORGANIC_ELEMENTS)}
    for row, atom in enumerate(graph.atoms):
        out[row, element_index.get(atom.element, len(ORGANIC_ELEMENTS))] = 1.0
        out[row, len(ORGANIC_ELEMENTS) + 1] = float(atom.charge)
        out[row, len(ORGANIC_ELEMENTS) + 2] = 1.0 if atom.aromatic else 0.0
    return out


class GINLayer(nn.Module):
    """One message-passing layer: h_v <- MLP((1 + eps) * h_v + sum_u (h_u + e_uv))."""

    def __init__(self, dim: int, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.eps = nn.Parameter(torch.zeros((), dtype=dtype))
        self.bond_embedding = nn.Embedding(len(BOND_ORDERS), dim, dtype=dtype)
        nn.init.trunc_normal_(self.bond_embedding.weight, std=0.02)
        self.fc1 = nn.Linear(dim, dim, dtype=dtype)
        self.fc2 = nn.Linear(dim, dim, dtype=dtype)
        init_linear(self.fc1)
        init_linear(self.fc2)

    def forward(self, h: torch.Tensor, src: torch.Tensor, dst: torch.Tensor,
                bond_type: torch.Tensor) -> torch.Tensor:
        agg = torch.zeros_like(h)
        if src.numel():
            messages = h[src] + self.bond_embedding(bond_type)
            agg = agg.index_add(0, dst, messages)
        x = (1.0 + self.eps) * h + agg
        return self.fc2(torch.relu(self.fc1(x)))


class GINEncoder(nn.Module):
    """Stack of GIN layers mapping a molecular graph to per-atom features.

    A linear projection lifts the raw atom features to the hidden width before
    the first message-passing layer; each layer owns a 4-row bond-order
    embedding table (single/double/triple/aromatic).
    """

    def __init__(self, hidden_dim: int = 64, num_layers: int = 5,
                 feature_dim: int = ATOM_FEATURE_DIM, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.dtype = dtype
        self.input_proj = nn.Linear(feature_dim, hidden_dim, dtype=dtype)
        init_linear(self.input_proj)
        self.layers = nn.ModuleList(GINLayer(hidden_dim, dtype=dtype) for _ in range(num_layers))

    def forward(self, graph: MolecularGraph) -> torch.Tensor:
        x = atom_features(graph, dtype=self.dtype)
        if x.shape[1] != self.input_proj.in_features:
            raise ShapeError(
                f"atom feature dim {x.shape[1]} does not match encoder input dim "
                f"{self.input_proj.in_features}"
            )
        # bonds are undirected: emit one message per direction
        src_list: list[int] = []
        dst_list: list[int] = []
        type_list: list[int] = []
        for i, j, order in graph.bonds:
            k = _BOND_INDEX[order]
            src_list.extend((i, j))
            dst_list.extend((j, i))
            type_list.extend((k, k))
        src = torch.tensor(src_list, dtype=torch.long)
        dst = torch.tensor(dst_list, dtype=torch.long)
        bond_type = torch.tensor(type_list, dtype=torch.long)

        h = self.input_proj(x)
        for layer in self.layers:
            h = layer(h, src, dst, bond_type)
        return h
