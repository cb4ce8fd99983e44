"""SMILES parsing, graph featurization and the fixed constituent registry.

The parser covers a bounded SMILES subset: organic-subset atoms, bracket
atoms with charge and hydrogen count, ``-``/``=``/``#`` bonds, branches,
ring closures (digits and ``%nn``) and dot-separated fragments. Aromatic
lowercase atoms, stereo markers, isotopes and atom classes are rejected.
Hydrogens stay implicit.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import SmilesError

ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs
Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl
Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh
Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og
""".split())

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
BOND_ORDERS = {"-": 1, "=": 2, "#": 3}

FEATURE_ELEMENTS = ("B", "C", "N", "O", "F", "S", "Cl", "I", "Li")
N_FEATURES = len(FEATURE_ELEMENTS) + 1 + 5


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    explicit_h: int = 0
    in_ring: bool = False
    degree: int = 0


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: int


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    fragment_count: int

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def ring_count(self) -> int:
        return len(self.bonds) - len(self.atoms) + self.fragment_count

    def permuted(self, perm) -> "MolecularGraph":
        """Relabel atoms so that new atom ``k`` is old atom ``perm[k]``."""
        inv = {old: new for new, old in enumerate(perm)}
        atoms = tuple(self.atoms[old] for old in perm)
        bonds = tuple(Bond(inv[b.i], inv[b.j], b.order) for b in self.bonds)
        return MolecularGraph(atoms, bonds, self.fragment_count)


@dataclass(frozen=True)
class FeaturizedGraph:
    nodes: np.ndarray
    adjacency: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.nodes.shape[0]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[dict] = []
        self.bonds: dict[frozenset, int] = {}

    def fail(self, reason: str, offset: int | None = None):
        raise SmilesError(self.text, self.pos if offset is None else offset, reason)

    def add_bond(self, i: int, j: int, order: int, offset: int):
        if i == j:
            self.fail("ring closure bonds an atom to itself", offset)
        key = frozenset((i, j))
        if key in self.bonds:
            self.fail(f"duplicate bond between atoms {i} and {j}", offset)
        self.bonds[key] = order

    def bracket_atom(self) -> dict:
        start = self.pos
        end = self.text.find("]", start)
        if end < 0:
            self.fail("unbalanced '[': no closing ']'", start)
        body = self.text[start + 1:end]
        k = 0
        if k < len(body) and body[k].isdigit():
            self.fail("isotopes are not supported", start + 1)
        if k < len(body) and body[k].islower():
            self.fail(f"aromatic atom '{body[k]}' is not supported", start + 1)
        if k >= len(body) or not body[k].isupper():
            self.fail("bracket atom lacks an element symbol", start + 1)
        symbol = body[k]
        k += 1
        if k < len(body) and body[k].islower():
            symbol += body[k]
            k += 1
        if symbol not in ELEMENTS:
            self.fail(f"unknown element symbol {symbol!r}", start + 1)
        if k < len(body) and body[k] == "@":
            self.fail("stereochemistry markers are not supported", start + 1 + k)
        h = 0
        if k < len(body) and body[k] == "H":
            k += 1
            h = 1
            if k < len(body) and body[k].isdigit():
                h = int(body[k])
                k += 1
        charge = 0
        if k < len(body) and body[k] in "+-":
            sign = 1 if body[k] == "+" else -1
            ch = body[k]
            k += 1
            if k < len(body) and body[k].isdigit():
                j = k
                while k < len(body) and body[k].isdigit():
                    k += 1
                charge = sign * int(body[j:k])
            else:
                n = 1
                while k < len(body) and body[k] == ch:
                    n += 1
                    k += 1
                charge = sign * n
        if k < len(body):
            c = body[k]
            reason = {
                ":": "atom classes are not supported",
                "@": "stereochemistry markers are not supported",
            }.get(c, f"unexpected {c!r} inside bracket atom")
            self.fail(reason, start + 1 + k)
        self.pos = end + 1
        return {"element": symbol, "charge": charge, "h": h}

    def parse(self) -> MolecularGraph:
        text = self.text
        if not text:
            raise SmilesError(text, 0, "empty SMILES string")
        for k, c in enumerate(text):
            if ord(c) > 127:
                raise SmilesError(text, k, "non-ASCII character")
        prev: int | None = None
        pending: tuple[int, int] | None = None  # (order, offset)
        branches: list[tuple[int, int]] = []  # (atom, offset of '(')
        rings: dict[int, tuple[int, int | None, int]] = {}
        while self.pos < len(text):
            c = text[self.pos]
            start = self.pos
            if c == "(":
                if prev is None:
                    self.fail("branch opened without a preceding atom")
                if pending is not None:
                    self.fail("bond symbol before '('")
                branches.append((prev, start))
                self.pos += 1
            elif c == ")":
                if not branches:
                    self.fail("unbalanced ')'")
                if pending is not None:
                    self.fail("bond symbol before ')'")
                prev = branches.pop()[0]
                self.pos += 1
            elif c in BOND_ORDERS:
                if prev is None:
                    self.fail("bond without a preceding atom")
                if pending is not None:
                    self.fail("two consecutive bond symbols")
                pending = (BOND_ORDERS[c], start)
                self.pos += 1
            elif c == ".":
                if pending is not None:
                    self.fail("bond symbol before '.'")
                if branches:
                    self.fail("'.' inside a branch is not supported")
                if prev is None:
                    self.fail("empty fragment")
                prev = None
                self.pos += 1
            elif c.isdigit() or c == "%":
                if prev is None:
                    self.fail("ring closure without a preceding atom")
                if c == "%":
                    digits = text[self.pos + 1:self.pos + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        self.fail("'%' must be followed by two digits")
                    num = int(digits)
                    self.pos += 3
                else:
                    num = int(c)
                    self.pos += 1
                order = pending[0] if pending else None
                pending = None
                if num in rings:
                    other, order0, _ = rings.pop(num)
                    if order is not None and order0 is not None and order != order0:
                        self.fail(f"ring bond {num} has conflicting bond orders", start)
                    self.add_bond(other, prev, order or order0 or 1, start)
                else:
                    rings[num] = (prev, order, start)
            elif c in "/\\@":
                self.fail("stereochemistry markers are not supported")
            elif c == ":":
                self.fail("aromatic bonds are not supported")
            elif c == "[" or c.isupper() or c.islower():
                if c == "[":
                    atom = self.bracket_atom()
                elif c.isupper():
                    symbol = next((s for s in ORGANIC_SUBSET if text.startswith(s, self.pos)), None)
                    if symbol is None:
                        two = text[self.pos:self.pos + 2]
                        name = two if len(two) == 2 and two[1].islower() else c
                        if name in ELEMENTS:
                            self.fail(f"element {name!r} must be written in brackets")
                        self.fail(f"unknown element symbol {name!r}")
                    atom = {"element": symbol, "charge": 0, "h": 0}
                    self.pos += len(symbol)
                else:
                    if c in "bcnops":
                        self.fail(f"aromatic atom '{c}' is not supported")
                    self.fail(f"unknown element symbol {c!r}")
                idx = len(self.atoms)
                self.atoms.append(atom)
                if prev is not None:
                    self.add_bond(prev, idx, pending[0] if pending else 1, start)
                pending = None
                prev = idx
            elif c == "]":
                self.fail("unbalanced ']'")
            else:
                self.fail(f"unsupported character {c!r}")
        if pending is not None:
            self.fail("dangling bond at end of input", pending[1])
        if branches:
            self.fail("unbalanced '(': branch never closed", branches[-1][1])
        if rings:
            num, (_, _, off) = next(iter(rings.items()))
            self.fail(f"ring bond {num} never closed", off)
        if prev is None:
            self.fail("empty fragment")
        return self.build()

    def build(self) -> MolecularGraph:
        n = len(self.atoms)
        bonds = tuple(sorted(
            (Bond(*sorted(key), order) for key, order in self.bonds.items()),
            key=lambda b: (b.i, b.j),
        ))
        nbrs: list[list[int]] = [[] for _ in range(n)]
        for b in bonds:
            nbrs[b.i].append(b.j)
            nbrs[b.j].append(b.i)
        ring_atoms = set()
        for b in bonds:
            if _connected_without(nbrs, b.i, b.j):
                ring_atoms.update((b.i, b.j))
        atoms = tuple(
            Atom(a["element"], a["charge"], a["h"], k in ring_atoms, len(nbrs[k]))
            for k, a in enumerate(self.atoms)
        )
        return MolecularGraph(atoms, bonds, _count_components(nbrs))


def _connected_without(nbrs, i: int, j: int) -> bool:
    """Whether i reaches j once the direct i-j edge is removed."""
    seen = {i}
    queue = deque([i])
    while queue:
        u = queue.popleft()
        for w in nbrs[u]:
            if u == i and w == j:
                continue
            if w == j:
                return True
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return False


def _count_components(nbrs) -> int:
    seen: set[int] = set()
    count = 0
    for s in range(len(nbrs)):
        if s in seen:
            continue
        count += 1
        seen.add(s)
        stack = [s]
        while stack:
            u = stack.pop()
            for w in nbrs[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
    return count


def parse_smiles(text: str) -> MolecularGraph:
    """Parse ``text`` into a :class:`MolecularGraph`.

    Raises :class:`SmilesError` carrying the offending byte offset.
    """
    return _Parser(text).parse()


def featurize(graph: MolecularGraph) -> FeaturizedGraph:
    """Node features and symmetric-normalized adjacency ``D^-1/2 (A+I) D^-1/2``."""
    n = graph.n_atoms
    nodes = np.zeros((n, N_FEATURES))
    order_sum = np.zeros(n)
    A = np.eye(n)
    for b in graph.bonds:
        A[b.i, b.j] = A[b.j, b.i] = 1.0
        order_sum[b.i] += b.order
        order_sum[b.j] += b.order
    k0 = len(FEATURE_ELEMENTS) + 1
    for k, atom in enumerate(graph.atoms):
        try:
            slot = FEATURE_ELEMENTS.index(atom.element)
        except ValueError:
            slot = len(FEATURE_ELEMENTS)
        nodes[k, slot] = 1.0
        nodes[k, k0] = atom.charge
        nodes[k, k0 + 1] = atom.degree / 4
        nodes[k, k0 + 2] = float(atom.in_ring)
        nodes[k, k0 + 3] = atom.explicit_h / 4
        nodes[k, k0 + 4] = order_sum[k] / 4
    d = 1.0 / np.sqrt(A.sum(axis=1))
    return FeaturizedGraph(nodes, A * d[:, None] * d[None, :])


@dataclass(frozen=True)
class Constituent:
    name: str
    role: str
    smiles: str

    @property
    def graph(self) -> MolecularGraph:
        return _parse_cached(self.smiles)


@functools.lru_cache(maxsize=None)
def _parse_cached(smiles: str) -> MolecularGraph:
    return parse_smiles(smiles)


_REGISTRY = (
    Constituent("LiCl", "salt", "[Li+].[Cl-]"),
    Constituent("LiNO3", "salt", "[Li+].[O-][N+](=O)[O-]"),
    Constituent("LiBOB", "salt", "[Li+].[B-]12(OC(=O)C(=O)O1)OC(=O)C(=O)O2"),
    Constituent("LiTFSI", "salt", "[Li+].[N-](S(=O)(=O)C(F)(F)F)S(=O)(=O)C(F)(F)F"),
    Constituent("DOL", "solvent", "C1COCO1"),
    Constituent("DMI", "solvent", "CN1CCN(C)C1=O"),
    Constituent("EC", "solvent", "O=C1OCCO1"),
    Constituent("G4", "solvent", "COCCOCCOCCOCCOC"),
)

CONSTITUENT_NAMES = tuple(c.name for c in _REGISTRY)
SALT_INDICES = tuple(k for k, c in enumerate(_REGISTRY) if c.role == "salt")


def canonical_constituents() -> list[Constituent]:
    """The eight electrolyte constituents in fixed registry order."""
    return list(_REGISTRY)
