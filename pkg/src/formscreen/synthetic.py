"""Synthetic ground truth for exercising the pipeline without lab data.

``SyntheticOracle`` maps a design to a capacity with fixed, documented
parameters; ``make_pretrain_corpus`` emits random molecules whose labels are
plain graph statistics standing in for HOMO, LUMO and dipole moment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .candidates import sample_compositions
from .chem import CONSTITUENT_NAMES, MolecularGraph, parse_smiles
from .formulation import CellRecord, FormulationDesign, Separator


@dataclass(frozen=True)
class SyntheticOracle:
    """Capacity in mAh/g as a function of a formulation design.

    f = base[separator] + sum_k coef_k * x_k + interaction * x_LiCl * x_DMI
        - cliff_slope * max(0, loading - cliff_loading)

    with ``x_k`` the mol fraction of constituent ``k``. The linear
    coefficients sum to zero, so on the simplex each one's sign is the sign
    of its effect relative to an average constituent. Coefficients whose
    magnitude is at least ``detectability_floor`` are the ones a rank
    analysis of 93 noisy points is expected to recover (LiBOB and DOL).
    Over designs with at most 50 mol% salt and 30-60 wt% loading the
    noiseless value stays within 0-380 mAh/g.
    """

    coefficients: tuple[float, ...] = (40.0, 40.0, -200.0, -20.0, 160.0, -60.0, 20.0, 20.0)
    interaction: float = 300.0
    base_celgard: float = 190.0
    base_qma: float = 220.0
    cliff_loading: float = 45.0
    cliff_slope: float = 4.0
    sigma: float = 20.0
    detectability_floor: float = 100.0

    def __call__(self, design: FormulationDesign) -> float:
        return float(self.batch(np.array([design.mol]), np.array([design.loading]),
                                np.array([int(design.separator)]))[0])

    def batch(self, mol: np.ndarray, loading: np.ndarray, separator: np.ndarray) -> np.ndarray:
        x = np.asarray(mol, dtype=np.float64) / 100.0
        base = np.where(np.asarray(separator) == int(Separator.QMA), self.base_qma, self.base_celgard)
        linear = x @ np.array(self.coefficients)
        inter = self.interaction * x[:, 0] * x[:, 5]
        cliff = self.cliff_slope * np.maximum(0.0, np.asarray(loading, dtype=np.float64) - self.cliff_loading)
        return base + linear + inter - cliff

    def detectable(self) -> dict[str, int]:
        """Constituent name -> expected sign, for coefficients above the floor."""
        return {
            name: int(np.sign(c))
            for name, c in zip(CONSTITUENT_NAMES, self.coefficients)
            if abs(c) >= self.detectability_floor
        }


def make_dataset(oracle: SyntheticOracle | None = None, n: int = 93, seed: int = 0,
                 loading_range: tuple[float, float] = (30.0, 60.0), salt_cap: float = 50.0) -> list[CellRecord]:
    """``n`` cell records with capacity = oracle + N(0, sigma), floored at 0.

    Compositions are drawn like the candidate pool; loadings uniformly in
    ``loading_range`` rounded to 0.1 wt%; separators with equal odds.
    """
    oracle = oracle or SyntheticOracle()
    rng = np.random.default_rng(seed)
    comps = sample_compositions(n, rng, salt_cap=salt_cap)
    loadings = np.round(rng.uniform(*loading_range, size=n), 1)
    seps = rng.integers(1, 3, size=n)
    truth = oracle.batch(np.array(comps), loadings, seps)
    noise = rng.normal(0.0, oracle.sigma, size=n) if oracle.sigma > 0 else np.zeros(n)
    caps = np.maximum(truth + noise, 0.0)
    width = len(str(n))
    return [
        CellRecord(FormulationDesign(comps[k], loadings[k], Separator(int(seps[k]))),
                   float(caps[k]), f"S{k + 1:0{width}d}")
        for k in range(n)
    ]


# random molecules for encoder pretraining

_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1}
_CHAIN_ELEMENTS = ("C", "C", "C", "C", "C", "N", "O", "O", "S", "F", "Cl")
_RING_ELEMENTS = ("C", "C", "C", "N", "O")
_PREFIXES = ("", "", "", "", "[Li+].", "[Li+].[Cl-].")
RING_SIZE = 5


def _random_graph(rng: np.random.Generator):
    """Elements and bond dict of one connected molecule (at most one 5-ring)."""
    n = int(rng.integers(3, 13))
    ring = n >= RING_SIZE and rng.random() < 0.4
    elems: list[str] = []
    bonds: dict[tuple[int, int], int] = {}
    used = []

    def free(i):
        return _VALENCE[elems[i]] - used[i]

    if ring:
        for _ in range(RING_SIZE):
            elems.append(str(rng.choice(_RING_ELEMENTS)))
            used.append(0)
        for k in range(RING_SIZE):
            a, b = k, (k + 1) % RING_SIZE
            bonds[(min(a, b), max(a, b))] = 1
            used[a] += 1
            used[b] += 1
    else:
        elems.append("C")
        used.append(0)
    while len(elems) < n:
        hosts = [i for i in range(len(elems)) if free(i) >= 1]
        if not hosts:
            break
        host = int(rng.choice(hosts))
        el = str(rng.choice(_CHAIN_ELEMENTS))
        elems.append(el)
        used.append(0)
        new = len(elems) - 1
        order = 1
        if el == "O" and elems[host] == "C" and free(host) >= 2 and rng.random() < 0.3:
            order = 2
        bonds[(host, new)] = order
        used[host] += order
        used[new] += order
    return elems, bonds


def _to_smiles(elems: list[str], bonds: dict[tuple[int, int], int]) -> str:
    """DFS writer: spanning-tree edges inline, remaining edges as ring closures."""
    nbrs: dict[int, list[int]] = {i: [] for i in range(len(elems))}
    for (a, b) in bonds:
        nbrs[a].append(b)
        nbrs[b].append(a)
    for v in nbrs.values():
        v.sort()
    order_of = {}
    parent = {0: None}
    tree_children: dict[int, list[int]] = {i: [] for i in nbrs}
    stack = [0]
    visited = []
    while stack:
        u = stack.pop()
        if u in order_of:
            continue
        order_of[u] = len(visited)
        visited.append(u)
        if parent[u] is not None:
            tree_children[parent[u]].append(u)
        for w in reversed(nbrs[u]):
            if w not in order_of:
                parent[w] = u
                stack.append(w)
    tree = {(min(u, p), max(u, p)) for u, p in parent.items() if p is not None}
    closures: dict[int, list[tuple[int, int]]] = {i: [] for i in nbrs}
    label = 1
    for (a, b) in sorted(bonds):
        if (a, b) in tree:
            continue
        closures[a].append((label, bonds[(a, b)]))
        closures[b].append((label, 0))
        label += 1
    sym = {1: "", 2: "=", 3: "#"}

    def emit(u: int) -> str:
        s = elems[u]
        for lab, order in closures[u]:
            s += (sym[order] if order else "") + (str(lab) if lab < 10 else f"%{lab:02d}")
        kids = tree_children[u]
        for k, w in enumerate(kids):
            part = sym[bonds[(min(u, w), max(u, w))]] + emit(w)
            s += part if k == len(kids) - 1 else f"({part})"
        return s

    return emit(0)


def corpus_labels(graph: MolecularGraph) -> np.ndarray:
    """(mean degree, atom count / 10, ring count) of a parsed graph."""
    n = graph.n_atoms
    return np.array([2.0 * len(graph.bonds) / n, n / 10.0, float(graph.ring_count)])


def make_pretrain_corpus(n_molecules: int = 50, seed: int = 0) -> list[tuple[str, np.ndarray]]:
    """Random molecules within the parser subset, labelled by graph statistics."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_molecules):
        elems, bonds = _random_graph(rng)
        smiles = str(rng.choice(_PREFIXES)) + _to_smiles(elems, bonds)
        out.append((smiles, corpus_labels(parse_smiles(smiles))))
    return out
