"""Molecule parsing and graph-topology features.

Reads the SDF/MOL V2000 subset for ligands and the fixed-column PDB subset
for pockets, drops hydrogens, and computes shortest-path distances plus
mean bond-type one-hots along shortest paths. Pocket bonds are inferred by
covalent distance since PDB records carry no bond table.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

ELEMENTS = ["C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Se"]
UNK = len(ELEMENTS)
VOCAB_SIZE = len(ELEMENTS) + 1
_ELEMENT_INDEX = {e.upper(): i for i, e in enumerate(ELEMENTS)}

BOND_TYPES = ["single", "double", "triple", "aromatic"]
N_BOND_TYPES = len(BOND_TYPES)
_MOL_BOND_CODE = {1: "single", 2: "double", 3: "triple", 4: "aromatic"}
_BOND_CODE_OF = {t: c for c, t in _MOL_BOND_CODE.items()}

UNREACHABLE = -1
SPD_MAX = 15

# Heavy-atom pairs closer than this are treated as covalently bonded when
# inferring pocket connectivity.
COVALENT_CUTOFF = 1.9

WATER_RESIDUES = {"HOH", "WAT", "DOD"}


class ParseError(ValueError):
    """Malformed molecule input; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyPocketError(ValueError):
    """No pocket atom found within the selection radius."""


def element_index(symbol: str) -> int:
    return _ELEMENT_INDEX.get(symbol.strip().upper(), UNK)


@dataclass
class MoleculeGraph:
    """Atoms, bonds and coordinates for a ligand or pocket."""

    atom_types: np.ndarray          # (N,) int element-vocabulary indices
    coords: np.ndarray              # (N, 3) float Angstrom
    bonds: list                     # [(i, j, bond_type)]
    is_pocket: bool = False
    name: str = ""
    elements: list = field(default_factory=list)  # symbols, for writers

    def __post_init__(self):
        self.atom_types = np.asarray(self.atom_types, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        self.validate()

    @property
    def n_atoms(self) -> int:
        return len(self.atom_types)

    def validate(self):
        n = self.n_atoms
        if self.coords.shape != (n, 3):
            raise ValueError(f"coords shape {self.coords.shape} does not match {n} atoms")
        if not np.isfinite(self.coords).all():
            raise ValueError("non-finite coordinates")
        seen = set()
        for i, j, t in self.bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bond ({i},{j}) out of range for {n} atoms")
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            if t not in BOND_TYPES:
                raise ValueError(f"unknown bond type {t!r}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate bond {key}")
            seen.add(key)
        if not self.is_pocket and n > 1 and not self._connected():
            raise ValueError("ligand graph is not connected")

    def _connected(self) -> bool:
        adj = self.adjacency()
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n_atoms

    def adjacency(self) -> list:
        adj = [[] for _ in range(self.n_atoms)]
        for i, j, _ in self.bonds:
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(a) for a in adj]

    def bond_type_map(self) -> dict:
        out = {}
        for i, j, t in self.bonds:
            out[(i, j)] = t
            out[(j, i)] = t
        return out

    def with_coords(self, coords: np.ndarray) -> "MoleculeGraph":
        return MoleculeGraph(
            atom_types=self.atom_types.copy(),
            coords=np.asarray(coords, dtype=np.float64),
            bonds=list(self.bonds),
            is_pocket=self.is_pocket,
            name=self.name,
            elements=list(self.elements),
        )

    def element_symbols(self) -> list:
        if self.elements:
            return list(self.elements)
        return [ELEMENTS[t] if t < UNK else "X" for t in self.atom_types]


@dataclass
class PathFeatures:
    """Shortest-path distances and mean edge one-hots along one shortest path."""

    spd: np.ndarray             # (N, N) int, UNREACHABLE where disconnected
    edge_path_sum: np.ndarray   # (N, N, N_BOND_TYPES) float


# ---------------------------------------------------------------------------
# SDF / MOL V2000
# ---------------------------------------------------------------------------

def parse_mol_block(text: str, name: str = "") -> MoleculeGraph:
    """Parse one MOL V2000 block into a heavy-atom graph.

    Hydrogens are removed and bond indices remapped; elements outside the
    supported vocabulary raise with the offending line number.
    """
    lines = text.splitlines()
    if len(lines) < 4:
        raise ParseError("MOL block shorter than the 4 header lines", line=len(lines) or 1)
    counts = lines[3]
    try:
        n_atoms = int(counts[0:3])
        n_bonds = int(counts[3:6])
    except ValueError:
        raise ParseError(f"malformed counts line {counts!r}", line=4) from None
    if n_atoms < 1:
        raise ParseError("molecule has no atoms", line=4)
    if len(lines) < 4 + n_atoms + n_bonds:
        raise ParseError(
            f"block ends before {n_atoms} atom and {n_bonds} bond lines", line=len(lines)
        )

    symbols, coords = [], []
    for k in range(n_atoms):
        lineno = 5 + k
        parts = lines[4 + k].split()
        if len(parts) < 4:
            raise ParseError(f"atom line has {len(parts)} fields, expected >= 4", line=lineno)
        try:
            xyz = [float(parts[0]), float(parts[1]), float(parts[2])]
        except ValueError:
            raise ParseError(f"unparseable coordinates {parts[:3]}", line=lineno) from None
        sym = parts[3]
        if sym.upper() != "H" and sym.strip().upper() not in _ELEMENT_INDEX:
            raise ParseError(f"unsupported element {sym!r}", line=lineno)
        symbols.append(sym)
        coords.append(xyz)

    raw_bonds = []
    for k in range(n_bonds):
        lineno = 5 + n_atoms + k
        line = lines[4 + n_atoms + k]
        try:
            i = int(line[0:3]) - 1
            j = int(line[3:6]) - 1
            code = int(line[6:9])
        except (ValueError, IndexError):
            raise ParseError(f"malformed bond line {line!r}", line=lineno) from None
        if not (0 <= i < n_atoms and 0 <= j < n_atoms):
            raise ParseError(f"bond references atom {max(i, j) + 1} of {n_atoms}", line=lineno)
        if code not in _MOL_BOND_CODE:
            raise ParseError(f"unsupported bond type code {code}", line=lineno)
        raw_bonds.append((i, j, _MOL_BOND_CODE[code]))

    keep = [k for k, s in enumerate(symbols) if s.upper() != "H"]
    remap = {old: new for new, old in enumerate(keep)}
    bonds = [
        (remap[i], remap[j], t) for i, j, t in raw_bonds if i in remap and j in remap
    ]
    return MoleculeGraph(
        atom_types=[element_index(symbols[k]) for k in keep],
        coords=[coords[k] for k in keep],
        bonds=bonds,
        is_pocket=False,
        name=name or (lines[0].strip() if lines[0].strip() else ""),
        elements=[symbols[k].strip() for k in keep],
    )


def parse_ligand_sdf(text: str) -> MoleculeGraph:
    """Parse the first molecule of an SDF (or a bare MOL block)."""
    block = text.split("$$$$")[0]
    return parse_mol_block(block)


def iter_sdf(text: str):
    """Yield (name, MOL block text) for each record of a multi-molecule SDF."""
    for chunk in text.split("$$$$"):
        stripped = chunk.strip("\n")
        if stripped.strip():
            yield stripped.splitlines()[0].strip(), chunk.lstrip("\n")


def write_mol_block(graph: MoleculeGraph, name: str | None = None) -> str:
    """Serialize a graph back to a MOL V2000 block (4-decimal coordinates)."""
    lines = [name if name is not None else graph.name, "  poseforge", ""]
    lines.append(f"{graph.n_atoms:>3}{len(graph.bonds):>3}  0  0  0  0  0  0  0  0999 V2000")
    for sym, (x, y, z) in zip(graph.element_symbols(), graph.coords):
        lines.append(f"{x:>10.4f}{y:>10.4f}{z:>10.4f} {sym:<3} 0  0  0  0  0  0  0  0  0  0  0  0")
    for i, j, t in graph.bonds:
        lines.append(f"{i + 1:>3}{j + 1:>3}{_BOND_CODE_OF[t]:>3}  0  0  0  0")
    lines.append("M  END")
    return "\n".join(lines) + "\n"


def write_sdf(graphs_and_names, path=None) -> str:
    parts = []
    for graph, name in graphs_and_names:
        parts.append(write_mol_block(graph, name) + "$$$$\n")
    text = "".join(parts)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# PDB pockets
# ---------------------------------------------------------------------------

def parse_pocket_pdb(text: str, center=None, radius: float = 6.0, ligand_coords=None) -> MoleculeGraph:
    """Select pocket heavy atoms near a binding site from PDB text.

    A residue is kept when any of its heavy atoms lies within ``radius`` of
    the center set (the ligand heavy atoms when given, else the single
    ``center`` point); all heavy atoms of kept residues are retained,
    matching the residue-level 6 A selection convention. Bonds are inferred
    by the covalent distance cutoff.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if ligand_coords is not None:
        center_set = np.asarray(ligand_coords, dtype=np.float64).reshape(-1, 3)
    elif center is not None:
        center_set = np.asarray(center, dtype=np.float64).reshape(1, 3)
    else:
        raise ValueError("either center or ligand_coords is required")

    atoms = []  # (residue key, element symbol, xyz)
    for lineno, line in enumerate(text.splitlines(), start=1):
        record = line[0:6].strip()
        if record not in ("ATOM", "HETATM"):
            continue
        try:
            name = line[12:16].strip()
            res_name = line[17:20].strip()
            chain = line[21:22]
            res_seq = line[22:26].strip()
            x = float(line[30:38])
            y = float(line[38:46])
            z = float(line[46:54])
        except (ValueError, IndexError):
            raise ParseError(f"unparseable {record} record", line=lineno) from None
        element = line[76:78].strip() if len(line) >= 77 else ""
        if not element:
            # Fall back to the atom-name convention: first alphabetic char.
            stripped = name.lstrip("0123456789")
            element = stripped[:2] if stripped[:2] in ("CL", "BR", "SE") else stripped[:1]
        if element.upper() in ("H", "D"):
            continue
        if res_name in WATER_RESIDUES:
            continue
        atoms.append(((chain, res_seq, res_name), element, (x, y, z)))

    if not atoms:
        raise EmptyPocketError("no heavy atoms found in PDB text")

    coords = np.array([a[2] for a in atoms])
    d2 = ((coords[:, None, :] - center_set[None, :, :]) ** 2).sum(axis=-1)
    within = d2.min(axis=1) <= radius * radius
    kept_residues = {atoms[k][0] for k in np.nonzero(within)[0]}
    keep = [k for k, a in enumerate(atoms) if a[0] in kept_residues]
    if not keep:
        raise EmptyPocketError(f"no atom within {radius} A of the binding site")

    pocket_coords = coords[keep]
    symbols = [atoms[k][1] for k in keep]
    bonds = infer_covalent_bonds(pocket_coords)
    return MoleculeGraph(
        atom_types=[element_index(s) for s in symbols],
        coords=pocket_coords,
        bonds=bonds,
        is_pocket=True,
        elements=[s.capitalize() if len(s) > 1 else s.upper() for s in symbols],
    )


def infer_covalent_bonds(coords: np.ndarray, cutoff: float = COVALENT_CUTOFF) -> list:
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    bonds = []
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] < cutoff:
                bonds.append((i, j, "single"))
    return bonds


# ---------------------------------------------------------------------------
# Graph topology features
# ---------------------------------------------------------------------------

def shortest_path_distances(graph: MoleculeGraph) -> np.ndarray:
    """All-pairs unweighted BFS distances; UNREACHABLE where disconnected."""
    n = graph.n_atoms
    adj = graph.adjacency()
    spd = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for src in range(n):
        spd[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if spd[src, v] == UNREACHABLE:
                    spd[src, v] = spd[src, u] + 1
                    queue.append(v)
    return spd


def clip_spd(spd: np.ndarray, spd_max: int = SPD_MAX) -> np.ndarray:
    """Map raw distances to embedding indices: 0..spd_max, UNREACHABLE last."""
    clipped = np.minimum(spd, spd_max)
    clipped[spd == UNREACHABLE] = spd_max + 1
    return clipped


def edge_path_features(graph: MoleculeGraph, spd: np.ndarray) -> np.ndarray:
    """Mean bond-type one-hot along one shortest path per atom pair.

    Ties are broken by always stepping to the lowest-index predecessor, so
    the chosen path is deterministic. Rows are zero for i == j and for
    unreachable pairs.
    """
    n = graph.n_atoms
    adj = graph.adjacency()
    types = graph.bond_type_map()
    onehot = np.zeros((n, n, N_BOND_TYPES))
    type_idx = {t: k for k, t in enumerate(BOND_TYPES)}
    for i in range(n):
        for j in range(n):
            d = spd[i, j]
            if d <= 0 or d == UNREACHABLE:
                continue
            # Walk back from j toward i via lowest-index predecessors.
            acc = np.zeros(N_BOND_TYPES)
            cur = j
            while cur != i:
                prev = min(v for v in adj[cur] if spd[i, v] == spd[i, cur] - 1)
                acc[type_idx[types[(prev, cur)]]] += 1.0
                cur = prev
            onehot[i, j] = acc / d
    return onehot


def path_features(graph: MoleculeGraph) -> PathFeatures:
    spd = shortest_path_distances(graph)
    return PathFeatures(spd=spd, edge_path_sum=edge_path_features(graph, spd))


# ---------------------------------------------------------------------------
# Canonical JSON form
# ---------------------------------------------------------------------------

def graph_to_json(graph: MoleculeGraph) -> str:
    payload = {
        "atoms": [
            {"element": sym, "xyz": [float(c) for c in xyz]}
            for sym, xyz in zip(graph.element_symbols(), graph.coords)
        ],
        "bonds": [[int(i), int(j), t] for i, j, t in graph.bonds],
    }
    if graph.is_pocket:
        payload["is_pocket"] = True
    if graph.name:
        payload["name"] = graph.name
    return json.dumps(payload, indent=1)


def graph_from_json(text: str) -> MoleculeGraph:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    atoms = payload.get("atoms")
    if not atoms:
        raise ParseError("JSON molecule has no atoms")
    return MoleculeGraph(
        atom_types=[element_index(a["element"]) for a in atoms],
        coords=[a["xyz"] for a in atoms],
        bonds=[(int(i), int(j), t) for i, j, t in payload.get("bonds", [])],
        is_pocket=bool(payload.get("is_pocket", False)),
        name=payload.get("name", ""),
        elements=[a["element"] for a in atoms],
    )
