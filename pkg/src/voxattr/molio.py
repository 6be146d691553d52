"""Protein-ligand complex representation, parsing, and manipulation.

A complex is a flat list of typed, positioned atoms (receptor and ligand),
a ligand bond graph, and a binding-site center.  Atom typing is supplied by
the input file; no chemical perception happens here.  The type vocabulary
doubles as the channel layout of the density grid, so every atom carries an
index into an :class:`AtomTypeTable`.

File format (one record per line, ``#`` starts a comment):

    ATOM <id> <element> <type_name> <x> <y> <z> L
    ATOM <id> <element> <type_name> <x> <y> <z> R <residue_id>
    BOND <i> <j>
    CENTER <x> <y> <z>

Atom ids must equal the 0-based order of ATOM records, which makes bond
endpoints and atom-index sets unambiguous.  CENTER is optional and defaults
to the centroid of the ligand coordinates.

A type-table file replaces the built-in vocabulary:

    TYPE <name> <L|R> <radius>
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

RECEPTOR = "receptor"
LIGAND = "ligand"

DEFAULT_BOND_BUDGET = 6

# Built-in per-element van der Waals radii (data, not chemistry: a custom
# type table may override any of these).
_DEFAULT_RADII = {
    "AliphaticCarbonXSHydrophobe": 1.90,
    "AliphaticCarbonXSNonHydrophobe": 1.90,
    "AromaticCarbonXSHydrophobe": 1.90,
    "AromaticCarbonXSNonHydrophobe": 1.90,
    "Calcium": 1.20,
    "Iron": 1.20,
    "Magnesium": 1.20,
    "Nitrogen": 1.80,
    "NitrogenXSAcceptor": 1.80,
    "NitrogenXSDonor": 1.80,
    "NitrogenXSDonorAcceptor": 1.80,
    "Oxygen": 1.70,
    "OxygenXSAcceptor": 1.70,
    "OxygenXSDonorAcceptor": 1.70,
    "Phosphorus": 2.10,
    "Sulfur": 2.00,
    "SulfurAcceptor": 2.00,
    "Zinc": 1.20,
    "Bromine": 2.00,
    "Chlorine": 1.80,
    "Fluorine": 1.50,
    "Iodine": 2.20,
    "Boron": 2.04,
}

_RECEPTOR_TYPE_NAMES = (
    "AliphaticCarbonXSHydrophobe",
    "AliphaticCarbonXSNonHydrophobe",
    "AromaticCarbonXSHydrophobe",
    "AromaticCarbonXSNonHydrophobe",
    "Calcium",
    "Iron",
    "Magnesium",
    "Nitrogen",
    "NitrogenXSAcceptor",
    "NitrogenXSDonor",
    "NitrogenXSDonorAcceptor",
    "OxygenXSAcceptor",
    "OxygenXSDonorAcceptor",
    "Phosphorus",
    "Sulfur",
    "Zinc",
)

_LIGAND_TYPE_NAMES = (
    "AliphaticCarbonXSHydrophobe",
    "AliphaticCarbonXSNonHydrophobe",
    "AromaticCarbonXSHydrophobe",
    "AromaticCarbonXSNonHydrophobe",
    "Bromine",
    "Chlorine",
    "Fluorine",
    "Nitrogen",
    "NitrogenXSAcceptor",
    "NitrogenXSDonor",
    "NitrogenXSDonorAcceptor",
    "Oxygen",
    "OxygenXSAcceptor",
    "OxygenXSDonorAcceptor",
    "Phosphorus",
    "Sulfur",
    "SulfurAcceptor",
    "Iodine",
    "Boron",
)


class ParseError(ValueError):
    """Malformed complex or type-table file; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


@dataclass(frozen=True)
class AtomType:
    name: str
    role: str  # RECEPTOR | LIGAND
    vdw_radius: float


class AtomTypeTable:
    """Ordered atom-type vocabulary: one entry per density-grid channel.

    Names are unique within a role; the same chemical name may appear once
    as a receptor type and once as a ligand type (the default table shares
    most carbon/nitrogen/oxygen names across both roles).
    """

    def __init__(self, entries: list[AtomType]):
        if not entries:
            raise ValueError("type table must have at least one entry")
        seen = set()
        for t in entries:
            if t.role not in (RECEPTOR, LIGAND):
                raise ValueError(f"bad role {t.role!r} for type {t.name!r}")
            if t.vdw_radius <= 0:
                raise ValueError(f"non-positive radius for type {t.name!r}")
            key = (t.name, t.role)
            if key in seen:
                raise ValueError(f"duplicate type {t.name!r} for role {t.role}")
            seen.add(key)
        self.entries = tuple(entries)
        self._index = {(t.name, t.role): i for i, t in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def index_of(self, name: str, role: str) -> int:
        try:
            return self._index[(name, role)]
        except KeyError:
            raise KeyError(f"unknown atom type {name!r} for role {role}") from None

    def radius(self, type_index: int) -> float:
        return self.entries[type_index].vdw_radius


def default_type_table() -> AtomTypeTable:
    """The built-in 35-type vocabulary: 16 receptor types, then 19 ligand types."""
    entries = [AtomType(n, RECEPTOR, _DEFAULT_RADII[n]) for n in _RECEPTOR_TYPE_NAMES]
    entries += [AtomType(n, LIGAND, _DEFAULT_RADII[n]) for n in _LIGAND_TYPE_NAMES]
    return AtomTypeTable(entries)


@dataclass(frozen=True)
class Atom:
    """One atom: index, element label, type-table index, position, origin."""

    id: int
    element: str
    type_index: int
    position: np.ndarray  # (3,) float64, Angstroms
    is_ligand: bool
    residue_id: int | None = None


@dataclass(frozen=True)
class Complex:
    """Immutable receptor+ligand system with a ligand bond graph."""

    atoms: tuple[Atom, ...]
    bonds: tuple[tuple[int, int], ...]
    center: np.ndarray  # (3,) float64
    types: AtomTypeTable = field(default_factory=default_type_table)

    def __post_init__(self):
        seen = set()
        for pos, atom in enumerate(self.atoms):
            if atom.id != pos:
                raise ValueError(f"atom id {atom.id} does not match its index {pos}")
            if not np.all(np.isfinite(atom.position)):
                raise ValueError(f"atom {atom.id} has a non-finite position")
            if not 0 <= atom.type_index < len(self.types):
                raise ValueError(f"atom {atom.id} type index out of range")
            role = self.types.entries[atom.type_index].role
            expected = LIGAND if atom.is_ligand else RECEPTOR
            if role != expected:
                raise ValueError(
                    f"atom {atom.id}: type role {role} does not match {expected} atom"
                )
        for i, j in self.bonds:
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            if (i, j) in seen or (j, i) in seen:
                raise ValueError(f"duplicate bond {i}-{j}")
            seen.add((i, j))
            for end in (i, j):
                if not 0 <= end < len(self.atoms):
                    raise ValueError(f"bond endpoint {end} out of range")
                if not self.atoms[end].is_ligand:
                    raise ValueError(f"bond endpoint {end} is not a ligand atom")
        if self.center.shape != (3,) or not np.all(np.isfinite(self.center)):
            raise ValueError("center must be a finite 3-vector")

    def ligand_indices(self) -> list[int]:
        return [a.id for a in self.atoms if a.is_ligand]

    def receptor_indices(self) -> list[int]:
        return [a.id for a in self.atoms if not a.is_ligand]

    def positions(self) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, 3))
        return np.stack([a.position for a in self.atoms])

    def radius_of(self, atom_id: int) -> float:
        return self.types.radius(self.atoms[atom_id].type_index)


@dataclass(frozen=True)
class FragmentSet:
    """Distinct connected ligand substructures, identified by their atom sets."""

    fragments: tuple[frozenset[int], ...]
    bond_budget: int


def _role_from_flag(flag: str, line_no: int) -> str:
    if flag == "L":
        return LIGAND
    if flag == "R":
        return RECEPTOR
    raise ParseError(line_no, f"expected L or R, got {flag!r}")


def _floats(tokens: list[str], line_no: int) -> list[float]:
    out = []
    for t in tokens:
        try:
            out.append(float(t))
        except ValueError:
            raise ParseError(line_no, f"bad number {t!r}") from None
    return out


def parse_type_table(path: str) -> AtomTypeTable:
    """Read a ``TYPE <name> <L|R> <radius>`` file into an AtomTypeTable."""
    entries = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if tokens[0] != "TYPE" or len(tokens) != 4:
                raise ParseError(line_no, f"expected 'TYPE <name> <L|R> <radius>', got {raw.strip()!r}")
            role = _role_from_flag(tokens[2], line_no)
            (radius,) = _floats(tokens[3:4], line_no)
            if radius <= 0:
                raise ParseError(line_no, f"radius must be positive, got {radius}")
            entries.append(AtomType(tokens[1], role, radius))
    if not entries:
        raise ParseError(1, "type table file has no TYPE records")
    try:
        return AtomTypeTable(entries)
    except ValueError as exc:
        raise ParseError(1, str(exc)) from None


def parse_complex(path: str, types: AtomTypeTable | None = None) -> Complex:
    """Parse a complex file; every syntax or consistency error is line-numbered."""
    if types is None:
        types = default_type_table()
    atoms: list[Atom] = []
    bonds: list[tuple[int, int, int]] = []  # (line_no, i, j)
    center: np.ndarray | None = None
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            record = tokens[0]
            if record == "ATOM":
                if len(tokens) not in (8, 9):
                    raise ParseError(line_no, "ATOM needs 7 or 8 fields after the keyword")
                try:
                    atom_id = int(tokens[1])
                except ValueError:
                    raise ParseError(line_no, f"bad atom id {tokens[1]!r}") from None
                if atom_id != len(atoms):
                    raise ParseError(
                        line_no, f"atom id {atom_id} out of order (expected {len(atoms)})"
                    )
                xyz = np.array(_floats(tokens[4:7], line_no))
                if not np.all(np.isfinite(xyz)):
                    raise ParseError(line_no, "non-finite coordinate")
                role = _role_from_flag(tokens[7], line_no)
                residue_id = None
                if role == RECEPTOR:
                    if len(tokens) != 9:
                        raise ParseError(line_no, "receptor ATOM needs a residue id")
                    try:
                        residue_id = int(tokens[8])
                    except ValueError:
                        raise ParseError(line_no, f"bad residue id {tokens[8]!r}") from None
                elif len(tokens) != 8:
                    raise ParseError(line_no, "ligand ATOM must not carry a residue id")
                try:
                    type_index = types.index_of(tokens[3], role)
                except KeyError as exc:
                    raise ParseError(line_no, str(exc)) from None
                atoms.append(
                    Atom(
                        id=atom_id,
                        element=tokens[2],
                        type_index=type_index,
                        position=xyz,
                        is_ligand=(role == LIGAND),
                        residue_id=residue_id,
                    )
                )
            elif record == "BOND":
                if len(tokens) != 3:
                    raise ParseError(line_no, "BOND needs exactly two atom indices")
                try:
                    i, j = int(tokens[1]), int(tokens[2])
                except ValueError:
                    raise ParseError(line_no, "bad bond indices") from None
                bonds.append((line_no, min(i, j), max(i, j)))
            elif record == "CENTER":
                if len(tokens) != 4:
                    raise ParseError(line_no, "CENTER needs three coordinates")
                center = np.array(_floats(tokens[1:4], line_no))
            else:
                raise ParseError(line_no, f"unknown record {record!r}")
    if center is None:
        center = _default_center(atoms)
    kept: set[tuple[int, int]] = set()
    for line_no, i, j in bonds:
        if i == j:
            raise ParseError(line_no, f"self-bond on atom {i}")
        for end in (i, j):
            if not 0 <= end < len(atoms):
                raise ParseError(line_no, f"bond endpoint {end} out of range")
            if not atoms[end].is_ligand:
                raise ParseError(line_no, f"bond endpoint {end} is not a ligand atom")
        if (i, j) in kept:
            raise ParseError(line_no, f"duplicate bond {i}-{j}")
        kept.add((i, j))
    return Complex(atoms=tuple(atoms), bonds=tuple(sorted(kept)), center=center, types=types)


def _default_center(atoms: list[Atom]) -> np.ndarray:
    ligand = [a.position for a in atoms if a.is_ligand]
    if ligand:
        return np.mean(ligand, axis=0)
    if atoms:
        return np.mean([a.position for a in atoms], axis=0)
    return np.zeros(3)


def serialize_complex(cplx: Complex) -> str:
    """Render a Complex back into the text format (always writes CENTER)."""
    lines = []
    for a in cplx.atoms:
        t = cplx.types.entries[a.type_index]
        flag = "L" if a.is_ligand else "R"
        coords = " ".join(f"{v:.6f}" for v in a.position)
        suffix = "" if a.is_ligand else f" {a.residue_id}"
        lines.append(f"ATOM {a.id} {a.element} {t.name} {coords} {flag}{suffix}")
    for i, j in cplx.bonds:
        lines.append(f"BOND {i} {j}")
    lines.append("CENTER " + " ".join(f"{v:.6f}" for v in cplx.center))
    return "\n".join(lines) + "\n"


def enumerate_fragments(cplx: Complex, bond_budget: int = DEFAULT_BOND_BUDGET) -> FragmentSet:
    """All connected ligand substructures using 1..bond_budget bonds.

    A fragment is identified by its atom set: two different bond subsets
    spanning the same atoms count once.  Grown by breadth-first expansion of
    connected edge sets, which visits every connected edge subset exactly
    once per canonical edge-set key.
    """
    if bond_budget < 1:
        raise ValueError("bond_budget must be >= 1")
    edges = list(cplx.bonds)
    adjacency: dict[int, set[int]] = {}
    for idx, (i, j) in enumerate(edges):
        adjacency.setdefault(i, set()).add(idx)
        adjacency.setdefault(j, set()).add(idx)

    seen_edge_sets: set[frozenset[int]] = set()
    atom_sets: set[frozenset[int]] = set()
    frontier: list[frozenset[int]] = []
    for idx in range(len(edges)):
        es = frozenset([idx])
        seen_edge_sets.add(es)
        frontier.append(es)
        atom_sets.add(frozenset(edges[idx]))

    size = 1
    while frontier and size < bond_budget:
        next_frontier: list[frozenset[int]] = []
        for es in frontier:
            touched: set[int] = set()
            for idx in es:
                touched.update(edges[idx])
            candidates: set[int] = set()
            for atom in touched:
                candidates.update(adjacency[atom])
            for idx in candidates - es:
                grown = es | {idx}
                if grown in seen_edge_sets:
                    continue
                seen_edge_sets.add(grown)
                next_frontier.append(grown)
                atoms = set()
                for e in grown:
                    atoms.update(edges[e])
                atom_sets.add(frozenset(atoms))
        frontier = next_frontier
        size += 1

    ordered = tuple(sorted(atom_sets, key=sorted))
    return FragmentSet(fragments=ordered, bond_budget=bond_budget)


def remove_atoms(cplx: Complex, victims: set[int]) -> Complex:
    """Copy of the complex without the victim atoms.

    Surviving atoms keep their type indices and positions (types are not
    recomputed), bonds touching a victim are dropped, and the binding-site
    center is left untouched so all masked variants share one grid frame.
    """
    for v in victims:
        if not 0 <= v < len(cplx.atoms):
            raise IndexError(f"victim index {v} out of range")
    remap: dict[int, int] = {}
    survivors: list[Atom] = []
    for atom in cplx.atoms:
        if atom.id in victims:
            continue
        remap[atom.id] = len(survivors)
        survivors.append(replace(atom, id=len(survivors)))
    kept_bonds = tuple(
        (remap[i], remap[j]) for i, j in cplx.bonds if i not in victims and j not in victims
    )
    return Complex(atoms=tuple(survivors), bonds=kept_bonds, center=cplx.center, types=cplx.types)


def residue_groups(cplx: Complex) -> list[tuple[int, frozenset[int]]]:
    """Partition of receptor atoms by residue id, sorted by id."""
    groups: dict[int, set[int]] = {}
    for atom in cplx.atoms:
        if atom.is_ligand:
            continue
        if atom.residue_id is None:
            raise ValueError(f"receptor atom {atom.id} has no residue id")
        groups.setdefault(atom.residue_id, set()).add(atom.id)
    return [(rid, frozenset(groups[rid])) for rid in sorted(groups)]
