import os

import numpy as np
import pytest

from voxattr.gridder import GridSpec
from voxattr.molio import LIGAND, RECEPTOR, Atom, AtomType, AtomTypeTable, Complex  # noqa: F401
from voxattr.tensornet import (
    Conv3D,
    Dense,
    Flatten,
    MaxPool3D,
    Model,
    ModelSpec,
    ReLU,
    init_weights,
)

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def small_types() -> AtomTypeTable:
    """Four-channel table to keep end-to-end tests quick."""
    return AtomTypeTable(
        [
            AtomType("RecC", RECEPTOR, 1.9),
            AtomType("RecO", RECEPTOR, 1.7),
            AtomType("LigC", LIGAND, 1.9),
            AtomType("LigN", LIGAND, 1.8),
        ]
    )


def make_complex(types, atoms, bonds=(), center=None):
    """atoms: list of (type_name, role, (x, y, z)[, residue_id])."""
    built = []
    for i, entry in enumerate(atoms):
        name, role, pos = entry[0], entry[1], np.asarray(entry[2], dtype=np.float64)
        residue_id = entry[3] if len(entry) > 3 else None
        built.append(
            Atom(
                id=i,
                element=name[:2],
                type_index=types.index_of(name, role),
                position=pos,
                is_ligand=(role == LIGAND),
                residue_id=residue_id,
            )
        )
    if center is None:
        ligand = [a.position for a in built if a.is_ligand]
        center = np.mean(ligand, axis=0) if ligand else np.zeros(3)
    return Complex(
        atoms=tuple(built),
        bonds=tuple(sorted((min(i, j), max(i, j)) for i, j in bonds)),
        center=np.asarray(center, dtype=np.float64),
        types=types,
    )


def random_complex(rng, types, n_ligand=4, n_receptor=3, spread=2.0, extra_edges=1):
    """Random positions, random valid types, ligand bonded as a tree plus extras."""
    ligand_names = [t.name for t in types.entries if t.role == LIGAND]
    receptor_names = [t.name for t in types.entries if t.role == RECEPTOR]
    atoms = []
    for _ in range(n_receptor):
        atoms.append(
            (
                receptor_names[rng.integers(len(receptor_names))],
                RECEPTOR,
                rng.uniform(-spread, spread, 3),
                int(rng.integers(1, 3)),
            )
        )
    for _ in range(n_ligand):
        atoms.append(
            (ligand_names[rng.integers(len(ligand_names))], LIGAND, rng.uniform(-spread, spread, 3))
        )
    ligand_ids = list(range(n_receptor, n_receptor + n_ligand))
    bonds = set()
    for k in range(1, n_ligand):  # random spanning tree
        other = ligand_ids[rng.integers(k)]
        bonds.add((min(ligand_ids[k], other), max(ligand_ids[k], other)))
    for _ in range(extra_edges):
        if n_ligand < 2:
            break
        i, j = rng.choice(ligand_ids, size=2, replace=False)
        bonds.add((min(i, j), max(i, j)))
    return make_complex(types, atoms, bonds)


def small_grid(cplx, dimension=6.0, resolution=1.0):
    return GridSpec(
        center=cplx.center, dimension=dimension, resolution=resolution, channels=len(cplx.types)
    )


ARCH_CHOICES = [
    (Flatten(),),
    (Conv3D(2), ReLU(), Flatten()),
    (MaxPool3D(), Conv3D(2), ReLU(), Flatten()),
    (Conv3D(3), ReLU(), MaxPool3D(), Flatten()),
    (MaxPool3D(), Conv3D(2), ReLU(), Conv3D(3), ReLU(), Flatten()),
    (Conv3D(2), ReLU(), Flatten(), Dense(5), ReLU()),
    (MaxPool3D(), Flatten(), Dense(6), ReLU(), Dense(3)),
]


def random_model(rng, channels, size, bias_scale=0.1):
    """Random architecture from the menu with random weights and biases."""
    trunk = ARCH_CHOICES[rng.integers(len(ARCH_CHOICES))]
    spec = ModelSpec(input_channels=channels, input_size=size, trunk=trunk)
    weights = init_weights(spec, int(rng.integers(2**31 - 1)))
    for params in weights.all_params():
        params.bias[:] = rng.normal(0.0, bias_scale, size=params.bias.shape)
    return Model(spec, weights)


def shift_atom(cplx, atom_id, step):
    """Copy of the complex with one atom displaced by step (keeps the center)."""
    types = cplx.types
    atoms = []
    for a in cplx.atoms:
        pos = a.position + step if a.id == atom_id else a.position
        entry = (types.entries[a.type_index].name, types.entries[a.type_index].role, pos)
        if a.residue_id is not None:
            entry = entry + (a.residue_id,)
        atoms.append(entry)
    return make_complex(types, atoms, bonds=cplx.bonds, center=cplx.center)


def toy_dataset(types):
    """Ten synthetic examples: ligand docked between the receptor atoms (good)
    or displaced out of the site (bad).  Separable by construction."""
    data = []
    for dy in (-0.4, -0.2, 0.0, 0.2, 0.4):
        receptor = [("RecC", RECEPTOR, (-1.5, 0.0, 0.0), 1), ("RecO", RECEPTOR, (1.5, 0.0, 0.0), 2)]
        good = make_complex(
            types,
            receptor
            + [("LigC", LIGAND, (0.0, dy, 0.0)), ("LigN", LIGAND, (0.3, dy + 0.8, 0.0))],
            bonds=[(2, 3)],
            center=(0, 0, 0),
        )
        bad = make_complex(
            types,
            receptor
            + [("LigC", LIGAND, (0.0, 2.6 + dy, 0.0)), ("LigN", LIGAND, (0.3, 3.4 + dy, 0.0))],
            bonds=[(2, 3)],
            center=(0, 0, 0),
        )
        data.append((good, 1, 5.0))
        data.append((bad, 0, 2.0))
    return data


def toy_model_spec(channels=4):
    return ModelSpec(
        input_channels=channels,
        input_size=8,
        trunk=(MaxPool3D(), Conv3D(2), ReLU(), Flatten()),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def fixture_complex_path():
    return os.path.join(FIXTURES, "complex10.txt")


@pytest.fixture
def zero_model_path():
    return os.path.join(FIXTURES, "tiny_zero.vxm")
