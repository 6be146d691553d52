"""Per-atom attribution of network decisions.

Three families of methods, all producing :class:`AtomScoreMap` objects:

* masking - remove atoms, connected fragments, or whole receptor residues,
  re-voxelize, and difference the head score against the full complex;
* coordinate gradients - backpropagate the head score to the input grid and
  chain it onto atom coordinates, giving a 3-vector per atom;
* conserved relevance propagation - walk the recorded activations backward,
  splitting each node's relevance across its inputs in proportion to their
  forward contributions, with bias excluded from the ratios so the layer
  sums stay exactly equal to the propagated head score.

Nodes whose bias-free pre-activation is exactly zero cannot split relevance
(the ratio denominator vanishes); they surrender what they received, and the
surrendered amount is redistributed across the remaining nodes of the layer
in proportion to their pre-activations.  The surrendered amounts are kept
per layer: summed over the first convolution's filters they form the
empty-space relevance field.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .gridder import (
    GridSpec,
    TRUNCATION_FACTOR,
    _atom_voxel_window,
    density_gauss_branch,
    density_quad_branch,
    grid_gradient_to_atoms,
    voxelize,
)
from .molio import Complex, enumerate_fragments, remove_atoms, residue_groups
from .tensornet import (
    LOW_RMSD_CLASS,
    ActivationTape,
    Conv3D,
    Dense,
    Flatten,
    HeadOutputs,
    MaxPool3D,
    Model,
    backward_from_logit_seeds,
    conv3d_backward_input,
    conv3d_forward,
    forward,
    maxpool_backward,
    softmax,
)

DEGENERATE_LAYER_EPS = 1e-12


@dataclass(frozen=True)
class AtomScoreMap:
    """Signed per-atom attribution for one method and one head."""

    method: str
    head: str
    baseline_score: float
    atom_ids: tuple[int, ...]
    scores: np.ndarray  # (n,)
    vectors: np.ndarray | None = None  # (n, 3) for gradient maps

    def __post_init__(self):
        if len(self.atom_ids) != len(self.scores):
            raise ValueError("one score per atom required")
        if self.vectors is not None and self.vectors.shape != (len(self.atom_ids), 3):
            raise ValueError("one 3-vector per atom required")

    def score_of(self, atom_id: int) -> float:
        return float(self.scores[self.atom_ids.index(atom_id)])

    def as_dict(self) -> dict[int, float]:
        return {i: float(s) for i, s in zip(self.atom_ids, self.scores)}


def head_scalar(outputs: HeadOutputs, head: str, target: str = "logit") -> float:
    """The scalar a method explains: low-RMSD logit (or probability) or affinity."""
    if head == "pose":
        if target == "logit":
            return float(outputs.pose_logits[LOW_RMSD_CLASS])
        if target == "prob":
            return outputs.pose_probability
        raise ValueError(f"unknown target {target!r}")
    if head == "affinity":
        return outputs.affinity
    raise ValueError(f"unknown head {head!r}")


def score_complex(
    cplx: Complex, grid_spec: GridSpec, model: Model, head: str, target: str = "logit"
) -> float:
    """Voxelize with the identity transform, forward, and pick the head scalar."""
    out, _ = forward(voxelize(cplx, grid_spec), model.spec, model.weights)
    return head_scalar(out, head, target)


def _map_ordered(fn, items, max_workers: int):
    """Apply fn to items, preserving order; threads only fan out the forwards."""
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


def mask_atoms(
    cplx: Complex,
    grid_spec: GridSpec,
    model: Model,
    head: str,
    target: str = "logit",
    max_workers: int = 1,
) -> AtomScoreMap:
    """Score each ligand atom by the drop it causes when removed."""
    base = score_complex(cplx, grid_spec, model, head, target)
    ligand = cplx.ligand_indices()
    deltas = _map_ordered(
        lambda i: base - score_complex(remove_atoms(cplx, {i}), grid_spec, model, head, target),
        ligand,
        max_workers,
    )
    return AtomScoreMap(
        method="masking_atom",
        head=head,
        baseline_score=base,
        atom_ids=tuple(ligand),
        scores=np.array(deltas),
    )


def mask_fragments(
    cplx: Complex,
    grid_spec: GridSpec,
    model: Model,
    head: str,
    bond_budget: int = 6,
    target: str = "logit",
    max_workers: int = 1,
) -> AtomScoreMap:
    """Fragment-removal scores: each fragment's drop is split evenly over its
    atoms, and an atom's score is the sum over fragments containing it."""
    base = score_complex(cplx, grid_spec, model, head, target)
    ligand = cplx.ligand_indices()
    fragments = enumerate_fragments(cplx, bond_budget).fragments
    deltas = _map_ordered(
        lambda frag: base - score_complex(remove_atoms(cplx, set(frag)), grid_spec, model, head, target),
        fragments,
        max_workers,
    )
    totals = dict.fromkeys(ligand, 0.0)
    for frag, delta in zip(fragments, deltas):
        share = delta / len(frag)
        for atom in frag:
            totals[atom] += share
    return AtomScoreMap(
        method="masking_fragment",
        head=head,
        baseline_score=base,
        atom_ids=tuple(ligand),
        scores=np.array([totals[i] for i in ligand]),
    )


def mask_residues(
    cplx: Complex,
    grid_spec: GridSpec,
    model: Model,
    head: str,
    target: str = "logit",
    max_workers: int = 1,
) -> AtomScoreMap:
    """Whole-residue removal, drop split evenly over the residue's atoms."""
    base = score_complex(cplx, grid_spec, model, head, target)
    groups = residue_groups(cplx)
    deltas = _map_ordered(
        lambda group: base
        - score_complex(remove_atoms(cplx, set(group[1])), grid_spec, model, head, target),
        groups,
        max_workers,
    )
    receptor = cplx.receptor_indices()
    per_atom = dict.fromkeys(receptor, 0.0)
    for (rid, members), delta in zip(groups, deltas):
        share = delta / len(members)
        for atom in members:
            per_atom[atom] = share
    return AtomScoreMap(
        method="masking_residue",
        head=head,
        baseline_score=base,
        atom_ids=tuple(receptor),
        scores=np.array([per_atom[i] for i in receptor]) if receptor else np.zeros(0),
    )


def masking_combined(
    cplx: Complex,
    grid_spec: GridSpec,
    model: Model,
    head: str,
    bond_budget: int = 6,
    target: str = "logit",
    max_workers: int = 1,
    atom_map: AtomScoreMap | None = None,
    fragment_map: AtomScoreMap | None = None,
    residue_map: AtomScoreMap | None = None,
) -> AtomScoreMap:
    """Ligand atoms get the mean of atom and fragment masking; receptor atoms
    keep their residue score.  Precomputed maps are reused when supplied."""
    if atom_map is None:
        atom_map = mask_atoms(cplx, grid_spec, model, head, target, max_workers)
    if fragment_map is None:
        fragment_map = mask_fragments(cplx, grid_spec, model, head, bond_budget, target, max_workers)
    if residue_map is None:
        residue_map = mask_residues(cplx, grid_spec, model, head, target, max_workers)
    a, f, r = atom_map.as_dict(), fragment_map.as_dict(), residue_map.as_dict()
    ids = tuple(sorted(set(a) | set(r)))
    scores = np.array([(a[i] + f[i]) / 2.0 if i in a else r[i] for i in ids])
    return AtomScoreMap(
        method="masking",
        head=head,
        baseline_score=atom_map.baseline_score,
        atom_ids=ids,
        scores=scores,
    )


def coordinate_gradients(
    cplx: Complex,
    grid_spec: GridSpec,
    model: Model,
    head: str,
    target: str = "class",
    include_receptor: bool = False,
) -> AtomScoreMap:
    """Per-atom 3-vectors pointing where moving the atom raises the score.

    target="class" follows the negative classification-loss gradient for the
    low-RMSD label (for the pose head); target="raw" differentiates the raw
    logit.  Both targets coincide with the ascent direction of the predicted
    affinity for the affinity head.
    """
    grid = voxelize(cplx, grid_spec)
    out, tape = forward(grid, model.spec, model.weights, record=True)
    if head == "pose":
        if target == "class":
            onehot = np.zeros(2)
            onehot[LOW_RMSD_CLASS] = 1.0
            pose_seed = onehot - softmax(out.pose_logits)
            baseline = out.pose_probability
        elif target == "raw":
            pose_seed = np.zeros(2)
            pose_seed[LOW_RMSD_CLASS] = 1.0
            baseline = float(out.pose_logits[LOW_RMSD_CLASS])
        else:
            raise ValueError(f"unknown target {target!r}")
        grid_grad = backward_from_logit_seeds(tape, pose_seed=pose_seed)
    elif head == "affinity":
        grid_grad = backward_from_logit_seeds(tape, affinity_seed=1.0)
        baseline = out.affinity
    else:
        raise ValueError(f"unknown head {head!r}")
    all_vectors = grid_gradient_to_atoms(grid_grad, cplx, grid_spec, include_receptor)
    ids = [a.id for a in cplx.atoms if a.is_ligand or include_receptor]
    vectors = all_vectors[ids]
    return AtomScoreMap(
        method="gradient",
        head=head,
        baseline_score=baseline,
        atom_ids=tuple(ids),
        scores=np.linalg.norm(vectors, axis=1),
        vectors=vectors,
    )


# ---------------------------------------------------------------------------
# conserved relevance propagation


@dataclass
class LayerRelevance:
    name: str
    trace_index: int  # -1 for the head layer
    relevance: np.ndarray  # post-adjustment relevance on the layer's outputs
    dead_relevance: np.ndarray | None  # surrendered amount per node
    dead_count: int
    surrendered: float
    lost: float


@dataclass
class RelevanceTape:
    head: str
    target: str
    total_output: float
    layers: list[LayerRelevance]  # propagation order: head first, input-side last
    input_relevance: np.ndarray
    lost_total: float

    def layer_sums(self) -> list[tuple[str, float]]:
        return [(e.name, float(e.relevance.sum())) for e in self.layers]


@dataclass
class EmptySpaceGrid:
    """First-convolution dead-node relevance mapped back to space."""

    values: np.ndarray  # (m, m, m)
    origin: np.ndarray  # (3,)
    spacing: float
    report: list[dict]


def _dead_adjust(rel: np.ndarray, z: np.ndarray, layer_name: str):
    """Zero the nodes that cannot propagate (z exactly 0) and hand their
    relevance to the rest of the layer in proportion to pre-activation."""
    dead = z == 0.0
    dead_rel = np.where(dead, rel, 0.0)
    surrendered = float(dead_rel.sum())
    adjusted = np.where(dead, 0.0, rel)
    lost = 0.0
    if surrendered != 0.0:
        z_total = float(z.sum())
        if abs(z_total) < DEGENERATE_LAYER_EPS:
            lost = surrendered
            warnings.warn(
                f"{layer_name}: layer pre-activation sum ~ 0, "
                f"{surrendered:.6g} relevance recorded as lost",
                RuntimeWarning,
                stacklevel=3,
            )
        else:
            adjusted = np.where(dead, 0.0, adjusted + z / z_total * surrendered)
    return adjusted, dead_rel, int(dead.sum()), surrendered, lost


def _ratio(rel: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.divide(rel, z, out=np.zeros_like(rel), where=z != 0.0)


def clrp_relevance(
    tape: ActivationTape,
    head: str,
    target: str = "logit",
    start: float | None = None,
) -> RelevanceTape:
    """Propagate the head scalar back to the input grid, conserving the total.

    Linear layers split a node's relevance over its inputs in proportion to
    input * weight (no bias); ReLU passes relevance through; max pooling
    routes everything to the recorded argmax; zero-pre-activation nodes
    surrender to the rest of their layer.
    """
    tape.check_fresh()
    if head == "pose":
        scalar = head_scalar(tape.outputs, "pose", target)
        head_params = tape.weights.pose
        seed = np.zeros(2)
        seed[LOW_RMSD_CLASS] = scalar if start is None else start
    elif head == "affinity":
        scalar = tape.outputs.affinity
        head_params = tape.weights.affinity
        seed = np.array([scalar if start is None else start])
    else:
        raise ValueError(f"unknown head {head!r}")
    total = float(seed.sum())

    records: list[LayerRelevance] = []
    lost_total = 0.0

    z_head = head_params.weight @ tape.features
    rel, dead_rel, ndead, surrendered, lost = _dead_adjust(seed, z_head, f"head:{head}")
    lost_total += lost
    records.append(
        LayerRelevance(f"head:{head}", -1, rel, dead_rel, ndead, surrendered, lost)
    )
    r = tape.features * (head_params.weight.T @ _ratio(rel, z_head))

    for idx in range(len(tape.traces) - 1, -1, -1):
        trace = tape.traces[idx]
        layer = trace.layer
        params = tape.weights.trunk[idx]
        name = f"trunk[{idx}]:{type(layer).__name__.lower()}"
        if isinstance(layer, Dense):
            z = params.weight @ trace.inputs
            r, dead_rel, ndead, surrendered, lost = _dead_adjust(r, z, name)
            lost_total += lost
            records.append(LayerRelevance(name, idx, r, dead_rel, ndead, surrendered, lost))
            r = trace.inputs * (params.weight.T @ _ratio(r, z))
        elif isinstance(layer, Conv3D):
            z = conv3d_forward(trace.inputs, params.weight, np.zeros(layer.out_channels), layer.pad)
            r, dead_rel, ndead, surrendered, lost = _dead_adjust(r, z, name)
            lost_total += lost
            records.append(LayerRelevance(name, idx, r, dead_rel, ndead, surrendered, lost))
            r = trace.inputs * conv3d_backward_input(_ratio(r, z), params.weight, layer.pad)
        elif isinstance(layer, Flatten):
            records.append(LayerRelevance(name, idx, r, None, 0, 0.0, 0.0))
            r = r.reshape(trace.inputs.shape)
        elif isinstance(layer, MaxPool3D):
            records.append(LayerRelevance(name, idx, r, None, 0, 0.0, 0.0))
            r = maxpool_backward(r, trace.pool_argmax, layer.window, trace.inputs.shape)
        else:  # ReLU: relevance passes through unchanged
            records.append(LayerRelevance(name, idx, r, None, 0, 0.0, 0.0))
    return RelevanceTape(
        head=head,
        target=target,
        total_output=total,
        layers=records,
        input_relevance=r,
        lost_total=lost_total,
    )


def pool_relevance_to_atoms(
    input_relevance: np.ndarray,
    cplx: Complex,
    grid_spec: GridSpec,
    grid_values: np.ndarray,
) -> np.ndarray:
    """Split each voxel's relevance over the atoms of its channel by density share."""
    out = np.zeros(len(cplx.atoms))
    axes = [grid_spec.axis_coords(a) for a in range(3)]
    for atom in cplx.atoms:
        r = cplx.radius_of(atom.id)
        pos = atom.position
        window = _atom_voxel_window(grid_spec, pos, TRUNCATION_FACTOR * r)
        if window is None:
            continue
        (x0, x1), (y0, y1), (z0, z1) = window
        dx = axes[0][x0 : x1 + 1] - pos[0]
        dy = axes[1][y0 : y1 + 1] - pos[1]
        dz = axes[2][z0 : z1 + 1] - pos[2]
        d = np.sqrt(dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2)
        contrib = np.where(
            d < r,
            density_gauss_branch(d, r),
            np.where(d < TRUNCATION_FACTOR * r, density_quad_branch(d, r), 0.0),
        )
        box = (atom.type_index, slice(x0, x1 + 1), slice(y0, y1 + 1), slice(z0, z1 + 1))
        channel = grid_values[box]
        share = np.divide(contrib, channel, out=np.zeros_like(contrib), where=channel > 0)
        out[atom.id] = float(np.sum(input_relevance[box] * share))
    return out


def clrp(
    cplx: Complex,
    grid_spec: GridSpec,
    model: Model,
    head: str,
    target: str = "logit",
    start: float | None = None,
) -> tuple[RelevanceTape, AtomScoreMap]:
    """End-to-end relevance attribution: voxelize, forward, propagate, pool."""
    grid = voxelize(cplx, grid_spec)
    out, tape = forward(grid, model.spec, model.weights, record=True)
    rtape = clrp_relevance(tape, head, target, start)
    per_atom = pool_relevance_to_atoms(rtape.input_relevance, cplx, grid_spec, grid.values)
    ids = tuple(a.id for a in cplx.atoms)
    score_map = AtomScoreMap(
        method="clrp",
        head=head,
        baseline_score=head_scalar(out, head, target),
        atom_ids=ids,
        scores=per_atom,
    )
    return rtape, score_map


def dead_report(rtape: RelevanceTape) -> list[dict]:
    """Per-layer dead-node counts and relevance, with fractions of the totals."""
    rows = []
    total_count = sum(e.dead_count for e in rtape.layers)
    total_abs = sum(abs(e.surrendered) for e in rtape.layers)
    for e in rtape.layers:
        rows.append(
            {
                "layer": e.name,
                "dead_count": e.dead_count,
                "dead_count_fraction": e.dead_count / total_count if total_count else 0.0,
                "surrendered": e.surrendered,
                "surrendered_fraction": abs(e.surrendered) / total_abs if total_abs else 0.0,
                "lost": e.lost,
            }
        )
    return rows


def empty_space_relevance(rtape: RelevanceTape, model: Model, grid_spec: GridSpec) -> EmptySpaceGrid:
    """Dead-node relevance of the first convolution, summed over filters.

    The spatial geometry follows the input grid through any pooling in front
    of the convolution: spacing multiplies by the pooling factor and the
    origin sits at the center of the first pooled cell.
    """
    conv_idx = None
    for i, layer in enumerate(model.spec.trunk):
        if isinstance(layer, Conv3D):
            conv_idx = i
            break
    if conv_idx is None:
        raise ValueError("model has no convolution layer")
    entry = next((e for e in rtape.layers if e.trace_index == conv_idx), None)
    if entry is None or entry.dead_relevance is None:
        raise ValueError("relevance tape lacks dead-node records for the first convolution")
    values = entry.dead_relevance.sum(axis=0)
    factor = 1
    for layer in model.spec.trunk[:conv_idx]:
        if isinstance(layer, MaxPool3D):
            factor *= layer.window
    conv = model.spec.trunk[conv_idx]
    spacing = grid_spec.resolution * factor
    # center of the first pooled cell, plus any window offset a valid-mode conv adds
    origin = (
        grid_spec.center
        - grid_spec.dimension / 2.0
        + (factor / 2.0) * grid_spec.resolution
        + ((conv.kernel - 1) / 2.0 - conv.pad) * spacing
    )
    return EmptySpaceGrid(values=values, origin=origin, spacing=spacing, report=dead_report(rtape))


def normalize_scores(score_map: AtomScoreMap) -> AtomScoreMap:
    """Scale so the largest magnitude is 1; signs kept; all-zero maps pass through."""
    peak = float(np.max(np.abs(score_map.scores))) if len(score_map.scores) else 0.0
    if peak == 0.0:
        return score_map
    return replace(
        score_map,
        scores=score_map.scores / peak,
        vectors=None if score_map.vectors is None else score_map.vectors / peak,
    )


# ---------------------------------------------------------------------------
# score-map CSV


def write_score_csv(path: str, cplx: Complex, maps: list[AtomScoreMap], comments: list[str] | None = None):
    lines = [f"# {c}\n" for c in (comments or [])]
    lines.append("atom_id,element,type_name,x,y,z,method,head,score,gx,gy,gz\n")
    for score_map in maps:
        for row, atom_id in enumerate(score_map.atom_ids):
            atom = cplx.atoms[atom_id]
            t = cplx.types.entries[atom.type_index]
            gx = gy = gz = ""
            if score_map.vectors is not None:
                gx, gy, gz = (f"{v:.10f}" for v in score_map.vectors[row])
            lines.append(
                f"{atom_id},{atom.element},{t.name},"
                f"{atom.position[0]:.4f},{atom.position[1]:.4f},{atom.position[2]:.4f},"
                f"{score_map.method},{score_map.head},{score_map.scores[row]:.10f},{gx},{gy},{gz}\n"
            )
    with open(path, "w") as fh:
        fh.write("".join(lines))


def read_score_csv(path: str) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            values = line.split(",")
            row = dict(zip(header, values))
            row["atom_id"] = int(row["atom_id"])
            for key in ("x", "y", "z", "score"):
                row[key] = float(row[key])
            for key in ("gx", "gy", "gz"):
                row[key] = float(row[key]) if row[key] else None
            rows.append(row)
    return rows
