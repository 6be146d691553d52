"""First-layer convolution filter summaries.

Filters are reduced two ways: per-channel weight averages (with the bias
scaled by the kernel volume so it plots on the same color scale), and the
full weight vector flattened channel-major with the z axis slowest inside
each channel, so the middle of each 27-wide block is the cube center.
Filters are ordered by average-linkage hierarchical clustering on the
flattened vectors, with ties broken toward lower cluster indices so the
ordering is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .molio import AtomTypeTable
from .tensornet import Conv3D, Model, forward


@dataclass(frozen=True)
class FilterSummary:
    channel_averages: np.ndarray  # (filters, channels)
    scaled_bias: np.ndarray  # (filters,)
    flattened: np.ndarray  # (filters, channels * kernel**3)
    order: tuple[int, ...]  # cluster leaf order
    max_preactivation: np.ndarray | None = None  # (filters,) over a probe set
    switched_off: np.ndarray | None = None  # (filters,) bool


def channel_averages(weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean weight per (filter, channel) and bias divided by the kernel volume."""
    if weight.ndim != 5:
        raise ValueError("expected convolution weights (out, in, k, k, k)")
    k3 = weight.shape[2] * weight.shape[3] * weight.shape[4]
    return weight.mean(axis=(2, 3, 4)), bias / k3


def flatten_filters(weight: np.ndarray) -> np.ndarray:
    """(filters, channels*k^3) with channel-major, z-slowest / x-fastest order."""
    if weight.ndim != 5:
        raise ValueError("expected convolution weights (out, in, k, k, k)")
    out_ch = weight.shape[0]
    return np.ascontiguousarray(weight.transpose(0, 1, 4, 3, 2)).reshape(out_ch, -1)


def unflatten_filters(flat: np.ndarray, channels: int, kernel: int) -> np.ndarray:
    """Inverse of flatten_filters."""
    out_ch = flat.shape[0]
    cube = flat.reshape(out_ch, channels, kernel, kernel, kernel)
    return np.ascontiguousarray(cube.transpose(0, 1, 4, 3, 2))


def cluster_merges(vectors: np.ndarray) -> tuple[tuple[int, ...], list[tuple[frozenset, float]]]:
    """Average-linkage Euclidean clustering.

    Returns the dendrogram leaf order and the merge history as (leaf set,
    merge distance) pairs.  Cluster ids count up from the originals in
    creation order; when several pairs tie at the minimum distance the
    lexicographically smallest id pair merges first, and a merged cluster
    lists the lower-id member's leaves before the higher's.
    """
    n = len(vectors)
    if n == 0:
        return (), []
    if n == 1:
        return (0,), []
    leaves: dict[int, list[int]] = {i: [i] for i in range(n)}
    sizes: dict[int, int] = {i: 1 for i in range(n)}
    dist: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(np.linalg.norm(vectors[i] - vectors[j]))
    active = set(range(n))
    next_id = n
    merges: list[tuple[frozenset, float]] = []
    while len(active) > 1:
        best = None
        for i in sorted(active):
            for j in sorted(active):
                if i >= j:
                    continue
                d = dist[(i, j)]
                if best is None or d < best[0] or (d == best[0] and (i, j) < best[1:]):
                    best = (d, i, j)
        d, a, b = best
        merged = next_id
        next_id += 1
        leaves[merged] = leaves[a] + leaves[b]
        sizes[merged] = sizes[a] + sizes[b]
        merges.append((frozenset(leaves[merged]), d))
        active.discard(a)
        active.discard(b)
        for other in active:
            ka = (min(a, other), max(a, other))
            kb = (min(b, other), max(b, other))
            dd = (sizes[a] * dist[ka] + sizes[b] * dist[kb]) / (sizes[a] + sizes[b])
            dist[(min(merged, other), max(merged, other))] = dd
        active.add(merged)
    (root,) = active
    return tuple(leaves[root]), merges


def cluster_filters(vectors: np.ndarray) -> tuple[int, ...]:
    """Dendrogram leaf order from average-linkage clustering (see cluster_merges)."""
    order, _ = cluster_merges(vectors)
    return order


def first_conv_params(model: Model):
    for i, layer in enumerate(model.spec.trunk):
        if isinstance(layer, Conv3D):
            return i, model.weights.trunk[i]
    raise ValueError("model has no convolution layer")


def probe_preactivations(model: Model, grids: list[np.ndarray]) -> np.ndarray:
    """Max first-convolution pre-activation (bias included) per filter over a probe set."""
    conv_idx, params = first_conv_params(model)
    peak = np.full(params.weight.shape[0], -np.inf)
    for grid in grids:
        _, tape = forward(grid, model.spec, model.weights, record=True)
        pre = tape.traces[conv_idx].output
        peak = np.maximum(peak, pre.reshape(pre.shape[0], -1).max(axis=1))
    return peak


def build_filter_summary(model: Model, probe_grids: list[np.ndarray] | None = None) -> FilterSummary:
    _, params = first_conv_params(model)
    averages, scaled_bias = channel_averages(params.weight, params.bias)
    flat = flatten_filters(params.weight)
    order = cluster_filters(flat)
    peak = switched = None
    if probe_grids:
        peak = probe_preactivations(model, probe_grids)
        switched = peak <= 0.0
    return FilterSummary(
        channel_averages=averages,
        scaled_bias=scaled_bias,
        flattened=flat,
        order=order,
        max_preactivation=peak,
        switched_off=switched,
    )


def write_channel_average_csv(
    summary: FilterSummary,
    types: AtomTypeTable,
    path: str,
    comments: list[str] | None = None,
):
    """Rows are filters in cluster order; columns are the per-type averages."""
    names = [f"{t.name}:{t.role[0].upper()}" for t in types.entries]
    lines = [f"# {c}\n" for c in (comments or [])]
    header = "filter," + ",".join(names) + ",scaled_bias"
    if summary.switched_off is not None:
        header += ",max_preactivation,switched_off"
    lines.append(header + "\n")
    for f in summary.order:
        row = f"{f}," + ",".join(f"{v:.10f}" for v in summary.channel_averages[f])
        row += f",{summary.scaled_bias[f]:.10f}"
        if summary.switched_off is not None:
            row += f",{summary.max_preactivation[f]:.10f},{int(summary.switched_off[f])}"
        lines.append(row + "\n")
    with open(path, "w") as fh:
        fh.write("".join(lines))


def write_flat_filter_csv(summary: FilterSummary, path: str, comments: list[str] | None = None):
    lines = [f"# {c}\n" for c in (comments or [])]
    width = summary.flattened.shape[1]
    lines.append("filter," + ",".join(f"w{i}" for i in range(width)) + "\n")
    for f in summary.order:
        lines.append(f"{f}," + ",".join(f"{v:.10f}" for v in summary.flattened[f]) + "\n")
    with open(path, "w") as fh:
        fh.write("".join(lines))
