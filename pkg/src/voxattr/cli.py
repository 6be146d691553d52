"""Command-line pipeline and the file writers aimed at external viewers.

Every subcommand validates its inputs up front, computes with a fixed
(identity) grid transform unless augmentation is explicitly part of the
command, and writes deterministically formatted output: rerunning any
subcommand with the same inputs and seed reproduces the files byte for
byte.  The seed is echoed into a header comment of every output file.

VOXATTR_THREADS caps how many masked variants are evaluated concurrently;
it never changes the numbers, only the wall time.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from . import analysis, attribution, filterviz, gridder, molio, tensornet

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_FORMAT = 4
EXIT_MISMATCH = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


@dataclass
class RunConfig:
    command: str
    complex_paths: list[str]
    model_path: str | None
    types_path: str | None
    head: str
    target: str
    out_dir: str | None
    seed: int
    bond_budget: int
    grid_dim: float
    grid_res: float
    gradient_target: str
    threads: int
    extra: dict


def _threads_from_env() -> int:
    raw = os.environ.get("VOXATTR_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, f"VOXATTR_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise CliError(EXIT_USAGE, "VOXATTR_THREADS must be >= 1")
    return value


def _load_types(path: str | None) -> molio.AtomTypeTable:
    if path is None:
        return molio.default_type_table()
    _require_file(path)
    try:
        return molio.parse_type_table(path)
    except molio.ParseError as exc:
        raise CliError(EXIT_BAD_FORMAT, f"type table {path}: {exc}")


def _require_file(path: str):
    if not os.path.isfile(path):
        raise CliError(EXIT_MISSING_FILE, f"no such file: {path}")


def _load_complex(path: str, types: molio.AtomTypeTable) -> molio.Complex:
    _require_file(path)
    try:
        return molio.parse_complex(path, types)
    except molio.ParseError as exc:
        raise CliError(EXIT_BAD_FORMAT, f"complex {path}: {exc}")


def _load_model(path: str) -> tensornet.Model:
    _require_file(path)
    try:
        return tensornet.load_model(path)
    except tensornet.ModelFormatError as exc:
        raise CliError(EXIT_BAD_FORMAT, str(exc))


def _grid_spec(cfg: RunConfig, cplx: molio.Complex, model: tensornet.Model | None) -> gridder.GridSpec:
    try:
        spec = gridder.GridSpec(
            center=cplx.center,
            dimension=cfg.grid_dim,
            resolution=cfg.grid_res,
            channels=len(cplx.types),
        )
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    if model is not None:
        want = model.spec.input_shape
        if spec.shape != want:
            raise CliError(
                EXIT_MISMATCH,
                f"grid shape {spec.shape} does not match model input {want} "
                f"(check --grid-dim/--grid-res/--types)",
            )
    return spec


def _out_dir(cfg: RunConfig) -> str:
    if cfg.out_dir is None:
        raise CliError(EXIT_USAGE, f"{cfg.command} requires --out")
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _comments(cfg: RunConfig, extra: list[str] | None = None) -> list[str]:
    base = [
        f"voxattr {cfg.command}",
        f"seed: {cfg.seed}",
        f"head: {cfg.head}",
        f"target: {cfg.target}",
    ]
    return base + (extra or [])


# ---------------------------------------------------------------------------
# structure / vector writers


def write_bfactor_structure(cplx: molio.Complex, score_map: attribution.AtomScoreMap, path: str):
    """PDB-like ATOM records with the normalized score in the B-factor column.

    Atoms missing from the map get 0.00.  Field widths are fixed so the
    output is stable and viewer-colorable.
    """
    scores = score_map.as_dict()
    lines = []
    for atom in cplx.atoms:
        value = scores.get(atom.id, 0.0)
        res_name = "LIG" if atom.is_ligand else "REC"
        chain = "L" if atom.is_ligand else "R"
        res_seq = 1 if atom.is_ligand else (atom.residue_id or 0)
        lines.append(
            "ATOM  {serial:5d} {name:^4s}{res:>4s} {chain:1s}{seq:4d}    "
            "{x:8.3f}{y:8.3f}{z:8.3f}{occ:6.2f}{b:6.2f}          {elem:>2s}\n".format(
                serial=atom.id + 1,
                name=atom.element[:4],
                res=res_name,
                chain=chain,
                seq=res_seq,
                x=atom.position[0],
                y=atom.position[1],
                z=atom.position[2],
                occ=1.00,
                b=value,
                elem=atom.element[:2],
            )
        )
    lines.append("END\n")
    with open(path, "w") as fh:
        fh.write("".join(lines))


def write_vector_script(
    cplx: molio.Complex,
    gradient_map: attribution.AtomScoreMap,
    csv_path: str,
    script_path: str | None = None,
    threshold: float = 1e-6,
    arrow_scale: float = 2.0,
    comments: list[str] | None = None,
):
    """Arrow table (and optional viewer script) for a gradient map.

    One arrow per atom whose raw gradient norm exceeds the threshold; arrow
    length is the normalized magnitude times arrow_scale (Angstroms).
    """
    if gradient_map.vectors is None:
        raise ValueError("vector output needs a gradient map")
    normalized = attribution.normalize_scores(gradient_map)
    rows = []
    for idx, atom_id in enumerate(gradient_map.atom_ids):
        magnitude = float(gradient_map.scores[idx])
        if magnitude <= threshold:
            continue
        atom = cplx.atoms[atom_id]
        direction = gradient_map.vectors[idx] / magnitude
        rows.append((atom_id, atom.position, direction, magnitude, float(normalized.scores[idx])))
    lines = [f"# {c}\n" for c in (comments or [])]
    lines.append("atom_id,x,y,z,dir_x,dir_y,dir_z,magnitude,normalized_magnitude\n")
    for atom_id, pos, direction, magnitude, norm_mag in rows:
        lines.append(
            f"{atom_id},{pos[0]:.4f},{pos[1]:.4f},{pos[2]:.4f},"
            f"{direction[0]:.6f},{direction[1]:.6f},{direction[2]:.6f},"
            f"{magnitude:.10f},{norm_mag:.6f}\n"
        )
    with open(csv_path, "w") as fh:
        fh.write("".join(lines))
    if script_path is None:
        return
    script = ["# arrow rendering script (PyMOL)\n", "python\n", "from pymol.cgo import CYLINDER, CONE\n", "obj = []\n"]
    for atom_id, pos, direction, magnitude, norm_mag in rows:
        tip = pos + direction * (norm_mag * arrow_scale)
        mid = pos + 0.8 * (tip - pos)
        script.append(
            "obj += [CYLINDER, {:.4f},{:.4f},{:.4f}, {:.4f},{:.4f},{:.4f}, 0.06, "
            "0.5,0.1,0.6, 0.5,0.1,0.6]\n".format(*pos, *mid)
        )
        script.append(
            "obj += [CONE, {:.4f},{:.4f},{:.4f}, {:.4f},{:.4f},{:.4f}, 0.12, 0.0, "
            "0.5,0.1,0.6, 0.5,0.1,0.6, 1.0, 1.0]\n".format(*mid, *tip)
        )
    script.append('cmd.load_cgo(obj, "gradient_arrows")\n')
    script.append("python end\n")
    with open(script_path, "w") as fh:
        fh.write("".join(script))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_score(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    cplx = _load_complex(cfg.complex_paths[0], _load_types(cfg.types_path))
    spec = _grid_spec(cfg, cplx, model)
    out, _ = tensornet.forward(gridder.voxelize(cplx, spec), model.spec, model.weights)
    print(f"pose_probability {out.pose_probability:.6f}")
    print(f"pose_logits {out.pose_logits[0]:.10f} {out.pose_logits[1]:.10f}")
    print(f"affinity {out.affinity:.10f}")
    return EXIT_OK


def _cmd_voxelize(cfg: RunConfig) -> int:
    cplx = _load_complex(cfg.complex_paths[0], _load_types(cfg.types_path))
    spec = _grid_spec(cfg, cplx, None)
    grid = gridder.voxelize(cplx, spec)
    out = _out_dir(cfg)
    comments = _comments(cfg)
    if cfg.extra["mode"] == "sum":
        gridder.export_grid_dx(grid, os.path.join(out, "density_sum.dx"), comments=comments)
    else:
        for i, t in enumerate(cplx.types.entries):
            gridder.export_grid_dx(
                grid,
                os.path.join(out, f"density_{i:02d}_{t.role[0]}_{t.name}.dx"),
                channel=i,
                comments=comments,
            )
    return EXIT_OK


def _masking_maps(cfg: RunConfig, cplx, spec, model):
    kwargs = dict(target=cfg.target, max_workers=cfg.threads)
    atom_map = attribution.mask_atoms(cplx, spec, model, cfg.head, **kwargs)
    fragment_map = attribution.mask_fragments(
        cplx, spec, model, cfg.head, bond_budget=cfg.bond_budget, **kwargs
    )
    residue_map = attribution.mask_residues(cplx, spec, model, cfg.head, **kwargs)
    combined = attribution.masking_combined(
        cplx,
        spec,
        model,
        cfg.head,
        atom_map=atom_map,
        fragment_map=fragment_map,
        residue_map=residue_map,
    )
    return atom_map, fragment_map, residue_map, combined


def _cmd_mask(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    cplx = _load_complex(cfg.complex_paths[0], _load_types(cfg.types_path))
    spec = _grid_spec(cfg, cplx, model)
    atom_map, fragment_map, residue_map, combined = _masking_maps(cfg, cplx, spec, model)
    out = _out_dir(cfg)
    comments = _comments(cfg, [f"bond_budget: {cfg.bond_budget}"])
    attribution.write_score_csv(
        os.path.join(out, f"mask_{cfg.head}.csv"),
        cplx,
        [atom_map, fragment_map, residue_map, combined],
        comments=comments,
    )
    write_bfactor_structure(
        cplx, attribution.normalize_scores(combined), os.path.join(out, f"mask_{cfg.head}.pdb")
    )
    print(f"baseline {atom_map.baseline_score:.10f}")
    print(f"variants {1 + len(atom_map.atom_ids) + len(fragment_map.atom_ids) + len(residue_map.atom_ids)}")
    return EXIT_OK


def _cmd_gradient(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    cplx = _load_complex(cfg.complex_paths[0], _load_types(cfg.types_path))
    spec = _grid_spec(cfg, cplx, model)
    grad_map = attribution.coordinate_gradients(
        cplx,
        spec,
        model,
        cfg.head,
        target=cfg.gradient_target,
        include_receptor=cfg.extra.get("include_receptor", False),
    )
    out = _out_dir(cfg)
    comments = _comments(cfg, [f"gradient_target: {cfg.gradient_target}"])
    attribution.write_score_csv(os.path.join(out, f"gradient_{cfg.head}.csv"), cplx, [grad_map], comments)
    write_bfactor_structure(
        cplx, attribution.normalize_scores(grad_map), os.path.join(out, f"gradient_{cfg.head}.pdb")
    )
    write_vector_script(
        cplx,
        grad_map,
        os.path.join(out, f"gradient_{cfg.head}_arrows.csv"),
        os.path.join(out, f"gradient_{cfg.head}_arrows.pml"),
        comments=comments,
    )
    print(f"baseline {grad_map.baseline_score:.10f}")
    return EXIT_OK


def _cmd_clrp(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    cplx = _load_complex(cfg.complex_paths[0], _load_types(cfg.types_path))
    spec = _grid_spec(cfg, cplx, model)
    rtape, score_map = attribution.clrp(cplx, spec, model, cfg.head, target=cfg.target)
    out = _out_dir(cfg)
    attribution.write_score_csv(
        os.path.join(out, f"clrp_{cfg.head}.csv"), cplx, [score_map], _comments(cfg)
    )
    write_bfactor_structure(
        cplx, attribution.normalize_scores(score_map), os.path.join(out, f"clrp_{cfg.head}.pdb")
    )
    print(f"head_scalar {rtape.total_output:.10f}")
    print(f"atom_relevance_sum {float(score_map.scores.sum()):.10f}")
    print(f"lost_relevance {rtape.lost_total:.10f}")
    return EXIT_OK


def _cmd_emptyspace(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    cplx = _load_complex(cfg.complex_paths[0], _load_types(cfg.types_path))
    spec = _grid_spec(cfg, cplx, model)
    rtape, _ = attribution.clrp(cplx, spec, model, cfg.head, target=cfg.target)
    try:
        grid = attribution.empty_space_relevance(rtape, model, spec)
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, str(exc))
    out = _out_dir(cfg)
    comments = _comments(cfg)
    gridder.write_dx(
        os.path.join(out, f"emptyspace_{cfg.head}.dx"),
        grid.values,
        grid.origin,
        grid.spacing,
        comments=comments,
    )
    report_path = os.path.join(out, f"emptyspace_{cfg.head}_report.csv")
    lines = [f"# {c}\n" for c in comments]
    lines.append("layer,dead_count,dead_count_fraction,surrendered,surrendered_fraction,lost\n")
    for row in grid.report:
        lines.append(
            f"{row['layer']},{row['dead_count']},{row['dead_count_fraction']:.6f},"
            f"{row['surrendered']:.10f},{row['surrendered_fraction']:.6f},{row['lost']:.10f}\n"
        )
    with open(report_path, "w") as fh:
        fh.write("".join(lines))
    print(f"dead_relevance_total {float(grid.values.sum()):.10f}")
    return EXIT_OK


def _cmd_filters(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    types = _load_types(cfg.types_path)
    if len(types) != model.spec.input_channels:
        raise CliError(
            EXIT_MISMATCH,
            f"type table has {len(types)} entries but the model expects {model.spec.input_channels} channels",
        )
    probe = None
    if cfg.complex_paths:
        grids = []
        for path in cfg.complex_paths:
            cplx = _load_complex(path, types)
            spec = _grid_spec(cfg, cplx, model)
            grids.append(gridder.voxelize(cplx, spec).values)
        probe = grids
    try:
        summary = filterviz.build_filter_summary(model, probe)
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, str(exc))
    out = _out_dir(cfg)
    comments = _comments(cfg)
    filterviz.write_channel_average_csv(
        summary, types, os.path.join(out, "filter_channel_averages.csv"), comments
    )
    filterviz.write_flat_filter_csv(summary, os.path.join(out, "filter_weight_vectors.csv"), comments)
    print(f"filters {summary.channel_averages.shape[0]}")
    return EXIT_OK


def _cmd_additivity(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    types = _load_types(cfg.types_path)
    maps, totals, empties, ids = [], [], [], []
    for path in cfg.complex_paths:
        cplx = _load_complex(path, types)
        spec = _grid_spec(cfg, cplx, model)
        total = attribution.score_complex(cplx, spec, model, cfg.head, cfg.target)
        empty = attribution.score_complex(
            molio.remove_atoms(cplx, set(range(len(cplx.atoms)))), spec, model, cfg.head, cfg.target
        )
        kwargs = dict(target=cfg.target, max_workers=cfg.threads)
        for mode_map in (
            attribution.mask_atoms(cplx, spec, model, cfg.head, **kwargs),
            attribution.mask_fragments(cplx, spec, model, cfg.head, bond_budget=cfg.bond_budget, **kwargs),
        ):
            maps.append(mode_map)
            totals.append(total)
            empties.append(empty)
            ids.append(os.path.basename(path))
    records, overall = analysis.additivity(maps, totals, empties, ids)
    out = _out_dir(cfg)
    analysis.write_additivity_csv(
        os.path.join(out, "additivity.csv"), records, overall, _comments(cfg)
    )
    print(f"records {len(records)}")
    print(f"overall_r {'undefined' if overall is None else f'{overall:.10f}'}")
    return EXIT_OK


def _cmd_compare(cfg: RunConfig) -> int:
    model = _load_model(cfg.model_path)
    types = _load_types(cfg.types_path)
    per_complex = []
    for path in cfg.complex_paths:
        cplx = _load_complex(path, types)
        spec = _grid_spec(cfg, cplx, model)
        _, _, _, combined = _masking_maps(cfg, cplx, spec, model)
        gradient = attribution.coordinate_gradients(cplx, spec, model, cfg.head, target=cfg.gradient_target)
        _, relevance = attribution.clrp(cplx, spec, model, cfg.head, target=cfg.target)
        per_complex.append(
            (
                os.path.basename(path),
                cfg.head,
                {"masking": combined, "gradient": gradient, "clrp": relevance},
            )
        )
    records, bins = analysis.method_correlation(per_complex)
    out = _out_dir(cfg)
    analysis.write_correlation_csv(os.path.join(out, "method_correlation.csv"), records, _comments(cfg))
    analysis.write_histogram_csv(
        os.path.join(out, "method_correlation_hist.csv"), bins, _comments(cfg)
    )
    print(f"records {len(records)}")
    return EXIT_OK


_ARCHS = {
    "linear": lambda: (tensornet.Flatten(),),
    "tiny": lambda: (tensornet.MaxPool3D(), tensornet.Conv3D(4), tensornet.ReLU(), tensornet.Flatten()),
    "default": tensornet.default_trunk,
}


def _cmd_train_toy(cfg: RunConfig) -> int:
    manifest = cfg.extra["dataset"]
    _require_file(manifest)
    types = _load_types(cfg.types_path)
    base = os.path.dirname(os.path.abspath(manifest))
    dataset = []
    with open(manifest) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise CliError(
                    EXIT_BAD_FORMAT,
                    f"dataset {manifest}: line {line_no}: expected '<path> <label> <affinity>'",
                )
            path = tokens[0] if os.path.isabs(tokens[0]) else os.path.join(base, tokens[0])
            try:
                label, y = int(tokens[1]), float(tokens[2])
            except ValueError:
                raise CliError(EXIT_BAD_FORMAT, f"dataset {manifest}: line {line_no}: bad label/affinity")
            if label not in (0, 1):
                raise CliError(EXIT_BAD_FORMAT, f"dataset {manifest}: line {line_no}: label must be 0 or 1")
            dataset.append((_load_complex(path, types), label, y))
    if not dataset:
        raise CliError(EXIT_BAD_FORMAT, f"dataset {manifest}: no examples")
    n = int(round(cfg.grid_dim / cfg.grid_res))
    spec = tensornet.ModelSpec(
        input_channels=len(types), input_size=n, trunk=_ARCHS[cfg.extra["arch"]]()
    )
    config = tensornet.TrainConfig(
        lr=cfg.extra["lr"],
        iters=cfg.extra["iters"],
        seed=cfg.seed,
        augment=cfg.extra["augment"],
        delta=cfg.extra["delta"],
        grid_dimension=cfg.grid_dim,
        grid_resolution=cfg.grid_res,
    )
    pose0, aff0 = tensornet.mean_losses(dataset, spec, tensornet.init_weights(spec, cfg.seed), config)
    print(f"initial pose_loss {pose0:.6f} affinity_loss {aff0:.6f}")
    try:
        weights = tensornet.train_toy(dataset, spec, config)
    except tensornet.TrainingDiverged as exc:
        raise CliError(EXIT_ERROR, str(exc))
    pose1, aff1 = tensornet.mean_losses(dataset, spec, weights, config)
    print(f"final pose_loss {pose1:.6f} affinity_loss {aff1:.6f}")
    tensornet.save_model(spec, weights, cfg.extra["model_out"])
    print("model saved")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxattr",
        description="Voxel-grid CNN scoring of protein-ligand complexes with attribution output",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True, complexes=1, out=True):
        if model:
            p.add_argument("--model", required=True, help="model file")
        if complexes == 1:
            p.add_argument("--complex", required=True, help="complex file")
        elif complexes == "many":
            p.add_argument("--complex", required=True, nargs="+", help="complex file(s)")
        elif complexes == "optional-many":
            p.add_argument("--complex", nargs="*", default=[], help="optional probe complex file(s)")
        p.add_argument("--types", help="type-table file (defaults to the built-in 35 types)")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--head", choices=["pose", "affinity"], default="pose")
        p.add_argument("--target", choices=["logit", "prob"], default="logit",
                       help="head scalar used by masking and relevance")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--bond-budget", type=int, default=molio.DEFAULT_BOND_BUDGET)
        p.add_argument("--grid-dim", type=float, default=24.0)
        p.add_argument("--grid-res", type=float, default=0.5)

    common(sub.add_parser("score", help="print head outputs for a complex"), out=False)
    common(sub.add_parser("mask", help="atom/fragment/residue masking attribution"))
    grad = sub.add_parser("gradient", help="atomic coordinate gradients")
    common(grad)
    grad.add_argument("--gradient-target", choices=["class", "raw"], default="class")
    grad.add_argument("--include-receptor", action="store_true",
                      help="also emit gradients on receptor atoms")
    common(sub.add_parser("clrp", help="conserved relevance propagation attribution"))
    common(sub.add_parser("emptyspace", help="dead-node relevance of the first convolution"))
    filt = sub.add_parser("filters", help="first-layer filter summaries")
    common(filt, complexes="optional-many")
    common(sub.add_parser("additivity", help="masking score-sum vs total score"), complexes="many")
    comp = sub.add_parser("compare", help="cross-method per-atom correlations")
    common(comp, complexes="many")
    comp.add_argument("--gradient-target", choices=["class", "raw"], default="class")
    vox = sub.add_parser("voxelize", help="density grid dump in OpenDX format")
    common(vox, model=False)
    vox.add_argument("--mode", choices=["sum", "per-channel"], default="sum")
    train = sub.add_parser("train-toy", help="small-scale SGD to produce fixture weights")
    train.add_argument("--dataset", required=True, help="manifest: <complex-path> <label> <affinity> per line")
    train.add_argument("--types", help="type-table file")
    train.add_argument("--arch", choices=sorted(_ARCHS), default="tiny")
    train.add_argument("--lr", type=float, default=0.01)
    train.add_argument("--iters", type=int, default=500)
    train.add_argument("--delta", type=float, default=1.0)
    train.add_argument("--augment", action="store_true")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--grid-dim", type=float, default=24.0)
    train.add_argument("--grid-res", type=float, default=0.5)
    train.add_argument("--out", required=True, help="model file to write")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    complexes = getattr(args, "complex", None)
    if complexes is None:
        complex_paths = []
    elif isinstance(complexes, str):
        complex_paths = [complexes]
    else:
        complex_paths = list(complexes)
    extra = {}
    if args.command == "voxelize":
        extra["mode"] = args.mode
    if args.command == "gradient":
        extra["include_receptor"] = args.include_receptor
    if args.command == "train-toy":
        extra.update(
            dataset=args.dataset,
            arch=args.arch,
            lr=args.lr,
            iters=args.iters,
            delta=args.delta,
            augment=args.augment,
            model_out=args.out,
        )
    return RunConfig(
        command=args.command,
        complex_paths=complex_paths,
        model_path=getattr(args, "model", None),
        types_path=getattr(args, "types", None),
        head=getattr(args, "head", "pose"),
        target=getattr(args, "target", "logit"),
        out_dir=None if args.command in ("score", "train-toy") else getattr(args, "out", None),
        seed=args.seed,
        bond_budget=getattr(args, "bond_budget", molio.DEFAULT_BOND_BUDGET),
        grid_dim=args.grid_dim,
        grid_res=args.grid_res,
        gradient_target=getattr(args, "gradient_target", "class"),
        threads=_threads_from_env(),
        extra=extra,
    )


_COMMANDS = {
    "score": _cmd_score,
    "mask": _cmd_mask,
    "gradient": _cmd_gradient,
    "clrp": _cmd_clrp,
    "emptyspace": _cmd_emptyspace,
    "filters": _cmd_filters,
    "additivity": _cmd_additivity,
    "compare": _cmd_compare,
    "voxelize": _cmd_voxelize,
    "train-toy": _cmd_train_toy,
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = _config_from_args(args)
        if cfg.bond_budget < 1:
            raise CliError(EXIT_USAGE, "--bond-budget must be >= 1")
        return _COMMANDS[cfg.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
