"""Acceptance gate: one test per release criterion, each printing a PASS/FAIL
line with its runtime (run with `pytest tests/test_acceptance.py -v -s`).

The checks are property-based: closed-form seam values, finite-difference
oracles, naive reference implementations, brute-force enumeration, and
byte-level reproducibility.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from voxattr import attribution as at
from voxattr import molio, tensornet
from voxattr.attribution import (
    clrp,
    clrp_relevance,
    coordinate_gradients,
    mask_atoms,
    mask_fragments,
    mask_residues,
    pool_relevance_to_atoms,
)
from voxattr.cli import run
from voxattr.gridder import (
    GridSpec,
    ddist_gauss_branch,
    ddist_quad_branch,
    density_gauss_branch,
    density_quad_branch,
    voxelize,
)
from voxattr.molio import LIGAND, parse_complex, remove_atoms, serialize_complex
from voxattr.tensornet import (
    LOW_RMSD_CLASS,
    Conv3D,
    Dense,
    Flatten,
    MaxPool3D,
    Model,
    ModelSpec,
    ReLU,
    backward_to_input,
    forward,
    init_weights,
    pose_loss,
    save_model,
    train_toy,
    zero_weights,
)

from conftest import (
    make_complex,
    random_complex,
    random_model,
    shift_atom,
    small_grid,
    small_types,
    toy_dataset,
    toy_model_spec,
)
from naive_ref import brute_force_fragments, naive_forward, naive_voxelize


@contextmanager
def criterion(name: str, budget_seconds: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < budget_seconds, f"{name}: {elapsed:.2f}s exceeds the {budget_seconds:.0f}s budget"
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s)")


def test_density_c1_continuity():
    with criterion("density-c1-continuity", 1.0):
        rng = np.random.default_rng(101)
        for _ in range(100):
            r = float(rng.uniform(0.3, 3.0))
            assert abs(density_gauss_branch(r, r) - density_quad_branch(r, r)) < 1e-12
            assert abs(ddist_gauss_branch(r, r) - ddist_quad_branch(r, r)) < 1e-12
            assert abs(density_quad_branch(1.5 * r, r) - 0.0) < 1e-12
            assert abs(ddist_quad_branch(1.5 * r, r) - 0.0) < 1e-12


def test_end_to_end_gradient_check():
    with criterion("end-to-end-gradient-check", 120.0):
        rng = np.random.default_rng(202)
        types = small_types()
        h = 1e-4
        for case in range(5):
            cplx = random_complex(rng, types, n_ligand=3, n_receptor=2, spread=1.8)
            spec = small_grid(cplx, dimension=6.0, resolution=1.0)
            trunk = (
                (MaxPool3D(), Conv3D(2), ReLU(), Flatten())
                if case % 2
                else (Conv3D(2), ReLU(), MaxPool3D(), Flatten())
            )
            mspec = ModelSpec(input_channels=4, input_size=6, trunk=trunk)
            weights = init_weights(mspec, int(rng.integers(2**31 - 1)))
            for params in weights.all_params():
                params.bias[:] = rng.normal(0.0, 0.1, size=params.bias.shape)
            model = Model(mspec, weights)
            head = "affinity" if case % 2 else "pose"
            target = "raw" if head == "affinity" else "class"
            grad_map = coordinate_gradients(cplx, spec, model, head, target=target, include_receptor=True)

            def scalar(c):
                out, _ = forward(voxelize(c, spec), mspec, weights)
                if head == "affinity":
                    return out.affinity
                return -pose_loss(out.pose_logits, LOW_RMSD_CLASS)

            for idx, atom_id in enumerate(grad_map.atom_ids):
                for axis in range(3):
                    step = np.zeros(3)
                    step[axis] = h
                    fd = (
                        scalar(shift_atom(cplx, atom_id, step))
                        - scalar(shift_atom(cplx, atom_id, -step))
                    ) / (2 * h)
                    an = float(grad_map.vectors[idx, axis])
                    rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                    assert rel < 1e-4, f"case {case} atom {atom_id} axis {axis}: rel err {rel:.2e}"


def test_clrp_conservation():
    with criterion("clrp-conservation", 60.0):
        rng = np.random.default_rng(303)
        for trial in range(20):
            model = random_model(rng, int(rng.integers(1, 3)), int(rng.choice([4, 6])))
            x = rng.normal(size=model.spec.input_shape)
            if trial % 2:
                # exact-zero slab: first-layer windows with zero pre-activation
                x[:, : x.shape[1] // 2] = 0.0
                for params in model.weights.all_params():
                    params.bias[:] = np.abs(params.bias) + 0.01
            _, tape = forward(x, model.spec, model.weights, record=True)
            head = "pose" if trial % 2 else "affinity"
            rtape = clrp_relevance(tape, head)
            assert rtape.lost_total == 0.0
            total = rtape.total_output
            scale = max(abs(total), 1e-12)
            for name, layer_sum in rtape.layer_sums():
                assert abs(layer_sum - total) / scale < 1e-6, name
            assert abs(float(rtape.input_relevance.sum()) - total) / scale < 1e-6


def test_clrp_hand_fixtures():
    with criterion("clrp-hand-fixtures", 10.0):
        adjusted, _, ndead, surrendered, lost = at._dead_adjust(
            np.array([0.5, 0.2, 0.3]), np.array([3.0, 0.0, 1.0]), "fixture"
        )
        assert np.allclose(adjusted, [0.65, 0.0, 0.35], atol=1e-15)
        assert surrendered == pytest.approx(0.2) and ndead == 1 and lost == 0.0
        assert float(adjusted.sum()) == pytest.approx(1.0, abs=1e-15)

        spec = ModelSpec(input_channels=2, input_size=1, trunk=(Flatten(), Dense(2), ReLU()))
        w = zero_weights(spec)
        w.trunk[1].weight[:] = [[1.0, 1.0], [2.0, -1.0]]
        w.trunk[1].bias[:] = [0.0, 4.0]
        w.affinity.weight[:] = [[1.0, 5.0]]
        x = np.array([1.0, 2.0]).reshape(spec.input_shape)
        out, tape = forward(x, spec, w, record=True)
        assert out.affinity == 23.0
        rtape = clrp_relevance(tape, "affinity")
        assert rtape.input_relevance.ravel() == pytest.approx([23 / 3, 46 / 3], abs=1e-12)
        dense = next(e for e in rtape.layers if e.name.endswith("dense"))
        assert dense.surrendered == pytest.approx(20.0)
        for _, layer_sum in rtape.layer_sums():
            assert layer_sum == pytest.approx(23.0, rel=1e-12)


def test_forward_pass_oracle():
    with criterion("forward-pass-oracle", 60.0):
        rng = np.random.default_rng(404)
        for _ in range(10):
            model = random_model(rng, int(rng.integers(1, 4)), int(rng.choice([4, 6])))
            x = rng.normal(size=model.spec.input_shape)
            out, _ = forward(x, model.spec, model.weights)
            logits, prob, affinity = naive_forward(model.spec, model.weights, x)
            assert np.abs(out.pose_logits - logits).max() < 1e-10
            assert abs(out.affinity - affinity) < 1e-10
            assert abs(out.pose_probability - prob) < 1e-10


def test_masking_oracle(fixture_complex_path):
    with criterion("masking-oracle", 60.0):
        cplx = parse_complex(fixture_complex_path)
        assert len(cplx.atoms) == 10
        spec = GridSpec(center=cplx.center, dimension=8.0, resolution=1.0, channels=35)
        mspec = ModelSpec(input_channels=35, input_size=8, trunk=(MaxPool3D(), Conv3D(2), ReLU(), Flatten()))
        weights = init_weights(mspec, 17)
        for params in weights.all_params():
            params.bias[:] = np.linspace(-0.05, 0.05, params.bias.size)
        model = Model(mspec, weights)

        def oracle(c):
            logits, prob, affinity = naive_forward(mspec, weights, naive_voxelize(c, spec))
            return float(logits[LOW_RMSD_CLASS])

        base = oracle(cplx)
        atom_map = mask_atoms(cplx, spec, model, "pose")
        for atom_id, score in zip(atom_map.atom_ids, atom_map.scores):
            assert abs(score - (base - oracle(remove_atoms(cplx, {atom_id})))) < 1e-10

        fragment_map = mask_fragments(cplx, spec, model, "pose")
        fragments = molio.enumerate_fragments(cplx, 6).fragments
        expect = dict.fromkeys(atom_map.atom_ids, 0.0)
        for frag in fragments:
            delta = base - oracle(remove_atoms(cplx, set(frag)))
            for atom in frag:
                expect[atom] += delta / len(frag)
        for atom_id, score in zip(fragment_map.atom_ids, fragment_map.scores):
            assert abs(score - expect[atom_id]) < 1e-10

        residue_map = mask_residues(cplx, spec, model, "pose")
        for rid, members in molio.residue_groups(cplx):
            delta = base - oracle(remove_atoms(cplx, set(members)))
            for atom in members:
                assert abs(residue_map.as_dict()[atom] - delta / len(members)) < 1e-10


def test_fragment_enumeration_brute_force():
    with criterion("fragment-enumeration", 30.0):
        rng = np.random.default_rng(505)
        types = small_types()
        for _ in range(25):
            cplx = random_complex(
                rng,
                types,
                n_ligand=int(rng.integers(2, 8)),
                n_receptor=0,
                extra_edges=int(rng.integers(0, 6)),
            )
            assert len(cplx.bonds) <= 12
            got = set(molio.enumerate_fragments(cplx, 6).fragments)
            assert got == brute_force_fragments(cplx.bonds, 6)


def test_linear_model_additivity():
    with criterion("linear-model-additivity", 60.0):
        types = small_types()
        maps, totals, empties, ids = [], [], [], []
        mspec = ModelSpec(input_channels=4, input_size=12, trunk=(Flatten(),))
        weights = init_weights(mspec, 23)
        for params in weights.all_params():
            params.bias[:] = 0.0
        model = Model(mspec, weights)
        for k in range(5):
            # supports are disjoint: separation 7 > 1.5 * (1.9 + 1.9)
            cplx = make_complex(
                types,
                [
                    ("LigC", LIGAND, (-3.5, 0.3 * k - 0.6, 0.0)),
                    ("LigN", LIGAND, (3.5, 0.0, 0.3 * k - 0.6)),
                ],
                center=(0, 0, 0),
            )
            spec = GridSpec(center=cplx.center, dimension=12.0, resolution=1.0, channels=4)
            total = at.score_complex(cplx, spec, model, "affinity", "logit")
            empty = at.score_complex(remove_atoms(cplx, {0, 1}), spec, model, "affinity", "logit")
            score_map = mask_atoms(cplx, spec, model, "affinity")
            assert abs(float(score_map.scores.sum()) - (total - empty)) < 1e-9

            # relevance equals gradient x input, pooled per atom
            grid = voxelize(cplx, spec)
            _, tape = forward(grid, mspec, weights, record=True)
            grad = backward_to_input(tape, "affinity")
            expected = pool_relevance_to_atoms(grad * grid.values, cplx, spec, grid.values)
            _, rel_map = clrp(cplx, spec, model, "affinity")
            assert np.abs(rel_map.scores - expected).max() < 1e-9

            maps.append(score_map)
            totals.append(total)
            empties.append(empty)
            ids.append(f"lin{k}")
        from voxattr.analysis import additivity

        _, overall = additivity(maps, totals, empties, ids)
        assert overall == pytest.approx(1.0, abs=1e-9)


def test_toy_training():
    with criterion("toy-training", 120.0):
        types = small_types()
        data = toy_dataset(types)
        assert len(data) == 10
        spec = toy_model_spec(len(types))
        config = tensornet.TrainConfig(lr=0.05, iters=500, seed=0, grid_dimension=8.0, grid_resolution=1.0)
        before, _ = tensornet.mean_losses(data, spec, init_weights(spec, config.seed), config)
        weights = train_toy(data, spec, config)
        after, _ = tensornet.mean_losses(data, spec, weights, config)
        assert after <= 0.5 * before, f"pose loss {before:.4f} -> {after:.4f}"
        again = train_toy(data, spec, config)
        assert weights.fingerprint() == again.fingerprint()


TYPES_TXT = "TYPE RecC R 1.9\nTYPE RecO R 1.7\nTYPE LigC L 1.9\nTYPE LigN L 1.8\n"


def test_cli_reproducibility(tmp_path, capsys, monkeypatch):
    with criterion("cli-reproducibility", 180.0):
        types_path = tmp_path / "types.txt"
        types_path.write_text(TYPES_TXT)
        types = small_types()
        data = toy_dataset(types)
        complex_path = tmp_path / "complex.txt"
        complex_path.write_text(serialize_complex(data[0][0]))
        spec = toy_model_spec(len(types))
        weights = init_weights(spec, 4)
        for params in weights.all_params():
            params.bias[:] = 0.05
        model_path = tmp_path / "model.vxm"
        save_model(spec, weights, str(model_path))
        manifest = tmp_path / "dataset.txt"
        lines = []
        for k, (c, label, y) in enumerate(data[:4]):
            p = tmp_path / f"train_{k}.txt"
            p.write_text(serialize_complex(c))
            lines.append(f"train_{k}.txt {label} {y}")
        manifest.write_text("\n".join(lines) + "\n")

        base = [
            "--model", str(model_path), "--complex", str(complex_path),
            "--types", str(types_path), "--grid-dim", "8", "--grid-res", "1",
        ]
        plans = {
            "score": base,
            "voxelize": ["--complex", str(complex_path), "--types", str(types_path), "--grid-dim", "8", "--grid-res", "1"],
            "mask": base,
            "gradient": base,
            "clrp": base,
            "emptyspace": base,
            "filters": ["--model", str(model_path), "--types", str(types_path)],
            "additivity": base,
            "compare": base,
            "train-toy": ["--dataset", str(manifest), "--types", str(types_path), "--arch", "tiny",
                          "--lr", "0.05", "--iters", "25", "--seed", "5", "--grid-dim", "8", "--grid-res", "1"],
        }
        for command, args in plans.items():
            stdouts, file_sets = [], []
            for run_idx, threads in enumerate(("1", "2")):
                monkeypatch.setenv("VOXATTR_THREADS", threads)
                out = tmp_path / f"{command.replace('-', '_')}_{run_idx}"
                if command == "score":
                    code = run([command, *args])
                elif command == "train-toy":
                    out.mkdir()
                    code = run([command, *args, "--out", str(out / "model.vxm")])
                else:
                    code = run([command, *args, "--out", str(out)])
                assert code == 0, command
                stdouts.append(capsys.readouterr().out)
                if command != "score":
                    file_sets.append({p.name: p.read_bytes() for p in out.iterdir()})
            assert stdouts[0] == stdouts[1], command
            if file_sets:
                assert file_sets[0].keys() == file_sets[1].keys(), command
                for name in file_sets[0]:
                    assert file_sets[0][name] == file_sets[1][name], f"{command}/{name}"
