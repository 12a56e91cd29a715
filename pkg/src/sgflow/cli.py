"""Command-line surface: verify, train, sample, audit, benchmark, export.

Exit codes: 0 success, 1 check/verification failure, 2 usage or config error.
Primary outputs (checkpoints, structures, CSVs) are byte-reproducible for a
fixed seed; only the run manifest carries a timestamp.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import evalx, flow, io as sgio, plots, synthbench
from .field import Backbone, BackboneConfig
from .flow import TrainConfig
from .sgdata import ConsistencyError, GroupDataset, ParseError, default_dataset_path, load_dataset
from .symmetry import WyckoffAssignment


def _load_groups(data: str | None) -> GroupDataset:
    path = Path(data) if data else default_dataset_path()
    return load_dataset(path)


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fail(msg: str, code: int) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
def main() -> None:
    """Space-group conditioned flow matching for crystals."""


# -- verify ------------------------------------------------------------------


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Group data file (defaults to the bundled dataset).")
def verify(data: str | None) -> None:
    """Run group-axiom, orbit, and Wyckoff consistency checks on a data file."""
    try:
        ds = _load_groups(data)
    except (ParseError, ConsistencyError) as exc:
        _fail(str(exc), 1)
    except FileNotFoundError as exc:
        _fail(str(exc), 2)
    for dim, number in sorted(ds.keys()):
        g = ds.group(number, dim)
        labels = ",".join(p.label for p in ds.positions(number, dim))
        click.echo(f"ok dim={dim} group={number} {g.name} |G|={g.order} wyckoffs={labels}")
    click.echo(f"{len(list(ds.keys()))} groups verified")


# -- dataset -----------------------------------------------------------------


def _dataset_dir_write(out: Path, splits, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    index = {"seed": seed, "splits": {}}
    i = 0
    for split, examples in splits.items():
        names = []
        for ex in examples:
            name = f"{split}_{i:05d}.json"
            sgio.save_structure(out / name, ex.crystal, ex.group.number,
                                ex.group.dimension, ex.assignment.labels(),
                                seed=seed, extra={"h": ex.h})
            names.append(name)
            i += 1
        index["splits"][split] = names
    (out / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")


def _dataset_dir_read(root: Path, groups: GroupDataset) -> dict[str, list[flow.TrainingExample]]:
    index = json.loads((root / "index.json").read_text())
    cache: dict[tuple, tuple] = {}
    splits: dict[str, list[flow.TrainingExample]] = {}
    for split, names in index["splits"].items():
        examples = []
        for name in names:
            crystal, meta = sgio.load_structure(root / name)
            key = (meta["dimension"], meta["group"], tuple(meta["wyckoffs"]))
            if key not in cache:
                group = groups.group(meta["group"], meta["dimension"])
                assignment = WyckoffAssignment(tuple(
                    groups.position(meta["group"], lab, meta["dimension"])
                    for lab in meta["wyckoffs"]))
                cache[key] = (group, assignment, assignment.certificate(group))
            group, assignment, cert = cache[key]
            h = json.loads((root / name).read_text()).get("h", crystal.A.shape[1])
            examples.append(flow.TrainingExample(
                crystal=crystal, group=group, assignment=assignment,
                certificate=cert, h=h))
        splits[split] = examples
    return splits


@main.command("make-data")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--n-per-template", type=int, default=112)
def make_data(out: str, seed: int, n_per_template: int) -> None:
    """Generate the synthetic template dataset with 60/20/20 splits."""
    splits = synthbench.make_dataset(n_per_template=n_per_template, seed=seed)
    out_path = Path(out)
    _dataset_dir_write(out_path, splits, seed)
    sgio.write_manifest(out_path / "manifest.json", "make-data", seed,
                        {"n_per_template": n_per_template})
    sizes = {k: len(v) for k, v in splits.items()}
    click.echo(f"wrote {sum(sizes.values())} structures to {out} {sizes}")


# -- training ----------------------------------------------------------------


_CONFIG_KEYS = set(TrainConfig.__dataclass_fields__)


def _read_train_config(path: str) -> tuple[TrainConfig, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"config {path}: {exc}", 2)
    cfg_keys = {k: v for k, v in doc.items() if k in _CONFIG_KEYS}
    extra = {k: v for k, v in doc.items() if k not in _CONFIG_KEYS}
    try:
        cfg = TrainConfig(**cfg_keys)
    except (TypeError, ValueError) as exc:
        _fail(f"config {path}: {exc}", 2)
    if cfg.mode == "csp" and "lambda_A" in doc:
        click.echo("warning: lambda_A is ignored in structure-prediction mode", err=True)
    return cfg, extra


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, file_okay=False), default=None,
              help="Dataset directory (defaults to a freshly generated synthetic set).")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def train(config: str, data: str | None, seed: int | None, out: str) -> None:
    """Train the vector field; writes checkpoint, metrics CSV, and loss figure."""
    cfg, extra = _read_train_config(config)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if data is not None:
        splits = _dataset_dir_read(Path(data), _load_groups(None))
    else:
        splits = synthbench.make_dataset(
            n_per_template=int(extra.get("n_per_template", 112)),
            seed=int(extra.get("dataset_seed", 0)))
    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    sgio.write_manifest(out_path / "manifest.json", "train", cfg.seed, cfg.to_dict(),
                        input_files=[config])
    backbone, metrics = flow.train(splits["train"], cfg)
    sgio.save_checkpoint(out_path / "checkpoint.json", backbone, cfg)
    _write_csv(out_path / "metrics.csv",
               ["epoch", "loss_k", "loss_F", "loss_A", "total", "lr"], metrics)
    plots.plot_training(metrics, out_path / "metrics.png")
    if metrics:
        last = metrics[-1]
        click.echo(f"epoch {last[0]}: total {last[4]:.6f}")
    click.echo(f"checkpoint written to {out_path / 'checkpoint.json'}")


# -- sampling ----------------------------------------------------------------


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "conditioning", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Conditioning file (JSON lines).")
@click.option("--count", type=int, default=None,
              help="Limit to the first COUNT conditioning entries.")
@click.option("--seed", type=int, default=0)
@click.option("--steps", type=int, default=None, help="Overrides the config step count.")
@click.option("--tol", type=float, default=1e-6, help="Symmetry check tolerance.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def sample(checkpoint: str, conditioning: str, count: int | None, seed: int,
           steps: int | None, tol: float, out: str) -> None:
    """Generate one structure per conditioning entry, plus an audit CSV."""
    backbone, cfg = sgio.load_checkpoint(checkpoint)
    if cfg is None:
        cfg = TrainConfig()
    if steps is not None:
        cfg = replace(cfg, steps=steps)
    try:
        entries = sgio.load_conditioning(conditioning)
    except ValueError as exc:
        _fail(str(exc), 2)
    if count is not None:
        entries = entries[:count]
    groups = _load_groups(None)
    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    sgio.write_manifest(out_path / "manifest.json", "sample", seed, cfg.to_dict(),
                        input_files=[checkpoint, conditioning])
    rng = np.random.default_rng(seed)
    audit_rows = []
    h = 2 ** backbone.config.a_out if cfg.mode == "dng" else backbone.config.a_in
    for idx, entry in enumerate(entries):
        try:
            group = groups.group(entry.group, entry.dimension)
            positions = [groups.position(entry.group, lab, entry.dimension)
                         for lab in entry.wyckoffs]
        except KeyError as exc:
            _fail(f"entry {idx}: unknown group/position {exc}", 2)
        fixed_A = None
        if cfg.mode == "csp":
            if entry.atoms is None:
                _fail(f"entry {idx}: structure-prediction mode needs atom types", 2)
            n = sum(p.multiplicity for p in positions)
            if len(entry.atoms) != n:
                _fail(f"entry {idx}: {len(entry.atoms)} atom types for {n} sites", 2)
            fixed_A = np.eye(backbone.config.a_in)[entry.atoms]
        crystal, assignment, _ = flow.sample(
            backbone, group, positions, cfg, rng, h=h, fixed_A=fixed_A,
            certify_tol=tol)
        name = f"structure_{idx:05d}.json"
        sgio.save_structure(out_path / name, crystal, group.number, group.dimension,
                            assignment.labels(), seed=seed)
        rep = evalx.audit(crystal, group, assignment, tol=tol)
        audit_rows.append((name, group.number, rep.symmetric, rep.constructable,
                           rep.valid, rep.orbit_type_constant,
                           f"{rep.max_symmetry_residual:.3e}"))
    _write_csv(out_path / "audit.csv",
               ["file", "group", "symmetric", "constructable", "valid",
                "orbit_types_constant", "max_residual"], audit_rows)
    passed = sum(1 for r in audit_rows if r[2] and r[3] and r[4] and r[5])
    click.echo(f"{len(audit_rows)} structures, {passed} pass all audits")


@main.command()
@click.argument("structures", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", type=float, default=1e-6)
def audit(structures: tuple[str, ...], tol: float) -> None:
    """Audit structure files; exit 1 if any check fails."""
    groups = _load_groups(None)
    failures = 0
    for path in structures:
        crystal, meta = sgio.load_structure(path)
        group = groups.group(meta["group"], meta["dimension"])
        assignment = WyckoffAssignment(tuple(
            groups.position(meta["group"], lab, meta["dimension"])
            for lab in meta["wyckoffs"]))
        rep = evalx.audit(crystal, group, assignment, tol=tol)
        status = "pass" if rep.passed else "FAIL"
        click.echo(f"{status} {path} symmetric={rep.symmetric} "
                   f"constructable={rep.constructable} valid={rep.valid} "
                   f"residual={rep.max_symmetry_residual:.3e}")
        failures += not rep.passed
    if failures:
        sys.exit(1)


# -- benchmarks --------------------------------------------------------------


@main.command("bench-ga")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--min-order", type=int, default=2, help="Skip groups smaller than this.")
@click.option("--repeats", type=int, default=3)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def bench_ga(data: str | None, seed: int, min_order: int, repeats: int, out: str) -> None:
    """Compare single-call vs per-element group averaging (counts, time, error)."""
    from .field import naive_ga, symmetrize
    from .lattice import mask_of
    from .prior import sample as prior_sample

    groups = _load_groups(data)
    rng = np.random.default_rng(seed)
    rows = []
    for dim, number in sorted(groups.keys()):
        if dim != 3:
            continue
        group = groups.group(number, dim)
        if group.order < min_order:
            continue
        # largest orbit keeps n meaningful without exploding the edge count
        pos = max(groups.positions(number, dim), key=lambda p: p.multiplicity)
        ps = prior_sample(group, [pos], rng, h=2,
                          atom_types=np.tile([1.0, 0.0], (pos.multiplicity, 1)))
        backbone = Backbone(BackboneConfig(a_in=2, a_out=1), rng=rng)
        k_mask = mask_of(group).m
        t = 0.5
        diff = 0.0
        t_eff = t_naive = float("inf")
        for _ in range(repeats):
            backbone.calls = 0
            t0 = time.perf_counter()
            eff = symmetrize(backbone, ps.crystal, t, ps.certificate, k_mask=k_mask)
            t_eff = min(t_eff, time.perf_counter() - t0)
            eff_calls = backbone.calls
            backbone.calls = 0
            t0 = time.perf_counter()
            ref = naive_ga(backbone, ps.crystal, t, group, k_mask=k_mask)
            t_naive = min(t_naive, time.perf_counter() - t0)
            naive_calls = backbone.calls
            diff = max(diff,
                       np.abs(eff.u_F - ref.u_F).max(),
                       np.abs(eff.u_k - ref.u_k).max(),
                       np.abs(eff.u_A - ref.u_A).max())
        rows.append((group.name, group.order, ps.crystal.n, t_eff, t_naive,
                     eff_calls, naive_calls, f"{diff:.3e}"))
        click.echo(f"{group.name}: |G|={group.order} n={ps.crystal.n} "
                   f"speedup x{t_naive / t_eff:.1f} maxdiff {diff:.2e}")
    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    _write_csv(out_path / "bench_ga.csv",
               ["group", "order", "n", "single_call_s", "per_element_s",
                "single_calls", "per_element_calls", "max_abs_diff"], rows)
    plots.plot_ga_bench(rows, out_path / "bench_ga.png")


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seed", "seeds", type=int, multiple=True, default=(0, 1, 2))
@click.option("--out", type=click.Path(file_okay=False), required=True)
def ablation(config: str, seeds: tuple[int, ...], out: str) -> None:
    """Train the ablation grid and report held-out match rates."""
    cfg, extra = _read_train_config(config)
    splits = synthbench.make_dataset(
        n_per_template=int(extra.get("n_per_template", 112)),
        seed=int(extra.get("dataset_seed", 0)))
    rows = synthbench.run_ablation(splits, cfg, seeds=seeds)
    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    sgio.write_manifest(out_path / "manifest.json", "ablation", None, cfg.to_dict(),
                        input_files=[config])
    _write_csv(out_path / "ablation.csv",
               ["name", "equivariant", "prior", "seed", "match_rate", "rmse"], rows)
    plots.plot_ablation(rows, out_path / "ablation.png")
    for name, _, _, seed, mr, rmse in rows:
        click.echo(f"{name} seed={seed}: MR {mr:.1f}% rmse {rmse:.4f}")


@main.command("steps-sweep")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--steps", "step_counts", type=int, multiple=True,
              default=(1, 10, 50, 100, 500))
@click.option("--seed", type=int, default=100)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def steps_sweep(checkpoint: str, step_counts: tuple[int, ...], seed: int, out: str) -> None:
    """Evaluate a trained checkpoint at several Euler step counts."""
    backbone, cfg = sgio.load_checkpoint(checkpoint)
    if cfg is None:
        cfg = TrainConfig()
    splits = synthbench.make_dataset()
    rows = synthbench.run_steps_sweep(splits, backbone, cfg,
                                      step_counts=step_counts, eval_seed=seed)
    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    _write_csv(out_path / "steps_sweep.csv", ["steps", "match_rate", "rmse"], rows)
    plots.plot_steps_sweep(rows, out_path / "steps_sweep.png")
    for n_steps, mr, rmse in rows:
        click.echo(f"N={n_steps}: MR {mr:.1f}% rmse {rmse:.4f}")


# -- export ------------------------------------------------------------------


@main.command()
@click.argument("structures", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["cif", "csv", "json"]), default="cif")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def export(structures: tuple[str, ...], fmt: str, out: str) -> None:
    """Convert structure files to CIF or a flat CSV."""
    from .lattice import cell_parameters, k_to_L

    out_path = Path(out)
    out_path.mkdir(parents=True, exist_ok=True)
    csv_rows = []
    for path in structures:
        crystal, meta = sgio.load_structure(path)
        stem = Path(path).stem
        if fmt == "cif":
            sgio.write_cif(out_path / f"{stem}.cif", crystal, meta["group"])
        elif fmt == "json":
            sgio.save_structure(out_path / f"{stem}.json", crystal, meta["group"],
                                meta["dimension"], meta["wyckoffs"], seed=meta.get("seed"))
        else:
            lengths, angles = cell_parameters(k_to_L(crystal.k))
            species = np.argmax(crystal.A, axis=1)
            for i, row in enumerate(crystal.F):
                csv_rows.append((stem, meta["group"], sgio.species_symbol(int(species[i])),
                                 row[0], row[1], row[2], *lengths, *angles))
    if fmt == "csv":
        _write_csv(out_path / "structures.csv",
                   ["structure", "group", "species", "x", "y", "z",
                    "a", "b", "c", "alpha", "beta", "gamma"], csv_rows)
    click.echo(f"exported {len(structures)} structure(s) as {fmt}")


if __name__ == "__main__":
    main()
