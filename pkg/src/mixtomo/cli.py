"""Command-line front end: ``mixtomo {gen-data,train,eval,study}``.

Exit codes: 0 success, 2 usage or input error, 3 runtime failure. Outputs are
write-once; ``--force`` allows overwriting. Every command writes a JSON
manifest next to its main output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .lab import StudyConfig, child_seeds, evaluate_model, plan, projective_metrics, run_study
from .measure import Dataset, Povm4, ProjectiveEnsemble, sample_povm, sample_projective
from .ndo import NdoModel
from .povmnqs import PovmNqsModel
from .qcore import (
    MetricsRecord,
    depolarize,
    ground_state,
    load_hamiltonian,
    tfim_hamiltonian,
    thermal_state,
)
from .train import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Bad flags or inputs; maps to exit code 2."""


# ---------------------------------------------------------------- helpers

def read_config(path: str | None) -> dict:
    """TOML or JSON, chosen by extension (``.json`` is JSON, anything else TOML)."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except ValueError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc


def claim_outputs(paths, force: bool) -> None:
    """Refuse to touch existing files unless forced; called before any work starts."""
    existing = [str(p) for p in paths if p is not None and Path(p).exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing)} (use --force)")
    for p in paths:
        if p is not None:
            Path(p).parent.mkdir(parents=True, exist_ok=True)


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(path: Path, command: str, args, **extra) -> None:
    data = {
        "command": command,
        "version": __version__,
        "argv": args.argv,
        "seed": args.seed,
        **extra,
    }
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (tuple, set)):
        return list(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def target_block(args) -> dict:
    """Target description from gen-data style flags."""
    if args.model == "tfim":
        if args.n is None:
            raise UsageError("--n is required for tfim targets")
        block = {"model": "tfim", "n": args.n, "h": args.h}
    else:
        if not args.hamiltonian:
            raise UsageError("--hamiltonian is required for file targets")
        block = {"model": "file", "hamiltonian": str(args.hamiltonian)}
    if args.ground or args.depol is not None:
        block.update(ground=True, depol=float(args.depol or 0.0))
    elif args.beta is not None:
        block["beta"] = float(args.beta)
    else:
        raise UsageError("give --beta or --ground/--depol")
    return block


def target_from_block(block: dict):
    """Exact ``(rho, H)`` for a target block."""
    try:
        if block["model"] == "tfim":
            H = tfim_hamiltonian(int(block["n"]), float(block.get("h", 1.0)))
        elif block["model"] == "file":
            path = Path(block["hamiltonian"])
            if not path.is_file():
                raise UsageError(f"hamiltonian file not found: {path}")
            H = load_hamiltonian(path.read_text(encoding="utf-8"))
        else:
            raise UsageError(f"unknown target model {block['model']!r}")
    except KeyError as exc:
        raise UsageError(f"target spec lacks {exc}") from exc
    if block.get("ground"):
        return depolarize(ground_state(H), float(block.get("depol", 0.0))), H
    if "beta" not in block:
        raise UsageError("target spec needs beta or ground")
    return thermal_state(H, float(block["beta"])), H


def parse_target_spec(spec: str) -> dict:
    """A manifest file with a ``target`` block, or inline ``model=tfim,n=2,h=1,beta=10``."""
    p = Path(spec)
    if p.is_file():
        data = json.loads(p.read_text(encoding="utf-8"))
        if "target" not in data:
            raise UsageError(f"{spec} has no target block")
        return data["target"]
    block: dict = {}
    for part in spec.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            if part.strip() == "ground":
                block["ground"] = True
                continue
            raise UsageError(f"cannot parse target spec item {part!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        block[k] = v if k in ("model", "hamiltonian") else float(v)
    block.setdefault("model", "tfim")
    if block["model"] == "tfim" and "n" in block:
        block["n"] = int(block["n"])
    return block


def load_model(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"model file not found: {path}")
    data = json.loads(p.read_text(encoding="utf-8"))
    scheme = data.get("scheme")
    if scheme == "ndo":
        return NdoModel.from_dict(data)
    if scheme == "povmnqs":
        return PovmNqsModel.from_dict(data)
    raise UsageError(f"unknown model scheme {scheme!r} in {path}")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    block = target_block(args)
    if args.shots < 1:
        raise UsageError("--shots must be positive")
    out = Path(args.out)
    claim_outputs([out, manifest_path(out)], args.force)
    rho, _ = target_from_block(block)
    n = int(round(np.log2(rho.shape[0])))
    t0 = time.perf_counter()
    if args.scheme == "projective":
        ds = sample_projective(rho, ProjectiveEnsemble(n), args.shots, args.seed)
    else:
        ds = sample_povm(rho, Povm4(n), args.shots, args.seed)
    ds.write(out)
    write_manifest(manifest_path(out), "gen-data", args, target=block, scheme=args.scheme,
                   shots_per_basis=args.shots, total_shots=ds.size, outputs=[str(out)],
                   wall_seconds=time.perf_counter() - t0)
    _say(args, f"wrote {ds.size} records to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data_path = Path(args.data)
    if not data_path.is_file():
        raise UsageError(f"dataset not found: {args.data}")
    raw = read_config(args.config)
    raw = raw.get("train", raw)
    try:
        cfg = TrainConfig.from_mapping(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if "seed" not in raw:
        cfg = replace(cfg, seed=child_seeds(args.seed, (2,), 1)[0])
    out, hist = Path(args.out), Path(args.history)
    claim_outputs([out, hist, manifest_path(out)], args.force)
    ds = Dataset.read(data_path)
    expected = {"ndo": "projective", "povmnqs": "povm4"}[args.scheme]
    if ds.scheme != expected:
        raise UsageError(f"{args.scheme} needs {expected} data, {args.data} holds {ds.scheme}")
    if args.scheme == "ndo":
        model = NdoModel(ds.n_qubits, ProjectiveEnsemble(ds.n_qubits, ds.bases))
    else:
        model = PovmNqsModel(ds.n_qubits)
    if cfg.batch_size > ds.size:
        raise UsageError(f"batch size {cfg.batch_size} exceeds dataset size {ds.size}")
    theta0 = model.init_params(np.random.default_rng(child_seeds(args.seed, (1,), 1)[0]))
    res = train(model, theta0, ds, cfg)
    out.write_text(json.dumps(model.to_dict(res.theta)) + "\n", encoding="utf-8")
    hist.write_text(res.history_csv(timing=args.timing), encoding="utf-8")
    data_manifest = manifest_path(data_path)
    target = None
    if data_manifest.is_file():
        target = json.loads(data_manifest.read_text(encoding="utf-8")).get("target")
    write_manifest(manifest_path(out), "train", args, config=cfg.to_dict(), scheme=args.scheme,
                   inputs=[str(data_path)], outputs=[str(out), str(hist)], target=target,
                   total_shots=ds.size, iterations=res.iterations,
                   best_loss=res.state.best_loss, full_grad_evals=res.state.full_grad_evals,
                   wall_seconds=res.wall_seconds)
    _say(args, f"trained {args.scheme} for {res.iterations} iterations, best loss {res.state.best_loss:.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    block = parse_target_spec(args.target_spec)
    rho, H = target_from_block(block)
    if args.hamiltonian:
        hp = Path(args.hamiltonian)
        if not hp.is_file():
            raise UsageError(f"hamiltonian file not found: {hp}")
        H = load_hamiltonian(hp.read_text(encoding="utf-8"))
        if H.n_qubits != int(round(np.log2(rho.shape[0]))):
            raise UsageError("hamiltonian and target act on different qubit counts")
    out = Path(args.out) if args.out else None
    claim_outputs([out, manifest_path(out) if out else None], args.force)
    n = int(round(np.log2(rho.shape[0])))
    if args.model == "exact":
        metrics: MetricsRecord = projective_metrics(rho, rho, H)
        kind = "exact"
    else:
        model, theta = load_model(args.model)
        if model.n != n:
            raise UsageError(f"model acts on {model.n} qubits, target on {n}")
        metrics = evaluate_model(model, theta, rho, H)
        kind = model.kind
    payload = {"model": kind, "target": block, **metrics.as_dict()}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        out.write_text(text, encoding="utf-8")
        write_manifest(manifest_path(out), "eval", args, target=block, inputs=[args.model],
                       outputs=[str(out)])
    if not args.quiet or not out:
        sys.stdout.write(text)
    return EXIT_OK


def _study_config(args) -> StudyConfig:
    raw = read_config(args.config)
    raw.setdefault("study", args.study)
    if raw["study"] != args.study:
        raise UsageError(f"config describes study {raw['study']!r}, not {args.study!r}")
    if args.seed_given or "seed" not in raw:
        raw["seed"] = args.seed
    if args.instances is not None:
        raw["instances"] = args.instances
    if args.timing:
        raw["timing"] = True
    if args.n is not None:
        key = {"bound": ("bound", "n_values"), "valley": ("valley", "n"),
               "orders": ("orders", "n")}.get(args.study, ("target", "n"))
        section = raw.setdefault(key[0], {})
        section[key[1]] = [args.n] if key[1] == "n_values" else args.n
    if args.pairs is not None:
        raw.setdefault("bound", {})["pairs"] = args.pairs
    try:
        return StudyConfig.from_mapping(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_study(args) -> int:
    cfg = _study_config(args)
    out_dir = Path(args.out_dir)
    manifest = out_dir / f"{cfg.study}_manifest.json"
    if args.dry_run:
        claim_outputs([manifest], args.force)
        info = plan(cfg)
        write_manifest(manifest, "study", args, dry_run=True, config=cfg.to_dict(),
                       plan=info, outputs=[])
        _say(args, f"planned {info['n_units']} units, {info['total_shots']} total shots -> {manifest}")
        return EXIT_OK
    names = {k: out_dir / f"{cfg.study}_{k}" for k in ("raw.csv", "fits.csv", "summary.csv", "report.json")}
    claim_outputs([*names.values(), manifest], args.force)
    t0 = time.perf_counter()
    result = run_study(cfg, threads=args.threads)
    names["raw.csv"].write_text(result.raw_csv(), encoding="utf-8")
    names["fits.csv"].write_text(result.fit_csv(), encoding="utf-8")
    names["summary.csv"].write_text(result.summary_csv(), encoding="utf-8")
    names["report.json"].write_text(json.dumps(result.report, indent=2, sort_keys=True,
                                               default=_json_default) + "\n", encoding="utf-8")
    outputs = [str(p) for p in names.values()]
    if args.svg:
        from .plotting import render

        outputs += [str(p) for p in render(result, out_dir)]
    write_manifest(manifest, "study", args, config=cfg.to_dict(), outputs=outputs,
                   report=result.report, threads=args.threads, wall_seconds=time.perf_counter() - t0)
    _say(args, json.dumps(result.report, sort_keys=True, default=_json_default))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _threads_default() -> int:
    env = os.environ.get("MIXTOMO_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes for studies (default $MIXTOMO_THREADS or 1)")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS,
                        help="overwrite existing outputs")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="mixtomo", parents=[common],
                                description="Neural mixed-state tomography laboratory.")
    p.add_argument("--version", action="version", version=f"mixtomo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="sample a measurement dataset")
    g.add_argument("--model", choices=("tfim", "file"), default="tfim")
    g.add_argument("--n", type=int)
    g.add_argument("--h", type=float, default=1.0)
    g.add_argument("--hamiltonian")
    g.add_argument("--beta", type=float)
    g.add_argument("--ground", action="store_true")
    g.add_argument("--depol", type=float)
    g.add_argument("--scheme", choices=("projective", "povm4"), required=True)
    g.add_argument("--shots", type=int, required=True, help="shots per basis")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    t.add_argument("--scheme", choices=("ndo", "povmnqs"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--history", required=True)
    t.add_argument("--timing", action="store_true", help="record wall-clock seconds in the history")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="metrics of a model against an exact target")
    e.add_argument("--model", required=True, help="model JSON, or 'exact' to score the target itself")
    e.add_argument("--target-spec", required=True,
                   help="manifest with a target block, or inline e.g. model=tfim,n=2,h=1,beta=10")
    e.add_argument("--hamiltonian", help="Pauli-string file used for the energy")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("study", parents=[common], help="run a lab study")
    s.add_argument("--study", choices=("scaling", "cv", "valley", "bound", "orders"), required=True)
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--svg", action="store_true", help="render SVG figures next to the CSVs")
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--n", type=int)
    s.add_argument("--pairs", type=int)
    s.add_argument("--instances", type=int)
    s.add_argument("--timing", action="store_true", help="keep wall-clock seconds in the raw CSV")
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    args.seed_given = hasattr(args, "seed")
    args.seed = getattr(args, "seed", 0)
    args.threads = getattr(args, "threads", None) or _threads_default()
    args.force = getattr(args, "force", False)
    args.quiet = getattr(args, "quiet", False)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mixtomo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - the exit-code contract needs a catch-all
        print(f"mixtomo: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
