"""Command-line entry point: ``lcool <command> [flags]``.

Every command writes its outputs plus ``manifest.json`` (resolved config,
input/output hashes) into ``--out``; ``lcool replay --manifest M --out D``
re-executes a run from its manifest alone.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical
divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bench import (
    DEFAULT_ALPHAS,
    DEFAULT_N_STEPS,
    DEFAULT_TEMPERATURES,
    SweepGrid,
    select_best,
    sweep,
    verify_temperature,
    write_sweep_csv,
    write_temperature_csv,
)
from .exceptions import LCoolError, NumericalError
from .langevin import CoolingConfig, FringeDetector, cool, detect_fringe, fringe_score
from .metrics import score_angles
from .nn import file_sha256
from .rng import Rng
from .score import CycleScore, CycleScoreConfig, DaeModel, GaussianDensity, train_dae
from .toy_data import (
    DEFAULT_TEST_POINTS,
    Dataset,
    ToyDatasetSpec,
    generate_source,
    generate_target,
    load_dataset,
    make_offmanifold_tests,
    save_dataset,
)
from .translate import (
    ToyCycleGan,
    run_lcool_pipeline,
    train_cyclegan_toy,
    write_pipeline_csv,
    write_trail_csv,
    write_trails_combined,
)

log = logging.getLogger("lcool")

OUTPUT_DIR_ENV = "LCOOL_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- helpers ----------------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _points(text):
    """``"x1,x2;x1,x2"`` -> list of pairs."""
    try:
        pts = [tuple(float(c) for c in p.split(",")) for p in str(text).split(";") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x1,x2;x1,x2;...', got {text!r}")
    if any(len(p) != 2 for p in pts):
        raise argparse.ArgumentTypeError("every test point needs exactly two coordinates")
    return pts


def _load_cyclegan(path) -> ToyCycleGan:
    return ToyCycleGan.from_dict(json.loads(Path(path).read_text()))


def _save_cyclegan(model: ToyCycleGan, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


def _cooling_cfg(c) -> CoolingConfig:
    return CoolingConfig(c["alpha"], c["temperature"], c["n_steps"], c["seed"])


def _detector(c) -> FringeDetector:
    if c.get("fringe_threshold") is not None:
        return FringeDetector(threshold=c["fringe_threshold"])
    return FringeDetector(proportion=c["fringe_proportion"])


def _tests(c):
    if c.get("tests"):
        return load_dataset(c["tests"], "test")
    return make_offmanifold_tests(c.get("test_points"))


def _score_provider(c, cyclegan=None):
    if c.get("score", "dae") == "cycle":
        if cyclegan is None:
            cyclegan = _load_cyclegan(c["cyclegan"])
        gamma = c.get("gamma")
        return CycleScore(cyclegan.g, cyclegan.f, CycleScoreConfig() if gamma is None else CycleScoreConfig(gamma))
    if not c.get("dae"):
        raise ValueError("--dae checkpoint is required for the DAE score")
    return DaeModel.load(c["dae"])


# -- commands ---------------------------------------------------------------
# Each takes the resolved config dict and a staging directory and returns a
# dict of extra facts to record in the manifest.


def cmd_gen_data(c, out: Path):
    n, seed = c["n_samples"], c["seed"]
    save_dataset(generate_source(ToyDatasetSpec(n, "source", seed)), out / "source.csv")
    # target stream is keyed off the same seed but must not reuse the source draws
    save_dataset(generate_target(ToyDatasetSpec(n, "target", seed + 1)), out / "target.csv")
    save_dataset(make_offmanifold_tests(c.get("test_points")), out / "tests.csv")
    return {}


def cmd_train_dae(c, out: Path):
    data = load_dataset(c["data"], "source")
    model = train_dae(
        data, sigma_sq=c["sigma"] ** 2, epochs=c["epochs"], learning_rate=c["lr"],
        rng=Rng(c["seed"]), hidden=c["hidden"], batch_size=c["batch_size"],
    )
    model.save(out / "dae.json")
    return {"sigma_sq": model.sigma_sq}


def cmd_train_cyclegan(c, out: Path):
    src = load_dataset(c["source"], "source")
    tgt = load_dataset(c["target"], "target")
    model = train_cyclegan_toy(
        src, tgt, steps=c["steps"], lr=c["lr"], lambda_cycle=c["lambda_cycle"],
        rng=Rng(c["seed"]), hidden=c["hidden"], batch_size=c["batch_size"],
    )
    _save_cyclegan(model, out / "cyclegan.json")
    return {
        "mean_cycle_error_source": float(model.cycle_error(src.points).mean()),
        "history": model.history,
    }


def _cool_flagged(c):
    score = _score_provider(c)
    data = load_dataset(c["input"], "test")
    scores = np.atleast_1d(fringe_score(score, data.points))
    mask, xi = detect_fringe(scores, _detector(c))
    cfg = _cooling_cfg(c)
    trails = {int(i): cool(data.points[i], score, cfg, int(i)) for i in np.flatnonzero(mask)}
    return data, mask, xi, trails


def cmd_cool(c, out: Path):
    data, mask, xi, trails = _cool_flagged(c)
    cooled = data.points.copy()
    for i, t in trails.items():
        cooled[i] = t.end
    save_dataset(Dataset(cooled, "test"), out / "cooled.csv")
    return {"fringe_threshold": xi, "n_cooled": int(mask.sum()), "n_samples": len(mask)}


def cmd_export_trails(c, out: Path):
    data, mask, xi, trails = _cool_flagged(c)
    if c["combined"]:
        write_trails_combined(list(trails.values()), out / "trails.csv")
    else:
        for i, t in trails.items():
            write_trail_csv(t, out / f"trail_{i:04d}.csv")
    return {"fringe_threshold": xi, "n_cooled": int(mask.sum()), "n_samples": len(mask)}


def cmd_pipeline(c, out: Path):
    gan = _load_cyclegan(c["cyclegan"])
    score = _score_provider(c, gan)
    tests = _tests(c)
    results = run_lcool_pipeline(gan, score, _detector(c), _cooling_cfg(c), tests)
    write_pipeline_csv(results, out / "pipeline.csv")
    (out / "trails").mkdir()
    for r in results:
        if r.trail is not None:
            write_trail_csv(r.trail, out / "trails" / f"trail_{r.sample_id:04d}.csv")
    n_cooled = sum(r.fringe for r in results)
    extra = {
        "n_samples": len(results),
        "n_cooled": int(n_cooled),
        "all_cooled": n_cooled == len(results),
        "mean_src_residual_before": float(np.mean([r.src_residual_before for r in results])),
        "mean_src_residual_after": float(np.mean([r.src_residual_after for r in results])),
        "mean_tgt_residual_baseline": float(np.mean([r.tgt_residual_baseline for r in results])),
        "mean_tgt_residual_cooled": float(np.mean([r.tgt_residual_cooled for r in results])),
    }
    if c.get("dae"):
        dae = DaeModel.load(c["dae"])
        gamma = c.get("gamma")
        cyc = CycleScore(gan.g, gan.f, CycleScoreConfig() if gamma is None else CycleScoreConfig(gamma))
        angles = score_angles(dae, cyc, np.array([r.original for r in results]))
        extra["dae_vs_cycle_first_step_angle_deg"] = [float(a) for a in angles]
    (out / "summary.json").write_text(json.dumps(extra, indent=2))
    return extra


def cmd_sweep(c, out: Path):
    for key in ("dae", "cyclegan"):
        if not c.get(key) or not Path(c[key]).is_file():
            raise FileNotFoundError(f"sweep needs an existing --{key} checkpoint, got {c.get(key)!r}")
    gan = _load_cyclegan(c["cyclegan"])
    score = _score_provider(c, gan)
    grid = SweepGrid(tuple(c["temperatures"]), tuple(c["alphas"]), tuple(c["n_steps"]))
    rows = sweep(grid, gan, score, _detector(c), _tests(c), seed=c["seed"])
    write_sweep_csv(rows, out / "sweep.csv")
    best = select_best(rows)
    summary = {
        "n_cells": len(rows),
        "best_cell": best.cell,
        "best": {"alpha": best.alpha, "temperature": best.temperature, "n_steps": best.n_steps,
                 "tgt_residual_cooled_mean": best.tgt_residual_cooled_mean},
        "runtime_s": {str(r.cell): r.runtime_s for r in rows},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return {"n_cells": len(rows), "best_cell": best.cell}


def cmd_verify_temperature(c, out: Path):
    dim = c["dim"]
    density = GaussianDensity(np.zeros(dim), np.ones(dim))
    rows = verify_temperature(
        density, c["betas"], c["chain_length"], c["seed"],
        alpha=c["alpha"], n_chains=c["n_chains"], burn_in=c["burn_in"], rel_tol=c["rel_tol"],
    )
    write_temperature_csv(rows, out / "verify_temperature.csv")
    summary = {
        "all_passed": all(r.passed for r in rows),
        "rows": [{"beta": r.beta, "var": r.var, "expected_var": r.expected_var,
                  "max_rel_error": r.max_rel_error, "heating": r.heating, "passed": r.passed}
                 for r in rows],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return {"all_passed": summary["all_passed"]}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-dae": cmd_train_dae,
    "train-cyclegan": cmd_train_cyclegan,
    "cool": cmd_cool,
    "pipeline": cmd_pipeline,
    "export-trails": cmd_export_trails,
    "sweep": cmd_sweep,
    "verify-temperature": cmd_verify_temperature,
}

INPUT_KEYS = ("data", "source", "target", "dae", "cyclegan", "input", "tests")


# -- parser -----------------------------------------------------------------


def _add_cooling(p):
    p.add_argument("--alpha", type=float, default=0.005, help="step size")
    p.add_argument("--temperature", type=float, default=0.001, help="T = 1/beta; noise variance is 2*alpha*T")
    p.add_argument("--n-steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fringe-proportion", type=float, default=1.0,
                   help="fraction of samples (largest score norm first) to cool")
    g.add_argument("--fringe-threshold", type=float, default=None, help="explicit score-norm cut-off")


def _add_score(p, need_cyclegan=False):
    p.add_argument("--dae", help="DAE checkpoint (JSON)")
    p.add_argument("--cyclegan", required=need_cyclegan, help="CycleGAN checkpoint (JSON)")
    p.add_argument("--score", choices=("dae", "cycle"), default="dae")
    p.add_argument("--gamma", type=float, default=None, help="cycle score scale (default 1/0.3**2)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcool", description="Langevin cooling of fringe samples before translation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_DIR_ENV} or ./lcool-out/<command>)")
        p.add_argument("--config", default=None, help="YAML key-value file; flags override its values")
        return p

    p = add("gen-data", "generate toy source/target datasets and off-manifold test points")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-points", type=_points, default=None, help="'x1,x2;x1,x2;...'")

    p = add("train-dae", "train the denoising autoencoder on source data")
    p.add_argument("--data", required=True)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = add("train-cyclegan", "train the toy CycleGAN")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-cycle", type=float, default=10.0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    for name, help in (("cool", "cool fringe samples and write the end points"),
                       ("export-trails", "cool fringe samples and write their trails")):
        p = add(name, help)
        p.add_argument("--input", required=True, help="CSV of points to cool")
        _add_score(p)
        _add_cooling(p)
        if name == "export-trails":
            p.add_argument("--combined", action="store_true", help="one file with a sample_id column")

    p = add("pipeline", "fringe detection, cooling and translation of test samples")
    _add_score(p, need_cyclegan=True)
    p.add_argument("--tests", default=None, help="CSV of test points (default: built-in off-manifold points)")
    p.add_argument("--test-points", type=_points, default=None)
    _add_cooling(p)

    p = add("sweep", "grid search over temperature, step size and step count")
    _add_score(p)
    p.add_argument("--tests", default=None)
    p.add_argument("--test-points", type=_points, default=None)
    p.add_argument("--temperatures", type=_floats, default=list(DEFAULT_TEMPERATURES))
    p.add_argument("--alphas", type=_floats, default=list(DEFAULT_ALPHAS))
    p.add_argument("--n-steps", type=_ints, default=list(DEFAULT_N_STEPS))
    p.add_argument("--seed", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fringe-proportion", type=float, default=1.0)
    g.add_argument("--fringe-threshold", type=float, default=None)

    p = add("verify-temperature", "check chain variances against Sigma/beta on a standard Gaussian")
    p.add_argument("--betas", type=_floats, default=[1.0, 4.0, 10.0])
    p.add_argument("--chain-length", type=int, default=100_000)
    p.add_argument("--alpha", type=float, default=0.005)
    p.add_argument("--n-chains", type=int, default=32)
    p.add_argument("--burn-in", type=float, default=0.1)
    p.add_argument("--rel-tol", type=float, default=0.10)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def resolve_config(parser, argv) -> tuple[str, dict, argparse.Namespace]:
    """Parse flags, layering them over an optional YAML config file."""
    ns = parser.parse_args(argv)
    if ns.command == "replay":
        return ns.command, {}, ns
    if ns.config:
        try:
            file_cfg = yaml.safe_load(Path(ns.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise LCoolError(f"cannot read config file {ns.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise LCoolError(f"config file {ns.config} must hold a key-value mapping")
        sub = _subparser(parser, ns.command)
        known = {a.dest for a in sub._actions}
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        unknown = sorted(set(file_cfg) - known)
        if unknown:
            raise LCoolError(f"unknown keys in config file {ns.config}: {unknown}")
        sub.set_defaults(**file_cfg)
        ns = parser.parse_args(argv)
    cfg = {k: v for k, v in vars(ns).items() if k not in ("command", "out", "config", "verbose")}
    for key in INPUT_KEYS:
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    return ns.command, cfg, ns


def default_out(command) -> Path:
    base = os.environ.get(OUTPUT_DIR_ENV)
    return Path(base) / command if base else Path("lcool-out") / command


def execute(command: str, cfg: dict, out: Path) -> dict:
    """Run ``command`` with a resolved config, staging outputs so failures leave nothing behind."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".lcool-stage-", dir=out.parent))
    try:
        t0 = time.perf_counter()
        extra = COMMANDS[command](cfg, stage)
        runtime = time.perf_counter() - t0
        outputs = {
            str(p.relative_to(stage)): file_sha256(p)
            for p in sorted(stage.rglob("*")) if p.is_file()
        }
        inputs = {cfg[k]: file_sha256(cfg[k]) for k in INPUT_KEYS if cfg.get(k)}
        manifest = {
            "command": command,
            "version": __version__,
            "config": cfg,
            "inputs": inputs,
            "outputs": outputs,
            "result": extra,
            "runtime_s": runtime,
        }
        (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
        out.mkdir(parents=True, exist_ok=True)
        for p in sorted(stage.rglob("*")):
            dest = out / p.relative_to(stage)
            if p.is_dir():
                dest.mkdir(exist_ok=True)
            else:
                os.replace(p, dest)
        log.info("%s: wrote %d files to %s", command, len(outputs) + 1, out)
        return manifest
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def replay(manifest_path, out) -> dict:
    doc = json.loads(Path(manifest_path).read_text())
    for path, digest in doc.get("inputs", {}).items():
        if file_sha256(path) != digest:
            raise LCoolError(f"input {path} changed since the manifest was written")
    return execute(doc["command"], doc["config"], Path(out))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        command, cfg, ns = resolve_config(parser, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except LCoolError as exc:
        print(f"lcool: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(
        level=logging.WARNING - 10 * min(ns.verbose if hasattr(ns, "verbose") else 0, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if command == "replay":
            replay(ns.manifest, ns.out)
        else:
            out = Path(ns.out) if ns.out else default_out(command)
            log.info("resolved config: %s", json.dumps(cfg, default=_json_default))
            execute(command, cfg, out)
    except NumericalError as exc:
        print(f"lcool: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LCoolError, ValueError, OSError, KeyError, np.linalg.LinAlgError) as exc:
        print(f"lcool: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
