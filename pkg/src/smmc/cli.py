"""Command-line pipeline: ``smmc <subcommand> --config run.json``.

All artifacts of a run live in one output directory next to a
``manifest.json`` that records the config hash, content hashes of every
input and output, and the package version.  Wall-clock figures go to
``*_diagnostics.json`` files so that every other artifact is reproducible
byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bnn import train_bnn
from .config import ConfigError, RunConfig, validate_config
from .dataset import generate_dataset, load_dataset, sample_parameters, save_dataset
from .gp import train_gp
from .guarantees import combined_bound, icp_bound, nicp_bound, pac_bayes_report
from .metrics import evaluate
from .pctmc import Trajectory, make_rng, random_pctmcs, save_model, simulate_batch
from .posterior import load_posterior
from .stl import monitor, parse_stl

FILES = {
    "model": "model.json",
    "train": "train.csv",
    "calibration": "calibration.csv",
    "test": "test.csv",
    "posterior": "posterior.json",
    "bounds": "bounds.json",
    "report": "report.json",
    "trajectories": "trajectories.json",
}
# independent seed streams per pipeline stage
_STAGE = {"sample": 10, "random-model": 11, "simulate": 12, "predict": 13}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _record(out: Path, config: RunConfig, step: str, inputs: list[Path], outputs: list[Path]) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest.update({"tool": "smmc", "version": __version__, "config_hash": config.content_hash()})
    manifest["config"] = config.to_dict()
    steps = manifest.setdefault("steps", {})
    steps[step] = {
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    _write_json(path, manifest)


def _require(paths: list[Path]) -> None:
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise ConfigError(f"missing input file(s): {', '.join(missing)}; run the earlier pipeline steps first")


def _check(config: RunConfig, need_model: bool = True) -> None:
    errors = validate_config(config, need_model)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))


def _stage_seed(config: RunConfig, stage: str) -> int:
    return int(np.random.SeedSequence([config.seed, _STAGE[stage]]).generate_state(1)[0])


def cmd_generate(config: RunConfig) -> list[Path]:
    """Write the model and the train, calibration and test datasets."""
    _check(config)
    model = config.load_model()
    phi = parse_stl(config.formula)
    sizes = config.sizes
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(config.seed, _STAGE["sample"])
    plan = [
        ("train", sample_parameters(model.param_space, sizes.n_train, config.train_strategy, rng), sizes.m_train),
        (
            "calibration",
            sample_parameters(model.param_space, sizes.n_cal, config.eval_strategy, rng),
            sizes.calibration_trials,
        ),
        ("test", sample_parameters(model.param_space, sizes.n_test, config.eval_strategy, rng), sizes.m_test),
    ]
    save_model(model, out / FILES["model"])
    written = [out / FILES["model"]]
    timings = {}
    for role, thetas, trials in plan:
        started = time.perf_counter()
        ds = generate_dataset(
            model, phi, thetas, trials, config.horizon, role, config.seed, config.threads, config.formula
        )
        timings[role] = time.perf_counter() - started
        save_dataset(ds, out / FILES[role])
        written += [out / FILES[role], out / (FILES[role] + ".json")]
    _write_json(out / "generate_diagnostics.json", {"seconds": timings})
    _record(out, config, "generate", [], written)
    return written


def cmd_random_model(config: RunConfig) -> list[Path]:
    """Write ``count`` random well-formed models as JSON."""
    _check(config, need_model=False)
    if config.random_model is None:
        raise ConfigError("random-model needs a 'random_model' section {r, count, seed} in the config")
    spec = config.random_model
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, model in enumerate(random_pctmcs(spec.r, spec.count, spec.seed)):
        path = out / f"random_r{spec.r}_{i:03d}.json"
        save_model(model, path)
        written.append(path)
    _record(out, config, "random-model", [], written)
    return written


def cmd_simulate(config: RunConfig, params: list[float], runs: int) -> Path:
    """Simulate ``runs`` trajectories at one parameter vector."""
    _check(config)
    model = config.load_model()
    if len(params) != model.n_params:
        raise ConfigError(f"model has {model.n_params} parameters, got {len(params)}")
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(config.seed, _STAGE["simulate"])
    trajectories = simulate_batch(model, params, config.horizon, runs, rng, model.species)
    doc = {
        "species": list(model.species),
        "horizon": config.horizon,
        "params": list(map(float, params)),
        "trajectories": [{"times": t.times.tolist(), "states": t.states.tolist()} for t in trajectories],
    }
    path = out / FILES["trajectories"]
    _write_json(path, doc)
    _record(out, config, "simulate", [], [path])
    return path


def cmd_monitor(config: RunConfig, trajectories_path: Path | None = None) -> dict:
    """Check the configured formula on every stored trajectory."""
    _check(config, need_model=False)
    out = Path(config.out)
    path = trajectories_path or out / FILES["trajectories"]
    _require([path])
    doc = json.loads(path.read_text())
    phi = parse_stl(config.formula)
    species = tuple(doc["species"])
    verdicts = [
        monitor(phi, Trajectory(np.asarray(t["times"], float), np.asarray(t["states"]), doc["horizon"], species))
        for t in doc["trajectories"]
    ]
    result = {"formula": config.formula, "runs": len(verdicts), "successes": sum(verdicts), "satisfied": verdicts}
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "monitor.json", result)
    _record(out, config, "monitor", [path], [out / "monitor.json"])
    return result


def cmd_train(config: RunConfig) -> Path:
    """Fit the configured back end on the training set and save the posterior bundle."""
    _check(config, need_model=False)
    out = Path(config.out)
    train_path = out / FILES["train"]
    _require([train_path])
    train = load_dataset(train_path)
    if config.backend == "gp":
        posterior = train_gp(train, dataclasses.replace(config.gp, seed=config.seed))
    else:
        bnn = dataclasses.replace(config.bnn, seed=config.seed, n_samples=config.n_samples)
        posterior = train_bnn(train, bnn)
    posterior.diagnostics["training_trials"] = train.trials
    seconds = posterior.diagnostics.pop("train_seconds")
    path = out / FILES["posterior"]
    posterior.save(path)
    _write_json(out / "train_diagnostics.json", {"backend": config.backend, "train_seconds": seconds})
    _record(out, config, "train", [train_path, Path(str(train_path) + ".json")], [path])
    return path


def cmd_calibrate(config: RunConfig) -> Path:
    """ICP, NICP, their Chernoff-corrected versions and the PAC-Bayes bound in one report."""
    _check(config, need_model=False)
    out = Path(config.out)
    paths = [out / FILES["posterior"], out / FILES["calibration"], out / FILES["train"]]
    _require(paths)
    posterior = load_posterior(paths[0])
    calibration = load_dataset(paths[1])
    train = load_dataset(paths[2])
    m_train = posterior.diagnostics.get("training_trials", train.trials)
    icp = icp_bound(posterior, calibration, config.epsilon, m_train)
    nicp = nicp_bound(posterior, calibration, config.epsilon, config.normalizer, m_train)
    bounds = [icp, nicp, combined_bound(icp, m_train, config.epsilon2), combined_bound(nicp, m_train, config.epsilon2)]
    pac = pac_bayes_report(posterior, train, config.epsilon, config.n_samples, _stage_seed(config, "predict"))
    report = {
        "calibration_points": len(calibration),
        "trials": m_train,
        "bounds": [b.to_dict() for b in bounds],
        "pac_bayes": pac.to_dict(),
    }
    path = out / FILES["bounds"]
    _write_json(path, report)

    table_src = out / FILES["test"] if (out / FILES["test"]).exists() else paths[1]
    thetas = load_dataset(table_src).raw_thetas
    pred = posterior.predict(thetas)
    columns = {f"theta_{k}": thetas[:, k] for k in range(thetas.shape[1])}
    columns.update({"mean": pred.mean, "std": pred.std})
    for b in bounds:
        _, lo, hi = b.band(thetas)
        name = b.kind.replace("+", "_")
        columns[f"{name}_lower"], columns[f"{name}_upper"] = lo, hi
    csv_path = path.with_suffix(".csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in zip(*columns.values()):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    _record(out, config, "calibrate", paths + [table_src], [path, csv_path])
    return path


def cmd_evaluate(config: RunConfig) -> Path:
    """RMSE, accuracy and uncertainty width on the test set."""
    _check(config, need_model=False)
    out = Path(config.out)
    paths = [out / FILES["posterior"], out / FILES["test"]]
    _require(paths)
    posterior = load_posterior(paths[0])
    test = load_dataset(paths[1])
    report = evaluate(posterior, test, config.epsilon, config.z)
    path = out / FILES["report"]
    report.write(path)
    _record(out, config, "evaluate", paths, [path, path.with_suffix(".csv")])
    return path


def cmd_run(config: RunConfig) -> Path:
    """generate, train, calibrate and evaluate in sequence."""
    _check(config)
    cmd_generate(config)
    cmd_train(config)
    cmd_calibrate(config)
    return cmd_evaluate(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smmc", description="Smoothed model checking with error guarantees.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="RunConfig JSON file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--backend", choices=("gp", "bnn"))
    formula = common.add_mutually_exclusive_group()
    formula.add_argument("--formula", help="STL property text")
    formula.add_argument("--formula-file", type=Path, help="file holding the STL property")
    common.add_argument("--out", help="run directory")
    common.add_argument("--threads", type=int, help="worker threads for simulation")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write model and datasets")
    sub.add_parser("random-model", parents=[common], help="write random well-formed models")
    sim = sub.add_parser("simulate", parents=[common], help="simulate trajectories at one parameter vector")
    sim.add_argument("--params", type=float, nargs="+", required=True)
    sim.add_argument("--runs", type=int, default=1)
    mon = sub.add_parser("monitor", parents=[common], help="check the formula on stored trajectories")
    mon.add_argument("--trajectories", type=Path)
    sub.add_parser("train", parents=[common], help="fit the posterior")
    sub.add_parser("calibrate", parents=[common], help="conformal, Chernoff and PAC-Bayes bounds")
    sub.add_parser("evaluate", parents=[common], help="test-set metrics")
    sub.add_parser("run", parents=[common], help="generate, train, calibrate, evaluate")
    return parser


def _config_from_args(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    formula = args.formula
    if args.formula_file is not None:
        try:
            formula = args.formula_file.read_text().strip()
        except OSError as exc:
            raise ConfigError(f"cannot read formula file: {exc}") from None
    return config.with_overrides(
        seed=args.seed, backend=args.backend, formula=formula, out=args.out, threads=args.threads
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "generate":
            result = cmd_generate(config)
        elif args.command == "random-model":
            result = cmd_random_model(config)
        elif args.command == "simulate":
            result = cmd_simulate(config, args.params, args.runs)
        elif args.command == "monitor":
            result = cmd_monitor(config, args.trajectories)
            print(f"{result['successes']}/{result['runs']} trajectories satisfy {config.formula}")
        elif args.command == "train":
            result = cmd_train(config)
        elif args.command == "calibrate":
            result = cmd_calibrate(config)
        elif args.command == "evaluate":
            result = cmd_evaluate(config)
            print(Path(result).read_text(), end="")
        else:
            result = cmd_run(config)
            print(Path(result).read_text(), end="")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command not in ("monitor", "evaluate", "run"):
        paths = result if isinstance(result, list) else [result]
        for p in paths:
            print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
