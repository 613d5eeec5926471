"""``dualstop value|minimize|profile|verify`` command-line front end."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import lab
from .dual import variance_profile
from .families import FamilySpec, build_basis
from .lp import minimize
from .models import BermudanCallModel, StylizedModel, load_tree, simulate, tree_bundle
from .randomizers import RandomizerSpec
from .snell import QuadratureError, backward_induct, black_continuation, bs_value, snell_for

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

PRESETS: dict[str, dict] = {
    "stylized": {
        "model": {"type": "stylized"},
        "family": {"type": "doob_scalar"},
        "randomizers": [
            {"kind": "none"},
            {"kind": "optimal", "theta": 1.0},
            {"kind": "naive", "theta_naive": [1.0, 1.0, 1.0]},
        ],
        "n_paths": 100000,
        "n_test_paths": 100000,
        "profile": {"axes": [{"start": -4.0, "stop": 3.0, "step": 0.25}]},
    },
    "pa1": {
        "model": {"type": "bermudan", "s0": 2.0, "sigma2": 0.04, "kappa1": 2.0, "kappa2": 2.5},
        "family": {"type": "msty"},
        "randomizers": [
            {"kind": "none"},
            {"kind": "naive", "theta_naive": [1.6, 0.0, 0.0]},
            {"kind": "optimal", "theta": 1.0},
        ],
        "n_paths": 2000,
        "n_test_paths": 100000,
        "profile": {
            "axes": [{"start": 0.0, "stop": 2.0, "step": 0.1}],
            "embed": ["a1", "a1", 1.0, 1.0],
            "randomizers": [
                {"kind": "none"},
                {"kind": "optimal", "theta": 1.0},
                {"kind": "naive", "theta_naive": [0.16, 0.16, 0.16]},
            ],
        },
    },
    "pa2": {
        "model": {"type": "bermudan", "s0": 2.0, "sigma2": 1.0 / 3.0, "kappa1": 2.0, "kappa2": 3.0},
        "family": {"type": "msty"},
        "randomizers": [
            {"kind": "none"},
            {"kind": "naive", "theta_naive": [4.8, 0.0, 0.0]},
            {"kind": "optimal", "theta": 1.0},
        ],
        "n_paths": 2000,
        "n_test_paths": 100000,
        "profile": {
            "axes": [{"start": 0.0, "stop": 2.0, "step": 0.1}],
            "embed": ["a1", "a1", 1.0, 1.0],
            "randomizers": [
                {"kind": "none"},
                {"kind": "optimal", "theta": 1.0},
                {"kind": "naive", "theta_naive": [0.5, 0.5, 0.5]},
            ],
        },
    },
}

TOP_KEYS = {"preset", "model", "family", "randomizer", "randomizers", "n_paths", "n_test_paths",
            "seed", "out", "profile", "verify"}


class ConfigError(ValueError):
    pass


class VerificationFailure(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    model: Any
    family: FamilySpec
    randomizers: list
    n_paths: int
    n_test_paths: int
    seed: int | None
    out: Path
    profile: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    model_name: str = ""

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required for this command: pass --seed N or set \"seed\" in the config")
        return self.seed


def load_config(path: str | None, preset: str | None = None, seed: int | None = None,
                out: str | None = None) -> ExperimentConfig:
    raw: dict = {}
    base_dir = Path(".")
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path!r} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        base_dir = p.parent
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(TOP_KEYS)}")
    name = preset or raw.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose one of {sorted(PRESETS)}")
        merged = _merge(PRESETS[name], {k: v for k, v in raw.items() if k != "preset"})
    else:
        merged = raw
    if seed is not None:
        merged["seed"] = seed
    if out is not None:
        merged["out"] = out
    return build_config(merged, base_dir, name or "")


def build_config(cfg: dict, base_dir: Path = Path("."), name: str = "") -> ExperimentConfig:
    try:
        model = _model(cfg.get("model"), base_dir)
        fam_cfg = cfg.get("family", {"type": "doob_scalar"})
        if fam_cfg.get("type", fam_cfg.get("kind")) == "single_doob_scalar":
            fam_cfg = dict(fam_cfg, type="doob_scalar")
        if "file" in fam_cfg and not (base_dir / fam_cfg["file"]).is_file() and not Path(fam_cfg["file"]).is_file():
            raise ConfigError(f"family file {fam_cfg['file']!r} does not exist")
        family = FamilySpec.from_config(fam_cfg, base_dir)
        rz = cfg.get("randomizers", cfg.get("randomizer", [{"kind": "none"}]))
        if isinstance(rz, dict):
            rz = [rz]
        randomizers = [RandomizerSpec.from_config(r) for r in rz]
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    n_paths = int(cfg.get("n_paths", 10000))
    n_test = int(cfg.get("n_test_paths", 0))
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    if n_test < 0:
        raise ConfigError("n_test_paths must be >= 0")
    seed = cfg.get("seed")
    if seed is not None:
        if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
    model_name = name or (cfg.get("model") or {}).get("type", "")
    return ExperimentConfig(model, family, randomizers, n_paths, n_test, seed, Path(cfg.get("out", "out")),
                            cfg.get("profile", {}), cfg.get("verify", {}), model_name)


def _model(m: dict | None, base_dir: Path):
    if not m:
        raise ConfigError("config needs a \"model\" (or a \"preset\")")
    kind = m.get("type")
    if kind == "stylized":
        return StylizedModel()
    if kind == "bermudan":
        missing = [k for k in ("s0", "sigma2", "kappa1", "kappa2") if k not in m]
        if missing:
            raise ConfigError(f"bermudan model is missing {missing}")
        return BermudanCallModel(float(m["s0"]), float(m["sigma2"]), float(m["kappa1"]), float(m["kappa2"]))
    if kind == "tree":
        p = Path(m.get("file", ""))
        if not p.is_absolute():
            p = base_dir / p
        if not p.is_file():
            raise ConfigError(f"tree file {str(p)!r} does not exist")
        return load_tree(p)
    raise ConfigError(f"model type must be stylized, bermudan or tree, got {kind!r}")


# -- commands ------------------------------------------------------------------

def cmd_value(cfg: ExperimentConfig) -> dict:
    model = cfg.model
    if isinstance(model, StylizedModel):
        return {"y0": 1.25, "error": 0.0, "method": "closed form"}
    if isinstance(model, BermudanCallModel):
        try:
            y0, err = bs_value(model)
        except QuadratureError as exc:
            raise NumericalFailure(str(exc)) from None
        return {"y0": y0, "error": err, "method": "adaptive quadrature"}
    return {"y0": backward_induct(model).y0, "error": 0.0, "method": "backward induction"}


TABLE_HEADER = ["randomizer", "m_hat", "se_hat", "sigma_hat", "m_test", "se_test", "sigma_test",
                "status", "iterations", "alpha_hat"]


def _simulated(cfg: ExperimentConfig):
    if not isinstance(cfg.model, (StylizedModel, BermudanCallModel)):
        raise ConfigError("this command needs a stylized or bermudan model")
    seed = cfg.require_seed()
    paths = simulate(cfg.model, cfg.n_paths, seed)
    return seed, paths, snell_for(paths)


def cmd_minimize(cfg: ExperimentConfig) -> list[dict]:
    seed, paths, snell = _simulated(cfg)
    basis = build_basis(cfg.family, paths, snell)
    rows = []
    for spec in cfg.randomizers:
        sol, ins, test = minimize(paths, basis, spec, snell, seed, n_test=cfg.n_test_paths or None)
        if not sol.ok:
            raise NumericalFailure(f"LP for {spec.label()} ended with status {sol.status!r}")
        rows.append({
            "randomizer": spec.label(), "m_hat": ins.mean, "se_hat": ins.se, "sigma_hat": ins.std,
            "m_test": test.mean if test else math.nan, "se_test": test.se if test else math.nan,
            "sigma_test": test.std if test else math.nan, "status": sol.status,
            "iterations": sol.iterations, "alpha_hat": list(map(float, sol.alpha_hat)),
        })
    return rows


def _axis(spec: dict) -> np.ndarray:
    if "values" in spec:
        return np.asarray(spec["values"], dtype=float)
    start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
    if step <= 0:
        raise ConfigError("grid step must be positive")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def alpha_grid(profile: dict, dim: int) -> list[tuple]:
    axes_cfg = profile.get("axes")
    if not axes_cfg:
        raise ConfigError("profile needs \"axes\"")
    axes = [_axis(a) for a in axes_cfg]
    embed = profile.get("embed", [f"a{k + 1}" for k in range(len(axes))])
    if len(embed) != dim:
        raise ConfigError(f"profile embed has {len(embed)} entries, family dimension is {dim}")
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    out = []
    for p in pts:
        alpha = []
        for e in embed:
            if isinstance(e, str):
                idx = int(e[1:]) - 1
                if not 0 <= idx < len(axes):
                    raise ConfigError(f"embed entry {e!r} refers to a missing axis")
                alpha.append(float(p[idx]))
            else:
                alpha.append(float(e))
        out.append(tuple(alpha))
    return out


def cmd_profile(cfg: ExperimentConfig) -> dict:
    prof = cfg.profile or {}
    if isinstance(cfg.model, (StylizedModel, BermudanCallModel)):
        seed, paths, snell = _simulated(cfg)
    else:
        seed = cfg.require_seed()
        paths = tree_bundle(cfg.model)
        snell = snell_for(paths)
    basis = build_basis(cfg.family, paths, snell)
    grid = alpha_grid(prof, basis.dim)
    specs = [RandomizerSpec.from_config(r) for r in prof["randomizers"]] if "randomizers" in prof else cfg.randomizers
    y0 = snell.y0
    rows, labels = [], []
    for spec in specs:
        for r in variance_profile(paths, basis, grid, spec, snell, seed):
            rows.append(r)
            labels.append(spec.label())
    crossing = None
    if isinstance(cfg.model, BermudanCallModel):
        w = np.linspace(-3.0, 3.0, 121)
        s1 = cfg.model.stock(w, np.zeros_like(w))[:, 1]
        crossing = (w, np.maximum(s1 - cfg.model.kappa1, 0.0), black_continuation(cfg.model, w))
    return {"rows": rows, "labels": labels, "y0": y0, "crossing": crossing}


def cmd_verify(cfg: ExperimentConfig) -> lab.SweepReport:
    seed = cfg.require_seed()
    v = cfg.verify or {}
    per_tree = int(v.get("per_tree", 120))
    if isinstance(cfg.model, lab.TreeModel):
        report = lab.verify_tree(cfg.model, seed, per_tree, name=cfg.model_name or "tree")
        fixture = v.get("perturbation")
        if fixture is not None:
            s = lab.PerturbationS(cfg.model, tuple(np.asarray(x, dtype=float) for x in fixture["values"]),
                                  fixture.get("label", "fixture"))
            report.trials.append(lab.run_trial("fixture", cfg.model, s, negative=fixture.get("expect_fail", "")))
        return report
    return lab.sweep(seed, per_tree)


# -- output ----------------------------------------------------------------------

def _g(x) -> str:
    return format(float(x), ".17g")


def write_table(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_HEADER)
        for r in rows:
            w.writerow([r["randomizer"]] + [_g(r[k]) for k in TABLE_HEADER[1:7]]
                       + [r["status"], r["iterations"], ";".join(_g(a) for a in r["alpha_hat"])])


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            row = {k: float(r[k]) for k in TABLE_HEADER[1:7]}
            row.update(randomizer=r["randomizer"], status=r["status"], iterations=int(r["iterations"]),
                       alpha_hat=[float(a) for a in r["alpha_hat"].split(";")])
            out.append(row)
        return out


def write_crossing(path: Path, crossing) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["W1", "Z1", "C1"])
        for row in zip(*crossing):
            w.writerow([_g(x) for x in row])


def _emit(out: Path, files: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, writer in files.items():
        writer(out / name)


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="dualstop", description="Randomized dual upper bounds for optimal stopping.")
    ap.add_argument("command", choices=["value", "minimize", "profile", "verify"])
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--preset", choices=sorted(PRESETS))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    args = ap.parse_args(argv)
    if args.config is None and args.preset is None:
        print("error: pass --config FILE or --preset NAME", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.preset, args.seed, args.out)
        t0 = time.perf_counter()
        if args.command == "value":
            res = cmd_value(cfg)
            print(f"Y*_0 = {res['y0']:.10f}  (error estimate {res['error']:.2e}, {res['method']})")
        elif args.command == "minimize":
            rows = cmd_minimize(cfg)
            for r in rows:
                print(f"{r['randomizer']:>22s}  m_hat {r['m_hat']:.6f} ({r['se_hat']:.6f})  sigma_hat {r['sigma_hat']:.5f}"
                      f"  m_test {r['m_test']:.6f} ({r['se_test']:.6f})  sigma_test {r['sigma_test']:.5f}"
                      f"  [{r['status']}, {r['iterations']} it]")
            _emit(cfg.out, {"table.csv": lambda p: write_table(p, rows)})
        elif args.command == "profile":
            res = cmd_profile(cfg)
            from .dual import write_profile_csv
            files = {"profile.csv": lambda p: write_profile_csv(p, res["rows"], res["labels"], res["y0"])}
            if res["crossing"] is not None:
                files["crossing.csv"] = lambda p: write_crossing(p, res["crossing"])
            _emit(cfg.out, files)
            print(f"profile: {len(res['rows'])} rows over {len(set(res['labels']))} curves -> {cfg.out}")
        else:
            report = cmd_verify(cfg)
            _emit(cfg.out, {"sweep.json": report.write})
            s = report.summary()
            print(f"verify: {s['trials']} trials on {len(s['trees'])} trees, {s['failures']} failures, "
                  f"{s['uniform_zero_gap_findings']} uniform-grid zero-gap findings")
            for t in report.failures[:10]:
                print(f"  FAIL {t.tree} {t.kind}")
            if not report.passed:
                raise VerificationFailure(f"{len(report.failures)} trials disagree")
        print(f"done in {time.perf_counter() - t0:.2f} s")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, QuadratureError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def main() -> None:
    sys.exit(run())
