"""Command-line harness.

Every subcommand reads a JSON config (``--config``), writes its artifact to
``--out`` (stdout when omitted) and exits with 0 on success, 2 on a bad
configuration and 3 when a solver fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .affine import AffineMap
from .endo import FixedPoint, semi_separate
from .equilibrium import (
    CorrelatedSolution,
    RunningGap,
    compute_lce,
    game_from_dict,
    lce_gaps,
    selfplay,
)
from .errors import ConfigError, LinswapError
from .geometry import Ball, CappedBall, body_from_dict, membership
from .regret import Adversary, LinSwapLearner, exact_linswap_regret, run_learner, write_history_csv

log = logging.getLogger("linswap")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def fmt(x) -> str:
    return format(float(x), ".17g")


def _clean(obj):
    """JSON-ready copy with floats rendered at 17 significant digits."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if not math.isfinite(v) else float(fmt(v))
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


@dataclass
class ExperimentConfig:
    raw: dict
    base: Path
    seed: Optional[int] = None
    overrides: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Optional[str], seed: Optional[int]) -> "ExperimentConfig":
        if path is None:
            return cls({}, Path.cwd(), seed)
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls(raw, p.parent, seed)
        if cfg.seed is None and "seed" in raw:
            cfg.seed = cfg._int("seed", raw["seed"])
        return cfg

    def _int(self, key, value) -> int:
        try:
            return int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be an integer") from exc

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def integer(self, key, default=None, minimum=None) -> int:
        if key not in self.raw and default is None:
            raise ConfigError(f"config needs {key!r}")
        v = self._int(key, self.raw.get(key, default))
        if minimum is not None and v < minimum:
            raise ConfigError(f"{key} must be at least {minimum}")
        return v

    def positive(self, key, default=None) -> float:
        if key not in self.raw and default is None:
            raise ConfigError(f"config needs {key!r}")
        try:
            v = float(self.raw.get(key, default))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key} must be a number") from exc
        if not v > 0:
            raise ConfigError(f"{key} must be positive")
        return v

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        return self.seed

    def document(self, key) -> dict:
        """An inline JSON object or a path (relative to the config) to one."""
        v = self.raw.get(key)
        if v is None:
            raise ConfigError(f"config needs {key!r}")
        if isinstance(v, dict):
            return v
        path = Path(v)
        if not path.is_absolute():
            path = self.base / path
        try:
            return json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"{key} file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{key} file {path} is not valid JSON: {exc}") from exc

    def body(self):
        try:
            return body_from_dict(self.document("body"))
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad body: {exc}") from exc

    def game(self):
        try:
            return game_from_dict(self.document("game"))
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad game: {exc}") from exc


@contextmanager
def _output(path: Optional[str]):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _summary_path(out: Optional[str]) -> Optional[str]:
    return None if out is None else str(Path(out).with_suffix(".summary.json"))


def _write_summary(out: Optional[str], summary: dict) -> None:
    path = _summary_path(out)
    text = dump_json(summary)
    if path is None:
        sys.stderr.write(text)
    else:
        Path(path).write_text(text)


# commands -----------------------------------------------------------------------

def cmd_regret_run(cfg: ExperimentConfig, out: Optional[str]) -> int:
    P = cfg.body()
    T = cfg.integer("T", minimum=1)
    kind = cfg.get("adversary", "uniform")
    if kind not in Adversary.kinds:
        raise ConfigError(f"adversary must be one of {Adversary.kinds}")
    rng = np.random.default_rng(cfg.require_seed())
    kw = {}
    if "eps" in cfg.raw:
        kw["eps"] = cfg.positive("eps")
    if "fp_tol" in cfg.raw:
        kw["fp_tol"] = cfg.positive("fp_tol")
    learner = LinSwapLearner(P, T, **kw)
    adversary = Adversary(kind, P.dim, rng, cfg.get("loss"))
    rows = run_learner(learner, adversary, T, P)
    with _output(out) as fh:
        write_history_csv(rows, fh)
    try:
        final = exact_linswap_regret([(p, l) for _, p, l, _, _ in rows], P).linswap_regret
    except LinswapError as exc:
        log.warning("exact regret not evaluable: %s", exc)
        final = None
    _write_summary(out, {"final_regret_exact": final, "bound_value": learner.regret_bound(),
                         "rounds": T})
    return EXIT_OK


def cmd_lce(cfg: ExperimentConfig, out: Optional[str]) -> int:
    game = cfg.game()
    eps = cfg.positive("eps", 1e-3)
    fp_tol = cfg.positive("fp_tol", 1e-8)
    sol = compute_lce(game, eps, fp_tol=fp_tol)
    gaps = lce_gaps(sol, game)
    doc = sol.to_dict(gaps)
    doc["responses"] = sol.ger_count
    with _output(out) as fh:
        fh.write(dump_json(doc))
    return EXIT_OK


def cmd_selfplay(cfg: ExperimentConfig, out: Optional[str]) -> int:
    game = cfg.game()
    T = cfg.integer("T", minimum=1)
    seed = cfg.require_seed()
    series = {}
    for name in ("linswap", "external"):
        tracker = RunningGap(game)
        gaps = []

        def track(t, profiles, tracker=tracker, gaps=gaps):
            gaps.append(tracker.add(profiles[-1]))

        selfplay(game, T, rng=np.random.default_rng(seed),
                 learner="linswap" if name == "linswap" else "ogd", callback=track)
        series[name] = gaps
    n = game.players
    with _output(out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{name}_gap_{i}" for name in series for i in range(n)]
                   + [f"{name}_max_gap" for name in series])
        for t in range(T):
            per = [fmt(series[name][t][i]) for name in series for i in range(n)]
            mx = [fmt(max(series[name][t])) for name in series]
            w.writerow([t + 1] + per + mx)
    _write_summary(out, {"rounds": T, "final_max_gap": {k: max(v[-1]) for k, v in series.items()}})
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Optional[str]) -> int:
    game = cfg.game()
    sol = CorrelatedSolution.from_dict(cfg.document("solution"))
    if any(len(a) != game.players for a in sol.atoms):
        raise ConfigError("solution atoms do not match the player count")
    sol.check(game)
    gaps = lce_gaps(sol, game)
    report = {"gaps": gaps, "max_gap": max(gaps)}
    if "eps" in cfg.raw:
        eps = cfg.positive("eps")
        report["eps"] = eps
        report["ok"] = max(gaps) <= eps
    with _output(out) as fh:
        fh.write(dump_json(report))
    return EXIT_OK


def hardness_report(d: int) -> dict:
    """The ball/capped-ball pair on which membership cannot tell endomorphisms apart."""
    if d < 2:
        raise ConfigError("the construction needs d >= 2")
    u = np.eye(d)[0]
    kappa = (2.0 * d - 1.0) / (2.0 * d)
    s = (4.0 * d - 1.0) / (4.0 * d)
    ball = Ball(np.zeros(d), 1.0)
    capped = CappedBall(1.0, u, kappa)
    phi = AffineMap(-s * np.eye(d), np.zeros(d))
    spectral = float(np.linalg.norm(phi.M, 2))
    witness = -u
    image = phi(witness)
    fixed = {}
    for name, body in (("ball", ball), ("capped_ball", capped)):
        out = semi_separate(body, phi)
        fixed[name] = out.point.tolist() if isinstance(out, FixedPoint) else None
    return {
        "d": d,
        "cap_threshold": kappa,
        "spectral_norm": spectral,
        "ball_endomorphism": spectral <= 1.0,
        "witness_in_capped_ball": membership(capped, witness, 1e-12),
        "image_in_capped_ball": membership(capped, image, 1e-12),
        "image_cap_value": float(u @ image),
        "fixed_points": fixed,
        "origin_fixed_on_both": all(v is not None and np.allclose(v, 0.0) for v in fixed.values()),
        "cap_count_bound": 2 ** d,
    }


def cmd_demo_hardness(cfg: ExperimentConfig, out: Optional[str], dim: Optional[int] = None) -> int:
    d = dim if dim is not None else cfg.integer("d")
    report = hardness_report(d)
    with _output(out) as fh:
        fh.write(dump_json(report))
    return EXIT_OK


# entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linswap", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output path (stdout when omitted)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--log", choices=("error", "info", "debug"), default="error")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("regret-run", parents=[common], help="run the linear-swap learner against an adversary")
    sub.add_parser("lce", parents=[common], help="compute an approximate linear correlated equilibrium")
    sub.add_parser("selfplay", parents=[common], help="self-play with linear-swap and external-regret learners")
    sub.add_parser("verify", parents=[common], help="deviation gaps of a stored solution")
    demo = sub.add_parser("demo-hardness", parents=[common], help="ball versus capped ball construction")
    demo.add_argument("--dim", type=int, help="dimension (overrides the config 'd')")
    return parser


COMMANDS = {
    "regret-run": cmd_regret_run,
    "lce": cmd_lce,
    "selfplay": cmd_selfplay,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log.upper()), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.seed)
        if args.command == "demo-hardness":
            return cmd_demo_hardness(cfg, args.out, args.dim)
        if args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LinswapError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
