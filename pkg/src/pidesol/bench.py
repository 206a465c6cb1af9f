"""Experiment runner: configuration, cached test sets, metrics and slices.

A run is described by one JSON document with blocks for the problem, network,
trainer, sampler and reference oracle.  The test set is built once, written
as CSV, and reused by every seed so all runs score against identical points.
All numeric CSV output uses 17 significant digits so files round-trip exactly
and reruns with fixed seeds are byte-comparable.
"""

import json
import math
import os
import time
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .network import DgmConfig, DgmNetwork, save_checkpoint
from .oracle import McConfig, fk_estimate, hjb_log_mc
from .problems import Box, PideProblem, problem_from_config
from .sampler import SamplerSpec, sample_uniform
from .trainer import TrainConfig, train


def fmt(x) -> str:
    """17-significant-digit decimal; empty for missing values."""
    if x is None:
        return ""
    return "%.17g" % float(x)


@dataclass
class ExperimentConfig:
    problem: dict
    network: dict
    trainer: dict = dc_field(default_factory=dict)
    sampler: dict = dc_field(default_factory=lambda: {"kind": "uniform"})
    oracle: dict = dc_field(default_factory=lambda: {"kind": "closed_form"})
    test_size: int = 2000
    test_seed: int = 0
    test_box: Optional[dict] = None
    seeds: tuple = (0, 1, 2)
    out_dir: str = "results"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.test_size < 1:
            raise ValueError("test_size must be >= 1")
        kind = self.oracle.get("kind")
        if kind not in ("closed_form", "mc"):
            raise ValueError(f"unknown oracle kind {kind!r}")

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        return ExperimentConfig(**data)

    @staticmethod
    def from_json(path) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "problem": dict(self.problem),
            "network": dict(self.network),
            "trainer": dict(self.trainer),
            "sampler": dict(self.sampler),
            "oracle": dict(self.oracle),
            "test_size": self.test_size,
            "test_seed": self.test_seed,
            "test_box": self.test_box,
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
        }

    def build_problem(self) -> PideProblem:
        return problem_from_config(self.problem)

    def build_net(self, problem: PideProblem) -> DgmConfig:
        blk = dict(self.network)
        blk.setdefault("d", problem.d)
        if blk["d"] != problem.d:
            raise ValueError("network dimension does not match the problem")
        return DgmConfig(**blk)

    def build_trainer(self, seed) -> TrainConfig:
        blk = dict(self.trainer)
        blk["seed"] = int(seed)
        return TrainConfig(**blk)

    def build_sampler(self) -> SamplerSpec:
        return SamplerSpec.from_config(self.sampler)

    def resolve_test_box(self, problem: PideProblem) -> Box:
        if self.test_box is None:
            return problem.box
        lo = np.asarray(self.test_box["lo"], float)
        hi = np.asarray(self.test_box["hi"], float)
        if np.any(lo < problem.box.lo) or np.any(hi > problem.box.hi):
            raise ValueError("test box must lie inside the problem box")
        return Box(T=problem.T, lo=lo, hi=hi)


@dataclass
class TestSet:
    t: np.ndarray
    x: np.ndarray
    ref: np.ndarray
    se: Optional[np.ndarray] = None

    @property
    def size(self):
        return self.t.size


def _reference_at(problem, t, x, mc, rng):
    if problem.linear:
        return fk_estimate(problem, (t, x), mc, rng)
    return hjb_log_mc((t, x), problem, mc, rng)


def build_test_set(config: ExperimentConfig, problem: Optional[PideProblem] = None,
                   path=None) -> TestSet:
    """Uniform test points with reference values, cached as CSV.

    Closed-form references are exact (no SE column); MC references carry a
    per-point standard error and any point whose SE exceeds the configured
    cap aborts the build naming that point.
    """
    if problem is None:
        problem = config.build_problem()
    if path is None:
        path = os.path.join(config.out_dir, "test_set.csv")
    if os.path.exists(path):
        return load_test_set(path, problem.d, config.test_size)

    box = config.resolve_test_box(problem)
    rng = np.random.default_rng(np.random.SeedSequence(config.test_seed))
    t, x = sample_uniform(box, config.test_size, rng)

    if config.oracle["kind"] == "closed_form":
        ref = problem.solution_field().values(t, x)
        se = None
    else:
        mc = McConfig(paths=int(config.oracle.get("paths", 10000)),
                      steps=int(config.oracle.get("steps", 1)),
                      antithetic=bool(config.oracle.get("antithetic", True)),
                      seed=config.test_seed)
        cap = float(config.oracle.get("se_cap", 0.1))
        mc_rng = np.random.default_rng(
            np.random.SeedSequence([config.test_seed, 777]))
        ref = np.empty(config.test_size)
        se = np.empty(config.test_size)
        for i in range(config.test_size):
            ref[i], se[i] = _reference_at(problem, t[i], x[i], mc, mc_rng)
            if se[i] > cap:
                raise RuntimeError(
                    f"oracle SE {se[i]:.3g} exceeds cap {cap} at test point "
                    f"{i}: t={t[i]}, x={x[i]}")

    ts = TestSet(t=t, x=x, ref=ref, se=se)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_test_set(path, ts)
    return ts


def save_test_set(path, ts: TestSet):
    d = ts.x.shape[1]
    cols = ["t"] + [f"x{j + 1}" for j in range(d)] + ["ref"]
    if ts.se is not None:
        cols.append("se")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(ts.size):
            row = [fmt(ts.t[i])] + [fmt(v) for v in ts.x[i]] + [fmt(ts.ref[i])]
            if ts.se is not None:
                row.append(fmt(ts.se[i]))
            fh.write(",".join(row) + "\n")


def load_test_set(path, d, expected_size=None) -> TestSet:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if len(header) < d + 2 or header[0] != "t":
        raise ValueError(f"{path} does not look like a test-set file")
    has_se = header[-1] == "se"
    data = np.array([[float(v) for v in r] for r in rows])
    if expected_size is not None and len(data) != expected_size:
        raise ValueError(f"cached test set has {len(data)} rows, "
                         f"config wants {expected_size}")
    return TestSet(t=data[:, 0], x=data[:, 1:1 + d], ref=data[:, 1 + d],
                   se=data[:, 2 + d] if has_se else None)


def mae(field, ts: TestSet) -> float:
    """Mean absolute deviation from the reference values."""
    if ts.size == 0:
        raise ValueError("empty test set")
    return float(np.mean(np.abs(field.values(ts.t, ts.x) - ts.ref)))


_METRIC_COLS = ("seed", "epoch", "inner_step", "loss", "test_mae",
                "wall_seconds")


def run_experiment(config: ExperimentConfig, echo=None) -> dict:
    """Train every seed, writing metrics.csv, checkpoints and summary.json.

    The metrics file is appended row by row so a partial log survives an
    aborted run.  Returns the summary dict.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    problem = config.build_problem()
    net = config.build_net(problem)
    spec = config.build_sampler()
    ts = build_test_set(config, problem)
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    per_seed = []
    t_start = time.perf_counter()
    with open(metrics_path, "w") as fh:
        fh.write(",".join(_METRIC_COLS) + "\n")
        for seed in config.seeds:
            tc = config.build_trainer(seed)

            def sink(row, _seed=seed, _fh=fh):
                _fh.write(",".join([
                    str(_seed), str(row["epoch"]), str(row["inner_step"]),
                    fmt(row["loss"]), fmt(row["test_mae"]),
                    fmt(row["wall_seconds"])]) + "\n")
                _fh.flush()

            def checkpoint_cb(epoch, state, loss, mae_val, wall, _seed=seed):
                if tc.K > 0 and epoch % tc.K == 0:
                    save_checkpoint(
                        os.path.join(config.out_dir,
                                     f"checkpoint_seed{_seed}_epoch{epoch:04d}.bin"),
                        DgmNetwork(net, state.live))
                if echo is not None:
                    echo(f"seed {_seed} epoch {epoch}: loss={fmt(loss)}"
                         + (f" mae={fmt(mae_val)}" if mae_val is not None else ""))

            t_seed = time.perf_counter()
            field, _rows = train(problem, net, tc, spec,
                                 test_eval=lambda f: mae(f, ts),
                                 callback=checkpoint_cb, row_sink=sink)
            runtime = time.perf_counter() - t_seed
            final_path = os.path.join(config.out_dir,
                                      f"checkpoint_seed{seed}_final.bin")
            save_checkpoint(final_path, field.network())
            per_seed.append({"seed": seed, "final_mae": mae(field, ts),
                             "runtime_seconds": runtime})

    maes = [r["final_mae"] for r in per_seed]
    summary = {
        "per_seed": per_seed,
        "mae_mean": float(np.mean(maes)),
        "mae_std": float(np.std(maes, ddof=1)) if len(maes) > 1 else 0.0,
        "mean_oracle_se": float(ts.se.mean()) if ts.se is not None else None,
        "runtime_seconds": time.perf_counter() - t_start,
        "config": config.to_dict(),
    }
    with open(os.path.join(config.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def emit_slice(field, problem: PideProblem, axis: str, lo=None, hi=None,
               resolution=101, t_fixed=0.0, x_fixed=None, mc: McConfig = None,
               rng=None):
    """Rows of (coordinate, value, oracle, se) along one axis.

    axis is "t" or "xj" (1-based j); the remaining coordinates are pinned at
    t_fixed and x_fixed (problem.x0 by default).  Oracle columns appear when
    the problem has a closed form, or per-point MC values when mc is given.
    """
    if x_fixed is None:
        x_fixed = problem.x0 if problem.x0 is not None else \
            0.5 * (problem.box.lo + problem.box.hi)
    x_fixed = np.asarray(x_fixed, float)
    if axis == "t":
        lo = 0.0 if lo is None else lo
        hi = problem.T if hi is None else hi
    else:
        j = int(axis[1:]) - 1
        if not 0 <= j < problem.d:
            raise ValueError(f"axis {axis!r} out of range")
        lo = problem.box.lo[j] if lo is None else lo
        hi = problem.box.hi[j] if hi is None else hi
    grid = np.linspace(lo, hi, resolution) if resolution > 1 \
        else np.array([float(lo)])

    t = np.full(grid.size, float(t_fixed))
    x = np.broadcast_to(x_fixed, (grid.size, problem.d)).copy()
    if axis == "t":
        t = grid.copy()
    else:
        x[:, j] = grid

    vals = field.values(t, x)
    rows = []
    closed = problem.solution is not None
    for i in range(grid.size):
        row = {"coord": float(grid[i]), "value": float(vals[i])}
        if t[i] >= problem.T - 1e-12:
            row["oracle"] = float(problem.phi(x[i:i + 1])[0])
            if mc is not None and not closed:
                row["se"] = 0.0
        elif closed:
            row["oracle"] = float(
                problem.solution_field().values(t[i:i + 1], x[i:i + 1])[0])
        elif mc is not None:
            ref, se = _reference_at(problem, t[i], x[i], mc, rng)
            row["oracle"] = ref
            row["se"] = se
        rows.append(row)
    return rows


def write_slice_csv(path, rows, axis):
    cols = [axis, "value"]
    if rows and "oracle" in rows[0]:
        cols.append("oracle")
    if rows and "se" in rows[0]:
        cols.append("se")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            out = [fmt(r["coord"]), fmt(r["value"])]
            if "oracle" in cols[2:]:
                out.append(fmt(r.get("oracle")))
            if "se" in cols:
                out.append(fmt(r.get("se")))
            fh.write(",".join(out) + "\n")
