"""Experiment runner: seeded trials over configuration points, invariant
checks and CSV/JSON export."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .adversary import parse_adversary
from .net import write_trace
from .params import ConfigError, ProtocolParams
from .protocol import INPUT_SPECS, MODES, run_agreement

CSV_FIELDS = (
    "n", "t", "adversary", "T_budget", "T_spent_bits", "good_bits", "good_msgs",
    "rounds", "epochs", "agreed", "valid", "competitive_ratio", "violations",
)


@dataclass
class ExperimentConfig:
    mode: str = "ba"
    n: tuple[int, ...] = (256,)
    t: int | None = None
    t_frac: float | None = None
    epsilon0: float = 0.1
    epsilon: float = 0.01
    C: float = 4.0
    c_promise: float = 8.0
    k: int = 2
    kappa: float = 1.0
    size_rule: str = "ln6"
    activation_slack: float | None = 0.5
    adversary: str = "silent"
    inputs: str = "random"
    seeds: int = 1
    base_seed: int = 0
    jobs: int = 1
    out: str | None = None
    fmt: str = "csv"
    trace: str | None = None
    assert_invariants: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {self.mode!r}")
        if not self.n:
            raise ConfigError("n: at least one system size is required")
        if self.t is not None and self.t_frac is not None:
            raise ConfigError("t / t_frac: give at most one of them")
        if self.t_frac is not None and not 0 <= self.t_frac < 1:
            raise ConfigError(f"t_frac: must lie in [0, 1), got {self.t_frac}")
        if self.inputs not in INPUT_SPECS:
            raise ConfigError(f"inputs: expected one of {', '.join(INPUT_SPECS)}, got {self.inputs!r}")
        if self.seeds < 1:
            raise ConfigError(f"seeds: must be >= 1, got {self.seeds}")
        if self.jobs < 1:
            raise ConfigError(f"jobs: must be >= 1, got {self.jobs}")
        if self.fmt not in ("csv", "json"):
            raise ConfigError(f"format: expected csv or json, got {self.fmt!r}")
        for n in self.n:
            params = self.params_for(n, 0)
            parse_adversary(self.adversary, n).select_bad_nodes(params, 0)

    def t_for(self, n: int) -> int:
        if self.t is not None:
            return self.t
        frac = 0.0 if self.t_frac is None else self.t_frac
        return math.floor(frac * n)

    def params_for(self, n: int, seed_index: int) -> ProtocolParams:
        t = self.t_for(n)
        try:
            return ProtocolParams(
                n=n, t=t, epsilon0=self.epsilon0, epsilon=self.epsilon, C=self.C,
                c_promise=self.c_promise, k=self.k, kappa=self.kappa, size_rule=self.size_rule,
                activation_slack=self.activation_slack, master_seed=trial_seed(self.base_seed, n, seed_index),
            )
        except ConfigError as exc:
            raise ConfigError(f"n={n}, t={t}: {exc}") from None

    def trials(self) -> list[tuple[int, int]]:
        """(n, seed index) in output order: config point, then seed."""
        return [(n, s) for n in self.n for s in range(self.seeds)]


def trial_seed(base_seed: int, n: int, seed_index: int) -> int:
    seq = np.random.SeedSequence(base_seed, spawn_key=(n, seed_index))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass
class TrialRecord:
    n: int
    t: int
    adversary: str
    T_budget: float
    T_spent_bits: int
    good_bits: int
    good_msgs: int
    rounds: int
    epochs: int
    agreed: bool
    valid: bool
    competitive_ratio: float
    violations: int
    notes: list[str] = field(default_factory=list, compare=False, repr=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


def competitive_ratio(good_bits: int, spent: float, n: int) -> float:
    logn = max(1.0, math.log2(n))
    return good_bits / ((spent + n * logn) * logn)


def run_trial(cfg: ExperimentConfig, n: int, seed_index: int) -> TrialRecord:
    params = cfg.params_for(n, seed_index)
    adv = parse_adversary(cfg.adversary, n)
    bad = adv.select_bad_nodes(params, params.master_seed)
    result = run_agreement(params, adv, cfg.inputs, mode=cfg.mode, bad_ids=bad, t_budget=adv.budget,
                           trace=cfg.trace is not None, check=cfg.assert_invariants)
    world = result.world
    if cfg.trace is not None:
        write_trace(world, trace_path(cfg, n, seed_index))
    m = world.metrics
    if cfg.mode == "ba":
        inputs = set(result.world.state.inputs[world.good_idx].tolist())
        valid = set(result.outputs.tolist()) <= inputs
    else:
        ids = set(world.ids.tolist())
        vals = result.output_values()
        if cfg.mode == "leader":
            valid = all(v in ids for v in vals)
        else:
            valid = all(v <= ids for v in vals)
    return TrialRecord(
        n=n,
        t=params.t,
        adversary=cfg.adversary,
        T_budget=float(adv.budget),
        T_spent_bits=int(m.bad_bits),
        good_bits=int(m.good_bits),
        good_msgs=int(m.good_msgs),
        rounds=int(m.rounds),
        epochs=len(result.epochs),
        agreed=bool(result.agreed),
        valid=bool(valid),
        competitive_ratio=competitive_ratio(m.good_bits, m.bad_bits, n),
        violations=len(result.violations),
        notes=list(result.violations),
    )


def trace_path(cfg: ExperimentConfig, n: int, seed_index: int) -> Path:
    path = Path(cfg.trace)
    if len(cfg.trials()) == 1:
        return path
    return path.with_name(f"{path.stem}.n{n}.s{seed_index}{path.suffix or '.jsonl'}")


def _run_one(args) -> TrialRecord:
    cfg, n, s = args
    return run_trial(cfg, n, s)


def run_experiment(cfg: ExperimentConfig) -> list[TrialRecord]:
    cfg.validate()
    work = [(cfg, n, s) for n, s in cfg.trials()]
    if cfg.jobs == 1 or len(work) == 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_run_one, work))


def emit(records: list[TrialRecord], fmt: str, path: str | Path) -> None:
    if not records:
        raise ValueError("no records to write")
    rows = [r.row() for r in records]
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
                w.writeheader()
                w.writerows(rows)
            elif fmt == "json":
                json.dump(rows, fh, indent=1)
                fh.write("\n")
            else:
                raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_records(path: str | Path, fmt: str) -> list[dict]:
    """Rows back from an emitted file, with CSV values typed like JSON."""
    with open(path, newline="") as fh:
        if fmt == "json":
            return json.load(fh)
        out = []
        for row in csv.DictReader(fh):
            typed = {}
            for f in fields(TrialRecord):
                if f.name not in row:
                    continue
                v = row[f.name]
                if f.type in ("int",):
                    typed[f.name] = int(v)
                elif f.type in ("float",):
                    typed[f.name] = float(v)
                elif f.type in ("bool",):
                    typed[f.name] = v == "True"
                else:
                    typed[f.name] = v
            out.append(typed)
        return out


def exit_code(records: list[TrialRecord]) -> int:
    ok = all(r.violations == 0 and r.agreed and r.valid for r in records)
    return 0 if ok else 1


def env_base_seed(default: int) -> int:
    raw = os.environ.get("BYZKIT_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"BYZKIT_SEED must be an integer, got {raw!r}") from None


def summary(records: list[TrialRecord]) -> dict:
    return {
        "trials": len(records),
        "agreed": sum(r.agreed for r in records),
        "valid": sum(r.valid for r in records),
        "violations": sum(r.violations for r in records),
        "mean_epochs": float(np.mean([r.epochs for r in records])),
        "mean_good_msgs": float(np.mean([r.good_msgs for r in records])),
    }


__all__ = [
    "CSV_FIELDS", "ExperimentConfig", "TrialRecord", "run_trial", "run_experiment", "emit",
    "read_records", "exit_code", "competitive_ratio", "trial_seed",
]
