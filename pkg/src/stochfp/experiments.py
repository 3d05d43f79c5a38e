"""Experiment harness: JSON configs to seeded runs, CSV traces, and rate fits.

Config documents are strict JSON: every field is consumed exactly once and an
unknown or missing field is a hard error naming the offending path (silent
defaults would undermine the bit-for-bit reproducibility contract). Outputs
per experiment directory:

  seed_<seed>.csv   one row per iteration, columns
                    n,beta_or_alpha,k_n,cum_queries,residual,dist_to_fp,noise_norm
  aggregate.csv     per-n mean and standard error across seeds
  progress.csv      lower-bound runs only: per-n progress statistics
  summary.json      config echo, rate fits, bound overlays, check results

Floats in CSV are serialized with 17 significant digits so the files are
byte-identical across reruns with the same config and seeds.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import linalg, mdp as mdp_mod
from .engine import (
    BatchSchedule,
    StepSchedule,
    bound_contractive,
    bound_nonexpansive,
    halpern_run,
    kappa_bar_bounded_range,
    km_run,
)
from .linalg import NormKind, as_vector, norm, norm_equivalence_mu
from .lower_bound import SpanAlgorithm, build_instance, run_adversarial
from .operators import (
    AffineContraction,
    ConstantMap,
    Operator,
    PlaneRotation,
    ShiftProjection,
)
from .oracles import (
    AdditiveGaussianIID,
    NoNoise,
    OracleDescriptor,
    ResistantBernoulli,
    RngStream,
)

__all__ = [
    "ConfigError",
    "RateFit",
    "parse_seed_spec",
    "validate_config",
    "load_config",
    "run_experiment",
    "fit_rate",
    "evaluate_bounds",
    "read_aggregate_csv",
]

_KINDS = ("fixedpoint", "lowerbound", "mdp-avg", "mdp-disc")


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field path."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


class _Fields:
    """Tracks field consumption of one JSON object so leftovers become errors."""

    def __init__(self, doc, path: str):
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        self.doc = doc
        self.path = path
        self.seen: set[str] = set()

    def take(self, name: str, required: bool = True):
        if name not in self.doc:
            if required:
                raise ConfigError(f"{self.path}.{name}: missing required field")
            return None
        self.seen.add(name)
        return self.doc[name]

    def done(self):
        unknown = sorted(set(self.doc) - self.seen)
        if unknown:
            raise ConfigError(f"{self.path}.{unknown[0]}: unknown field")

    def sub(self, name: str, required: bool = True) -> "_Fields | None":
        val = self.take(name, required=required)
        if val is None:
            return None
        return _Fields(val, f"{self.path}.{name}")


def _real(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def parse_seed_spec(spec) -> list[int]:
    """Seeds as a JSON list of ints or an inclusive range string 'A..B'."""
    if isinstance(spec, str):
        parts = spec.split("..")
        if len(parts) != 2:
            raise ConfigError(f"seeds: range string must look like 'A..B', got {spec!r}")
        try:
            lo, hi = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"seeds: range endpoints must be integers, got {spec!r}")
        if hi < lo:
            raise ConfigError(f"seeds: empty range {spec!r}")
        seeds = list(range(lo, hi + 1))
    elif isinstance(spec, list):
        seeds = [_integer(s, "seeds[]") for s in spec]
    else:
        raise ConfigError("seeds: expected a list of integers or a range string 'A..B'")
    if not seeds:
        raise ConfigError("seeds: must be non-empty")
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds: must be >= 0")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: duplicates are not allowed")
    return seeds


def _build_norm(spec, path: str) -> NormKind:
    if isinstance(spec, str):
        table = {"l1": linalg.L1, "l2": linalg.L2, "linf": linalg.LINF}
        if spec not in table:
            raise ConfigError(f"{path}: unknown norm {spec!r} (use l1, l2, linf, or an lp object)")
        return table[spec]
    f = _Fields(spec, path)
    kind = f.take("kind")
    if kind != "lp":
        raise ConfigError(f"{path}.kind: only 'lp' norm objects are supported, got {kind!r}")
    p = _real(f.take("p"), f"{path}.p")
    f.done()
    try:
        return linalg.lp(p)
    except ValueError as exc:
        raise ConfigError(f"{path}.p: {exc}")


def _build_operator(spec, path: str, norm_kind: NormKind) -> Operator:
    f = _Fields(spec, path)
    kind = f.take("kind")
    try:
        if kind == "plane-rotation":
            theta = _real(f.take("theta"), f"{path}.theta")
            dim_raw = f.take("dim", required=False)
            dim = 2 if dim_raw is None else _integer(dim_raw, f"{path}.dim")
            f.done()
            return PlaneRotation(theta, dim, declared_norm=norm_kind)
        if kind == "affine-contraction":
            matrix = f.take("matrix")
            offset = f.take("offset")
            gamma = _real(f.take("gamma"), f"{path}.gamma")
            f.done()
            return AffineContraction(matrix, offset, gamma, declared_norm=norm_kind)
        if kind == "shift-projection":
            lam = _real(f.take("lam"), f"{path}.lam")
            dim = _integer(f.take("dim"), f"{path}.dim")
            f.done()
            return ShiftProjection(lam, dim)
        if kind == "constant":
            target = f.take("target")
            f.done()
            return ConstantMap(target, declared_norm=norm_kind)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}")
    raise ConfigError(f"{path}.kind: unknown operator kind {kind!r}")


def _build_noise(spec, path: str):
    f = _Fields(spec, path)
    kind = f.take("kind")
    try:
        if kind == "none":
            f.done()
            return NoNoise()
        if kind == "gaussian":
            e = _real(f.take("e"), f"{path}.e")
            f.done()
            return AdditiveGaussianIID(e)
        if kind == "resistant":
            p = _real(f.take("p"), f"{path}.p")
            f.done()
            return ResistantBernoulli(p)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}")
    raise ConfigError(f"{path}.kind: unknown noise kind {kind!r}")


def _build_steps(spec, path: str) -> StepSchedule:
    f = _Fields(spec, path)
    kind = f.take("kind")
    try:
        if kind == "halpern-classic":
            f.done()
            return StepSchedule.halpern_classic()
        if kind == "halpern-shifted":
            f.done()
            return StepSchedule.halpern_shifted()
        if kind == "km-constant":
            alpha = _real(f.take("alpha"), f"{path}.alpha")
            f.done()
            return StepSchedule.km_constant(alpha)
        if kind == "km-polynomial":
            a = _real(f.take("a"), f"{path}.a")
            f.done()
            return StepSchedule.km_polynomial(a)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}")
    raise ConfigError(f"{path}.kind: unknown step-schedule kind {kind!r}")


def _build_batches(spec, path: str) -> BatchSchedule:
    f = _Fields(spec, path)
    kind = f.take("kind")
    try:
        if kind == "constant":
            k = _integer(f.take("k"), f"{path}.k")
            f.done()
            return BatchSchedule.constant(k)
        if kind == "power":
            a = _real(f.take("a"), f"{path}.a")
            f.done()
            return BatchSchedule.power(a)
        if kind == "contractive-geometric":
            gamma = _real(f.take("gamma"), f"{path}.gamma")
            horizon = _integer(f.take("horizon"), f"{path}.horizon")
            f.done()
            return BatchSchedule.contractive_geometric(gamma, horizon)
        if kind == "power-six":
            f.done()
            return BatchSchedule.power_six()
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}")
    raise ConfigError(f"{path}.kind: unknown batch-schedule kind {kind!r}")


def _normalize_mdp(spec, path: str) -> dict:
    """Accept an inline MDP object or a file path; return the validated dict."""
    if isinstance(spec, str):
        if not os.path.exists(spec):
            raise ConfigError(f"{path}: file {spec!r} does not exist")
        try:
            return mdp_mod.load_mdp(spec).to_dict()
        except mdp_mod.MDPValidationError as exc:
            raise ConfigError(f"{path}: {exc}")
    try:
        return mdp_mod.mdp_from_dict(spec).to_dict()
    except mdp_mod.MDPValidationError as exc:
        raise ConfigError(f"{path}: {exc}")


def _normalize_vector(spec, path: str, dim: int) -> list[float]:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return [float(spec)] * dim
    if not isinstance(spec, list):
        raise ConfigError(f"{path}: expected a number or a list of numbers")
    vec = [_real(v, f"{path}[]") for v in spec]
    if len(vec) != dim:
        raise ConfigError(f"{path}: length {len(vec)} does not match dimension {dim}")
    return vec


def _validate_fit_block(f: _Fields | None) -> dict | None:
    if f is None:
        return None
    window = f.take("window")
    if (
        not isinstance(window, list)
        or len(window) != 2
        or any(isinstance(w, bool) or not isinstance(w, int) for w in window)
    ):
        raise ConfigError(f"{f.path}.window: expected [lo, hi] integers")
    lo, hi = window
    if not 1 <= lo < hi:
        raise ConfigError(f"{f.path}.window: need 1 <= lo < hi, got {window}")
    out = {"window": [lo, hi]}
    floor = f.take("noise_floor", required=False)
    if floor is not None:
        out["noise_floor"] = _real(floor, f"{f.path}.noise_floor")
    expect = f.take("expect_slope", required=False)
    if expect is not None:
        if not isinstance(expect, list) or len(expect) != 2:
            raise ConfigError(f"{f.path}.expect_slope: expected [lo, hi]")
        out["expect_slope"] = [
            _real(expect[0], f"{f.path}.expect_slope[0]"),
            _real(expect[1], f"{f.path}.expect_slope[1]"),
        ]
    f.done()
    return out


def _validate_bounds_block(f: _Fields | None) -> dict | None:
    if f is None:
        return None
    family = f.take("family")
    if family not in ("nonexpansive", "contractive"):
        raise ConfigError(f"{f.path}.family: expected 'nonexpansive' or 'contractive'")
    out = {"family": family, "sigma": _real(f.take("sigma"), f"{f.path}.sigma")}
    if out["sigma"] < 0:
        raise ConfigError(f"{f.path}.sigma: must be >= 0")
    if family == "nonexpansive":
        m_val = f.take("range_bound", required=False)
        if m_val is not None:
            out["range_bound"] = _real(m_val, f"{f.path}.range_bound")
    f.done()
    return out


def validate_config(doc) -> dict:
    """Validate and normalize an experiment config document.

    Returns a plain JSON-safe dict (MDP files are inlined, seeds expanded) so
    worker processes need no filesystem access.
    """
    f = _Fields(doc, "config")
    kind = f.take("kind")
    if kind not in _KINDS:
        raise ConfigError(f"config.kind: expected one of {list(_KINDS)}, got {kind!r}")
    out: dict = {"kind": kind}
    out["seeds"] = parse_seed_spec(f.take("seeds"))
    stream = f.take("stream", required=False)
    out["stream"] = 0 if stream is None else _integer(stream, "config.stream")

    if kind == "fixedpoint":
        norm_kind = _build_norm(f.take("norm"), "config.norm")
        out["norm"] = doc["norm"]
        op = _build_operator(f.take("operator"), "config.operator", norm_kind)
        out["operator"] = doc["operator"]
        noise = _build_noise(f.take("noise"), "config.noise")
        out["noise"] = doc["noise"]
        method = _build_steps(f.take("method"), "config.method")
        out["method"] = doc["method"]
        try:
            OracleDescriptor(op, noise)
        except ValueError as exc:
            raise ConfigError(f"config.noise: {exc}")
        batches_spec = f.take("batches", required=False)
        if method.is_halpern:
            if batches_spec is None:
                raise ConfigError("config.batches: missing required field (halpern methods batch)")
            _build_batches(batches_spec, "config.batches")
            out["batches"] = batches_spec
        else:
            if batches_spec is not None:
                b = _build_batches(batches_spec, "config.batches")
                if b.kind != "constant" or b.size(1) != 1:
                    raise ConfigError(
                        "config.batches: averaged (km) methods use one query per step; "
                        "omit batches or set constant k = 1"
                    )
            out["batches"] = {"kind": "constant", "k": 1}
        out["x0"] = _normalize_vector(f.take("x0"), "config.x0", op.dim)
        out["N"] = _integer(f.take("N"), "config.N")
        if out["N"] < 1:
            raise ConfigError("config.N: must be >= 1")
        out["bounds"] = _validate_bounds_block(f.sub("bounds", required=False))
        if out["bounds"] is not None:
            _prepare_bounds(out)  # fail fast on missing parameters
        out["fit"] = _validate_fit_block(f.sub("fit", required=False))
        f.done()
        return out

    if kind == "lowerbound":
        eps = _real(f.take("epsilon"), "config.epsilon")
        kb = _real(f.take("kappa_bar"), "config.kappa_bar")
        sg = _real(f.take("sigma"), "config.sigma")
        try:
            build_instance(eps, kb, sg)
        except ValueError as exc:
            raise ConfigError(f"config: {exc}")
        out.update({"epsilon": eps, "kappa_bar": kb, "sigma": sg})
        algo = f.sub("algorithm")
        algo_kind = algo.take("kind")
        if algo_kind == "halpern-classic":
            algo.done()
            out["algorithm"] = {"kind": "halpern-classic"}
        elif algo_kind == "km-constant":
            alpha = _real(algo.take("alpha"), "config.algorithm.alpha")
            algo.done()
            try:
                StepSchedule.km_constant(alpha)
            except ValueError as exc:
                raise ConfigError(f"config.algorithm.alpha: {exc}")
            out["algorithm"] = {"kind": "km-constant", "alpha": alpha}
        else:
            raise ConfigError(
                f"config.algorithm.kind: expected 'halpern-classic' or 'km-constant', got {algo_kind!r}"
            )
        _build_batches(f.take("batches"), "config.batches")
        out["batches"] = doc["batches"]
        f.done()
        return out

    # mdp-avg and mdp-disc
    out["mdp"] = _normalize_mdp(f.take("mdp"), "config.mdp")
    model = mdp_mod.mdp_from_dict(out["mdp"])
    shape = (model.num_states, model.num_actions)
    out["N"] = None
    algorithm = f.take("algorithm")
    solver_tol = f.take("solver_tol", required=False)
    out["solver_tol"] = 1e-10 if solver_tol is None else _real(solver_tol, "config.solver_tol")
    if out["solver_tol"] <= 0:
        raise ConfigError("config.solver_tol: must be positive")
    q0 = f.take("q0", required=False)
    if q0 is None:
        out["q0"] = [[0.0] * shape[1] for _ in range(shape[0])]
    else:
        arr = np.asarray(q0, dtype=np.float64) if isinstance(q0, list) else None
        if arr is None or arr.shape != shape:
            raise ConfigError(f"config.q0: expected an {shape[0]}x{shape[1]} nested list")
        out["q0"] = arr.tolist()

    if kind == "mdp-avg":
        if algorithm not in ("halpern", "benchmark", "rvi"):
            raise ConfigError(
                f"config.algorithm: expected 'halpern', 'benchmark', or 'rvi', got {algorithm!r}"
            )
        out["algorithm"] = algorithm
        anchor = f.sub("anchor", required=algorithm in ("halpern", "rvi"))
        if algorithm == "benchmark":
            if anchor is not None:
                raise ConfigError("config.anchor: the benchmark run subtracts v*, not an anchor")
            out["anchor"] = None
        else:
            out["anchor"] = _validate_anchor(anchor, model)
        a_exp = f.take("a_exponent", required=False)
        if algorithm == "rvi":
            if a_exp is None:
                raise ConfigError("config.a_exponent: missing required field for the rvi baseline")
            out["a_exponent"] = _real(a_exp, "config.a_exponent")
            if not 0.8 < out["a_exponent"] <= 1.0:
                raise ConfigError("config.a_exponent: must lie in (4/5, 1]")
        elif a_exp is not None:
            raise ConfigError("config.a_exponent: only the rvi baseline takes a step exponent")
        out["N"] = _integer(f.take("N"), "config.N")
        if out["N"] < 1:
            raise ConfigError("config.N: must be >= 1")
        ratio = f.sub("residual_ratio_check", required=False)
        if ratio is not None:
            early = _integer(ratio.take("early_n"), f"{ratio.path}.early_n")
            late = _integer(ratio.take("late_n"), f"{ratio.path}.late_n")
            max_ratio = _real(ratio.take("max_ratio"), f"{ratio.path}.max_ratio")
            ratio.done()
            if not 1 <= early < late <= out["N"]:
                raise ConfigError(f"{ratio.path}: need 1 <= early_n < late_n <= N")
            out["residual_ratio_check"] = {
                "early_n": early,
                "late_n": late,
                "max_ratio": max_ratio,
            }
        else:
            out["residual_ratio_check"] = None
        f.done()
        return out

    # mdp-disc
    if algorithm not in ("halpern", "vanilla"):
        raise ConfigError(f"config.algorithm: expected 'halpern' or 'vanilla', got {algorithm!r}")
    out["algorithm"] = algorithm
    out["gamma"] = _real(f.take("gamma"), "config.gamma")
    if not 0.0 < out["gamma"] < 1.0:
        raise ConfigError("config.gamma: must lie in (0, 1)")
    alpha_spec = f.take("alpha", required=False)
    if algorithm == "vanilla":
        if alpha_spec is None:
            raise ConfigError("config.alpha: missing required field for the vanilla baseline")
        steps = _build_steps(alpha_spec, "config.alpha")
        if steps.is_halpern:
            raise ConfigError("config.alpha: the vanilla baseline takes an averaged (km) schedule")
        out["alpha"] = alpha_spec
    elif alpha_spec is not None:
        raise ConfigError("config.alpha: only the vanilla baseline takes a step schedule")
    n_spec = f.take("N", required=False)
    target_eps = f.take("target_epsilon", required=False)
    if (n_spec is None) == (target_eps is None):
        raise ConfigError("config: provide exactly one of N or target_epsilon")
    if n_spec is not None:
        out["N"] = _integer(n_spec, "config.N")
        if out["N"] < 1:
            raise ConfigError("config.N: must be >= 1")
        out["target_epsilon"] = None
    else:
        out["target_epsilon"] = _real(target_eps, "config.target_epsilon")
        if out["target_epsilon"] <= 0:
            raise ConfigError("config.target_epsilon: must be positive")
        q0_norm = float(np.abs(np.asarray(out["q0"])).max())
        out["N"] = mdp_mod.discounted_iteration_count(
            model, out["gamma"], out["target_epsilon"], q0_norm
        )
    cap = model.r_max / (1.0 - out["gamma"])
    if float(np.abs(np.asarray(out["q0"])).max()) > cap:
        raise ConfigError("config.q0: sup norm must not exceed r_max / (1 - gamma)")
    f.done()
    return out


def _validate_anchor(f: _Fields, model) -> dict:
    kind = f.take("kind")
    if kind in ("max", "min", "mean"):
        f.done()
        return {"kind": kind}
    if kind == "coordinate":
        s = _integer(f.take("s"), f"{f.path}.s")
        a = _integer(f.take("a"), f"{f.path}.a")
        f.done()
        if not (0 <= s < model.num_states and 0 <= a < model.num_actions):
            raise ConfigError(f"{f.path}: coordinate ({s}, {a}) out of range for the MDP")
        return {"kind": "coordinate", "s": s, "a": a}
    raise ConfigError(f"{f.path}.kind: unknown anchor kind {kind!r}")


def _anchor_from(spec: dict) -> mdp_mod.AnchorFunction:
    if spec["kind"] == "coordinate":
        return mdp_mod.AnchorFunction("coordinate", spec["s"], spec["a"])
    return mdp_mod.AnchorFunction(spec["kind"])


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    return validate_config(doc)


# ---------------------------------------------------------------------------
# Seed workers (top level so they pickle into a process pool)


def _record_to_rows(rec) -> dict:
    return {
        "n": rec.n.tolist(),
        "weight": rec.weight.tolist(),
        "batch": rec.batch.tolist(),
        "cum_queries": rec.cum_queries.tolist(),
        "residual": rec.residual.tolist(),
        "dist_to_fp": None if rec.dist_to_fp is None else rec.dist_to_fp.tolist(),
        "noise_norm": rec.noise_norm.tolist(),
        "aborted": rec.aborted,
        "abort_reason": rec.abort_reason,
    }


def _run_seed(cfg: dict, seed: int) -> dict:
    kind = cfg["kind"]
    rng = RngStream(seed, cfg["stream"])
    if kind == "fixedpoint":
        norm_kind = _build_norm(cfg["norm"], "config.norm")
        op = _build_operator(cfg["operator"], "config.operator", norm_kind)
        noise = _build_noise(cfg["noise"], "config.noise")
        oracle = OracleDescriptor(op, noise)
        method = _build_steps(cfg["method"], "config.method")
        x0 = np.asarray(cfg["x0"], dtype=np.float64)
        if method.is_halpern:
            rec = halpern_run(
                oracle, x0, method, _build_batches(cfg["batches"], "config.batches"),
                cfg["N"], norm_kind, rng,
            )
        else:
            rec = km_run(oracle, x0, method, cfg["N"], norm_kind, rng)
        out = _record_to_rows(rec)
        out["seed"] = seed
        return out
    if kind == "lowerbound":
        inst = build_instance(cfg["epsilon"], cfg["kappa_bar"], cfg["sigma"])
        batches = _build_batches(cfg["batches"], "config.batches")
        if cfg["algorithm"]["kind"] == "halpern-classic":
            algo = SpanAlgorithm("halpern-classic", batches)
        else:
            algo = SpanAlgorithm("km-constant", batches, alpha=cfg["algorithm"]["alpha"])
        tr = run_adversarial(inst, algo, rng)
        return {
            "seed": seed,
            "n": tr.n.tolist(),
            "weight": tr.weight.tolist(),
            "batch": tr.batch.tolist(),
            "cum_queries": tr.cum_queries.tolist(),
            "residual": tr.residual.tolist(),
            "dist_to_fp": tr.dist_to_fp.tolist(),
            "noise_norm": tr.noise_norm.tolist(),
            "prog": tr.prog.tolist(),
            "aborted": False,
            "abort_reason": None,
        }
    model = mdp_mod.mdp_from_dict(cfg["mdp"])
    q0 = np.asarray(cfg["q0"], dtype=np.float64)
    if kind == "mdp-avg":
        sol = mdp_mod.solve_average_exact(model, cfg["solver_tol"])
        if cfg["algorithm"] == "halpern":
            _, rec = mdp_mod.halpern_q_average(
                model, _anchor_from(cfg["anchor"]), q0, cfg["N"], rng, v_star=sol.v_star
            )
        elif cfg["algorithm"] == "benchmark":
            _, rec = mdp_mod.benchmark_q_average(model, sol.v_star, q0, cfg["N"], rng)
        else:
            _, rec = mdp_mod.rvi_q_learning(
                model, _anchor_from(cfg["anchor"]), cfg["a_exponent"], q0, cfg["N"], rng,
                v_star=sol.v_star,
            )
        out = _record_to_rows(rec)
        out["seed"] = seed
        out["v_star"] = sol.v_star
        return out
    # mdp-disc
    q_star = mdp_mod.solve_discounted_exact(model, cfg["gamma"], cfg["solver_tol"])
    if cfg["algorithm"] == "halpern":
        _, rec = mdp_mod.halpern_q_discounted(
            model, cfg["gamma"], q0, cfg["N"], rng, q_star=q_star
        )
    else:
        steps = _build_steps(cfg["alpha"], "config.alpha")
        _, rec = mdp_mod.vanilla_q_discounted(
            model, cfg["gamma"], steps, q0, cfg["N"], rng, q_star=q_star
        )
    out = _record_to_rows(rec)
    out["seed"] = seed
    return out


def _pool_entry(args):
    cfg, seed = args
    return _run_seed(cfg, seed)


# ---------------------------------------------------------------------------
# Output writers


_SEED_HEADER = "n,beta_or_alpha,k_n,cum_queries,residual,dist_to_fp,noise_norm"


def _write_seed_csv(path: str, rows: dict):
    dist = rows["dist_to_fp"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_SEED_HEADER + "\n")
        for i, n in enumerate(rows["n"]):
            dist_s = "" if dist is None else _fmt(dist[i])
            fh.write(
                f"{n},{_fmt(rows['weight'][i])},{rows['batch'][i]},{rows['cum_queries'][i]},"
                f"{_fmt(rows['residual'][i])},{dist_s},{_fmt(rows['noise_norm'][i])}\n"
            )


def _mean_sem(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    if values.shape[0] < 2:
        sem = np.zeros_like(mean)
    else:
        sem = values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])
    return mean, sem


def _aggregate(results: list[dict]) -> dict:
    """Per-n mean and standard error over the rows all seeds share."""
    n_rows = min(len(r["n"]) for r in results)
    base = results[0]
    agg = {
        "n": base["n"][:n_rows],
        "k_n": base["batch"][:n_rows],
        "cum_queries": base["cum_queries"][:n_rows],
    }
    res = np.array([r["residual"][:n_rows] for r in results])
    agg["residual_mean"], agg["residual_sem"] = _mean_sem(res)
    if all(r["dist_to_fp"] is not None for r in results):
        dist = np.array([r["dist_to_fp"][:n_rows] for r in results])
        agg["dist_mean"], agg["dist_sem"] = _mean_sem(dist)
    else:
        agg["dist_mean"] = agg["dist_sem"] = None
    noise = np.array([r["noise_norm"][:n_rows] for r in results])
    agg["noise_mean"], agg["noise_sem"] = _mean_sem(noise)
    return agg


_AGG_HEADER = (
    "n,k_n,cum_queries,residual_mean,residual_sem,"
    "dist_to_fp_mean,dist_to_fp_sem,noise_norm_mean,noise_norm_sem"
)


def _write_aggregate_csv(path: str, agg: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_AGG_HEADER + "\n")
        for i, n in enumerate(agg["n"]):
            if agg["dist_mean"] is None:
                dist_s = ","
            else:
                dist_s = f"{_fmt(agg['dist_mean'][i])},{_fmt(agg['dist_sem'][i])}"
            fh.write(
                f"{n},{agg['k_n'][i]},{agg['cum_queries'][i]},"
                f"{_fmt(agg['residual_mean'][i])},{_fmt(agg['residual_sem'][i])},"
                f"{dist_s},{_fmt(agg['noise_mean'][i])},{_fmt(agg['noise_sem'][i])}\n"
            )


def read_aggregate_csv(path) -> dict:
    """Read an aggregate.csv back into column arrays (empty dist columns -> None)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != _AGG_HEADER:
            raise ConfigError(f"{path}: unexpected aggregate header {header!r}")
        cols = {name: [] for name in header.split(",")}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != 9:
                raise ConfigError(f"{path}: malformed row {line!r}")
            for name, val in zip(cols, parts):
                cols[name].append(val)
    out = {
        "n": np.array([int(v) for v in cols["n"]]),
        "k_n": np.array([int(v) for v in cols["k_n"]]),
        "cum_queries": np.array([int(v) for v in cols["cum_queries"]]),
        "residual_mean": np.array([float(v) for v in cols["residual_mean"]]),
        "residual_sem": np.array([float(v) for v in cols["residual_sem"]]),
        "noise_norm_mean": np.array([float(v) for v in cols["noise_norm_mean"]]),
        "noise_norm_sem": np.array([float(v) for v in cols["noise_norm_sem"]]),
    }
    if any(v != "" for v in cols["dist_to_fp_mean"]):
        out["dist_to_fp_mean"] = np.array([float(v) for v in cols["dist_to_fp_mean"]])
        out["dist_to_fp_sem"] = np.array([float(v) for v in cols["dist_to_fp_sem"]])
    else:
        out["dist_to_fp_mean"] = out["dist_to_fp_sem"] = None
    return out


def _write_progress_csv(path: str, results: list[dict], d: int):
    """Per-n progress statistics across seeds for lower-bound runs."""
    n_rows = min(len(r["n"]) for r in results)
    progs = np.array([r["prog"][:n_rows] for r in results], dtype=np.float64)
    ns = results[0]["n"][:n_rows]
    cums = results[0]["cum_queries"][:n_rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,cum_queries,prog_mean,prog_min,prog_max,frac_prog_lt_d\n")
        for i in range(n_rows):
            col = progs[:, i]
            fh.write(
                f"{ns[i]},{cums[i]},{_fmt(col.mean())},{int(col.min())},{int(col.max())},"
                f"{_fmt(float((col < d).mean()))}\n"
            )


# ---------------------------------------------------------------------------
# Rate fits and bound overlays


@dataclass(frozen=True)
class RateFit:
    """Least-squares power-law fit of mean residuals: log y = slope log n + intercept."""

    slope: float
    intercept: float
    r_squared: float
    window: tuple[int, int]
    n_points: int


def fit_rate(ns, means, window, noise_floor: float | None = 1e-12) -> RateFit:
    """Fit log(mean) against log(n) over n in [window[0], window[1]].

    Means at or below noise_floor are treated as numerically zero and
    excluded (a residual that underflows to the arithmetic floor carries no
    rate information); pass noise_floor=None to require strict positivity.
    Negative means, an all-excluded window, or fewer than 5 surviving points
    raise ValueError.
    """
    ns = np.asarray(ns, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    lo, hi = int(window[0]), int(window[1])
    if not 1 <= lo < hi:
        raise ValueError(f"fit window must satisfy 1 <= lo < hi, got {(lo, hi)}")
    mask = (ns >= lo) & (ns <= hi)
    if not mask.any():
        raise ValueError(f"no trace rows fall in the fit window [{lo}, {hi}]")
    ys = means[mask]
    xs = ns[mask]
    if (ys < 0).any():
        raise ValueError("mean residuals in the fit window must be nonnegative")
    if noise_floor is None:
        if (ys <= 0).any():
            raise ValueError("nonpositive mean residual in the fit window")
    else:
        keep = ys > noise_floor
        xs, ys = xs[keep], ys[keep]
    if xs.shape[0] < 5:
        raise ValueError(
            f"fit window [{lo}, {hi}] keeps {xs.shape[0]} usable points; need at least 5"
        )
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    if ss_tot <= 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(float(slope), float(intercept), r2, (lo, hi), int(xs.shape[0]))


def _prepare_bounds(cfg: dict) -> dict:
    """Resolve bound parameters from a fixedpoint config; raise on gaps."""
    spec = cfg["bounds"]
    norm_kind = _build_norm(cfg["norm"], "config.norm")
    op = _build_operator(cfg["operator"], "config.operator", norm_kind)
    x0 = np.asarray(cfg["x0"], dtype=np.float64)
    if spec["family"] == "nonexpansive":
        m_val = spec.get("range_bound")
        if m_val is None:
            if isinstance(op, ShiftProjection):
                m_val = op.range_bound()
            else:
                raise ConfigError(
                    "config.bounds.range_bound: required unless the operator is a "
                    "shift-projection (whose range bound is d * lam)"
                )
        kappa = kappa_bar_bounded_range(float(m_val), x0, norm_kind)
        mu = norm_equivalence_mu(norm_kind, op.dim)
        return {"family": "nonexpansive", "kappa_bar": kappa, "mu": mu, "sigma": spec["sigma"]}
    info = op.fixed_point_info()
    if info.point is None:
        raise ConfigError(
            "config.bounds: the contractive bound needs the operator's fixed point "
            f"({info.description})"
        )
    if not op.gamma < 1.0:
        raise ConfigError("config.bounds: the contractive bound needs a contraction factor < 1")
    dist0 = norm(x0 - info.point, norm_kind)
    return {
        "family": "contractive",
        "dist0": dist0,
        "gamma": op.gamma,
        "sigma": spec["sigma"],
    }


def evaluate_bounds(cfg: dict, agg: dict) -> dict:
    """Theoretical curve next to the empirical means, with per-n within_bound flags.

    Nonexpansive: the residual-mean column against the anchored-iteration
    curve with sigma_n = mu sigma / sqrt(k_n) from the actual batch sizes;
    this is a per-n guarantee, so the check gates on all_within.
    Contractive: the distance-mean column against (dist0 + 2 sigma) /
    ((1 - gamma)(n + 1)) per recorded n. That guarantee covers the final
    iterate of a run whose geometric-taper batches target horizon N; interior
    rows are informational only (their batches are still small), so the check
    gates on final_within.
    """
    params = _prepare_bounds(cfg)
    ns = np.asarray(agg["n"], dtype=np.int64)
    rows = []
    if params["family"] == "nonexpansive":
        ks = np.asarray(agg["k_n"], dtype=np.float64)
        sigma_seq = params["mu"] * params["sigma"] / np.sqrt(ks)
        empirical = np.asarray(agg["residual_mean"], dtype=np.float64)
        for i, n in enumerate(ns):
            if n < 1:
                continue
            b = bound_nonexpansive(params["kappa_bar"], sigma_seq[: i + 1], int(n))
            rows.append(
                {
                    "n": int(n),
                    "empirical": float(empirical[i]),
                    "bound": float(b),
                    "within_bound": bool(empirical[i] <= b),
                }
            )
    else:
        if agg.get("dist_mean") is None and agg.get("dist_to_fp_mean") is None:
            raise ConfigError(
                "config.bounds: the contractive bound compares dist_to_fp, "
                "which this run did not record"
            )
        dist = agg.get("dist_mean")
        if dist is None:
            dist = agg["dist_to_fp_mean"]
        dist = np.asarray(dist, dtype=np.float64)
        for i, n in enumerate(ns):
            if n < 1:
                continue
            b = bound_contractive(params["dist0"], params["sigma"], params["gamma"], int(n))
            rows.append(
                {
                    "n": int(n),
                    "empirical": float(dist[i]),
                    "bound": float(b),
                    "within_bound": bool(dist[i] <= b),
                }
            )
    drop_keys = {"family"}
    fragment = {
        "family": params["family"],
        "params": {k: v for k, v in params.items() if k not in drop_keys},
        "rows": rows,
        "all_within": all(r["within_bound"] for r in rows),
        "final_within": bool(rows and rows[-1]["within_bound"]),
    }
    return fragment


# ---------------------------------------------------------------------------
# Experiment driver


def run_experiment(cfg: dict, out_dir, jobs: int = 1) -> dict:
    """Run all seeds of a validated config and write the output files.

    Returns the summary dict (also written to summary.json). Worker processes
    are used when jobs > 1; outputs are written by the parent in seed order,
    so the bytes do not depend on jobs.
    """
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    seeds = cfg["seeds"]
    if jobs == 1 or len(seeds) == 1:
        results = [_run_seed(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            results = list(pool.map(_pool_entry, [(cfg, s) for s in seeds], chunksize=1))
    results.sort(key=lambda r: seeds.index(r["seed"]))

    files = []
    for r in results:
        name = f"seed_{r['seed']}.csv"
        _write_seed_csv(os.path.join(out_dir, name), r)
        files.append(name)
    agg = _aggregate(results)
    _write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), agg)
    files.append("aggregate.csv")

    summary: dict = {
        "kind": cfg["kind"],
        "config": cfg,
        "n_seeds": len(seeds),
        "rows_aggregated": len(agg["n"]),
        "aborted_seeds": [
            {"seed": r["seed"], "reason": r["abort_reason"]} for r in results if r["aborted"]
        ],
    }

    if cfg["kind"] == "lowerbound":
        inst = build_instance(cfg["epsilon"], cfg["kappa_bar"], cfg["sigma"])
        _write_progress_csv(os.path.join(out_dir, "progress.csv"), results, inst.d)
        files.append("progress.csv")
        n_rows = min(len(r["n"]) for r in results)
        res = np.array([r["residual"][:n_rows] for r in results])
        means = res.mean(axis=0)
        progs = np.array([r["prog"][:n_rows] for r in results])
        summary["instance"] = {
            "epsilon": inst.epsilon,
            "kappa_bar": inst.kappa_bar,
            "sigma": inst.sigma,
            "lam": inst.lam,
            "d": inst.d,
            "p": inst.p,
            "n_budget": inst.n_budget,
        }
        summary["barrier_held"] = bool((means > cfg["epsilon"]).all())
        summary["final_frac_prog_lt_d"] = float((progs[:, -1] < inst.d).mean())
        summary["final_mean_residual"] = float(means[-1])

    if cfg["kind"] == "mdp-avg":
        summary["v_star"] = results[0]["v_star"]
        check = cfg.get("residual_ratio_check")
        if check is not None:
            res_mean = np.asarray(agg["residual_mean"])
            ns = list(agg["n"])
            try:
                early = res_mean[ns.index(check["early_n"])]
                late = res_mean[ns.index(check["late_n"])]
            except ValueError:
                raise ConfigError("config.residual_ratio_check: requested n not in the trace")
            summary["residual_ratio"] = {
                "early_n": check["early_n"],
                "late_n": check["late_n"],
                "early_mean": float(early),
                "late_mean": float(late),
                "ratio": float(late / early) if early > 0 else math.inf,
                "max_ratio": check["max_ratio"],
                "held": bool(late <= check["max_ratio"] * early),
            }

    if cfg["kind"] == "mdp-disc":
        summary["N"] = cfg["N"]
        if agg["dist_mean"] is not None:
            summary["final_mean_dist"] = float(np.asarray(agg["dist_mean"])[-1])
            if cfg.get("target_epsilon") is not None:
                summary["target_epsilon"] = cfg["target_epsilon"]
                summary["target_met"] = bool(
                    summary["final_mean_dist"] <= cfg["target_epsilon"]
                )

    if cfg["kind"] == "fixedpoint":
        if cfg.get("bounds") is not None:
            summary["bounds"] = evaluate_bounds(cfg, agg)
        if cfg.get("fit") is not None:
            fit_cfg = cfg["fit"]
            floor = fit_cfg.get("noise_floor", 1e-12)
            try:
                fit = fit_rate(agg["n"], agg["residual_mean"], fit_cfg["window"], floor)
                summary["rate_fit"] = {
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "r_squared": fit.r_squared,
                    "window": list(fit.window),
                    "n_points": fit.n_points,
                }
                if "expect_slope" in fit_cfg:
                    lo, hi = fit_cfg["expect_slope"]
                    summary["rate_fit"]["expect_slope"] = [lo, hi]
                    summary["rate_fit"]["slope_in_range"] = bool(lo <= fit.slope <= hi)
            except ValueError as exc:
                summary["rate_fit"] = {"error": str(exc)}

    summary["checks"] = _collect_checks(cfg, summary)
    files.append("summary.json")
    summary["files"] = sorted(files)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _collect_checks(cfg: dict, summary: dict) -> dict:
    """Pass/fail conditions the --check flag enforces via exit code 3."""
    details = []
    if summary["aborted_seeds"]:
        details.append({"name": "no_aborts", "passed": False})
    if cfg["kind"] == "lowerbound":
        details.append({"name": "barrier_held", "passed": bool(summary["barrier_held"])})
        details.append(
            {
                "name": "final_frac_prog_lt_d_gt_half",
                "passed": bool(summary["final_frac_prog_lt_d"] > 0.5),
            }
        )
    if cfg["kind"] == "fixedpoint":
        bounds = summary.get("bounds")
        if bounds is not None:
            if bounds["family"] == "nonexpansive":
                details.append({"name": "bounds_hold", "passed": bool(bounds["all_within"])})
            else:
                details.append({"name": "final_bound_holds", "passed": bool(bounds["final_within"])})
        fit = summary.get("rate_fit")
        if fit is not None and "slope_in_range" in fit:
            details.append({"name": "slope_in_range", "passed": bool(fit["slope_in_range"])})
        elif fit is not None and "error" in fit:
            details.append({"name": "rate_fit", "passed": False})
    if cfg["kind"] == "mdp-avg" and summary.get("residual_ratio") is not None:
        details.append(
            {"name": "residual_ratio", "passed": bool(summary["residual_ratio"]["held"])}
        )
    if cfg["kind"] == "mdp-disc" and "target_met" in summary:
        details.append({"name": "target_met", "passed": bool(summary["target_met"])})
    return {"passed": all(d["passed"] for d in details), "details": details}
