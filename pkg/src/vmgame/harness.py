"""Experiment orchestration: strict JSON configuration, seeded runs across a
worker pool, RFC-4180 CSV traces, JSON summaries, log-log regret slope
fitting, and the alpha = 0 greedy-MLE ablation baseline.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import (
    LinearPayoffModel,
    NoiseOracle,
    RegGameSpec,
    random_matrix_model,
    uniform_simplex,
)
from .discounted import (
    InfiniteVmgConfig,
    random_discounted_game,
    run_vmg_infinite,
    run_vmg_mdp,
)
from .envs import random_finite_game
from .errors import ConfigInvalid, NonPositiveRegret, TraceTooShort
from .markov import MarkovOptSettings, MarkovVmgConfig, run_vmg_markov
from .matrix import (
    MatrixVmgConfig,
    ModelOptSettings,
    run_vmg_bandit,
    run_vmg_matrix,
    run_vmg_symmetric,
)

RUN_SCHEMA = "vmg-run/1"
KINDS = ("matrix", "symmetric", "bandit", "markov_finite", "markov_infinite", "mdp")
CSV_COLUMNS = ("round", "gap", "cum_regret", "wallclock_ms")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "kind": (str, True),
    "T": (int, True),
    "seeds": (list, True),
    "out_dir": (str, True),
    "beta": ((int, float), False),
    "alpha": (dict, False),
    "solver_tol": ((int, float), False),
    "record_timing": (bool, False),
    "instance": (dict, True),
    "model_opt": (dict, False),
}

_INSTANCE_KEYS = {
    "matrix": {"m", "n", "d", "sigma", "instance_seed", "noise"},
    "symmetric": {"m", "d", "sigma", "instance_seed", "noise"},
    "bandit": {"preset", "m", "d", "sigma", "instance_seed", "noise"},
    "markov_finite": {"num_players", "num_states", "action_counts", "horizon",
                      "d", "instance_seed", "zero_sum", "equilibrium_mode"},
    "markov_infinite": {"num_players", "num_states", "action_counts", "gamma",
                        "d", "instance_seed", "zero_sum", "equilibrium_mode"},
    "mdp": {"num_states", "num_actions", "gamma", "d", "instance_seed",
            "option"},
}

_ALPHA_KINDS = {"paper_formula", "constant", "zero"}
_OPT_KEYS = {"max_iter", "grad_tol", "armijo_c", "init_step"}


def validate_config(doc):
    """Strict schema check for an experiment configuration; rejects unknown
    keys at every level and fills defaults. Returns the normalized dict."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("config must be a JSON object")
    unknown = set(doc) - set(_TOP_KEYS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    for key, (typ, required) in _TOP_KEYS.items():
        if key in doc:
            if not isinstance(doc[key], typ) or isinstance(doc[key], bool) and typ is int:
                raise ConfigInvalid(f"config key {key!r} has wrong type")
        elif required:
            raise ConfigInvalid(f"missing required config key {key!r}")
    cfg = copy.deepcopy(doc)
    if cfg["kind"] not in KINDS:
        raise ConfigInvalid(f"unknown experiment kind {cfg['kind']!r}")
    if cfg["T"] < 1:
        raise ConfigInvalid("T must be >= 1")
    if not cfg["seeds"] or not all(isinstance(s, int) for s in cfg["seeds"]):
        raise ConfigInvalid("seeds must be a non-empty list of integers")
    cfg.setdefault("beta", 0.0)
    cfg.setdefault("alpha", {"kind": "paper_formula", "delta": 0.05})
    cfg.setdefault("solver_tol", 1e-8)
    cfg.setdefault("record_timing", False)
    cfg.setdefault("model_opt", {})
    alpha = cfg["alpha"]
    if set(alpha) - {"kind", "delta", "value"}:
        raise ConfigInvalid(f"unknown alpha keys: {sorted(set(alpha) - {'kind', 'delta', 'value'})}")
    if alpha.get("kind") not in _ALPHA_KINDS:
        raise ConfigInvalid(f"alpha kind must be one of {sorted(_ALPHA_KINDS)}")
    if alpha["kind"] == "paper_formula" and "delta" not in alpha:
        raise ConfigInvalid("paper_formula alpha needs a delta")
    if alpha["kind"] == "constant" and "value" not in alpha:
        raise ConfigInvalid("constant alpha needs a value")
    if set(cfg["model_opt"]) - _OPT_KEYS:
        raise ConfigInvalid(f"unknown model_opt keys: {sorted(set(cfg['model_opt']) - _OPT_KEYS)}")
    inst = cfg["instance"]
    allowed = _INSTANCE_KEYS[cfg["kind"]]
    if set(inst) - allowed:
        raise ConfigInvalid(
            f"unknown instance keys for {cfg['kind']}: {sorted(set(inst) - allowed)}")
    if cfg["kind"] == "bandit" and "preset" not in inst:
        for key in ("m", "d", "sigma", "instance_seed"):
            if key not in inst:
                raise ConfigInvalid(f"bandit instance needs {key!r} (or a preset)")
    return cfg


def config_hash(cfg):
    """Stable content hash of a normalized configuration."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _alpha_schedule(cfg):
    alpha = cfg["alpha"]
    if alpha["kind"] == "paper_formula":
        return ("paper_formula", float(alpha["delta"]))
    if alpha["kind"] == "constant":
        return ("constant", float(alpha["value"]))
    return ("zero",)


# ---------------------------------------------------------------------------
# instance construction
# ---------------------------------------------------------------------------

def hard_bandit_instance():
    """Hand-built deceptive bandit: one-hot arms so data on one arm teaches
    nothing about the others; the warm-start parameter scores the deceptive
    arm far above its truth and the optimal arm far below, trapping a pure
    likelihood fit. Arm 0 is optimal by margin 0.3.

    Returns (true_model, omega0)."""
    m = d = 10
    feats = np.eye(m).reshape(m, 1, d)
    payoffs = np.array([1.0, 0.7, 0.6, 0.55, 0.5, 0.45, 0.4, 0.3, 0.2, 0.1])
    model = LinearPayoffModel(feats, payoffs)
    omega0 = np.zeros(d)
    omega0[0] = -2.1
    omega0[1] = 2.1
    return model, omega0


def _matrix_cell(cfg, seed):
    inst = cfg["instance"]
    kind = cfg["kind"]
    beta = float(cfg["beta"])
    opt = ModelOptSettings(**cfg["model_opt"])
    omega0 = None
    if kind == "bandit" and inst.get("preset") == "hard":
        true_model, omega0 = hard_bandit_instance()
        sigma = 0.5
        noise = "gaussian"
    else:
        m = inst["m"]
        n = 1 if kind == "bandit" else inst.get("n", inst["m"])
        true_model = random_matrix_model(
            m, n, inst["d"], inst["instance_seed"],
            antisymmetric=kind == "symmetric")
        sigma = float(inst["sigma"])
        noise = inst.get("noise", "gaussian")
    spec = RegGameSpec(beta, uniform_simplex(true_model.m),
                       uniform_simplex(true_model.n))
    config = MatrixVmgConfig(
        m=true_model.m, n=true_model.n, d=true_model.d, spec=spec,
        T=cfg["T"], alpha_schedule=_alpha_schedule(cfg),
        solver_tol=float(cfg["solver_tol"]), model_opt=opt, seed=seed,
        omega0=omega0)
    oracle = NoiseOracle(true_model, sigma, noise)
    runner = {"matrix": run_vmg_matrix, "symmetric": run_vmg_symmetric,
              "bandit": run_vmg_bandit}[kind]
    return runner(config, oracle)


def _markov_cell(cfg, seed):
    inst = cfg["instance"]
    game = random_finite_game(
        num_players=inst["num_players"], num_states=inst["num_states"],
        action_counts=tuple(inst["action_counts"]), horizon=inst["horizon"],
        d=inst["d"], seed=inst["instance_seed"],
        zero_sum=bool(inst.get("zero_sum", False)))
    config = MarkovVmgConfig(
        T=cfg["T"], beta=float(cfg["beta"]),
        equilibrium_mode=inst.get("equilibrium_mode", "general_cce"),
        alpha_schedule=_alpha_schedule(cfg),
        solver_tol=float(cfg["solver_tol"]),
        model_opt=MarkovOptSettings(**cfg["model_opt"]), seed=seed)
    return run_vmg_markov(config, game)


def _infinite_cell(cfg, seed):
    inst = cfg["instance"]
    game = random_discounted_game(
        num_players=inst["num_players"], num_states=inst["num_states"],
        action_counts=tuple(inst["action_counts"]), gamma=float(inst["gamma"]),
        d=inst["d"], seed=inst["instance_seed"],
        zero_sum=bool(inst.get("zero_sum", False)))
    config = InfiniteVmgConfig(
        T=cfg["T"], beta=float(cfg["beta"]),
        equilibrium_mode=inst.get("equilibrium_mode", "general_cce"),
        alpha_schedule=_alpha_schedule(cfg),
        solver_tol=float(cfg["solver_tol"]),
        model_opt=MarkovOptSettings(**cfg["model_opt"]), seed=seed)
    return run_vmg_infinite(config, game)


def _mdp_cell(cfg, seed):
    inst = cfg["instance"]
    game = random_discounted_game(
        num_players=1, num_states=inst["num_states"],
        action_counts=(inst["num_actions"],), gamma=float(inst["gamma"]),
        d=inst["d"], seed=inst["instance_seed"])
    config = InfiniteVmgConfig(
        T=cfg["T"], beta=float(cfg["beta"]),
        alpha_schedule=_alpha_schedule(cfg),
        solver_tol=float(cfg["solver_tol"]),
        model_opt=MarkovOptSettings(**cfg["model_opt"]), seed=seed)
    return run_vmg_mdp(config, game, option=inst.get("option", "I"))


def run_cell(cfg, seed):
    """Execute one (config, seed) run and return its RegretTrace."""
    kind = cfg["kind"]
    if kind in ("matrix", "symmetric", "bandit"):
        return _matrix_cell(cfg, seed)
    if kind == "markov_finite":
        return _markov_cell(cfg, seed)
    if kind == "markov_infinite":
        return _infinite_cell(cfg, seed)
    return _mdp_cell(cfg, seed)


def baseline_greedy_mle(cfg, seed):
    """The alpha = 0 ablation: the identical pipeline fit by likelihood or
    least squares alone, with no exploration incentive."""
    ablated = copy.deepcopy(cfg)
    ablated["alpha"] = {"kind": "zero"}
    return run_cell(validate_config(ablated), seed)


# ---------------------------------------------------------------------------
# trace persistence and slope fitting
# ---------------------------------------------------------------------------

def trace_to_csv_text(trace, record_timing=False):
    """Render a trace as RFC-4180 CSV text (CRLF line endings); wall-clock
    values are zeroed unless timing capture was requested, keeping reruns
    byte-identical."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    cum = 0.0
    for i, gap in enumerate(trace.gaps):
        cum += gap
        ms = trace.wallclock_ms[i] if record_timing else 0.0
        writer.writerow([i + 1, repr(float(gap)), repr(cum), repr(float(ms))])
    return buf.getvalue()


def write_trace_csv(path, trace, record_timing=False):
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_csv_text(trace, record_timing))


def read_trace_csv(path):
    """Parse a trace CSV back into (gaps, cum_regret, wallclock_ms) arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ConfigInvalid(f"unexpected CSV header {header}")
        rows = [(float(r[1]), float(r[2]), float(r[3])) for r in reader]
    gaps = np.array([r[0] for r in rows])
    cum = np.array([r[1] for r in rows])
    ms = np.array([r[2] for r in rows])
    return gaps, cum, ms


def fit_regret_slope(gaps):
    """Least-squares fit of log(cumulative regret) against log(round) over
    the second half of the trace (the first half is burn-in).

    Returns (slope, intercept, r_squared)."""
    gaps = np.asarray(getattr(gaps, "gaps", gaps), dtype=float)
    if len(gaps) < 50:
        raise TraceTooShort(f"need >= 50 rounds, got {len(gaps)}")
    cum = np.cumsum(gaps)
    half = len(gaps) // 2
    t = np.arange(1, len(gaps) + 1)[half:]
    c = cum[half:]
    if np.any(c <= 0.0):
        raise NonPositiveRegret("cumulative regret is not strictly positive")
    x = np.log(t)
    y = np.log(c)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _worker_count():
    env = os.environ.get("VMG_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigInvalid(f"VMG_THREADS must be an integer, got {env!r}")
    return 1


def run_experiment(config_path):
    """Execute every (config, seed) cell, writing one CSV per run plus a
    'vmg-run/1' JSON summary. Returns the process exit code: 0 on full
    success, 1 on an invalid config, 2 when some runs failed."""
    try:
        with open(config_path) as fh:
            cfg = validate_config(json.load(fh))
    except (OSError, json.JSONDecodeError, ConfigInvalid) as exc:
        print(f"config error: {exc}")
        return 1
    os.makedirs(cfg["out_dir"], exist_ok=True)
    chash = config_hash(cfg)
    seeds = cfg["seeds"]

    def one(seed):
        try:
            trace = run_cell(cfg, seed)
        except Exception as exc:  # per-run failures recorded, not fatal
            return seed, None, f"{type(exc).__name__}: {exc}"
        return seed, trace, None

    workers = min(_worker_count(), len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(seed) for seed in seeds]

    runs = []
    failed = 0
    for seed, trace, error in results:
        entry = {"seed": seed}
        if error is not None:
            failed += 1
            entry["error"] = error
            runs.append(entry)
            continue
        name = f"{cfg['kind']}_seed{seed}.csv"
        write_trace_csv(os.path.join(cfg["out_dir"], name), trace,
                        cfg["record_timing"])
        entry["csv"] = name
        entry["min_gap"] = trace.min_gap()
        entry["final_residual"] = trace.final_residual
        entry["total_regret"] = float(trace.cum_regret[-1]) if len(trace) else 0.0
        entry["rounds"] = len(trace)
        try:
            slope, intercept, r2 = fit_regret_slope(trace)
            entry["slope"] = slope
            entry["slope_intercept"] = intercept
            entry["slope_r2"] = r2
        except (TraceTooShort, NonPositiveRegret) as exc:
            entry["slope"] = None
            entry["slope_note"] = str(exc)
        runs.append(entry)
    summary = {
        "schema": RUN_SCHEMA,
        "config_hash": chash,
        "kind": cfg["kind"],
        "T": cfg["T"],
        "n_runs": len(seeds),
        "n_failed": failed,
        "runs": runs,
    }
    with open(os.path.join(cfg["out_dir"], "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return 2 if failed else 0
