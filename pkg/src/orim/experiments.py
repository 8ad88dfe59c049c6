"""The three reconstruction experiments at desk scale, with deterministic reports.

Each runner takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentReport`. Reports split into deterministic CSV files
(``report.csv``, ``summary.csv``, ``metrics.csv`` and optional curves) and a
separate ``timings.csv``, so that identical (config, seed) pairs give
byte-identical results files.
"""

from __future__ import annotations

import csv
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import OrimError, PreconditionError
from .io import read_config, write_config, write_pgm
from .linalg import MatrixOperator, golub_kahan
from .model import InverseProblem, identity_prior
from .problems import (
    add_noise,
    build_M_variants,
    deblur_problem,
    heat_problem,
    heat_solution,
    phantom_stack,
    prior_from_stack,
    shepp_logan,
    tomo_problem,
)
from .rank_update import UpdateConfig, orim_update
from .regularizers import golub_kahan_inverse, tikhonov_inverse
from .risk import bayes_risk

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "ReportRow",
    "ExperimentReport",
    "relative_error",
    "lsqr_error_curve",
    "run_heat_sequence",
    "run_deblur",
    "run_tomo_perturbed",
    "run_experiment",
]

EXPERIMENTS: dict[str, dict] = {
    "heat_sequence": {
        "n": 500,
        "kappa_min": 1.0,
        "kappa_max": 2.0,
        "n_kappa": 25,
        "repeats": 10,
        "eta": 0.02,
        "outer_tol": 1e-4,
        "inner_tol": 1e-3,
        "max_rank": 50,
    },
    "deblur": {
        "image_size": 64,
        "psf_size": 7,
        "noise_level": 0.01,
        "noise_convention": "squared_ratio",
        "realizations": 100,
        "eta": 0.0,  # 0 selects the Tikhonov-error minimizer
        "ranks": "1,5,5",
        "outer_tol": 1e-6,
        "y_solver": "lsqr",
        "n_slices": 27,
        "true_slice": 15,
        "stack_first": 8,
        "stack_last": 22,
        "save_images": 0,
    },
    "tomo_perturbed": {
        "n_pix": 64,
        "angle_step": 6.0,
        "angle_max": 174.0,
        "angle_shift": 1.0,
        "noise_level": 0.005,
        "noise_convention": "ratio",
        "rank": 4,
        "eta": 0.08,
        "k_max": 150,
        "pixel_width": 1.0,
        "save_images": 0,
    },
}

ALIASES = {"heat": "heat_sequence", "deblur": "deblur", "tomo": "tomo_perturbed"}


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise PreconditionError(f"bad value for {key}: {raw!r}") from exc
    return raw


@dataclass
class ExperimentConfig:
    """Experiment name, seed, output directory and experiment parameters.

    Missing parameters take the defaults in ``EXPERIMENTS[experiment]``.
    """

    experiment: str
    seed: int = 0
    output_dir: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.experiment = ALIASES.get(self.experiment, self.experiment)
        if self.experiment not in EXPERIMENTS:
            raise PreconditionError(f"unknown experiment {self.experiment!r}; "
                                    f"choose from {sorted(EXPERIMENTS)}")
        defaults = EXPERIMENTS[self.experiment]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise PreconditionError(f"unknown parameters for {self.experiment}: {sorted(unknown)}")
        merged = dict(defaults)
        for key, value in self.params.items():
            merged[key] = _coerce(key, value, defaults[key]) if isinstance(value, str) \
                else type(defaults[key])(value)
        self.params = merged

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict[str, str]:
        out = {"experiment": self.experiment, "seed": str(self.seed),
               "output_dir": self.output_dir}
        out.update({k: _format(v) for k, v in self.params.items()})
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "ExperimentConfig":
        values = dict(values)
        if "experiment" not in values:
            raise PreconditionError("config is missing 'experiment'")
        name = values.pop("experiment")
        try:
            seed = int(values.pop("seed", "0"))
        except ValueError as exc:
            raise PreconditionError("seed must be an integer") from exc
        out = values.pop("output_dir", "")
        return cls(name, seed, out, values)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        values = read_config(path)
        values.update({k: str(v) for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def save(self, path) -> None:
        write_config(path, self.to_dict())


@dataclass
class ReportRow:
    identifier: str
    repeat: int
    rank: int
    f: float
    rel_error: float
    wall_ms: float
    seed: int
    status: str = "ok"


def _percentiles(values):
    v = np.asarray(values, dtype=float)
    return (float(np.median(v)), float(np.percentile(v, 25)), float(np.percentile(v, 75)))


@dataclass
class ExperimentReport:
    """Per-run rows plus experiment-level metrics.

    ``metrics`` holds deterministic numbers; ``timing_metrics`` holds anything
    derived from wall-clock time. ``curves`` maps a name to a list of values.
    """

    experiment: str
    config: ExperimentConfig
    rows: list[ReportRow] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    timing_metrics: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)

    def identifiers(self) -> list[str]:
        seen: dict[str, None] = {}
        for row in self.rows:
            seen.setdefault(row.identifier, None)
        return list(seen)

    def errors(self, identifier: str) -> np.ndarray:
        return np.array([r.rel_error for r in self.rows if r.identifier == identifier])

    def summary(self) -> list[dict]:
        """Median, 25th/75th percentiles, mean and std of the relative error."""
        out = []
        for ident in self.identifiers():
            e = self.errors(ident)
            med, p25, p75 = _percentiles(e)
            out.append({"identifier": ident, "count": e.size, "median": med, "p25": p25,
                        "p75": p75, "mean": float(e.mean()),
                        "std": float(e.std(ddof=1)) if e.size > 1 else 0.0})
        return out

    def timing_summary(self) -> list[dict]:
        out = []
        for ident in self.identifiers():
            t = [r.wall_ms for r in self.rows if r.identifier == ident]
            med, p25, p75 = _percentiles(t)
            out.append({"identifier": ident, "median_ms": med, "p25_ms": p25, "p75_ms": p75})
        return out

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        os.makedirs(out, exist_ok=True)
        written = []

        def dump(name, header, rows):
            path = out / name
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_format(v) for v in row])
            written.append(path)

        dump("report.csv", ["identifier", "repeat", "rank", "f", "rel_error", "seed", "status"],
             [(r.identifier, r.repeat, r.rank, float(r.f), float(r.rel_error), r.seed, r.status)
              for r in self.rows])
        summ = self.summary()
        dump("summary.csv", ["identifier", "count", "median", "p25", "p75", "mean", "std"],
             [tuple(s.values()) for s in summ])
        dump("metrics.csv", ["name", "value"], sorted(self.metrics.items()))
        if self.curves:
            names = list(self.curves)
            length = max(len(c) for c in self.curves.values())
            dump("curves.csv", ["index"] + names,
                 [(i + 1, *[float(self.curves[n][i]) if i < len(self.curves[n]) else ""
                            for n in names]) for i in range(length)])
        dump("timings.csv", ["identifier", "repeat", "wall_ms"],
             [(r.identifier, r.repeat, float(r.wall_ms)) for r in self.rows])
        dump("timing_metrics.csv", ["name", "value"], sorted(self.timing_metrics.items()))
        for name, img in self.images.items():
            path = out / f"{name}.pgm"
            write_pgm(path, img)
            written.append(path)
        cfg = out / "config.txt"
        self.config.save(cfg)
        written.append(cfg)
        return written


def relative_error(estimate, truth) -> float:
    """``||estimate - truth|| / ||truth||``."""
    truth = np.asarray(truth, dtype=float)
    return float(np.linalg.norm(np.asarray(estimate) - truth) / np.linalg.norm(truth))


def _noisy(clean, level, convention, seed):
    # a zero level is allowed here for noiseless sanity runs
    if level == 0:
        return clean.copy()
    return add_noise(clean, level, convention, seed)[0]


def _rng(seed: int, *keys: int) -> int:
    # independent, reproducible stream per (seed, keys)
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


# Heat sequence ===============================================================
def run_heat_sequence(config: ExperimentConfig) -> ExperimentReport:
    """Per-parameter SVD/Tikhonov versus one SVD followed by chained ORIM updates.

    Noise is drawn from the model, ``delta ~ N(0, eta^2 I)``.
    """
    c = config.params
    n, eta = c["n"], c["eta"]
    if not 1.0 <= c["kappa_min"] <= c["kappa_max"] <= 2.0:
        raise PreconditionError("kappa grid must lie in [1, 2]")
    kappas = np.linspace(c["kappa_min"], c["kappa_max"], c["n_kappa"])
    prior = identity_prior(n)
    xi = heat_solution(n)
    As = [heat_problem(n, k) for k in kappas]
    update_cfg = UpdateConfig(outer_tol=c["outer_tol"], inner_tol=c["inner_tol"],
                              outer_max_rank=c["max_rank"], y_solver="dense", seed=config.seed)
    report = ExperimentReport("heat_sequence", config)
    svd_totals, upd_totals = [], []

    def tikhonov(A):
        U, s, Vt = np.linalg.svd(A)
        return (Vt.T * (s / (s**2 + eta**2))) @ U.T, s

    for rep in range(c["repeats"]):
        bs = [A @ xi + eta * np.random.default_rng(_rng(config.seed, rep, j)).standard_normal(n)
              for j, A in enumerate(As)]
        svd_total = 0.0
        for j, (A, b) in enumerate(zip(As, bs)):
            t0 = time.perf_counter()
            P, s = tikhonov(A)
            x = P @ b
            ms = 1e3 * (time.perf_counter() - t0)
            svd_total += ms
            f = float(np.sum(eta**2 / (s**2 + eta**2)))
            report.rows.append(ReportRow(f"tikhonov:kappa={kappas[j]:.6f}", rep, n, f,
                                         relative_error(x, xi), ms, config.seed))
        upd_total = 0.0
        P = None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for j, (A, b) in enumerate(zip(As, bs)):
                t0 = time.perf_counter()
                status, rank = "ok", 0
                if P is None:
                    P, s = tikhonov(A)
                    f = float(np.sum(eta**2 / (s**2 + eta**2)))
                else:
                    problem = InverseProblem(A, eta, prior, P)
                    try:
                        Z, trace = orim_update(problem, update_cfg)
                        P = P + Z.to_dense()
                        rank, f = Z.rank, trace.final_f
                        if trace.termination == "inner_failure":
                            status = "inner_failure"
                    except OrimError as exc:
                        status, f = f"failed: {type(exc).__name__}", float("nan")
                x = P @ b
                ms = 1e3 * (time.perf_counter() - t0)
                upd_total += ms
                report.rows.append(ReportRow(f"update:kappa={kappas[j]:.6f}", rep, rank, f,
                                             relative_error(x, xi), ms, config.seed, status))
        svd_totals.append(svd_total)
        upd_totals.append(upd_total)

    ratios = []
    for k in kappas:
        et = np.median(report.errors(f"tikhonov:kappa={k:.6f}"))
        eu = np.median(report.errors(f"update:kappa={k:.6f}"))
        ratios.append(eu / et)
    report.metrics.update({
        "max_error_ratio": float(np.max(ratios)),
        "mean_error_ratio": float(np.mean(ratios)),
        "n_kappa": len(kappas),
    })
    report.curves["error_ratio"] = ratios
    med_svd, p25_svd, p75_svd = _percentiles(svd_totals)
    med_upd, p25_upd, p75_upd = _percentiles(upd_totals)
    report.timing_metrics.update({
        "svd_total_ms_median": med_svd, "svd_total_ms_p25": p25_svd, "svd_total_ms_p75": p75_svd,
        "update_total_ms_median": med_upd, "update_total_ms_p25": p25_upd,
        "update_total_ms_p75": p75_upd,
        "speedup": med_svd / med_upd,
    })
    return report


# Deblurring ==================================================================
def _parse_ranks(text: str) -> list[int]:
    try:
        ranks = [int(t) for t in str(text).split(",")]
    except ValueError as exc:
        raise PreconditionError(f"ranks must be comma-separated integers, got {text!r}") from exc
    if len(ranks) != 3 or min(ranks) < 0:
        raise PreconditionError("ranks needs three nonnegative entries")
    return ranks


def run_deblur(config: ExperimentConfig) -> ExperimentReport:
    """Tikhonov versus ORIM-updated Tikhonov for three priors, over noise realizations.

    The true image is one slice of a synthetic phantom stack; the prior mean
    averages a range of neighbouring slices excluding it.
    """
    c = config.params
    size = c["image_size"]
    ranks = _parse_ranks(c["ranks"])
    stack = phantom_stack(size, c["n_slices"])
    first, last, true_idx = c["stack_first"] - 1, c["stack_last"], c["true_slice"] - 1
    if not 0 <= first <= true_idx < last <= len(stack):
        raise PreconditionError("true_slice must lie inside [stack_first, stack_last]")
    truth = stack[true_idx]
    xi = truth.ravel()
    prior = prior_from_stack(stack[first:last], exclude=true_idx - first)
    dp = deblur_problem((size, size), c["psf_size"])
    A = dp.operator
    clean = A.apply(xi)
    level, conv = c["noise_level"], c["noise_convention"]
    b0 = _noisy(clean, level, conv, _rng(config.seed, 0))

    eta = c["eta"]
    if eta <= 0:
        res = minimize_scalar(lambda le: relative_error(tikhonov_inverse(A, 10**le).apply(b0), xi),
                              bounds=(-5, 1), method="bounded", options={"xatol": 1e-6})
        eta = float(10**res.x)
    P = tikhonov_inverse(A, eta).as_operator()

    report = ExperimentReport("deblur", config)
    report.metrics["eta"] = eta
    variants = build_M_variants(prior)
    updates = []
    for j, (M, r) in enumerate(zip(variants, ranks), 1):
        problem = InverseProblem(A, eta, M, P)
        t0 = time.perf_counter()
        Z, trace = orim_update(problem, UpdateConfig(outer_tol=c["outer_tol"], outer_max_rank=r,
                                                     y_solver=c["y_solver"], seed=config.seed))
        updates.append((f"orim_M{j}", Z, trace.final_f, 1e3 * (time.perf_counter() - t0),
                        "inner_failure" if trace.termination == "inner_failure" else "ok"))
        report.metrics[f"rank_M{j}"] = Z.rank
        report.metrics[f"f0_M{j}"] = trace.f0
        report.metrics[f"f_M{j}"] = trace.final_f
    f_tik = bayes_risk(InverseProblem(A, eta, variants[2], P))

    for k in range(c["realizations"]):
        b = b0 if k == 0 else _noisy(clean, level, conv, _rng(config.seed, k))
        t0 = time.perf_counter()
        pb = P.apply(b)
        t_tik = 1e3 * (time.perf_counter() - t0)
        report.rows.append(ReportRow("tikhonov", k, size * size, f_tik,
                                     relative_error(pb, xi), t_tik, config.seed))
        for name, Z, f, ms, status in updates:
            t0 = time.perf_counter()
            x = pb + Z.apply(b)
            apply_ms = 1e3 * (time.perf_counter() - t0) + t_tik
            report.rows.append(ReportRow(name, k, Z.rank, f, relative_error(x, xi),
                                         apply_ms + (ms if k == 0 else 0.0), config.seed, status))
            if k == 0 and c["save_images"]:
                report.images[name] = x.reshape(size, size)
        if k == 0 and c["save_images"]:
            report.images.update({"truth": truth, "observed": b.reshape(size, size),
                                  "mean": prior.mean.reshape(size, size),
                                  "tikhonov": pb.reshape(size, size)})
    means = {s["identifier"]: s["mean"] for s in report.summary()}
    for name in ("tikhonov", "orim_M1", "orim_M2", "orim_M3"):
        report.metrics[f"mean_rel_{name}"] = means[name]
    report.metrics["improvement_M3"] = 1.0 - means["orim_M3"] / means["tikhonov"]
    return report


# Tomography ==================================================================
def lsqr_error_curve(A, b, truth, k_max: int) -> np.ndarray:
    """Relative error of the LSQR iterates ``k = 1..k_max``.

    Iterates come from a reorthogonalized Golub-Kahan run, as
    ``Q_k argmin ||B_k y - beta_1 e_1||``.
    """
    bd = golub_kahan(MatrixOperator(A), b, k_max)
    beta1 = np.linalg.norm(b)
    errs = []
    for k in range(1, bd.k + 1):
        rhs = np.zeros(k + 1)
        rhs[0] = beta1
        y = np.linalg.lstsq(bd.B[: k + 1, :k], rhs, rcond=None)[0]
        errs.append(relative_error(bd.Q[:, :k] @ y, truth))
    return np.array(errs)


def run_tomo_perturbed(config: ExperimentConfig) -> ExperimentReport:
    """Golub-Kahan inverse for one angle set, reused and ORIM-updated for shifted angles."""
    c = config.params
    n_pix = c["n_pix"]
    angles = np.arange(0.0, c["angle_max"] + 0.5 * c["angle_step"], c["angle_step"])
    orig = tomo_problem(n_pix, angles, pixel_width=c["pixel_width"])
    pert = tomo_problem(n_pix, angles + c["angle_shift"], pixel_width=c["pixel_width"])
    image = shepp_logan(n_pix)
    xi = orig.embed(image)
    level, conv = c["noise_level"], c["noise_convention"]
    b = _noisy(orig.A @ xi, level, conv, _rng(config.seed, 0))
    bt = _noisy(pert.A @ xi, level, conv, _rng(config.seed, 1))

    report = ExperimentReport("tomo_perturbed", config)
    t0 = time.perf_counter()
    curve = lsqr_error_curve(orig.A, b, xi, c["k_max"])
    k_best = int(np.argmin(curve)) + 1
    P = golub_kahan_inverse(MatrixOperator(orig.A), b, k_best).info["low_rank"]
    t_p = 1e3 * (time.perf_counter() - t0)
    x_init = P.apply(bt)
    report.rows.append(ReportRow("initial", 0, P.rank, float("nan"),
                                 relative_error(x_init, xi), t_p, config.seed))

    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problem = InverseProblem(pert.A, c["eta"], identity_prior(xi.size), P)
        Z, trace = orim_update(problem, UpdateConfig(outer_max_rank=c["rank"], y_solver="dense",
                                                     seed=config.seed))
    x_orim = x_init + Z.apply(bt)
    status = "inner_failure" if trace.termination == "inner_failure" else "ok"
    report.rows.append(ReportRow("orim", 0, Z.rank, trace.final_f, relative_error(x_orim, xi),
                                 1e3 * (time.perf_counter() - t0), config.seed, status))
    report.rows[0].f = trace.f0

    t0 = time.perf_counter()
    curve_pert = lsqr_error_curve(pert.A, bt, xi, c["k_max"])
    k_pert = int(np.argmin(curve_pert)) + 1
    report.rows.append(ReportRow("lsqr_best", 0, k_pert, float("nan"), float(curve_pert[k_pert - 1]),
                                 1e3 * (time.perf_counter() - t0), config.seed))

    report.curves["lsqr_original"] = curve
    report.curves["lsqr_perturbed"] = curve_pert
    report.metrics.update({
        "k_original": k_best,
        "k_perturbed": k_pert,
        "rel_original_best": float(curve[k_best - 1]),
        "rel_initial": report.rows[0].rel_error,
        "rel_orim": report.rows[1].rel_error,
        "rel_lsqr_best": report.rows[2].rel_error,
        "interior_minimum": int(1 < k_best < len(curve)),
        "f0": trace.f0,
        "f_orim": trace.final_f,
    })
    if c["save_images"]:
        report.images.update({"truth": image, "initial": orig.crop(x_init),
                              "orim": orig.crop(x_orim)})
    return report


RUNNERS = {
    "heat_sequence": run_heat_sequence,
    "deblur": run_deblur,
    "tomo_perturbed": run_tomo_perturbed,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[config.experiment](config)
