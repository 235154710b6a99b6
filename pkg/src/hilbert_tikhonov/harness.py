"""Monte Carlo rate studies on the spectral testbed.

A study is a pure function of its :class:`ExperimentConfig`: every trial owns
the random stream ``SeedSequence(root_seed, spawn_key=(m, trial))``, so the
result does not depend on how trials are scheduled across workers.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .estimator import RULES, Sample, lambda_apriori, parameter_condition, tikhonov_solve
from .noise import NoiseModel, sample_noise
from .operators import ForwardOp
from .rkhs import DesignPoints
from .testbed import TestbedSpec

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "TrialResult",
    "RateReport",
    "SaturationReport",
    "make_truth",
    "run_trial",
    "run_rate_study",
    "saturation_contrast",
    "theoretical_exponent",
    "fit_slope",
    "emit_report",
    "read_rates_csv",
    "DEFAULT_M_GRID",
]

DEFAULT_M_GRID = (250, 500, 1000, 2000, 4000, 8000, 16000)
CSV_COLUMNS = ("m", "lambda", "err_median", "err_q1", "err_q3", "n_converged")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    testbed: TestbedSpec = field(default_factory=TestbedSpec)
    op: dict = field(default_factory=lambda: {"kind": "hammerstein", "p": 1.0, "c": 0.1})
    noise: NoiseModel = field(default_factory=NoiseModel)
    q: float = 2.0
    b: float | None = 0.5
    rule: str = "poly"
    m_grid: tuple = DEFAULT_M_GRID
    trials_per_m: int = 50
    root_seed: int = 0
    truth_seed: int = 0
    penalty_a: float | None = None
    restarts: int = 3
    tol: float = 1e-9
    max_iter: int = 50

    def __post_init__(self):
        object.__setattr__(self, "m_grid", tuple(int(m) for m in self.m_grid))
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if not 1.0 <= self.q <= 2.0 + self.p:
            raise ValueError(f"q={self.q} outside [1, 2 + p]")
        if len(self.m_grid) < 4 or any(b <= a for a, b in zip(self.m_grid, self.m_grid[1:])):
            raise ValueError("m_grid must be strictly increasing with at least 4 entries")
        if self.trials_per_m < 1:
            raise ValueError("trials_per_m must be positive")

    @property
    def p(self) -> float:
        return float(self.op.get("p", 1.0))

    def forward_op(self, center: np.ndarray | None = None) -> ForwardOp:
        op = ForwardOp.from_dict(self.testbed, self.op)
        return op if center is None else op.with_center(center)

    def truth(self) -> np.ndarray:
        return make_truth(self.testbed, self.q, self.truth_seed)

    def lam(self, m: int) -> float:
        return lambda_apriori(self.rule, self.p, self.q, m, mu=self.testbed.mu, b=self.b)

    def to_dict(self) -> dict:
        return {
            "testbed": self.testbed.to_dict(),
            "op": dict(self.op),
            "noise": self.noise.to_dict(),
            "p": self.p,
            "q": self.q,
            "b": self.b,
            "rule": self.rule,
            "m_grid": list(self.m_grid),
            "trials_per_m": self.trials_per_m,
            "root_seed": self.root_seed,
            "truth_seed": self.truth_seed,
            "penalty_a": self.penalty_a,
            "restarts": self.restarts,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        op = dict(data.get("op", {"kind": "hammerstein", "p": 1.0, "c": 0.1}))
        if "p" in data:
            if "p" in op and float(op["p"]) != float(data["p"]):
                raise ValueError("top-level p disagrees with op.p")
            op["p"] = float(data["p"])
        kwargs = {
            "testbed": TestbedSpec.from_dict(data.get("testbed", {})),
            "op": op,
            "noise": NoiseModel.from_dict(data.get("noise", {})),
        }
        for key in ("q", "b", "penalty_a", "tol"):
            if data.get(key) is not None:
                kwargs[key] = float(data[key])
        for key in ("trials_per_m", "root_seed", "truth_seed", "restarts", "max_iter"):
            if key in data:
                kwargs[key] = int(data[key])
        if "rule" in data:
            kwargs["rule"] = data["rule"]
        if "m_grid" in data:
            kwargs["m_grid"] = tuple(data["m_grid"])
        return cls(**kwargs)


def make_truth(spec: TestbedSpec, q: float, seed: int = 0) -> np.ndarray:
    """Truth with smoothness just above ``q``: ``f_j = s_j j**-(a q + 0.51)``.

    ``||f||_{H_q}**2 = sum_j j**-1.02`` stays bounded as ``n`` grows, while
    any smoother norm diverges in the untruncated limit.  Signs alternate,
    with the phase set by ``seed``.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    j = np.arange(1, spec.n + 1)
    signs = np.where((j + int(seed)) % 2 == 0, 1.0, -1.0)
    return signs * j.astype(float) ** (-(spec.a * q + 0.51))


@dataclass(frozen=True)
class TrialResult:
    m: int
    trial: int
    error_H: float
    lam: float
    converged: bool
    iterations: int


def trial_rng(root_seed: int, m: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(int(m), int(trial))))


def draw_sample(op: ForwardOp, noise: NoiseModel, f_rho: np.ndarray, m: int, rng: np.random.Generator) -> Sample:
    dp = DesignPoints(op.spec, rng.uniform(0.0, 1.0, m))
    clean = dp.phi @ (np.sqrt(op.spec.mu) * op.apply(f_rho))
    return Sample(dp, clean + sample_noise(noise, rng, size=m))


def run_trial(config: ExperimentConfig, m: int, trial: int, _context=None) -> TrialResult:
    """One draw of design and noise, a solve at the rule's lambda, and its H error."""
    if m not in config.m_grid:
        raise ValueError(f"m={m} is not in the configured grid")
    op, f_rho = _context if _context is not None else _build_context(config)
    rng = trial_rng(config.root_seed, m, trial)
    sample = draw_sample(op, config.noise, f_rho, m, rng)
    lam = config.lam(m)
    res = tikhonov_solve(
        op,
        sample,
        np.zeros(op.spec.n),
        lam,
        tol=config.tol,
        max_iter=config.max_iter,
        restarts=config.restarts,
        rng=rng,
        penalty_a=config.penalty_a,
    )
    if not res.converged:
        logger.info("trial (m=%d, %d) did not converge", m, trial)
    err = float(np.linalg.norm(res.f_hat - f_rho))
    return TrialResult(m, trial, err, lam, res.converged, res.iterations)


def _build_context(config: ExperimentConfig):
    f_rho = config.truth()
    return config.forward_op(center=f_rho), f_rho


_WORKER_CONTEXT = None


def _worker_init(config):
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = (config, _build_context(config))


def _worker_trial(key):
    config, context = _WORKER_CONTEXT
    return run_trial(config, key[0], key[1], context)


def run_trials(config: ExperimentConfig, workers: int = 1) -> list[TrialResult]:
    keys = [(m, t) for m in config.m_grid for t in range(config.trials_per_m)]
    if workers <= 1:
        context = _build_context(config)
        return [run_trial(config, m, t, context) for m, t in keys]
    with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init, initargs=(config,)) as pool:
        # map preserves key order, so aggregation is scheduler independent
        return list(pool.map(_worker_trial, keys, chunksize=max(1, len(keys) // (8 * workers))))


def fit_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of ``y`` on ``x`` and its standard error."""
    res = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(res.slope), float(res.stderr)


def theoretical_exponent(config: ExperimentConfig) -> float:
    """Predicted decay exponent of the H error in ``m``.

    For ``trivial``, ``poly`` and ``log`` these are the closed forms
    ``q/(2(2p+q+1))``, ``q/(2(p+q)+2b(p+1))`` and ``q/(2(p+q))`` (the last one
    in the variable ``m / log m``).  For ``theta_general`` the exponent is read
    off the computed lambdas: error ~ ``lam**(q/(2(p+1)))``.
    """
    p, q, b = config.p, config.q, config.b
    if config.rule == "trivial":
        return q / (2.0 * (2.0 * p + q + 1.0))
    if config.rule == "poly":
        return q / (2.0 * (p + q) + 2.0 * b * (p + 1.0))
    if config.rule == "log":
        return q / (2.0 * (p + q))
    ms = np.array(config.m_grid, dtype=float)
    lams = np.array([config.lam(int(m)) for m in ms])
    slope, _ = fit_slope(np.log(ms), q / (2.0 * (p + 1.0)) * np.log(lams))
    return -slope


@dataclass
class RateReport:
    m: np.ndarray
    lam: np.ndarray
    err_median: np.ndarray
    err_q1: np.ndarray
    err_q3: np.ndarray
    n_converged: np.ndarray
    trials_per_m: int
    rule: str
    fitted_slope: float
    slope_stderr: float
    theoretical: float
    condition_holds: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return abs(self.fitted_slope - self.theoretical) <= 0.4 * self.theoretical + 0.05

    @property
    def reliable(self) -> bool:
        return bool(np.all(self.n_converged >= 0.8 * self.trials_per_m))

    def summary(self) -> dict:
        return {
            "rule": self.rule,
            "fitted_slope": self.fitted_slope,
            "slope_stderr": self.slope_stderr,
            "theoretical": self.theoretical,
            "passed": self.passed,
            "reliable": self.reliable,
            "condition_holds": list(map(bool, self.condition_holds)),
        }


def summarize(config: ExperimentConfig, results: list[TrialResult]) -> RateReport:
    ms = np.array(config.m_grid)
    med, q1, q3, lam, conv = [], [], [], [], []
    for m in ms:
        rows = [r for r in results if r.m == m]
        errs = np.array([r.error_H for r in rows])
        med.append(np.median(errs))
        q1.append(np.percentile(errs, 25))
        q3.append(np.percentile(errs, 75))
        lam.append(rows[0].lam)
        conv.append(sum(r.converged for r in rows))
    med = np.array(med)
    x = np.log(ms / np.log(ms)) if config.rule == "log" else np.log(ms)
    slope, se = fit_slope(x, np.log(med))
    report = RateReport(
        m=ms,
        lam=np.array(lam),
        err_median=med,
        err_q1=np.array(q1),
        err_q3=np.array(q3),
        n_converged=np.array(conv),
        trials_per_m=config.trials_per_m,
        rule=config.rule,
        fitted_slope=-slope,
        slope_stderr=se,
        theoretical=theoretical_exponent(config),
        condition_holds=[parameter_condition(l, m, config.testbed.mu).holds for l, m in zip(lam, ms)],
    )
    if not report.reliable:
        logger.warning("fewer than 80%% of trials converged at some m; report is unreliable")
    return report


def run_rate_study(config: ExperimentConfig, workers: int = 1) -> RateReport:
    return summarize(config, run_trials(config, workers))


@dataclass
class SaturationReport:
    hilbert: RateReport
    standard: RateReport

    @property
    def passed(self) -> bool:
        return self.hilbert.fitted_slope >= self.standard.fitted_slope - 0.02


def saturation_contrast(config: ExperimentConfig, workers: int = 1) -> SaturationReport:
    """Same study with the configured penalty and with ``L = I``.

    Only the penalty exponent differs between the two arms; the forward
    operator, truth, rule and random streams are shared.
    """
    if not 2.0 < config.q <= 2.0 + config.p:
        raise ValueError("saturation contrast needs 2 < q <= 2 + p")
    hilbert = run_rate_study(replace(config, penalty_a=None), workers)
    standard = run_rate_study(replace(config, penalty_a=0.0), workers)
    return SaturationReport(hilbert, standard)


# -- reporting ------------------------------------------------------------------


def _rates_csv_text(report: RateReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for i in range(len(report.m)):
        writer.writerow(
            [
                int(report.m[i]),
                repr(float(report.lam[i])),
                repr(float(report.err_median[i])),
                repr(float(report.err_q1[i])),
                repr(float(report.err_q3[i])),
                int(report.n_converged[i]),
            ]
        )
    return buf.getvalue()


def _rates_svg_text(report: RateReport) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "rates", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        m = report.m.astype(float)
        x = m / np.log(m) if report.rule == "log" else m
        ax.loglog(x, report.err_median, "o", color="k", label="median error")
        ax.vlines(x, report.err_q1, report.err_q3, color="0.6", lw=1)
        anchor = report.err_median[0]
        ax.loglog(x, anchor * (x / x[0]) ** (-report.fitted_slope), "-", label=f"fitted slope {report.fitted_slope:.3f}")
        ax.loglog(x, anchor * (x / x[0]) ** (-report.theoretical), "--", label=f"theoretical {report.theoretical:.3f}")
        ax.set_xlabel("m / log m" if report.rule == "log" else "m")
        ax.set_ylabel("H error")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_report(report: RateReport, out_dir, stem: str = "rates") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.svg``; nothing is written for an empty report."""
    if len(report.m) == 0:
        raise ValueError("cannot emit a report with an empty m grid")
    out_dir = Path(out_dir)
    csv_text = _rates_csv_text(report)
    svg_text = _rates_svg_text(report)
    csv_path, svg_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.svg"
    _atomic_write(csv_path, csv_text)
    _atomic_write(svg_path, svg_text)
    return csv_path, svg_path


def read_rates_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for col in CSV_COLUMNS:
        conv = int if col in ("m", "n_converged") else float
        out[col] = np.array([conv(r[col]) for r in rows])
    return out

