"""Simulation-study designs: convergence, calibration and method comparison.

One matrix ``A`` is drawn per experiment from the master seed; every
replicate draws its own ``x* ~ N(0, I)`` from the stream
``(seed, 1, replicate)``.  Replicates run on a thread pool and results
are sorted by replicate index before being written, so outputs are
byte-identical for any worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import io
import logging
import math
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .calibration import CalibrationReport, gaussian_z, t_z, z_statistic
from .exceptions import BayesCGError, BreakdownError, NotPSDError, SingularGramError
from .hennig import matrix_posterior, project_to_solution
from .linalg import densify, incomplete_cholesky_zero_fill
from .priors import KRYLOV_PHI, PriorSpec, build_prior
from .serialize import dumps
from .solver import SolveConfig, bayescg, classical_cg, hierarchical_posterior
from .testgen import ProblemFamily, draw_truth_and_rhs, generate

logger = logging.getLogger(__name__)

EXPERIMENTS = ("convergence", "uq", "compare")
CONVERGENCE_SCHEMA = "bayescg.convergence/1"
COMPARE_SCHEMA = "bayescg.compare/1"
COMPARE_Z_SCHEMA = "bayescg.compare_z/1"

#: Prior labels understood by the experiment drivers.
PRIOR_LABELS = ("identity", "natural_inverse", "preconditioner", "krylov", "natural_ata")


@dataclass
class ExperimentConfig:
    """Parameters of a simulation study.

    Attributes
    ----------
    experiment : str
        ``"convergence"``, ``"uq"`` or ``"compare"``.
    problem : ProblemFamily
    priors : list of str
        Prior labels from :data:`PRIOR_LABELS`.
    modes : list of str
        Direction modes (convergence only): ``"sequential"``, ``"batch"``,
        ``"optimal"``; classical CG is always included.
    replicates : int
    seed : int
        Master seed for the replicate streams.
    max_iter : int
        Iterations for convergence traces.
    m_uq : int
        Iterations before computing calibration statistics.
    tol : float
    krylov_n, krylov_phi : int, float
        Krylov prior size and complement weight.
    workers : int, optional
        Thread-pool size; defaults to the number of CPUs.
    out : str
    """

    experiment: str = "convergence"
    problem: ProblemFamily = field(default_factory=ProblemFamily)
    priors: list = field(default_factory=lambda: ["identity", "natural_inverse", "preconditioner", "krylov"])
    modes: list = field(default_factory=lambda: ["sequential", "batch", "optimal"])
    replicates: int = 20
    seed: int = 0
    max_iter: int = 100
    m_uq: int = 10
    tol: float = 0.0
    krylov_n: int = 20
    krylov_phi: float = KRYLOV_PHI
    workers: Optional[int] = None
    out: str = "."

    def __post_init__(self):
        if isinstance(self.problem, dict):
            self.problem = ProblemFamily(**self.problem)
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        bad = [p for p in self.priors if p not in PRIOR_LABELS]
        if bad:
            raise ValueError(f"unknown prior labels {bad}")
        if not 1 <= self.m_uq < self.problem.d:
            raise ValueError("m_uq must lie in [1, d)")

    def to_dict(self):
        out = asdict(self)
        out["problem"] = self.problem.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


class Problem:
    """The fixed matrix of an experiment with cached derived quantities."""

    def __init__(self, fam: ProblemFamily):
        self.family = fam
        self.A, self.eigenvalues = generate(fam)
        self.dense = densify(self.A)
        self.d = self.A.shape[0]
        lam = self.eigenvalues
        kappa = lam.max() / lam.min()
        self.xi = float((kappa - 1.0) / (kappa + 1.0))
        # computed up front so worker threads only read shared state
        self.factor = incomplete_cholesky_zero_fill(self.A)

    def truth(self, seed, replicate):
        return draw_truth_and_rhs(self.A, seed, 1, replicate)

    def prior(self, label, x_star, b, cfg: ExperimentConfig):
        if label == "krylov":
            sigma = math.sqrt(float(x_star @ (self.dense @ x_star)))
            spec = PriorSpec("krylov", {"n": cfg.krylov_n, "phi": cfg.krylov_phi, "sigma": sigma, "xi": self.xi})
        else:
            spec = PriorSpec(label)
        factor = self.factor if label == "preconditioner" else None
        return build_prior(spec, self.A, b, factor)


def _pool_map(fn, n, workers):
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(fn, range(n)))
    return sorted(results, key=lambda r: r["replicate"])


def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv(schema, header, rows):
    buf = io.StringIO(newline="")
    buf.write(f"# schema: {schema}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[h]) for h in header) + "\n")
    return buf.getvalue()


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _trace_rows(rep, method, prior, mode, iterates, residuals, x_star, trace_ratio=None):
    rows = []
    for m, x in enumerate(iterates):
        rows.append({
            "replicate": rep, "method": method, "prior": prior, "mode": mode, "m": m,
            "error": float(np.linalg.norm(x - x_star)),
            "residual": float(residuals[m]) if m < len(residuals) else None,
            "trace_ratio": None if trace_ratio is None else float(trace_ratio[m]),
        })
    return rows


def run_convergence(cfg: ExperimentConfig, problem: Optional[Problem] = None):
    """Error and covariance-trace traces for every (prior, mode) pair.

    Returns
    -------
    rows : list of dict
        Tidy records with columns ``replicate, method, prior, mode, m,
        error, residual, trace_ratio``.
    failures : list of dict
        Runs that broke down; their traces up to the breakdown are kept.
    """
    problem = problem or Problem(cfg.problem)

    def one(rep):
        x_star, b = problem.truth(cfg.seed, rep)
        rows, failures = [], []
        it, res = classical_cg(problem.A, b, None, SolveConfig(max_iter=cfg.max_iter, tol=cfg.tol or 0.0))
        rows += _trace_rows(rep, "cg", "", "cg", it, res, x_star)
        for label in cfg.priors:
            prior = problem.prior(label, x_star, b, cfg)
            tr0 = prior.cov.trace()
            for mode in cfg.modes:
                sc = SolveConfig(max_iter=min(cfg.max_iter, problem.d), tol=cfg.tol, mode=mode,
                                 record_iterates=True)
                try:
                    post = bayescg(problem.A, b, prior, sc)
                except BreakdownError as err:
                    failures.append({"replicate": rep, "prior": label, "mode": mode,
                                     "index": err.index, "message": str(err)})
                    post = err.partial
                    if post is None:
                        continue
                rows += _trace_rows(rep, "bayescg", label, mode, post.iterates, post.residual_history,
                                    x_star, post.trace_history() / tr0)
        return {"replicate": rep, "rows": rows, "failures": failures}

    results = _pool_map(one, cfg.replicates, cfg.workers)
    rows = [r for res in results for r in res["rows"]]
    failures = [f for res in results for f in res["failures"]]
    return rows, failures


CONVERGENCE_HEADER = ["replicate", "method", "prior", "mode", "m", "error", "residual", "trace_ratio"]


def write_convergence(cfg: ExperimentConfig, rows, failures):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "convergence.csv", _csv(CONVERGENCE_SCHEMA, CONVERGENCE_HEADER, rows))
    _write(out / "convergence.json", dumps({"config": cfg.to_dict(), "failures": failures}))


def run_uq(cfg: ExperimentConfig, problem: Optional[Problem] = None):
    """Calibration reports after ``m_uq`` batch iterations.

    Each prior label gets Gaussian (``chi2``) and t (``F``) reports; the
    label ``"optimal"`` uses ``Sigma0 = I`` with a priori optimal
    directions.

    Returns
    -------
    dict
        ``{label: (gaussian_report, t_report)}``.
    """
    problem = problem or Problem(cfg.problem)
    m, d = cfg.m_uq, problem.d
    labels = list(cfg.priors) + ["optimal"]

    def one(rep):
        x_star, b = problem.truth(cfg.seed, rep)
        out = {"replicate": rep}
        for label in labels:
            prior = problem.prior("identity" if label == "optimal" else label, x_star, b, cfg)
            mode = "optimal" if label == "optimal" else "batch"
            try:
                post = bayescg(problem.A, b, prior, SolveConfig(max_iter=m, tol=0.0, mode=mode))
                if post.m != m:
                    raise BreakdownError(f"stopped at m = {post.m}", index=post.m)
                out[label] = (gaussian_z(post, x_star), t_z(hierarchical_posterior(post), x_star))
            except (NotPSDError, BayesCGError, ValueError) as err:
                logger.warning("replicate %d, %s: %s", rep, label, err)
                out[label] = None
        return out

    results = _pool_map(one, cfg.replicates, cfg.workers)
    reports = {}
    for label in labels:
        ok = [(r["replicate"], r[label]) for r in results if r[label] is not None]
        reps = [i for i, _ in ok]
        n_failed = len(results) - len(ok)
        g = CalibrationReport([z[0] for _, z in ok], "chi2", (d - m,), reps, n_failed, label=label)
        t = CalibrationReport([z[1] for _, z in ok], "F", (d - m, m), reps, n_failed, label=label)
        reports[label] = (g, t)
    return reports


def write_uq(cfg: ExperimentConfig, reports):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"config": cfg.to_dict(), "reports": {}}
    for label, (g, t) in reports.items():
        _write(out / f"uq_{label}_gaussian.csv", g.to_csv())
        _write(out / f"uq_{label}_t.csv", t.to_csv())
        summary["reports"][label] = {"gaussian": g.summary(), "t": t.summary(),
                                     "gaussian_hist": g.histogram(), "t_hist": t.histogram()}
    _write(out / "uq_summary.json", dumps(_clean(summary)))


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_compare(cfg: ExperimentConfig, problem: Optional[Problem] = None):
    """BayesCG versus the matrix-based solver on identical directions.

    BayesCG uses ``x0 = b`` and ``Sigma0 = b^T b I + b b^T`` (the
    solution-space image of the matrix prior ``H0 = W = I``) with batch
    directions; the matrix method is fed the same directions.

    Returns
    -------
    errors : list of dict
        ``replicate, m, bayescg_error, matrix_error, ratio``.
    zs : list of dict
        ``replicate, bayescg_z, matrix_z, matrix_z_unit`` at ``m_uq``; the
        last uses the covariance without the leading one half.
    """
    problem = problem or Problem(cfg.problem)
    d = problem.d
    A = problem.dense
    I = np.eye(d)
    m_max = min(cfg.max_iter, d)

    def one(rep):
        x_star, b = problem.truth(cfg.seed, rep)
        prior = build_prior(PriorSpec("matrix_equivalent", x0="rhs"), problem.A, b)
        post = bayescg(problem.A, b, prior, SolveConfig(max_iter=m_max, tol=cfg.tol, mode="batch",
                                                        record_iterates=True))
        errs, note = [], None
        for m in range(post.m + 1):
            S = post.directions[:, :m]
            e_b = float(np.linalg.norm(post.iterates[m] - x_star))
            try:
                mp = matrix_posterior(I, I, S, A @ S)
                e_h = float(np.linalg.norm(project_to_solution(mp, b)[0] - x_star))
            except SingularGramError as err:
                note = f"m = {m}: {err}"
                e_h = math.nan
            errs.append({"replicate": rep, "m": m, "bayescg_error": e_b, "matrix_error": e_h,
                         "ratio": e_h / e_b if e_b > 0 else math.nan})
        z = {"replicate": rep, "bayescg_z": math.nan, "matrix_z": math.nan, "matrix_z_unit": math.nan}
        k = cfg.m_uq
        if post.m >= k:
            pk = post.truncated(k)
            try:
                z["bayescg_z"] = gaussian_z(pk, x_star)
                S = pk.directions
                mp = matrix_posterior(I, I, S, A @ S)
                mu, C = project_to_solution(mp, b, half=True)
                z["matrix_z"] = z_statistic(mu, C, x_star, d - k)
                mu, C = project_to_solution(mp, b, half=False)
                z["matrix_z_unit"] = z_statistic(mu, C, x_star, d - k)
            except (NotPSDError, SingularGramError) as err:
                note = f"statistics: {err}"
        if note:
            logger.warning("replicate %d: %s", rep, note)
        return {"replicate": rep, "errors": errs, "z": z, "note": note}

    results = _pool_map(one, cfg.replicates, cfg.workers)
    errors = [e for r in results for e in r["errors"]]
    zs = [r["z"] for r in results]
    notes = [{"replicate": r["replicate"], "note": r["note"]} for r in results if r["note"]]
    return errors, zs, notes


def prior_equivalence(b):
    """Largest deviations between the two m = 0 solution-space priors.

    Returns ``{"half": ..., "unit": ...}``: the maximal absolute difference
    between ``b^T b I + b b^T`` and the projected matrix prior with and
    without the leading one half.
    """
    d = b.shape[0]
    S0 = (b @ b) * np.eye(d) + np.outer(b, b)
    mp = matrix_posterior(np.eye(d), np.eye(d), np.zeros((d, 0)), np.zeros((d, 0)))
    out = {}
    for key, half in (("half", True), ("unit", False)):
        mu, C = project_to_solution(mp, b, half=half)
        out[key] = float(max(np.abs(C - S0).max(), np.abs(mu - b).max()))
    return out


def write_compare(cfg: ExperimentConfig, errors, zs, notes, problem: Optional[Problem] = None):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "compare_errors.csv",
           _csv(COMPARE_SCHEMA, ["replicate", "m", "bayescg_error", "matrix_error", "ratio"], errors))
    _write(out / "compare_z.csv",
           _csv(COMPARE_Z_SCHEMA, ["replicate", "bayescg_z", "matrix_z", "matrix_z_unit"], zs))
    problem = problem or Problem(cfg.problem)
    _, b = problem.truth(cfg.seed, 0)
    summary = {"config": cfg.to_dict(), "notes": notes, "prior_equivalence_m0": prior_equivalence(b)}
    for key in ("bayescg_z", "matrix_z", "matrix_z_unit"):
        v = np.array([z[key] for z in zs], dtype=float)
        v = v[np.isfinite(v)]
        summary[f"{key}_mean"] = float(v.mean()) if v.size else None
    _write(out / "compare_summary.json", dumps(_clean(summary)))


def run_experiment(cfg: ExperimentConfig):
    """Run and write the experiment selected by ``cfg.experiment``."""
    problem = Problem(cfg.problem)
    if cfg.experiment == "convergence":
        rows, failures = run_convergence(cfg, problem)
        write_convergence(cfg, rows, failures)
        return {"rows": len(rows), "failures": len(failures)}
    if cfg.experiment == "uq":
        reports = run_uq(cfg, problem)
        write_uq(cfg, reports)
        return {label: {"gaussian_ks": g.ks, "t_ks": t.ks} for label, (g, t) in reports.items()}
    errors, zs, notes = run_compare(cfg, problem)
    write_compare(cfg, errors, zs, notes, problem)
    return {"replicates": len(zs), "notes": len(notes)}
