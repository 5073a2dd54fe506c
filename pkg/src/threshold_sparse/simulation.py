"""Monte Carlo machinery: data generators, excess risk, replication metrics.

The two named designs are the median-regression and logistic-regression
data generating processes used by the reference tables: AR(1) Gaussian
regressors, a uniform threshold variable, a shift active below tau0 = 0.5
(the LESS convention), and fixed sparse coefficient patterns.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import CoefficientPair, Dataset, IndicatorDirection, active_set
from .losses import LossKind, LossSpec, loss_value, sigmoid, softplus
from .pipeline import FitConfig, fit_full, fit_oracle, resolve_tau_range
from .search import build_grid

NOISE_KINDS = ("std_normal", "logistic")
RISK_METHODS = ("closed_form", "fresh_sample")


class ExperimentError(RuntimeError):
    """Raised when too many replications of an experiment fail."""


@dataclass(frozen=True)
class TrueModel:
    """The data generating truth: coefficients, threshold, loss and noise."""

    beta0: np.ndarray
    delta0: np.ndarray
    tau0: float
    direction: IndicatorDirection
    spec: LossSpec
    noise: str = "std_normal"

    def __post_init__(self):
        object.__setattr__(self, "beta0", np.asarray(self.beta0, dtype=np.float64))
        object.__setattr__(self, "delta0", np.asarray(self.delta0, dtype=np.float64))
        if self.beta0.shape != self.delta0.shape:
            raise ValueError("beta0 and delta0 must have the same length")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise!r}")

    @property
    def p(self):
        return self.beta0.shape[0]

    def pair(self):
        return CoefficientPair(self.beta0, self.delta0)

    def alpha0(self):
        return np.concatenate([self.beta0, self.delta0])

    def active_alpha(self, tol=0.0):
        return active_set(self.alpha0(), tol)

    def regime_mask(self, q, tau=None):
        tau = self.tau0 if tau is None else tau
        return q > tau if self.direction is IndicatorDirection.GREATER else q < tau

    def predictor(self, x, q, pair=None, tau=None):
        """Linear predictor of ``pair`` (default: the truth) at (x, q)."""
        pair = self.pair() if pair is None else pair
        t = x @ pair.beta
        if np.any(pair.delta):
            t = t + self.regime_mask(q, tau) * (x @ pair.delta)
        return t

    def flipped(self):
        """The same truth in the opposite indicator convention."""
        other = (IndicatorDirection.GREATER
                 if self.direction is IndicatorDirection.LESS
                 else IndicatorDirection.LESS)
        pair = self.pair().flipped()
        return TrueModel(pair.beta, pair.delta, self.tau0, other, self.spec, self.noise)

    def hit_targets(self):
        """Coordinates whose recovery the tables track: the first two active
        beta positions and the first two active delta positions (alpha
        indices). Blocks with fewer actives contribute fewer targets."""
        jb = np.nonzero(self.beta0)[0][:2]
        jd = np.nonzero(self.delta0)[0][:2] + self.p
        return [int(j) for j in jb] + [int(j) for j in jd]


def gen_ar1_gaussian(n, p, rho=0.5, rng=None):
    """Rows i.i.d. N(0, S) with S_ij = rho^|i-j| via the AR(1) recursion."""
    if not abs(rho) < 1:
        raise ValueError("need |rho| < 1")
    rng = np.random.default_rng() if rng is None else rng
    z = rng.standard_normal((n, p))
    x = np.empty((n, p))
    x[:, 0] = z[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        x[:, j] = rho * x[:, j - 1] + c * z[:, j]
    return x


def _median61_truth(p, tau0):
    beta0 = np.zeros(p)
    beta0[[0, 2]] = 0.5
    delta0 = np.zeros(p)
    delta0[[1, 2]] = 1.0
    return TrueModel(beta0, delta0, tau0, IndicatorDirection.LESS,
                     LossSpec.quantile(0.5), "std_normal")


def _logit62_truth(p, tau0):
    beta0 = np.zeros(p)
    beta0[[0, 2]] = 1.5
    delta0 = np.zeros(p)
    delta0[[1, 2]] = 3.0
    return TrueModel(beta0, delta0, tau0, IndicatorDirection.LESS,
                     LossSpec.logistic(), "logistic")


def gen_dataset(design, n, p, tau0=0.5, rng=None, with_noise=True):
    """Draw one sample from a named design.

    ``median61``: y = x'b0 + 1{q < tau0} x'd0 + e, e standard normal, with
    b0 = (0.5, 0, 0.5, 0, ...) and d0 = (0, 1, 1, 0, ...).
    ``logit62``: y = 1{x'b0 + 1{q < tau0} x'd0 + e > 0}, e standard
    logistic, with b0 = (1.5, 0, 1.5, 0, ...) and d0 = (0, 3, 3, 0, ...).

    Returns (Dataset, TrueModel). ``with_noise=False`` is a test hook that
    zeroes the disturbance.
    """
    if p < 3:
        raise ValueError("designs need p >= 3")
    if design == "median61":
        truth = _median61_truth(p, tau0)
    elif design == "logit62":
        truth = _logit62_truth(p, tau0)
    else:
        raise ValueError(f"unknown design {design!r}")
    return gen_dataset_from_truth(truth, n, rng=rng, with_noise=with_noise), truth


def gen_dataset_from_truth(truth, n, rng=None, with_noise=True):
    """AR(1) regressors, uniform threshold variable, response per the truth."""
    rng = np.random.default_rng() if rng is None else rng
    x = gen_ar1_gaussian(n, truth.p, 0.5, rng)
    q = rng.uniform(0.0, 1.0, n)
    t = truth.predictor(x, q)
    if truth.spec.kind is LossKind.LOGISTIC:
        eps = rng.logistic(0.0, 1.0, n) if with_noise else np.zeros(n)
        y = (t + eps > 0).astype(np.float64)
    else:
        eps = rng.standard_normal(n) if with_noise else np.zeros(n)
        y = t + eps
    return Dataset(y, x, q)


def check_risk_gaussian(m, gamma):
    """E rho_gamma(U + m) for U ~ N(0, 1): gamma m + phi(m) - m (1 - Phi(m))."""
    m = np.asarray(m, dtype=np.float64)
    return gamma * m + norm.pdf(m) - m * (1.0 - norm.cdf(m))


def cross_entropy(p0, t):
    """-p0 log g(t) - (1 - p0) log(1 - g(t)) in the overflow-safe form."""
    return softplus(t) - np.asarray(p0) * np.asarray(t)


class RiskEvaluator:
    """Population excess risk estimated on one fresh validation sample.

    ``closed_form`` draws fresh (x, q) and averages the analytically known
    conditional expected loss given the predictor gap; ``fresh_sample``
    additionally draws y and averages the raw loss. Both subtract the same
    functional evaluated at the truth, on the same sample.
    """

    def __init__(self, truth, method="closed_form", n_val=100_000, rng=None):
        if n_val < 1000:
            raise ValueError("n_val must be >= 1000")
        if method not in RISK_METHODS:
            raise ValueError(f"unknown risk method {method!r}")
        if method == "closed_form":
            ok = (truth.spec.kind is LossKind.QUANTILE and truth.noise == "std_normal") or \
                 (truth.spec.kind is LossKind.LOGISTIC and truth.noise == "logistic")
            if not ok:
                raise ValueError("no closed form for this loss/noise combination; "
                                 "use method='fresh_sample'")
        rng = np.random.default_rng() if rng is None else rng
        self.truth = truth
        self.method = method
        self.x = gen_ar1_gaussian(n_val, truth.p, 0.5, rng)
        self.q = rng.uniform(0.0, 1.0, n_val)
        self.t_true = truth.predictor(self.x, self.q)
        if method == "fresh_sample":
            if truth.spec.kind is LossKind.LOGISTIC:
                eps = rng.logistic(0.0, 1.0, n_val)
                self.y = (self.t_true + eps > 0).astype(np.float64)
            else:
                eps = (rng.standard_normal(n_val) if truth.noise == "std_normal"
                       else rng.logistic(0.0, 1.0, n_val))
                self.y = self.t_true + eps
            self.base = float(np.mean(loss_value(truth.spec, self.y, self.t_true)))
        elif truth.spec.kind is LossKind.LOGISTIC:
            self.p0 = sigmoid(self.t_true)
            self.ent = cross_entropy(self.p0, self.t_true)

    def excess(self, pair, tau):
        """Excess risk of (pair, tau), expressed in the truth's convention."""
        t_fit = self.truth.predictor(self.x, self.q, pair=pair, tau=tau)
        spec = self.truth.spec
        if self.method == "fresh_sample":
            return float(np.mean(loss_value(spec, self.y, t_fit))) - self.base
        if spec.kind is LossKind.QUANTILE:
            m = self.t_true - t_fit
            gaps = check_risk_gaussian(m, spec.gamma) - check_risk_gaussian(0.0, spec.gamma)
        else:
            gaps = cross_entropy(self.p0, t_fit) - self.ent
        return float(np.mean(gaps))


def excess_risk(truth, pair, tau, method="closed_form", n_val=100_000, rng=None):
    """One-shot wrapper around :class:`RiskEvaluator`."""
    return RiskEvaluator(truth, method, n_val, rng).excess(pair, tau)


@dataclass
class ReplicationRecord:
    seed: int
    excess_risk: float = math.nan
    n_active_total: int = 0
    n_active_beta: int = 0
    n_active_delta: int = 0
    covers_truth: bool = False
    hit1: bool = False
    hit2: bool = False
    hit3: bool = False
    hit4: bool = False
    l1_total: float = math.nan
    l1_on_support: float = math.nan
    l1_off_support: float = math.nan
    tau_hat_abs_err: float = math.nan
    tau_tilde_abs_err: float = math.nan
    oracle1_excess: float = math.nan
    oracle2_excess: float = math.nan
    oracle1_l1: float = math.nan
    oracle2_l1: float = math.nan
    oracle2_tau_abs_err: float = math.nan
    runtime_ms: int = 0
    failed: bool = False
    error: str = ""


# replications.csv schema; runtime_ms deliberately excluded so the bytes are
# reproducible across thread counts (timings go to a side file)
CSV_FIELDS = (
    "seed", "excess_risk", "n_active_total", "n_active_beta", "n_active_delta",
    "covers_truth", "hit1", "hit2", "hit3", "hit4",
    "l1_total", "l1_on_support", "l1_off_support",
    "tau_hat_abs_err", "tau_tilde_abs_err",
    "oracle1_excess", "oracle2_excess", "oracle1_l1", "oracle2_l1",
    "oracle2_tau_abs_err", "failed", "error",
)


def replication_metrics(truth, fit, oracle1, oracle2, evaluator,
                        active_tol=1e-8, seed=0, runtime_ms=0):
    """Assemble one table row's worth of per-replication statistics.

    All coefficient metrics are computed in the truth's coordinate system,
    so the beta/delta split matches the tables. ``oracle1``/``oracle2`` are
    (CoefficientPair, tau) as returned by :func:`fit_oracle`.
    """
    if fit.direction is not truth.direction:
        raise ValueError("fit and truth use different indicator conventions")
    alpha0 = truth.alpha0()
    alpha_t = fit.alpha_tilde.as_alpha()
    err = np.abs(alpha_t - alpha0)
    on = np.zeros(alpha0.shape[0], dtype=bool)
    on[truth.active_alpha().indices] = True
    l1_on = float(err[on].sum())
    l1_off = float(err[~on].sum())
    fit_active = active_set(alpha_t, active_tol)
    covers = truth.active_alpha().issubset(fit_active)
    targets = truth.hit_targets()
    hits = [bool(np.abs(alpha_t[j]) > active_tol) for j in targets]
    hits += [True] * (4 - len(hits))
    o1_pair, o1_tau = oracle1
    o2_pair, o2_tau = oracle2
    return ReplicationRecord(
        seed=seed,
        excess_risk=evaluator.excess(fit.alpha_tilde, fit.tau_tilde),
        n_active_total=len(fit.active_beta) + len(fit.active_delta),
        n_active_beta=len(fit.active_beta),
        n_active_delta=len(fit.active_delta),
        covers_truth=bool(covers),
        hit1=hits[0], hit2=hits[1], hit3=hits[2], hit4=hits[3],
        l1_total=l1_on + l1_off,
        l1_on_support=l1_on,
        l1_off_support=l1_off,
        tau_hat_abs_err=abs(fit.tau_hat - truth.tau0),
        tau_tilde_abs_err=abs(fit.tau_tilde - truth.tau0),
        oracle1_excess=evaluator.excess(o1_pair, o1_tau),
        oracle2_excess=evaluator.excess(o2_pair, o2_tau),
        oracle1_l1=float(np.abs(o1_pair.as_alpha() - alpha0).sum()),
        oracle2_l1=float(np.abs(o2_pair.as_alpha() - alpha0).sum()),
        oracle2_tau_abs_err=abs(o2_tau - truth.tau0),
        runtime_ms=runtime_ms,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    design: str
    n: int
    p: int
    replications: int
    master_seed: int
    fit: FitConfig
    risk_method: str = "closed_form"
    n_val: int = 100_000
    tau0: float = 0.5
    truth: TrueModel | None = None  # required for design="custom"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.design not in ("median61", "logit62", "custom"):
            raise ValueError(f"unknown design {self.design!r}")
        if self.design == "custom" and self.truth is None:
            raise ValueError("design='custom' needs an explicit truth")
        if self.risk_method not in RISK_METHODS:
            raise ValueError(f"unknown risk method {self.risk_method!r}")


def _replication_rng(master_seed, r):
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(r,)))


def run_replication(config, r):
    """One full replication: generate, fit, oracle fits, metrics."""
    t0 = time.perf_counter()
    rng = _replication_rng(config.master_seed, r)
    if config.design == "custom":
        truth = config.truth
        dataset = gen_dataset_from_truth(truth, config.n, rng=rng)
    else:
        dataset, truth = gen_dataset(config.design, config.n, config.p,
                                     tau0=config.tau0, rng=rng)
    fit = fit_full(dataset, config.fit)
    truth_active = truth.active_alpha()
    grid = build_grid(dataset, resolve_tau_range(config.fit, dataset),
                      config.fit.grid_mode, config.fit.grid_size)
    oracle1 = fit_oracle(dataset, truth_active, config.fit.spec,
                         solver_opts=config.fit.solver, tau0=truth.tau0,
                         direction=truth.direction)
    oracle2 = fit_oracle(dataset, truth_active, config.fit.spec,
                         solver_opts=config.fit.solver, grid=grid,
                         direction=truth.direction)
    evaluator = RiskEvaluator(truth, config.risk_method, config.n_val, rng)
    runtime_ms = int(round(1000.0 * (time.perf_counter() - t0)))
    return replication_metrics(truth, fit, oracle1, oracle2, evaluator,
                               active_tol=config.fit.active_tol, seed=r,
                               runtime_ms=runtime_ms)


def _run_replication_safe(args):
    config, r = args
    try:
        return run_replication(config, r)
    except Exception as exc:  # noqa: BLE001 - failures are data, not crashes
        msg = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        return ReplicationRecord(seed=r, failed=True, error=msg)


@dataclass
class SummaryRow:
    """Aggregated table row plus the oracle rows' numbers."""

    label: str = ""
    n_replications: int = 0
    n_failed: int = 0
    mean_excess: float = math.nan
    median_excess: float = math.nan
    mean_active: float = math.nan
    mean_active_beta: float = math.nan
    mean_active_delta: float = math.nan
    coverage: float = math.nan
    hit_rates: tuple = (math.nan,) * 4
    mean_l1: float = math.nan
    mean_l1_on: float = math.nan
    mean_l1_off: float = math.nan
    mean_tau_err: float = math.nan
    mean_tau_tilde_err: float = math.nan
    oracle1_mean_excess: float = math.nan
    oracle1_median_excess: float = math.nan
    oracle1_mean_l1: float = math.nan
    oracle2_mean_excess: float = math.nan
    oracle2_median_excess: float = math.nan
    oracle2_mean_l1: float = math.nan
    oracle2_mean_tau_err: float = math.nan


def summarize(records, label=""):
    """Means/medians over the completed replications; failures counted apart."""
    done = [r for r in records if not r.failed]
    row = SummaryRow(label=label, n_replications=len(records),
                     n_failed=len(records) - len(done))
    if not done:
        return row
    fm = lambda key: float(np.mean([getattr(r, key) for r in done]))
    md = lambda key: float(np.median([getattr(r, key) for r in done]))
    row.mean_excess = fm("excess_risk")
    row.median_excess = md("excess_risk")
    row.mean_active = fm("n_active_total")
    row.mean_active_beta = fm("n_active_beta")
    row.mean_active_delta = fm("n_active_delta")
    row.coverage = fm("covers_truth")
    row.hit_rates = tuple(fm(k) for k in ("hit1", "hit2", "hit3", "hit4"))
    row.mean_l1 = fm("l1_total")
    row.mean_l1_on = fm("l1_on_support")
    row.mean_l1_off = fm("l1_off_support")
    row.mean_tau_err = fm("tau_hat_abs_err")
    row.mean_tau_tilde_err = fm("tau_tilde_abs_err")
    row.oracle1_mean_excess = fm("oracle1_excess")
    row.oracle1_median_excess = md("oracle1_excess")
    row.oracle1_mean_l1 = fm("oracle1_l1")
    row.oracle2_mean_excess = fm("oracle2_excess")
    row.oracle2_median_excess = md("oracle2_excess")
    row.oracle2_mean_l1 = fm("oracle2_l1")
    row.oracle2_mean_tau_err = fm("oracle2_tau_abs_err")
    return row


def run_experiment(config, workers=1, max_failure_rate=0.1):
    """Run every replication and aggregate.

    Replication r is seeded by spawn key (master_seed, r), so records do not
    depend on the worker count or chunking. More than ``max_failure_rate``
    failed replications raise ExperimentError.
    """
    reps = range(config.replications)
    if workers <= 1:
        records = [_run_replication_safe((config, r)) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_replication_safe,
                                    ((config, r) for r in reps)))
    records.sort(key=lambda r: r.seed)
    n_failed = sum(r.failed for r in records)
    if n_failed > max_failure_rate * config.replications:
        msgs = {r.error for r in records if r.failed}
        raise ExperimentError(
            f"{n_failed}/{config.replications} replications failed: {sorted(msgs)[:3]}")
    label = f"{config.design} n={config.n} p={config.p}"
    return records, summarize(records, label=label)


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_replications_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_FIELDS) + "\n")
        for r in records:
            fh.write(",".join(_fmt(getattr(r, k)) for k in CSV_FIELDS) + "\n")


def write_timings_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("seed,runtime_ms\n")
        for r in records:
            fh.write(f"{r.seed},{r.runtime_ms}\n")


def read_replications_csv(path):
    """Inverse of :func:`write_replications_csv`."""
    import csv as _csv

    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or set(CSV_FIELDS) - set(reader.fieldnames):
            raise ValueError(f"{path}: not a replications csv (bad header)")
        for row in reader:
            rec = ReplicationRecord(seed=int(row["seed"]))
            for k in CSV_FIELDS:
                if k == "seed":
                    continue
                v = row[k]
                cur = getattr(rec, k)
                if isinstance(cur, bool):
                    setattr(rec, k, bool(int(v)))
                elif isinstance(cur, float):
                    setattr(rec, k, float(v))
                elif isinstance(cur, int):
                    setattr(rec, k, int(float(v)))
                else:
                    setattr(rec, k, v)
            records.append(rec)
    if not records:
        raise ValueError(f"{path}: no replication rows")
    return records


def _md(v, nd=3):
    return "NA" if v != v else f"{v:.{nd}f}"


def summaries_to_markdown(rows):
    """A table shaped like the reference tables: per design, the two oracle
    rows followed by the estimator row."""
    lines = [
        "| Design | Excess risk mean | median | E[J] (beta/delta) | "
        "coverage (t1/t2/t3/t4) | E|a-a0|_1 (on J / off J) | E|tau err| |",
        "|---|---|---|---|---|---|---|",
    ]
    notes = []
    for r in rows:
        h = r.hit_rates
        lines.append(
            f"| Oracle 1 [{r.label}] | {_md(r.oracle1_mean_excess)} | {_md(r.oracle1_median_excess)} "
            f"| NA | NA | {_md(r.oracle1_mean_l1)} ( {_md(r.oracle1_mean_l1)} / NA ) | NA |")
        lines.append(
            f"| Oracle 2 [{r.label}] | {_md(r.oracle2_mean_excess)} | {_md(r.oracle2_median_excess)} "
            f"| NA | NA | {_md(r.oracle2_mean_l1)} ( {_md(r.oracle2_mean_l1)} / NA ) "
            f"| {_md(r.oracle2_mean_tau_err)} |")
        lines.append(
            f"| {r.label} | {_md(r.mean_excess)} | {_md(r.median_excess)} "
            f"| {_md(r.mean_active, 2)} ( {_md(r.mean_active_beta, 1)} / {_md(r.mean_active_delta, 1)} ) "
            f"| {_md(r.coverage, 2)} ( {_md(h[0], 2)} / {_md(h[1], 2)} / {_md(h[2], 2)} / {_md(h[3], 2)} ) "
            f"| {_md(r.mean_l1)} ( {_md(r.mean_l1_on)} / {_md(r.mean_l1_off)} ) "
            f"| {_md(r.mean_tau_err)} |")
        if r.n_failed:
            notes.append(f"{r.label}: {r.n_failed} of {r.n_replications} "
                         "replications failed and are excluded.")
    if notes:
        lines.append("")
        lines.extend(notes)
    return "\n".join(lines) + "\n"


def summary_to_markdown(summary):
    return summaries_to_markdown([summary])
