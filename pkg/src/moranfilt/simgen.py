"""Synthetic spatial regression data and the Monte Carlo experiment runner."""

import logging
import re
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diagnostics as dg
from .eigenbase import EigenBasis, exact_basis_from_coords, nystrom_moran_eigen
from .errors import MoranfiltError, ParameterError
from .esf import fit_esf, fit_esf_stepwise, fit_lm
from .reesf import Theta, fit_reesf, lambda_alpha, true_se_oracle
from .spatial_graph import Family, KernelSpec, estimate_range_mst, select_knots

log = logging.getLogger(__name__)

EXACT_TRUTH_MAX_N = 300
DEFAULT_BETA = (1.0, 2.0, -0.5)
REPORT_COLUMNS = (
    "estimator", "n", "sigma_gamma", "sigma_gamma_x", "r_mult", "alpha_true",
    "bias", "rmse", "rmspe_se", "mean_z_mc", "mean_fit_seconds",
    "replications", "failures", "kernel",
)
_TAG = re.compile(r"^(LM|Estep|RE|fE|fRE)(\d*)(\*?)$")


@dataclass(frozen=True)
class SimConfig:
    n: int = 5_000
    L_gen: int = 200
    L_fit: tuple = (200,)
    beta_true: tuple = DEFAULT_BETA
    sigma_gamma: float = 1.0
    sigma_gamma_x: float = 0.0
    alpha_true: float = 1.0
    r_true_multiplier: float = 1.0
    kernel: str = "exp"
    replications: int = 10
    base_seed: int = 0
    estimators: tuple = ("LM", "fE", "fRE")
    compute_z: bool = True
    max_exact_n: int = dg.DEFAULT_MAX_EXACT_N
    screen_threshold: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.sigma_gamma_x <= 1.0:
            raise ParameterError(f"sigma_gamma_x must be in [0, 1], got {self.sigma_gamma_x}")
        if self.sigma_gamma < 0:
            raise ParameterError("sigma_gamma must be nonnegative")
        if self.replications < 1:
            raise ParameterError("replications must be at least 1")
        if self.n < 10 or self.L_gen < 2 or any(L < 2 for L in self.L_fit):
            raise ParameterError("n >= 10 and all basis sizes >= 2 are required")
        if self.alpha_true <= 0 or self.r_true_multiplier <= 0:
            raise ParameterError("alpha_true and r_true_multiplier must be positive")
        Family(self.kernel)
        expand_estimators(self.estimators, self.L_fit)

    def key(self):
        return dict(n=self.n, sigma_gamma=self.sigma_gamma, sigma_gamma_x=self.sigma_gamma_x,
                    r_mult=self.r_true_multiplier, alpha_true=self.alpha_true,
                    kernel=Family(self.kernel).value)


def expand_estimators(tags, L_fit):
    """Turn tags such as ``fRE`` or ``fE*`` into names like ``fRE200``.

    A tag with an explicit size (``fE100``) is kept as is; a bare tag is
    crossed with every entry of ``L_fit``.
    """
    names = []
    for tag in tags:
        m = _TAG.match(tag)
        if not m:
            raise ParameterError(f"unknown estimator tag {tag!r}")
        kind, size, star = m.groups()
        if kind in ("LM", "Estep", "RE"):
            if size or star:
                raise ParameterError(f"estimator {kind} takes no size or screening flag")
            names.append(kind)
        elif star and kind != "fE":
            raise ParameterError("screening (*) applies to fE only")
        elif size:
            names.append(f"{kind}{size}{star}")
        else:
            names.extend(f"{kind}{L}{star}" for L in L_fit)
    return list(dict.fromkeys(names))


def parse_estimator(name):
    kind, size, star = _TAG.match(name).groups()
    return kind, int(size) if size else None, bool(star)


@dataclass
class TableRow:
    estimator: str
    key: dict
    metrics: dg.MetricRow
    failures: int
    z_values: list = field(default_factory=list)

    def record(self):
        m = self.metrics
        return dict(
            estimator=self.estimator, n=self.key["n"], sigma_gamma=self.key["sigma_gamma"],
            sigma_gamma_x=self.key["sigma_gamma_x"], r_mult=self.key["r_mult"],
            alpha_true=self.key["alpha_true"], bias=m.bias, rmse=m.rmse,
            rmspe_se=m.rmspe_se, mean_z_mc=m.mean_z_mc,
            mean_fit_seconds=m.mean_runtime_seconds, replications=m.replications,
            failures=self.failures, kernel=self.key["kernel"],
        )


@dataclass
class McReportTable:
    rows: list = field(default_factory=list)

    def records(self):
        return [r.record() for r in self.rows]

    def row(self, estimator, **key):
        for r in self.rows:
            if r.estimator == estimator and all(r.key[k] == v for k, v in key.items()):
                return r
        raise KeyError((estimator, key))

    def extend(self, other):
        self.rows.extend(other.rows)
        return self


def generate_coordinates(n, seed):
    """``n`` i.i.d. bivariate standard normal sites."""
    if n < 2:
        raise ParameterError("n must be at least 2")
    return np.random.default_rng(seed).standard_normal((int(n), 2))


def _spatial_draw(basis, variance, alpha, rng):
    if basis.L == 0 or variance == 0:
        return np.zeros(basis.n)
    sd = np.sqrt(variance * lambda_alpha(basis.values, alpha))
    return basis.vectors @ (sd * rng.standard_normal(basis.L))


def generate_covariate(basis, sigma_gamma_x, seed):
    """Covariate with a spatial share ``sigma_gamma_x`` of its variation.

    ``x = E g + e`` with ``g ~ N(0, sigma_gamma_x^2 Lambda(1))`` and
    ``e ~ N(0, (1 - sigma_gamma_x)^2 I)``.
    """
    if not 0.0 <= sigma_gamma_x <= 1.0:
        raise ParameterError(f"sigma_gamma_x must be in [0, 1], got {sigma_gamma_x}")
    rng = np.random.default_rng(seed)
    spatial = _spatial_draw(basis, sigma_gamma_x**2, 1.0, rng)
    return spatial + (1.0 - sigma_gamma_x) * rng.standard_normal(basis.n)


def generate_response(X, basis, beta_true, sigma_gamma, alpha_true, seed):
    """``y = X beta + E gamma + e`` with ``gamma ~ N(0, sigma_gamma^2 Lambda(alpha))``."""
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta_true, dtype=float)
    if X.shape != (basis.n, len(beta)):
        raise ParameterError(f"X has shape {X.shape}, expected ({basis.n}, {len(beta)})")
    if sigma_gamma < 0 or alpha_true <= 0:
        raise ParameterError("sigma_gamma must be >= 0 and alpha_true > 0")
    rng = np.random.default_rng(seed)
    spatial = _spatial_draw(basis, sigma_gamma**2, alpha_true, rng)
    return X @ beta + spatial + rng.standard_normal(basis.n)


def _streams(base_seed, iteration, n_covariates):
    # one child per purpose so estimator choice never shifts the data
    ss = np.random.SeedSequence(int(base_seed) + int(iteration))
    coords, knots, y, xs = ss.spawn(4)
    seed = lambda s: int(s.generate_state(1)[0])
    return seed(coords), seed(knots), seed(y), [seed(c) for c in xs.spawn(n_covariates)]


@dataclass
class Replicate:
    """One simulated dataset together with its generating truth."""

    coords: np.ndarray
    X: np.ndarray
    y: np.ndarray
    r: float
    truth_basis: EigenBasis
    knot_seed: int
    seeds: dict


def simulate_dataset(config, iteration=0):
    k = len(config.beta_true)
    s_coords, s_knots, s_y, s_x = _streams(config.base_seed, iteration, k - 1)
    coords = generate_coordinates(config.n, s_coords)
    r = estimate_range_mst(coords, seed=s_knots)
    truth_spec = KernelSpec(config.kernel, config.r_true_multiplier * r)
    if config.n <= EXACT_TRUTH_MAX_N:
        truth = exact_basis_from_coords(coords, truth_spec)
    else:
        knots = select_knots(coords, min(config.L_gen, config.n), s_knots)
        truth = nystrom_moran_eigen(coords, knots, truth_spec)
    X = np.column_stack([np.ones(config.n)] + [
        generate_covariate(truth, config.sigma_gamma_x, s) for s in s_x])
    y = generate_response(X, truth, config.beta_true, config.sigma_gamma,
                          config.alpha_true, s_y)
    seeds = dict(coords=s_coords, knots=s_knots, covariates=s_x, y=s_y,
                 iteration=iteration, base_seed=config.base_seed)
    return Replicate(coords, X, y, r, truth, s_knots, seeds)


class _BasisCache:
    def __init__(self, rep, spec):
        self.rep, self.spec = rep, spec
        self._cache = {}

    def get(self, L):
        if L not in self._cache:
            t0 = time.perf_counter()
            if L == "exact":
                basis = exact_basis_from_coords(self.rep.coords, self.spec)
            else:
                knots = select_knots(self.rep.coords, min(L, len(self.rep.y)), self.rep.knot_seed)
                basis = nystrom_moran_eigen(self.rep.coords, knots, self.spec).head(L)
            self._cache[L] = (basis, time.perf_counter() - t0)
        return self._cache[L]


def fit_estimator(name, rep, cache, screen_threshold=0.01):
    """Fit one named estimator; returns ``(fit, basis, seconds)``."""
    kind, L, star = parse_estimator(name)
    X, y = rep.X, rep.y
    if kind == "LM":
        t0 = time.perf_counter()
        return fit_lm(X, y), None, time.perf_counter() - t0
    if kind in ("Estep", "RE"):
        basis, tb = cache.get("exact")
    else:
        basis, tb = cache.get(L)
    t0 = time.perf_counter()
    if kind == "fE":
        fit = fit_esf(X, y, basis, screening=screen_threshold if star else None)
    elif kind == "Estep":
        fit = fit_esf_stepwise(X, y, basis)
    else:
        fit = fit_reesf(X, y, basis)
    return fit, basis, tb + time.perf_counter() - t0


def run_replication(config, iteration, names):
    """Simulate one dataset and fit every estimator on it.

    Returns a dict ``name -> record`` where a record holds ``beta1``,
    ``se1``, ``se_true``, ``z`` and ``seconds``, or ``failure``.
    """
    rep = simulate_dataset(config, iteration)
    fit_spec = KernelSpec(config.kernel, rep.r)
    cache = _BasisCache(rep, fit_spec)
    theta_true = Theta(config.alpha_true, config.sigma_gamma**2)
    se_true = float(true_se_oracle(rep.X, rep.truth_basis, theta_true, 1.0)[1])
    z_spec = KernelSpec(config.kernel, rep.r)
    out = {}
    for name in names:
        try:
            fit, _, seconds = fit_estimator(name, rep, cache, config.screen_threshold)
            z = np.nan
            if config.compute_z:
                z = dg.residual_mc_z(fit.residuals, rep.coords, z_spec,
                                     config.max_exact_n, seed=rep.knot_seed).z
            out[name] = dict(beta1=float(fit.beta[1]), se1=float(fit.beta_se[1]),
                             se_true=se_true, z=float(z), seconds=seconds)
        except (MoranfiltError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("replication %d, %s failed: %s", iteration, name, exc)
            out[name] = dict(failure=f"{type(exc).__name__}: {exc}")
    return out


def aggregate(config, names, results):
    """Collapse per-replication records into one row per estimator."""
    truth = config.beta_true[1]
    table = McReportTable()
    for name in names:
        recs = [r[name] for r in results]
        good = [r for r in recs if "failure" not in r]
        failures = len(recs) - len(good)
        if good:
            b = [r["beta1"] for r in good]
            zs = [r["z"] for r in good]
            metrics = dg.MetricRow(
                name, dg.bias(b, truth), dg.rmse(b, truth),
                dg.rmspe_se([r["se1"] for r in good], [r["se_true"] for r in good]),
                float(np.mean(zs)), float(np.mean([r["seconds"] for r in good])), len(good),
            )
        else:
            metrics = dg.MetricRow(name, *([np.nan] * 5), 0)
            zs = []
        table.rows.append(TableRow(name, config.key(), metrics, failures, zs))
    return table


def run_experiment(config, jobs=1):
    """Run all replications of ``config``; deterministic given ``base_seed``.

    Replication ``i`` draws its data from seed ``base_seed + i``. A failed
    fit is logged, counted in ``failures`` and left out of the aggregates.
    """
    names = expand_estimators(config.estimators, config.L_fit)
    if jobs == 1:
        results = [run_replication(config, i, names) for i in range(config.replications)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs)(
            delayed(run_replication)(config, i, names) for i in range(config.replications)
        )
    return aggregate(config, names, results)


def run_matrix(configs, jobs=1):
    table = McReportTable()
    for cfg in configs:
        log.info("running %s", cfg.key())
        table.extend(run_experiment(cfg, jobs=jobs))
    return table


def presets(name, replications=None, base_seed=0, n_values=None):
    """Experiment matrices mirroring the published designs at desk scale."""
    reps = replications
    if name == "table234":
        est = ("LM", "fE100", "fE200", "fE100*", "fE200*", "fRE50", "fRE100", "fRE200")
        return [SimConfig(n=5_000, sigma_gamma=sg, sigma_gamma_x=sx, estimators=est,
                          replications=reps or 200, base_seed=base_seed, compute_z=False)
                for sx in (0.0, 0.6) for sg in (0.5, 1.0, 2.0)]
    if name == "table5":
        ns = n_values or (5_000, 10_000, 20_000)
        return [SimConfig(n=n, sigma_gamma=1.0, sigma_gamma_x=sx, estimators=("LM",),
                          replications=reps or 20, base_seed=base_seed)
                for sx in (0.0, 0.6) for n in ns]
    if name == "scaling":
        ns = n_values or (5_000, 10_000, 20_000)
        return [SimConfig(n=n, sigma_gamma=1.0, estimators=("fE200", "fRE200"),
                          replications=reps or 3, base_seed=base_seed, compute_z=False)
                for n in ns]
    if name == "appendixB":
        return [SimConfig(n=5_000, sigma_gamma=1.0, sigma_gamma_x=0.0, kernel=k,
                          estimators=("LM", "fE200", "fRE200"), replications=reps or 50,
                          base_seed=base_seed, compute_z=False)
                for k in ("exp", "sph", "gau")]
    if name == "appendixC":
        return [SimConfig(n=5_000, sigma_gamma=1.0, sigma_gamma_x=sx, alpha_true=a,
                          estimators=("LM", "fE200", "fRE200"), replications=reps or 50,
                          base_seed=base_seed, compute_z=False)
                for a in (0.5, 1.0, 2.0) for sx in (0.0, 0.6)]
    raise ParameterError(f"unknown preset {name!r}")


def config_to_dict(config):
    d = asdict(config)
    d["L_fit"] = list(d["L_fit"])
    d["beta_true"] = list(d["beta_true"])
    d["estimators"] = list(d["estimators"])
    return d


def with_overrides(config, **kw):
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
