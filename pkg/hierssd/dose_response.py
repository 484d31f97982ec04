"""Three-parameter loglogistic fits per (species, contaminant).

The control level ``d`` is fixed from the controls; ``b`` and ``e`` are
fitted by least squares on ``ln R`` with a multi-start Nelder-Mead search in
``(ln b, ln e)`` followed by a coordinate refinement pass.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize, minimize_scalar
from scipy.special import expit

from .exceptions import DomainError, InsufficientDataError, UnstableFitError
from .schemas import CurveFit, EcEstimate, ResponsePoint

logger = logging.getLogger(__name__)

B_STARTS = (0.3, 1.0, 3.0)
REL_TOL = 1e-9
MAX_SWEEPS = 50
# beyond these a fit is reported as non-identifiable
EC50_EXTRAPOLATION_LIMIT = 1e3
B_RANGE = (1e-2, 1e2)
# smallest relative effect at the highest tested concentration
MIN_EFFECT = 1e-6
MIN_BOOT = 200
MAX_BOOT_FAILURE = 0.5


def loglogistic(concentration, b: float, e: float, d: float):
    """d / (1 + (C/e)^b); accepts scalars or arrays, C = 0 gives d."""
    c = np.asarray(concentration, dtype=float)
    with np.errstate(divide="ignore"):
        value = d * expit(-b * (np.log(c) - math.log(e)))
    return float(value) if value.ndim == 0 else value


def _log_prediction(ln_c: np.ndarray, log_b: float, log_e: float, ln_d: float) -> np.ndarray:
    b = math.exp(log_b)
    return ln_d - np.logaddexp(0.0, b * (ln_c - log_e))


def _sse(params, ln_c, y, ln_d) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        if not np.all(np.abs(params) < 700):
            return math.inf
        resid = y - _log_prediction(ln_c, params[0], params[1], ln_d)
        value = float(resid @ resid)
    return value if math.isfinite(value) else math.inf


def _refine(params: np.ndarray, ln_c, y, ln_d) -> tuple[np.ndarray, float]:
    """Coordinate-wise Brent line searches until the SSE stops improving."""
    best = params.copy()
    current = _sse(best, ln_c, y, ln_d)
    for _ in range(MAX_SWEEPS):
        previous = current
        for k in range(len(best)):
            def along(t, k=k):
                trial = best.copy()
                trial[k] = t
                return _sse(trial, ln_c, y, ln_d)

            try:
                res = minimize_scalar(along, bracket=(best[k] - 0.1, best[k] + 0.1), tol=1e-12)
            except RuntimeError:
                # no downhill bracket along this axis
                continue
            if res.fun < current:
                best[k], current = res.x, res.fun
        if previous - current <= REL_TOL * max(previous, 1e-300):
            break
    return best, current


def _minimize(ln_c, y, ln_d, starts: Iterable[tuple[float, float]]):
    """Best (params, sse, success) over all starts."""
    best = None
    for start in starts:
        res = minimize(
            _sse,
            np.asarray(start, dtype=float),
            args=(ln_c, y, ln_d),
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000},
        )
        if not math.isfinite(res.fun):
            continue
        if best is None or res.fun < best[1]:
            best = (res.x, float(res.fun), bool(res.success))
    if best is None:
        return None
    params, sse, success = best
    params, sse = _refine(params, ln_c, y, ln_d)
    return params, sse, success


def default_starts(concentrations: np.ndarray) -> list[tuple[float, float]]:
    positive = concentrations[concentrations > 0]
    e_starts = (positive.min(), float(np.exp(np.log(positive).mean())), positive.max())
    return [(math.log(b), math.log(e)) for e in e_starts for b in B_STARTS]


def _identifiable(b: float, e: float, concentrations: np.ndarray) -> bool:
    lo = concentrations.min() / EC50_EXTRAPOLATION_LIMIT
    hi = concentrations.max() * EC50_EXTRAPOLATION_LIMIT
    if not (B_RANGE[0] <= b <= B_RANGE[1] and lo <= e <= hi):
        return False
    # a curve with no effect anywhere in the tested range is flat
    return float(expit(b * math.log(concentrations.max() / e))) >= MIN_EFFECT


def _as_arrays(points: Sequence[ResponsePoint]) -> tuple[np.ndarray, np.ndarray]:
    conc = np.array([p.concentration for p in points], dtype=float)
    y = np.array([p.y for p in points], dtype=float)
    return conc, y


def _fit_arrays(conc, y, d, species_id="", contaminant_id="", starts=None) -> Optional[CurveFit]:
    ln_c, ln_d = np.log(conc), math.log(d)
    found = _minimize(ln_c, y, ln_d, starts or default_starts(conc))
    if found is None:
        return None
    params, sse, success = found
    b, e = math.exp(params[0]), math.exp(params[1])
    n = len(y)
    return CurveFit(
        species_id=species_id,
        contaminant_id=contaminant_id,
        b=b,
        e=e,
        d=d,
        sigma=math.sqrt(sse / (n - 2)),
        sse=sse,
        n_points=n,
        converged=success and _identifiable(b, e, conc),
    )


def fit_curve(points: Sequence[ResponsePoint], d: float) -> CurveFit:
    if d <= 0:
        raise DomainError(f"control level d must be positive, got {d}")
    conc, y = _as_arrays(points)
    if len(np.unique(conc[conc > 0])) < 3:
        raise InsufficientDataError(
            f"need >= 3 distinct positive concentrations, got {len(np.unique(conc))}"
        )
    species_id = points[0].species_id
    contaminant_id = points[0].contaminant_id
    fit = _fit_arrays(conc, y, d, species_id, contaminant_id)
    if fit is None:
        raise InsufficientDataError(f"no finite fit for {species_id}/{contaminant_id}")
    if not fit.converged:
        logger.warning(
            "curve %s/%s did not converge or is not identifiable (b=%.4g, e=%.4g)",
            species_id, contaminant_id, fit.b, fit.e,
        )
    return fit


def ec_x(fit: Union[CurveFit, tuple[float, float]], x: float) -> float:
    """Concentration giving an x% reduction of the response."""
    if not 0 < x < 100:
        raise DomainError(f"effect level x={x} outside (0, 100)")
    b, e = (fit.b, fit.e) if isinstance(fit, CurveFit) else fit
    return e * (x / (100 - x)) ** (1 / b)


class BootstrapFits(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    fit: CurveFit
    b: np.ndarray
    e: np.ndarray
    n_boot: int
    n_failed: int

    @property
    def failure_fraction(self) -> float:
        return self.n_failed / self.n_boot


def _strata(conc: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(conc == level) for level in np.unique(conc)]


def _refit_resample(conc, y, d, strata, start, seed_seq) -> Optional[tuple[float, float]]:
    rng = np.random.default_rng(seed_seq)
    idx = np.concatenate([rng.choice(group, size=len(group), replace=True) for group in strata])
    fit = _fit_arrays(conc[idx], y[idx], d, starts=[start])
    if fit is None or not fit.converged:
        fit = _fit_arrays(conc[idx], y[idx], d)
    if fit is None or not fit.converged:
        return None
    return fit.b, fit.e


def bootstrap_fits(
    points: Sequence[ResponsePoint],
    d: float,
    n_boot: int = 1000,
    seed: int = 0,
    n_jobs: int = 1,
) -> BootstrapFits:
    """Case bootstrap stratified by concentration level.

    Resample ``i`` draws from ``SeedSequence(seed).spawn(n_boot)[i]``, so the
    result does not depend on ``n_jobs``.
    """
    if n_boot < MIN_BOOT:
        raise DomainError(f"n_boot must be >= {MIN_BOOT}, got {n_boot}")
    fit = fit_curve(points, d)
    conc, y = _as_arrays(points)
    strata = _strata(conc)
    start = (math.log(fit.b), math.log(fit.e))
    children = np.random.SeedSequence(seed).spawn(n_boot)

    def one(seed_seq):
        return _refit_resample(conc, y, d, strata, start, seed_seq)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, children))
    else:
        results = [one(s) for s in children]

    kept = [r for r in results if r is not None]
    n_failed = n_boot - len(kept)
    if n_failed:
        logger.info("%s/%s: %d of %d bootstrap refits dropped", fit.species_id, fit.contaminant_id, n_failed, n_boot)
    if n_failed / n_boot > MAX_BOOT_FAILURE:
        raise UnstableFitError(
            f"bootstrap for {fit.species_id}/{fit.contaminant_id} is unstable", n_failed / n_boot
        )
    b, e = (np.array(v, dtype=float) for v in zip(*kept))
    return BootstrapFits(fit=fit, b=b, e=e, n_boot=n_boot, n_failed=n_failed)


def ec_from_bootstrap(boot: BootstrapFits, x: float) -> EcEstimate:
    point = ec_x(boot.fit, x)
    values = boot.e * (x / (100 - x)) ** (1 / boot.b)
    lo, hi = np.percentile(values, [2.5, 97.5])
    # the percentile interval may exclude the point estimate on skewed resamples
    return EcEstimate(
        x=x,
        point=point,
        ci_low=min(float(lo), point),
        ci_high=max(float(hi), point),
        n_boot=boot.n_boot,
        n_failed=boot.n_failed,
    )


def bootstrap_ec(
    points: Sequence[ResponsePoint],
    d: float,
    x: float,
    n_boot: int = 1000,
    seed: int = 0,
    n_jobs: int = 1,
) -> EcEstimate:
    return ec_from_bootstrap(bootstrap_fits(points, d, n_boot=n_boot, seed=seed, n_jobs=n_jobs), x)
