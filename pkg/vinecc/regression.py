"""
Asymptotic closure-curve regression.

Closure over time is modeled as

    y(t) = asym + (r0 - asym) * exp(-rate * t)

with asym the plateau (percent), r0 the value at t = 0 (percent) and
rate > 0 the exponential rate constant (per week). Fits use a
Levenberg-Marquardt loop; rate is optimized through a softplus so it
stays positive.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vinecc import constants
from vinecc.errors import ArgumentError, FitError

logger = logging.getLogger(__name__)

Number = Union[float, NDArray[np.float64]]


@dataclass(frozen=True)
class AsymptoticModel:
    """Three-parameter closure curve."""
    asym: float
    r0: float
    rate: float

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.asym, self.r0, self.rate], dtype=np.float64)


@dataclass(frozen=True)
class FitResult:
    """
    Outcome of fit_asymptotic.

    Attributes:
        model: Fitted parameters
        rss: Residual sum of squares (percent^2)
        iterations: LM iterations performed
        converged: True when a convergence criterion was met
        status: "converged", "max_iterations", "stalled" or "unidentifiable"
        initial_rss: RSS at the self-start initialization
        n_points: Number of observations fitted
    """
    model: AsymptoticModel
    rss: float
    iterations: int
    converged: bool
    status: str
    initial_rss: float
    n_points: int

    def to_report(self, fraction_p: float = constants.DEFAULT_FRACTION_P) -> Dict[str, Any]:
        """Fit report with the time needed to reach fraction_p of the rise."""
        try:
            weeks: Optional[float] = time_to_fraction(self.model, fraction_p)
        except ArgumentError:
            weeks = None
        return {
            "asym": self.model.asym,
            "intercept": self.model.r0,
            "rate": self.model.rate,
            "time_to_fraction_p": fraction_p,
            "time_to_fraction_weeks": weeks,
            "rss": self.rss,
            "n_points": self.n_points,
            "converged": self.converged,
        }


def eval_model(m: AsymptoticModel, t: ArrayLike) -> Number:
    """
    Evaluate the closure curve.

    Written as r0 + (asym - r0) * (1 - exp(-rate t)) so that y(0) == r0
    exactly.

    Args:
        m: Model parameters
        t: Weeks since first capture (scalar or array)

    Returns:
        Closure in percent, same shape as t
    """
    t_arr = np.asarray(t, dtype=np.float64)
    value = m.r0 + (m.asym - m.r0) * -np.expm1(-m.rate * t_arr)
    return float(value) if value.ndim == 0 else value


def jacobian(m: AsymptoticModel, t: ArrayLike) -> NDArray[np.float64]:
    """
    Partial derivatives of y(t) with respect to (asym, r0, rate).

    Returns:
        Array of shape (len(t), 3)
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    decay = np.exp(-m.rate * t_arr)
    return np.column_stack((
        -np.expm1(-m.rate * t_arr),
        decay,
        (m.asym - m.r0) * t_arr * decay,
    ))


def _softplus(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def _softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _self_start(t: NDArray[np.float64], y: NDArray[np.float64]) -> AsymptoticModel:
    """Deterministic initial guess."""
    y_range = float(y.max() - y.min())
    asym0 = float(y.max()) + constants.ASYMPTOTE_HEADROOM * y_range
    r00 = float(y[t == t.min()].mean())

    ratio = (asym0 - y) / (asym0 - r00)
    usable = ratio > 0
    rate0 = float("nan")
    if np.count_nonzero(usable) >= 2 and np.ptp(t[usable]) > 0:
        slope = np.polyfit(t[usable], np.log(ratio[usable]), 1)[0]
        rate0 = -float(slope)
    if not math.isfinite(rate0) or rate0 <= 0:
        rate0 = 1.0 / float(np.ptp(t))
        logger.debug(f"Self-start slope unusable, falling back to rate0={rate0:.4g}")
    return AsymptoticModel(asym=asym0, r0=r00, rate=rate0)


def _validate_points(points: Sequence[Tuple[float, float]]) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ArgumentError("Points must be (t, y) pairs")
    if arr.shape[0] < 4:
        raise ArgumentError(f"Need at least 4 points to fit, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ArgumentError("Points must be finite")
    if np.unique(arr[:, 0]).size < 3:
        raise ArgumentError("Need at least 3 distinct time values to fit")
    # Sorting makes the fit independent of input order.
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return arr[order, 0], arr[order, 1]


def fit_asymptotic(
    points: Sequence[Tuple[float, float]],
    max_iterations: int = constants.LM_MAX_ITERATIONS,
) -> FitResult:
    """
    Fit the closure curve by Levenberg-Marquardt least squares.

    Damping starts at 1e-3, is multiplied by 10 after a rejected step and
    divided by 10 after an accepted one. Only downhill steps are accepted.
    The fit converges when the gradient infinity-norm drops below 1e-8, or
    when an accepted step lowers the RSS by less than 1e-10 relative while
    damping is back at or below its initial 1e-3. Under heavier damping a
    small RSS change only reflects a short step and iteration continues.

    Args:
        points: (t weeks, y percent) observations; >= 4 points with >= 3
            distinct t
        max_iterations: Iteration cap

    Returns:
        FitResult; flat data is reported with status "unidentifiable"

    Raises:
        ArgumentError: Too few points or distinct times
        FitError: When the rate collapses or parameters stop being finite
    """
    t, y = _validate_points(points)
    n = t.size

    if np.ptp(y) == 0:
        level = float(y[0])
        logger.warning("Closure values are constant; rate is unidentifiable")
        return FitResult(
            model=AsymptoticModel(asym=level, r0=level, rate=float("nan")),
            rss=0.0,
            iterations=0,
            converged=False,
            status="unidentifiable",
            initial_rss=0.0,
            n_points=n,
        )

    start = _self_start(t, y)
    theta = np.array([start.asym, start.r0, _softplus_inverse(start.rate)])

    def unpack(p: NDArray[np.float64]) -> AsymptoticModel:
        return AsymptoticModel(asym=float(p[0]), r0=float(p[1]), rate=_softplus(float(p[2])))

    def residuals(p: NDArray[np.float64]) -> NDArray[np.float64]:
        return y - eval_model(unpack(p), t)

    def theta_jacobian(p: NDArray[np.float64]) -> NDArray[np.float64]:
        jac = jacobian(unpack(p), t)
        jac[:, 2] *= _sigmoid(float(p[2]))
        return jac

    r = residuals(theta)
    rss = float(r @ r)
    initial_rss = rss
    damping = constants.LM_INITIAL_DAMPING
    status = "max_iterations"
    iterations = 0

    while iterations < max_iterations:
        jac = theta_jacobian(theta)
        gradient = jac.T @ r
        if np.max(np.abs(gradient)) < constants.LM_GRADIENT_TOL:
            status = "converged"
            break
        iterations += 1

        normal = jac.T @ jac
        scale = np.maximum(np.diag(normal), 1e-12)
        accepted = False
        while damping <= constants.LM_MAX_DAMPING:
            try:
                step = np.linalg.solve(normal + damping * np.diag(scale), gradient)
            except np.linalg.LinAlgError:
                damping *= constants.LM_DAMPING_FACTOR
                continue
            candidate = theta + step
            r_new = residuals(candidate)
            rss_new = float(r_new @ r_new)
            if math.isfinite(rss_new) and rss_new < rss:
                accepted = True
                break
            damping *= constants.LM_DAMPING_FACTOR

        if not accepted:
            status = "stalled"
            break

        relative_change = (rss - rss_new) / max(rss, np.finfo(float).tiny)
        theta, r, rss = candidate, r_new, rss_new
        damping = max(damping / constants.LM_DAMPING_FACTOR, np.finfo(float).eps)
        if rss == 0.0 or (relative_change < constants.LM_RSS_RTOL and damping <= constants.LM_INITIAL_DAMPING):
            status = "converged"
            break

    model = unpack(theta)
    if not (math.isfinite(model.asym) and math.isfinite(model.r0)) or not model.rate > 1e-12:
        raise FitError(
            "Rate collapsed to a non-positive value",
            diagnostics={
                "asym": model.asym,
                "r0": model.r0,
                "rate": model.rate,
                "rss": rss,
                "iterations": iterations,
            },
        )

    # A stalled loop at a stationary point still counts as converged.
    if status == "stalled":
        gradient = theta_jacobian(theta).T @ r
        if np.max(np.abs(gradient)) < constants.LM_GRADIENT_TOL:
            status = "converged"

    result = FitResult(
        model=model,
        rss=rss,
        iterations=iterations,
        converged=status == "converged",
        status=status,
        initial_rss=initial_rss,
        n_points=n,
    )
    logger.info(
        f"Fit {status} after {iterations} iterations: asym={model.asym:.4f} "
        f"r0={model.r0:.4f} rate={model.rate:.4f} rss={rss:.6g}"
    )
    return result


def time_to_fraction(m: AsymptoticModel, p: float = constants.DEFAULT_FRACTION_P) -> float:
    """
    Weeks until the curve covers fraction p of its rise from r0 to asym.

    Args:
        m: Model with rate > 0 and r0 != asym
        p: Fraction in (0, 1)

    Returns:
        -ln(1 - p) / rate

    Raises:
        ArgumentError: Invalid p or degenerate model
    """
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"Fraction p must be in (0, 1), got {p}")
    if not (math.isfinite(m.rate) and m.rate > 0):
        raise ArgumentError(f"Model rate must be positive, got {m.rate}")
    if m.r0 == m.asym:
        raise ArgumentError("Model has no rise (r0 == asym)")
    return -math.log1p(-p) / m.rate


def fraction_at_time(m: AsymptoticModel, t: float) -> float:
    """Fraction of the rise from r0 to asym covered at time t."""
    return -math.expm1(-m.rate * t)


def series_points(
    observations: Sequence[Tuple[float, float]],
    means: Sequence[Tuple[float, float]],
    mode: str = "points",
) -> Sequence[Tuple[float, float]]:
    """Pick the regression input: every cluster value or per-date means."""
    if mode == "points":
        return observations
    if mode == "means":
        return means
    raise ArgumentError(f"Unknown regression input mode {mode!r}")
