"""Joint channel, timing and CFO estimation from the received training block.

The channel gains enter linearly, so for fixed offsets they are given by
least squares and the search runs over ``(tau_1, tau_2, nu_2)`` only.  The
concentrated cost is ``chi = -y^H P y`` with ``P`` the projector onto the
two training columns; searches internally minimize the equivalent residual
energy ``||y - P y||^2 = ||y||^2 + chi``, which keeps full relative
precision near a noiseless optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RankDeficiencyError
from .signal_model import DEFAULT_Q, DEFAULT_ROLLOFF, DEFAULT_SPAN, cfo_phasor, shape_symbols

_RANK_TOL = 1e-12
UNIT_BOX = ((-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5))


@dataclass(frozen=True)
class OmegaBuilder:
    """Builds the LQ x 2 training matrix ``[G(tau_1) t_1, Lambda(nu_2) G(tau_2) t_2]``."""

    t1: np.ndarray
    t2: np.ndarray
    Q: int = DEFAULT_Q
    rolloff: float = DEFAULT_ROLLOFF
    span: float = DEFAULT_SPAN

    @property
    def L(self) -> int:
        return len(self.t1)

    @property
    def n_samples(self) -> int:
        return self.L * self.Q

    def shaped_1(self, tau_1):
        return shape_symbols(self.t1, tau_1, self.Q, self.rolloff, self.span)

    def shaped_2(self, tau_2):
        return shape_symbols(self.t2, tau_2, self.Q, self.rolloff, self.span)

    def phasor(self, nu_2):
        nu = np.asarray(nu_2, dtype=float)
        i = np.arange(self.n_samples)
        return np.exp(2j * np.pi * np.multiply.outer(nu, i) / self.Q)

    def columns(self, tau_1, tau_2, nu_2) -> tuple[np.ndarray, np.ndarray]:
        """Both columns for arrays of offsets; each result is ``(B, LQ)``."""
        tau_1, tau_2, nu_2 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (tau_1, tau_2, nu_2))
        c1 = self.shaped_1(tau_1)
        c2 = self.phasor(nu_2) * self.shaped_2(tau_2)
        return c1, c2

    def __call__(self, tau_1: float, tau_2: float, nu_2: float) -> np.ndarray:
        c1 = self.shaped_1(float(tau_1))
        c2 = cfo_phasor(nu_2, self.n_samples, self.Q) * self.shaped_2(float(tau_2))
        return np.column_stack([c1, c2])


def build_omega(builder: OmegaBuilder, tau_1: float, tau_2: float, nu_2: float) -> np.ndarray:
    return builder(tau_1, tau_2, nu_2)


def ls_channel_estimate(y, omega) -> np.ndarray:
    """Least-squares gains ``(Omega^H Omega)^-1 Omega^H y`` via an SVD solve."""
    y = np.asarray(y)
    coef, _, rank, sv = np.linalg.lstsq(omega, y, rcond=None)
    if rank < omega.shape[1] or sv[-1] <= _RANK_TOL * sv[0]:
        raise RankDeficiencyError("training matrix is rank deficient")
    return coef


def _gram_terms(y, c1, c2):
    a = np.einsum("...i,...i->...", c1.conj(), c1).real
    c = np.einsum("...i,...i->...", c2.conj(), c2).real
    b = np.einsum("...i,...i->...", c1.conj(), c2)
    v1 = c1.conj() @ y
    v2 = c2.conj() @ y
    det = a * c - np.abs(b) ** 2
    if np.any(det <= _RANK_TOL * a * c):
        raise RankDeficiencyError("training matrix is rank deficient")
    return a, b, c, v1, v2, det


def _chi_from_terms(a, b, c, v1, v2, det):
    quad = c * np.abs(v1) ** 2 + a * np.abs(v2) ** 2 - 2.0 * np.real(b * np.conj(v1) * v2)
    return -quad / det


def _residual_batch(y, c1, c2):
    """Residual energy after the LS fit and the fitted gains, per row."""
    a, b, c, v1, v2, det = _gram_terms(y, c1, c2)
    alpha_1 = (c * v1 - b * v2) / det
    alpha_2 = (a * v2 - np.conj(b) * v1) / det
    r = y - alpha_1[:, None] * c1 - alpha_2[:, None] * c2
    return np.einsum("bi,bi->b", r.conj(), r).real, alpha_1, alpha_2


class ConcentratedCost:
    """Concentrated ML cost for one received block, with an evaluation tally."""

    def __init__(self, y, builder: OmegaBuilder):
        self.y = np.asarray(y, dtype=complex)
        if self.y.shape != (builder.n_samples,):
            raise ConfigError(f"received block has shape {self.y.shape}, expected ({builder.n_samples},)")
        self.builder = builder
        self.energy = float(np.vdot(self.y, self.y).real)
        self.evals = 0

    def chi(self, tau_1, tau_2, nu_2):
        """``-y^H Omega (Omega^H Omega)^-1 Omega^H y`` for scalars or arrays."""
        c1, c2 = self.builder.columns(tau_1, tau_2, nu_2)
        self.evals += c1.shape[0]
        out = _chi_from_terms(*_gram_terms(self.y, c1, c2))
        return float(out[0]) if np.ndim(tau_1) == 0 else out

    def residual(self, points: np.ndarray) -> np.ndarray:
        """``||y||^2 + chi`` computed as a residual norm; ``points`` is ``(B, 3)``."""
        c1, c2 = self.builder.columns(points[:, 0], points[:, 1], points[:, 2])
        self.evals += points.shape[0]
        return _residual_batch(self.y, c1, c2)[0]


def ml_cost(tau_1, tau_2, nu_2, y, builder: OmegaBuilder):
    return ConcentratedCost(y, builder).chi(tau_1, tau_2, nu_2)


@dataclass
class EstimationResult:
    alpha_hat: np.ndarray
    tau_hat: np.ndarray
    nu_hat: float
    cost: float
    evals: int
    converged: bool
    method: str = ""

    @property
    def alpha_1(self) -> complex:
        return complex(self.alpha_hat[0])

    @property
    def alpha_2(self) -> complex:
        return complex(self.alpha_hat[1])

    @property
    def tau_1(self) -> float:
        return float(self.tau_hat[0])

    @property
    def tau_2(self) -> float:
        return float(self.tau_hat[1])

    @property
    def nu_2(self) -> float:
        return float(self.nu_hat)


def _finish(cost: ConcentratedCost, point, chi: float, converged: bool, method: str) -> EstimationResult:
    alpha = ls_channel_estimate(cost.y, cost.builder(*point))
    return EstimationResult(
        alpha_hat=alpha,
        tau_hat=np.array(point[:2], dtype=float),
        nu_hat=float(point[2]),
        cost=float(chi),
        evals=cost.evals,
        converged=converged,
        method=method,
    )


# --------------------------------------------------------------------------
# Exhaustive grid search
# --------------------------------------------------------------------------

def _axis(bounds, step) -> np.ndarray:
    lo, hi = bounds
    n = max(int(round((hi - lo) / step)), 1)
    return lo + step * (np.arange(n) + 0.5)


@dataclass(frozen=True)
class GridSpec:
    """Cell-centered search grid: ``(hi - lo) / step`` nodes per axis."""

    tau_step: float = 1e-2
    nu_step: float = 1e-4
    tau1_bounds: tuple[float, float] = (-0.5, 0.5)
    tau2_bounds: tuple[float, float] = (-0.5, 0.5)
    nu_bounds: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        if self.tau_step <= 0 or self.nu_step <= 0:
            raise ConfigError("grid steps must be positive")
        for lo, hi in (self.tau1_bounds, self.tau2_bounds, self.nu_bounds):
            if not lo < hi:
                raise ConfigError(f"grid bounds must be ordered, got ({lo}, {hi})")

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            _axis(self.tau1_bounds, self.tau_step),
            _axis(self.tau2_bounds, self.tau_step),
            _axis(self.nu_bounds, self.nu_step),
        )

    @property
    def size(self) -> int:
        return int(np.prod([a.size for a in self.axes()]))

    def around(self, point, tau_step: float, nu_step: float, tau_halfwidth: float, nu_halfwidth: float) -> "GridSpec":
        """Finer grid centered on ``point``, clipped to this grid's box."""

        def window(center, half, bounds, step):
            lo = max(center - half, bounds[0])
            hi = min(center + half, bounds[1])
            return (lo, max(hi, lo + step))

        return GridSpec(
            tau_step=tau_step,
            nu_step=nu_step,
            tau1_bounds=window(point[0], tau_halfwidth, self.tau1_bounds, tau_step),
            tau2_bounds=window(point[1], tau_halfwidth, self.tau2_bounds, tau_step),
            nu_bounds=window(point[2], nu_halfwidth, self.nu_bounds, nu_step),
        )


def _grid_minimum(cost: ConcentratedCost, grid: GridSpec):
    tau1s, tau2s, nus = grid.axes()
    builder, y = cost.builder, cost.y
    g2 = builder.shaped_2(tau2s)  # (N2, LQ)
    rot = builder.phasor(nus).T  # (LQ, N3)
    c = np.einsum("ki,ki->k", g2.conj(), g2).real[:, None]
    v2 = (g2.conj() * y) @ rot.conj()
    best = (np.inf, None)
    for tau_1 in tau1s:
        c1 = builder.shaped_1(float(tau_1))
        a = float(np.vdot(c1, c1).real)
        v1 = np.vdot(c1, y)
        b = (c1.conj() * g2) @ rot
        det = a * c - np.abs(b) ** 2
        if np.any(det <= _RANK_TOL * a * c):
            raise RankDeficiencyError(f"training matrix rank deficient near tau_1={tau_1:.4f}")
        chi = _chi_from_terms(a, b, c, v1, v2, det)
        k = int(np.argmin(chi))  # first occurrence: lexicographic tie-break
        if chi.flat[k] < best[0]:
            j2, j3 = np.unravel_index(k, chi.shape)
            best = (float(chi.flat[k]), (float(tau_1), float(tau2s[j2]), float(nus[j3])))
    cost.evals += grid.size
    return best


def ml_grid_search(y, builder: OmegaBuilder, grid: GridSpec = GridSpec()) -> EstimationResult:
    """Exhaustive minimization of the concentrated cost over ``grid``.

    Ties resolve to the lexicographically smallest ``(tau_1, tau_2, nu_2)``.
    """
    cost = ConcentratedCost(y, builder)
    chi, point = _grid_minimum(cost, grid)
    return _finish(cost, point, chi, True, "ml")


def ml_two_stage_search(
    y,
    builder: OmegaBuilder,
    coarse: GridSpec = GridSpec(tau_step=0.05, nu_step=5e-3),
    fine: GridSpec = GridSpec(),
) -> EstimationResult:
    """Coarse exhaustive search, then a fine grid within one coarse step of the winner."""
    cost = ConcentratedCost(y, builder)
    _, point = _grid_minimum(cost, coarse)
    local = coarse.around(point, fine.tau_step, fine.nu_step, coarse.tau_step, coarse.nu_step)
    chi, point = _grid_minimum(cost, local)
    return _finish(cost, point, chi, True, "ml")


# --------------------------------------------------------------------------
# Differential evolution
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DeConfig:
    """rand/1/bin differential evolution settings.

    The run stops early once the spread of residual energies across the
    population falls below ``tol * ||y||^2``.
    """

    population: int = 40
    weight: float = 0.7
    crossover: float = 0.9
    max_generations: int = 500
    tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ConfigError("DE population must be >= 4")
        if not 0.0 < self.weight <= 2.0:
            raise ConfigError("DE differential weight must lie in (0, 2]")
        if not 0.0 <= self.crossover <= 1.0:
            raise ConfigError("DE crossover rate must lie in [0, 1]")
        if self.max_generations < 0 or self.tol < 0:
            raise ConfigError("DE generation cap and tolerance must be non-negative")


def reflect_into_box(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold coordinates back into ``[lo, hi]`` by mirror reflection at the walls."""
    width = hi - lo
    x = np.mod(points - lo, 2.0 * width)
    return lo + np.where(x > width, 2.0 * width - x, x)


def _partner_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    # three distinct partners per target, none equal to the target
    idx = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        pool = rng.choice(n - 1, size=3, replace=False)
        idx[i] = pool + (pool >= i)
    return idx


def de_estimate(y, builder: OmegaBuilder, config: DeConfig = DeConfig(), box=UNIT_BOX) -> EstimationResult:
    """Differential-evolution search for ``(tau_1, tau_2, nu_2)`` in ``box``."""
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    if np.any(lo >= hi):
        raise ConfigError("search box bounds must be ordered")
    rng = np.random.default_rng(config.seed)
    cost = ConcentratedCost(y, builder)
    n, dim = config.population, 3
    scale = max(cost.energy, np.finfo(float).tiny)

    pop = lo + (hi - lo) * rng.random((n, dim))
    fit = cost.residual(pop)
    converged = np.ptp(fit) <= config.tol * scale
    generation = 0
    while not converged and generation < config.max_generations:
        partners = _partner_indices(rng, n)
        mutant = pop[partners[:, 0]] + config.weight * (pop[partners[:, 1]] - pop[partners[:, 2]])
        mutant = reflect_into_box(mutant, lo, hi)
        cross = rng.random((n, dim)) < config.crossover
        cross[np.arange(n), rng.integers(0, dim, size=n)] = True
        trial = np.where(cross, mutant, pop)
        trial_fit = cost.residual(trial)
        better = trial_fit <= fit
        pop[better] = trial[better]
        fit[better] = trial_fit[better]
        generation += 1
        converged = np.ptp(fit) <= config.tol * scale

    best = pop[int(np.argmin(fit))]
    evals = cost.evals
    point = tuple(float(v) for v in best)
    chi = cost.chi(*point)
    cost.evals = evals  # the reporting recomputation is not part of the search
    return _finish(cost, point, chi, bool(converged), "de")


# --------------------------------------------------------------------------
# Operation counts
# --------------------------------------------------------------------------

FLOP_MODEL = (
    "flops/eval = 8*L^2*Q (two dense LQxL real-by-complex products) "
    "+ 6*L*Q (CFO rotation) + 32*L*Q (Gram entries and matched outputs) "
    "+ 40 (2x2 solve and quadratic form)"
)


def flops_per_evaluation(L: int, Q: int) -> int:
    return 8 * L * L * Q + 38 * L * Q + 40


@dataclass(frozen=True)
class ComplexityReport:
    ml_evaluations: int
    de_evaluations: int
    flops_per_evaluation: int
    ml_operations: float
    de_operations: float
    ratio: float
    flop_model: str = field(default=FLOP_MODEL)


def count_complexity(grid: GridSpec, de: DeConfig, L_t: int, Q: int = DEFAULT_Q) -> ComplexityReport:
    """Worst-case cost of the exhaustive grid versus a DE run, in real flops."""
    ml_evals = grid.size
    de_evals = de.population * (de.max_generations + 1)
    per_eval = flops_per_evaluation(L_t, Q)
    ml_ops = float(ml_evals) * per_eval
    de_ops = float(de_evals) * per_eval
    return ComplexityReport(ml_evals, de_evals, per_eval, ml_ops, de_ops, ml_ops / de_ops)
