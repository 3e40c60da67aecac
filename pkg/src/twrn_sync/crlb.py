"""Fisher information and Cramer-Rao bounds for the training-block model.

Parameters are ordered ``[Re a1, Re a2, Im a1, Im a2, nu_2, tau_1, tau_2]``.
The received block is ``CN(mu, sigma_u2 I)`` with
``mu = a1 G(tau_1) t1 + a2 Lambda(nu_2) G(tau_2) t2``, so the information
matrix is ``(2 / sigma_u2) Re{J^H J}`` with ``J`` the Jacobian of ``mu``.

Three constructions are provided:

* :func:`fim_finite_difference`: Jacobian by central differences of ``mu``
  (the reference used for the bounds).
* :func:`fim_from_jacobian`: analytic Jacobian.
* :func:`fim_block_form`: the closed-form block matrix written in terms of
  ``Omega``, ``Gamma``, ``Phi``, ``D`` and ``H``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FimMismatchError, SingularFimError
from .signal_model import (
    DEFAULT_Q,
    DEFAULT_ROLLOFF,
    DEFAULT_SPAN,
    CombinedParams,
    build_derivative_matrix,
    build_shaping_matrix,
    cfo_phasor,
    shape_symbols,
)

PARAM_NAMES = ("re_alpha_1", "re_alpha_2", "im_alpha_1", "im_alpha_2", "nu_2", "tau_1", "tau_2")
FD_STEP = 1e-6
DEFAULT_RTOL = 1e-4
DEFAULT_COND_CAP = 1e12
# entries smaller than this fraction of the largest are compared absolutely
_ZERO_FLOOR = 1e-9


@dataclass(frozen=True)
class FimInputs:
    params: CombinedParams
    t1: np.ndarray
    t2: np.ndarray
    sigma_u2: float
    Q: int = DEFAULT_Q
    rolloff: float = DEFAULT_ROLLOFF
    span: float = DEFAULT_SPAN

    def __post_init__(self):
        if not self.sigma_u2 > 0:
            raise ConfigError("sigma_u2 must be positive")
        p = self.params
        if not all(-0.5 < v < 0.5 for v in (p.tau_1, p.tau_2, p.nu_2)):
            raise ConfigError("offsets outside the admissible box")

    @property
    def L(self) -> int:
        return len(self.t1)

    def theta(self) -> np.ndarray:
        p = self.params
        return np.array(
            [p.alpha_1.real, p.alpha_2.real, p.alpha_1.imag, p.alpha_2.imag, p.nu_2, p.tau_1, p.tau_2]
        )


@dataclass
class FimReport:
    fim: np.ndarray
    crlb: np.ndarray
    crlb_alpha_1: float
    crlb_alpha_2: float
    crlb_nu_2: float
    crlb_tau_1: float
    crlb_tau_2: float
    condition_number: float
    fim_closed_form: np.ndarray | None = None
    discrepancy: float = 0.0

    def as_dict(self) -> dict:
        return {
            "alpha_1": self.crlb_alpha_1,
            "alpha_2": self.crlb_alpha_2,
            "tau_1": self.crlb_tau_1,
            "tau_2": self.crlb_tau_2,
            "nu_2": self.crlb_nu_2,
        }


def mean_vector(theta, t1, t2, Q=DEFAULT_Q, rolloff=DEFAULT_ROLLOFF, span=DEFAULT_SPAN) -> np.ndarray:
    """Noiseless received training block for a 7-element parameter vector."""
    a1 = theta[0] + 1j * theta[2]
    a2 = theta[1] + 1j * theta[3]
    nu, tau_1, tau_2 = theta[4], theta[5], theta[6]
    g1 = shape_symbols(t1, tau_1, Q, rolloff, span)
    g2 = shape_symbols(t2, tau_2, Q, rolloff, span)
    return a1 * g1 + a2 * cfo_phasor(nu, len(t1) * Q, Q) * g2


def _slepian_bangs(jac: np.ndarray, sigma_u2: float) -> np.ndarray:
    return (2.0 / sigma_u2) * np.real(jac.conj().T @ jac)


def _shaping_difference(tau: float, L: int, Q: int, rolloff: float, span: float, step: float) -> np.ndarray:
    """Central difference of the shaping matrix in ``tau``, masked by the truncation at ``tau``.

    The stencil is evaluated on a pulse widened by ``2 step`` so no entry
    that is inside the span at ``tau`` crosses the truncation jump.
    """
    wide = span + 2.0 * step
    upper = build_shaping_matrix(tau + step, L, Q, rolloff, wide).entries
    lower = build_shaping_matrix(tau - step, L, Q, rolloff, wide).entries
    args = np.arange(L * Q)[:, None] / Q - np.arange(L)[None, :] - tau
    return np.where(np.abs(args) <= span, (upper - lower) / (2.0 * step), 0.0)


def fim_finite_difference(inputs: FimInputs, step: float = FD_STEP) -> np.ndarray:
    """Information matrix from a central-difference Jacobian of the mean.

    The mean is linear in the four gain coordinates, where a central
    difference is exact for any step; those use a unit step to avoid
    cancellation error.  ``step`` applies to the offsets.  The timing columns
    difference the shaping matrix entrywise so that entries on the
    truncation edge take the interior derivative.
    """
    p, L, Q = inputs.params, inputs.L, inputs.Q
    theta = inputs.theta()
    mu = lambda th: mean_vector(th, inputs.t1, inputs.t2, Q, inputs.rolloff, inputs.span)  # noqa: E731
    cols = []
    for k in range(5):
        e = np.zeros_like(theta)
        e[k] = 1.0 if k < 4 else step
        cols.append((mu(theta + e) - mu(theta - e)) / (2.0 * e[k]))
    lam = cfo_phasor(p.nu_2, L * Q, Q)
    d1 = _shaping_difference(p.tau_1, L, Q, inputs.rolloff, inputs.span, step)
    d2 = _shaping_difference(p.tau_2, L, Q, inputs.rolloff, inputs.span, step)
    cols.append(p.alpha_1 * (d1 @ inputs.t1))
    cols.append(p.alpha_2 * lam * (d2 @ inputs.t2))
    return _slepian_bangs(np.column_stack(cols), inputs.sigma_u2)


def _model_blocks(inputs: FimInputs):
    p, L, Q = inputs.params, inputs.L, inputs.Q
    geo = dict(L=L, Q=Q, rolloff=inputs.rolloff, span=inputs.span)
    lam = cfo_phasor(p.nu_2, L * Q, Q)
    c1 = build_shaping_matrix(p.tau_1, **geo).entries @ inputs.t1
    c2 = lam * (build_shaping_matrix(p.tau_2, **geo).entries @ inputs.t2)
    r1 = build_derivative_matrix(p.tau_1, **geo) @ inputs.t1
    r2 = lam * (build_derivative_matrix(p.tau_2, **geo) @ inputs.t2)
    # d/dnu of exp(j 2 pi nu i / Q) is j (2 pi i / Q) times itself
    d = 2.0 * np.pi * np.arange(L * Q) / Q
    return c1, c2, r1, r2, d


def mean_jacobian(inputs: FimInputs) -> np.ndarray:
    """Analytic ``d mu / d theta`` as an ``LQ x 7`` complex matrix."""
    p = inputs.params
    c1, c2, r1, r2, d = _model_blocks(inputs)
    return np.column_stack(
        [c1, c2, 1j * c1, 1j * c2, 1j * d * c2 * p.alpha_2, p.alpha_1 * r1, p.alpha_2 * r2]
    )


def fim_from_jacobian(inputs: FimInputs) -> np.ndarray:
    return _slepian_bangs(mean_jacobian(inputs), inputs.sigma_u2)


def fim_block_form(inputs: FimInputs, conjugate_gain: bool = True) -> np.ndarray:
    """Closed-form block information matrix.

    ``conjugate_gain=False`` uses ``H`` rather than ``H^H`` on the left of the
    timing-timing block; that variant only agrees with the other constructions
    when both gains are real.
    """
    p = inputs.params
    c1, c2, r1, r2, d = _model_blocks(inputs)
    omega = np.column_stack([c1, c2])
    gamma = np.column_stack([r1, r2])
    h = np.diag([p.alpha_1, p.alpha_2])
    h_left = h.conj().T if conjugate_gain else h
    phi_t2 = p.alpha_2 * c2  # Phi t2 with Phi = a2 Lambda2 G2
    d_phi_t2 = d * phi_t2

    oo = omega.conj().T @ omega
    o_dphi = omega.conj().T @ d_phi_t2  # (2,)
    o_gh = omega.conj().T @ gamma @ h  # (2, 2)
    phid_o = d_phi_t2.conj() @ omega  # t2^H Phi^H D Omega, (2,)
    phid2 = np.vdot(d_phi_t2, d_phi_t2)  # t2^H Phi^H D^2 Phi t2
    phid_gh = d_phi_t2.conj() @ gamma @ h  # (2,)
    hg_o = h.conj().T @ gamma.conj().T @ omega
    hg_dphi = h.conj().T @ gamma.conj().T @ d_phi_t2
    hggh = h_left @ gamma.conj().T @ gamma @ h

    f = np.zeros((7, 7))
    re, im = np.real, np.imag
    f[0:2, 0:2], f[0:2, 2:4], f[0:2, 4], f[0:2, 5:7] = re(oo), -im(oo), -im(o_dphi), re(o_gh)
    f[2:4, 0:2], f[2:4, 2:4], f[2:4, 4], f[2:4, 5:7] = im(oo), re(oo), re(o_dphi), im(o_gh)
    f[4, 0:2], f[4, 2:4], f[4, 4], f[4, 5:7] = im(phid_o), re(phid_o), re(phid2), im(phid_gh)
    f[5:7, 0:2], f[5:7, 2:4], f[5:7, 4], f[5:7, 5:7] = re(hg_o), -im(hg_o), -im(hg_dphi), re(hggh)
    return (2.0 / inputs.sigma_u2) * f


def relative_discrepancy(a: np.ndarray, b: np.ndarray) -> float:
    """Largest elementwise ``|a - b| / |b|``; near-zero entries of ``b`` use a floor."""
    floor = _ZERO_FLOOR * np.max(np.abs(b))
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def crlb_from_fim(fim: np.ndarray, cond_cap: float = DEFAULT_COND_CAP, **extra) -> FimReport:
    """Invert the information matrix and collect per-parameter bounds.

    Complex gains get the sum of their real- and imaginary-part bounds.
    """
    fim = np.asarray(fim, dtype=float)
    sym = 0.5 * (fim + fim.T)
    w, v = np.linalg.eigh(sym)
    if w[-1] <= 0:
        raise SingularFimError("Fisher information matrix is zero or negative")
    cond = float(w[-1] / w[0]) if w[0] > 0 else np.inf
    if not cond <= cond_cap:
        raise SingularFimError(f"Fisher information matrix condition number {cond:.3g} exceeds {cond_cap:.3g}")
    inv = (v / w) @ v.T
    diag = np.diag(inv).copy()
    return FimReport(
        fim=fim,
        crlb=inv,
        crlb_alpha_1=float(diag[0] + diag[2]),
        crlb_alpha_2=float(diag[1] + diag[3]),
        crlb_nu_2=float(diag[4]),
        crlb_tau_1=float(diag[5]),
        crlb_tau_2=float(diag[6]),
        condition_number=cond,
        **extra,
    )


def assemble_fim(
    inputs: FimInputs, rtol: float = DEFAULT_RTOL, cond_cap: float = DEFAULT_COND_CAP
) -> FimReport:
    """Reference information matrix plus bounds, cross-checked against the closed form.

    Raises :class:`FimMismatchError` when the two constructions differ by
    more than ``rtol`` (relative, elementwise).
    """
    reference = fim_finite_difference(inputs)
    closed = fim_block_form(inputs)
    gap = relative_discrepancy(closed, reference)
    if gap > rtol:
        raise FimMismatchError(f"closed-form FIM deviates from finite differences by {gap:.3g}")
    return crlb_from_fim(reference, cond_cap, fim_closed_form=closed, discrepancy=gap)


def alpha_only_crlb(inputs: FimInputs) -> tuple[float, float]:
    """Gain bounds when the offsets are known (inverse of the 4x4 gain block)."""
    fim = fim_block_form(inputs)[:4, :4]
    inv = np.linalg.inv(fim)
    return float(inv[0, 0] + inv[2, 2]), float(inv[1, 1] + inv[3, 3])
