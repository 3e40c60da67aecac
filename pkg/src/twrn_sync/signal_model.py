"""Baseband model of a two-phase amplify-and-forward two-way relay round.

Everything is expressed in normalized units: time in symbol periods ``T``,
frequency offsets in cycles per symbol, and ``Q`` samples per symbol.  The
receiving terminal is T1; terminal T2 is obtained by relabeling the inputs.

Sample ``i`` of a shaped block sits at time ``i / Q`` and the shaping matrix
entry ``(i, n)`` is ``g(i/Q - n - tau)`` for the root-raised-cosine pulse ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, RankDeficiencyError

DEFAULT_ROLLOFF = 0.3
DEFAULT_SPAN = 6
DEFAULT_Q = 2

# Within this distance of t=0 or t=+-1/(4*rolloff) the closed form loses
# precision (0/0), so the pulse is evaluated from its spectrum instead.
_SINGULAR_GUARD = 1e-3
_QUAD_NODES = 64

QPSK_CONSTELLATION = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


# --------------------------------------------------------------------------
# Pulse shape
# --------------------------------------------------------------------------

def _check_pulse_args(rolloff: float, span: float) -> None:
    if not 0.0 < rolloff <= 1.0:
        raise ConfigError(f"rolloff must lie in (0, 1], got {rolloff!r}")
    if span < 1:
        raise ConfigError(f"span must be >= 1 symbol, got {span!r}")


@lru_cache(maxsize=8)
def _spectral_rule(rolloff: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for g(t) = 2 * int_0^inf S(f) cos(2 pi f t) df."""
    x, w = np.polynomial.legendre.leggauss(_QUAD_NODES)
    f_pass = (1.0 - rolloff) / 2.0
    flat_f = f_pass * (x + 1.0) / 2.0
    flat_w = w * f_pass / 2.0
    roll_f = f_pass + rolloff * (x + 1.0) / 2.0
    roll_w = w * rolloff / 2.0 * np.cos(np.pi * (roll_f - f_pass) / (2.0 * rolloff))
    return np.concatenate([flat_f, roll_f]), 2.0 * np.concatenate([flat_w, roll_w])


def _rrc_spectral(t: np.ndarray, rolloff: float, derivative: bool) -> np.ndarray:
    freqs, weights = _spectral_rule(rolloff)
    arg = 2.0 * np.pi * np.multiply.outer(t, freqs)
    if derivative:
        return -(np.sin(arg) * (2.0 * np.pi * freqs)) @ weights
    return np.cos(arg) @ weights


def _rrc_closed(t: np.ndarray, rolloff: float, derivative: bool) -> np.ndarray:
    a = np.pi * (1.0 - rolloff)
    b = 4.0 * rolloff
    c = np.pi * (1.0 + rolloff)
    num = np.sin(a * t) + b * t * np.cos(c * t)
    den = np.pi * t * (1.0 - (b * t) ** 2)
    if not derivative:
        return num / den
    dnum = a * np.cos(a * t) + b * np.cos(c * t) - b * c * t * np.sin(c * t)
    dden = np.pi * (1.0 - 3.0 * (b * t) ** 2)
    return (dnum * den - num * dden) / den**2


def _rrc_eval(t, rolloff: float, span: float, derivative: bool) -> np.ndarray:
    _check_pulse_args(rolloff, span)
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    inside = np.abs(t) <= span
    t_quarter = 1.0 / (4.0 * rolloff)
    near = inside & (
        (np.abs(t) < _SINGULAR_GUARD) | (np.abs(np.abs(t) - t_quarter) < _SINGULAR_GUARD)
    )
    regular = inside & ~near
    if np.any(regular):
        out[regular] = _rrc_closed(t[regular], rolloff, derivative)
    if np.any(near):
        out[near] = _rrc_spectral(t[near], rolloff, derivative)
    return out


def rrc_pulse(t, rolloff: float = DEFAULT_ROLLOFF, span: float = DEFAULT_SPAN):
    """Unit-energy root-raised-cosine pulse, truncated to ``|t| <= span``.

    Parameters
    ----------
    t : float or array_like
        Time in symbol periods.
    rolloff : float
        Excess bandwidth factor in (0, 1].
    span : float
        Truncation half-width in symbols.

    Returns
    -------
    float or ndarray
        Pulse amplitude.  The removable singularities at ``t = 0`` and
        ``t = +-1/(4 rolloff)`` take their limiting values.
    """
    out = _rrc_eval(t, rolloff, span, derivative=False)
    return out.item() if out.ndim == 0 else out


def rrc_derivative(t, rolloff: float = DEFAULT_ROLLOFF, span: float = DEFAULT_SPAN):
    """Time derivative ``dg/dt`` of :func:`rrc_pulse` (zero outside the span)."""
    out = _rrc_eval(t, rolloff, span, derivative=True)
    return out.item() if out.ndim == 0 else out


def rrc_peak(rolloff: float) -> float:
    """Value of the pulse at ``t = 0``."""
    return 1.0 - rolloff + 4.0 * rolloff / np.pi


# --------------------------------------------------------------------------
# Matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapingMatrix:
    """LQ x L matrix of pulse samples at a fixed timing offset."""

    entries: np.ndarray
    tau: float
    rolloff: float
    span: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __matmul__(self, other):
        return self.entries @ other


def _shaping_arguments(tau: float, L: int, Q: int) -> np.ndarray:
    if L < 1:
        raise ConfigError(f"block length must be >= 1, got {L}")
    if Q < 2:
        raise ConfigError(f"oversampling factor must be >= 2, got {Q}")
    i = np.arange(L * Q)[:, None]
    n = np.arange(L)[None, :]
    return i / Q - n - tau


def build_shaping_matrix(
    tau: float,
    L: int,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
) -> ShapingMatrix:
    """Pulse-shaping matrix with entry ``(i, n) = g(i/Q - n - tau)``."""
    args = _shaping_arguments(tau, L, Q)
    return ShapingMatrix(rrc_pulse(args, rolloff, span), float(tau), rolloff, span)


def build_derivative_matrix(
    tau: float,
    L: int,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
) -> np.ndarray:
    """Entrywise derivative of the shaping matrix with respect to ``tau``.

    Since the argument is ``i/Q - n - tau``, this is ``-g'`` at the same point.
    """
    args = _shaping_arguments(tau, L, Q)
    return -rrc_derivative(args, rolloff, span)


def cfo_phasor(nu: float, n_samples: int, Q: int = DEFAULT_Q) -> np.ndarray:
    """Diagonal of the CFO matrix: ``exp(j 2 pi nu i / Q)`` for ``i < n_samples``."""
    return np.exp(2j * np.pi * nu * np.arange(n_samples) / Q)


def build_cfo_matrix(nu: float, L: int, Q: int = DEFAULT_Q) -> np.ndarray:
    """LQ x LQ diagonal carrier-frequency-offset matrix."""
    return np.diag(cfo_phasor(nu, L * Q, Q))


def shape_symbols(
    symbols,
    tau,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
    derivative: bool = False,
) -> np.ndarray:
    """Compute ``G(tau) @ symbols`` without forming ``G``.

    Sample ``i = m Q + r`` only involves the ``2 span + 2`` pulse samples
    ``g(k + r/Q - tau)``, so the product is a polyphase FIR filter.  ``tau``
    may be a 1-D array, in which case one row is returned per offset.  With
    ``derivative=True`` the result is ``dG/dtau @ symbols``.
    """
    _check_pulse_args(rolloff, span)
    symbols = np.asarray(symbols)
    L = symbols.shape[0]
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    k_lo = int(np.floor(taus.min() - span - 1.0))
    k_hi = int(np.ceil(taus.max() + span))
    ks = np.arange(k_lo, k_hi + 1)
    phases = np.arange(Q) / Q
    args = ks[None, None, :] + phases[None, :, None] - taus[:, None, None]
    if derivative:
        taps = -_rrc_eval(args, rolloff, span, derivative=True)
    else:
        taps = _rrc_eval(args, rolloff, span, derivative=False)
    # window[m, j] = symbols[m - ks[j]] where that index exists
    src = np.arange(L)[:, None] - ks[None, :]
    valid = (src >= 0) & (src < L)
    window = np.where(valid, symbols[np.clip(src, 0, L - 1)], 0.0)
    out = np.einsum("mk,bqk->bmq", window, taps).reshape(taus.size, L * Q)
    return out[0] if np.ndim(tau) == 0 else out


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Noise and gain statistics of the relay round."""

    sigma_n2: float
    sigma_w2: float
    sigma_h2: float = 1.0

    def __post_init__(self):
        if self.sigma_n2 < 0 or self.sigma_w2 < 0 or self.sigma_h2 <= 0:
            raise ConfigError("noise variances must be >= 0 and sigma_h2 > 0")

    @classmethod
    def from_snr_db(cls, snr_db: float, sigma_h2: float = 1.0) -> "NoiseModel":
        """Equal relay and terminal noise ``1/SNR`` for unit-energy symbols."""
        var = 10.0 ** (-snr_db / 10.0)
        return cls(sigma_n2=var, sigma_w2=var, sigma_h2=sigma_h2)

    @property
    def zeta(self) -> float:
        """Relay amplification factor."""
        return 1.0 / np.sqrt(2.0 * self.sigma_h2 + self.sigma_n2)

    @property
    def sigma_u2(self) -> float:
        """Variance of the aggregate noise seen at the terminal."""
        return self.zeta**2 * self.sigma_h2 * self.sigma_n2 + self.sigma_w2


@dataclass(frozen=True)
class HopParams:
    """Per-hop gains and offsets: users -> relay (sr) and relay -> T1 (rs)."""

    h_sr_1: complex
    h_sr_2: complex
    h_rs_1: complex
    tau_sr_1: float
    tau_sr_2: float
    tau_rs_1: float
    nu_sr_1: float
    nu_sr_2: float
    nu_rs_1: float

    def __post_init__(self):
        if abs(self.nu_sr_1 + self.nu_rs_1) > 1e-12:
            raise ConfigError("T1 uses one oscillator both ways: nu_sr_1 must equal -nu_rs_1")


@dataclass(frozen=True)
class CombinedParams:
    """Cascade quantities observable at T1 (the T1 loop has zero CFO)."""

    alpha_1: complex
    alpha_2: complex
    tau_1: float
    tau_2: float
    nu_2: float

    @property
    def alpha(self) -> np.ndarray:
        return np.array([self.alpha_1, self.alpha_2], dtype=complex)

    def as_dict(self) -> dict:
        return {
            "alpha_1": complex(self.alpha_1),
            "alpha_2": complex(self.alpha_2),
            "tau_1": float(self.tau_1),
            "tau_2": float(self.tau_2),
            "nu_2": float(self.nu_2),
        }


def _in_open_unit_box(x: float) -> bool:
    return -0.5 < x < 0.5


def combine_params(hop: HopParams, noise: NoiseModel) -> CombinedParams:
    """Collapse per-hop impairments into the gains and offsets seen at T1.

    The gain phase term uses the relay -> T1 delay, which is what the
    two-hop substitution produces.
    """
    zeta = noise.zeta
    rot = lambda nu: np.exp(-2j * np.pi * nu * hop.tau_rs_1)  # noqa: E731
    alpha_1 = zeta * hop.h_sr_1 * hop.h_rs_1 * rot(hop.nu_sr_1)
    alpha_2 = zeta * hop.h_sr_2 * hop.h_rs_1 * rot(hop.nu_sr_2)
    tau_1 = hop.tau_sr_1 + hop.tau_rs_1
    tau_2 = hop.tau_sr_2 + hop.tau_rs_1
    nu_2 = hop.nu_sr_2 + hop.nu_rs_1
    for name, value in (("tau_1", tau_1), ("tau_2", tau_2), ("nu_2", nu_2)):
        if not _in_open_unit_box(value):
            raise ConfigError(f"combined {name}={value:.6g} outside (-0.5, 0.5)")
    return CombinedParams(complex(alpha_1), complex(alpha_2), tau_1, tau_2, nu_2)


def draw_hop_params(rng: np.random.Generator, sigma_h2: float = 1.0) -> HopParams:
    """Random realization: CN(0, sigma_h2) gains, combined offsets U(-0.5, 0.5).

    The relay -> T1 delay and CFO are drawn uniformly as well and the
    user -> relay values are back-solved so the combined offsets stay uniform.
    """
    h = np.sqrt(sigma_h2 / 2.0) * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    tau_1, tau_2, nu_2, tau_rs, nu_rs = rng.uniform(-0.5, 0.5, size=5)
    return HopParams(
        h_sr_1=complex(h[0]),
        h_sr_2=complex(h[1]),
        h_rs_1=complex(h[2]),
        tau_sr_1=float(tau_1 - tau_rs),
        tau_sr_2=float(tau_2 - tau_rs),
        tau_rs_1=float(tau_rs),
        nu_sr_1=float(-nu_rs),
        nu_sr_2=float(nu_2 - nu_rs),
        nu_rs_1=float(nu_rs),
    )


# --------------------------------------------------------------------------
# Symbols
# --------------------------------------------------------------------------

def qpsk_modulate(bits) -> np.ndarray:
    """Gray map bit pairs: first bit -> sign of I, second bit -> sign of Q."""
    bits = np.asarray(bits, dtype=np.int8).reshape(-1, 2)
    return ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) / np.sqrt(2.0)


def qpsk_slice(symbols) -> np.ndarray:
    """Hard Gray demapping with decision boundaries on the axes."""
    symbols = np.asarray(symbols)
    bits = np.empty((symbols.size, 2), dtype=np.int8)
    bits[:, 0] = symbols.real < 0
    bits[:, 1] = symbols.imag < 0
    return bits.reshape(-1)


@dataclass(frozen=True)
class Frame:
    training: np.ndarray
    data: np.ndarray
    data_bits: np.ndarray


def generate_data(L_d: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Random QPSK payload; returns ``(symbols, bits)`` with ``2 L_d`` bits."""
    if L_d < 1:
        raise ConfigError(f"data length must be >= 1, got {L_d}")
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=2 * L_d, dtype=np.int8)
    return qpsk_modulate(bits), bits


def _training_is_admissible(t1, t2, Q, rolloff, span) -> bool:
    L = t1.size
    if abs(np.vdot(t1, t2)) / L > 1.0 - 1e-6:
        return False
    grid = (-0.45, 0.0, 0.45)
    for tau_1 in grid:
        g1 = shape_symbols(t1, tau_1, Q, rolloff, span)
        for tau_2 in grid:
            g2 = shape_symbols(t2, tau_2, Q, rolloff, span)
            for nu in grid:
                omega = np.column_stack([g1, cfo_phasor(nu, L * Q, Q) * g2])
                s = np.linalg.svd(omega, compute_uv=False)
                if s[-1] <= 1e-6 * s[0]:
                    return False
    return True


def generate_training(
    L_t: int,
    seed=None,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
    max_tries: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded pair of unit-modulus QPSK-phase training sequences.

    A pair is kept only if it is not collinear and the two-column training
    matrix keeps full rank over a lattice of admissible offsets.
    """
    if L_t < 2:
        raise ConfigError(f"training length must be >= 2, got {L_t}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        idx = rng.integers(0, 4, size=(2, L_t))
        t1, t2 = QPSK_CONSTELLATION[idx[0]], QPSK_CONSTELLATION[idx[1]]
        if _training_is_admissible(t1, t2, Q, rolloff, span):
            return t1, t2
    raise RankDeficiencyError(f"no admissible training pair after {max_tries} draws")


# --------------------------------------------------------------------------
# Relay round
# --------------------------------------------------------------------------

def _cn(rng: np.random.Generator, var: float, n: int) -> np.ndarray:
    return np.sqrt(var / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def simulate_round(
    symbols_1,
    symbols_2,
    hop: HopParams,
    noise: NoiseModel,
    rng: np.random.Generator | None = None,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
) -> np.ndarray:
    """Sampled signal received at T1 after one relay round.

    The two hops are applied separately (superposition at the relay, then
    amplification, delay and rotation on the way back), so the result is an
    independent route to the combined-parameter model.  ``rng=None`` returns
    the noiseless mean.
    """
    symbols_1 = np.asarray(symbols_1)
    symbols_2 = np.asarray(symbols_2)
    if symbols_1.shape != symbols_2.shape:
        raise ConfigError("both users must send blocks of equal length")
    L = symbols_1.size
    t = np.arange(L * Q) / Q
    back = noise.zeta * hop.h_rs_1 * np.exp(2j * np.pi * hop.nu_rs_1 * t)
    received = np.zeros(L * Q, dtype=complex)
    for s, h, tau_sr, nu_sr in (
        (symbols_1, hop.h_sr_1, hop.tau_sr_1, hop.nu_sr_1),
        (symbols_2, hop.h_sr_2, hop.tau_sr_2, hop.nu_sr_2),
    ):
        # relay-side waveform evaluated at t - tau_rs (delay on the return hop)
        rotation = np.exp(2j * np.pi * nu_sr * (t - hop.tau_rs_1))
        shaped = shape_symbols(s, tau_sr + hop.tau_rs_1, Q, rolloff, span)
        received += back * h * rotation * shaped
    if rng is None:
        return received
    relay_noise = _cn(rng, noise.sigma_n2, L * Q)
    terminal_noise = _cn(rng, noise.sigma_w2, L * Q)
    return received + back * relay_noise + terminal_noise
