"""Self-interference cancellation and MMSE detection of the opposing user."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError
from .signal_model import (
    DEFAULT_Q,
    DEFAULT_ROLLOFF,
    DEFAULT_SPAN,
    CombinedParams,
    build_shaping_matrix,
    cfo_phasor,
    qpsk_slice,
    shape_symbols,
)


@dataclass
class DetectionResult:
    soft_symbols: np.ndarray
    hard_bits: np.ndarray
    residual_energy: float


def cancel_self_interference(
    y_dtp,
    d_self,
    alpha_hat_1: complex,
    tau_hat_1: float,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
) -> np.ndarray:
    """Subtract the terminal's own relayed data: ``y - a1 G(tau_1) d_self``."""
    y_dtp = np.asarray(y_dtp)
    d_self = np.asarray(d_self)
    if y_dtp.size != d_self.size * Q:
        raise ConfigError(f"received block of {y_dtp.size} samples does not match {d_self.size} symbols at Q={Q}")
    return y_dtp - alpha_hat_1 * shape_symbols(d_self, tau_hat_1, Q, rolloff, span)


def mmse_detect(
    z_hat,
    alpha_hat_2: complex,
    tau_hat_2: float,
    nu_hat_2: float,
    sigma_u2: float,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
) -> DetectionResult:
    """Linear MMSE estimate ``(Phi^H Phi + s I)^-1 Phi^H z`` with ``Phi = a2 Lambda2 G2``.

    Assumes unit-energy symbols, so the regularizer is the noise variance.
    """
    if not sigma_u2 > 0:
        raise ConfigError("sigma_u2 must be positive")
    z_hat = np.asarray(z_hat)
    if z_hat.size % Q:
        raise ConfigError(f"block of {z_hat.size} samples is not a multiple of Q={Q}")
    L = z_hat.size // Q
    g = build_shaping_matrix(tau_hat_2, L, Q, rolloff, span).entries
    phi = (alpha_hat_2 * cfo_phasor(nu_hat_2, L * Q, Q))[:, None] * g
    # Lambda is unitary, so Phi^H Phi = |a2|^2 G^T G
    normal = abs(alpha_hat_2) ** 2 * (g.T @ g) + sigma_u2 * np.eye(L)
    try:
        factor = scipy.linalg.cho_factor(normal)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("MMSE normal matrix is numerically singular") from exc
    soft = scipy.linalg.cho_solve(factor, phi.conj().T @ z_hat)
    resid = z_hat - phi @ soft
    return DetectionResult(soft, qpsk_slice(soft), float(np.vdot(resid, resid).real))


def benchmark_detect(
    z_hat,
    truth: CombinedParams,
    sigma_u2: float,
    Q: int = DEFAULT_Q,
    rolloff: float = DEFAULT_ROLLOFF,
    span: float = DEFAULT_SPAN,
) -> DetectionResult:
    """MMSE detection with the true gain, delay and CFO of the opposing path."""
    return mmse_detect(z_hat, truth.alpha_2, truth.tau_2, truth.nu_2, sigma_u2, Q, rolloff, span)


def count_bit_errors(hard_bits, truth_bits) -> tuple[int, int]:
    hard_bits = np.asarray(hard_bits)
    truth_bits = np.asarray(truth_bits)
    if hard_bits.shape != truth_bits.shape:
        raise ConfigError(f"bit vectors differ in shape: {hard_bits.shape} vs {truth_bits.shape}")
    return int(np.count_nonzero(hard_bits != truth_bits)), int(hard_bits.size)
