"""Independent reference computations shared by several test modules."""

import numpy as np

from twrn_sync.signal_model import build_cfo_matrix, build_shaping_matrix


def brute_force_grid(y, t1, t2, grid):
    """Triple loop over the grid, evaluating the concentrated cost with dense matrices.

    Returns ``(cost, (tau_1, tau_2, nu_2))``; the first strict minimum in
    loop order wins.
    """
    tau1s, tau2s, nus = grid.axes()
    L = len(t1)
    g = {tau: build_shaping_matrix(tau, L).entries for tau in np.union1d(tau1s, tau2s)}
    lam = {nu: build_cfo_matrix(nu, L) for nu in nus}
    best, arg = np.inf, None
    for a in tau1s:
        for b in tau2s:
            for c in nus:
                omega = np.column_stack([g[a] @ t1, lam[c] @ g[b] @ t2])
                chi = -np.real(y.conj() @ omega @ np.linalg.inv(omega.conj().T @ omega) @ omega.conj().T @ y)
                if chi < best:
                    best, arg = chi, (a, b, c)
    return best, arg
