"""Reduced rate-equation model over the five fine-structure levels.

Coherences are dropped: each laser contributes a Lorentzian
absorption/stimulated-emission rate

    W = (Omega^2 / 4) * Gamma_u / (detuning^2 + Gamma_u^2 / 4)

which reproduces the two-level optical-Bloch steady state exactly.
The model is the fast mode and the independent oracle for the full
Zeeman-resolved solver in the consecutive-pumping (low saturation)
regime; it cannot show coherent multi-photon enhancement, which is the
point of the comparison.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

from .atom import AtomModel, total_decay_rate
from .bloch import BlochError, Wavepacket, _pump_laser
from .fitting import FitError, exp_tail_fit


def rate_matrix(model: AtomModel, lasers) -> tuple:
    """(labels, M) with dP/dt = M P over level populations."""
    labels = model.labels
    idx = {lab: i for i, lab in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)))
    for ch in model.channels:
        u, l = idx[ch.upper], idx[ch.lower]
        m[l, u] += ch.rate
        m[u, u] -= ch.rate
    for ls in lasers:
        if ls.rabi == 0.0:
            continue
        gamma = total_decay_rate(ls.upper, model)
        if gamma == 0.0:
            raise BlochError(f"rate-equation mode needs a decaying upper level "
                             f"({ls.upper} has zero width)")
        w = 0.25 * ls.rabi ** 2 * gamma / (ls.detuning ** 2 + 0.25 * gamma ** 2)
        l, u = idx[ls.lower], idx[ls.upper]
        m[u, l] += w
        m[l, l] -= w
        m[l, u] += w
        m[u, u] -= w
    return labels, m


def evolve_populations(model: AtomModel, lasers, p0: dict, grid) -> dict:
    """Populations per level on the grid (lasers treated as always on)."""
    labels, m = rate_matrix(model, lasers)
    y0 = np.array([p0.get(lab, 0.0) for lab in labels])
    if not math.isclose(y0.sum(), 1.0, abs_tol=1e-9):
        raise BlochError("initial populations must sum to 1")
    grid = np.asarray(list(grid), dtype=float)
    sol = solve_ivp(lambda t, y: m @ y, (grid[0], grid[-1]), y0,
                    t_eval=grid, method="DOP853", rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise BlochError(f"rate-equation integration failed: {sol.message}")
    return {lab: sol.y[i] for i, lab in enumerate(labels)}


def steady_populations(model: AtomModel, lasers) -> dict:
    labels, m = rate_matrix(model, lasers)
    a = np.vstack([m, np.ones(len(labels))])
    b = np.zeros(len(labels) + 1)
    b[-1] = 1.0
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return dict(zip(labels, x))


def wavepacket(model: AtomModel, lasers, window: float,
               points: int = 1024) -> Wavepacket:
    """Rate-equation analog of bloch.wavepacket (same observable, no coherences)."""
    pump = _pump_laser(lasers)
    if pump is None:
        raise BlochError("no emission path: the configuration has no laser on "
                         "D3/2 -> P3/2")
    ch = model.channel("P3/2", "D5/2")
    if ch is None:
        raise BlochError("model has no P3/2 -> D5/2 decay channel")
    cooling = [ls for ls in lasers if ls is not pump]
    if any(ls.rabi > 0 for ls in cooling):
        p0 = steady_populations(model, cooling)
    else:
        p0 = {"S1/2": 1.0}
    grid = np.linspace(0.0, window, points)
    pops = evolve_populations(model, lasers, p0, grid)
    density = ch.rate * np.clip(pops["P3/2"], 0.0, None)
    pump_prob = float(pops["D5/2"][-1] - pops["D5/2"][0])
    if density.max() <= 0.0:
        return Wavepacket(grid, density, math.inf, max(pump_prob, 0.0))
    try:
        tau, _ = exp_tail_fit(grid, density)
    except FitError as err:
        raise BlochError(f"rate-equation tail fit failed: {err}") from err
    return Wavepacket(grid, density, tau, pump_prob)
