"""Shared least-squares helpers (exponential tail fits)."""

from __future__ import annotations

import numpy as np
from scipy.optimize import curve_fit


class FitError(RuntimeError):
    """Fit could not be performed (too few points, degenerate data)."""


def exp_tail_fit(times, values, start: int | None = None) -> tuple:
    """Fit A*exp(-(t-t_peak)/tau) to the tail of a sampled curve.

    The tail starts at the curve maximum (or at `start`).  Returns
    (tau, amplitude).  Used both for wave-packet shapes and for binned
    arrival-time histograms, so the two estimates are directly
    comparable.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size < 4:
        raise FitError("need at least 4 samples")
    i0 = int(np.argmax(v)) if start is None else int(start)
    t_tail = t[i0:] - t[i0]
    v_tail = v[i0:]
    pos = v_tail > 0
    if pos.sum() < 4:
        raise FitError("tail has fewer than 4 positive samples")

    # log-linear seed, restricted to the clearly-resolved part of the decay
    strong = v_tail > v_tail.max() * 1e-4
    slope = np.polyfit(t_tail[strong & pos], np.log(v_tail[strong & pos]), 1)[0]
    tau0 = -1.0 / slope if slope < 0 else (t_tail[-1] - t_tail[0]) or 1.0
    try:
        popt, _ = curve_fit(lambda x, a, tau: a * np.exp(-x / tau),
                            t_tail, v_tail, p0=(v_tail[0], tau0),
                            bounds=((0.0, 0.0), (np.inf, np.inf)), maxfev=10000)
    except (RuntimeError, ValueError) as err:
        raise FitError(f"exponential fit did not converge: {err}") from err
    return float(popt[1]), float(popt[0])
