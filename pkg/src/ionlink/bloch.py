"""Optical Bloch (Lindblad) equations for the driven multilevel ion.

The Hamiltonian is built in a rotating frame fixed by the laser
frequencies under the rotating-wave approximation.  Frame offsets are
found by walking the laser graph; a configuration whose lasers form an
inconsistent loop has no time-independent frame and is rejected.

Dissipation enters as one collapse operator per (decay channel x
photon polarization q), each summing coherently over the Zeeman
sublevel pairs of that channel, which preserves the sublevel coherence
transfer of free-space spontaneous emission.

Density matrices are integrated in a real-valued packing of the
Hermitian matrix (diagonal, then re/im of the upper triangle), so
Hermiticity is exact by construction and the trace is a linear
invariant that Runge-Kutta steps conserve to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse
from scipy.integrate import solve_ivp

from .atom import (AtomModel, MagneticField, ZeemanState, coupling_amplitude,
                   total_decay_rate, zeeman_shift)
from .fitting import FitError, exp_tail_fit

TRACE_TOL = 1e-9
HERM_TOL = 1e-10
EIG_TOL = 1e-8

_SQRT3INV = 1.0 / math.sqrt(3.0)


class BlochError(ValueError):
    """Configuration errors: bad lasers, bases, or frames."""


class IntegrationError(RuntimeError):
    """Integrator failed to meet tolerances or produced an invalid state."""


@dataclass(frozen=True)
class LaserField:
    """One classical drive on a dipole transition.

    detuning is measured from the Zeeman-free line center (rad/s); rabi
    is the Rabi frequency on the reduced dipole (rad/s); polarization
    holds the (sigma-, pi, sigma+) amplitudes, normalized to one.
    window is (t_on, t_off) in seconds, or None for always on.
    """

    lower: str
    upper: str
    detuning: float = 0.0
    rabi: float = 0.0
    polarization: tuple = (_SQRT3INV, _SQRT3INV, _SQRT3INV)
    window: tuple | None = None

    def __post_init__(self):
        if self.rabi < 0:
            raise BlochError(f"laser {self.lower}->{self.upper}: rabi must be >= 0")
        norm = sum(abs(a) ** 2 for a in self.polarization)
        if len(self.polarization) != 3 or abs(norm - 1.0) > 1e-12:
            raise BlochError(f"laser {self.lower}->{self.upper}: polarization "
                             "amplitudes must be normalized to 1")
        if self.window is not None and self.window[1] <= self.window[0]:
            raise BlochError(f"laser {self.lower}->{self.upper}: empty window")

    @property
    def transition(self) -> tuple:
        return (self.lower, self.upper)

    def active(self, t: float) -> bool:
        return self.window is None or (self.window[0] <= t < self.window[1])


@dataclass
class BlochConfig:
    """Atom model, field, drives, and integrator step control."""

    model: AtomModel
    bfield: MagneticField
    lasers: list = field(default_factory=list)
    levels: tuple | None = None    # None: all model levels
    rtol: float = 1e-8
    atol: float = 1e-10

    def included_levels(self) -> tuple:
        return tuple(self.levels) if self.levels is not None else self.model.labels


class DensityMatrix:
    """Hermitian state over an ordered Zeeman-sublevel basis."""

    def __init__(self, basis: tuple, mat: np.ndarray):
        self.basis = tuple(basis)
        self.mat = np.asarray(mat, dtype=complex)
        if self.mat.shape != (len(self.basis),) * 2:
            raise BlochError("density matrix shape does not match basis")

    @classmethod
    def from_populations(cls, basis, weights: dict) -> "DensityMatrix":
        """Diagonal state distributing each level weight uniformly over its mJ."""
        per_level: dict = {}
        for st in basis:
            per_level[st.level.label] = per_level.get(st.level.label, 0) + 1
        diag = []
        for st in basis:
            w = weights.get(st.level.label, 0.0)
            diag.append(w / per_level[st.level.label])
        total = sum(diag)
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise BlochError(f"level weights sum to {total}, expected 1")
        return cls(basis, np.diag(np.asarray(diag, dtype=complex)))

    def population(self, label: str) -> float:
        return float(sum(self.mat[i, i].real for i, st in enumerate(self.basis)
                         if st.level.label == label))

    def trace(self) -> float:
        return float(np.trace(self.mat).real)

    def validate(self, trace_tol: float = TRACE_TOL, herm_tol: float = HERM_TOL,
                 eig_tol: float = EIG_TOL) -> None:
        herm = np.max(np.abs(self.mat - self.mat.conj().T))
        if herm > herm_tol:
            raise IntegrationError(f"hermiticity violated by {herm:.3e}")
        tr = np.trace(self.mat)
        if abs(tr - 1.0) > trace_tol:
            raise IntegrationError(f"trace deviates from 1 by {abs(tr - 1.0):.3e}")
        lo = float(np.linalg.eigvalsh(self.mat)[0])
        if lo < -eig_tol:
            raise IntegrationError(f"negative eigenvalue {lo:.3e}")


def _basis_states(config: BlochConfig) -> tuple:
    states = []
    for label in config.included_levels():
        states.extend(config.model.sublevels(label))
    return tuple(states)


def _frame_offsets(config: BlochConfig) -> dict:
    """Per-level diagonal offsets E - nu in the rotating frame.

    Each laser edge (l, u, delta) forces offset[u] - offset[l] = -delta.
    Levels unreachable through the laser graph sit at offset 0.
    """
    offsets: dict = {}
    edges: dict = {}
    for ls in config.lasers:
        edges.setdefault(ls.lower, []).append((ls.upper, -ls.detuning))
        edges.setdefault(ls.upper, []).append((ls.lower, +ls.detuning))
    for root in config.included_levels():
        if root in offsets:
            continue
        offsets[root] = 0.0
        stack = [root]
        while stack:
            a = stack.pop()
            for b, step in edges.get(a, []):
                want = offsets[a] + step
                if b in offsets:
                    if abs(offsets[b] - want) > 1e-6:
                        raise BlochError(
                            "laser detunings form an inconsistent loop: no "
                            "time-independent rotating frame exists")
                else:
                    offsets[b] = want
                    stack.append(b)
    return offsets


class Generator:
    """Piecewise-constant Lindblad generator dX/dt = G(t) X (packed real form)."""

    def __init__(self, config: BlochConfig):
        model = config.model
        included = config.included_levels()
        for label in included:
            model.level(label)
        # closure: every decay channel out of an included level must land inside
        for label in included:
            for ch in model.channels_from(label):
                if ch.lower not in included:
                    raise BlochError(
                        f"included levels are not closed under decay: "
                        f"{label} decays to excluded level {ch.lower}")
        for ls in config.lasers:
            if ls.lower not in included or ls.upper not in included:
                raise BlochError(f"laser {ls.lower}->{ls.upper} addresses a level "
                                 "outside the included set")
            if not model.dipole_connected(ls.lower, ls.upper):
                raise BlochError(f"laser {ls.lower}->{ls.upper} addresses a pair "
                                 "with no dipole transition")
            if model.level(ls.upper).energy_rank <= model.level(ls.lower).energy_rank:
                raise BlochError(f"laser {ls.lower}->{ls.upper}: upper level below "
                                 "lower level")

        self.config = config
        self.basis = _basis_states(config)
        self.n = len(self.basis)
        self._index = {(st.level.label, st.mJ): i for i, st in enumerate(self.basis)}

        # real packing layout: [diag (n), re(upper pairs), im(upper pairs)]
        n = self.n
        iu, ju = np.triu_indices(n, k=1)
        self._pairs_i, self._pairs_j = iu, ju
        self.size = n * n

        offsets = _frame_offsets(config)
        h0 = np.zeros((n, n), dtype=complex)
        for i, st in enumerate(self.basis):
            h0[i, i] = offsets.get(st.level.label, 0.0) + zeeman_shift(st, config.bfield)
        self._h0 = h0

        self._drives = [self._drive_matrix(ls) for ls in config.lasers]
        self.collapse_ops = self._collapse_ops()

        diss = np.zeros((self.size, self.size), dtype=complex)
        for L in self.collapse_ops:
            diss += _dissipator_super(L)
        self._static_real = self._to_real(_unitary_super(h0) + diss)
        self._drive_real = [self._to_real(_unitary_super(hd)) for hd in self._drives]
        self._cache: dict = {}

    # -- construction helpers -------------------------------------------------

    def index(self, label: str, mJ: float) -> int:
        return self._index[(label, mJ)]

    def _drive_matrix(self, ls: LaserField) -> np.ndarray:
        model = self.config.model
        half = np.zeros((self.n, self.n), dtype=complex)
        for low in model.sublevels(ls.lower):
            for q, amp_q in zip((-1, 0, 1), ls.polarization):
                if amp_q == 0:
                    continue
                mu = low.mJ + q
                key = (ls.upper, mu)
                if key not in self._index:
                    continue
                up = ZeemanState(model.level(ls.upper), mu)
                cg = coupling_amplitude(low, up, q, model)
                if cg == 0.0:
                    continue
                half[self._index[key], self._index[(ls.lower, low.mJ)]] += \
                    0.5 * ls.rabi * amp_q * cg
        return half + half.conj().T

    def _collapse_ops(self) -> list:
        model = self.config.model
        included = set(self.config.included_levels())
        ops = []
        for ch in model.channels:
            if ch.upper not in included or ch.rate == 0.0:
                continue
            for q in (-1, 0, 1):
                L = np.zeros((self.n, self.n), dtype=complex)
                for up in model.sublevels(ch.upper):
                    ml = up.mJ - q
                    key = (ch.lower, ml)
                    if key not in self._index:
                        continue
                    low = ZeemanState(model.level(ch.lower), ml)
                    cg = coupling_amplitude(low, up, q, model)
                    if cg == 0.0:
                        continue
                    L[self._index[key], self._index[(ch.upper, up.mJ)]] = \
                        math.sqrt(ch.rate) * cg
                if np.any(L):
                    ops.append(L)
        return ops

    # -- real packing ---------------------------------------------------------

    def pack(self, mat: np.ndarray) -> np.ndarray:
        """Hermitian matrix -> real vector (hermitizes small numeric residue)."""
        i, j = self._pairs_i, self._pairs_j
        upper = 0.5 * (mat[i, j] + np.conj(mat[j, i]))
        return np.concatenate([np.real(np.diag(mat)), upper.real, upper.imag])

    def unpack(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        npair = len(self._pairs_i)
        mat = np.zeros((n, n), dtype=complex)
        mat[np.arange(n), np.arange(n)] = x[:n]
        upper = x[n:n + npair] + 1j * x[n + npair:]
        mat[self._pairs_i, self._pairs_j] = upper
        mat[self._pairs_j, self._pairs_i] = np.conj(upper)
        return mat

    def _to_real(self, super_c: np.ndarray) -> np.ndarray:
        cols = np.empty((self.size, self.size))
        basis_vec = np.zeros(self.size)
        for k in range(self.size):
            basis_vec[k] = 1.0
            e_mat = self.unpack(basis_vec)
            y = (super_c @ e_mat.reshape(-1)).reshape(self.n, self.n)
            cols[:, k] = self.pack(y)
            basis_vec[k] = 0.0
        return cols

    # -- time dependence ------------------------------------------------------

    def active_mask(self, t: float) -> tuple:
        return tuple(ls.active(t) for ls in self.config.lasers)

    def superoperator(self, mask: tuple):
        """Sparse real generator for the given set of active lasers."""
        if mask not in self._cache:
            g = self._static_real.copy()
            for on, dr in zip(mask, self._drive_real):
                if on:
                    g += dr
            self._cache[mask] = scipy.sparse.csr_matrix(g)
        return self._cache[mask]

    def hamiltonian(self, t: float = 0.0) -> np.ndarray:
        h = self._h0.copy()
        for ls, hd in zip(self.config.lasers, self._drives):
            if ls.active(t):
                h += hd
        return h

    def breakpoints(self, t0: float, t1: float) -> list:
        pts = {t0, t1}
        for ls in self.config.lasers:
            if ls.window is None:
                continue
            for edge in ls.window:
                if t0 < edge < t1:
                    pts.add(edge)
        return sorted(pts)


def build_generator(config: BlochConfig) -> Generator:
    """Assemble the rotating-frame Lindblad generator for this configuration."""
    return Generator(config)


def _unitary_super(h: np.ndarray) -> np.ndarray:
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def _dissipator_super(L: np.ndarray) -> np.ndarray:
    eye = np.eye(L.shape[0])
    ldl = L.conj().T @ L
    return (np.kron(L, L.conj())
            - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T)))


def evolve(config: BlochConfig, rho0: DensityMatrix, duration: float,
           output_grid) -> list:
    """Integrate rho over [0, duration], sampling at output_grid times.

    Adaptive integration (DOP853) at the configured tolerances; each
    output state is checked against the density-matrix invariants and an
    IntegrationError carries diagnostics on failure.
    """
    if duration <= 0:
        raise BlochError("duration must be > 0")
    gen = build_generator(config)
    if tuple(rho0.basis) != gen.basis:
        raise BlochError("initial state basis does not match configuration")
    grid = np.asarray(list(output_grid), dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) < 0):
        raise BlochError("output grid must be non-empty and sorted")
    if grid[0] < 0 or grid[-1] > duration + 1e-15:
        raise BlochError("output grid must lie within [0, duration]")

    grid = np.minimum(grid, duration)
    x = gen.pack(rho0.mat)
    out = np.empty((grid.size, gen.size))
    out[grid == 0.0] = x
    edges = gen.breakpoints(0.0, duration)
    for a, b in zip(edges[:-1], edges[1:]):
        mask = gen.active_mask(0.5 * (a + b))
        g_op = gen.superoperator(mask)
        sel = (grid > a) & (grid <= b)
        t_eval = np.unique(np.append(grid[sel], b))
        sol = solve_ivp(lambda t, y: g_op.dot(y), (a, b), x, method="DOP853",
                        t_eval=t_eval, rtol=config.rtol, atol=config.atol)
        if not sol.success:
            raise IntegrationError(
                f"integration failed on [{a:.3e}, {b:.3e}] s: {sol.message}")
        for idx in np.nonzero(sel)[0]:
            out[idx] = sol.y[:, np.searchsorted(sol.t, grid[idx])]
        x = sol.y[:, -1]

    states = []
    for k in range(grid.size):
        dm = DensityMatrix(gen.basis, gen.unpack(out[k]))
        try:
            dm.validate()
        except IntegrationError as err:
            raise IntegrationError(
                f"invalid state at t={grid[k]:.4e} s ({err}); "
                f"tolerances rtol={config.rtol}, atol={config.atol}") from err
        states.append(dm)
    return states


def steady_state(config: BlochConfig) -> DensityMatrix:
    """Stationary state of the always-on laser set (trace-normalized)."""
    gen = build_generator(config)
    if not any(ls.window is None and ls.rabi > 0 for ls in config.lasers):
        raise BlochError("steady state undefined without a continuous drive")
    g = gen.superoperator(tuple(ls.window is None for ls in config.lasers)).toarray()
    trace_row = np.zeros(gen.size)
    trace_row[:gen.n] = 1.0
    a = np.vstack([g, trace_row])
    b = np.zeros(gen.size + 1)
    b[-1] = 1.0
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    resid = float(np.max(np.abs(g @ x)))
    scale = float(np.max(np.abs(g))) or 1.0
    if resid > 1e-8 * scale:
        raise IntegrationError(f"no steady state found (residual {resid:.3e})")
    dm = DensityMatrix(gen.basis, gen.unpack(x))
    dm.validate(trace_tol=1e-8, eig_tol=1e-6)
    return dm


def scattering_rates(config: BlochConfig, rho: DensityMatrix) -> dict:
    """Photon scattering rate per wavelength label: partial rate x population."""
    rates = {label: 0.0 for label in (393, 397, 850, 854, 866, 729, 732)}
    for ch in config.model.channels:
        rates[ch.wavelength] = rates.get(ch.wavelength, 0.0) + \
            ch.rate * rho.population(ch.upper)
    return rates


@dataclass
class Wavepacket:
    """Arrival-time density of the heralded photon and its exponential tail."""

    times: np.ndarray
    density: np.ndarray
    t1: float                 # 1/e time of the fitted exponential tail, s
    pump_probability: float   # integral of the density over the window


def _pump_laser(lasers):
    for ls in lasers:
        if ls.transition == ("D3/2", "P3/2"):
            return ls
    return None


def wavepacket(config: BlochConfig, window: float, points: int = 1024,
               initial: DensityMatrix | None = None) -> Wavepacket:
    """Shape of the heralded photon: g(t) = Gamma_854 * P_P3/2(t) on [0, window].

    The pump laser (D3/2 -> P3/2) switches on at t=0; the initial state
    defaults to the stationary state of the remaining (cooling) lasers.
    The repump transition (D5/2 -> P3/2) must be off, otherwise the
    emitted population would be recycled and g would not be a
    single-photon density.
    """
    pump = _pump_laser(config.lasers)
    if pump is None:
        raise BlochError("no emission path: the configuration has no laser on "
                         "D3/2 -> P3/2")
    for ls in config.lasers:
        if ls.transition == ("D5/2", "P3/2") and ls.rabi > 0:
            raise BlochError("854 nm repump drive active during the pump window; "
                             "not a single-photon configuration")
    ch = config.model.channel("P3/2", "D5/2")
    if ch is None:
        raise BlochError("model has no P3/2 -> D5/2 decay channel")

    if initial is None:
        cooling = [ls for ls in config.lasers if ls is not pump]
        if any(ls.rabi > 0 for ls in cooling):
            initial = steady_state(replace(config, lasers=cooling))
        else:
            initial = DensityMatrix.from_populations(_basis_states(config),
                                                     {"S1/2": 1.0})

    grid = np.linspace(0.0, window, points)
    states = evolve(config, initial, window, grid)
    p32 = np.array([dm.population("P3/2") for dm in states])
    density = ch.rate * np.clip(p32, 0.0, None)
    pump_prob = states[-1].population("D5/2") - states[0].population("D5/2")

    if density.max() <= 0.0:
        return Wavepacket(grid, density, math.inf, max(pump_prob, 0.0))
    try:
        tau, _ = exp_tail_fit(grid, density)
    except FitError as err:
        raise IntegrationError(f"wave-packet tail fit failed: {err}") from err
    return Wavepacket(grid, density, tau, pump_prob)


def t1_vs_power(config: BlochConfig, powers, window: float,
                points: int = 1024) -> list:
    """(power, 1/T1) curve from scaling the pump Rabi frequency as sqrt(power).

    Powers are relative to the configured pump laser (power = 1).
    """
    powers = list(powers)
    if any(p <= 0 for p in powers):
        raise BlochError("powers must be > 0")
    if any(b <= a for a, b in zip(powers, powers[1:])):
        raise BlochError("powers must be strictly increasing")
    pump = _pump_laser(config.lasers)
    if pump is None:
        raise BlochError("no emission path: the configuration has no laser on "
                         "D3/2 -> P3/2")
    curve = []
    for p in powers:
        lasers = [replace(ls, rabi=ls.rabi * math.sqrt(p)) if ls is pump else ls
                  for ls in config.lasers]
        wp = wavepacket(replace(config, lasers=lasers), window, points)
        inv = 0.0 if math.isinf(wp.t1) else 1.0 / wp.t1
        curve.append((p, inv))
    return curve
