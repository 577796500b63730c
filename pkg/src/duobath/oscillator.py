"""Action-angle toolkit for the free oscillator H_f = P^2/2 + |Q|^(2k)/(2k).

Everything downstream (spectral constants, drift-test corrections) is built
from three ingredients computed here on a single reference orbit at energy 1:
uniformly time-sampled orbits, orbit averages, and centred solutions u of the
transport equation du/dt = g along the orbit.  Off-orbit values come from the
exact scaling of the homogeneous potential, so they are only trusted outside
a small ball around the origin (where the smooth constructions would differ).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import beta as beta_fn

DEFAULT_NODES = 4096
CLOSURE_TOL = 1e-10
ENERGY_FLOOR = 1e-12


class OrbitError(RuntimeError):
    pass


def q_max(E: float, k: float) -> float:
    return (2 * k * E) ** (1 / (2 * k))


def orbit_period(E: float, k: float) -> float:
    """Period of the level set H_f = E.

    Closed form 4 * Qmax / sqrt(2E) * B(1/(2k), 1/2) / (2k); scales like
    E^((1-k)/(2k)).
    """
    if E <= 0:
        raise ValueError("energy must be positive")
    if k <= 0:
        raise ValueError("exponent must be positive")
    return 4 * q_max(E, k) / math.sqrt(2 * E) * beta_fn(1 / (2 * k), 0.5) / (2 * k)


def _force(q, k):
    return -q * np.abs(q) ** (2 * k - 2) if k != 1 else -q


@dataclass
class OrbitTable:
    """One closed orbit sampled on a uniform time grid (n divisible by 4)."""

    k: float
    energy: float
    period: float
    ts: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    # monotone quarter-orbit tables for angle inversion
    _tq: np.ndarray = field(repr=False, default=None)
    _qq: np.ndarray = field(repr=False, default=None)
    _pq: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return len(self.ts)

    def interp(self, values: np.ndarray, t: np.ndarray, order: int = 8) -> np.ndarray:
        """Periodic local Lagrange interpolation of a node profile."""
        return periodic_interp(values, np.asarray(t) / self.period, order=order)

    def q_of_t(self, t):
        return self.interp(self.Q, t)

    def p_of_t(self, t):
        return self.interp(self.P, t)

    def time_of(self, P, Q, newton_iters: int = 3) -> np.ndarray:
        """Invert the orbit parametrization: time in [0, period) of (P, Q).

        (P, Q) must lie on this orbit (callers rescale first).  The quarter
        orbit is inverted through Q where dQ/dt is safely nonzero and through
        P near the turning point, then refined by Newton on the interpolated
        orbit.
        """
        shape = np.shape(P)
        P = np.atleast_1d(np.asarray(P, dtype=float)).ravel()
        Q = np.atleast_1d(np.asarray(Q, dtype=float)).ravel()
        aq, ap = np.abs(Q), np.abs(P)
        q_split = self._qq[len(self._qq) // 2]

        t = np.empty_like(aq)
        use_q = aq <= q_split
        t[use_q] = np.interp(aq[use_q], self._qq, self._tq)
        # P decreases along the quarter orbit: invert on reversed arrays
        t[~use_q] = np.interp(-ap[~use_q], -self._pq, self._tq)

        for _ in range(newton_iters):
            qi = self.interp(self.Q, t)
            pi = self.interp(self.P, t)
            if np.any(use_q):
                tq = t[use_q]
                tq -= (qi[use_q] - aq[use_q]) / np.maximum(pi[use_q], 1e-300)
                t[use_q] = np.clip(tq, 0.0, self.period / 4)
            if np.any(~use_q):
                tp = t[~use_q]
                denom = _force(qi[~use_q], self.k)
                tp -= (pi[~use_q] - ap[~use_q]) / np.where(np.abs(denom) > 1e-300,
                                                           denom, -1e-300)
                t[~use_q] = np.clip(tp, 0.0, self.period / 4)

        # fold the quarter time back to the full period by quadrant
        pos_q, pos_p = Q >= 0, P >= 0
        out = np.where(pos_q & pos_p, t,
                       np.where(pos_q & ~pos_p, self.period / 2 - t,
                                np.where(~pos_q & ~pos_p, self.period / 2 + t,
                                         self.period - t)))
        return np.mod(out, self.period).reshape(shape)

    def state_at_fraction(self, frac) -> tuple[np.ndarray, np.ndarray]:
        """(P, Q) at time = frac * period."""
        t = np.asarray(frac, dtype=float) * self.period
        return self.interp(self.P, t), self.interp(self.Q, t)


def periodic_interp(values: np.ndarray, frac: np.ndarray, order: int = 8) -> np.ndarray:
    """Lagrange interpolation on a uniform periodic grid, stencil size `order`."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    x = np.mod(np.asarray(frac, dtype=float), 1.0) * n
    base = np.floor(x).astype(int)
    u = x - base  # in [0, 1)
    offsets = np.arange(-(order // 2 - 1), order // 2 + 1)  # e.g. -3..4
    idx = np.mod(base[..., None] + offsets, n)
    # Lagrange weights at points `offsets` evaluated at u
    w = np.ones((*u.shape, order))
    for a in range(order):
        for b in range(order):
            if a != b:
                w[..., a] *= (u - offsets[b]) / (offsets[a] - offsets[b])
    return np.sum(w * values[idx], axis=-1)


def build_orbit(E: float, k: float, n: int = DEFAULT_NODES) -> OrbitTable:
    """Integrate one quarter orbit at high order and unfold it by symmetry.

    The returned nodes are uniform in time over the full period; closure and
    the zero means of P and Q hold by construction, energy drift is checked
    against CLOSURE_TOL.
    """
    if E <= 0:
        raise ValueError("energy must be positive")
    if n < 64:
        raise ValueError("need at least 64 nodes")
    if n % 4:
        raise ValueError("node count must be divisible by 4")
    period = orbit_period(E, k)
    quarter = period / 4
    nq = n // 4
    ts_q = np.linspace(0.0, quarter, nq + 1)

    def rhs(_, y):
        return [y[1], _force(y[0], k)]

    sol = solve_ivp(rhs, (0.0, quarter), [0.0, math.sqrt(2 * E)],
                    t_eval=ts_q, rtol=1e-12, atol=1e-14, method="DOP853",
                    dense_output=False)
    if not sol.success:
        raise OrbitError(f"quarter-orbit integration failed: {sol.message}")
    Qq, Pq = sol.y[0], sol.y[1]

    # turning-point consistency is the closure check for the unfolded orbit
    qm = q_max(E, k)
    if abs(Pq[-1]) / math.sqrt(2 * E) > 1e-8 or abs(Qq[-1] - qm) / qm > 1e-8:
        raise OrbitError("orbit failed to close within tolerance")
    Pq = Pq.copy()
    Pq[-1] = 0.0

    energies = Pq ** 2 / 2 + np.abs(Qq) ** (2 * k) / (2 * k)
    drift = np.max(np.abs(energies - E)) / E
    if drift > CLOSURE_TOL:
        raise OrbitError(f"energy drift {drift:.2e} exceeds {CLOSURE_TOL:.0e}")

    Q = np.concatenate([Qq[:-1], Qq[::-1][:-1], -Qq[:-1], -Qq[::-1][:-1]])
    P = np.concatenate([Pq[:-1], -Pq[::-1][:-1], -Pq[:-1], Pq[::-1][:-1]])
    ts = np.arange(n) * (period / n)
    return OrbitTable(k=k, energy=E, period=period, ts=ts, Q=Q, P=P,
                      _tq=ts_q, _qq=Qq, _pq=Pq)


_orbit_cache: dict = {}


def reference_orbit(k: float, n: int = DEFAULT_NODES, E: float = 1.0) -> OrbitTable:
    key = (round(float(k), 12), n, round(float(E), 12))
    if key not in _orbit_cache:
        _orbit_cache[key] = build_orbit(E, k, n)
    return _orbit_cache[key]


def orbit_average(g: Callable, E: float, k: float,
                  orbit: Optional[OrbitTable] = None,
                  n: int = DEFAULT_NODES) -> float:
    """Time average of g(P, Q) over the closed orbit at energy E.

    Uniform-time nodes make the plain mean spectrally accurate for smooth g.
    """
    if orbit is None:
        orbit = reference_orbit(k, n, E)
    return float(np.mean(g(orbit.P, orbit.Q)))


def k_const(k: float) -> float:
    """Orbit average of P^2 at energy 1 (virial value 2k/(1+k))."""
    if k <= 0:
        raise ValueError("exponent must be positive")
    return 2 * k / (1 + k)


# ---------------------------------------------------------------------------
# centred solutions of du/dt = rhs along the orbit

@dataclass
class CenteredSolution:
    """A function u(P, Q) = H_f^a * u0(angle) solving du/dt = rhs on orbits.

    Profiles are tabulated on the reference orbit (energy E_ref); evaluation
    anywhere uses the exact scaling of the homogeneous oscillator.  The first
    derivatives come from the two independent directional derivatives known
    on the orbit (transport along the flow and the Euler scaling relation),
    so they carry no finite-difference error.
    """

    k: float
    e_ref: float
    scaling_exponent: float
    orbit: OrbitTable
    angle_profile: np.ndarray          # u0 at the orbit nodes
    dP_profile: np.ndarray
    dQ_profile: np.ndarray
    d2P_profile: Optional[np.ndarray]  # present when rhs' P-derivative known
    rhs_nodes: np.ndarray

    def _lookup(self, P, Q):
        P = np.asarray(P, dtype=float)
        Q = np.asarray(Q, dtype=float)
        E = P * P / 2 + np.abs(Q) ** (2 * self.k) / (2 * self.k)
        E = np.maximum(E, ENERGY_FLOOR)
        s = (E / self.e_ref)
        Pr = P * s ** (-0.5)
        Qr = Q * s ** (-1 / (2 * self.k))
        t = self.orbit.time_of(Pr, Qr)
        return E, t

    def value(self, P, Q):
        E, t = self._lookup(P, Q)
        return (E / self.e_ref) ** self.scaling_exponent * self.orbit.interp(self.angle_profile, t)

    def dP(self, P, Q):
        E, t = self._lookup(P, Q)
        return (E / self.e_ref) ** (self.scaling_exponent - 0.5) * self.orbit.interp(self.dP_profile, t)

    def dQ(self, P, Q):
        E, t = self._lookup(P, Q)
        a = self.scaling_exponent - 1 / (2 * self.k)
        return (E / self.e_ref) ** a * self.orbit.interp(self.dQ_profile, t)

    def d2P(self, P, Q):
        if self.d2P_profile is None:
            raise ValueError("second-derivative profile unavailable "
                             "(rhs P-derivative was not supplied)")
        E, t = self._lookup(P, Q)
        return (E / self.e_ref) ** (self.scaling_exponent - 1.0) * self.orbit.interp(self.d2P_profile, t)

    def eval_all(self, P, Q):
        """(value, dP, dQ, d2P) with one angle lookup."""
        E, t = self._lookup(P, Q)
        r = E / self.e_ref
        a = self.scaling_exponent
        val = r ** a * self.orbit.interp(self.angle_profile, t)
        dp = r ** (a - 0.5) * self.orbit.interp(self.dP_profile, t)
        dq = r ** (a - 1 / (2 * self.k)) * self.orbit.interp(self.dQ_profile, t)
        d2p = (r ** (a - 1.0) * self.orbit.interp(self.d2P_profile, t)
               if self.d2P_profile is not None else None)
        return val, dp, dq, d2p


def _fft_antiderivative(values: np.ndarray, period: float) -> np.ndarray:
    """Zero-mean periodic antiderivative of zero-mean samples (spectral)."""
    n = len(values)
    vh = np.fft.rfft(values - values.mean())
    m = np.arange(len(vh))
    omega = 2 * np.pi * m / period
    uh = np.zeros_like(vh)
    uh[1:] = vh[1:] / (1j * omega[1:])
    if n % 2 == 0:
        uh[-1] = 0.0  # drop the unpaired Nyquist mode
    u = np.fft.irfft(uh, n)
    return u - u.mean()


def _orbit_derivatives(orbit: OrbitTable, u: np.ndarray, a: float,
                       rhs: np.ndarray):
    """Exact first derivatives of a scaled orbit function on its own orbit.

    Solves, at every node, the 2x2 system given by the transport identity
    F dP_u + P dQ_u = rhs and the Euler scaling relation
    (P/2) dP_u + (Q/(2k)) dQ_u = a u; the determinant is -H_f.
    """
    k, E = orbit.k, orbit.energy
    P, Q = orbit.P, orbit.Q
    du_dP = (P * a * u - rhs * Q / (2 * k)) / E
    du_dQ = ((P / 2) * rhs + Q * np.abs(Q) ** (2 * k - 2) * a * u) / E
    return du_dP, du_dQ


def solve_poisson(rhs, E_ref: float, k: float, *,
                  rhs_scaling: float,
                  rhs_dP=None,
                  orbit: Optional[OrbitTable] = None,
                  n: int = DEFAULT_NODES,
                  centred_tol: float = 1e-8) -> CenteredSolution:
    """Centred u with du/dt = rhs along the orbit at E_ref.

    rhs may be a callable g(P, Q) or an array of node values; it must be
    centred (orbit mean ~ 0) and homogeneous of degree `rhs_scaling` in H_f.
    Supplying rhs_dP (callable or nodes for the P-derivative of rhs) enables
    the second-derivative profile.
    """
    if orbit is None:
        orbit = reference_orbit(k, n, E_ref)
    rhs_nodes = np.asarray(rhs(orbit.P, orbit.Q) if callable(rhs) else rhs,
                           dtype=float)
    scale = max(float(np.sqrt(np.mean(rhs_nodes ** 2))), 1e-300)
    if abs(float(np.mean(rhs_nodes))) / scale > centred_tol:
        raise ValueError("rhs is not centred on the orbit")

    u = _fft_antiderivative(rhs_nodes, orbit.period)
    a = rhs_scaling + 1 / (2 * k) - 0.5
    du_dP, du_dQ = _orbit_derivatives(orbit, u, a, rhs_nodes)

    d2u = None
    if rhs_dP is not None:
        rhs_dP_nodes = np.asarray(
            rhs_dP(orbit.P, orbit.Q) if callable(rhs_dP) else rhs_dP, dtype=float)
        # v = dP_u satisfies dv/dt = dP_rhs - dQ_u with scaling a - 1/2
        v_rhs = rhs_dP_nodes - du_dQ
        d2u, _ = _orbit_derivatives(orbit, du_dP, a - 0.5, v_rhs)

    return CenteredSolution(k=k, e_ref=E_ref, scaling_exponent=a, orbit=orbit,
                            angle_profile=u, dP_profile=du_dP,
                            dQ_profile=du_dQ, d2P_profile=d2u,
                            rhs_nodes=rhs_nodes)


# ---------------------------------------------------------------------------
# the named solutions and constants

_solution_cache: dict = {}


def _cached(key, maker):
    if key not in _solution_cache:
        _solution_cache[key] = maker()
    return _solution_cache[key]


def _check_k_range(k: float):
    if not (1 < k <= 2):
        raise ValueError("orbit-function constructions support 1 < k <= 2 only")


def build_phi(k: float, n: int = DEFAULT_NODES) -> CenteredSolution:
    """Centred solution of du/dt = Q; scales like H_f^(1/k - 1/2)."""
    _check_k_range(k)

    def maker():
        orbit = reference_orbit(k, n)
        return solve_poisson(lambda P, Q: Q, 1.0, k,
                             rhs_scaling=1 / (2 * k),
                             rhs_dP=lambda P, Q: np.zeros_like(P),
                             orbit=orbit, n=n)

    return _cached(("phi", round(k, 12), n), maker)


def build_psi(k: float, n: int = DEFAULT_NODES) -> CenteredSolution:
    """Centred solution of du/dt = phi; scales like H_f^(3/(2k) - 1)."""
    _check_k_range(k)

    def maker():
        phi = build_phi(k, n)
        return solve_poisson(phi.angle_profile, 1.0, k,
                             rhs_scaling=phi.scaling_exponent,
                             rhs_dP=phi.dP_profile,
                             orbit=phi.orbit, n=n)

    return _cached(("psi", round(k, 12), n), maker)


def build_xi(k: float, n: int = DEFAULT_NODES) -> CenteredSolution:
    """Centred solution of du/dt = phi^2 - <phi^2> H_f^(2/k-1);
    scales like H_f^(5/(2k) - 3/2)."""
    _check_k_range(k)

    def maker():
        phi = build_phi(k, n)
        prof = phi.angle_profile
        c = float(np.mean(prof ** 2))
        # d/dP of (phi^2 - c H_f^(2/k-1)): the energy factor contributes
        # -c (2/k - 1) P on the reference orbit (vanishes only at k = 2)
        rhs_dp = 2 * prof * phi.dP_profile - c * (2 / k - 1) * phi.orbit.P
        return solve_poisson(prof ** 2 - c, 1.0, k,
                             rhs_scaling=2 / k - 1,
                             rhs_dP=rhs_dp,
                             orbit=phi.orbit, n=n)

    return _cached(("xi", round(k, 12), n), maker)


def build_xi_tilde(k: float, n: int = DEFAULT_NODES) -> CenteredSolution:
    """Centred solution of du/dt = P^2 - K(k) H_f; scales like
    H_f^(1/2 + 1/(2k))."""
    _check_k_range(k)

    def maker():
        orbit = reference_orbit(k, n)
        K = k_const(k)
        return solve_poisson(lambda P, Q: P * P - K * (P * P / 2 + np.abs(Q) ** (2 * k) / (2 * k)),
                             1.0, k, rhs_scaling=1.0,
                             rhs_dP=lambda P, Q: (2 - K) * P,
                             orbit=orbit, n=n)

    return _cached(("xi_tilde", round(k, 12), n), maker)


def phi_mean_square(k: float, n: int = DEFAULT_NODES) -> float:
    """Orbit average of phi^2 at energy 1 for general exponent in (1, 2]."""
    phi = build_phi(k, n)
    return float(np.mean(phi.angle_profile ** 2))


def c_hat(n: int = DEFAULT_NODES) -> float:
    """The critical coupling constant at k = 2: orbit average of phi^2.

    Energy independent because phi scales like H_f^0 at k = 2.
    """
    return phi_mean_square(2.0, n)


def solution_to_csv(sol: CenteredSolution, path) -> None:
    """Columns: t, Q, P, u0, dP_u0."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "Q", "P", "u0", "dP_u0"])
        for row in zip(sol.orbit.ts, sol.orbit.Q, sol.orbit.P,
                       sol.angle_profile, sol.dP_profile):
            w.writerow([repr(float(v)) for v in row])


def orbit_to_csv(orbit: OrbitTable, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "Q", "P"])
        for row in zip(orbit.ts, orbit.Q, orbit.P):
            w.writerow([repr(float(v)) for v in row])
