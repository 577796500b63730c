"""Small-stiffness (k <= 1) machinery: drift matrices in reduced coordinates,
the exponentially weighted Gram form S, the homogenization corrector for the
center of mass, and the bounded force surrogate used when the pinning force
itself is bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, v1_prime, v1_second


@dataclass(frozen=True)
class DriftMatrices:
    """Linear drift/noise pair in y = (q, p0, p1) with q = (q0 - q1)/2,
    plus the 4-D variant in (q0, q1, p0, p1) used at k = 1 where the pinning
    force is itself asymptotically linear."""

    A: np.ndarray
    B: np.ndarray
    A_tilde: np.ndarray
    B_tilde: np.ndarray

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist()
                for name in ("A", "B", "A_tilde", "B_tilde")}


def build_matrices(params: ModelParams) -> DriftMatrices:
    a, g = params.alpha, params.gamma
    A = np.array([[0.0, 0.5, -0.5],
                  [-2 * a, -g, 0.0],
                  [2 * a, 0.0, 0.0]])
    B = math.sqrt(2 * g) * np.array([[0.0, 0.0],
                                     [math.sqrt(params.t_cold), 0.0],
                                     [0.0, math.sqrt(params.t_hot)]])
    # at k = 1 the unit pinning slope joins the coupling in the linear part
    A_t = np.array([[0.0, 0.0, 1.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0],
                    [-(a + 1.0), a, -g, 0.0],
                    [a, -(a + 1.0), 0.0, 0.0]])
    B_t = math.sqrt(2 * g) * np.array([[0.0, 0.0],
                                       [0.0, 0.0],
                                       [math.sqrt(params.t_cold), 0.0],
                                       [0.0, math.sqrt(params.t_hot)]])
    return DriftMatrices(A=A, B=B, A_tilde=A_t, B_tilde=B_t)


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.max(np.real(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class GramForm:
    S: np.ndarray
    gamma_tilde: float

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.einsum("...i,ij,...j->...", y, self.S, y)

    def to_dict(self) -> dict:
        return {"S": self.S.tolist(), "gamma_tilde": self.gamma_tilde,
                "eigenvalues": np.linalg.eigvalsh(self.S).tolist()}


def _sym_index(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def solve_weighted_lyapunov(A: np.ndarray, gamma_tilde: float,
                            order=None) -> np.ndarray:
    """S with A^T S + S A + gamma_tilde S = -I via a dense solve on the
    symmetric unknowns.  `order` permutes the unknowns (used to check
    solver-order independence)."""
    n = A.shape[0]
    pairs = _sym_index(n)
    if order is not None:
        pairs = [pairs[i] for i in order]
    m = len(pairs)
    M = np.zeros((m, m))
    rhs = np.zeros(m)
    col_of = {p: c for c, p in enumerate(pairs)}

    def col(i, j):
        return col_of[(i, j) if i <= j else (j, i)]

    for r, (i, j) in enumerate(pairs):
        # equation (i, j) of A^T S + S A + g S = -I
        for l in range(n):
            M[r, col(l, j)] += A[l, i]
            M[r, col(i, l)] += A[l, j]
        M[r, col(i, j)] += gamma_tilde
        rhs[r] = -1.0 if i == j else 0.0
    sol = np.linalg.solve(M, rhs)
    S = np.zeros((n, n))
    for c, (i, j) in enumerate(pairs):
        S[i, j] = sol[c]
        S[j, i] = sol[c]
    return S


def build_gram(A: np.ndarray, gamma_tilde: float, order=None) -> GramForm:
    """Gram form of the exponentially weighted controllability-type integral.

    Requires the spectral abscissa of A to lie below -gamma_tilde/2 so the
    defining integral converges.
    """
    absc = spectral_abscissa(A)
    if not absc < -gamma_tilde / 2:
        raise ValueError(
            f"integral diverges: spectral abscissa {absc:.6g} is not below "
            f"-gamma_tilde/2 = {-gamma_tilde / 2:.6g}")
    S = solve_weighted_lyapunov(A, gamma_tilde, order=order)
    eig = np.linalg.eigvalsh(S)
    if eig.min() <= 0:
        raise ValueError("computed Gram form is not positive definite")
    return GramForm(S=S, gamma_tilde=gamma_tilde)


def default_gamma_tilde(A: np.ndarray) -> float:
    """0.9 of the largest admissible decay rate 2|spectral abscissa|."""
    return 0.9 * 2.0 * abs(spectral_abscissa(A))


def corrector(state, params: ModelParams):
    """Corrected center of mass and the fast coordinates.

    Returns (Q_hat, y) with Q = (q0+q1)/2, y = (q, p0, p1), and
    Q_hat = Q + <a, y> where a = (1, 1/gamma, 1/gamma) solves the associated
    Poisson problem for the frozen-Q linear generator.
    """
    g = params.gamma
    q0, q1 = np.asarray(state.q0, dtype=float), np.asarray(state.q1, dtype=float)
    p0, p1 = np.asarray(state.p0, dtype=float), np.asarray(state.p1, dtype=float)
    Q = 0.5 * (q0 + q1)
    y = np.stack([0.5 * (q0 - q1), p0, p1], axis=-1)
    q_hat = Q + y[..., 0] + (y[..., 1] + y[..., 2]) / g
    return q_hat, y


def corrector_weights(params: ModelParams) -> np.ndarray:
    """The (1, 1/gamma, 1/gamma) weights defining the corrected variable."""
    return np.array([1.0, 1.0 / params.gamma, 1.0 / params.gamma])


# ---------------------------------------------------------------------------
# bounded force surrogate

def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _smoothstep_d(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30.0 * u ** 2 * (1.0 - u) ** 2, 0.0)


@dataclass(frozen=True)
class ForceSurrogate:
    """G with G = -V1' far out, linear near 0, quintic blend between;
    satisfies G V1' <= C - |V1'|^2 and |G|^2 <= C + |V1'|^2 with sup|G'| <= eps."""

    eps: float
    k: float
    r_eps: float
    c_eps: float
    params: ModelParams

    def g(self, q):
        q = np.asarray(q, dtype=float)
        aq = np.abs(q)
        inner = q * self.r_eps ** (2 * self.k - 2)
        outer = -v1_prime(q, self.params)
        w = _smoothstep((aq - self.r_eps) / self.r_eps)
        return (1.0 - w) * inner + w * outer

    def g_prime(self, q):
        q = np.asarray(q, dtype=float)
        aq = np.abs(q)
        inner = q * self.r_eps ** (2 * self.k - 2)
        d_inner = self.r_eps ** (2 * self.k - 2) * np.ones_like(q)
        outer = -v1_prime(q, self.params)
        d_outer = -v1_second(q, self.params)
        u = (aq - self.r_eps) / self.r_eps
        w = _smoothstep(u)
        dw = _smoothstep_d(u) / self.r_eps * np.sign(q)
        return (1.0 - w) * d_inner + w * d_outer + dw * (outer - inner)


def g_eps_profile(eps: float, k: float, max_doublings: int = 40,
                  grid_points: int = 100_000) -> ForceSurrogate:
    """Search the smallest power-of-two radius whose surrogate has measured
    sup |G'| <= eps, then report the realized constant C_eps from a scan."""
    if not (0.5 < k < 1):
        raise ValueError("force surrogate is defined for 1/2 < k < 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = ModelParams(alpha=1.0, gamma=1.0, t_cold=1.0, t_hot=1.0,
                         k=k, smoothing="regularized")
    r = 1.0
    for _ in range(max_doublings):
        prof = ForceSurrogate(eps=eps, k=k, r_eps=r, c_eps=0.0, params=params)
        q = np.linspace(-4 * r, 4 * r, grid_points)
        sup_d = float(np.max(np.abs(prof.g_prime(q))))
        # outside 4 r the slope |V1''| only decays; the scan window suffices
        if sup_d <= eps:
            # both defining inequalities are equalities-at-zero for |q| >= 2r,
            # so their maxima live on [-2r, 2r]; scan slightly beyond
            qs = np.linspace(-2.5 * r, 2.5 * r, grid_points)
            gv = prof.g(qs) * v1_prime(qs, params)
            v2 = v1_prime(qs, params) ** 2
            c1 = float(np.max(gv + v2))
            c2 = float(np.max(prof.g(qs) ** 2 - v2))
            c_eps = max(c1, c2, 0.0) * (1.0 + 1e-4) + 1e-12
            return ForceSurrogate(eps=eps, k=k, r_eps=r, c_eps=c_eps,
                                  params=params)
        r *= 2.0
    raise ValueError(
        f"no radius up to 2^{max_doublings} achieves sup|G'| <= {eps} "
        f"for k = {k} (last sup = {sup_d:.3g})")
