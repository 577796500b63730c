"""Drift test functions as exact jet fields, numerical sign verification of
drift conditions on high-energy shells, the two-function non-existence
report, and the explicit lower-bound machinery for convergence rates.

All sign checks are floating-point verifications on sampled shells, not
certificates; reports say so and carry the sampled evidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .model import (ModelParams, State4, Jet2, jet_coord, jet_const, jet_v1,
                    jet_v1_prime, jet_hamiltonian, jet_power, hamiltonian,
                    generator_of_jet, carre_of_jets, v1_eval, v1_prime,
                    v1_second)
from . import oscillator as osc
from .linear import GramForm, ForceSurrogate, build_matrices, build_gram, \
    default_gamma_tilde, g_eps_profile

FAMILIES = ("tildeH0", "H0_cutoff", "V_k2", "V_klt2", "W_tail",
            "W1_nonexist", "W_exp_frac", "expH", "hatH_smallk",
            "W_smallk", "S_form")


@dataclass(frozen=True)
class TestFunctionSpec:
    family: str
    parameters: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        _validate_family_params(self.family, dict(self.parameters))

    def p(self, name, default=None):
        if name in self.parameters:
            return self.parameters[name]
        if default is None:
            raise ValueError(f"family {self.family} needs parameter {name!r}")
        return default


def _validate_family_params(family: str, p: Dict[str, float]):
    if family == "V_k2" and not (0 < p.get("c", 0.9) < 1):
        raise ValueError("V_k2 requires 0 < c < 1")
    if family == "W1_nonexist" and not (0 < p.get("zeta", 0.05) < 1):
        raise ValueError("W1_nonexist requires zeta in (0, 1)")
    if family in ("V_klt2", "W_exp_frac") and "eta_cutoff" in p:
        if p["eta_cutoff"] <= 0:
            raise ValueError("eta_cutoff must be positive")
    if family == "hatH_smallk" and p.get("delta", 1.0) > 1.0:
        raise ValueError("hatH_smallk requires delta <= 1")


# ---------------------------------------------------------------------------
# cutoff profile: quintic bridge, C^2 at both ends

@dataclass(frozen=True)
class CutoffProfile:
    """Smooth decreasing bridge: 1 on (-inf, 1], 0 on [2, inf)."""

    lo: float = 1.0
    hi: float = 2.0

    def _u(self, s):
        return np.clip((np.asarray(s, dtype=float) - self.lo)
                       / (self.hi - self.lo), 0.0, 1.0)

    def value(self, s):
        u = self._u(s)
        return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)

    def d1(self, s):
        u = self._u(s)
        inside = (u > 0) & (u < 1)
        return np.where(inside, -30.0 * u ** 2 * (1 - u) ** 2, 0.0) / (self.hi - self.lo)

    def d2(self, s):
        u = self._u(s)
        inside = (u > 0) & (u < 1)
        return np.where(inside, -60.0 * u * (1 - u) * (1 - 2 * u), 0.0) \
            / (self.hi - self.lo) ** 2


CUTOFF = CutoffProfile()


def jet_cutoff(u: Jet2, profile: CutoffProfile = CUTOFF) -> Jet2:
    return u.compose(profile.value, profile.d1, profile.d2)


# ---------------------------------------------------------------------------
# jets of scaled orbit functions and of the oscillator energies

def jet_solution(sol: osc.CenteredSolution, x: State4) -> Jet2:
    """Jet of u(p1, q1) for a centred orbit solution u."""
    val, dp, dq, d2p = sol.eval_all(x.p1, x.q1)
    if d2p is None:
        raise ValueError("solution lacks a second-derivative profile")
    return Jet2(value=val, d_p1=dp, d_q1=dq, d2_p1=d2p)


def jet_free_energy(P: Jet2, Q: Jet2, k: float) -> Jet2:
    """H_f(P, Q) = P^2/2 + |Q|^(2k)/(2k) of two jet fields."""
    pot = Q.compose(
        lambda v: np.abs(v) ** (2 * k) / (2 * k),
        lambda v: v * np.abs(v) ** (2 * k - 2),
        lambda v: (2 * k - 1) * np.abs(v) ** (2 * k - 2),
    )
    return 0.5 * (P * P) + pot


def jet_gram(form: GramForm, comps: Sequence[Jet2]) -> Jet2:
    """<y, S y> for jet components y."""
    S = form.S
    n = len(comps)
    out = jet_const(0.0)
    for i in range(n):
        for j in range(n):
            out = out + S[i, j] * (comps[i] * comps[j])
    return out


# ---------------------------------------------------------------------------
# drift forms: how L acts on a built test function

@dataclass
class DriftSample:
    drift: np.ndarray           # L W for plain forms, L W / W for exp forms
    aux: Dict[str, np.ndarray]


class PlainForm:
    """A field W evaluated through its jet; drift = L W.

    If `h_coeff` is nonzero, that multiple of the total energy is carried
    analytically (L H = gamma (T + T_inf) - gamma p0^2), which removes the
    dominant cancellation at very high shells.
    """

    kind = "plain"

    def __init__(self, jet_fn, name: str, h_coeff: float = 0.0,
                 aux_fns: Optional[Dict[str, Callable]] = None):
        self.jet_fn = jet_fn         # (x, params) -> Jet2 of W minus h_coeff*H
        self.name = name
        self.h_coeff = h_coeff
        self.aux_fns = aux_fns or {}

    def jet(self, x, params) -> Jet2:
        j = self.jet_fn(x, params)
        if self.h_coeff:
            j = j + self.h_coeff * jet_hamiltonian(x, params)
        return j

    def evaluate_full(self, x: State4, params: ModelParams):
        """(DriftSample, total jet); the H part's transport enters through
        the exact identity rather than through cancelling jet products."""
        j = self.jet_fn(x, params)
        drift = generator_of_jet(j, x, params)
        if self.h_coeff:
            g, T, Ti = params.gamma, params.t_cold, params.t_hot
            lh = g * (T + Ti) - g * np.asarray(x.p0, dtype=float) ** 2
            drift = drift + self.h_coeff * lh
            j = j + self.h_coeff * jet_hamiltonian(x, params)
        aux = {"value": j.value}
        for name, fn in self.aux_fns.items():
            aux[name] = fn(j, x, params)
        return DriftSample(drift=np.asarray(drift), aux=aux), j

    def evaluate(self, x: State4, params: ModelParams) -> DriftSample:
        return self.evaluate_full(x, params)[0]

    def values(self, x, params):
        return self.jet(x, params).value


class ExpForm:
    """W = exp(phi(V)) checked on the log scale: drift = L W / W
    = phi'(V) L V + (phi''(V) + phi'(V)^2) Gamma(V, V)."""

    kind = "exp"

    def __init__(self, base: PlainForm, phi, dphi, d2phi, name: str):
        self.base = base
        self.phi, self.dphi, self.d2phi = phi, dphi, d2phi
        self.name = name

    def evaluate(self, x: State4, params: ModelParams) -> DriftSample:
        s, j = self.base.evaluate_full(x, params)
        gamma2 = carre_of_jets(j, j, params)
        v = s.aux["value"]
        p1, p2 = self.dphi(v), self.d2phi(v)
        ratio = p1 * s.drift + (p2 + p1 * p1) * gamma2
        aux = dict(s.aux)
        aux["log_w"] = self.phi(v)
        aux["gamma_vv"] = gamma2
        return DriftSample(drift=np.asarray(ratio), aux=aux)

    def log_values(self, x, params):
        return self.phi(self.base.values(x, params))

    def values(self, x, params):
        return np.exp(self.log_values(x, params))


class SumExpForm:
    """W = sum_i exp(phi_i(V_i)); L W / W is the softmax-weighted mix of the
    component log-drifts, stable against overflow."""

    kind = "exp"

    def __init__(self, components: Sequence[ExpForm], name: str):
        self.components = list(components)
        self.name = name

    def evaluate(self, x: State4, params: ModelParams) -> DriftSample:
        gs, ratios = [], []
        for c in self.components:
            s = c.evaluate(x, params)
            gs.append(s.aux["log_w"])
            ratios.append(s.drift)
        G = np.stack(gs)
        R = np.stack(ratios)
        m = G.max(axis=0)
        w = np.exp(G - m)
        tot = w.sum(axis=0)
        ratio = (w * R).sum(axis=0) / tot
        log_w = m + np.log(tot)
        return DriftSample(drift=ratio, aux={"log_w": log_w})

    def log_values(self, x, params):
        gs = [c.phi(c.base.values(x, params)) for c in self.components]
        G = np.stack(gs)
        m = G.max(axis=0)
        return m + np.log(np.exp(G - m).sum(axis=0))

    def values(self, x, params):
        return np.exp(self.log_values(x, params))


# ---------------------------------------------------------------------------
# family builders

@dataclass
class SolutionTables:
    phi: Optional[osc.CenteredSolution] = None
    psi: Optional[osc.CenteredSolution] = None
    xi: Optional[osc.CenteredSolution] = None
    xi_tilde: Optional[osc.CenteredSolution] = None
    gram: Optional[GramForm] = None
    gram4: Optional[GramForm] = None
    g_eps: Optional[ForceSurrogate] = None


def build_tables(spec: TestFunctionSpec, params: ModelParams) -> SolutionTables:
    """Construct exactly the ingredients the family needs."""
    fam = spec.family
    t = SolutionTables()
    k = params.k
    if fam == "tildeH0" and k <= 1:
        return t   # harmonic test mode: all corrections absent
    if fam in ("tildeH0", "H0_cutoff", "V_k2", "V_klt2", "W_tail",
               "W1_nonexist", "W_exp_frac"):
        t.phi = osc.build_phi(k)
    if fam in ("H0_cutoff", "V_k2", "V_klt2", "W_tail", "W1_nonexist",
               "W_exp_frac"):
        t.psi = osc.build_psi(k)
        t.xi = osc.build_xi(k)
    if fam == "W_tail":
        t.xi_tilde = osc.build_xi_tilde(k)
    if fam in ("hatH_smallk", "W_smallk", "S_form"):
        m = build_matrices(params)
        A = m.A_tilde if spec.parameters.get("variant", 0.0) == 4 else m.A
        t_gram = build_gram(A, default_gamma_tilde(A))
        if spec.parameters.get("variant", 0.0) == 4:
            t.gram4 = t_gram
        else:
            t.gram = t_gram
    if fam == "hatH_smallk":
        t.g_eps = g_eps_profile(spec.p("eps", 0.05), k)
    return t


def _jet_ptilde(x, params, phi) -> Jet2:
    if phi is None:   # harmonic test mode: no oscillator correction
        return jet_coord("p0", x)
    return jet_coord("p0", x) - params.alpha * jet_solution(phi, x)


def _jet_veff(x, params) -> Jet2:
    q0 = jet_coord("q0", x)
    return jet_v1("q0", x, params) + (0.5 * params.alpha) * (q0 * q0)


def _jet_veff_prime(x, params) -> Jet2:
    return jet_v1_prime("q0", x, params) + params.alpha * jet_coord("q0", x)


def _jet_tilde_h0(x, params, phi, theta) -> Jet2:
    pt = _jet_ptilde(x, params, phi)
    q0 = jet_coord("q0", x)
    return 0.5 * (pt * pt) + _jet_veff(x, params) + theta * (pt * q0)


def _jet_h0_cutoff(x, params, tables, theta, plateau) -> Jet2:
    a, g = params.alpha, params.gamma
    pt = _jet_ptilde(x, params, tables.phi)
    h0 = _jet_tilde_h0(x, params, tables.phi, theta)
    hf0 = jet_free_energy(pt, jet_coord("q0", x), params.k)
    psi_e = jet_cutoff((1.0 / plateau) * hf0)
    f_theta = a * (g - theta) * pt + a * _jet_veff_prime(x, params)
    corr = (a * a * (g - theta)) * jet_solution(tables.xi, x) \
        + f_theta * jet_solution(tables.psi, x)
    return h0 - corr * psi_e


def _jet_v_klt2(x, params, tables, theta, eta_cutoff) -> Jet2:
    """The k < 2 coercive field, without its analytic H part."""
    a, g = params.alpha, params.gamma
    pt = _jet_ptilde(x, params, tables.phi)
    q0 = jet_coord("q0", x)
    alpha_t = a * g * (a - g * theta / 4.0)
    c_t = a * theta - 2 * a * g + 0.5 * g * g * theta
    e0 = jet_free_energy(pt, q0, params.k) + 1.0
    e1 = jet_free_energy(jet_coord("p1", x), jet_coord("q1", x), params.k) + 1.0
    ratio = e0 * jet_power(e1, -eta_cutoff)
    cut = jet_cutoff(ratio)
    return (theta * (pt * q0)
            + alpha_t * jet_solution(tables.xi, x)
            - c_t * (pt * jet_solution(tables.psi, x) * cut))


def build_test_function(spec: TestFunctionSpec, params: ModelParams,
                        tables: Optional[SolutionTables] = None):
    """Assemble the drift form for a named family.

    Plain (polynomial-scale) families return PlainForm; exponential families
    return ExpForm/SumExpForm and are meant to be checked on the log scale.
    """
    if tables is None:
        tables = build_tables(spec, params)
    form = _build_form(spec, params, tables)
    form._phi_hint = tables.phi     # lets shell samplers align with p-tilde
    form.spec = spec
    return form


_REQUIRED_TABLES = {
    "H0_cutoff": ("phi", "psi", "xi"),
    "V_k2": ("phi", "psi", "xi"),
    "V_klt2": ("phi", "psi", "xi"),
    "W_tail": ("phi", "psi", "xi", "xi_tilde"),
    "W1_nonexist": ("phi", "psi", "xi"),
    "W_exp_frac": ("phi", "psi", "xi"),
    "hatH_smallk": ("gram", "g_eps"),
    "W_smallk": ("gram",),
}


def _build_form(spec: TestFunctionSpec, params: ModelParams,
                tables: SolutionTables):
    fam = spec.family
    P = spec.p
    missing = [name for name in _REQUIRED_TABLES.get(fam, ())
               if getattr(tables, name) is None]
    if fam == "tildeH0" and params.k > 1 and tables.phi is None:
        missing.append("phi")
    if fam == "S_form" and spec.parameters.get("variant", 0.0) == 4 \
            and tables.gram4 is None:
        missing.append("gram4")
    elif fam == "S_form" and spec.parameters.get("variant", 0.0) != 4 \
            and tables.gram is None:
        missing.append("gram")
    if missing:
        raise ValueError(f"family {fam!r} is missing tables: {missing}")

    if fam == "tildeH0":
        theta = P("theta", 0.05)
        return PlainForm(lambda x, p: _jet_tilde_h0(x, p, tables.phi, theta),
                         name=f"tildeH0(theta={theta})")

    if fam == "H0_cutoff":
        theta, plateau = P("theta", 0.05), P("E", 50.0)
        return PlainForm(
            lambda x, p: _jet_h0_cutoff(x, p, tables, theta, plateau),
            name=f"H0_cutoff(theta={theta}, E={plateau})")

    if fam == "V_k2":
        theta, c, plateau = P("theta", -0.05), P("c", 0.9), P("E", 50.0)
        return PlainForm(
            lambda x, p: (-c) * _jet_h0_cutoff(x, p, tables, theta, plateau),
            name=f"V_k2(theta={theta}, c={c}, E={plateau})",
            h_coeff=1.0)

    if fam == "V_klt2":
        theta, eta = P("theta", 0.05), P("eta_cutoff", 2.0)
        return PlainForm(
            lambda x, p: _jet_v_klt2(x, p, tables, theta, eta),
            name=f"V_klt2(theta={theta}, eta={eta})",
            h_coeff=1.0)

    if fam == "W_tail":
        theta, c, plateau = P("theta", -0.05), P("c", 0.9), P("E", 50.0)
        zeta = P("zeta", 0.4)
        ti = params.t_hot

        def jet_fn(x, p):
            v = jet_hamiltonian(x, p) \
                + (-c) * _jet_h0_cutoff(x, p, tables, theta, plateau)
            coef = p.gamma * zeta * (zeta + 1) * ti
            return (jet_power(v, zeta + 1)
                    - coef * (jet_power(v, zeta) * jet_solution(tables.xi_tilde, x)))

        return PlainForm(jet_fn, name=f"W_tail(zeta={zeta})")

    if fam == "W1_nonexist":
        theta, plateau = P("theta", 0.02), P("E", 50.0)
        zeta, delta = P("zeta", 0.02), P("delta", 0.1)

        def jet_fn(x, p):
            h = jet_hamiltonian(x, p)
            h0 = _jet_h0_cutoff(x, p, tables, theta, plateau)
            return jet_power(h, -zeta) * (h - (1.0 + delta) * h0)

        return PlainForm(jet_fn,
                         name=f"W1_nonexist(zeta={zeta}, delta={delta})")

    if fam == "W_exp_frac":
        theta, eta = P("theta", 0.05), P("eta_cutoff", 2.0)
        kap = P("kappa", 2.0 / params.k - 1.0)
        delta = P("delta", 0.05)
        base = PlainForm(
            lambda x, p: _jet_v_klt2(x, p, tables, theta, eta),
            name="V_klt2", h_coeff=1.0)
        return ExpForm(base,
                       phi=lambda v: delta * v ** kap,
                       dphi=lambda v: delta * kap * v ** (kap - 1),
                       d2phi=lambda v: delta * kap * (kap - 1) * v ** (kap - 2),
                       name=f"exp({delta}*V^{kap:.4g})")

    if fam == "expH":
        beta = P("beta", 1.0)
        base = PlainForm(lambda x, p: jet_const(0.0), name="H", h_coeff=1.0)
        return ExpForm(base,
                       phi=lambda v: beta * v,
                       dphi=lambda v: beta * np.ones_like(v),
                       d2phi=lambda v: np.zeros_like(v),
                       name=f"exp({beta}*H)")

    if fam == "hatH_smallk":
        xi_c, beta0 = P("xi", 8.0), P("beta0", 0.02)
        delta = P("delta", 1.0)
        w = P("w", 1.0)   # weight of the Gram form (rescales its unit norm)
        prof = tables.g_eps

        def hat_jet(x, p):
            q = 0.5 * (jet_coord("q0", x) - jet_coord("q1", x))
            comps = [q, jet_coord("p0", x), jet_coord("p1", x)]
            sy = jet_gram(tables.gram, comps)
            g0 = _jet_g_eps(prof, "q0", x)
            g1 = _jet_g_eps(prof, "q1", x)
            psum = jet_coord("p0", x) + jet_coord("p1", x)
            return w * sy - xi_c * (psum * (g0 + g1))

        base = PlainForm(hat_jet, name="hatH", h_coeff=1.0)
        return ExpForm(base,
                       phi=lambda v: beta0 * v ** delta,
                       dphi=lambda v: beta0 * delta * v ** (delta - 1),
                       d2phi=lambda v: beta0 * delta * (delta - 1) * v ** (delta - 2),
                       name=f"exp({beta0}*hatH^{delta})")

    if fam == "W_smallk":
        beta0, lam = P("beta0", 0.05), P("lambda", 1.0)

        def sy_jet(x, p):
            q = 0.5 * (jet_coord("q0", x) - jet_coord("q1", x))
            return jet_gram(tables.gram, [q, jet_coord("p0", x),
                                          jet_coord("p1", x)])

        def v1qhat_jet(x, p):
            qhat = jet_coord("q0", x) \
                + (1.0 / p.gamma) * (jet_coord("p0", x) + jet_coord("p1", x))
            return qhat.compose(lambda v: v1_eval(v, p),
                                lambda v: v1_prime(v, p),
                                lambda v: v1_second(v, p))

        lin = lambda c: (lambda v: c * v, lambda v: c * np.ones_like(v),
                         lambda v: np.zeros_like(v))
        pa, da, d2a = lin(beta0)
        pb, db, d2b = lin(beta0 * lam)
        ea = ExpForm(PlainForm(sy_jet, "ySy"), pa, da, d2a, "exp(b0*ySy)")
        eb = ExpForm(PlainForm(v1qhat_jet, "V1(Qhat)"), pb, db, d2b,
                     "exp(b0*lam*V1(Qhat))")
        return SumExpForm([ea, eb],
                          name=f"W_smallk(beta0={beta0}, lambda={lam})")

    if fam == "S_form":
        if spec.parameters.get("variant", 0.0) == 4:
            def jet4(x, p):
                comps = [jet_coord(n, x) for n in ("q0", "q1", "p0", "p1")]
                return jet_gram(tables.gram4, comps)
            return PlainForm(jet4, name="yS4y")

        def jet3(x, p):
            q = 0.5 * (jet_coord("q0", x) - jet_coord("q1", x))
            return jet_gram(tables.gram, [q, jet_coord("p0", x),
                                          jet_coord("p1", x)])
        return PlainForm(jet3, name="ySy")

    raise ValueError(f"unhandled family {fam!r}")


def _jet_g_eps(prof: ForceSurrogate, name: str, x: State4) -> Jet2:
    q = np.asarray(getattr(x, name), dtype=float)
    j = Jet2(value=prof.g(q))
    setattr(j, "d_" + name, prof.g_prime(q))
    return j


# ---------------------------------------------------------------------------
# shell sampling

@dataclass(frozen=True)
class ShellSpec:
    """Sampling band H in [r, hi_ratio*r]; oscillator energies are drawn
    log-uniformly so both энергы axes (one oscillator hot, the other cold)
    are exercised.  e1_floor keeps the undamped oscillator out of the small
    ball where scaled orbit functions are untrusted."""

    r0: float = 100.0
    hi_ratio: float = 2.0
    e1_floor: float = 2.0
    e0_floor: float = 1e-2
    max_doublings: int = 12
    use_ptilde: bool = True

    def __post_init__(self):
        if self.r0 <= 0 or self.hi_ratio <= 1:
            raise ValueError("need r0 > 0 and hi_ratio > 1")


def _free_energy_state(E, u, k, orbit: Optional[osc.OrbitTable]):
    """Map (energy, angle fraction) to (P, Q) on the free-oscillator shell."""
    if orbit is not None:
        P1, Q1 = orbit.state_at_fraction(u)
        return np.sqrt(E) * P1, E ** (1 / (2 * k)) * Q1
    # kinetic-split parametrization (used for k <= 1, no orbit tables)
    phi = 2 * np.pi * u
    P = np.sqrt(2 * E) * np.cos(phi)
    Q = np.sign(np.sin(phi)) * (2 * k * E * np.sin(phi) ** 2) ** (1 / (2 * k))
    return P, Q


def _v1_level(target, params):
    """|q| with V1(q) = target (regularized closed form / pure power)."""
    target = np.asarray(target, dtype=float)
    k = params.k
    if params.smoothing == REGULARIZED_NAME:
        return np.sqrt(np.maximum((2 * k * target + 1.0) ** (1 / k) - 1.0, 0.0))
    return (2 * k * target) ** (1 / (2 * k))


REGULARIZED_NAME = "regularized"


def _center_of_mass_batch(params, r_hi, m, rng):
    """States with both positions large and aligned and small fast variables:
    the dangerous direction of the weak-pinning regime."""
    h_pot = np.exp(rng.uniform(0.0, math.log(r_hi), m))
    Q = _v1_level(h_pot / 2.0, params) * rng.choice([-1.0, 1.0], m)
    spread = np.exp(rng.uniform(math.log(1e-2), math.log(math.sqrt(r_hi)), m))
    q = spread * rng.standard_normal(m) * 0.5
    p0 = spread * rng.standard_normal(m)
    p1 = spread * rng.standard_normal(m)
    return Q + q, Q - q, p0, p1


def sample_shell(params: ModelParams, r_lo: float, r_hi: float, n: int,
                 rng: np.random.Generator, shell: ShellSpec,
                 phi: Optional[osc.CenteredSolution] = None,
                 max_batches: int = 400) -> State4:
    """Draw n states with H in [r_lo, r_hi].

    Oscillator energies are drawn log-uniformly and independently, which
    exercises both single-oscillator axes.  For k <= 1 half the draws instead
    put the energy into the aligned center of mass with small fast variables.
    """
    k = params.k
    orbit = osc.reference_orbit(k) if k > 1 else None
    keep: List[np.ndarray] = []
    kept = 0
    for _ in range(max_batches):
        m = 4 * n
        e0 = np.exp(rng.uniform(math.log(shell.e0_floor), math.log(r_hi), m))
        e1 = np.exp(rng.uniform(math.log(shell.e1_floor), math.log(r_hi), m))
        u0, u1 = rng.uniform(0, 1, m), rng.uniform(0, 1, m)
        pt, q0 = _free_energy_state(e0, u0, k, orbit)
        p1, q1 = _free_energy_state(e1, u1, k, orbit)
        if phi is not None and shell.use_ptilde:
            p0 = pt + params.alpha * phi.value(p1, q1)
        else:
            p0 = pt
        if k <= 1:
            qc0, qc1, pc0, pc1 = _center_of_mass_batch(params, r_hi, m, rng)
            half = m // 2
            q0[half:], q1[half:] = qc0[half:], qc1[half:]
            p0[half:], p1[half:] = pc0[half:], pc1[half:]
        x = State4(q0=q0, q1=q1, p0=p0, p1=p1)
        h = hamiltonian(x, params)
        ok = (h >= r_lo) & (h <= r_hi)
        if np.any(ok):
            keep.append(np.stack([q0[ok], q1[ok], p0[ok], p1[ok]]))
            kept += int(ok.sum())
        if kept >= n:
            break
    if kept < n:
        raise RuntimeError(
            f"shell sampler could not reach {n} states in [{r_lo}, {r_hi}]")
    cat = np.concatenate(keep, axis=1)[:, :n]
    return State4(q0=cat[0], q1=cat[1], p0=cat[2], p1=cat[3])


# ---------------------------------------------------------------------------
# sign verification with radius doubling

@dataclass
class Predicate:
    """Margins >= 0 mean the drift condition holds at that state."""

    name: str
    margin_fn: Callable[[np.ndarray, Dict[str, np.ndarray], State4, ModelParams],
                        np.ndarray]

    def margins(self, drift, aux, states, params):
        return np.asarray(self.margin_fn(drift, aux, states, params))


def drift_below(bound: float, name: Optional[str] = None) -> Predicate:
    return Predicate(name or f"drift <= {bound}",
                     lambda d, a, s, p: bound - d)


def drift_above(bound: float, name: Optional[str] = None) -> Predicate:
    return Predicate(name or f"drift >= {bound}",
                     lambda d, a, s, p: d - bound)


def drift_below_scaled(coeff: float, aux_key: str, exponent: float,
                       name: Optional[str] = None) -> Predicate:
    """drift <= -coeff * aux[aux_key]^exponent (aux must be positive)."""

    def fn(d, a, s, p):
        return -coeff * a[aux_key] ** exponent - d

    return Predicate(name or f"drift <= -{coeff}*{aux_key}^{exponent:.4g}", fn)


@dataclass
class ShellResult:
    r_lo: float
    r_hi: float
    samples: int
    violations: int
    worst_margin: float
    margin_quantiles: Dict[str, float]
    verdict: bool


@dataclass
class VerificationReport:
    field: str
    predicate: str
    parameters: Dict[str, float]
    seed: int
    n_per_shell: int
    violation_threshold: float
    shells: List[ShellResult]
    stabilized: bool
    stabilization_radius: Optional[float]
    final_verdict: bool
    note: str = ("floating-point verification on sampled shells; "
                 "not an interval-arithmetic certificate")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def verify_sign(form, predicate: Predicate, shell: ShellSpec, n: int,
                seed: int, params: ModelParams,
                phi: Optional[osc.CenteredSolution] = None,
                violation_threshold: float = 1e-3,
                stable_runs: int = 3,
                parameters: Optional[Dict] = None) -> VerificationReport:
    """Evaluate the drift of `form` on energy shells and report sign
    violations, doubling the radius until the verdict repeats stable_runs
    times in a row."""
    if n < 1000:
        raise ValueError("need at least 1000 samples per shell")
    if phi is None and params.k > 1:
        phi = getattr(form, "_phi_hint", None)
    shells: List[ShellResult] = []
    verdicts: List[bool] = []
    r = shell.r0
    stab_radius = None
    for d in range(shell.max_doublings + 1):
        rng = np.random.default_rng(np.random.SeedSequence((seed, d)))
        states = sample_shell(params, r, shell.hi_ratio * r, n, rng, shell,
                              phi=phi)
        s = form.evaluate(states, params)
        if not np.all(np.isfinite(s.drift)):
            raise RuntimeError(
                f"non-finite drift at shell [{r}, {shell.hi_ratio * r}]")
        margins = predicate.margins(s.drift, s.aux, states, params)
        viol = int(np.sum(margins < 0))
        qs = np.quantile(margins, [0.0, 0.01, 0.25, 0.5, 0.75, 1.0])
        res = ShellResult(
            r_lo=r, r_hi=shell.hi_ratio * r, samples=n, violations=viol,
            worst_margin=float(margins.min()),
            margin_quantiles={"min": float(qs[0]), "q01": float(qs[1]),
                              "q25": float(qs[2]), "q50": float(qs[3]),
                              "q75": float(qs[4]), "max": float(qs[5])},
            verdict=(viol / n) < violation_threshold)
        shells.append(res)
        verdicts.append(res.verdict)
        if len(verdicts) >= stable_runs and \
                len(set(verdicts[-stable_runs:])) == 1:
            stab_radius = shells[-stable_runs].r_lo
            break
        r *= 2.0
    stabilized = stab_radius is not None
    final = verdicts[-1] if stabilized else False
    if parameters is None:
        spec = getattr(form, "spec", None)
        parameters = dict(spec.parameters) if spec is not None else {}
    return VerificationReport(
        field=getattr(form, "name", str(form)), predicate=predicate.name,
        parameters=parameters, seed=seed, n_per_shell=n,
        violation_threshold=violation_threshold, shells=shells,
        stabilized=stabilized, stabilization_radius=stab_radius,
        final_verdict=final)


# ---------------------------------------------------------------------------
# two-function non-existence report

@dataclass
class HypothesisResult:
    name: str
    passed: bool
    evidence: Dict


@dataclass
class WonhamReport:
    hypotheses: List[HypothesisResult]
    passed: bool
    shells_checked: List[Tuple[float, float]]

    def to_dict(self):
        return asdict(self)


def wonham_report(w1_form, w2_form, f_bound: Callable, params: ModelParams,
                  shell: ShellSpec, n: int = 4000, seed: int = 0,
                  n_shells: int = 6,
                  violation_threshold: float = 1e-3) -> WonhamReport:
    """Check the four hypotheses of the two-function non-existence criterion
    on a ladder of doubling shells.

    f_bound(states, params) is the integrability weight F evaluated on
    states (plain scale; use exp-kind forms' ratio checks for exponential
    weights).
    """
    log_mode = getattr(w1_form, "kind", "plain") == "exp"
    phi = getattr(w1_form, "_phi_hint", None)
    ladder = [shell.r0 * 2 ** i for i in range(n_shells)]
    sup_w1, inf_w2, shells_checked = [], [], []
    viol_w1 = viol_w2 = 0
    samples_last = 0
    # sup/inf comparisons live on thin level sets H ~ R; the drift checks use
    # the full band
    thin = ShellSpec(r0=shell.r0, hi_ratio=1.05, e1_floor=shell.e1_floor,
                     e0_floor=shell.e0_floor, use_ptilde=shell.use_ptilde)
    for i, r in enumerate(ladder):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i, 77)))
        level = sample_shell(params, r, 1.05 * r, n, rng, thin, phi=phi)
        shells_checked.append((r, shell.hi_ratio * r))
        if log_mode:
            sup_w1.append(float(np.max(w1_form.log_values(level, params))))
            inf_w2.append(float(np.min(w2_form.log_values(level, params))))
        else:
            sup_w1.append(float(np.max(w1_form.values(level, params))))
            inf_w2.append(float(np.min(w2_form.values(level, params))))
        if i >= n_shells - 2:
            states = sample_shell(params, r, shell.hi_ratio * r, n, rng,
                                  shell, phi=phi)
            s1 = w1_form.evaluate(states, params)
            s2 = w2_form.evaluate(states, params)
            viol_w1 += int(np.sum(s1.drift < 0))
            if getattr(w2_form, "kind", "plain") == "exp":
                # L W2 <= F on the log scale: ratio <= F/W2
                logw2 = s2.aux["log_w"]
                fb = f_bound(states, params)
                with np.errstate(divide="ignore"):
                    lhs = np.where(s2.drift > 0,
                                   np.log(np.maximum(s2.drift, 1e-300)) + logw2,
                                   -np.inf)
                viol_w2 += int(np.sum(lhs > fb))
            else:
                viol_w2 += int(np.sum(s2.drift > f_bound(states, params)))
            samples_last += n

    sup_w1 = np.array(sup_w1)
    inf_w2 = np.array(inf_w2)
    if log_mode:
        growth_ok = bool(np.all(np.diff(sup_w1) > 0)
                         and sup_w1[-1] - sup_w1[0] > math.log(10.0))
    else:
        growth_ok = bool(np.all(np.diff(sup_w1) > 0) and sup_w1[-1] > 0
                         and sup_w1[-1] > 10 * sup_w1[0])
    h1 = HypothesisResult(
        "W1 grows along a probe direction", growth_ok,
        {"sup_w1_per_shell": sup_w1.tolist(), "log_scale": log_mode})

    pos_ok = bool(np.all(inf_w2 > 0)) if not log_mode else True
    h2 = HypothesisResult("W2 positive on large shells", pos_ok,
                          {"inf_w2_per_shell": inf_w2.tolist()})

    logr = np.log(np.array(ladder))
    if log_mode:
        ratios = sup_w1 - inf_w2
        dec_ok = bool(np.all(np.diff(ratios) < 0))
        slope = float(np.polyfit(logr, ratios, 1)[0])
    else:
        ratios = sup_w1 / inf_w2
        # require a monotone decline consistent with a negative power of R
        slope = float(np.polyfit(logr, np.log(np.maximum(ratios, 1e-300)),
                                 1)[0])
        dec_ok = bool(np.all(np.diff(ratios) < 0) and slope < -0.01)
    h3 = HypothesisResult("sup W1 / inf W2 decreases with the shell radius",
                          dec_ok, {"ratios": np.asarray(ratios).tolist(),
                                   "fit_slope": slope,
                                   "log_scale": log_mode})

    frac1 = viol_w1 / samples_last
    frac2 = viol_w2 / samples_last
    h4 = HypothesisResult(
        "L W1 >= 0 and L W2 <= F on the outer shells",
        bool(frac1 < violation_threshold and frac2 < violation_threshold),
        {"w1_violation_fraction": frac1, "w2_violation_fraction": frac2})

    hyps = [h1, h2, h3, h4]
    return WonhamReport(hypotheses=hyps,
                        passed=all(h.passed for h in hyps),
                        shells_checked=shells_checked)


# ---------------------------------------------------------------------------
# explicit convergence lower bound and moment envelopes

def lower_bound_tv(f: Callable[[np.ndarray], np.ndarray],
                   g: Callable[[float, float], float],
                   x0_value: float, t: float,
                   grid: Optional[np.ndarray] = None,
                   tol: float = 1e-10) -> float:
    """Half of f at the unique root of y f(y) = 2 g(x0, t).

    f must map [1, inf) into [0, 1] with y f(y) increasing to infinity
    (checked on a grid), and g must be increasing in its second argument.
    """
    if grid is None:
        grid = np.geomspace(1.0, 1e6, 400)
    fy = np.asarray(f(grid), dtype=float)
    if np.any(fy < -1e-12) or np.any(fy > 1 + 1e-12):
        raise ValueError("f must take values in [0, 1]")
    yfy = grid * fy
    if np.any(np.diff(yfy) <= 0):
        raise ValueError("y * f(y) is not strictly increasing on the grid")
    for frac in (0.25, 0.5, 0.75, 1.0):
        if g(x0_value, frac * t) > g(x0_value, t) + 1e-12:
            raise ValueError("g is not increasing in t")

    target = 2.0 * g(x0_value, t)
    lo, hi = 1.0, 2.0
    for _ in range(400):
        if hi * float(f(np.array([hi]))[0]) >= target:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise ValueError("could not bracket the root of y f(y) = 2 g")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mid * float(f(np.array([mid]))[0]) < target:
            lo = mid
        else:
            hi = mid
    y = 0.5 * (lo + hi)
    return 0.5 * float(f(np.array([y]))[0])


@dataclass
class MomentEnvelope:
    """Closed-form growth envelope for energy moments.

    polynomial variant: E H^a (X_t) <= (H(x0) + C_a t)^a with
    C_a = gamma (T + T_inf) max(1, 2a - 1).
    exponential variant: E exp(a H^kappa) <= exp(a H^kappa(x0)
    + C_k (1+t)^(kappa/(1-kappa))), kappa in (0, 1/2].
    """

    variant: str
    exponent: float
    constant: float

    def __call__(self, x0_h: float, t: float) -> float:
        if self.variant == "polynomial":
            return (x0_h + self.constant * t) ** self.exponent
        a = self.exponent
        kap = self.kappa
        return math.exp(a * x0_h ** kap
                        + self.constant * (1.0 + t) ** (kap / (1 - kap)))

    kappa: float = 0.0


def validate_moment_envelope(env: MomentEnvelope, times, means, sems,
                             x0_h: float, n_sigma: float = 3.0):
    """Compare recorded ensemble moments against the envelope.

    Returns (ok, margins); margins are envelope minus (mean + n_sigma sem),
    so every entry nonnegative means the empirical moments sit under the
    bound at the requested confidence band.
    """
    times = np.asarray(times, dtype=float)
    bound = np.array([env(x0_h, t) for t in times])
    margins = bound - (np.asarray(means) + n_sigma * np.asarray(sems))
    return bool(np.all(margins >= 0)), margins


def moment_growth_bound(alpha_or_kappa: float, params: ModelParams,
                        variant: str = "polynomial",
                        coeff: float = 1.0) -> MomentEnvelope:
    """Envelope g(H(x0), t) bounding energy moments along the flow.

    polynomial: exponent alpha_or_kappa, constant from the differential
    inequality d/dt E H^a <= C (E H^a)^(1 - 1/a).
    exponential: alpha_or_kappa is kappa in (0, 1/2]; coeff is the
    coefficient inside exp(coeff * H^kappa).
    """
    g, T, Ti = params.gamma, params.t_cold, params.t_hot
    rate = g * (T + Ti)
    if variant == "polynomial":
        a = alpha_or_kappa
        if a <= 0:
            raise ValueError("moment exponent must be positive")
        return MomentEnvelope(variant="polynomial", exponent=a,
                              constant=rate * max(1.0, 2 * a - 1.0))
    if variant == "exponential":
        kap = alpha_or_kappa
        if not (0 < kap <= 0.5):
            raise ValueError("kappa must lie in (0, 1/2]")
        a = coeff
        # from L e^{aH^k} <= C f(e^{aH^k}) with f(x) = x (log x)^(2 - 1/k)
        c_gen = 2.0 * rate * kap ** 2 * a ** (1.0 / kap)
        c_k = ((1.0 / kap - 1.0) * c_gen) ** (kap / (1.0 - kap))
        env = MomentEnvelope(variant="exponential", exponent=a, constant=c_k)
        env.kappa = kap
        return env
    raise ValueError(f"unknown variant {variant!r}")
