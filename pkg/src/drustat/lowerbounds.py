"""Adversarial density pairs behind the minimax lower bounds, with numeric checks.

Each construction perturbs base nuisance surfaces (an inverse propensity
omega >= 1 and an outcome regression mu in (0, 1) on the unit cube) by
sign-indexed bump functions supported on k disjoint sub-cubes.  The two
resulting distributions p and q are close in the nuisance norms yet have
counterfactual means psi = integral of omega * mu * g separated by a known
closed-form gap.  :func:`verify_pair` recomputes the norms, density mass and
psi gap by quadrature and compares them against the closed forms and
budgets.

Four variants are provided:

``pure``
    both omega surfaces are fluctuated by eps and the mu surfaces differ by
    a delta-scaled bump; requires eps <= delta; gap = g * eps * delta *
    integral(sum B_j^2 / omega).
``hybrid-omega``
    only omega is fluctuated (amplitude eps); gap = -g * eps^2 *
    integral(sum B_j^2 / omega^2).
``hybrid-mu``
    only mu is fluctuated (amplitude delta) around the base mu, with
    omega = 1/mu; gap = -g * delta^2 * integral(mu^2 sum B_j^2).
``hybrid-both``
    both are fluctuated with the common amplitude gamma = min(eps, delta);
    gap = g * gamma^2 * integral(sum B_j^2 / omega).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import (
    BAD_INPUT,
    EPS_GT_DELTA,
    INVALID_DENSITY,
    K_TOO_LARGE,
    ValidationError,
)

VARIANTS = ("pure", "hybrid-omega", "hybrid-mu", "hybrid-both")

SurfaceFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BumpBasis:
    """k disjoint scaled translates of a mean-zero, unit-energy bump.

    The base bump B(u) = prod_l 2 sin(4 pi u_l) on [0, 1/2]^d satisfies
    integral B = 0 and integral B^2 = 1 exactly.  Component j is
    B_j(x) = B(k^{1/d} (x - m_j)) on a cube of side k^{-1/d}/2 anchored at
    corner m_j, so integral B_j^2 = 1/k.
    """

    k: int
    d: int
    corners: np.ndarray  # (k, d) bottom-left corners inside [0, 1]^d

    @property
    def scale(self) -> float:
        return self.k ** (1.0 / self.d)

    @property
    def side(self) -> float:
        return 0.5 / self.scale

    def bump(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        inside = np.all((u >= 0.0) & (u <= 0.5), axis=-1)
        vals = np.prod(2.0 * np.sin(4.0 * np.pi * u), axis=-1)
        return np.where(inside, vals, 0.0)

    def bump_component(self, j: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.bump(self.scale * (x - self.corners[j]))

    def fluctuation(self, lam: np.ndarray, x: np.ndarray) -> np.ndarray:
        """sum_j lam_j B_j(x); the cubes are disjoint so at most one term is live."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for j in range(self.k):
            out += lam[j] * self.bump_component(j, x)
        return out

    def sum_sq(self, x: np.ndarray) -> np.ndarray:
        """sum_j B_j(x)^2, the pointwise energy of the fluctuation."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for j in range(self.k):
            out += self.bump_component(j, x) ** 2
        return out


def make_bump_basis(k: int, d: int) -> BumpBasis:
    """Place k disjoint bump cubes on a regular lattice inside [0, 1]^d."""
    if k < 1:
        raise ValidationError(K_TOO_LARGE, "need k >= 1")
    if d < 1:
        raise ValidationError(BAD_INPUT, "need d >= 1")
    if k > 4096:
        raise ValidationError(K_TOO_LARGE, f"k={k} cubes is unreasonably many")
    g = math.ceil(k ** (1.0 / d))
    # float roundoff can push k**(1/d) just above an exact integer root
    if (g - 1) ** d >= k:
        g -= 1
    spacing = 1.0 / g
    lattice = [np.arange(g) * spacing for _ in range(d)]
    mesh = np.meshgrid(*lattice, indexing="ij")
    corners = np.column_stack([m.ravel() for m in mesh])[:k]
    basis = BumpBasis(k=k, d=d, corners=corners)
    if basis.side > spacing + 1e-12 or np.any(corners + basis.side > 1.0 + 1e-12):
        raise ValidationError(K_TOO_LARGE, f"{k} cubes do not fit disjointly in [0,1]^{d}")
    return basis


def _as_surface(value: Union[float, SurfaceFn]) -> SurfaceFn:
    if callable(value):
        return value
    const = float(value)
    return lambda x: np.full(np.atleast_2d(x).shape[0], const)


@dataclass(frozen=True)
class ConstructionPair:
    """The two distributions (p, q) of one lower-bound construction.

    The X-density under both is f = omega_surface * g with the constant g
    chosen so f integrates to one; ``omega_p``/``mu_p`` etc. evaluate the
    nuisance surfaces.
    """

    variant: str
    eps: float
    delta: float
    gamma: float
    basis: BumpBasis
    lam: np.ndarray
    omega_base: SurfaceFn
    mu_base: SurfaceFn
    g: float

    def _fluct(self, x: np.ndarray) -> np.ndarray:
        return self.basis.fluctuation(self.lam, x)

    def omega_p(self, x: np.ndarray) -> np.ndarray:
        if self.variant == "pure":
            return self.omega_base(x) + self.eps * self._fluct(x)
        if self.variant == "hybrid-omega":
            return self.omega_base(x)
        if self.variant == "hybrid-mu":
            return 1.0 / self.mu_base(x)
        return self.omega_base(x) + self.gamma * self._fluct(x)

    def omega_q(self, x: np.ndarray) -> np.ndarray:
        if self.variant == "pure":
            return self.omega_base(x) + self.eps * self._fluct(x)
        if self.variant == "hybrid-omega":
            return self.omega_base(x) + self.eps * self._fluct(x)
        if self.variant == "hybrid-mu":
            return 1.0 / self.mu_base(x) + self.delta * self._fluct(x)
        return self.omega_base(x) + self.gamma * self._fluct(x)

    def mu_p(self, x: np.ndarray) -> np.ndarray:
        if self.variant == "pure":
            base = self.mu_base(x)
            return base - self.eps * base / self.omega_base(x) * self._fluct(x)
        if self.variant == "hybrid-omega":
            return 1.0 / self.omega_base(x)
        if self.variant == "hybrid-mu":
            return self.mu_base(x)
        base = self.mu_base(x)
        return base - self.gamma * base / self.omega_base(x) * self._fluct(x)

    def mu_q(self, x: np.ndarray) -> np.ndarray:
        if self.variant == "pure":
            return self.mu_p(x) + self.delta / self.omega_base(x) * self._fluct(x)
        if self.variant == "hybrid-omega":
            ob = self.omega_base(x)
            return 1.0 / ob - self.eps * self._fluct(x) / ob ** 2
        if self.variant == "hybrid-mu":
            base = self.mu_base(x)
            return base - self.delta * base ** 2 * self._fluct(x)
        return self.mu_p(x) + self.gamma / self.omega_base(x) * self._fluct(x)

    def density_omega_base(self, x: np.ndarray) -> np.ndarray:
        """The unfluctuated omega surface defining the X-density f = omega * g."""
        if self.variant == "hybrid-mu":
            return 1.0 / self.mu_base(x)
        return self.omega_base(x)


def panel_rule(basis: BumpBasis, points_per_axis: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on [0, 1]^d with panels aligned to the cubes.

    The bump surfaces are smooth inside each cube and zero outside, so a
    composite rule whose panel boundaries include every cube face converges
    at spectral rate; roughly ``points_per_axis`` nodes are used per axis.
    """
    axes_nodes, axes_weights = [], []
    for axis in range(basis.d):
        breaks = np.unique(
            np.concatenate(
                [[0.0, 1.0], basis.corners[:, axis], basis.corners[:, axis] + basis.side]
            )
        )
        breaks = breaks[(breaks >= 0.0) & (breaks <= 1.0)]
        nseg = len(breaks) - 1
        order = max(8, math.ceil(points_per_axis / nseg))
        t, w = np.polynomial.legendre.leggauss(order)
        nodes, weights = [], []
        for s in range(nseg):
            a, b = breaks[s], breaks[s + 1]
            nodes.append((t + 1.0) / 2.0 * (b - a) + a)
            weights.append(w * (b - a) / 2.0)
        axes_nodes.append(np.concatenate(nodes))
        axes_weights.append(np.concatenate(weights))
    mesh = np.meshgrid(*axes_nodes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    wmesh = np.meshgrid(*axes_weights, indexing="ij")
    weights = np.ones(points.shape[0])
    for wm in wmesh:
        weights = weights * wm.ravel()
    return points, weights


def build_pair(
    variant: str,
    eps_n: float,
    delta_n: float,
    basis: BumpBasis,
    lam: Optional[Sequence[float]] = None,
    omega_hat: Union[float, SurfaceFn] = 2.0,
    mu_hat: Union[float, SurfaceFn] = 0.5,
    check_points_per_axis: int = 64,
) -> ConstructionPair:
    """Assemble one construction pair and verify its sanity constraints.

    Raises EPS_GT_DELTA for the pure variant when eps_n > delta_n, and
    INVALID_DENSITY when the fluctuation amplitudes push an omega surface
    below 1 or a mu surface outside (0, 1) anywhere on the check grid
    (clipping would silently break the gap identities, so we refuse instead).
    """
    if variant not in VARIANTS:
        raise ValidationError(BAD_INPUT, f"variant must be one of {VARIANTS}")
    if eps_n < 0 or delta_n < 0:
        raise ValidationError(BAD_INPUT, "amplitudes must be >= 0")
    if variant == "pure" and eps_n > delta_n:
        raise ValidationError(EPS_GT_DELTA, f"pure variant needs eps <= delta, got {eps_n} > {delta_n}")
    if lam is None:
        lam_arr = np.ones(basis.k)
    else:
        lam_arr = np.asarray(lam, dtype=float)
        if lam_arr.shape != (basis.k,) or not np.all(np.isin(lam_arr, (-1.0, 1.0))):
            raise ValidationError(BAD_INPUT, "lambda must be a length-k vector of +/-1")
    omega_fn = _as_surface(omega_hat)
    mu_fn = _as_surface(mu_hat)

    points, weights = panel_rule(basis, check_points_per_axis)
    pair = ConstructionPair(
        variant=variant, eps=float(eps_n), delta=float(delta_n),
        gamma=float(min(eps_n, delta_n)), basis=basis, lam=lam_arr,
        omega_base=omega_fn, mu_base=mu_fn,
        g=1.0 / float(np.dot(weights, _as_surface(omega_hat)(points)))
        if variant != "hybrid-mu"
        else 1.0 / float(np.dot(weights, 1.0 / mu_fn(points))),
    )
    for name, surf in (("omega_p", pair.omega_p), ("omega_q", pair.omega_q)):
        vals = surf(points)
        if np.min(vals) < 1.0 - 1e-12:
            raise ValidationError(
                INVALID_DENSITY, f"{name} drops to {np.min(vals):.6g} < 1; reduce the amplitude"
            )
    for name, surf in (("mu_p", pair.mu_p), ("mu_q", pair.mu_q)):
        vals = surf(points)
        if np.min(vals) <= 0.0 or np.max(vals) >= 1.0:
            raise ValidationError(
                INVALID_DENSITY,
                f"{name} leaves (0, 1) (range [{np.min(vals):.6g}, {np.max(vals):.6g}])",
            )
    return pair


def _closed_form_norms(pair: ConstructionPair, points, weights) -> dict[str, tuple[float, Optional[float]]]:
    """Exact fluctuation norms via basis-energy quadrature: (expected, budget)."""
    f2 = pair.basis.sum_sq(points)
    ob = pair.omega_base(points)
    mb = pair.mu_base(points)

    def norm_of(weight_fn_vals, amplitude):
        return amplitude * math.sqrt(float(np.dot(weights, weight_fn_vals ** 2 * f2)))

    ones = np.ones_like(f2)
    v = pair.variant
    if v == "pure":
        return {
            "omega_p": (norm_of(ones, pair.eps), pair.eps),
            "omega_q": (norm_of(ones, pair.eps), pair.eps),
            "mu_p": (norm_of(mb / ob, pair.eps), pair.delta),
            "mu_q": (norm_of((pair.delta - pair.eps * mb) / ob, 1.0), pair.delta),
        }
    if v == "hybrid-omega":
        return {
            "omega_p": (0.0, pair.eps),
            "omega_q": (norm_of(ones, pair.eps), pair.eps),
            "mu_p": (0.0, None),
            "mu_q": (norm_of(1.0 / ob ** 2, pair.eps), None),
        }
    if v == "hybrid-mu":
        return {
            "omega_p": (0.0, None),
            "omega_q": (norm_of(ones, pair.delta), None),
            "mu_p": (0.0, pair.delta),
            "mu_q": (norm_of(mb ** 2, pair.delta), pair.delta),
        }
    return {  # hybrid-both
        "omega_p": (norm_of(ones, pair.gamma), pair.eps),
        "omega_q": (norm_of(ones, pair.gamma), pair.eps),
        "mu_p": (norm_of(mb / ob, pair.gamma), pair.delta),
        "mu_q": (norm_of((1.0 - mb) / ob, pair.gamma), pair.delta),
    }


def _closed_form_gap(pair: ConstructionPair, points, weights) -> float:
    f2 = pair.basis.sum_sq(points)
    ob = pair.omega_base(points)
    mb = pair.mu_base(points)
    if pair.variant == "pure":
        return pair.g * pair.eps * pair.delta * float(np.dot(weights, f2 / ob))
    if pair.variant == "hybrid-omega":
        return -pair.g * pair.eps ** 2 * float(np.dot(weights, f2 / ob ** 2))
    if pair.variant == "hybrid-mu":
        return -pair.g * pair.delta ** 2 * float(np.dot(weights, mb ** 2 * f2))
    return pair.g * pair.gamma ** 2 * float(np.dot(weights, f2 / ob))


@dataclass(frozen=True)
class NormCheck:
    name: str
    measured: float
    expected: float
    budget: Optional[float]
    matches_expected: bool
    within_budget: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "expected": self.expected,
            "budget": self.budget,
            "matches_expected": self.matches_expected,
            "within_budget": self.within_budget,
        }


@dataclass(frozen=True)
class VerificationReport:
    variant: str
    eps: float
    delta: float
    gamma: float
    k: int
    d: int
    g: float
    psi_p: float
    psi_q: float
    gap: float
    gap_closed_form: float
    gap_rel_error: float
    gap_ok: bool
    norms: tuple
    density_integral_p: float
    density_integral_q: float
    density_ok: bool
    points_per_axis: int
    measure: str
    all_ok: bool

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "eps": self.eps,
            "delta": self.delta,
            "gamma": self.gamma,
            "k": self.k,
            "d": self.d,
            "g": self.g,
            "psi_p": self.psi_p,
            "psi_q": self.psi_q,
            "gap": self.gap,
            "gap_closed_form": self.gap_closed_form,
            "gap_rel_error": self.gap_rel_error,
            "gap_ok": self.gap_ok,
            "norms": [n.to_dict() for n in self.norms],
            "density_integral_p": self.density_integral_p,
            "density_integral_q": self.density_integral_q,
            "density_ok": self.density_ok,
            "points_per_axis": self.points_per_axis,
            "measure": self.measure,
            "all_ok": self.all_ok,
        }
        return out


def verify_pair(
    pair: ConstructionPair,
    points_per_axis: int = 256,
    gap_rtol: float = 1e-6,
    norm_rtol: float = 1e-6,
    density_atol: float = 1e-8,
) -> VerificationReport:
    """Recompute the construction's norms, density mass, and psi gap.

    All integrals are quadratures under the Lebesgue measure on the unit
    cube (the measure in which the budget constraints are stated).  The psi
    values are computed from the full surfaces, so the reported gap checks
    the cancellation structure of the construction against the closed form.
    """
    points, weights = panel_rule(pair.basis, points_per_axis)
    g = (
        1.0 / float(np.dot(weights, pair.density_omega_base(points)))
    )
    op, oq = pair.omega_p(points), pair.omega_q(points)
    mp_, mq = pair.mu_p(points), pair.mu_q(points)
    base_o = pair.density_omega_base(points)
    base_m = (
        pair.mu_base(points)
        if pair.variant != "hybrid-omega"
        else 1.0 / pair.omega_base(points)
    )

    measured = {
        "omega_p": math.sqrt(max(float(np.dot(weights, (op - base_o) ** 2)), 0.0)),
        "omega_q": math.sqrt(max(float(np.dot(weights, (oq - base_o) ** 2)), 0.0)),
        "mu_p": math.sqrt(max(float(np.dot(weights, (mp_ - base_m) ** 2)), 0.0)),
        "mu_q": math.sqrt(max(float(np.dot(weights, (mq - base_m) ** 2)), 0.0)),
    }
    closed = _closed_form_norms(pair, points, weights)
    norm_checks = []
    for name in ("omega_p", "omega_q", "mu_p", "mu_q"):
        expected, budget = closed[name]
        meas = measured[name]
        scale = max(abs(expected), 1e-12)
        matches = abs(meas - expected) <= norm_rtol * scale
        within = True if budget is None else meas <= budget * (1.0 + 1e-9) + 1e-12
        norm_checks.append(NormCheck(name, meas, expected, budget, matches, within))

    dens_p = float(np.dot(weights, op * g))
    dens_q = float(np.dot(weights, oq * g))
    density_ok = abs(dens_p - 1.0) <= density_atol and abs(dens_q - 1.0) <= density_atol

    psi_p = g * float(np.dot(weights, op * mp_))
    psi_q = g * float(np.dot(weights, oq * mq))
    gap = psi_q - psi_p
    gap_closed = _closed_form_gap(pair, points, weights)
    denom = max(abs(gap_closed), 1e-300)
    gap_rel = abs(gap - gap_closed) / denom if gap_closed != 0.0 else abs(gap)
    gap_ok = gap_rel <= gap_rtol if gap_closed != 0.0 else abs(gap) <= 1e-12

    all_ok = (
        gap_ok and density_ok
        and all(c.matches_expected and c.within_budget for c in norm_checks)
    )
    return VerificationReport(
        variant=pair.variant, eps=pair.eps, delta=pair.delta, gamma=pair.gamma,
        k=pair.basis.k, d=pair.basis.d, g=g, psi_p=psi_p, psi_q=psi_q,
        gap=gap, gap_closed_form=gap_closed, gap_rel_error=gap_rel, gap_ok=gap_ok,
        norms=tuple(norm_checks), density_integral_p=dens_p,
        density_integral_q=dens_q, density_ok=density_ok,
        points_per_axis=points_per_axis, measure="lebesgue on [0,1]^d",
        all_ok=all_ok,
    )
