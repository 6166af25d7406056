"""Kernel functions, local density normalizers, and the pairwise-sum engine.

All bias corrections in this package are U-statistics of the form

    sum_{i != j} left_i * kernelterm_ij * right_j,

where ``kernelterm_ij`` couples observations through a scaled kernel in one
or two fitted-nuisance coordinates, divided by a leave-self-out density
normalizer Q_hat.  The engine computes per-index row sums
(sum over j of the (i, j) term) and column sums (sum over i of the (i, j)
term) for three modes:

``1d-omega``
    kernelterm_ij = K_h(c_j - c_i) / Q_hat(c_i), with Q_hat(c_i) the
    treated-weighted kernel density at c_i excluding i itself.
``1d-mu-loo``
    kernelterm_ij = K_h(c_j - c_i) / Q_hat_{-i}(c_j), where the normalizer
    is centered at c_j and leaves observation i (not j) out.
``2d``
    the product-kernel analogue of ``1d-omega`` on two coordinates.

Normalizers below the floor ``qfloor`` are replaced by the floor and counted
in the clamp diagnostics.  Instances with n >= 512 run through a fast path
(sorted sliding windows in 1-d, grid bucketing with cell width h in 2-d)
that enumerates only kernel-support pairs; smaller instances use a dense
evaluation.  Both paths are deterministic and agree to floating-point
accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from .errors import BAD_INPUT, ValidationError

FAST_PATH_MIN_N = 512
DEFAULT_QFLOOR = 1e-3

# pair-generation chunks target this many candidate pairs at a time
_PAIR_BUDGET = 4_000_000

_FAMILIES = ("box", "epanechnikov")

MODE_OMEGA = "1d-omega"
MODE_MU_LOO = "1d-mu-loo"
MODE_2D = "2d"
_MODES = (MODE_OMEGA, MODE_MU_LOO, MODE_2D)


@dataclass(frozen=True)
class KernelSpec:
    """A base kernel family together with a positive bandwidth h."""

    family: str = "box"
    h: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValidationError(BAD_INPUT, f"unknown kernel family '{self.family}'")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValidationError(BAD_INPUT, f"bandwidth must be positive, got {self.h}")


def kernel_eval(spec: KernelSpec, u) -> Union[float, np.ndarray]:
    """Base (unscaled) kernel K(u): symmetric, supported on [-1, 1]."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    if spec.family == "box":
        out = np.where(inside, 0.5, 0.0)
    else:  # epanechnikov
        out = np.where(inside, 0.75 * (1.0 - u * u), 0.0)
    return out if out.ndim else float(out)


def kh(spec: KernelSpec, u) -> Union[float, np.ndarray]:
    """Scaled kernel K_h(u) = K(u / h) / h."""
    u = np.asarray(u, dtype=float)
    out = np.asarray(kernel_eval(spec, u / spec.h)) / spec.h
    return out if out.ndim else float(out)


def _kh_at_zero(spec: KernelSpec) -> float:
    return float(kernel_eval(spec, 0.0)) / spec.h


def qhat_omega(i: int, data, nuis, spec: KernelSpec) -> float:
    """Leave-self-out treated kernel density at omega_hat[i].

    (n-1)^{-1} sum_{j != i} a_j K_h(omega_hat_j - omega_hat_i); >= 0.
    """
    k = np.asarray(kh(spec, nuis.omega_hat - nuis.omega_hat[i]))
    k[i] = 0.0
    return float(np.dot(data.a, k) / (data.n - 1))


def qhat_mu_loo(i: int, j: int, data, nuis, spec: KernelSpec) -> float:
    """Leave-i-out treated kernel density at mu_hat[j] (j's own term stays).

    (n-1)^{-1} sum_{s != i} a_s K_h(mu_hat_s - mu_hat_j).
    """
    if i == j:
        raise ValidationError(BAD_INPUT, "qhat_mu_loo requires i != j")
    k = np.asarray(kh(spec, nuis.mu_hat - nuis.mu_hat[j]))
    k[i] = 0.0
    return float(np.dot(data.a, k) / (data.n - 1))


def qhat_2d(i: int, data, nuis, spec: KernelSpec) -> float:
    """Leave-self-out treated product-kernel density at (omega_hat, mu_hat)_i."""
    k = np.asarray(kh(spec, nuis.omega_hat - nuis.omega_hat[i])) * np.asarray(
        kh(spec, nuis.mu_hat - nuis.mu_hat[i])
    )
    k[i] = 0.0
    return float(np.dot(data.a, k) / (data.n - 1))


@dataclass(frozen=True)
class PairStats:
    """Row/column sums of the pairwise kernel terms plus diagnostics.

    ``row[i]`` is sum over j != i of the (i, j) term and ``col[j]`` the sum
    over i != j, so ``row.sum()`` equals the full double sum (up to float
    ordering, so does ``col.sum()``).
    """

    row: np.ndarray
    col: np.ndarray
    min_qhat: float
    clamp_count: int
    n_pairs: int
    all_qhat_zero: bool

    @property
    def total(self) -> float:
        return float(self.row.sum())


def _as_centers(mode: str, centers) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if mode == MODE_2D:
        c1, c2 = centers
        c1 = np.asarray(c1, dtype=float)
        c2 = np.asarray(c2, dtype=float)
        if c1.shape != c2.shape:
            raise ValidationError(BAD_INPUT, "2-d centers must have equal length")
        return c1, c2
    c = np.asarray(centers, dtype=float)
    return c, None


# ---------------------------------------------------------------------------
# dense (naive) path
# ---------------------------------------------------------------------------

def _stats_naive(mode, c1, c2, treated, left, right, spec, qfloor) -> PairStats:
    n = len(treated)
    kmat = np.asarray(kh(spec, c1[None, :] - c1[:, None]))
    if mode == MODE_2D:
        kmat = kmat * np.asarray(kh(spec, c2[None, :] - c2[:, None]))
    koff = kmat.copy()
    np.fill_diagonal(koff, 0.0)
    contrib = koff > 0.0

    if mode in (MODE_OMEGA, MODE_2D):
        qnum = koff @ treated
        q = qnum / (n - 1)
        qt = np.maximum(q, qfloor)
        mat = (left / qt)[:, None] * koff * right[None, :]
        active = contrib.any(axis=1)
        min_q = float(q[active].min()) if active.any() else float("nan")
        clamp = int(contrib[q < qfloor].sum())
        all_zero = not np.any(qnum > 0.0)
    else:  # MODE_MU_LOO
        qfull = (kmat @ treated) / (n - 1)
        qpair = qfull[None, :] - treated[:, None] * kmat / (n - 1)
        qt = np.maximum(qpair, qfloor)
        mat = left[:, None] * koff * right[None, :] / qt
        min_q = float(qpair[contrib].min()) if contrib.any() else float("nan")
        clamp = int((contrib & (qpair < qfloor)).sum())
        all_zero = not np.any(qfull > 0.0)

    return PairStats(
        row=mat.sum(axis=1),
        col=mat.sum(axis=0),
        min_qhat=min_q,
        clamp_count=clamp,
        n_pairs=int(contrib.sum()),
        all_qhat_zero=all_zero,
    )


# ---------------------------------------------------------------------------
# fast path: candidate-pair generation
# ---------------------------------------------------------------------------

def _chunk_boundaries(counts: np.ndarray) -> np.ndarray:
    """Split indices into chunks whose candidate-pair totals stay bounded."""
    n = len(counts)
    csum = np.concatenate([[0], np.cumsum(counts)])
    bounds = [0]
    while bounds[-1] < n:
        target = csum[bounds[-1]] + _PAIR_BUDGET
        nxt = int(np.searchsorted(csum, target, side="right")) - 1
        nxt = max(nxt, bounds[-1] + 1)
        bounds.append(min(nxt, n))
    return np.asarray(bounds)


def _iter_pairs_1d(c: np.ndarray, h: float) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (i, j) candidate pairs with |c_j - c_i| <= h, self included.

    Implemented as a sorted sliding window: for each point, its candidates
    form a contiguous run of the sort order.
    """
    n = len(c)
    order = np.argsort(c, kind="stable")
    cs = c[order]
    lo = np.searchsorted(cs, cs - h, side="left")
    hi = np.searchsorted(cs, cs + h, side="right")
    counts = hi - lo
    bounds = _chunk_boundaries(counts)
    for p0, p1 in zip(bounds[:-1], bounds[1:]):
        m = counts[p0:p1]
        total = int(m.sum())
        if total == 0:
            continue
        pf = np.repeat(np.arange(p0, p1), m)
        run_start = np.concatenate([[0], np.cumsum(m)[:-1]])
        offs = np.arange(total) - np.repeat(run_start, m)
        qf = np.repeat(lo[p0:p1], m) + offs
        yield order[pf], order[qf]


def _iter_pairs_2d(c1: np.ndarray, c2: np.ndarray, h: float) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield candidate pairs with |dc1| <= h and |dc2| <= h, self included.

    Grid bucketing with cell width exactly h: all pairs within kernel
    support lie in 3x3 cell neighborhoods.
    """
    n = len(c1)
    span = max(np.ptp(c1), np.ptp(c2), 0.0)
    if span / h > 5e6:
        # degenerate bandwidth: the cell grid would overflow, so window on
        # one axis and filter the other
        for pf, qf in _iter_pairs_1d(c1, h):
            keep = np.abs(c2[qf] - c2[pf]) <= h
            if keep.any():
                yield pf[keep], qf[keep]
        return
    i1 = np.floor(c1 / h).astype(np.int64)
    i2 = np.floor(c2 / h).astype(np.int64)
    i1 -= i1.min()
    i2 -= i2.min()
    ncols = int(i2.max()) + 3
    cell = i1 * ncols + i2
    order = np.argsort(cell, kind="stable")
    cell_sorted = cell[order]
    uniq, block_start = np.unique(cell_sorted, return_index=True)
    block_count = np.diff(np.append(block_start, n))

    # per-point total candidates over the 9 neighbor cells, for chunking
    def _blocks(points: np.ndarray, dx: int, dy: int):
        target = (i1[points] + dx) * ncols + (i2[points] + dy)
        pos = np.searchsorted(uniq, target)
        pos_c = np.minimum(pos, len(uniq) - 1)
        found = uniq[pos_c] == target
        starts = np.where(found, block_start[pos_c], 0)
        counts = np.where(found, block_count[pos_c], 0)
        return starts, counts

    offsets = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
    all_pts = np.arange(n)
    per_point = np.zeros(n, dtype=np.int64)
    for dx, dy in offsets:
        per_point += _blocks(all_pts, dx, dy)[1]

    bounds = _chunk_boundaries(per_point)
    for p0, p1 in zip(bounds[:-1], bounds[1:]):
        pts = np.arange(p0, p1)
        pf_parts, qf_parts = [], []
        for dx, dy in offsets:
            starts, counts = _blocks(pts, dx, dy)
            total = int(counts.sum())
            if total == 0:
                continue
            pf = np.repeat(pts, counts)
            run_start = np.concatenate([[0], np.cumsum(counts)[:-1]])
            offs = np.arange(total) - np.repeat(run_start, counts)
            qf = order[np.repeat(starts, counts) + offs]
            pf_parts.append(pf)
            qf_parts.append(qf)
        if not pf_parts:
            continue
        pf = np.concatenate(pf_parts)
        qf = np.concatenate(qf_parts)
        keep = (np.abs(c1[qf] - c1[pf]) <= h) & (np.abs(c2[qf] - c2[pf]) <= h)
        if keep.any():
            yield pf[keep], qf[keep]


def _pair_iter(mode, c1, c2, h):
    if mode == MODE_2D:
        return _iter_pairs_2d(c1, c2, h)
    return _iter_pairs_1d(c1, h)


def _pair_kernel(mode, spec, c1, c2, pf, qf) -> np.ndarray:
    kv = np.asarray(kh(spec, c1[qf] - c1[pf]))
    if mode == MODE_2D:
        kv = kv * np.asarray(kh(spec, c2[qf] - c2[pf]))
    return kv


def _stats_fast(mode, c1, c2, treated, left, right, spec, qfloor) -> PairStats:
    n = len(treated)
    h = spec.h

    if mode in (MODE_OMEGA, MODE_2D):
        # sweep 1: treated-density numerators and right-weighted kernel sums
        qnum = np.zeros(n)
        s_right = np.zeros(n)
        npairs = np.zeros(n, dtype=np.int64)
        for pf, qf in _pair_iter(mode, c1, c2, h):
            kv = _pair_kernel(mode, spec, c1, c2, pf, qf)
            kv[pf == qf] = 0.0
            qnum += np.bincount(pf, weights=treated[qf] * kv, minlength=n)
            s_right += np.bincount(pf, weights=right[qf] * kv, minlength=n)
            npairs += np.bincount(pf[kv > 0], minlength=n)
        q = qnum / (n - 1)
        qt = np.maximum(q, qfloor)
        row = (left / qt) * s_right
        # sweep 2: column sums need the clamped normalizers of the partners
        lq = left / qt
        s_lq = np.zeros(n)
        for pf, qf in _pair_iter(mode, c1, c2, h):
            kv = _pair_kernel(mode, spec, c1, c2, pf, qf)
            kv[pf == qf] = 0.0
            s_lq += np.bincount(pf, weights=lq[qf] * kv, minlength=n)
        col = right * s_lq
        active = npairs > 0
        min_q = float(q[active].min()) if active.any() else float("nan")
        clamp = int(npairs[q < qfloor].sum())
        all_zero = not np.any(qnum > 0.0)
        return PairStats(row, col, min_q, clamp, int(npairs.sum()), all_zero)

    # MODE_MU_LOO: the normalizer is pair-dependent, so evaluate per pair.
    k0 = _kh_at_zero(spec)
    qfull_num = np.zeros(n)
    for pf, qf in _pair_iter(mode, c1, c2, h):
        kv = _pair_kernel(mode, spec, c1, c2, pf, qf)
        qfull_num += np.bincount(pf, weights=treated[qf] * kv, minlength=n)
    qfull = qfull_num / (n - 1)  # includes the self term
    row = np.zeros(n)
    col = np.zeros(n)
    min_q = np.inf
    clamp = 0
    n_pairs = 0
    for pf, qf in _pair_iter(mode, c1, c2, h):
        kv = _pair_kernel(mode, spec, c1, c2, pf, qf)
        notself = pf != qf
        contrib = (kv > 0.0) & notself
        if not contrib.any():
            continue
        i_idx, j_idx, kv_c = pf[contrib], qf[contrib], kv[contrib]
        qpair = qfull[j_idx] - treated[i_idx] * kv_c / (n - 1)
        qt = np.maximum(qpair, qfloor)
        term = left[i_idx] * kv_c * right[j_idx] / qt
        row += np.bincount(i_idx, weights=term, minlength=n)
        col += np.bincount(j_idx, weights=term, minlength=n)
        min_q = min(min_q, float(qpair.min()))
        clamp += int(np.sum(qpair < qfloor))
        n_pairs += int(contrib.sum())
    all_zero = not np.any(qfull_num > 0.0)
    return PairStats(
        row, col, float(min_q) if n_pairs else float("nan"), clamp, n_pairs, all_zero
    )


def pair_stats(
    mode: str,
    centers,
    treated: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    spec: KernelSpec,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
    force_fast: bool = False,
) -> PairStats:
    """Row/column sums of left_i * kernelterm_ij * right_j over i != j.

    ``treated`` supplies the indicator weighting the Q_hat normalizers (the
    treatment arm for the counterfactual-mean corrections, the Y = 0
    indicator in the partially linear logistic extension).
    """
    if mode not in _MODES:
        raise ValidationError(BAD_INPUT, f"unknown mode '{mode}'")
    c1, c2 = _as_centers(mode, centers)
    treated = np.asarray(treated, dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    n = len(treated)
    if not (len(c1) == n == len(left) == len(right)):
        raise ValidationError(BAD_INPUT, "inconsistent input lengths")
    if n < 2:
        raise ValidationError(BAD_INPUT, "pairwise sums need n >= 2")
    use_fast = force_fast or (n >= FAST_PATH_MIN_N and not force_naive)
    if use_fast:
        return _stats_fast(mode, c1, c2, treated, left, right, spec, qfloor)
    return _stats_naive(mode, c1, c2, treated, left, right, spec, qfloor)


def pairwise_weighted_sum(
    left_weights: np.ndarray,
    right_weights: np.ndarray,
    centers,
    spec: KernelSpec,
    mode: str,
    treated: np.ndarray,
    qfloor: float = DEFAULT_QFLOOR,
    force_naive: bool = False,
) -> float:
    """The full double sum sum_{i != j} left_i * kernelterm_ij * right_j."""
    stats = pair_stats(
        mode, centers, treated, left_weights, right_weights, spec,
        qfloor=qfloor, force_naive=force_naive,
    )
    return stats.total
