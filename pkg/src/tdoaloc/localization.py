"""2D source position estimation from TDOAs and from steered correlation power.

Two estimators are provided. ``si_locate`` turns a reference-relative TDOA
vector into range differences, initializes with the spherical-interpolation
linear least squares solution, and refines it by projected gradient descent on
the squared range-difference residual, constrained to a 5 m disc around the
room centre. ``srp_phat_locate`` maximizes the sum of all pairs' correlation
values at the lags each candidate grid position implies, on a coarse grid
first and then on fine grids around the best coarse candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_SOUND, MicArray, TdoaVector, true_tdoa
from .spectral import GccFunction


@dataclass(frozen=True)
class PositionEstimate:
    """A 2D position with the cost/functional value that selected it."""

    position: np.ndarray  # (2,) meters
    cost: float
    method: str
    iterations: int = 0
    converged: bool = True
    conditioning_warning: bool = False


@dataclass(frozen=True)
class SiOptions:
    max_iters: int = 200
    step_init: float = 1.0
    min_step: float = 1e-4  # meters; stop once moves fall below 0.1 mm
    radius: float = 5.0     # constraint disc radius around the room centre
    cond_limit: float = 1e8


def _project_disc(p: np.ndarray, centre: np.ndarray, radius: float) -> np.ndarray:
    d = p - centre
    r = np.linalg.norm(d)
    if r <= radius:
        return p
    return centre + d * (radius / r)


def si_locate(
    tdoas: TdoaVector,
    array: MicArray,
    nu: float = SPEED_OF_SOUND,
    room_centre=(0.0, 0.0),
    source_height: float = 1.5,
    opts: SiOptions | None = None,
) -> PositionEstimate:
    """Least-squares source position from a reference-relative TDOA vector.

    The search runs over (x, y) with the source plane fixed at
    ``source_height``; microphone coordinates may be 3D. Requires M >= 4 so the
    linearized system (x, y, reference range) is overdetermined.
    """
    opts = opts or SiOptions()
    m = array.n_mics
    if m < 4:
        raise ValueError("need at least four microphones for a 2D fix")
    if not np.all(np.isfinite(tdoas.taus)):
        raise ValueError("TDOAs must be finite")
    ref = tdoas.ref_mic
    centre = np.asarray(room_centre, dtype=float)

    pos = array.positions
    if pos.shape[1] == 2:
        pos = np.column_stack([pos, np.full(m, source_height)])
    others = [i for i in range(m) if i != ref]
    d = nu * tdoas.taus[others]  # range differences relative to the reference

    # Spherical-interpolation init: with the reference microphone moved to the
    # origin, 2 q' p' + 2 d r_ref = |q'|^2 - d^2 is linear in (x, y, r_ref).
    q = pos[others] - pos[ref]
    rhs = (q**2).sum(axis=1) - d**2 - 2.0 * q[:, 2] * (source_height - pos[ref, 2])
    A = np.column_stack([2.0 * q[:, 0], 2.0 * q[:, 1], 2.0 * d])
    sing = np.linalg.svd(A, compute_uv=False)
    cond_warn = bool(sing[-1] <= 0 or sing[0] / max(sing[-1], 1e-300) > opts.cond_limit)
    if cond_warn:
        p = array.centroid()[:2].copy()
    else:
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        p = sol[:2] + pos[ref, :2]
    p = _project_disc(p, centre, opts.radius)

    def ranges(pxy):
        p3 = np.array([pxy[0], pxy[1], source_height])
        return np.linalg.norm(pos - p3, axis=1)

    def cost_grad(pxy):
        r = ranges(pxy)
        resid = d - (r[others] - r[ref])
        p3 = np.array([pxy[0], pxy[1], source_height])
        units = (p3[:2] - pos[:, :2]) / np.maximum(r, 1e-12)[:, None]
        grad = 2.0 * ((units[ref] - units[others]) * resid[:, None]).sum(axis=0)
        return float((resid**2).sum()), grad

    cost, grad = cost_grad(p)
    iters = 0
    converged = True
    for iters in range(1, opts.max_iters + 1):
        step = opts.step_init
        moved = False
        while step >= 1e-12:
            cand = _project_disc(p - step * grad, centre, opts.radius)
            move = np.linalg.norm(cand - p)
            new_cost, new_grad = cost_grad(cand)
            if new_cost < cost:
                p, cost, grad = cand, new_cost, new_grad
                moved = True
                break
            step *= 0.5
        if not moved or move < opts.min_step:
            break
    else:
        converged = False
    return PositionEstimate(p, cost, tdoas.method or "si", iters, converged, cond_warn)


@dataclass(frozen=True)
class SrpGrid:
    """Two-stage 2D search grid: coarse pass, then fine grids around the
    ``top_k`` best coarse points."""

    x_max: float
    y_max: float
    x_min: float = 0.0
    y_min: float = 0.0
    coarse: float = 0.10
    fine: float = 0.01
    top_k: int = 3
    halfwidth: float = 0.10  # fine neighborhood half-size around a coarse point

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("empty grid bounds")

    def _axis(self, lo, hi, res):
        n = int(np.floor((hi - lo) / res + 1e-9))
        return lo + res * np.arange(n + 1)

    def coarse_points(self) -> np.ndarray:
        xs = self._axis(self.x_min, self.x_max, self.coarse)
        ys = self._axis(self.y_min, self.y_max, self.coarse)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def fine_points_near(self, centres: np.ndarray) -> np.ndarray:
        """Union of fine lattices around the given points, on one global
        lattice so repeated evaluations land on identical coordinates."""
        cells = set()
        half = int(round(self.halfwidth / self.fine))
        for cx, cy in np.atleast_2d(centres):
            ix0 = int(round((cx - self.x_min) / self.fine))
            iy0 = int(round((cy - self.y_min) / self.fine))
            for ix in range(ix0 - half, ix0 + half + 1):
                for iy in range(iy0 - half, iy0 + half + 1):
                    cells.add((ix, iy))
        idx = np.array(sorted(cells), dtype=float)
        pts = np.column_stack(
            [self.x_min + self.fine * idx[:, 0], self.y_min + self.fine * idx[:, 1]]
        )
        keep = (
            (pts[:, 0] >= self.x_min - 1e-9)
            & (pts[:, 0] <= self.x_max + 1e-9)
            & (pts[:, 1] >= self.y_min - 1e-9)
            & (pts[:, 1] <= self.y_max + 1e-9)
        )
        return pts[keep]


def srp_functional(
    points: np.ndarray,
    gccs: dict[tuple[int, int], GccFunction],
    array: MicArray,
    nu: float = SPEED_OF_SOUND,
    source_height: float = 1.5,
) -> np.ndarray:
    """Steered power at candidate 2D points: the sum over all pairs of the GCC
    value at each point's nearest admissible upsampled lag."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p3 = np.column_stack([pts, np.full(len(pts), source_height)])
    pos = array.positions
    if pos.shape[1] == 2:
        pos = np.column_stack([pos, np.zeros(array.n_mics)])
    dist = np.linalg.norm(p3[:, None, :] - pos[None, :, :], axis=2)  # (P, M)
    total = np.zeros(len(pts))
    for (i, j), g in gccs.items():
        rate = g.upsample * g.sample_rate_hz
        n = np.rint((dist[:, i] - dist[:, j]) / nu * rate).astype(int)
        np.clip(n, -g.n_max, g.n_max, out=n)
        total += g.value_at(n)
    return total


def srp_phat_locate(
    gccs: dict[tuple[int, int], GccFunction],
    array: MicArray,
    grid: SrpGrid,
    nu: float = SPEED_OF_SOUND,
    source_height: float = 1.5,
) -> PositionEstimate:
    """Two-stage grid maximization of the steered correlation power.

    Ties resolve to the lexicographically smallest grid point. The fine stage
    re-evaluates 1 cm lattices around the ``top_k`` best coarse points.
    """
    coarse_pts = grid.coarse_points()
    if coarse_pts.size == 0:
        raise ValueError("empty grid")
    coarse_val = srp_functional(coarse_pts, gccs, array, nu, source_height)
    order = np.lexsort((coarse_pts[:, 1], coarse_pts[:, 0], -coarse_val))
    top = coarse_pts[order[: grid.top_k]]
    fine_pts = grid.fine_points_near(top)
    fine_val = srp_functional(fine_pts, gccs, array, nu, source_height)
    best = np.lexsort((fine_pts[:, 1], fine_pts[:, 0], -fine_val))[0]
    return PositionEstimate(fine_pts[best], float(fine_val[best]), "srp-phat")


def srp_tdoa_readout(
    p_hat,
    array: MicArray,
    nu: float = SPEED_OF_SOUND,
    ref: int = 0,
    source_height: float = 1.5,
) -> TdoaVector:
    """TDOA vector implied by an estimated 2D position."""
    p_hat = np.asarray(p_hat, dtype=float)
    p3 = np.array([p_hat[0], p_hat[1], source_height])
    pos = array.positions
    if pos.shape[1] == 2:
        p3 = p3[:2]
    taus = np.array(
        [true_tdoa(p3, pos[m], pos[ref], nu) for m in range(array.n_mics)]
    )
    taus[ref] = 0.0
    return TdoaVector(ref, taus, "srp-phat")
