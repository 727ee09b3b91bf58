"""Sampling subsystems: loss-driven spot resampling and MH angular sampling.

Spot resampling turns per-entry losses into a probability density (with a
uniform mixture so no spot starves) and redraws the training multiset from
it. Hemisphere-level hierarchical sampling estimates where the shell
integrand concentrates from a coarse pass and drives a Metropolis-Hastings
chain over (theta, phi) with a symmetric Gaussian proposal: theta reflects
at the domain boundaries and phi wraps modulo 2*pi, so the acceptance ratio
reduces to the pdf ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SampleSet, hemisphere_grid, wall_point
from .oracle import PhysicsConstants

PDF_FLOOR_FRACTION = 1e-6   # keeps every state reachable (chain ergodicity)
DEFAULT_STD_THETA = np.pi / 16
DEFAULT_STD_PHI = np.pi / 8


class DegeneratePdfError(ValueError):
    """Raised when an angular pdf has no mass above the floor."""


@dataclass
class SpotLossMap:
    """Per-entry loss, the mixed pdf over entries, and the mixture weight."""

    losses: np.ndarray
    pdf: np.ndarray
    epsilon: float
    all_zero: bool = False


def build_spot_pdf(losses, epsilon: float = 0.05) -> SpotLossMap:
    """Normalize losses into pdf_i = (1-eps)*loss_i/sum + eps/N.

    All-zero losses degrade to the uniform pdf with `all_zero` flagged.
    """
    losses = np.asarray(losses, dtype=float)
    if np.any(losses < 0):
        raise ValueError("losses must be nonnegative")
    n = losses.size
    total = losses.sum()
    if total == 0.0:
        return SpotLossMap(losses, np.full(n, 1.0 / n), epsilon, all_zero=True)
    pdf = (1.0 - epsilon) * losses / total + epsilon / n
    return SpotLossMap(losses, pdf, epsilon)


def resample_spots(spot_map: SpotLossMap, n: int, seed: int) -> np.ndarray:
    """Draw n entry indices i.i.d. with replacement from the spot pdf."""
    rng = np.random.default_rng(seed)
    return rng.choice(spot_map.pdf.size, size=n, replace=True, p=spot_map.pdf)


@dataclass
class AngularPDF:
    """Nonnegative grid over (theta, phi), normalized in the dtheta*dphi measure.

    Grid values sit at hemisphere midpoint nodes; evaluation is bilinear with
    theta clamped to the node range and phi periodic. Normalization uses the
    same midpoint rule as the renderer, so d_theta*d_phi*values.sum() == 1.
    """

    values: np.ndarray          # (n_theta, n_phi)
    theta_lo: float = 0.0
    theta_hi: float = 0.5 * np.pi
    phi_period: float = 2.0 * np.pi

    d_theta: float = field(init=False)
    d_phi: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        nt, npb = self.values.shape
        self.d_theta = (self.theta_hi - self.theta_lo) / nt
        self.d_phi = self.phi_period / npb
        if np.any(self.values < 0):
            raise ValueError("pdf grid must be nonnegative")

    @classmethod
    def from_integrand(cls, grid_values) -> "AngularPDF":
        """Floor and normalize raw integrand magnitudes into a pdf."""
        vals = np.array(grid_values, dtype=float)
        peak = vals.max()
        if peak <= 0.0:
            vals = np.ones_like(vals)
        else:
            vals = np.maximum(vals, PDF_FLOOR_FRACTION * peak)
        pdf = cls(vals)
        pdf.values = vals / (pdf.d_theta * pdf.d_phi * vals.sum())
        return pdf

    def integral(self) -> float:
        return float(self.d_theta * self.d_phi * self.values.sum())

    def evaluate(self, theta, phi):
        """Bilinear pdf values; strictly positive wherever the grid is."""
        theta = np.asarray(theta, dtype=float)
        phi = np.mod(np.asarray(phi, dtype=float), self.phi_period)
        nt, npb = self.values.shape
        ft = (theta - self.theta_lo) / self.d_theta - 0.5
        fp = phi / self.d_phi - 0.5
        it = np.clip(np.floor(ft).astype(int), 0, nt - 2) if nt > 1 else np.zeros_like(ft, int)
        wt = np.clip(ft - it, 0.0, 1.0) if nt > 1 else np.zeros_like(ft)
        ip = np.floor(fp).astype(int)
        wp = fp - ip
        ip0 = np.mod(ip, npb)
        ip1 = np.mod(ip + 1, npb)
        v = self.values
        return ((1 - wt) * ((1 - wp) * v[it, ip0] + wp * v[it, ip1])
                + wt * ((1 - wp) * v[np.minimum(it + 1, nt - 1), ip0]
                        + wp * v[np.minimum(it + 1, nt - 1), ip1]))


def coarse_pdf(field_obj, spot, t: float, n_c: int,
               constants: PhysicsConstants | None = None) -> AngularPDF:
    """Estimate the angular pdf from a coarse uniform pass of the field.

    Grid values are max(sin(theta)*sigma*rho/r^2, floor) on an n_c x n_c
    hemisphere grid, normalized to integrate to one.
    """
    if n_c < 2:
        raise ValueError("coarse grid must be at least 2x2")
    constants = constants or PhysicsConstants()
    r = 0.5 * constants.c * t
    grid = hemisphere_grid(n_c, n_c)
    st = np.sin(grid.theta)
    pos = wall_point(spot) + r * np.stack(
        [st * np.cos(grid.phi), st * np.sin(grid.phi), np.cos(grid.theta)], axis=1)
    sig, rho = field_obj.query(pos, np.stack([grid.theta, grid.phi], axis=1))
    integrand = (st * sig * rho / (r * r)).reshape(n_c, n_c)
    return AngularPDF.from_integrand(integrand)


@dataclass
class ChainState:
    """Metropolis-Hastings chain position, proposal widths and statistics."""

    theta: float
    phi: float
    std_theta: float = DEFAULT_STD_THETA
    std_phi: float = DEFAULT_STD_PHI
    accepts: int = 0
    total: int = 0
    rng: np.random.Generator = None

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.total if self.total else 0.0


def _reflect(x, lo, hi):
    """Fold values into [lo, hi] (triangle-wave reflection)."""
    span = hi - lo
    y = np.mod(x - lo, 2.0 * span)
    y = np.where(y > span, 2.0 * span - y, y)
    return y + lo


def _chain_start(pdf: AngularPDF):
    """Deterministic start at the grid's peak node."""
    nt, npb = pdf.values.shape
    flat = int(np.argmax(pdf.values))
    it, ip = divmod(flat, npb)
    return (pdf.theta_lo + (it + 0.5) * pdf.d_theta, (ip + 0.5) * pdf.d_phi)


def mh_sample(pdf: AngularPDF, n_f: int, burn_in: int,
              chain: ChainState | None = None, seed: int = 0):
    """Run a Metropolis-Hastings chain targeting the angular pdf.

    Returns (SampleSet with pdf values K, final ChainState). The proposal is
    a diagonal Gaussian with theta reflected into the domain and phi wrapped,
    so acceptance is min(1, pdf(proposed)/pdf(current)). Deterministic for a
    given seed; a uniform target accepts every proposal.
    """
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    if pdf.values.max() <= 0.0:
        raise DegeneratePdfError("angular pdf has no mass")
    if chain is None:
        theta0, phi0 = _chain_start(pdf)
        chain = ChainState(theta=theta0, phi=phi0,
                           rng=np.random.default_rng(seed))
    if chain.rng is None:
        chain.rng = np.random.default_rng(seed)

    steps = burn_in + n_f
    noise = chain.rng.normal(size=(steps, 2))
    us = chain.rng.uniform(size=steps)
    thetas = np.empty(n_f)
    phis = np.empty(n_f)
    cur_t, cur_p = chain.theta, chain.phi
    cur_val = float(pdf.evaluate(cur_t, cur_p))
    for i in range(steps):
        prop_t = float(_reflect(cur_t + chain.std_theta * noise[i, 0],
                                pdf.theta_lo, pdf.theta_hi))
        prop_p = float(np.mod(cur_p + chain.std_phi * noise[i, 1],
                              pdf.phi_period))
        prop_val = float(pdf.evaluate(prop_t, prop_p))
        chain.total += 1
        if us[i] * cur_val <= prop_val:
            cur_t, cur_p, cur_val = prop_t, prop_p, prop_val
            chain.accepts += 1
        if i >= burn_in:
            thetas[i - burn_in] = cur_t
            phis[i - burn_in] = cur_p
    chain.theta, chain.phi = cur_t, cur_p
    k = pdf.evaluate(thetas, phis)
    return SampleSet(theta=thetas, phi=phis,
                     weight=np.full(n_f, 1.0 / n_f), pdf=k), chain


def mh_sample_batch(pdfs: list[AngularPDF], n_f: int, burn_in: int, seeds):
    """Advance many independent chains in lockstep (training fast path).

    Each chain consumes randoms in the same order as :func:`mh_sample`, so a
    batch run reproduces the per-chain scalar results exactly.
    """
    b = len(pdfs)
    steps = burn_in + n_f
    noise = np.empty((b, steps, 2))
    us = np.empty((b, steps))
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        noise[i] = rng.normal(size=(steps, 2))
        us[i] = rng.uniform(size=steps)
    stacked = np.stack([p.values for p in pdfs])          # (B, nt, np)
    ref = pdfs[0]
    nt, npb = ref.values.shape

    def evaluate(tt, pp):
        ft = (tt - ref.theta_lo) / ref.d_theta - 0.5
        fp = np.mod(pp, ref.phi_period) / ref.d_phi - 0.5
        it = np.clip(np.floor(ft).astype(int), 0, nt - 2)
        wt = np.clip(ft - it, 0.0, 1.0)
        ip = np.floor(fp).astype(int)
        wp = fp - ip
        ip0 = np.mod(ip, npb)
        ip1 = np.mod(ip + 1, npb)
        rows = np.arange(b)
        it1 = np.minimum(it + 1, nt - 1)
        return ((1 - wt) * ((1 - wp) * stacked[rows, it, ip0]
                            + wp * stacked[rows, it, ip1])
                + wt * ((1 - wp) * stacked[rows, it1, ip0]
                        + wp * stacked[rows, it1, ip1]))

    cur_t = np.empty(b)
    cur_p = np.empty(b)
    for i, p in enumerate(pdfs):
        cur_t[i], cur_p[i] = _chain_start(p)
    cur_val = evaluate(cur_t, cur_p)
    out_t = np.empty((b, n_f))
    out_p = np.empty((b, n_f))
    for i in range(steps):
        prop_t = _reflect(cur_t + DEFAULT_STD_THETA * noise[:, i, 0],
                          ref.theta_lo, ref.theta_hi)
        prop_p = np.mod(cur_p + DEFAULT_STD_PHI * noise[:, i, 1], ref.phi_period)
        prop_val = evaluate(prop_t, prop_p)
        accept = us[:, i] * cur_val <= prop_val
        cur_t = np.where(accept, prop_t, cur_t)
        cur_p = np.where(accept, prop_p, cur_p)
        cur_val = np.where(accept, prop_val, cur_val)
        if i >= burn_in:
            out_t[:, i - burn_in] = cur_t
            out_p[:, i - burn_in] = cur_p
    k = np.empty((b, n_f))
    for j in range(n_f):
        k[:, j] = evaluate(out_t[:, j], out_p[:, j])
    return out_t, out_p, k
