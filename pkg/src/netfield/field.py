"""Neural field mapping (x, y, z, theta, phi) to (density, reflectance).

A fully connected ReLU network in double precision with hand-written
reverse-mode gradients: an eight-layer trunk on the positionally encoded
coordinates (skip concatenation of the encoded position after layer four),
a head producing a feature vector plus the scalar density, and a narrower
head on (feature + encoded direction) producing the scalar reflectance.
Density depends on position only; both outputs pass through a final ReLU so
empty space can be an exact zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContainerError

CHECKPOINT_MAGIC = b"NTFP"
CHECKPOINT_VERSION = 1


class NonFiniteParameterError(ValueError):
    """Raised when network parameters contain NaN or infinity."""


@dataclass(frozen=True)
class EncodingConfig:
    """Fourier feature configuration plus per-axis normalization bounds.

    Each raw coordinate is mapped into [-1, 1] using its (lo, hi) bounds and
    then expanded into n_freq sin/cos pairs at frequencies pi * 2^k.
    """

    n_freq_pos: int = 10
    n_freq_dir: int = 10
    pos_bounds: np.ndarray = field(
        default_factory=lambda: np.array([[-1.0, 1.0], [-1.0, 1.0], [0.0, 2.0]])
    )
    dir_bounds: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0.5 * np.pi], [0.0, 2.0 * np.pi]])
    )

    def __post_init__(self):
        object.__setattr__(self, "pos_bounds", np.asarray(self.pos_bounds, dtype=float))
        object.__setattr__(self, "dir_bounds", np.asarray(self.dir_bounds, dtype=float))
        if self.n_freq_pos < 1 or self.n_freq_dir < 1:
            raise ValueError("need at least one encoding frequency")
        for b in (self.pos_bounds, self.dir_bounds):
            if np.any(b[:, 1] <= b[:, 0]):
                raise ValueError("degenerate normalization bounds")


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters; defaults follow the reference setup."""

    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    trunk_depth: int = 8
    width: int = 256
    skip_layer: int = 4   # encoded position re-concatenated after this layer
    rho_width: int = 128

    def __post_init__(self):
        if not (1 <= self.skip_layer < self.trunk_depth):
            raise ValueError("skip_layer must lie strictly inside the trunk")

    @property
    def pos_dim(self) -> int:
        return 2 * self.encoding.n_freq_pos * 3

    @property
    def dir_dim(self) -> int:
        return 2 * self.encoding.n_freq_dir * 2


def encode_scalars(u: np.ndarray, n_freq: int) -> np.ndarray:
    """Expand normalized scalars (N, k) into (N, 2*n_freq*k) sin/cos features.

    Per scalar, features are ordered [sin(pi u), cos(pi u), sin(2 pi u),
    cos(2 pi u), ...] with frequencies pi * 2^f.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    n, k = u.shape
    freqs = np.pi * (2.0 ** np.arange(n_freq))
    arg = u[:, :, None] * freqs[None, None, :]          # (N, k, L)
    out = np.empty((n, k, n_freq, 2))
    out[..., 0] = np.sin(arg)
    out[..., 1] = np.cos(arg)
    return out.reshape(n, 2 * n_freq * k)


def _normalize(values: np.ndarray, bounds: np.ndarray) -> tuple[np.ndarray, int]:
    """Map per-axis values into [-1, 1]; out-of-bounds values are clamped.

    Returns the normalized array and the number of clamped entries.
    """
    lo = bounds[:, 0]
    hi = bounds[:, 1]
    u = 2.0 * (values - lo) / (hi - lo) - 1.0
    clipped = np.clip(u, -1.0, 1.0)
    n_clamped = int(np.count_nonzero(clipped != u))
    return clipped, n_clamped


def _relu(x):
    return np.maximum(x, 0.0)


@dataclass
class NetParams:
    """Dense layer weights; weights are (out, in), biases (out,)."""

    trunk_w: list
    trunk_b: list
    sigma_w: np.ndarray
    sigma_b: np.ndarray
    rho1_w: np.ndarray
    rho1_b: np.ndarray
    rho2_w: np.ndarray
    rho2_b: np.ndarray

    def as_list(self) -> list:
        """All parameter arrays in a fixed order (shared with Adam state)."""
        out = []
        for w, b in zip(self.trunk_w, self.trunk_b):
            out.extend([w, b])
        out.extend([self.sigma_w, self.sigma_b, self.rho1_w, self.rho1_b,
                    self.rho2_w, self.rho2_b])
        return out

    def copy(self) -> "NetParams":
        return NetParams(
            trunk_w=[w.copy() for w in self.trunk_w],
            trunk_b=[b.copy() for b in self.trunk_b],
            sigma_w=self.sigma_w.copy(), sigma_b=self.sigma_b.copy(),
            rho1_w=self.rho1_w.copy(), rho1_b=self.rho1_b.copy(),
            rho2_w=self.rho2_w.copy(), rho2_b=self.rho2_b.copy(),
        )

    def count(self) -> int:
        return sum(p.size for p in self.as_list())

    def finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.as_list())


def expected_param_count(cfg: NetConfig) -> int:
    """Closed-form parameter count implied by the architecture config."""
    w, d = cfg.width, cfg.pos_dim
    n = (d + 1) * w                                   # first trunk layer
    n += (cfg.skip_layer - 1) * (w + 1) * w           # up to the skip
    n += (w + d + 1) * w                              # layer after the skip
    n += (cfg.trunk_depth - cfg.skip_layer - 1) * (w + 1) * w
    n += (w + 1) * (w + 1)                            # feature + scalar sigma
    n += (w + cfg.dir_dim + 1) * cfg.rho_width        # rho hidden
    n += cfg.rho_width + 1                            # rho output
    return n


OUTPUT_BIAS_INIT = 0.1


def init_params(cfg: NetConfig, seed: int) -> NetParams:
    """Fan-in-scaled uniform initialization, deterministic per seed.

    The two scalar output channels get a positive bias so they start alive:
    with ReLU outputs and a product integrand, a head whose pre-activation
    starts negative over the whole domain would receive exactly zero gradient
    forever.
    """
    rng = np.random.default_rng(seed)

    def layer(n_out, n_in):
        s = 1.0 / np.sqrt(n_in)
        return (rng.uniform(-s, s, size=(n_out, n_in)),
                rng.uniform(-s, s, size=n_out))

    w_, d = cfg.width, cfg.pos_dim
    trunk_w, trunk_b = [], []
    in_dim = d
    for i in range(cfg.trunk_depth):
        w, b = layer(w_, in_dim)
        trunk_w.append(w)
        trunk_b.append(b)
        in_dim = w_ + d if i + 1 == cfg.skip_layer else w_
    sw, sb = layer(w_ + 1, w_)
    sb[w_] = OUTPUT_BIAS_INIT          # scalar density channel
    r1w, r1b = layer(cfg.rho_width, w_ + cfg.dir_dim)
    r2w, r2b = layer(1, cfg.rho_width)
    r2b[0] = OUTPUT_BIAS_INIT          # scalar reflectance channel
    return NetParams(trunk_w, trunk_b, sw, sb, r1w, r1b, r2w, r2b)


class NeuralField:
    """Trainable field; `query` evaluates, `query_cached`/`vjp` differentiate.

    Queries are read-only in the parameters; the out-of-bounds clamp counter
    is the only mutable statistic.
    """

    def __init__(self, cfg: NetConfig, params: NetParams | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        self.oob_count = 0

    @property
    def bounds(self) -> np.ndarray:
        """Scene box (3, 2) implied by the position normalization bounds."""
        return self.cfg.encoding.pos_bounds

    def query(self, positions: np.ndarray, directions: np.ndarray):
        """Evaluate (sigma, rho) at (N, 3) positions and (N, 2) directions."""
        sigma, rho, _ = self._forward(positions, directions, keep=False)
        return sigma, rho

    def query_cached(self, positions: np.ndarray, directions: np.ndarray):
        """Like `query` but also returns the activation cache for `vjp`."""
        return self._forward(positions, directions, keep=True)

    def _forward(self, positions, directions, keep):
        if not self.params.finite():
            raise NonFiniteParameterError("network parameters are not finite")
        enc = self.cfg.encoding
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        pn, oob_p = _normalize(positions, enc.pos_bounds)
        dn, oob_d = _normalize(directions, enc.dir_bounds)
        self.oob_count += oob_p + oob_d
        e_p = encode_scalars(pn, enc.n_freq_pos)
        e_d = encode_scalars(dn, enc.n_freq_dir)

        p = self.params
        h = e_p
        pre = []      # pre-activations per trunk layer
        inputs = []   # layer inputs (needed for weight gradients)
        for i, (w, b) in enumerate(zip(p.trunk_w, p.trunk_b)):
            inputs.append(h)
            z = h @ w.T + b
            pre.append(z)
            h = _relu(z)
            if i + 1 == self.cfg.skip_layer:
                h = np.concatenate([h, e_p], axis=1)
        trunk_out = h

        u = trunk_out @ p.sigma_w.T + p.sigma_b          # (N, width+1)
        feat_pre = u[:, : self.cfg.width]
        sigma_pre = u[:, self.cfg.width]
        feat = _relu(feat_pre)

        rho_in = np.concatenate([feat, e_d], axis=1)
        g_pre = rho_in @ p.rho1_w.T + p.rho1_b
        g = _relu(g_pre)
        rho_pre = (g @ p.rho2_w.T + p.rho2_b)[:, 0]

        sigma = _relu(sigma_pre)
        rho = _relu(rho_pre)
        cache = None
        if keep:
            cache = (inputs, pre, trunk_out, u, feat, rho_in, g_pre, g,
                     sigma_pre, rho_pre, e_p)
        return sigma, rho, cache

    def vjp(self, cache, d_sigma: np.ndarray, d_rho: np.ndarray) -> list:
        """Exact parameter gradient of sum(d_sigma*sigma + d_rho*rho).

        Returns arrays in `params.as_list()` order. The ReLU subgradient at 0
        is taken as 0.
        """
        (inputs, pre, trunk_out, u, feat, rho_in, g_pre, g,
         sigma_pre, rho_pre, e_p) = cache
        p = self.params
        cfg = self.cfg
        n = trunk_out.shape[0]
        d_sigma = np.asarray(d_sigma, dtype=float).reshape(n)
        d_rho = np.asarray(d_rho, dtype=float).reshape(n)

        # rho head
        d_rho_pre = d_rho * (rho_pre > 0)
        g_rho2_w = d_rho_pre[None, :] @ g                # (1, rho_width)
        g_rho2_b = np.array([d_rho_pre.sum()])
        d_g = np.outer(d_rho_pre, p.rho2_w[0]) * (g_pre > 0)
        g_rho1_w = d_g.T @ rho_in
        g_rho1_b = d_g.sum(axis=0)
        d_rho_in = d_g @ p.rho1_w
        d_feat = d_rho_in[:, : cfg.width]                # encoded dir: no params

        # sigma head (feature block + scalar channel share one layer)
        d_u = np.empty_like(u)
        d_u[:, : cfg.width] = d_feat * (u[:, : cfg.width] > 0)
        d_u[:, cfg.width] = d_sigma * (sigma_pre > 0)
        g_sigma_w = d_u.T @ trunk_out
        g_sigma_b = d_u.sum(axis=0)
        d_h = d_u @ p.sigma_w

        # trunk, unwinding the skip concatenation
        g_trunk_w = [None] * cfg.trunk_depth
        g_trunk_b = [None] * cfg.trunk_depth
        for i in range(cfg.trunk_depth - 1, -1, -1):
            if i + 1 == cfg.skip_layer:
                d_h = d_h[:, : cfg.width]                # drop the e_p block
            d_z = d_h * (pre[i] > 0)
            g_trunk_w[i] = d_z.T @ inputs[i]
            g_trunk_b[i] = d_z.sum(axis=0)
            d_h = d_z @ p.trunk_w[i]

        out = []
        for w, b in zip(g_trunk_w, g_trunk_b):
            out.extend([w, b])
        out.extend([g_sigma_w, g_sigma_b, g_rho1_w, g_rho1_b,
                    g_rho2_w, g_rho2_b])
        return out


def save_checkpoint(field_obj: NeuralField, path) -> None:
    """Write a versioned little-endian parameter checkpoint."""
    cfg = field_obj.cfg
    enc = cfg.encoding
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<6I", enc.n_freq_pos, enc.n_freq_dir,
                             cfg.trunk_depth, cfg.width, cfg.skip_layer,
                             cfg.rho_width))
        fh.write(enc.pos_bounds.astype("<f8").tobytes())
        fh.write(enc.dir_bounds.astype("<f8").tobytes())
        for i, (w, b) in enumerate(zip(field_obj.params.trunk_w,
                                       field_obj.params.trunk_b)):
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())
        p = field_obj.params
        for arr in (p.sigma_w, p.sigma_b, p.rho1_w, p.rho1_b, p.rho2_w, p.rho2_b):
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> NeuralField:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ContainerError(f"bad checkpoint magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ContainerError(f"unsupported checkpoint version {version}")
    nfp, nfd, depth, width, skip, rho_w = struct.unpack_from("<6I", raw, 6)
    off = 6 + 24
    pos_bounds = np.frombuffer(raw, "<f8", 6, off).reshape(3, 2).copy()
    off += 48
    dir_bounds = np.frombuffer(raw, "<f8", 4, off).reshape(2, 2).copy()
    off += 32
    cfg = NetConfig(
        encoding=EncodingConfig(nfp, nfd, pos_bounds, dir_bounds),
        trunk_depth=depth, width=width, skip_layer=skip, rho_width=rho_w,
    )

    def take(shape):
        nonlocal off
        size = int(np.prod(shape))
        if off + 8 * size > len(raw):
            raise ContainerError("checkpoint truncated")
        arr = np.frombuffer(raw, "<f8", size, off).reshape(shape).copy()
        off += 8 * size
        return arr

    trunk_w, trunk_b = [], []
    in_dim = cfg.pos_dim
    for i in range(depth):
        trunk_w.append(take((width, in_dim)))
        trunk_b.append(take((width,)))
        in_dim = width + cfg.pos_dim if i + 1 == skip else width
    params = NetParams(
        trunk_w, trunk_b,
        take((width + 1, width)), take((width + 1,)),
        take((rho_w, width + cfg.dir_dim)), take((rho_w,)),
        take((1, rho_w)), take((1,)),
    )
    if off != len(raw):
        raise ContainerError("checkpoint has trailing bytes")
    return NeuralField(cfg, params)
