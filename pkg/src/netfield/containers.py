"""Binary containers, graymap/mesh writers, run configuration and reports.

All binary formats are little-endian and round-trip byte-identically:

  transients ("NTFT"): magic, version u16, flags u16 (bit0 = confocal),
    n_entries u32, n_bins u32, bin_width in picoseconds f64, c in m/s f64,
    per-entry spot coordinates (ill_x, ill_y, det_x, det_y as f64 meters),
    then the row-major float32 histogram payload.

  volumes ("NTFV"): magic, dims 3*u32, pitch f64, origin 3*f64, then the two
    float32 channels (sigma, rho), each nx*ny*nz in C order.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, ContainerError
from .extract import DEFAULT_ISO_FRACTION, TriMesh, VoxelVolume
from .oracle import PhysicsConstants, ScanPattern, TransientImage

TRANSIENT_MAGIC = b"NTFT"
TRANSIENT_VERSION = 1
VOLUME_MAGIC = b"NTFV"


def write_transient(image: TransientImage, path) -> None:
    scan = image.scan
    flags = 1 if scan.confocal else 0
    with open(path, "wb") as fh:
        fh.write(TRANSIENT_MAGIC)
        fh.write(struct.pack("<HHII", TRANSIENT_VERSION, flags,
                             len(scan), image.n_bins))
        fh.write(struct.pack("<dd", image.bin_width * 1e12, image.constants.c))
        spots = np.concatenate([scan.illumination, scan.detection], axis=1)
        fh.write(np.ascontiguousarray(spots, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(image.data, dtype="<f4").tobytes())


def read_transient(path, constants: PhysicsConstants | None = None) -> TransientImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != TRANSIENT_MAGIC:
        raise ContainerError(f"bad transient magic {raw[:4]!r}")
    version, flags, n_entries, n_bins = struct.unpack_from("<HHII", raw, 4)
    if version != TRANSIENT_VERSION:
        raise ContainerError(f"unsupported transient version {version}")
    bin_width_ps, c = struct.unpack_from("<dd", raw, 16)
    off = 32
    need = off + 32 * n_entries + 4 * n_entries * n_bins
    if len(raw) != need:
        raise ContainerError(f"transient payload length {len(raw)} != {need}")
    spots = np.frombuffer(raw, "<f8", 4 * n_entries, off).reshape(n_entries, 4)
    off += 32 * n_entries
    data = np.frombuffer(raw, "<f4", n_entries * n_bins, off).astype(float)
    scan = ScanPattern(spots[:, :2].copy(), spots[:, 2:].copy())
    if bool(flags & 1) != scan.confocal:
        raise ContainerError("confocal flag contradicts the spot list")
    base = constants or PhysicsConstants()
    consts = PhysicsConstants(c=c, gamma0=base.gamma0, a_atten=base.a_atten)
    return TransientImage(scan, int(n_bins), bin_width_ps * 1e-12,
                          data.reshape(n_entries, n_bins), consts)


def write_volume(vol: VoxelVolume, path) -> None:
    nx, ny, nz = vol.dims
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<III", nx, ny, nz))
        fh.write(struct.pack("<d", vol.pitch))
        fh.write(np.asarray(vol.origin, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(vol.sigma, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(vol.rho, dtype="<f4").tobytes())


def read_volume(path) -> VoxelVolume:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != VOLUME_MAGIC:
        raise ContainerError(f"bad volume magic {raw[:4]!r}")
    nx, ny, nz = struct.unpack_from("<III", raw, 4)
    (pitch,) = struct.unpack_from("<d", raw, 16)
    origin = np.frombuffer(raw, "<f8", 3, 24).copy()
    off = 48
    n = nx * ny * nz
    if len(raw) != off + 8 * n:
        raise ContainerError("volume payload length mismatch")
    sigma = np.frombuffer(raw, "<f4", n, off).astype(float).reshape(nx, ny, nz)
    rho = np.frombuffer(raw, "<f4", n, off + 4 * n).astype(float).reshape(nx, ny, nz)
    return VoxelVolume(sigma, rho, float(pitch), origin)


def write_pgm(values: np.ndarray, path) -> None:
    """8-bit binary portable graymap, min-max normalized, byte-deterministic."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        b = np.round((v - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        b = np.zeros(v.shape, dtype=np.uint8)
    h, w = b.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(b.tobytes())


def write_mesh(mesh: TriMesh, path) -> None:
    """ASCII polygon file with "v x y z" and 1-based "f i j k" records."""
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for i, j, k in mesh.faces + 1:
            fh.write(f"f {i} {j} {k}\n")


# ---------------------------------------------------------------------------
# run configuration: flat key=value text with a closed key registry


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s}")


# key -> (parser, default)
RUN_CONFIG_KEYS = {
    "seed": (int, 0),
    "threads": (int, 0),
    "scene.kind": (str, "plane"),
    "scene.dims": (int, 64),
    "scene.pitch": (float, 0.01),
    "scene.origin_x": (float, -0.32),
    "scene.origin_y": (float, -0.32),
    "scene.sigma": (float, 1.0),
    "scene.rho": (float, 1.0),
    "scan.n": (int, 16),
    "scan.extent": (float, 0.6),
    "scan.offset_x": (float, 0.0),
    "scan.offset_y": (float, 0.0),
    "bins.count": (int, 128),
    "bins.width_ps": (float, 100.0),
    "sim.quad": (int, 64),
    "sim.occlusion": (_parse_bool, False),
    "field.n_freq_pos": (int, 10),
    "field.n_freq_dir": (int, 10),
    "field.width": (int, 256),
    "field.depth": (int, 8),
    "field.skip_layer": (int, 4),
    "field.rho_width": (int, 128),
    "bounds.x_lo": (float, -0.32), "bounds.x_hi": (float, 0.32),
    "bounds.y_lo": (float, -0.32), "bounds.y_hi": (float, 0.32),
    "bounds.z_lo": (float, 0.0), "bounds.z_hi": (float, 0.64),
    "train.epochs_stage1": (int, 1),
    "train.epochs_stage2": (int, 1),
    "train.batch_size": (int, 4),
    "train.lr_start": (float, 1e-3),
    "train.lr_end": (float, 1e-4),
    "train.adam_beta1": (float, 0.9),
    "train.adam_beta2": (float, 0.999),
    "train.adam_eps": (float, 1e-7),
    "train.n_c": (int, 32),
    "train.n_f": (int, 0),
    "train.burn_in": (int, -1),
    "train.occlusion": (_parse_bool, False),
    "train.n_march": (int, 16),
    "train.epsilon_mix": (float, 0.05),
    "train.normalize": (_parse_bool, True),
    "extract.dims": (int, 32),
    "extract.iso_frac": (float, DEFAULT_ISO_FRACTION),
}


def default_run_config() -> dict:
    return {k: d for k, (_, d) in RUN_CONFIG_KEYS.items()}


def parse_run_config(text: str) -> dict:
    """Parse key=value lines; unknown keys are hard errors."""
    cfg = default_run_config()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = body.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in RUN_CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        parser, _ = RUN_CONFIG_KEYS[key]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return cfg


def load_run_config(path) -> dict:
    with open(path) as fh:
        return parse_run_config(fh.read())


def format_run_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def write_report(report, cfg: dict, path) -> None:
    """Line-oriented training report; wall-clock lives on a comment line so
    repeat seeded runs produce identical non-comment content (and identical
    files, timing aside)."""
    lines = ["# netfield training report"]
    for k in sorted(cfg):
        lines.append(f"config {k} = {cfg[k]}")
    lines.append(f"seed {report.seed}")
    lines.append(f"data_scale {float(report.data_scale)!r}")
    for stage, epoch, loss in report.epoch_losses:
        lines.append(f"epoch {stage} {epoch} {float(loss)!r}")
    for stage in sorted(report.spot_losses):
        for e, v in enumerate(report.spot_losses[stage]):
            lines.append(f"spot_loss {stage} {e} {float(v)!r}")
    if report.spot_pdf is not None:
        for e, v in enumerate(report.spot_pdf):
            lines.append(f"spot_pdf {e} {float(v)!r}")
    lines.append(f"adam_skipped {report.adam_skipped}")
    lines.append(f"# wallclock_s {report.wallclock_s:.3f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
