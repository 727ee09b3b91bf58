import numpy as np
import pytest

from netfield import containers as C
from netfield import oracle as O
from netfield.errors import ConfigError, ContainerError
from netfield.extract import TriMesh, VoxelVolume

BW = 100e-12


def sample_image(confocal=True):
    rng = np.random.default_rng(3)
    scan = O.grid_scan(3, 0.4,
                       detection_offset=None if confocal else (0.05, -0.02))
    data = rng.uniform(0.0, 2.0, size=(9, 16))
    return O.TransientImage(scan, 16, BW, data)


def test_transient_round_trip_bytes(tmp_path):
    img = sample_image()
    p1 = tmp_path / "a.ntft"
    p2 = tmp_path / "b.ntft"
    C.write_transient(img, p1)
    back = C.read_transient(p1)
    C.write_transient(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert back.n_bins == img.n_bins
    assert np.isclose(back.bin_width, img.bin_width)
    assert back.scan.confocal
    assert np.allclose(back.data, img.data.astype(np.float32))


def test_transient_nonconfocal_flag(tmp_path):
    img = sample_image(confocal=False)
    p = tmp_path / "n.ntft"
    C.write_transient(img, p)
    back = C.read_transient(p)
    assert not back.scan.confocal
    assert np.allclose(back.scan.detection, img.scan.detection)


def test_transient_bad_magic(tmp_path):
    p = tmp_path / "bad.ntft"
    p.write_bytes(b"JUNKxxxxxxxxxxxxxxxx")
    with pytest.raises(ContainerError):
        C.read_transient(p)


def test_transient_truncated(tmp_path):
    img = sample_image()
    p = tmp_path / "t.ntft"
    C.write_transient(img, p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(ContainerError):
        C.read_transient(p)


def test_volume_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    vol = VoxelVolume(rng.uniform(size=(4, 5, 6)), rng.uniform(size=(4, 5, 6)),
                      0.02, np.array([-0.1, -0.2, 0.0]))
    p1 = tmp_path / "v.ntfv"
    p2 = tmp_path / "w.ntfv"
    C.write_volume(vol, p1)
    back = C.read_volume(p1)
    C.write_volume(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert back.dims == (4, 5, 6)
    assert back.pitch == 0.02
    assert np.allclose(back.sigma, vol.sigma.astype(np.float32))


def test_volume_length_mismatch(tmp_path):
    vol = VoxelVolume(np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), 0.01, np.zeros(3))
    p = tmp_path / "v.ntfv"
    C.write_volume(vol, p)
    p.write_bytes(p.read_bytes() + b"\x00\x00")
    with pytest.raises(ContainerError):
        C.read_volume(p)


def test_pgm_format_and_determinism(tmp_path):
    rng = np.random.default_rng(7)
    img = rng.uniform(size=(5, 9))
    p1 = tmp_path / "a.pgm"
    p2 = tmp_path / "b.pgm"
    C.write_pgm(img, p1)
    C.write_pgm(img, p2)
    raw = p1.read_bytes()
    assert raw.startswith(b"P5\n9 5\n255\n")
    assert len(raw) == len(b"P5\n9 5\n255\n") + 45
    assert raw == p2.read_bytes()


def test_pgm_flat_image_black(tmp_path):
    p = tmp_path / "z.pgm"
    C.write_pgm(np.zeros((3, 3)), p)
    assert p.read_bytes().endswith(b"\x00" * 9)


def test_mesh_writer(tmp_path):
    mesh = TriMesh(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                   np.array([[0, 1, 2]]))
    p = tmp_path / "m.obj"
    C.write_mesh(mesh, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "v 0 0 0"
    assert lines[-1] == "f 1 2 3"


# --- run config -------------------------------------------------------------------


def test_run_config_defaults_complete():
    cfg = C.default_run_config()
    assert cfg["train.n_c"] == 32
    assert cfg["scene.kind"] == "plane"


def test_run_config_parse_and_round_trip():
    text = "seed = 7\ntrain.n_f = 256  # fine samples\n\n# comment\n"
    cfg = C.parse_run_config(text)
    assert cfg["seed"] == 7
    assert cfg["train.n_f"] == 256
    again = C.parse_run_config(C.format_run_config(cfg))
    assert again == cfg


def test_run_config_unknown_key():
    with pytest.raises(ConfigError):
        C.parse_run_config("train.nc = 32\n")


def test_run_config_bad_value():
    with pytest.raises(ConfigError):
        C.parse_run_config("train.n_c = many\n")
    with pytest.raises(ConfigError):
        C.parse_run_config("just a line\n")


def test_report_deterministic_content(tmp_path):
    from netfield.training import TrainReport

    rep = TrainReport(seed=3, data_scale=2.0)
    rep.epoch_losses = [(1, 0, 0.5), (1, 1, 0.25)]
    rep.spot_losses[1] = np.array([0.1, 0.2])
    rep.spot_pdf = np.array([0.5, 0.5])
    rep.wallclock_s = 1.23
    cfg = C.default_run_config()
    p1 = tmp_path / "r1.txt"
    p2 = tmp_path / "r2.txt"
    C.write_report(rep, cfg, p1)
    rep.wallclock_s = 9.87   # timing may differ between runs
    C.write_report(rep, cfg, p2)

    def content(p):
        return [ln for ln in p.read_text().splitlines()
                if not ln.startswith("#")]

    assert content(p1) == content(p2)
    assert any(ln.startswith("config train.n_c") for ln in content(p1))
