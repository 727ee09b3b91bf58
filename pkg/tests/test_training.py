import numpy as np
import pytest

from netfield import oracle as O
from netfield import training as T
from netfield.errors import ShapeMismatchError
from netfield.field import EncodingConfig, NetConfig, NeuralField

BW = 100e-12


def small_field(seed=0, z_lo=0.2, z_hi=0.4, half=0.12, width=16):
    enc = EncodingConfig(
        n_freq_pos=4, n_freq_dir=4,
        pos_bounds=np.array([[-half, half], [-half, half], [z_lo, z_hi]]))
    cfg = NetConfig(encoding=enc, trunk_depth=4, width=width, skip_layer=2,
                    rho_width=8)
    return NeuralField(cfg, seed=seed)


def voxel_scene():
    sigma = np.zeros((16, 16, 16))
    sigma[8, 8, 11] = 1.0         # center (0.0125, 0.0125, 0.2875)
    scene = O.GroundTruthScene(sigma, np.where(sigma > 0, 1.0, 0.0), 0.025,
                               origin=(-0.2, -0.2, 0.0))
    return scene


def measured_image(scan_n=8, n_bins=64, quad=12):
    scene = voxel_scene()
    scan = O.grid_scan(scan_n, 0.3)
    return O.simulate_confocal(scene, scan, n_bins, BW, n_theta=quad,
                               n_phi=quad)


# --- loss ---------------------------------------------------------------------


def test_loss_identical_zero():
    img = measured_image(2)
    total, per_entry = T.transient_loss(img, img)
    assert total == 0.0
    assert np.all(per_entry == 0.0)


def test_loss_single_bin_difference():
    img = measured_image(2)
    other = np.array(img.data, copy=True)
    other[1, 5] += 2.0
    total, per_entry = T.transient_loss(other, img)
    assert np.isclose(total, 4.0)
    assert np.isclose(per_entry[1], 4.0)
    assert per_entry[0] == 0.0


def test_loss_gradient_is_two_diff():
    rng = np.random.default_rng(0)
    pred = rng.uniform(size=(3, 8))
    meas = rng.uniform(size=(3, 8))
    h = 1e-7
    g_analytic = 2.0 * (pred - meas)
    for idx in [(0, 0), (1, 3), (2, 7)]:
        up = pred.copy()
        up[idx] += h
        dn = pred.copy()
        dn[idx] -= h
        fd = (T.transient_loss(up, meas)[0] - T.transient_loss(dn, meas)[0]) / (2 * h)
        assert abs(fd - g_analytic[idx]) < 1e-6


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        T.transient_loss(np.zeros((2, 4)), np.zeros((2, 5)))


# --- adam ----------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0]), np.array([[3.0]])]
    st = T.AdamState.for_params(p)
    T.adam_step(p, [np.zeros(2), np.zeros((1, 1))], st, lr=0.1)
    assert np.array_equal(p[0], [1.0, -2.0])
    assert p[1][0, 0] == 3.0
    assert st.step == 1


def test_adam_hand_trace_three_steps():
    b1, b2, eps, lr = 0.9, 0.999, 1e-7, 0.01
    T._set_adam_coeffs(T.TrainConfig(adam_beta1=b1, adam_beta2=b2, adam_eps=eps))
    p = [np.array([0.5])]
    st = T.AdamState.for_params(p)
    m = v = 0.0
    x = 0.5
    for t in range(1, 4):
        T.adam_step(p, [np.array([1.0])], st, lr)
        m = b1 * m + (1 - b1) * 1.0
        v = b2 * v + (1 - b2) * 1.0
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert np.isclose(p[0][0], x, rtol=0, atol=1e-15)


def test_adam_skips_nonfinite():
    p = [np.array([1.0])]
    st = T.AdamState.for_params(p)
    T.adam_step(p, [np.array([np.nan])], st, lr=0.1)
    assert p[0][0] == 1.0
    assert st.skipped == 1
    assert st.step == 0


def test_adam_deterministic():
    for _ in range(2):
        p = [np.array([1.0, 2.0])]
        st = T.AdamState.for_params(p)
        T.adam_step(p, [np.array([0.3, -0.7])], st, lr=0.05)
        if _ == 0:
            first = p[0].copy()
    assert np.array_equal(first, p[0])


# --- schedule --------------------------------------------------------------------


def test_lr_schedule_endpoints_exact():
    cfg = T.TrainConfig()
    assert T.lr_schedule(0, 100, cfg) == 1e-3
    assert T.lr_schedule(100, 100, cfg) == 1e-4


def test_lr_schedule_geometric_midpoint():
    cfg = T.TrainConfig()
    assert np.isclose(T.lr_schedule(50, 100, cfg), np.sqrt(1e-3 * 1e-4),
                      rtol=1e-12)


# --- training loops ---------------------------------------------------------------


def test_zero_epochs_leaves_field_unchanged():
    field = small_field()
    before = [a.copy() for a in field.params.as_list()]
    measured = measured_image(2)
    cfg = T.TrainConfig(epochs_stage1=0, n_c=8, seed=1)
    T.train_stage(field, measured, np.arange(len(measured.scan)), cfg, 0)
    for a, b in zip(before, field.params.as_list()):
        assert np.array_equal(a, b)


def test_training_reduces_loss_single_voxel():
    measured = measured_image(8, 64, quad=12)
    cfg = T.TrainConfig(epochs_stage1=5, batch_size=4, n_c=12, n_f=0, seed=3)
    field = small_field(seed=3)
    initial = T.evaluate_spot_losses(field, measured, cfg).sum()
    T.train_stage(field, measured, np.arange(len(measured.scan)), cfg,
                  cfg.epochs_stage1)
    final = T.evaluate_spot_losses(field, measured, cfg).sum()
    assert final < 0.05 * initial, (initial, final)


def test_training_deterministic_same_seed():
    measured = measured_image(4, 48, quad=8)
    losses = []
    for _ in range(2):
        field = small_field(seed=5)
        cfg = T.TrainConfig(epochs_stage1=1, batch_size=4, n_c=8, n_f=0, seed=9)
        rep = T.train_stage(field, measured, np.arange(len(measured.scan)),
                            cfg, 1)
        losses.append(rep.epoch_losses[-1][2])
    assert losses[0] == losses[1]


def test_training_with_fine_sampling_runs_and_descends():
    measured = measured_image(4, 48, quad=8)
    field = small_field(seed=7)
    cfg = T.TrainConfig(epochs_stage1=2, batch_size=4, n_c=8, n_f=64,
                        burn_in=40, seed=11)
    initial = T.evaluate_spot_losses(field, measured, cfg).sum()
    T.train_stage(field, measured, np.arange(len(measured.scan)), cfg, 2)
    final = T.evaluate_spot_losses(field, measured, cfg).sum()
    assert final < initial


def test_two_stage_report_and_pdf():
    measured = measured_image(4, 48, quad=8)
    field = small_field(seed=13)
    cfg = T.TrainConfig(epochs_stage1=1, epochs_stage2=1, batch_size=4,
                        n_c=8, n_f=0, seed=17)
    report = T.train_two_stage(field, measured, cfg)
    assert np.isclose(report.spot_pdf.sum(), 1.0)
    assert 1 in report.spot_losses and 2 in report.spot_losses
    stages = [s for s, _, _ in report.epoch_losses]
    assert stages == [1, 2]
    assert report.wallclock_s > 0


def test_two_stage_epsilon_one_is_uniform():
    measured = measured_image(2, 32, quad=8)
    field = small_field(seed=19)
    cfg = T.TrainConfig(epochs_stage1=1, epochs_stage2=0, batch_size=4,
                        n_c=8, n_f=0, seed=23, epsilon_mix=1.0)
    report = T.train_two_stage(field, measured, cfg)
    assert np.allclose(report.spot_pdf, 1.0 / len(measured.scan))
