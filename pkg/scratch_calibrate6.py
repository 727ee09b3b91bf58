"""Calibration run for the desk-scale end-to-end criterion (not shipped)."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from netfield import extract as E
from netfield import oracle as O
from netfield import training as T
from netfield.field import EncodingConfig, NetConfig, NeuralField
from netfield.oracle import SceneField

C = 3.0e8
BW = 150e-12      # shell step 2.25 cm

t0 = time.time()
common = dict(dims=(64, 64, 64), pitch=0.01, origin=(-0.32, -0.32, 0.0))
plane = O.make_primitive_scene("plane", z=0.30,
                               extent=((-0.26, 0.02), (-0.26, 0.26)), **common)
sphere = O.make_primitive_scene("sphere", center=(0.13, 0.0, 0.42),
                                radius=0.09, **common)
scene = O.merge_scenes(plane, sphere)
scan = O.grid_scan(16, 0.6)
measured = O.simulate_confocal(scene, scan, 128, BW, n_theta=64, n_phi=64)
print(f"simulated in {time.time()-t0:.1f}s; nonzero bins "
      f"{(measured.data > 0).sum()}", flush=True)

enc = EncodingConfig(
    n_freq_pos=10, n_freq_dir=10,
    pos_bounds=np.array([[-0.30, 0.26], [-0.30, 0.30], [0.22, 0.54]]))
net = NetConfig(encoding=enc, trunk_depth=8, width=128, skip_layer=4,
                rho_width=64)
field = NeuralField(net, seed=0)

cfg = T.TrainConfig(epochs_stage1=1, epochs_stage2=1, batch_size=4,
                    n_c=32, n_f=1024, burn_in=320, seed=0)
t1 = time.time()
report = T.train_two_stage(field, measured, cfg)
t_train = time.time() - t1
print(f"train: {t_train/60:.1f} min; epoch losses "
      f"{[(s, round(l, 6)) for s, _, l in report.epoch_losses]}", flush=True)

bounds = np.array([[-0.28, 0.24], [-0.28, 0.28], [0.24, 0.52]])
dims = (26, 28, 14)
vol = E.query_volume(field, dims, bounds)
gt_vol = E.query_volume(SceneField(scene), dims, bounds)
dm = E.depth_map(vol, 0.3 * vol.sigma.max())
gt_dm = E.depth_map(gt_vol, 0.3 * gt_vol.sigma.max())
mae, cover = E.depth_mae(dm, gt_dm)
print(f"MAE {mae*100:.2f} cm (target < 4 cm), overlap {cover:.2f}, "
      f"recon coverage {dm.coverage:.2f} vs gt {gt_dm.coverage:.2f}")
print(f"total wall {(time.time()-t0)/60:.1f} min")
