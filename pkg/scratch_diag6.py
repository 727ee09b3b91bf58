import sys, time
import numpy as np
sys.path.insert(0, "src")
from netfield import extract as E, oracle as O, training as T
from netfield.field import EncodingConfig, NetConfig, NeuralField, save_checkpoint
from netfield.oracle import SceneField

common = dict(dims=(64,64,64), pitch=0.01, origin=(-0.32,-0.32,0.0))
plane = O.make_primitive_scene("plane", z=0.30, extent=((-0.26,0.02),(-0.26,0.26)), **common)
sphere = O.make_primitive_scene("sphere", center=(0.13,0.0,0.42), radius=0.09, **common)
scene = O.merge_scenes(plane, sphere)
scan = O.grid_scan(16, 0.6)
measured = O.simulate_confocal(scene, scan, 128, 150e-12, n_theta=64, n_phi=64)
enc = EncodingConfig(n_freq_pos=10, n_freq_dir=10,
    pos_bounds=np.array([[-0.30,0.26],[-0.30,0.30],[0.22,0.54]]))
net = NetConfig(encoding=enc, trunk_depth=8, width=128, skip_layer=4, rho_width=64)
field = NeuralField(net, seed=0)
cfg = T.TrainConfig(epochs_stage1=1, epochs_stage2=1, batch_size=4, n_c=32, n_f=1024, burn_in=320, seed=0)
t0=time.time()
T.train_two_stage(field, measured, cfg)
print(f"train {(time.time()-t0)/60:.1f} min", flush=True)
save_checkpoint(field, "scratch_field6.ntfp")

bounds = np.array([[-0.28,0.24],[-0.28,0.28],[0.24,0.52]])
dims = (26,28,14)
vol = E.query_volume(field, dims, bounds)
gt = E.query_volume(SceneField(scene), dims, bounds)
alb = vol.albedo
print("sigma per-z mean:", np.round(vol.sigma.mean(axis=(0,1)), 4))
print("albedo per-z mean:", np.round(alb.mean(axis=(0,1)), 4))
print("sigma max", vol.sigma.max(), "albedo max", alb.max())
for name, grid_r, grid_g in (("sigma", vol.sigma, gt.sigma), ("albedo", alb, gt.albedo)):
    v_r = E.VoxelVolume(grid_r, np.ones_like(grid_r), vol.pitch, vol.origin)
    v_g = E.VoxelVolume(grid_g, np.ones_like(grid_g), vol.pitch, vol.origin)
    dm = E.depth_map(v_r, 0.3*grid_r.max())
    dg = E.depth_map(v_g, 0.3*grid_g.max())
    mae, cov = E.depth_mae(dm, dg)
    print(f"{name}: MAE {mae*100:.2f} cm, overlap {cov:.2f}, rec coverage {dm.coverage:.2f} gt {dg.coverage:.2f}")
