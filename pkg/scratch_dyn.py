import sys, time
import numpy as np
sys.path.insert(0, "src")
from netfield import oracle as O, training as T
from netfield.field import EncodingConfig, NetConfig, NeuralField

common = dict(dims=(64,64,64), pitch=0.01, origin=(-0.32,-0.32,0.0))
plane = O.make_primitive_scene("plane", z=0.30, extent=((-0.26,0.02),(-0.26,0.26)), **common)
sphere = O.make_primitive_scene("sphere", center=(0.13,0.0,0.42), radius=0.09, **common)
scene = O.merge_scenes(plane, sphere)
scan = O.grid_scan(8, 0.6)
measured = O.simulate_confocal(scene, scan, 128, 150e-12, n_theta=32, n_phi=32)

rng = np.random.default_rng(1)
probe = rng.uniform([-0.3,-0.3,0.22],[0.26,0.3,0.54], size=(3000,3))
pd = np.zeros((3000,2))

def study(lr0, peak, n_f, seed, epochs=4):
    enc = EncodingConfig(n_freq_pos=10, n_freq_dir=10,
        pos_bounds=np.array([[-0.30,0.26],[-0.30,0.30],[0.22,0.54]]))
    net = NetConfig(encoding=enc, trunk_depth=8, width=128, skip_layer=4, rho_width=64)
    field = NeuralField(net, seed=seed)
    cfg = T.TrainConfig(epochs_stage1=epochs, batch_size=4, n_c=32, n_f=n_f,
                        burn_in=320, seed=seed, lr_start=lr0, lr_end=lr0/10,
                        normalize_ratio=peak)
    tr = T._Trainer(field, measured, cfg)
    dead = sum(m[2] + np.sum(tr.data[e, m[1]]**2) for e, m in enumerate(tr.entry_meta)) / 16
    sh = np.random.default_rng(0)
    step = 0; total = epochs*16
    hist = []
    for ep in range(epochs):
        order = sh.permutation(64)
        el = []
        for lo in range(0,64,4):
            lr = T.lr_schedule(step, total, cfg)
            el.append(tr._step(order[lo:lo+4], lr, step)); step += 1
        s,r = field.query(probe, pd)
        hist.append((np.mean(el), float(s.max()), float((s*r).max())))
    msg = " | ".join(f"{l:.2e} s{sm:.2f} a{am:.3f}" for l,sm,am in hist)
    print(f"lr{lr0:g} peak{peak:g} nf{n_f} seed{seed}: dead~{dead:.2e} :: {msg}", flush=True)

study(1e-3, 1.0, 1024, 0)
study(3e-3, 1.0, 1024, 0)
study(1e-3, 1.0, 1024, 5)
study(1e-3, 2.0, 1024, 0)
study(1e-3, 1.0, 0, 0)
study(1e-3, 1.0, 1024, 7)
