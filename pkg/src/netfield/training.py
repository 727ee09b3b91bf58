"""Optimization loop: l2 transient loss, Adam, and the two-stage schedule.

Each step renders every in-range bin of a small batch of scan entries,
compares against the measured histograms with a sum-of-squares loss, and
backpropagates exactly through the quadrature into the field parameters.
With fine sampling enabled the per-bin estimate is the average of the coarse
quadrature and the Metropolis-Hastings importance sum; sample locations are
frozen per step (no gradient flows through chain positions).

Stage one trains on all entries uniformly; stage two redraws the entry
multiset from the per-spot loss pdf and warm-starts from stage one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import render as R
from .errors import ShapeMismatchError
from .field import NeuralField
from .geometry import (GAMMA_CONFOCAL_EPS, hemisphere_grid,
                       point_box_radial_range)
from .oracle import TransientImage
from .sampling import (AngularPDF, SampleSet, build_spot_pdf, mh_sample_batch,
                       resample_spots)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one or two training stages."""

    epochs_stage1: int = 5
    epochs_stage2: int = 5
    batch_size: int = 4
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7
    n_c: int = 32                 # coarse pass is n_c x n_c
    n_f: int = 0                  # fine samples per bin (0 = quadrature only)
    burn_in: int = -1             # -1 = 10 * n_c
    occlusion_aware: bool = False
    n_march: int = 16
    epsilon_mix: float = 0.05     # uniform mixture in the spot pdf
    normalize_data: bool = True   # rescale measured data (global scale is free)
    normalize_ratio: float = 1.0  # measured peak -> this multiple of the
                                  # initial field's own peak prediction
    seed: int = 0

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def effective_burn_in(self) -> int:
        return 10 * self.n_c if self.burn_in < 0 else self.burn_in

    def render_config(self, constants) -> R.RenderConfig:
        return R.RenderConfig(n_theta=self.n_c, n_phi=self.n_c,
                              occlusion_aware=self.occlusion_aware,
                              n_march=self.n_march, constants=constants)


@dataclass
class AdamState:
    """First/second moment buffers plus step and skip counters."""

    m: list
    v: list
    step: int = 0
    skipped: int = 0

    @classmethod
    def for_params(cls, params_list) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params_list],
                   v=[np.zeros_like(p) for p in params_list])


def transient_loss(predicted, measured):
    """Sum of squared differences plus the per-entry decomposition."""
    p = predicted.data if isinstance(predicted, TransientImage) else np.asarray(predicted)
    m = measured.data if isinstance(measured, TransientImage) else np.asarray(measured)
    if p.shape != m.shape:
        raise ShapeMismatchError(f"shape {p.shape} vs {m.shape}")
    diff = p - m
    per_entry = np.sum(diff * diff, axis=-1)
    return float(per_entry.sum()), per_entry


def adam_step(params_list, grads_list, state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update, in place; skips non-finite grads."""
    if len(params_list) != len(grads_list):
        raise ShapeMismatchError("parameter/gradient list lengths differ")
    for p, g in zip(params_list, grads_list):
        if p.shape != g.shape:
            raise ShapeMismatchError("parameter/gradient shape mismatch")
    if not all(np.isfinite(g).all() for g in grads_list):
        state.skipped += 1
        return
    state.step += 1
    t = state.step
    b1, b2, eps = _ADAM_B1, _ADAM_B2, _ADAM_EPS
    for p, g, m, v in zip(params_list, grads_list, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# module-level Adam coefficients let adam_step stay a pure function of its
# arguments while the trainer installs the configured values
_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-7


def _set_adam_coeffs(cfg: TrainConfig):
    global _ADAM_B1, _ADAM_B2, _ADAM_EPS
    _ADAM_B1, _ADAM_B2, _ADAM_EPS = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Exponential decay from lr_start to lr_end with exact endpoints."""
    if step <= 0 or total_steps <= 0:
        return cfg.lr_start
    if step >= total_steps:
        return cfg.lr_end
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (step / total_steps)


@dataclass
class TrainReport:
    """Per-epoch losses, loss maps, timing and the effective configuration."""

    epoch_losses: list = dc_field(default_factory=list)   # (stage, epoch, loss)
    spot_losses: dict = dc_field(default_factory=dict)    # stage -> (N,) array
    spot_pdf: np.ndarray | None = None
    config: dict = dc_field(default_factory=dict)
    seed: int = 0
    data_scale: float = 1.0
    wallclock_s: float = 0.0
    adam_skipped: int = 0


def _active_bins(spot_or_pair, times, c, bounds, confocal):
    """Bin indices whose shell/ellipsoid can intersect the field bounds."""
    if confocal:
        spot3 = np.array([spot_or_pair[0], spot_or_pair[1], 0.0])
        rmin, rmax = point_box_radial_range(spot3, bounds)
        radii = 0.5 * c * times
        return np.nonzero((radii >= rmin) & (radii <= rmax))[0]
    p, pp = spot_or_pair
    m1 = np.array([p[0], p[1], 0.0])
    m2 = np.array([pp[0], pp[1], 0.0])
    lo1, hi1 = point_box_radial_range(m1, bounds)
    lo2, hi2 = point_box_radial_range(m2, bounds)
    s = c * times
    return np.nonzero((s >= lo1 + lo2) & (s <= hi1 + hi2))[0]


class _Trainer:
    """Internal state shared by the stage loops."""

    def __init__(self, field_obj: NeuralField, measured: TransientImage,
                 cfg: TrainConfig):
        self.field = field_obj
        self.cfg = cfg
        self.consts = measured.constants
        self.rcfg = cfg.render_config(self.consts)
        self.grid = hemisphere_grid(cfg.n_c, cfg.n_c)
        self.times = measured.bin_times()
        self.thickness = self.consts.c * measured.bin_width
        self.scan = measured.scan
        self.entry_meta = []
        for e in range(len(self.scan)):
            p = self.scan.illumination[e]
            pp = self.scan.detection[e]
            confocal = bool(np.linalg.norm(p - pp) < GAMMA_CONFOCAL_EPS)
            active = _active_bins((p, pp) if not confocal else p, self.times,
                                  self.consts.c, self.field.bounds, confocal)
            self.entry_meta.append([confocal, active, 0.0])
        scale = 1.0
        if cfg.normalize_data:
            peak = float(measured.data.max())
            pred = self._initial_peak_prediction()
            if peak > 0 and pred > 0:
                # the global gain is free; anchor the measured peak at the
                # initial field's own peak prediction so the first steps
                # neither slam the heads to zero nor starve for gradient
                scale = cfg.normalize_ratio * pred / peak
        self.scale = scale
        self.data = measured.data * scale
        for e, meta in enumerate(self.entry_meta):
            active = meta[1]
            meta[2] = float(np.sum(self.data[e] ** 2)) - float(
                np.sum(self.data[e, active] ** 2))
        _set_adam_coeffs(cfg)
        self.adam = AdamState.for_params(self.field.params.as_list())

    def _initial_peak_prediction(self) -> float:
        """Peak predicted bin of the untouched field over a few entries."""
        peak = 0.0
        step = max(1, len(self.scan) // 8)
        for e in range(0, len(self.scan), step):
            for k in self.entry_meta[e][1]:
                plan = self._plan(e, k)
                peak = max(peak, R.eval_plan(self.field, plan) * self.thickness)
        return peak

    def _plan(self, e, k):
        p = self.scan.illumination[e]
        pp = self.scan.detection[e]
        confocal = self.entry_meta[e][0]
        t = self.times[k]
        if confocal:
            return R.confocal_bin_plan(p, t, self.rcfg, self.field.bounds,
                                       grid=self.grid)
        return R.nonconfocal_bin_plan((p, pp), t, self.rcfg, self.field.bounds)

    def _step(self, batch_entries, lr, chain_seed_base):
        """One optimizer step over all in-range bins of the batch entries."""
        cfg = self.cfg
        jobs = []   # (entry, bin, plan)
        loss_const = 0.0
        for e in batch_entries:
            confocal, active, rest = self.entry_meta[e]
            loss_const += rest
            for k in active:
                plan = self._plan(e, k)
                if plan is None:
                    loss_const += self.data[e, k] ** 2
                else:
                    jobs.append((e, int(k), plan, confocal))

        fine_sets = [None] * len(jobs)
        if cfg.n_f > 0:
            # pass A: coarse values only, to expose the angular pdfs
            pdfs, chain_ids = [], []
            for j, (e, k, plan, confocal) in enumerate(jobs):
                if not confocal:
                    continue
                sig, rho = self.field.query(plan.positions, plan.directions)
                vals = np.zeros(cfg.n_c * cfg.n_c)
                # plan dropped out-of-bounds nodes; rebuild the full grid
                vals_kept = plan.node_w * sig * rho
                keep_idx = plan.grid_index
                vals[keep_idx] = vals_kept
                pdfs.append(AngularPDF.from_integrand(
                    vals.reshape(cfg.n_c, cfg.n_c)))
                chain_ids.append(j)
            if pdfs:
                seeds = [np.random.SeedSequence(
                    [cfg.seed, chain_seed_base, jobs[j][0], jobs[j][1]])
                    for j in chain_ids]
                t_f, p_f, k_f = mh_sample_batch(pdfs, cfg.n_f,
                                                cfg.effective_burn_in, seeds)
                for row, j in enumerate(chain_ids):
                    fine_sets[j] = SampleSet(theta=t_f[row], phi=p_f[row],
                                             weight=np.full(cfg.n_f, 1.0 / cfg.n_f),
                                             pdf=k_f[row])

        # pass B: gradients
        grads = None
        loss = loss_const
        for j, (e, k, plan, confocal) in enumerate(jobs):
            fine = fine_sets[j]
            target = self.data[e, k]
            if fine is None:
                tau_inst, g = self._grad_bin(plan, None, e, k, target)
            else:
                fplan = R.importance_plan(self.scan.illumination[e],
                                          self.times[k], self.rcfg,
                                          self.field.bounds, fine)
                tau_inst, g = self._grad_bin(plan, fplan, e, k, target)
            diff = tau_inst * self.thickness - target
            loss += diff * diff
            if grads is None:
                grads = g
            else:
                for a, b in zip(grads, g):
                    a += b
        if grads is not None:
            adam_step(self.field.params.as_list(), grads, self.adam, lr)
        return loss

    def _grad_bin(self, plan, fplan, e, k, target):
        """tau for one bin plus d(loss)/d(params), single forward per pass."""
        half = fplan is not None
        sig, rho, cache = self.field.query_cached(plan.positions, plan.directions)
        if plan.march_positions is not None:
            sig_m, rho_m, cache_m = self.field.query_cached(
                plan.march_positions, plan.march_directions)
            integral = np.zeros(plan.n_nodes)
            np.add.at(integral, plan.march_node, plan.march_w * sig_m)
            trans = np.exp(plan.march_coeff * integral)
        else:
            trans = 1.0
        node_term = plan.node_w * sig * rho
        tau_c = float(np.sum(node_term * trans))
        tau_f = 0.0
        if half:
            sig_f, rho_f, cache_f = self.field.query_cached(
                fplan.positions, fplan.directions)
            tau_f = float(np.sum(fplan.node_w * sig_f * rho_f))
            tau_inst = 0.5 * (tau_c + tau_f)
        else:
            tau_inst = tau_c
        # d loss / d tau_inst, with the bin's path-length thickness folded in
        d_tau = 2.0 * (tau_inst * self.thickness - target) * self.thickness
        w_c = 0.5 * d_tau if half else d_tau
        grads = self.field.vjp(cache, w_c * plan.node_w * rho * trans,
                               w_c * plan.node_w * sig * trans)
        if plan.march_positions is not None:
            d_sig_m = (w_c * plan.march_coeff * plan.march_w
                       * (node_term * trans)[plan.march_node])
            gm = self.field.vjp(cache_m, d_sig_m, np.zeros_like(rho_m))
            for a, b in zip(grads, gm):
                a += b
        if half:
            gf = self.field.vjp(cache_f, 0.5 * d_tau * fplan.node_w * rho_f,
                                0.5 * d_tau * fplan.node_w * sig_f)
            for a, b in zip(grads, gf):
                a += b
        return tau_inst, grads


def train_stage(field_obj: NeuralField, measured: TransientImage, entries,
                cfg: TrainConfig, epochs: int, stage: int = 1,
                trainer: _Trainer | None = None,
                report: TrainReport | None = None) -> TrainReport:
    """Run `epochs` over the given entry multiset; updates the field in place.

    Zero epochs leave the parameters untouched. Deterministic for a fixed
    seed and thread count.
    """
    trainer = trainer or _Trainer(field_obj, measured, cfg)
    report = report or TrainReport(seed=cfg.seed, data_scale=trainer.scale)
    entries = np.asarray(entries, dtype=int)
    n_steps_total = epochs * int(np.ceil(len(entries) / cfg.batch_size))
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 7001, stage]))
    step = 0
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(entries))
        losses = []
        for lo in range(0, len(entries), cfg.batch_size):
            batch = entries[order[lo:lo + cfg.batch_size]]
            lr = lr_schedule(step, n_steps_total, cfg)
            losses.append(trainer._step(batch, lr,
                                        chain_seed_base=stage * 100000 + step))
            step += 1
        report.epoch_losses.append((stage, epoch, float(np.mean(losses))))
    report.adam_skipped = trainer.adam.skipped
    return report


def evaluate_spot_losses(field_obj: NeuralField, measured: TransientImage,
                         cfg: TrainConfig, data_scale: float | None = None) -> np.ndarray:
    """Deterministic per-entry loss of the current field (coarse quadrature)."""
    trainer = _Trainer(field_obj, measured, cfg)
    if data_scale is not None:
        trainer.scale = data_scale
        trainer.data = measured.data * data_scale
    out = np.zeros(len(measured.scan))
    for e in range(len(measured.scan)):
        confocal, active, rest = trainer.entry_meta[e]
        total = rest
        for k in active:
            plan = trainer._plan(e, k)
            tau = R.eval_plan(trainer.field, plan) * trainer.thickness
            total += (tau - trainer.data[e, k]) ** 2
        out[e] = total
    return out


def run_stage_one(field_obj: NeuralField, measured: TransientImage,
                  cfg: TrainConfig) -> TrainReport:
    """Stage one alone: train on all entries uniformly, report spot losses."""
    t0 = time.time()
    trainer = _Trainer(field_obj, measured, cfg)
    report = TrainReport(seed=cfg.seed, data_scale=trainer.scale)
    train_stage(field_obj, measured, np.arange(len(measured.scan)), cfg,
                cfg.epochs_stage1, stage=1, trainer=trainer, report=report)
    report.spot_losses[1] = evaluate_spot_losses(field_obj, measured, cfg,
                                                 data_scale=trainer.scale)
    report.wallclock_s = time.time() - t0
    return report


def run_stage_two(field_obj: NeuralField, measured: TransientImage,
                  cfg: TrainConfig) -> TrainReport:
    """Stage two alone: resample entries from the field's current loss pdf.

    Used to resume from a stage-one checkpoint; the per-spot losses of the
    incoming field define the resampling pdf.
    """
    t0 = time.time()
    trainer = _Trainer(field_obj, measured, cfg)
    report = TrainReport(seed=cfg.seed, data_scale=trainer.scale)
    losses = evaluate_spot_losses(field_obj, measured, cfg,
                                  data_scale=trainer.scale)
    report.spot_losses[1] = losses
    spot_map = build_spot_pdf(losses, cfg.epsilon_mix)
    report.spot_pdf = spot_map.pdf
    seed2 = int(np.random.SeedSequence([cfg.seed, 9002]).generate_state(1)[0])
    entries = resample_spots(spot_map, len(measured.scan), seed=seed2)
    train_stage(field_obj, measured, entries, cfg, cfg.epochs_stage2,
                stage=2, trainer=trainer, report=report)
    report.spot_losses[2] = evaluate_spot_losses(field_obj, measured, cfg,
                                                 data_scale=trainer.scale)
    report.wallclock_s = time.time() - t0
    return report


def train_two_stage(field_obj: NeuralField, measured: TransientImage,
                    cfg: TrainConfig) -> TrainReport:
    """Stage one on all entries, then retrain on the loss-resampled multiset.

    Stage two warm-starts from the stage-one parameters; the resampled
    multiset has the original scan's size and is drawn from the mixed
    per-spot loss pdf.
    """
    t0 = time.time()
    trainer = _Trainer(field_obj, measured, cfg)
    report = TrainReport(seed=cfg.seed, data_scale=trainer.scale)
    n = len(measured.scan)
    train_stage(field_obj, measured, np.arange(n), cfg, cfg.epochs_stage1,
                stage=1, trainer=trainer, report=report)
    losses1 = evaluate_spot_losses(field_obj, measured, cfg,
                                   data_scale=trainer.scale)
    report.spot_losses[1] = losses1
    spot_map = build_spot_pdf(losses1, cfg.epsilon_mix)
    report.spot_pdf = spot_map.pdf
    stage2_entries = resample_spots(
        spot_map, n, seed=int(np.random.SeedSequence([cfg.seed, 9002]).generate_state(1)[0]))
    train_stage(field_obj, measured, stage2_entries, cfg, cfg.epochs_stage2,
                stage=2, trainer=trainer, report=report)
    report.spot_losses[2] = evaluate_spot_losses(field_obj, measured, cfg,
                                                 data_scale=trainer.scale)
    report.wallclock_s = time.time() - t0
    return report
