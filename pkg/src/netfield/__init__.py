"""Neural transient fields for hidden-scene reconstruction.

A desk-scale toolkit that (a) simulates time-resolved light transport off a
relay wall with a brute-force physical model and (b) reconstructs hidden
scenes from such transients by fitting a neural field through a
differentiable spherical-wavefront renderer.
"""

from .field import (EncodingConfig, NetConfig, NeuralField, init_params,
                    load_checkpoint, save_checkpoint)
from .geometry import (EllipsoidFrame, SampleSet, cartesian_to_spherical,
                       ellipsoid_radius, ellipsoidal_jacobian,
                       ellipsoidal_to_cartesian, hemisphere_grid,
                       spherical_to_cartesian)
from .oracle import (GroundTruthScene, PhysicsConstants, ScanPattern,
                     SceneField, TransientImage, grid_scan, make_primitive_scene,
                     merge_scenes, simulate_confocal, simulate_lct_form,
                     simulate_nonconfocal)
from .render import (RenderConfig, RenderedBin, render_confocal_bin,
                     render_nonconfocal_bin, render_transient,
                     render_with_importance)
from .sampling import (AngularPDF, ChainState, SpotLossMap, build_spot_pdf,
                       coarse_pdf, mh_sample, resample_spots)
from .training import (AdamState, TrainConfig, TrainReport, adam_step,
                       lr_schedule, train_stage, train_two_stage,
                       transient_loss)
from .extract import (DepthMap, TriMesh, VoxelVolume, backproject, depth_mae,
                      depth_map, marching_cubes, query_volume)

__all__ = [n for n in dir() if not n.startswith("_")]
__version__ = "0.1.0"
