"""Dynamic part-based reconstruction with superquadric primitives."""
from .control import ControlConfig, ControlReport, clone_pass, control_step, merge_pass, prune_pass
from .data import Dataset, DatasetManifest, FrameObservation, ObservationBatch, TrackingGT
from .deform import DeformNet, PosEncConfig, deform, inverse_deform, positional_encode
from .elements import ElementFrame, ElementSet, element_frame, nearest_neighbors_3, scatter_elements
from .geometry import (EPS_MAX, EPS_MIN, Pose, PrimitiveState, SuperquadricShape, TriMesh, build_mesh,
                       implicit_value, matrix_to_rot6d, overlap_ratio, rot6d_to_matrix, sq_map, sq_volume)
from .losses import (LossBreakdown, LossWeights, loss_back, loss_fit, loss_overlap, loss_parsimony,
                     loss_smooth, loss_trans, loss_volume, total_loss)
from .metrics import PrimitiveSequence, dynamic_chamfer, dynamic_emd, predict_tracks, tracking_metrics
from .model import SceneModel
from .optim import AdamState, adam_step, check_gradients, gradients
from .scenegen import ArticulationSpec, builtin_scene, generate_sequence
from .trainer import TrainConfig, initialize, refine, train

__version__ = "0.1.0"
