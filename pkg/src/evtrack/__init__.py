"""Differentiable event-stream simulation and non-rigid 3D tracking."""

from .errors import (AlignmentError, BehindCameraError, ConfigError,
                     EventFormatError, EvtrackError, MeshError, MetricError,
                     NonFiniteObjectiveError, ParameterShapeError, TrackingError)
from .geometry import (Adjacency, ArticulatedModel, GeodesicPaths, ParamSet,
                       RigidTransform, TriMesh, apply_rigid, build_adjacency,
                       deform_articulated, geodesic_distances, load_obj,
                       posed_joints, posed_vertices, procrustes_align, save_obj,
                       subsample_vertices, template_geodesics)
from .render import (Camera, GrayImage, RasterSettings, project, render_gray,
                     render_with_depth, save_pgm)
from .events import (Event, EventFrame, EventStream, ThresholdParams, accumulate,
                     adaptive_next_timestamp, filter_noise, frame_windows,
                     generate_event_frame, load_events, load_events_binary,
                     load_events_text, save_events_binary, save_events_text,
                     smooth_threshold, synth_events_from_images)
from .objective import (EventMask, FrameContext, ObjectiveWeights, e_event, e_geo,
                        e_iso, e_no_event, e_reg, e_sil, e_top, total_mesh,
                        total_parametric)
from .optim import (FitSchedule, FrameFit, OptimizerState, TrackResult, TrackSetup,
                    adam_step, fd_gradient, fit_frame, gradient, initial_params,
                    track_sequence, value_and_grad)
from .metrics import SequenceGT, e_3d, e_joint3d, write_metrics_csv
from .config import RunConfig, write_manifest

__version__ = "0.1.0"
