"""Multi-room WiFi-CSI human presence detection.

Pipeline: CSI amplitude normalization -> dynamic/static feature windows ->
conditional dual-GRU network with time-selective attention -> per-pair case
probabilities -> per-room merging and multi-pair voting. A seeded synthetic
CSI generator makes every stage trainable and testable at desk scale.
"""

from .csi import AmplitudeFrame, CsiFrame, NormalizedFrame, StreamHeader
from .das import DasSample, FusedMoving, MovingFrame, ReferenceSpatial, SpatialWindow
from .model import ForwardTrace, ModelConfig, ModelParams, forward
from .synth import EnvironmentProfile, GenConfig, MotionModel, gen_stream
from .training import TrainConfig, TrainHistory, train
from .voting import PairPrediction, RoomDecision, RoomProbability, predict_rooms

__version__ = "0.1.0"
