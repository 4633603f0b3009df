"""Visual key-position localization from multi-modal frames and coarse GNSS."""

from .bow import BowVector, InverseIndex, Vocabulary, bow_score, bow_transform, build_inverse_index, inverse_index_query, train_vocabulary
from .database import DescriptorConfig, MultiDescriptor, TrajectoryDatabase, build_database, train_vocabulary_from_trajectory
from .evaluation import ConfusionCounts, EvalRecord, grid_search, precision_recall
from .gist import build_gabor_bank, gist_descriptor, gist_multimodal
from .ldb import hamming, ldb_compound, ldb_single
from .localization import MatchSet, PredictionResult, gnss_filter, knn_match, localize, predict_key_position
from .model import FrameRecord, GeoCoordinate, Modality, QueryParams, Trajectory, load_trajectory, write_trajectory
from .preprocess import illumination_invariant
from .synth import SynthSpec, perturb_trajectory, synth_trajectory

__version__ = "0.1.0"
