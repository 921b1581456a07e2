"""Flow-matching generative value model over injected latent frames,
with a synthetic manipulation simulator and a classification baseline."""

from .codec import LatentCodec, NormalizationSpec
from .episodes import (
    Episode,
    JointObservation,
    MultiViewObservation,
    Proprioception,
    TrainingTuple,
    read_dataset,
    sample_tuple,
    write_dataset,
)
from .model import LatentSequence, ModelConfig, VelocityModel, assemble_sequence, count_params
from .returns import RewardSchedule, margin, return_to_go, reward
from .sampling import SamplerConfig, ValueEstimate, advantage, infer, value_trace
from .sim import CorpusConfig, ScriptConfig, WorldState, generate_corpus, render_views, rollout
from .training import (
    Checkpoint,
    LossWeights,
    TrainSchedule,
    fit_normalization,
    flow_loss,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "Checkpoint",
    "CorpusConfig",
    "Episode",
    "JointObservation",
    "LatentCodec",
    "LatentSequence",
    "LossWeights",
    "ModelConfig",
    "MultiViewObservation",
    "NormalizationSpec",
    "Proprioception",
    "RewardSchedule",
    "SamplerConfig",
    "ScriptConfig",
    "TrainSchedule",
    "TrainingTuple",
    "ValueEstimate",
    "VelocityModel",
    "WorldState",
    "advantage",
    "assemble_sequence",
    "count_params",
    "fit_normalization",
    "flow_loss",
    "generate_corpus",
    "infer",
    "load_checkpoint",
    "margin",
    "read_dataset",
    "render_views",
    "return_to_go",
    "reward",
    "rollout",
    "sample_tuple",
    "save_checkpoint",
    "train",
    "value_trace",
    "write_dataset",
]

__version__ = "0.1.0"
