"""Dense event captioning on synthetic planted-event videos.

The pipeline retrieves related sentences for pooled visual chunks, fuses
them into the frame features, detects weakly supervised concepts, and
decodes localized, captioned events with a query-based generator trained
under cyclically matched localization and semantic assignments.
"""

from .config import RunConfig, load as load_config
from .data import Dataset, generate, load_dataset
from .evaluation import score
from .model import Pipeline, component_weights, prepare_examples
from .params import ParamStore
from .train import TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ParamStore",
    "Pipeline",
    "RunConfig",
    "TrainResult",
    "component_weights",
    "generate",
    "load_config",
    "load_dataset",
    "prepare_examples",
    "score",
    "train",
    "__version__",
]
