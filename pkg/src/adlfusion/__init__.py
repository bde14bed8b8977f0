"""Multi-modal daily-activity recognition: pose, video features and object context.

Backbone outputs (video feature maps, object detections) are inputs to this
package, never computed by it.
"""

__version__ = "0.1.0"
CONFIG_SCHEMA_VERSION = 1

from .errors import (  # noqa: E402
    AdlFusionError,
    ConfigurationError,
    DataError,
    DegeneratePoseError,
    DimensionError,
    DomainError,
    NoPersonError,
    NumericalError,
)
from .fusion import FusionModel, ModelConfig  # noqa: E402
from .training import LossConfig, TrainConfig, generate_synthetic, train  # noqa: E402
