"""Reference scoring service speaking the black-box oracle HTTP protocol."""

from .app import create_server, serve_forever
from .models import (LinearModel, ModelError, Normalization, ServedModel,
                     TorchvisionModel, load_from_config, softmax)

__version__ = "0.1.0"

__all__ = [
    "create_server", "serve_forever",
    "LinearModel", "ModelError", "Normalization", "ServedModel",
    "TorchvisionModel", "load_from_config", "softmax",
    "__version__",
]
