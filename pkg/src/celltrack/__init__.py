"""Segmentation and tracking of bright deformable objects in 2D+time stacks."""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config, parse_config  # noqa: E402
from .pipeline import run_pipeline  # noqa: E402
from .stack_io import ImageStack, load_stack, save_stack  # noqa: E402

__all__ = ["ImageStack", "PipelineConfig", "load_config", "load_stack", "parse_config",
           "run_pipeline", "save_stack", "__version__"]
