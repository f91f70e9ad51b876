"""One-step consistency distillation of a flow-matching teacher, desk scale.

Pipeline: pseudo-spectral Kolmogorov-flow data generation, an OT-path
flow-matching teacher, TrigFlow consistency distillation with a JVP tangent,
multi-solver sampling with inference-time noise-injection conditioning, and
spectral evaluation metrics.
"""

from . import _malloc

_malloc.tune()

__version__ = "0.1.0"
