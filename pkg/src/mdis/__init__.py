"""Multi-scale discriminant saliency from wavelet hidden Markov trees."""

__version__ = "0.1.0"

from .saliency import ModeConfig, compute_saliency, compute_saliency_maps

__all__ = ["ModeConfig", "compute_saliency", "compute_saliency_maps", "__version__"]
