"""erasure_lab: adversarial concept erasure on toy conditional diffusion
models, with the matching information-theoretic leakage audits."""

__version__ = "0.1.0"

from .backends import active_backend

__all__ = ["active_backend", "__version__"]
