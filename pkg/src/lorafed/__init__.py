"""Deterministic federated LoRA fine-tuning simulator.

Adapters are split into per-column magnitude and direction components;
federated rounds average the components, a global stage tunes only the
direction of the down-projection (A), and a local stage personalizes
only the magnitude of the up-projection (B).
"""

from lorafed._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
