"""Source-to-target transfer in coefficient space.

The target's identity coefficients replace the source's; the source's
per-frame expressions and cameras are kept untouched. No landmark-style size
adaptation is needed because head shape lives entirely in the identity block.
"""
from dataclasses import dataclass

import numpy as np

from .fitting import FitResult
from .morphable_model import ModelError

KEEP_SOURCE_CAMERA = "keep-source-camera"
NO_SCALE_POLICY = "none"


@dataclass(frozen=True, eq=False)
class TransferSpec:
    source_fit: FitResult
    target_identity: np.ndarray
    scale_policy: str = KEEP_SOURCE_CAMERA


def transfer_params(spec):
    """Fit with the target identity and the source's expressions and cameras.

    Energies are left unset since the result was not fitted to any data.
    """
    src = spec.source_fit
    target = np.asarray(spec.target_identity, dtype=np.float64)
    if target.shape != np.shape(src.identity):
        raise ModelError(f"dimension mismatch: target identity {target.shape} vs source "
                         f"{np.shape(src.identity)}")
    if spec.scale_policy not in (KEEP_SOURCE_CAMERA, NO_SCALE_POLICY):
        raise ValueError(f"unknown scale policy {spec.scale_policy!r}")
    # both policies keep the source cameras verbatim; there is no size adaptation to do
    return FitResult(identity=target.copy(), expressions=np.array(src.expressions, copy=True),
                     cameras=list(src.cameras))
