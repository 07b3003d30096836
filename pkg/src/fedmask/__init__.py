"""Masked, Byzantine-tolerant federated averaging over a simulated asynchronous network.

The package is organized bottom-up:

    field        fixed-point codec, field vectors, public masking matrix
    crypto       secret sharing, commitments, signatures, certificates, sealing
    masking      gradient clipping, noise calibration, mask/unmask
    assignment   verifiable client-to-aggregator assignment per round
    inclusion    participation tracking, debiasing inclusion, blame tests
    wire         message schemas and canonical binary encoding
    tasks        synthetic strongly convex learning tasks
    client       client protocol state machine
    aggregator   aggregator protocol state machine
    simulator    deterministic discrete-event network with fault injection
    config       run configuration and validation
    harness      experiment runner, metrics, calibration, acceptance checks
    cli          command line entry point
"""

from fedmask.field import (
    DEFAULT_PRIME,
    CodecRangeError,
    FieldVec,
    FixedPointCodec,
    PublicMatrix,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PRIME",
    "CodecRangeError",
    "FieldVec",
    "FixedPointCodec",
    "PublicMatrix",
    "__version__",
]
