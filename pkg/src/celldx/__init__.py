"""Diagnostic-free battery health diagnosis and prognosis.

Charge windows from ordinary cycling go in; interpretable electrode
states, pseudo-OCV reconstructions, state-of-health, and remaining
cycle-life forecasts come out.  Sub-modules:

- ``curves`` / ``ocp`` — charge-window and half-cell curve handling
- ``mechanistic`` — electrode-state OCV model and degradation modes
- ``synthfleet`` — synthetic degradation fleet generator
- ``autodiff`` / ``nn`` — reverse-mode tensors and MLP training
- ``diagnosis`` — physics-constrained encoder/decoder for state + SOH
- ``prognosis`` — trajectory decoder for cycle-life forecasting
- ``dvafit`` — swarm-fit baseline over the mechanistic model
- ``attribution`` — KernelSHAP explanations of either stage
- ``cli`` — pipeline entry point (``celldx`` console script)
"""

__version__ = "0.1.0"

from .curves import ChargeSegment, PseudoOcvCurve
from .diagnosis import (
    DiagnosisArtifact,
    DiagnosisReport,
    diagnose,
    finetune,
    train_diagnosis,
)
from .mechanistic import DegradationModes, MechanisticState, StateBounds, derive_ocv
from .metrics import MetricsTable, metrics
from .prognosis import PrognosisArtifact, PrognosisReport, prognose, train_prognosis
from .synthfleet import FleetConfig, generate_fleet, read_dataset, write_dataset

__all__ = [
    "__version__",
    "ChargeSegment",
    "PseudoOcvCurve",
    "DiagnosisArtifact",
    "DiagnosisReport",
    "diagnose",
    "finetune",
    "train_diagnosis",
    "DegradationModes",
    "MechanisticState",
    "StateBounds",
    "derive_ocv",
    "MetricsTable",
    "metrics",
    "PrognosisArtifact",
    "PrognosisReport",
    "prognose",
    "train_prognosis",
    "FleetConfig",
    "generate_fleet",
    "read_dataset",
    "write_dataset",
]
