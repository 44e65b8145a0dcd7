"""roarbench: measure the faithfulness of feature-importance explanations
by iteratively masking allegedly important tokens and retraining.

The public surface mirrors the pipeline stages: `data` generates synthetic
tasks with planted evidence, `models` trains small differentiable
classifiers on a self-contained autodiff core (`grad_core`), `importance`
scores tokens, `masking` grows monotone mask states, `harness` orchestrates
the retraining loops with content-addressed caching, `metrics` summarizes
curves into area-between-curves faithfulness scores, and `cli` fronts it
all as the `roarbench` command.
"""

from .data import Observation, TokenDataset, gen_tabular
from .harness import ExperimentPlan, run_plan, run_synthetic_validation
from .importance import compute_importance
from .masking import MaskState, StepSchedule, apply_mask, extend_mask
from .metrics import area_faithfulness, classification_metrics
from .models import ModelConfig, build_model, train

__version__ = "0.1.0"

__all__ = [
    "ExperimentPlan",
    "MaskState",
    "ModelConfig",
    "Observation",
    "StepSchedule",
    "TokenDataset",
    "apply_mask",
    "area_faithfulness",
    "build_model",
    "classification_metrics",
    "compute_importance",
    "extend_mask",
    "gen_tabular",
    "run_plan",
    "run_synthetic_validation",
    "train",
    "__version__",
]
