from .metrics import MarginReport, margin_and_errors, margin_from_scores, recall, spike_recall
from .sweep import (
    CSV_FIELDS,
    AggregateRow,
    RecallReport,
    TrialRow,
    eviction_history,
    position_map_csv,
    sweep,
    token_position_map,
)
from .workload import GENERATORS, Workload, WorkloadSpec, generate, trial_seed

__all__ = [
    "CSV_FIELDS", "GENERATORS", "AggregateRow", "MarginReport", "RecallReport", "TrialRow",
    "Workload", "WorkloadSpec", "eviction_history", "generate", "margin_and_errors",
    "margin_from_scores", "position_map_csv", "recall", "spike_recall", "sweep",
    "token_position_map", "trial_seed",
]
