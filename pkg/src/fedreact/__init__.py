"""Two-stage federated learning simulator with evolutionary client clustering.

Stage 1 learns a shared linear encoder with time-smoothed projected
gradient descent and server-side averaging; stage 2 trains lightweight
task heads per client, groups clients by the cosine similarity of their
task-model weights smoothed with an adaptive forgetting factor, and
aggregates cluster models temporally. Baseline schemes (snapshot
clustering, memoriless aggregation, loss-based self-assignment) share the
same data streams for paired comparison.
"""

from .orchestrator import ExperimentConfig, run_experiment

__all__ = ["ExperimentConfig", "run_experiment"]
__version__ = "0.1.0"
