"""Round loops for both training phases, participation, and the sweep harness.

Phase 1 trains the shared linear encoder with time-smoothed projected
updates and server-side averaging. Phase 2 trains per-client task heads on
encoded features, clusters clients (per the configured scheme), aggregates
cluster models, and logs per-round metrics. All randomness flows through
per-(purpose, client, round) streams, so outputs are identical run to run
regardless of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import (ClusterModelState, apply_temporal, broadcast_rule,
                          cluster_weighted_average)
from .baselines import ClientRound, flsc_round, ifca_round
from .datagen import STRATEGIES, StreamConfig, SyntheticStream
from .encoder import (GradientBuffer, SmoothingConfig, contrastive_loss, encode,
                      fedavg_aggregate, local_smoothed_update, ssl_linear_loss)
from .evocluster import (ClusterAssignment, affect_iterate, agglomerative,
                         similarity_matrix)
from .metrics import (RoundLog, comm_round, rand_score, regret_terms,
                      summarize_rounds)
from .numerics import NumericError, project, require_finite, rng_stream
from .taskmodel import (TaskModelParams, TrainConfig, accuracy, linreg_train,
                        rmse, svm_train)

SCHEMES = ("fedreact-a1", "fedreact-a2", "sc-mma", "ec-mma", "snapshot",
           "ifca", "flsc")
EVOLUTIONARY_SCHEMES = ("fedreact-a1", "fedreact-a2", "ec-mma")
SERVER_CLUSTERING_SCHEMES = EVOLUTIONARY_SCHEMES + ("sc-mma", "snapshot")
TASKS = ("classification", "regression")
ENCODER_LOSSES = ("contrastive", "linear-ssl")


@dataclass
class ExperimentConfig:
    seed: int = 0
    num_clients: int = 30
    true_clusters: int = 3
    assumed_clusters: int | None = None  # defaults to true_clusters
    strategy: str = "stationary"
    lambda1: float = 0.85
    lambda2: float = 0.15
    beta: float = 0.1
    batch_size: int = 64        # |M_t^k| labeled samples per task round
    rounds_encoder: int = 10
    rounds_task: int = 50
    participation: float = 1.0
    scheme: str = "fedreact-a1"
    task: str = "classification"
    num_labels: int = 10
    dim: int = 6
    horizon: int = 20
    embed_dim: int = 8
    noise_scale: float = 0.8
    shared_scale: float = 1.0
    center_scale: float = 1.0
    label_scale: float = 0.45
    data_scale: float = 1.0
    ssl_noise: float = 0.05
    test_size: int = 64
    encoder_loss: str = "contrastive"
    negatives: int = 2
    encoder_batch: int = 32
    flsc_tau: int = 2
    adopt_prob: float = 0.05
    migrate_prob: float = 0.005
    affect_iters: int = 5
    freeze_data: bool = False   # reuse round-1 batches every round (static objective)
    track_regret: bool = False
    workers: int = 1            # accepted for CLI parity; has no effect on outputs
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.encoder_loss not in ENCODER_LOSSES:
            raise ValueError(f"unknown encoder loss {self.encoder_loss!r}")
        if not (0.0 < self.participation <= 1.0):
            raise ValueError("participation must lie in (0, 1]")
        for name in ("lambda1", "lambda2", "adopt_prob", "migrate_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        positive = ("num_clients", "true_clusters", "batch_size", "rounds_task",
                    "num_labels", "dim", "horizon", "embed_dim", "test_size",
                    "negatives", "encoder_batch", "flsc_tau", "affect_iters")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rounds_encoder < 0:
            raise ValueError("rounds_encoder must be >= 0")
        if self.true_clusters > self.num_clients:
            raise ValueError("more clusters than clients")
        if self.assumed_clusters is not None and not (
                1 <= self.assumed_clusters <= self.num_clients):
            raise ValueError("assumed_clusters out of range")
        if self.flsc_tau > (self.assumed_clusters or self.true_clusters):
            raise ValueError("flsc_tau exceeds the cluster count")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def clusters(self) -> int:
        return self.assumed_clusters if self.assumed_clusters is not None else self.true_clusters

    @property
    def input_dim(self) -> int:
        return self.dim * self.horizon

    @property
    def param_len(self) -> int:
        if self.task == "classification":
            return self.num_labels * self.embed_dim + self.num_labels
        return self.embed_dim + 1


def build_stream(cfg: ExperimentConfig) -> SyntheticStream:
    return SyntheticStream(StreamConfig(
        seed=cfg.seed, num_clients=cfg.num_clients, num_clusters=cfg.true_clusters,
        num_labels=cfg.num_labels, dim=cfg.dim, horizon=cfg.horizon,
        strategy=cfg.strategy, beta=cfg.beta, lambda1=cfg.lambda1,
        lambda2=cfg.lambda2, adopt_prob=cfg.adopt_prob,
        migrate_prob=cfg.migrate_prob, noise_scale=cfg.noise_scale,
        shared_scale=cfg.shared_scale, center_scale=cfg.center_scale,
        label_scale=cfg.label_scale, data_scale=cfg.data_scale))


@dataclass
class ClientState:
    client: int
    last_upload: np.ndarray | None = None
    last_upload_round: int = -1
    received: TaskModelParams | None = None


@dataclass
class Phase1Trace:
    """Per-round losses (rows) per client (columns) and global mean gradients."""

    losses: list[np.ndarray] = field(default_factory=list)
    mean_grads: list[np.ndarray] = field(default_factory=list)


@dataclass
class Phase2Round:
    round: int
    participants: tuple[int, ...]
    clients: tuple[int, ...]
    labels: np.ndarray | None
    a_t: float | None
    psi: np.ndarray | None
    uploads: dict[int, np.ndarray]
    deployed: dict[int, np.ndarray]


# ---------------------------------------------------------------------------
# Phase 1


def estimate_top_eigenvalue(cfg: ExperimentConfig, stream) -> float:
    """Largest eigenvalue of the warm-up estimate of the global covariance."""
    D = cfg.input_dim
    xbar = np.zeros((D, D))
    for k in range(cfg.num_clients):
        batch = stream.sample_batch(k, 0, cfg.batch_size)
        X = batch.x.reshape(len(batch.labels), -1)
        xbar += X.T @ X / X.shape[0]
    xbar /= cfg.num_clients
    return float(np.linalg.eigvalsh(xbar)[-1])


def resolve_smoothing(cfg: ExperimentConfig, stream) -> SmoothingConfig:
    """Fill in the step size and projection radius when left unset.

    The radius defaults to 4x the top covariance eigenvalue (the loss is
    smooth on any ball with radius at least that eigenvalue); the linear-SSL
    step defaults to the inverse smoothness 1/(16 * lambda_1).
    """
    sm = cfg.smoothing
    if sm.radius_sq is None or (sm.step is None and cfg.encoder_loss == "linear-ssl"):
        lam = estimate_top_eigenvalue(cfg, stream)
    radius = sm.radius_sq if sm.radius_sq is not None else 4.0 * max(lam, 1e-12)
    if sm.step is not None:
        step = sm.step
    elif cfg.encoder_loss == "linear-ssl":
        step = 1.0 / (16.0 * max(lam, 1e-12))
    else:
        step = 0.05
    return replace(sm, step=step, radius_sq=radius)


def run_phase1(cfg: ExperimentConfig, stream) -> tuple[np.ndarray, Phase1Trace | None, SmoothingConfig]:
    """Federated encoder training; returns (theta, optional trace, resolved smoothing)."""
    D, dh, K = cfg.input_dim, cfg.embed_dim, cfg.num_clients
    theta = 0.01 * rng_stream(cfg.seed, "encoder-init").standard_normal((dh, D))
    sm = resolve_smoothing(cfg, stream)
    buffers = [GradientBuffer(sm.window) for _ in range(K)]
    trace = Phase1Trace() if cfg.track_regret else None

    for t in range(1, cfg.rounds_encoder + 1):
        t_data = 1 if cfg.freeze_data else t
        locals_, losses, grads = [], [], []
        for k in range(K):
            if cfg.encoder_loss == "contrastive":
                anc, pos, neg = stream.contrastive_batch(k, t_data, cfg.encoder_batch,
                                                         cfg.negatives)
                loss, grad = contrastive_loss(theta, anc, pos, neg)
            else:
                batch = stream.sample_batch(k, t_data, cfg.batch_size)
                X = batch.x.reshape(len(batch.labels), -1)
                noise_rng = rng_stream(cfg.seed, "ssl-noise", k, t_data)
                xi = cfg.ssl_noise * noise_rng.standard_normal((X.shape[0], dh))
                xi2 = cfg.ssl_noise * noise_rng.standard_normal((X.shape[0], dh))
                loss, grad = ssl_linear_loss(theta, X, xi, xi2)
            losses.append(loss)
            grads.append(grad)
            buffers[k].push(t, project(grad, sm.radius_sq))
            theta_k = project(local_smoothed_update(theta, buffers[k], sm),
                              sm.radius_sq)
            locals_.append((theta_k, float(cfg.batch_size)))
        theta = fedavg_aggregate(locals_)
        require_finite(theta, "encoder parameters")
        if trace is not None:
            trace.losses.append(np.array(losses))
            trace.mean_grads.append(np.mean(grads, axis=0))
    return theta, trace, sm


# ---------------------------------------------------------------------------
# Phase 2


def pick_participants(cfg: ExperimentConfig, truth: np.ndarray, t: int) -> list[int]:
    """Stratified uniform draw: the participation fraction of each true cluster."""
    if cfg.participation >= 1.0:
        return list(range(cfg.num_clients))
    rng = rng_stream(cfg.seed, "participation", t)
    chosen: list[int] = []
    for c in np.unique(truth):
        members = np.flatnonzero(truth == c)
        n_pick = min(len(members), max(1, int(round(cfg.participation * len(members)))))
        chosen.extend(members[rng.choice(len(members), size=n_pick, replace=False)])
    return sorted(int(k) for k in chosen)


def _train_client(cfg: ExperimentConfig, theta: np.ndarray, stream, state: ClientState,
                  t: int) -> tuple[TaskModelParams, np.ndarray, np.ndarray]:
    batch = stream.sample_batch(state.client, t, cfg.batch_size)
    z = encode(theta, batch.x)
    y = batch.labels if cfg.task == "classification" else batch.targets
    if state.received is not None:
        init = state.received
    else:
        init = TaskModelParams.zeros(cfg.task, cfg.embed_dim, cfg.num_labels)
    rng = rng_stream(cfg.seed, "task-train", state.client, t)
    if cfg.task == "classification":
        params = svm_train(init, z, y, cfg.train, rng)
    else:
        params = linreg_train(init, z, y, cfg.train, rng)
    return params, z, y


def _client_score(cfg: ExperimentConfig, theta: np.ndarray, stream,
                  model: TaskModelParams, client: int, t: int) -> float:
    test = stream.test_batch(client, t, cfg.test_size)
    z = encode(theta, test.x)
    if cfg.task == "classification":
        return accuracy(model, z, test.labels)
    return rmse(model, z, test.targets)


def _strip(assignment: ClusterAssignment) -> ClusterAssignment:
    # keep only one level of history for the membership-stability test
    return ClusterAssignment(assignment.round, assignment.clients,
                             assignment.labels.copy(), None)


def run_phase2(cfg: ExperimentConfig, stream, theta: np.ndarray
               ) -> tuple[list[RoundLog], list[Phase2Round]]:
    """Task-model training with the configured clustering/aggregation scheme."""
    K, C = cfg.num_clients, cfg.clusters
    clients = [ClientState(k) for k in range(K)]
    states = {c: ClusterModelState() for c in range(C)}
    psi_full = np.zeros((K, K))
    prev_assignment: ClusterAssignment | None = None
    temporal_rule = {"fedreact-a1": "a1", "fedreact-a2": "a2"}.get(cfg.scheme)

    if cfg.scheme in ("ifca", "flsc"):
        side_models = []
        for c in range(C):
            rng = rng_stream(cfg.seed, "cluster-model-init", c)
            zero = TaskModelParams.zeros(cfg.task, cfg.embed_dim, cfg.num_labels)
            side_models.append(TaskModelParams(
                zero.kind, 0.01 * rng.standard_normal(zero.weights.shape),
                0.01 * rng.standard_normal(zero.bias.shape)))
        chosen_last: dict[int, int] = {}

    logs: list[RoundLog] = []
    trace: list[Phase2Round] = []

    for t in range(1, cfg.rounds_task + 1):
        truth = stream.true_clusters(t)
        participants = pick_participants(cfg, truth, t)
        uploads: dict[int, TaskModelParams] = {}
        feats: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for k in participants:
            params, z, y = _train_client(cfg, theta, stream, clients[k], t)
            uploads[k] = params
            feats[k] = (z, y)
            clients[k].last_upload = params.vector
            clients[k].last_upload_round = t

        a_t: float | None = None
        psi_round = None
        labels = None
        assignment = None
        deployed: dict[int, TaskModelParams] = {}

        if cfg.scheme in SERVER_CLUSTERING_SCHEMES:
            seen = [k for k in range(K) if clients[k].last_upload is not None]
            c_eff = min(C, len(seen))
            if len(seen) >= 2:
                W = similarity_matrix([clients[k].last_upload for k in seen])
                if cfg.scheme in EVOLUTIONARY_SCHEMES:
                    sub_prev = psi_full[np.ix_(seen, seen)]
                    psi_new, a_t, labels = affect_iterate(sub_prev, W, c_eff,
                                                          cfg.affect_iters)
                    psi_full[np.ix_(seen, seen)] = psi_new
                    psi_round = psi_new
                else:
                    labels = agglomerative(W, c_eff)
            else:
                labels = np.zeros(len(seen), dtype=np.int64)
            assignment = ClusterAssignment(t, tuple(seen), labels,
                                           previous=prev_assignment)
            fired = broadcast_rule(assignment, t, cfg.rounds_task)
            receivers = 0
            part_set = set(participants)
            for c in range(c_eff):
                members = assignment.members(c)
                pm = sorted(members & part_set)
                if pm:
                    states[c].current = cluster_weighted_average(
                        [(uploads[k], cfg.batch_size) for k in pm])
                if temporal_rule is not None:
                    if fired.get(c, False) and pm:
                        model = apply_temporal(states[c], temporal_rule, a_t)
                        for k in pm:
                            clients[k].received = model
                        receivers += len(pm)
                    model_out = states[c].temporal or states[c].current
                else:
                    if pm:
                        for k in pm:
                            clients[k].received = states[c].current
                        receivers += len(pm)
                    model_out = states[c].current
                if model_out is not None:
                    deployed[c] = model_out
            label_of = assignment.as_dict()
            rand = rand_score(labels, truth[list(seen)]) if seen else None
            sizes = tuple(int(np.sum(labels == c)) for c in range(c_eff))
            prev_assignment = _strip(assignment)
        else:  # ifca / flsc
            rounds_data = [ClientRound(k, feats[k][0], feats[k][1], cfg.batch_size,
                                       rng_stream(cfg.seed, "cluster-select", k, t))
                           for k in participants]
            if cfg.scheme == "ifca":
                side_models, chosen = ifca_round(side_models, rounds_data, cfg.train)
            else:
                side_models, chosen, _picks = flsc_round(side_models, rounds_data,
                                                         cfg.train, cfg.flsc_tau)
            chosen_last.update(chosen)
            seen = sorted(chosen_last)
            labels = np.array([chosen_last[k] for k in seen], dtype=np.int64)
            deployed = dict(enumerate(side_models))
            label_of = dict(zip(seen, (int(v) for v in labels)))
            rand = rand_score(labels, truth[seen]) if len(seen) else None
            sizes = tuple(int(np.sum(labels == c)) for c in range(C))
            receivers = 0

        scores = []
        for k in seen:
            model = deployed.get(label_of[k])
            if model is None:
                continue
            scores.append(_client_score(cfg, theta, stream, model, k, t))
        mean_score = float(np.mean(scores)) if scores else None
        up, down = comm_round(cfg.scheme, len(participants), receivers,
                              cfg.param_len, C)
        logs.append(RoundLog(
            round=t,
            rand_score=rand,
            mean_accuracy=mean_score if cfg.task == "classification" else None,
            rmse=mean_score if cfg.task == "regression" else None,
            a_t=a_t,
            participants=len(participants),
            cluster_sizes=sizes,
            bytes_up=up,
            bytes_down=down,
        ))
        trace.append(Phase2Round(
            round=t, participants=tuple(participants), clients=tuple(seen),
            labels=None if labels is None else labels.copy(), a_t=a_t,
            psi=None if psi_round is None else psi_round.copy(),
            uploads={k: p.vector for k, p in uploads.items()},
            deployed={c: m.vector for c, m in deployed.items()}))
    return logs, trace


# ---------------------------------------------------------------------------
# Experiment entry points


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    encoder: np.ndarray
    logs: list[RoundLog]
    trace: list[Phase2Round]
    phase1_trace: Phase1Trace | None
    summary: dict


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    stream = build_stream(cfg)
    theta, p1trace, sm = run_phase1(cfg, stream)
    logs, trace = run_phase2(cfg, stream, theta)
    if not np.all(np.isfinite(theta)):
        raise NumericError("encoder diverged")
    enc_params = theta.size
    summary = {
        "scheme": cfg.scheme,
        "seed": cfg.seed,
        **summarize_rounds(logs),
        "mean_a_t": _mean_or_none([l.a_t for l in logs]),
        "phase1_bytes_up": cfg.num_clients * cfg.rounds_encoder * enc_params * 8,
        "phase1_bytes_down": cfg.num_clients * cfg.rounds_encoder * enc_params * 8,
        "encoder_radius_sq": sm.radius_sq,
        "encoder_step": sm.step,
    }
    if cfg.track_regret and p1trace is not None and p1trace.losses:
        summary["phase1_avg_grad_sq"] = average_smoothed_grad_sq(
            p1trace, cfg.smoothing.window, cfg.smoothing.decay)
    return ExperimentResult(cfg, theta, logs, trace, p1trace, summary)


def _mean_or_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def average_smoothed_grad_sq(trace: Phase1Trace, window: int, decay: float) -> float:
    """(1/T) sum_t ||grad S_{t,w,gamma}||^2 from the stored per-round gradients."""
    losses = np.array(trace.losses)
    vals = []
    for t in range(1, losses.shape[0] + 1):
        _, _, gsq = regret_terms(losses[:t], window, decay, trace.mean_grads[:t])
        vals.append(gsq)
    return float(np.mean(vals))


def theorem1_sweep(cfg: ExperimentConfig, windows: list[int], decays: list[float]
                   ) -> list[dict]:
    """Average squared smoothed-gradient norm per (window, decay) pair.

    Each cell re-runs stage-1 training with that smoothing configuration on
    the identical data stream (same seed), using the linear SSL loss and the
    inverse-smoothness step size.
    """
    rows = []
    for decay in decays:
        for window in windows:
            c2 = replace(cfg, encoder_loss="linear-ssl", track_regret=True,
                         smoothing=SmoothingConfig(window=window, decay=decay,
                                                   step=cfg.smoothing.step,
                                                   radius_sq=cfg.smoothing.radius_sq))
            c2.validate()
            stream = build_stream(c2)
            _, trace, _ = run_phase1(c2, stream)
            rows.append({
                "window": window,
                "decay": decay,
                "avg_grad_sq": average_smoothed_grad_sq(trace, window, decay),
            })
    return rows
