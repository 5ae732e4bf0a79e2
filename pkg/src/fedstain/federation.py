"""Client-server federation state machines.

One communication round runs three stages: (a) every client summarizes
a sampled fraction of its images and uploads the records, the server
pools them and grants each client the pool minus its own entries;
(b) clients train locally — building the stain view and two perturbed
views per sample and optimizing the combined objective — and upload
parameters; (c) the server aggregates sample-weighted parameters and
broadcasts the new global model.  The baseline mode trains on the raw
batch with the classification loss only, which reduces stage (b) to
textbook federated averaging.

Clients never expose pixels: stage (a) messages carry only channel
summaries, stage (b) messages only parameter vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import rng as rngmod
from .augment import AugmentConfig, augmix, make_views, randstain
from .errors import (
    EmptyRoundError,
    NonFiniteLossError,
    NoPositivesError,
    ProtocolError,
    StaleMessageError,
    UnknownClientError,
)
from .losses import (
    CLS_SUPCON_SELF,
    LossWeights,
    cross_entropy,
    js_alignment,
    representation_alignment,
    supcon,
    total_loss,
)
from .messages import GlobalBroadcast, ParamUpload, PoolGrant, StatUpload
from .model import (
    ModelLayout,
    ModelParams,
    build_model,
    feature_mixstyle,
    flatten_grads,
    load_params,
    softmax_probs,
)
from .optim import ScheduleSpec, adam_step, init_optimizer
from .pool import PoolView, build_pool, fallback_view, pool_view, sample_statistics
from .stats import StatKind

MODE_FEDSTAIN = "fedstain"
MODE_BASELINE = "fedavg_baseline"

PHASE_IDLE = "idle"
PHASE_STATS_UPLOADED = "stats_uploaded"
PHASE_TRAINING = "training"
PHASE_PARAMS_UPLOADED = "params_uploaded"


@dataclass(frozen=True)
class FedConfig:
    """Federation hyperparameters (see the run-config file for the
    operator-facing spelling)."""

    n_rounds: int = 3
    n_epochs: int = 3
    batch_size: int = 32
    stat_ratio: float = 0.1
    dirichlet_alpha: float = 0.5
    clients_per_domain: int = 2
    mode: str = MODE_FEDSTAIN
    master_seed: int = 0
    stat_kind: StatKind = StatKind.SKEWNESS_KURTOSIS
    color_space: str = "RGB"
    pair_window: int = 8
    schedule: ScheduleSpec = ScheduleSpec()

    def __post_init__(self):
        if self.n_rounds < 1 or self.n_epochs < 0 or self.batch_size < 1:
            raise ValueError("n_rounds, batch_size must be positive; n_epochs nonnegative")
        if not 0.0 < self.stat_ratio <= 1.0:
            raise ValueError("stat_ratio must be in (0, 1]")
        if self.dirichlet_alpha <= 0 or self.clients_per_domain < 1:
            raise ValueError("dirichlet_alpha and clients_per_domain must be positive")
        if self.mode not in (MODE_FEDSTAIN, MODE_BASELINE):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class ClientDataset:
    client_id: str
    images: np.ndarray  # N x C x H x W, working color space
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images must be N*C*H*W aligned with labels")
        if self.images.shape[0] < 1:
            raise ValueError("client dataset must be nonempty")

    @property
    def n_samples(self) -> int:
        return int(self.images.shape[0])


@dataclass
class TrainLogRow:
    round: int
    client: str
    epoch: int
    step: int
    cls: float
    ra: float
    js: float
    total: float
    lr: float


class FederatedClient:
    """Local trainer with the per-round phase machine
    idle -> stats_uploaded -> training -> params_uploaded -> idle."""

    def __init__(
        self,
        dataset: ClientDataset,
        cfg: FedConfig,
        aug_cfg: AugmentConfig,
        weights: LossWeights,
        layout: ModelLayout,
    ):
        self.dataset = dataset
        self.cfg = cfg
        self.aug_cfg = aug_cfg
        self.weights = weights
        self.layout = layout
        self.phase = PHASE_IDLE
        self.params: ModelParams | None = None
        self.optimizer = None
        self.pool_view = None
        self.last_records = ()
        steps_per_epoch = math.ceil(dataset.n_samples / cfg.batch_size)
        self._total_steps = cfg.n_rounds * cfg.n_epochs * steps_per_epoch

    # -- phase helpers --------------------------------------------------------

    @property
    def client_id(self) -> str:
        return self.dataset.client_id

    def _advance(self, expected: str, new: str):
        if self.phase != expected:
            raise ProtocolError(
                f"client {self.client_id}: cannot move {self.phase} -> {new} (expected {expected})"
            )
        self.phase = new

    def set_initial_params(self, params: ModelParams):
        if self.phase != PHASE_IDLE:
            raise ProtocolError("initial parameters only before a round starts")
        self.params = params

    # -- stage (a) -------------------------------------------------------------

    def collect_stats(self, round_no: int) -> StatUpload:
        self._advance(PHASE_IDLE, PHASE_STATS_UPLOADED)
        stream = rngmod.stream(self.cfg.master_seed, "stats", self.client_id, round_no)
        records = sample_statistics(
            self.dataset.images,
            self.client_id,
            self.cfg.stat_ratio,
            stream,
            color_space=self.cfg.color_space,
            kind=self.cfg.stat_kind,
            window=self.cfg.pair_window,
        )
        self.last_records = tuple(records)
        return StatUpload(round=round_no, client_id=self.client_id, records=self.last_records)

    def receive_grant(self, grant: PoolGrant):
        self._advance(PHASE_STATS_UPLOADED, PHASE_TRAINING)
        if grant.client_id != self.client_id:
            raise ProtocolError("grant addressed to a different client")
        if grant.records:
            # constructing the view re-checks the exclusion invariant client-side
            self.pool_view = PoolView(records=tuple(grant.records), excluded_client=self.client_id)
        else:
            self.pool_view = fallback_view(self.last_records)

    # -- stage (b) -------------------------------------------------------------

    def local_train(self, round_no: int, log_rows: list | None = None) -> ParamUpload:
        if self.phase != PHASE_TRAINING:
            raise ProtocolError(f"client {self.client_id} asked to train in phase {self.phase}")
        if self.params is None:
            raise ProtocolError("no global parameters received")
        cfg = self.cfg
        vector = self.params.vector
        if self.optimizer is None:
            self.optimizer = init_optimizer(vector.size, cfg.schedule, self._total_steps)

        model = build_model(self.params, dtype=torch.float32)
        model.train()
        n = self.dataset.n_samples
        for epoch in range(cfg.n_epochs):
            order = rngmod.stream(
                cfg.master_seed, "shuffle", self.client_id, round_no, epoch
            ).permutation(n)
            for step, start in enumerate(range(0, n, cfg.batch_size)):
                batch_idx = order[start : start + cfg.batch_size]
                lr = self.optimizer.current_lr()
                total, breakdown = self._step_loss(model, batch_idx, round_no, epoch)
                model.zero_grad()
                total.backward()
                grads = flatten_grads(model)
                vector, self.optimizer = adam_step(self.optimizer, vector, grads)
                self.params = self.params.replace_vector(vector)
                load_params(model, self.params)
                if log_rows is not None:
                    log_rows.append(
                        TrainLogRow(
                            round=round_no,
                            client=self.client_id,
                            epoch=epoch,
                            step=step,
                            cls=breakdown.cls,
                            ra=breakdown.ra,
                            js=breakdown.js,
                            total=breakdown.total,
                            lr=lr,
                        )
                    )
        self.phase = PHASE_PARAMS_UPLOADED
        return ParamUpload(
            round=round_no,
            client_id=self.client_id,
            vector=vector.copy(),
            n_samples=n,
        )

    def _step_loss(self, model, batch_idx, round_no, epoch):
        cfg = self.cfg
        images = self.dataset.images[batch_idx]
        labels = torch.from_numpy(self.dataset.labels[batch_idx])
        dtype = torch.float32

        if cfg.mode == MODE_BASELINE:
            emb, logits = model(torch.from_numpy(images).to(dtype))
            cls = self._cls_term(emb, logits, labels)
            zero = torch.zeros((), dtype=cls.dtype)
            return total_loss(cls, zero, zero, self.weights)

        feature_level = self.aug_cfg.mixstyle_level == "feature"
        stains, v1s, v2s = [], [], []
        for local_i, ds_index in enumerate(batch_idx):
            stream = rngmod.stream(
                cfg.master_seed, "aug", self.client_id, round_no, epoch, int(ds_index)
            )
            if feature_level:
                # pixel-level style mixing is replaced by the encoder hook,
                # so the two views are morphological chains only
                r_stain, r_a1, r_a2 = stream.spawn(3)
                stains.append(randstain(images[local_i], self.pool_view, r_stain, self.aug_cfg))
                v1s.append(augmix(images[local_i], self.aug_cfg, r_a1))
                v2s.append(augmix(images[local_i], self.aug_cfg, r_a2))
            else:
                views = make_views(
                    images[local_i], self.pool_view, self.aug_cfg, stream, kind=cfg.stat_kind
                )
                stains.append(views.stain)
                v1s.append(views.view1)
                v2s.append(views.view2)

        x = torch.from_numpy(images).to(dtype)
        xs = torch.from_numpy(np.stack(stains)).to(dtype)
        x1 = torch.from_numpy(np.stack(v1s)).to(dtype)
        x2 = torch.from_numpy(np.stack(v2s)).to(dtype)

        if feature_level:
            mix_stream = rngmod.stream(cfg.master_seed, "featmix", self.client_id, round_no, epoch)
            emb, logits = model(torch.cat([x, xs]))
            emb_x, emb_s = emb[: x.shape[0]], emb[x.shape[0] :]
            logits_x, logits_s = logits[: x.shape[0]], logits[x.shape[0] :]
            emb_1, logits_1 = model(x1, feature_mixer=self._make_feature_mixer(mix_stream, x.shape[0]))
            emb_2, logits_2 = model(x2, feature_mixer=self._make_feature_mixer(mix_stream, x.shape[0]))
        else:
            big = torch.cat([x, xs, x1, x2])
            emb, logits = model(big)
            emb_x, emb_s, emb_1, emb_2 = emb.chunk(4)
            logits_x, logits_s, logits_1, logits_2 = logits.chunk(4)

        cls = self._cls_term(emb_x, logits_x, labels)
        # A leftover batch may be too small or single-label; the alignment
        # term is undefined there and contributes zero instead of aborting.
        if labels.shape[0] >= 2:
            try:
                ra = representation_alignment(emb_x, emb_s, emb_1, emb_2, labels, self.weights.tau)
            except NoPositivesError:
                ra = torch.zeros((), dtype=cls.dtype)
        else:
            ra = torch.zeros((), dtype=cls.dtype)
        js = js_alignment(
            [softmax_probs(l) for l in (logits_x, logits_1, logits_2, logits_s)]
        )
        return total_loss(cls, ra, js, self.weights)

    def _cls_term(self, emb, logits, labels):
        if self.weights.cls_loss == CLS_SUPCON_SELF:
            if labels.shape[0] >= 2:
                try:
                    return supcon(emb, emb, labels, self.weights.tau)
                except NoPositivesError:
                    pass
            return torch.zeros((), dtype=emb.dtype)
        return cross_entropy(logits, labels)

    def _make_feature_mixer(self, stream, batch_size):
        perm = stream.permutation(batch_size)
        lam = stream.beta(self.aug_cfg.mixstyle_beta_alpha, self.aug_cfg.mixstyle_beta_alpha, size=batch_size)
        return lambda feats: feature_mixstyle(feats, perm, lam)

    def abort_round(self):
        """Drop out of the current round; local params revert on next broadcast."""
        self.phase = PHASE_PARAMS_UPLOADED

    # -- stage (c) -------------------------------------------------------------

    def receive_broadcast(self, broadcast: GlobalBroadcast):
        self._advance(PHASE_PARAMS_UPLOADED, PHASE_IDLE)
        self.params = ModelParams(vector=broadcast.vector, layout=self.layout)


class FederatedServer:
    """Single-threaded reactor: validates round tags, pools statistics,
    and aggregates sample-weighted parameters in client-id order."""

    def __init__(self, layout: ModelLayout, roster: dict, initial: ModelParams):
        self.layout = layout
        self.roster = dict(roster)  # client_id -> n_samples
        self.global_params = initial
        self.round = 1
        self.pool = None

    def _check(self, msg):
        if msg.round != self.round:
            raise StaleMessageError(f"message for round {msg.round}, server at {self.round}")
        if hasattr(msg, "client_id") and msg.client_id not in self.roster:
            raise UnknownClientError(f"client {msg.client_id!r} not on roster")

    def receive_stat_uploads(self, uploads: list) -> dict:
        """Build the round pool and return per-client grants."""
        for up in uploads:
            self._check(up)
        grouped = {up.client_id: list(up.records) for up in uploads}
        self.pool = build_pool(grouped, round_no=self.round, roster=self.roster)
        grants = {}
        for client_id in sorted(grouped):
            view = pool_view(self.pool, client_id, roster=self.roster)
            grants[client_id] = PoolGrant(
                round=self.round, client_id=client_id, records=view.records
            )
        return grants

    def aggregate(self, uploads: list) -> ModelParams:
        """theta <- sum(n_i * theta_i) / sum(n_i) over contributing clients,
        summed in client-id order so the result is permutation-invariant."""
        if not uploads:
            raise EmptyRoundError("no parameter uploads this round")
        for up in uploads:
            self._check(up)
        acc = np.zeros_like(self.global_params.vector)
        total = 0
        for up in sorted(uploads, key=lambda u: u.client_id):
            acc += float(up.n_samples) * up.vector
            total += up.n_samples
        self.global_params = ModelParams(vector=acc / float(total), layout=self.layout)
        return self.global_params

    def advance_round(self):
        self.round += 1


def run_round(
    server: FederatedServer,
    clients: list,
    transport=None,
    log_rows: list | None = None,
):
    """Execute one full communication round; returns the failed client ids."""
    send = transport.send if transport is not None else (lambda m: m)
    round_no = server.round
    clients = sorted(clients, key=lambda c: c.client_id)

    uploads = [send(c.collect_stats(round_no)) for c in clients]
    grants = server.receive_stat_uploads(uploads)
    for client in clients:
        client.receive_grant(send(grants[client.client_id]))

    param_uploads = []
    failed = []
    for client in clients:
        try:
            param_uploads.append(send(client.local_train(round_no, log_rows=log_rows)))
        except NonFiniteLossError:
            client.abort_round()
            failed.append(client.client_id)

    new_global = server.aggregate(param_uploads)
    for client in clients:
        client.receive_broadcast(send(GlobalBroadcast(round=round_no, vector=new_global.vector)))
    server.advance_round()
    return failed


def run_federation(
    datasets: list,
    cfg: FedConfig,
    aug_cfg: AugmentConfig,
    weights: LossWeights,
    layout: ModelLayout,
    initial: ModelParams | None = None,
    transport=None,
    log_rows: list | None = None,
) -> ModelParams:
    """Train for cfg.n_rounds rounds and return the final global parameters."""
    from .model import init_params

    if initial is None:
        initial = init_params(layout, rngmod.stream(cfg.master_seed, "init"))
    clients = [FederatedClient(ds, cfg, aug_cfg, weights, layout) for ds in datasets]
    roster = {ds.client_id: ds.n_samples for ds in datasets}
    if len(roster) != len(datasets):
        raise ValueError("client ids must be unique")
    server = FederatedServer(layout, roster, initial)
    for client in clients:
        client.set_initial_params(initial)
    for _ in range(cfg.n_rounds):
        run_round(server, clients, transport=transport, log_rows=log_rows)
    return server.global_params
