"""Training orchestration: the two-step federated procedure, the baselines,
checkpointing, and inference over aligned and unaligned test data.

Step 1 trains the split network on aligned rows while distilling the guest
representation into the host-side transfer network. Step 2 warm-starts all
parameters, freezes the transfer network, and adds a weighted loss term
over unaligned rows scored through the frozen transfer path.

Baselines: fedsplitnn (classical split training on aligned rows only,
zero-imputed guest representation at unaligned inference) and local_dnn
(host-only single-party model over all host rows).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .config import TrainConfig, canonical_digest
from .data import (
    AlignedData,
    DatasetSplit,
    FeatureSchema,
    SplitPart,
    UnalignedData,
    batch_iter,
    derive_rng,
    derive_seed,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    NonFiniteError,
    ShapeError,
    UndefinedMetricError,
)
from .federation import (
    BACKWARD_GRADS,
    GuestParty,
    HostParty,
    Link,
    PartyMessage,
    build_guest,
    build_host,
)
from .metrics import auc

Array = np.ndarray

CHECKPOINT_MAGIC = b"FUD1"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# prediction container
# ---------------------------------------------------------------------------


@dataclass
class PredictionSet:
    """Per-sample scores with the alignment slice each sample belongs to."""

    keys: list[str]
    labels: Array
    scores: Array
    slice_tags: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        n = len(self.keys)
        if not (self.labels.shape == self.scores.shape == (n,)) or len(self.slice_tags) != n:
            raise ShapeError("prediction set columns disagree in length")
        if n and (self.scores.min() <= 0.0 or self.scores.max() >= 1.0):
            raise ShapeError("scores must lie strictly inside (0, 1)")
        bad = set(self.slice_tags) - {"aligned", "unaligned"}
        if bad:
            raise ShapeError(f"unknown slice tags: {sorted(bad)}")

    @property
    def n(self) -> int:
        return len(self.keys)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "label", "score", "slice"])
            for i in range(self.n):
                writer.writerow([self.keys[i], int(self.labels[i]),
                                 repr(float(self.scores[i])), self.slice_tags[i]])

    @classmethod
    def from_csv(cls, path) -> "PredictionSet":
        keys, labels, scores, tags = [], [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                keys.append(row[0])
                labels.append(float(row[1]))
                scores.append(float(row[2]))
                tags.append(row[3])
        return cls(keys, np.array(labels), np.array(scores), tags)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run, losslessly."""

    method: str
    phase: str  # "step1" | "step2" | "single"
    config: dict
    config_digest: str
    epoch: int
    history: list
    params: dict[str, Array]
    opt_arrays: dict[str, Array]
    opt_meta: dict

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config["train"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Versioned binary container: magic, JSON header, then length-prefixed
    named float64 tensors in sorted name order."""
    tensors = dict(ckpt.params)
    for name, arr in ckpt.opt_arrays.items():
        tensors["opt." + name] = arr
    names = sorted(tensors)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "method": ckpt.method,
        "phase": ckpt.phase,
        "config": ckpt.config,
        "config_digest": ckpt.config_digest,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "opt_meta": ckpt.opt_meta,
        "tensors": [[name, list(tensors[name].shape)] for name in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        header = json.loads(_read_exact(fh, hlen, "header"))
        tensors: dict[str, Array] = {}
        for name, shape in header["tensors"]:
            (nlen,) = struct.unpack("<Q", _read_exact(fh, 8, "name length"))
            read_name = _read_exact(fh, nlen, "tensor name").decode("utf-8")
            if read_name != name:
                raise CheckpointError(f"{path}: tensor order mismatch "
                                      f"({read_name!r} != {name!r})")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape"))
            if list(dims) != list(shape):
                raise CheckpointError(f"{path}: {name}: shape {dims} != header {shape}")
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, 8 * count, f"tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    opt_arrays = {k[4:]: v for k, v in tensors.items() if k.startswith("opt.")}
    return Checkpoint(header["method"], header["phase"], header["config"],
                      header["config_digest"], header["epoch"], header["history"],
                      params, opt_arrays, header["opt_meta"])


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class LocalModel:
    """Host-only baseline: embeddings plus one MLP ending in a scalar logit."""

    name = "local"

    def __init__(self, tables, mlp, optimizer):
        self.tables = tables
        self.mlp = mlp
        self.optimizer = optimizer

    def params(self) -> dict[str, Array]:
        out = nn.table_param_dict("local.emb", self.tables)
        out.update(nn.mlp_param_dict("local.mlp", self.mlp))
        return out

    def forward(self, x: Array):
        emb = nn.embed_lookup(self.tables, x)
        z, cache = nn.mlp_forward(self.mlp, emb)
        return nn.sigmoid(z[:, 0]), (np.asarray(x), cache)

    def train_batch(self, x: Array, y: Array) -> float:
        y_hat, (x, cache) = self.forward(x)
        loss, grad_logit = nn.bce_loss(y_hat, y)
        layer_grads, grad_emb = nn.mlp_backward(self.mlp, cache, grad_logit[:, None])
        grads = nn.mlp_grad_dict("local.mlp", layer_grads)
        grads.update(nn.table_grad_dict(
            "local.emb", self.tables, nn.embed_backward(self.tables, x, grad_emb)))
        self.optimizer.step(self.params(), grads)
        return loss


def _fresh_fed(cfg: TrainConfig, host_schema: FeatureSchema,
               guest_schema: FeatureSchema, with_rep: bool
               ) -> tuple[HostParty, GuestParty]:
    guest = build_guest(guest_schema, cfg.bottom_dims, cfg.embed_dim,
                        nn.make_optimizer(cfg.optimizer, cfg.lr), cfg.init_seed)
    host = build_host(host_schema, cfg.bottom_dims, cfg.top_dims, cfg.rep_dims,
                      cfg.embed_dim, guest.rep_dim,
                      nn.make_optimizer(cfg.optimizer, cfg.lr), cfg.init_seed,
                      with_rep=with_rep)
    return host, guest


def _fresh_local(cfg: TrainConfig, host_schema: FeatureSchema) -> LocalModel:
    rng = derive_rng(cfg.init_seed, "local.emb")
    tables = [nn.init_embedding(s.name, s.vocab_size, cfg.embed_dim, rng)
              for s in host_schema.slots]
    mlp = nn.init_mlp([host_schema.n_slots * cfg.embed_dim, *cfg.bottom_dims, 1],
                      derive_rng(cfg.init_seed, "local.mlp"), final_activation="linear")
    return LocalModel(tables, mlp, nn.make_optimizer(cfg.optimizer, cfg.lr))


def _load_params_into(live: dict[str, Array], ckpt: Checkpoint) -> None:
    missing = sorted(set(live) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(live))
    if missing or extra:
        raise CheckpointError(f"parameter set mismatch: missing {missing}, extra {extra}")
    for name, arr in ckpt.params.items():
        if live[name].shape != arr.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {arr.shape} != model shape {live[name].shape}")
        live[name][...] = arr


def _load_optimizer(opt, prefix: str, ckpt: Checkpoint) -> None:
    meta = ckpt.opt_meta.get(prefix)
    if meta is None:
        raise CheckpointError(f"no optimizer state for {prefix!r} in checkpoint")
    if meta["kind"] != opt.kind:
        raise CheckpointError(f"{prefix}: optimizer kind {meta['kind']} != {opt.kind}")
    arrays = {k: v for k, v in ckpt.opt_arrays.items() if k.startswith(prefix + ".")}
    opt.load_state(arrays, meta["t"])


def models_from_checkpoint(ckpt: Checkpoint, host_schema: FeatureSchema,
                           guest_schema: FeatureSchema, rep_frozen: bool = False,
                           load_opt: bool = True):
    """Rebuild the models a checkpoint describes and restore their parameters.

    Returns (host, guest) for federated methods or a LocalModel otherwise.
    """
    cfg = ckpt.train_config()
    if ckpt.method == "local_dnn":
        model = _fresh_local(cfg, host_schema)
        _load_params_into(model.params(), ckpt)
        if load_opt:
            _load_optimizer(model.optimizer, "local", ckpt)
        return model
    host, guest = _fresh_fed(cfg, host_schema, guest_schema,
                             with_rep=ckpt.method == "fedud")
    _load_params_into({**host.params(), **guest.params()}, ckpt)
    if load_opt:
        _load_optimizer(host.optimizer, "host", ckpt)
        _load_optimizer(guest.optimizer, "guest", ckpt)
    host.rep_frozen = rep_frozen
    return host, guest


def _snapshot(parties: dict) -> dict:
    params = {}
    opt_arrays = {}
    opt_meta = {}
    for prefix, party in parties.items():
        params.update({k: v.copy() for k, v in party.params().items()})
        opt = party.optimizer
        opt_arrays.update({k: v.copy() for k, v in opt.state_arrays().items()})
        opt_meta[prefix] = {"kind": opt.kind, "lr": opt.lr, "t": opt.t}
    return {"params": params, "opt_arrays": opt_arrays, "opt_meta": opt_meta}


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def _score_aligned(host: HostParty, guest: GuestParty, link: Link,
                   aligned: AlignedData, batch_size: int, tag: str):
    scores = []
    for i, batch in enumerate(batch_iter(aligned, batch_size)):
        msg = link.to_host(guest.forward(batch.x_guest, f"{tag}{i}", train=False))
        y_hat, _ = host.forward_aligned(batch.x_host, msg.payload)
        scores.append(y_hat)
    return np.concatenate(scores) if scores else np.zeros(0)


def _score_unaligned(host: HostParty, unaligned: UnalignedData, batch_size: int,
                     method: str):
    scores = []
    for batch in batch_iter(unaligned, batch_size):
        if method == "fedud":
            y_hat, _ = host.forward_unaligned(batch.x_host)
        else:
            # classical split training has no guest features here; impute a
            # zero representation
            zeros = np.zeros((batch.n, host.guest_rep_dim))
            y_hat, _ = host.forward_aligned(batch.x_host, zeros)
        scores.append(y_hat)
    return np.concatenate(scores) if scores else np.zeros(0)


def _score_part_fed(host: HostParty, guest: GuestParty, link: Link,
                    part: SplitPart, batch_size: int, method: str,
                    tag: str) -> PredictionSet:
    s_a = _score_aligned(host, guest, link, part.aligned, batch_size, tag)
    s_u = _score_unaligned(host, part.unaligned, batch_size, method)
    return PredictionSet(part.aligned.keys + part.unaligned.keys,
                         np.concatenate([part.aligned.y, part.unaligned.y]),
                         np.concatenate([s_a, s_u]),
                         ["aligned"] * part.aligned.n + ["unaligned"] * part.unaligned.n)


def _score_part_local(model: LocalModel, part: SplitPart,
                      batch_size: int) -> PredictionSet:
    scores = []
    for data in (part.aligned, part.unaligned):
        for batch in batch_iter(data, batch_size):
            scores.append(model.forward(batch.x_host)[0])
    joined = np.concatenate(scores) if scores else np.zeros(0)
    return PredictionSet(part.aligned.keys + part.unaligned.keys,
                         np.concatenate([part.aligned.y, part.unaligned.y]),
                         joined,
                         ["aligned"] * part.aligned.n + ["unaligned"] * part.unaligned.n)


def _val_auc(preds: PredictionSet) -> float | None:
    if preds.n == 0:
        return None
    try:
        return auc(preds.scores, preds.labels)
    except UndefinedMetricError:
        return None


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------


class _BestTracker:
    """Keeps the best-validation snapshot; stops after `patience` consecutive
    non-improving epochs (patience 0 disables early stopping)."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_metric = -np.inf
        self.best_epoch = 0
        self.best_snap = None
        self.bad = 0

    def observe(self, metric: float | None, parties: dict, epoch: int) -> bool:
        improved = metric is None or metric > self.best_metric
        if improved:
            if metric is not None:
                self.best_metric = metric
            self.best_epoch = epoch
            self.best_snap = _snapshot(parties)
            self.bad = 0
            return False
        self.bad += 1
        return self.patience > 0 and self.bad >= self.patience


# ---------------------------------------------------------------------------
# training: step 1 and the split baseline
# ---------------------------------------------------------------------------


def _phase1_batch(host: HostParty, guest: GuestParty, link: Link, batch, cfg,
                  with_rep: bool, bid: str):
    msg = link.to_host(guest.forward(batch.x_guest, bid))
    h_guest = msg.payload
    h_host, bottom_cache = host.bottom_forward(batch.x_host)
    y_hat, top_cache = host.top_forward(h_host, h_guest)
    pred_loss, grad_logit = nn.bce_loss(y_hat, batch.y)
    grads, g_h_host, g_h_guest = host.top_backward(top_cache, grad_logit)
    distill_loss = 0.0
    back = g_h_guest
    if with_rep and cfg.alpha > 0:
        rep_out, rep_cache = host.rep_forward(h_host)
        # the guest representation is a constant target here: distillation
        # pulls the transfer output toward it, not the other way round
        distill_loss, g_rep = nn.mse_loss(rep_out, h_guest)
        rep_grads, g_extra = host.rep_backward(rep_cache, cfg.alpha * g_rep)
        grads = nn.add_grads(grads, rep_grads)
        g_h_host = g_h_host + g_extra
        if cfg.distill_update_guest:
            back = back - cfg.alpha * g_rep
    grads = nn.add_grads(grads, host.bottom_backward(bottom_cache, g_h_host))
    host.step(grads)
    guest.backward(link.to_guest(
        PartyMessage(BACKWARD_GRADS, "host", "guest", bid, back)))
    return pred_loss, distill_loss


def _run_phase1(data: DatasetSplit, cfg: TrainConfig, with_rep: bool, phase: str,
                method: str, link: Link | None = None, step_hook=None) -> Checkpoint:
    if data.train.aligned.n == 0:
        raise ConfigError("training needs non-empty aligned data")
    host, guest = _fresh_fed(cfg, data.host_schema, data.guest_schema, with_rep)
    if link is None:
        link = Link(guest.rep_dim)
    parties = {"host": host, "guest": guest}
    tracker = _BestTracker(cfg.patience)
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        fwd0 = link.transcript.count("forward_reps")
        bwd0 = link.transcript.count("backward_grads")
        loss1_sum = loss2_sum = 0.0
        n_batches = 0
        for i, batch in enumerate(batch_iter(data.train.aligned, cfg.batch_size,
                                             cfg.shuffle_seed, epoch)):
            bid = f"{phase}-e{epoch}-b{i}"
            try:
                loss1, loss2 = _phase1_batch(host, guest, link, batch, cfg,
                                             with_rep, bid)
            except NonFiniteError as exc:
                raise DivergenceError(f"non-finite value at epoch {epoch} batch {i}: {exc}",
                                      epoch=epoch, batch=i) from exc
            loss1_sum += loss1
            loss2_sum += loss2
            n_batches += 1
            if step_hook is not None:
                step_hook({"when": "post_update", "phase": phase, "epoch": epoch,
                           "step": i, "host": host, "guest": guest,
                           "loss1": loss1, "loss2": loss2})
        fwd_train = link.transcript.count("forward_reps") - fwd0
        bwd_train = link.transcript.count("backward_grads") - bwd0
        # early stopping watches the aligned validation slice only: that is
        # the data this phase trains on
        preds = _score_part_fed(host, guest, link,
                                SplitPart(data.val.aligned,
                                          UnalignedData([], data.val.unaligned.x_host[:0],
                                                        data.val.unaligned.y[:0])),
                                cfg.batch_size, method, f"{phase}-val{epoch}-")
        val = _val_auc(preds)
        history.append({"epoch": epoch, "loss1": loss1_sum / n_batches,
                        "loss2": loss2_sum / n_batches, "val_auc": val,
                        "train_forward_msgs": fwd_train,
                        "train_backward_msgs": bwd_train})
        if tracker.observe(val, parties, epoch):
            break
    snap = tracker.best_snap
    return Checkpoint(method, phase, {"train": cfg.to_dict()},
                      canonical_digest({"train": cfg.to_dict()}),
                      tracker.best_epoch, history, snap["params"],
                      snap["opt_arrays"], snap["opt_meta"])


def train_step1(data: DatasetSplit, cfg: TrainConfig, link: Link | None = None,
                step_hook=None) -> Checkpoint:
    """First phase: aligned-data split training plus distillation into the
    transfer network, weighted by alpha."""
    return _run_phase1(data, cfg, with_rep=True, phase="step1", method="fedud",
                       link=link, step_hook=step_hook)


def train_fedsplitnn(data: DatasetSplit, cfg: TrainConfig, link: Link | None = None,
                     step_hook=None) -> Checkpoint:
    """Classical split training: aligned data only, no transfer network."""
    cfg = TrainConfig.from_dict({**cfg.to_dict(), "alpha": 0.0,
                                 "method": "fedsplitnn"})
    return _run_phase1(data, cfg, with_rep=False, phase="single",
                       method="fedsplitnn", link=link, step_hook=step_hook)


# ---------------------------------------------------------------------------
# training: step 2
# ---------------------------------------------------------------------------


def _phase2_step(host: HostParty, guest: GuestParty, link: Link, ab, ub, cfg,
                 bid: str, step_hook, epoch: int, k: int):
    msg = link.to_host(guest.forward(ab.x_guest, bid))
    h_guest = msg.payload
    h_host, bottom_cache = host.bottom_forward(ab.x_host)
    y_hat, top_cache = host.top_forward(h_host, h_guest)
    aligned_loss, grad_logit = nn.bce_loss(y_hat, ab.y)
    grads, g_h_host, g_h_guest = host.top_backward(top_cache, grad_logit)
    grads = nn.add_grads(grads, host.bottom_backward(bottom_cache, g_h_host))
    unaligned_loss = 0.0
    if ub is not None:
        h_host_u, bottom_cache_u = host.bottom_forward(ub.x_host)
        h_tilde, rep_cache = host.rep_forward(h_host_u)
        y_hat_u, top_cache_u = host.top_forward(h_host_u, h_tilde)
        unaligned_loss, grad_logit_u = nn.bce_loss(y_hat_u, ub.y)
        top_grads_u, g_h_host_u, g_h_tilde = host.top_backward(
            top_cache_u, cfg.beta * grad_logit_u)
        rep_grads, g_through = host.rep_backward(rep_cache, g_h_tilde)
        grads = nn.add_grads(grads, top_grads_u)
        grads = nn.add_grads(grads, rep_grads)
        grads = nn.add_grads(grads,
                             host.bottom_backward(bottom_cache_u, g_h_host_u + g_through))
    combined = aligned_loss + cfg.beta * unaligned_loss
    if step_hook is not None:
        step_hook({"when": "pre_update", "phase": "step2", "epoch": epoch,
                   "step": k, "host": host, "guest": guest,
                   "loss3": combined, "aligned_loss": aligned_loss,
                   "unaligned_loss": unaligned_loss, "aligned_batch": ab,
                   "unaligned_batch": ub})
    host.step(grads)
    guest.backward(link.to_guest(
        PartyMessage(BACKWARD_GRADS, "host", "guest", bid, g_h_guest)))
    return combined, aligned_loss, unaligned_loss


def train_step2(data: DatasetSplit, cfg: TrainConfig, step1: Checkpoint,
                link: Link | None = None, step_hook=None) -> Checkpoint:
    """Second phase: warm start from step 1, freeze the transfer network, and
    train on aligned plus transfer-scored unaligned batches.

    Each optimization step pairs one aligned batch with one unaligned batch,
    cycling the shorter stream; validation uses the full validation set with
    each slice scored through its own path.
    """
    if data.train.aligned.n == 0:
        raise ConfigError("training needs non-empty aligned data")
    if "host.rep.0.weight" not in step1.params:
        raise CheckpointError("step-2 warm start needs a checkpoint with a "
                              "transfer network (step-1 output)")
    base = step1.train_config()
    for field in ("embed_dim", "bottom_dims", "top_dims", "rep_dims"):
        if getattr(base, field) != getattr(cfg, field):
            raise CheckpointError(
                f"{field}: step-1 checkpoint built with {getattr(base, field)}, "
                f"step-2 config asks for {getattr(cfg, field)}")
    if cfg.step2_reinit:
        host, guest = _fresh_fed(cfg, data.host_schema, data.guest_schema, True)
        live = {**host.params(), **guest.params()}
        for name, arr in step1.params.items():
            if name.startswith("host.rep."):
                if live[name].shape != arr.shape:
                    raise CheckpointError(f"{name}: checkpoint shape {arr.shape} "
                                          f"!= model shape {live[name].shape}")
                live[name][...] = arr
        host.rep_frozen = True
    else:
        host, guest = models_from_checkpoint(step1, data.host_schema,
                                             data.guest_schema, rep_frozen=True,
                                             load_opt=False)
    # the objective changes here, so both parties start fresh optimizers
    host.optimizer = nn.make_optimizer(cfg.optimizer, cfg.lr)
    guest.optimizer = nn.make_optimizer(cfg.optimizer, cfg.lr)
    if link is None:
        link = Link(guest.rep_dim)
    parties = {"host": host, "guest": guest}
    tracker = _BestTracker(cfg.patience)
    history = []
    unaligned_seed = derive_seed(cfg.shuffle_seed, "step2-unaligned")
    for epoch in range(1, cfg.max_epochs + 1):
        aligned_batches = list(batch_iter(data.train.aligned, cfg.batch_size,
                                          cfg.shuffle_seed, epoch))
        use_unaligned = cfg.beta > 0 and data.train.unaligned.n > 0
        unaligned_batches = list(batch_iter(data.train.unaligned, cfg.batch_size,
                                            unaligned_seed, epoch)) if use_unaligned else []
        steps = max(len(aligned_batches), len(unaligned_batches))
        loss3_sum = 0.0
        for k in range(steps):
            ab = aligned_batches[k % len(aligned_batches)]
            ub = unaligned_batches[k % len(unaligned_batches)] if unaligned_batches else None
            bid = f"step2-e{epoch}-s{k}"
            try:
                loss3, _, _ = _phase2_step(host, guest, link, ab, ub, cfg, bid,
                                           step_hook, epoch, k)
            except NonFiniteError as exc:
                raise DivergenceError(f"non-finite value at epoch {epoch} step {k}: {exc}",
                                      epoch=epoch, batch=k) from exc
            loss3_sum += loss3
        preds = _score_part_fed(host, guest, link, data.val, cfg.batch_size,
                                "fedud", f"step2-val{epoch}-")
        val = _val_auc(preds)
        history.append({"epoch": epoch, "loss3": loss3_sum / steps, "val_auc": val,
                        "steps": steps})
        if tracker.observe(val, parties, epoch):
            break
    snap = tracker.best_snap
    return Checkpoint("fedud", "step2", {"train": cfg.to_dict()},
                      canonical_digest({"train": cfg.to_dict()}),
                      tracker.best_epoch, history, snap["params"],
                      snap["opt_arrays"], snap["opt_meta"])


def run_fedud(data: DatasetSplit, cfg: TrainConfig, link: Link | None = None,
              step_hook=None) -> tuple[Checkpoint, Checkpoint]:
    """Both phases in sequence over one shared message link."""
    if link is None:
        link = Link(cfg.bottom_dims[-1])
    step1 = train_step1(data, cfg, link=link, step_hook=step_hook)
    step2 = train_step2(data, cfg, step1, link=link, step_hook=step_hook)
    return step1, step2


# ---------------------------------------------------------------------------
# training: local baseline
# ---------------------------------------------------------------------------


def _host_view(part: SplitPart) -> UnalignedData:
    """All host rows of a part, aligned first; counts as reading both pools."""
    part.aligned.reads += part.aligned.n
    part.unaligned.reads += part.unaligned.n
    return UnalignedData(part.aligned.keys + part.unaligned.keys,
                         np.concatenate([part.aligned.x_host, part.unaligned.x_host]),
                         np.concatenate([part.aligned.y, part.unaligned.y]))


def train_local_dnn(data: DatasetSplit, cfg: TrainConfig, step_hook=None) -> Checkpoint:
    """Single-party baseline over every host row; no federation anywhere."""
    model = _fresh_local(cfg, data.host_schema)
    train_view = _host_view(data.train)
    if train_view.n == 0:
        raise ConfigError("training needs non-empty host data")
    tracker = _BestTracker(cfg.patience)
    parties = {"local": model}
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        loss_sum = 0.0
        n_batches = 0
        for i, batch in enumerate(batch_iter(train_view, cfg.batch_size,
                                             cfg.shuffle_seed, epoch)):
            try:
                loss_sum += model.train_batch(batch.x_host, batch.y)
            except NonFiniteError as exc:
                raise DivergenceError(f"non-finite value at epoch {epoch} batch {i}: {exc}",
                                      epoch=epoch, batch=i) from exc
            n_batches += 1
            if step_hook is not None:
                step_hook({"when": "post_update", "phase": "single", "epoch": epoch,
                           "step": i, "model": model})
        preds = _score_part_local(model, data.val, cfg.batch_size)
        val = _val_auc(preds)
        history.append({"epoch": epoch, "loss1": loss_sum / n_batches, "val_auc": val})
        if tracker.observe(val, parties, epoch):
            break
    snap = tracker.best_snap
    return Checkpoint("local_dnn", "single", {"train": cfg.to_dict()},
                      canonical_digest({"train": cfg.to_dict()}),
                      tracker.best_epoch, history, snap["params"],
                      snap["opt_arrays"], snap["opt_meta"])


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def predict(ckpt: Checkpoint, data: DatasetSplit, method: str,
            link: Link | None = None) -> PredictionSet:
    """Score the test part: aligned rows through the cross-party path,
    unaligned rows through each method's local policy."""
    if ckpt.method != method:
        raise CheckpointError(f"checkpoint holds method {ckpt.method!r}, "
                              f"asked to predict with {method!r}")
    cfg = ckpt.train_config()
    if method == "local_dnn":
        model = models_from_checkpoint(ckpt, data.host_schema, data.guest_schema,
                                       load_opt=False)
        return _score_part_local(model, data.test, cfg.batch_size)
    host, guest = models_from_checkpoint(ckpt, data.host_schema, data.guest_schema,
                                         load_opt=False)
    if link is None:
        link = Link(guest.rep_dim)
    return _score_part_fed(host, guest, link, data.test, cfg.batch_size, method,
                           "predict-")
