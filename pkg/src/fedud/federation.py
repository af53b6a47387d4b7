"""The two party state machines and the message boundary between them.

Everything that crosses between host and guest goes through a Link as a
PartyMessage, and a PartyMessage can only carry a real-valued tensor plus
an opaque batch id. Raw feature indices, keys and labels have no route
across the boundary by construction. The Transcript records metadata
(direction, variant, shape, bytes) for every message, never payloads, and
audit_transcript turns that log into a pass/fail verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import FeatureSchema, derive_rng
from .errors import ProtocolError, SchemaError, ShapeError

Array = np.ndarray

FORWARD_REPS = "forward_reps"
BACKWARD_GRADS = "backward_grads"
CONTROL = "control"

MESSAGE_VARIANTS = (FORWARD_REPS, BACKWARD_GRADS, CONTROL)


class PartyMessage:
    """The only object allowed across the party boundary.

    Tensor variants (forward_reps, backward_grads) carry one 2-D float64
    array; control messages carry a short tag string and no tensor.
    """

    __slots__ = ("variant", "sender", "recipient", "batch_id", "payload", "tag")

    def __init__(self, variant: str, sender: str, recipient: str,
                 batch_id: str = "", payload=None, tag: str = ""):
        if variant not in MESSAGE_VARIANTS:
            raise ProtocolError(f"unknown message variant {variant!r}")
        if variant == CONTROL:
            if payload is not None:
                raise ProtocolError("control messages carry no tensor")
        else:
            payload = nn.as_f64(payload)
            if payload.ndim != 2:
                raise ProtocolError(f"{variant} payload must be 2-D, got {payload.shape}")
        self.variant = variant
        self.sender = sender
        self.recipient = recipient
        self.batch_id = str(batch_id)
        self.payload = payload
        self.tag = tag

    @property
    def shape(self) -> tuple:
        return () if self.payload is None else self.payload.shape

    @property
    def nbytes(self) -> int:
        return 0 if self.payload is None else int(self.payload.nbytes)


@dataclass(frozen=True)
class TranscriptRecord:
    direction: str  # "guest->host" or "host->guest"
    variant: str
    shape: tuple
    nbytes: int


class Transcript:
    """Append-only metadata log of every message in a run."""

    def __init__(self):
        self._records: list[TranscriptRecord] = []

    def log(self, direction: str, msg: PartyMessage) -> None:
        self._records.append(TranscriptRecord(direction, msg.variant, msg.shape,
                                              msg.nbytes))

    @property
    def records(self) -> tuple[TranscriptRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def count(self, variant: str) -> int:
        return sum(1 for r in self._records if r.variant == variant)

    def export_lines(self) -> list[str]:
        """One record per line: direction, variant, shape, bytes."""
        lines = []
        for r in self._records:
            shape = "x".join(str(d) for d in r.shape) if r.shape else "-"
            lines.append(f"{r.direction},{r.variant},{shape},{r.nbytes}")
        return lines


@dataclass
class AuditVerdict:
    passed: bool
    failures: list[str]

    def __bool__(self) -> bool:
        return self.passed


def audit_transcript(transcript: Transcript, rep_dim: int) -> AuditVerdict:
    """PASS iff every record is a known variant and every tensor has the
    representation width; FAIL lists the offending entries."""
    failures = []
    for i, r in enumerate(transcript.records):
        if r.variant not in MESSAGE_VARIANTS:
            failures.append(f"record {i}: unknown variant {r.variant!r}")
            continue
        if r.variant == CONTROL:
            continue
        if len(r.shape) != 2 or r.shape[1] != rep_dim:
            failures.append(f"record {i}: {r.variant} shape {r.shape} "
                            f"width != rep dim {rep_dim}")
    return AuditVerdict(not failures, failures)


class Link:
    """In-process synchronous transport: ordered, lossless, logging.

    The reference execution mode hands each message straight to the caller;
    a different transport only needs to preserve order and the transcript
    discipline.
    """

    def __init__(self, rep_dim: int):
        self.rep_dim = int(rep_dim)
        self.transcript = Transcript()

    def _deliver(self, direction: str, msg: PartyMessage) -> PartyMessage:
        if msg.payload is not None and msg.payload.shape[1] != self.rep_dim:
            raise ProtocolError(
                f"{msg.variant} width {msg.payload.shape[1]} != rep dim {self.rep_dim}")
        self.transcript.log(direction, msg)
        return msg

    def to_host(self, msg: PartyMessage) -> PartyMessage:
        return self._deliver("guest->host", msg)

    def to_guest(self, msg: PartyMessage) -> PartyMessage:
        return self._deliver("host->guest", msg)


# ---------------------------------------------------------------------------
# guest party
# ---------------------------------------------------------------------------


class GuestParty:
    """Label-free party: embeddings plus a bottom MLP, nothing else.

    Forward passes emit ForwardReps messages; training forwards retain a
    single-use cache keyed by batch id so a later BackwardGrads message can
    be turned into exactly one local optimizer step.
    """

    name = "guest"

    def __init__(self, schema: FeatureSchema, tables, mlp, optimizer):
        if schema.party != "guest":
            raise SchemaError("GuestParty needs a guest schema")
        if len(tables) != schema.n_slots:
            raise SchemaError(f"{len(tables)} tables for {schema.n_slots} slots")
        self.schema = schema
        self.tables = tables
        self.mlp = mlp
        self.optimizer = optimizer
        self._caches: dict[str, tuple] = {}

    @property
    def rep_dim(self) -> int:
        return self.mlp.out_dim

    def params(self) -> dict[str, Array]:
        out = nn.table_param_dict("guest.emb", self.tables)
        out.update(nn.mlp_param_dict("guest.mlp", self.mlp))
        return out

    def forward(self, x_g: Array, batch_id: str, train: bool = True) -> PartyMessage:
        emb = nn.embed_lookup(self.tables, x_g)
        h, cache = nn.mlp_forward(self.mlp, emb)
        if train:
            if batch_id in self._caches:
                raise ProtocolError(f"batch id {batch_id!r} already has a pending forward")
            self._caches[batch_id] = (np.asarray(x_g), cache)
        return PartyMessage(FORWARD_REPS, self.name, "host", batch_id, h)

    def backward(self, msg: PartyMessage) -> None:
        if msg.variant != BACKWARD_GRADS:
            raise ProtocolError(f"guest backward expects backward_grads, got {msg.variant}")
        cached = self._caches.pop(msg.batch_id, None)
        if cached is None:
            raise ProtocolError(f"no pending forward for batch id {msg.batch_id!r}")
        x_g, cache = cached
        layer_grads, grad_emb = nn.mlp_backward(self.mlp, cache, msg.payload)
        grads = nn.mlp_grad_dict("guest.mlp", layer_grads)
        grads.update(nn.table_grad_dict(
            "guest.emb", self.tables, nn.embed_backward(self.tables, x_g, grad_emb)))
        self.optimizer.step(self.params(), grads)


# ---------------------------------------------------------------------------
# host party
# ---------------------------------------------------------------------------


class HostParty:
    """Label-owning party: embeddings, bottom MLP, top MLP, and the
    representation transfer MLP that predicts the guest representation from
    the host one."""

    name = "host"

    def __init__(self, schema: FeatureSchema, tables, bottom, top, rep,
                 optimizer, rep_frozen: bool = False):
        if schema.party != "host":
            raise SchemaError("HostParty needs a host schema")
        if len(tables) != schema.n_slots:
            raise SchemaError(f"{len(tables)} tables for {schema.n_slots} slots")
        self.schema = schema
        self.tables = tables
        self.bottom = bottom
        self.top = top
        self.rep = rep  # None when the method trains without transfer
        self.optimizer = optimizer
        self.rep_frozen = rep_frozen

    @property
    def rep_dim(self) -> int:
        return self.bottom.out_dim

    @property
    def guest_rep_dim(self) -> int:
        # the top model consumes concat(host rep, guest rep)
        return self.top.in_dim - self.bottom.out_dim

    def params(self) -> dict[str, Array]:
        out = nn.table_param_dict("host.emb", self.tables)
        out.update(nn.mlp_param_dict("host.bottom", self.bottom))
        out.update(nn.mlp_param_dict("host.top", self.top))
        if self.rep is not None:
            out.update(nn.mlp_param_dict("host.rep", self.rep))
        return out

    # -- forward pieces ----------------------------------------------------

    def bottom_forward(self, x_h: Array) -> tuple[Array, tuple]:
        emb = nn.embed_lookup(self.tables, x_h)
        h, cache = nn.mlp_forward(self.bottom, emb)
        return h, (np.asarray(x_h), cache)

    def rep_forward(self, h_host: Array) -> tuple[Array, tuple]:
        if self.rep is None:
            raise ProtocolError("this host carries no representation transfer network")
        out, cache = nn.mlp_forward(self.rep, h_host)
        return out, cache

    def top_forward(self, h_host: Array, h_guest: Array) -> tuple[Array, tuple]:
        # concat order is host-then-guest everywhere
        if h_guest.shape[1] != self.guest_rep_dim:
            raise ProtocolError(
                f"guest rep width {h_guest.shape[1]} != expected {self.guest_rep_dim}")
        z, cache = nn.mlp_forward(self.top, np.concatenate([h_host, h_guest], axis=1))
        return nn.sigmoid(z[:, 0]), cache

    # -- backward pieces ---------------------------------------------------

    def top_backward(self, cache, grad_logits: Array):
        layer_grads, grad_concat = nn.mlp_backward(self.top, cache, grad_logits[:, None])
        grads = nn.mlp_grad_dict("host.top", layer_grads)
        cut = self.bottom.out_dim
        return grads, grad_concat[:, :cut], grad_concat[:, cut:]

    def rep_backward(self, cache, grad_out: Array):
        layer_grads, grad_h = nn.mlp_backward(self.rep, cache, grad_out)
        if self.rep_frozen:
            # gradient still flows through Rep into the host representation,
            # but Rep's own parameters take no update
            return {}, grad_h
        return nn.mlp_grad_dict("host.rep", layer_grads), grad_h

    def bottom_backward(self, cache, grad_h: Array) -> dict[str, Array]:
        x_h, mlp_cache = cache
        layer_grads, grad_emb = nn.mlp_backward(self.bottom, mlp_cache, grad_h)
        grads = nn.mlp_grad_dict("host.bottom", layer_grads)
        grads.update(nn.table_grad_dict(
            "host.emb", self.tables, nn.embed_backward(self.tables, x_h, grad_emb)))
        return grads

    def step(self, grads: dict[str, Array]) -> None:
        self.optimizer.step(self.params(), grads)

    # -- whole-path forwards (inference and tests) --------------------------

    def forward_aligned(self, x_h: Array, h_guest: Array) -> tuple[Array, dict]:
        if np.asarray(x_h).shape[0] != h_guest.shape[0]:
            raise ShapeError("x_h and guest representation row counts differ")
        h_host, bottom_cache = self.bottom_forward(x_h)
        y_hat, top_cache = self.top_forward(h_host, h_guest)
        return y_hat, {"bottom": bottom_cache, "top": top_cache,
                       "h_host": h_host, "h_guest": h_guest}

    def forward_unaligned(self, x_h: Array) -> tuple[Array, dict]:
        """Score rows with no guest record: the transfer network stands in
        for the guest representation. No message crosses the boundary."""
        h_host, bottom_cache = self.bottom_forward(x_h)
        h_tilde, rep_cache = self.rep_forward(h_host)
        y_hat, top_cache = self.top_forward(h_host, h_tilde)
        return y_hat, {"bottom": bottom_cache, "rep": rep_cache, "top": top_cache,
                       "h_host": h_host, "h_tilde": h_tilde}


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _build_tables(schema: FeatureSchema, embed_dim: int, rng) -> list:
    return [nn.init_embedding(s.name, s.vocab_size, embed_dim, rng) for s in schema.slots]


def build_guest(schema: FeatureSchema, bottom_dims, embed_dim: int,
                optimizer, init_seed: int) -> GuestParty:
    tables = _build_tables(schema, embed_dim, derive_rng(init_seed, "guest.emb"))
    mlp = nn.init_mlp([schema.n_slots * embed_dim, *bottom_dims],
                      derive_rng(init_seed, "guest.mlp"))
    return GuestParty(schema, tables, mlp, optimizer)


def build_host(schema: FeatureSchema, bottom_dims, top_dims, rep_dims,
               embed_dim: int, guest_rep_dim: int, optimizer, init_seed: int,
               with_rep: bool = True) -> HostParty:
    tables = _build_tables(schema, embed_dim, derive_rng(init_seed, "host.emb"))
    bottom = nn.init_mlp([schema.n_slots * embed_dim, *bottom_dims],
                         derive_rng(init_seed, "host.bottom"))
    top = nn.init_mlp([bottom_dims[-1] + guest_rep_dim, *top_dims, 1],
                      derive_rng(init_seed, "host.top"), final_activation="linear")
    rep = None
    if with_rep:
        rep = nn.init_mlp([bottom_dims[-1], *rep_dims],
                          derive_rng(init_seed, "host.rep"), final_activation="linear")
        if rep.out_dim != guest_rep_dim:
            raise SchemaError(
                f"transfer network output {rep.out_dim} != guest rep dim {guest_rep_dim}")
    return HostParty(schema, tables, bottom, top, rep, optimizer)
