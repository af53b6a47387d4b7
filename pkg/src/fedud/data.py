"""Datasets for the two-party simulator.

Covers feature schemas, CSV ingestion with the hashing trick, key
intersection (the simulated output of a private set intersection),
aligned/unaligned partitioning, a synthetic correlated-dataset generator,
and deterministic mini-batch iteration.

Host rows carry labels; guest rows never do. The only thing the parties
share is the key namespace.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SchemaError

Array = np.ndarray

MISSING_TOKEN = "__missing__"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: str | bytes) -> int:
    """FNV-1a 64-bit hash; stable across runs and platforms."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def hash_feature(slot_name: str, raw_value: str, vocab_size: int) -> int:
    """Hashing trick with per-slot salting: FNV-1a of "slot=value" mod vocab."""
    if vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
    return fnv1a_64(f"{slot_name}={raw_value}") % vocab_size


def derive_seed(seed: int, label: str) -> int:
    """Stable integer sub-seed for a named stream."""
    return fnv1a_64(f"{seed}:{label}") % (2 ** 63)


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Named random stream: independent draws per (seed, label) pair.

    Keeps each component's initialization independent of which other
    components exist, which is what makes degenerate-configuration runs
    comparable parameter-for-parameter.
    """
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng([seed, fnv1a_64(label)])


# ---------------------------------------------------------------------------
# schemas and sample containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotSpec:
    name: str
    vocab_size: int


@dataclass(frozen=True)
class FeatureSchema:
    """One party's view of the data: ordered feature slots plus key/label columns."""

    party: str  # "host" | "guest"
    slots: tuple[SlotSpec, ...]
    key_column: str = "key"
    label_column: str = "label"

    def __post_init__(self):
        if self.party not in ("host", "guest"):
            raise SchemaError(f"party must be host or guest, got {self.party!r}")
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise SchemaError("slot names must be unique within a party")
        for s in self.slots:
            if s.vocab_size < 2:
                raise SchemaError(f"slot {s.name}: vocab_size must be >= 2")

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def has_labels(self) -> bool:
        return self.party == "host"


def synthetic_schemas(host_slots: int, guest_slots: int, vocab_size: int
                      ) -> tuple[FeatureSchema, FeatureSchema]:
    host = FeatureSchema("host", tuple(SlotSpec(f"h{j}", vocab_size) for j in range(host_slots)))
    guest = FeatureSchema("guest", tuple(SlotSpec(f"g{j}", vocab_size) for j in range(guest_slots)))
    return host, guest


@dataclass
class Sample:
    key: str
    slot_indices: Array
    label: float | None = None


@dataclass
class PartyDataset:
    """All of one party's rows, feature values already hashed to indices."""

    schema: FeatureSchema
    keys: list[str]
    indices: Array  # (n, n_slots) int64
    labels: Array | None = None  # (n,) float64, host only

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        n = len(self.keys)
        if self.indices.shape != (n, self.schema.n_slots):
            raise SchemaError(
                f"indices shape {self.indices.shape} != ({n}, {self.schema.n_slots})")
        if self.schema.has_labels:
            if self.labels is None:
                raise SchemaError("host dataset requires labels")
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (n,):
                raise SchemaError(f"labels shape {self.labels.shape} != ({n},)")
        elif self.labels is not None:
            raise SchemaError("guest dataset must not carry labels")
        if len(set(self.keys)) != n:
            raise DataError("duplicate keys within one party")
        for j, slot in enumerate(self.schema.slots):
            col = self.indices[:, j]
            if col.size and (col.min() < 0 or col.max() >= slot.vocab_size):
                raise SchemaError(f"slot {slot.name}: index outside [0, {slot.vocab_size})")

    @property
    def n(self) -> int:
        return len(self.keys)

    def key_set(self) -> set[str]:
        return set(self.keys)

    def select(self, rows) -> "PartyDataset":
        rows = np.asarray(rows)
        labels = self.labels[rows] if self.labels is not None else None
        return PartyDataset(self.schema, [self.keys[i] for i in rows],
                            self.indices[rows], labels)


def pack_samples(schema: FeatureSchema, samples: list[Sample]) -> PartyDataset:
    keys = [s.key for s in samples]
    if samples:
        indices = np.stack([np.asarray(s.slot_indices, dtype=np.int64) for s in samples])
    else:
        indices = np.zeros((0, schema.n_slots), dtype=np.int64)
    labels = None
    if schema.has_labels:
        labels = np.array([s.label for s in samples], dtype=np.float64)
    else:
        if any(s.label is not None for s in samples):
            raise SchemaError("guest samples must not carry labels")
    return PartyDataset(schema, keys, indices, labels)


# ---------------------------------------------------------------------------
# CSV ingestion and emission
# ---------------------------------------------------------------------------


def load_csv(path, schema: FeatureSchema) -> list[Sample]:
    """Read one party's rows; empty cells hash as the missing-value token.

    A label column is read only when the schema is the host's; guest
    schemas ignore any label column present in the file.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        col = {name: i for i, name in enumerate(header)}
        needed = [schema.key_column] + [s.name for s in schema.slots]
        if schema.has_labels:
            needed.append(schema.label_column)
        for name in needed:
            if name not in col:
                raise SchemaError(f"{path}: missing column {name!r}")
        # per-slot memo: distinct raw values per slot are few, hash each once
        memo: list[dict[str, int]] = [{} for _ in schema.slots]
        slot_cols = [col[s.name] for s in schema.slots]
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno}: expected {len(header)} cells, got {len(row)}")
            idx = np.empty(schema.n_slots, dtype=np.int64)
            for j, (slot, c) in enumerate(zip(schema.slots, slot_cols)):
                raw = row[c] or MISSING_TOKEN
                cached = memo[j].get(raw)
                if cached is None:
                    cached = memo[j][raw] = hash_feature(slot.name, raw, slot.vocab_size)
                idx[j] = cached
            label = None
            if schema.has_labels:
                cell = row[col[schema.label_column]].strip()
                if cell not in ("0", "1"):
                    raise DataError(f"{path}: line {lineno}: label must be 0 or 1, got {cell!r}")
                label = float(cell)
            samples.append(Sample(row[col[schema.key_column]], idx, label))
    return samples


@dataclass
class RawParty:
    """Pre-hash synthetic data: raw string tokens per slot, writable as CSV."""

    schema: FeatureSchema
    keys: list[str]
    values: list[list[str]]  # n rows of n_slots raw tokens
    labels: Array | None = None

    @property
    def n(self) -> int:
        return len(self.keys)

    def to_dataset(self) -> PartyDataset:
        memo: list[dict[str, int]] = [{} for _ in self.schema.slots]
        indices = np.empty((self.n, self.schema.n_slots), dtype=np.int64)
        for i, row in enumerate(self.values):
            for j, raw in enumerate(row):
                cached = memo[j].get(raw)
                if cached is None:
                    slot = self.schema.slots[j]
                    cached = memo[j][raw] = hash_feature(slot.name, raw, slot.vocab_size)
                indices[i, j] = cached
        labels = self.labels if self.schema.has_labels else None
        return PartyDataset(self.schema, list(self.keys), indices, labels)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = [self.schema.key_column]
            if self.schema.has_labels:
                header.append(self.schema.label_column)
            header.extend(s.name for s in self.schema.slots)
            writer.writerow(header)
            for i in range(self.n):
                row = [self.keys[i]]
                if self.schema.has_labels:
                    row.append(str(int(self.labels[i])))
                row.extend(self.values[i])
                writer.writerow(row)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

LATENT_DIM = 4
# host tokens are cut finer than guest tokens: label supervision spreads
# thin across the host vocabulary while distillation targets stay dense
HOST_BUCKETS = 64
GUEST_BUCKETS = 16
OBS_NOISE = 0.15
# logit scale large enough that Bernoulli sampling is nearly deterministic;
# the label_noise knob, not sampling, sets the task difficulty
LABEL_SCALE = 6.0
# visibility is asymmetric on purpose: dims 2 and 3 never reach the host,
# dim 1 reaches it only as a faint trace (the guest sees it in full), and
# dim 0 is host-private; guest features therefore add label signal the
# host cannot recover on its own, while the shared dim gives the parties
# correlated representations on aligned samples
HOST_MIX = (1.0, 0.12, 0.0, 0.0)
GUEST_MIX = (0.0, 1.0, 1.0, 1.0)
# per-latent-dim label weight, normalized to unit length at use; the
# host-private dim is down-weighted so guest-side dims carry most of
# the outcome
LABEL_MIX = (0.7, 1.0, 1.0, 1.0)


def _bucketize(column: Array, n_buckets: int) -> list[str]:
    # quantile edges make every bucket token roughly equally frequent
    edges = np.quantile(column, np.linspace(0, 1, n_buckets + 1)[1:-1])
    buckets = np.searchsorted(edges, column)
    return [f"b{b:03d}" for b in buckets]


def _party_values(u: Array, mix, n_slots: int, n_buckets: int,
                  rng: np.random.Generator) -> list[list[str]]:
    n = u.shape[0]
    # random directions, but with the total projection energy per latent
    # dimension fixed across draws: every dataset carries the same amount
    # of party-level information, only its arrangement over slots varies
    directions = rng.standard_normal((n_slots, LATENT_DIM))
    for k, weight in enumerate(mix):
        norm = np.linalg.norm(directions[:, k])
        directions[:, k] *= weight * np.sqrt(n_slots) / norm
    cols = []
    for j in range(n_slots):
        proj = u @ directions[j] + OBS_NOISE * rng.standard_normal(n)
        cols.append(_bucketize(proj, n_buckets))
    return [[cols[j][i] for j in range(n_slots)] for i in range(n)]


def gen_synthetic(n_samples: int, aligned_fraction: float, host_slots: int,
                  guest_slots: int, vocab_size: int, label_noise: float,
                  seed: int) -> tuple[RawParty, RawParty]:
    """Correlated two-party dataset from a shared 4-dim latent vector.

    Host and guest slot values are quantized noisy projections of the same
    latent draw; labels are Bernoulli in a logistic model of the latent.
    The first ceil(aligned_fraction * n) keys exist on both parties; the
    remaining host keys are absent from the guest side.
    """
    if not 0.0 <= aligned_fraction <= 1.0:
        raise ConfigError(f"aligned_fraction must be in [0, 1], got {aligned_fraction}")
    if min(host_slots, guest_slots) < 1:
        raise ConfigError("slot counts must be >= 1")
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    rng = derive_rng(seed, "synthetic")

    u = rng.standard_normal((n_samples, LATENT_DIM))
    raw_keys = rng.integers(0, 2 ** 63, size=n_samples)
    keys = [f"{int(v):016x}" for v in raw_keys]
    if len(set(keys)) != n_samples:
        raise DataError("key collision in synthetic generator; change the seed")

    w = np.asarray(LABEL_MIX, dtype=np.float64)
    w = w / np.linalg.norm(w)
    logits = LABEL_SCALE * (u @ w) + label_noise * rng.standard_normal(n_samples)
    labels = (rng.random(n_samples) < 1.0 / (1.0 + np.exp(-logits))).astype(np.float64)

    host_schema, guest_schema = synthetic_schemas(host_slots, guest_slots, vocab_size)
    host_values = _party_values(u, HOST_MIX, host_slots, HOST_BUCKETS, rng)
    guest_values = _party_values(u, GUEST_MIX, guest_slots, GUEST_BUCKETS, rng)

    n_aligned = int(np.ceil(aligned_fraction * n_samples))
    host = RawParty(host_schema, keys, host_values, labels)
    guest = RawParty(guest_schema, keys[:n_aligned], guest_values[:n_aligned])
    return host, guest


# ---------------------------------------------------------------------------
# alignment and splits
# ---------------------------------------------------------------------------


def intersect_keys(host_keys: set[str], guest_keys: set[str]) -> list[str]:
    """Exact key intersection, sorted for a deterministic iteration order.

    This is the simulated output of a private set intersection; only keys
    ever cross the party boundary here.
    """
    return sorted(set(host_keys) & set(guest_keys))


def split_by_alignment(host_samples: PartyDataset, aligned_keys
                       ) -> tuple[PartyDataset, PartyDataset]:
    """Partition host rows by aligned-key membership, preserving input order."""
    member = set(aligned_keys)
    flags = np.fromiter((k in member for k in host_samples.keys), dtype=bool,
                        count=host_samples.n)
    return host_samples.select(np.flatnonzero(flags)), \
        host_samples.select(np.flatnonzero(~flags))


@dataclass
class AlignedBatch:
    keys: list[str]
    x_host: Array
    y: Array
    x_guest: Array

    def __post_init__(self):
        n = len(self.keys)
        if not (self.x_host.shape[0] == self.y.shape[0] == self.x_guest.shape[0] == n):
            raise SchemaError("aligned batch row counts disagree")

    @property
    def n(self) -> int:
        return len(self.keys)


@dataclass
class UnalignedBatch:
    keys: list[str]
    x_host: Array
    y: Array

    @property
    def n(self) -> int:
        return len(self.keys)


@dataclass
class AlignedData:
    """Aligned rows: host and guest features joined row-for-row by key."""

    keys: list[str]
    x_host: Array
    y: Array
    x_guest: Array
    reads: int = 0  # instrumentation: rows handed out via take()

    @property
    def n(self) -> int:
        return len(self.keys)

    def take(self, rows) -> AlignedBatch:
        rows = np.asarray(rows)
        self.reads += rows.size
        return AlignedBatch([self.keys[i] for i in rows], self.x_host[rows],
                            self.y[rows], self.x_guest[rows])


@dataclass
class UnalignedData:
    keys: list[str]
    x_host: Array
    y: Array
    reads: int = 0

    @property
    def n(self) -> int:
        return len(self.keys)

    def take(self, rows) -> UnalignedBatch:
        rows = np.asarray(rows)
        self.reads += rows.size
        return UnalignedBatch([self.keys[i] for i in rows], self.x_host[rows],
                              self.y[rows])


@dataclass
class SplitPart:
    aligned: AlignedData
    unaligned: UnalignedData


@dataclass
class DatasetSplit:
    train: SplitPart
    val: SplitPart
    test: SplitPart
    host_schema: FeatureSchema
    guest_schema: FeatureSchema


def align_parties(host: PartyDataset, guest: PartyDataset
                  ) -> tuple[AlignedData, UnalignedData]:
    """Join the two parties on their common keys.

    Aligned rows keep the host's input order; guest rows are fetched by key
    so row i of x_host and x_guest always describe the same sample.
    """
    aligned_keys = intersect_keys(host.key_set(), guest.key_set())
    host_aligned, host_unaligned = split_by_alignment(host, aligned_keys)
    guest_row = {k: i for i, k in enumerate(guest.keys)}
    guest_rows = np.array([guest_row[k] for k in host_aligned.keys], dtype=np.int64)
    x_guest = guest.indices[guest_rows] if guest_rows.size else \
        np.zeros((0, guest.schema.n_slots), dtype=np.int64)
    aligned = AlignedData(host_aligned.keys, host_aligned.indices,
                          host_aligned.labels, x_guest)
    unaligned = UnalignedData(host_unaligned.keys, host_unaligned.indices,
                              host_unaligned.labels)
    return aligned, unaligned


def _three_way(n: int, n_val: int, n_test: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return order[n_val + n_test:], order[:n_val], order[n_val:n_val + n_test]


def split_dataset(aligned: AlignedData, unaligned: UnalignedData, n_val: int,
                  n_test: int, seed: int, host_schema: FeatureSchema,
                  guest_schema: FeatureSchema) -> DatasetSplit:
    """Random three-way split, stratified so each part keeps the overall
    aligned/unaligned proportion; parts are disjoint by key."""
    n = aligned.n + unaligned.n
    if n_val < 0 or n_test < 0 or n_val + n_test >= n:
        raise ConfigError(f"cannot split {n} samples into val={n_val}, test={n_test}")
    rng = derive_rng(seed, "split")
    na_val = round(n_val * aligned.n / n)
    na_test = round(n_test * aligned.n / n)
    a_train, a_val, a_test = _three_way(aligned.n, na_val, na_test, rng)
    u_train, u_val, u_test = _three_way(unaligned.n, n_val - na_val, n_test - na_test, rng)

    def a_part(rows):
        return AlignedData([aligned.keys[i] for i in rows], aligned.x_host[rows],
                           aligned.y[rows], aligned.x_guest[rows])

    def u_part(rows):
        return UnalignedData([unaligned.keys[i] for i in rows],
                             unaligned.x_host[rows], unaligned.y[rows])

    return DatasetSplit(SplitPart(a_part(a_train), u_part(u_train)),
                        SplitPart(a_part(a_val), u_part(u_val)),
                        SplitPart(a_part(a_test), u_part(u_test)),
                        host_schema, guest_schema)


def subsample_unaligned(split: DatasetSplit, fraction: float, seed: int) -> DatasetSplit:
    """Keep a seeded random fraction of the unaligned TRAINING rows.

    Validation and test parts are untouched, so sweeps over the unaligned
    training budget stay comparable on the evaluation side.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must be in [0, 1], got {fraction}")
    u = split.train.unaligned
    k = round(fraction * u.n)
    rows = np.sort(derive_rng(seed, "unaligned-subsample").permutation(u.n)[:k])
    kept = UnalignedData([u.keys[i] for i in rows], u.x_host[rows], u.y[rows])
    return DatasetSplit(SplitPart(split.train.aligned, kept), split.val, split.test,
                        split.host_schema, split.guest_schema)


def batch_iter(data, batch_size: int, shuffle_seed: int | None = None, epoch: int = 0):
    """Deterministic mini-batches; the permutation depends only on
    (shuffle_seed, epoch). shuffle_seed None keeps the input order."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle_seed is None:
        order = np.arange(data.n)
    else:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(data.n)
    for start in range(0, data.n, batch_size):
        yield data.take(order[start:start + batch_size])


def build_synthetic_split(n_train: int, n_val: int, n_test: int,
                          aligned_fraction: float, host_slots: int,
                          guest_slots: int, vocab_size: int, label_noise: float,
                          seed: int) -> DatasetSplit:
    """Generate, hash, align and split a synthetic dataset in one call."""
    host_raw, guest_raw = gen_synthetic(n_train + n_val + n_test, aligned_fraction,
                                        host_slots, guest_slots, vocab_size,
                                        label_noise, seed)
    host = host_raw.to_dataset()
    guest = guest_raw.to_dataset()
    aligned, unaligned = align_parties(host, guest)
    return split_dataset(aligned, unaligned, n_val, n_test, seed,
                         host.schema, guest.schema)


def build_csv_split(host_path, guest_path, host_schema: FeatureSchema,
                    guest_schema: FeatureSchema, n_val: int, n_test: int,
                    seed: int) -> DatasetSplit:
    """Load both parties from CSV, align on keys, and split."""
    host = pack_samples(host_schema, load_csv(host_path, host_schema))
    guest = pack_samples(guest_schema, load_csv(guest_path, guest_schema))
    if host.n == 0:
        raise DataError(f"{host_path}: no data rows")
    aligned, unaligned = align_parties(host, guest)
    return split_dataset(aligned, unaligned, n_val, n_test, seed,
                         host_schema, guest_schema)
