"""Trainer behavior: both training phases, the baselines, checkpoint
serialization, and slice-aware inference.

Expected numbers are either recomputed through independent forward passes on
the same parameters or pinned by construction of the dataset.
"""

import struct

import numpy as np
import pytest

from fedud import data as d
from fedud import nn
from fedud.config import TrainConfig
from fedud.data import (
    AlignedData,
    DatasetSplit,
    SplitPart,
    UnalignedData,
    batch_iter,
    build_synthetic_split,
    synthetic_schemas,
)
from fedud.errors import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    ShapeError,
)
from fedud.federation import Link, audit_transcript, build_guest, build_host
from fedud.metrics import auc
from fedud.trainer import (
    PredictionSet,
    load_checkpoint,
    models_from_checkpoint,
    predict,
    run_fedud,
    save_checkpoint,
    train_fedsplitnn,
    train_local_dnn,
    train_step1,
    train_step2,
)

SMALL = dict(alpha=1.0, beta=1.0, optimizer="adam", lr=1e-2, batch_size=64,
             max_epochs=2, patience=0, init_seed=11, shuffle_seed=12,
             embed_dim=4, bottom_dims=(16, 8), top_dims=(8,), rep_dims=(8,))


def small_cfg(**over):
    return TrainConfig(**{**SMALL, **over})


def small_split(seed=5, n_train=480, n_val=120, n_test=120, frac=0.6,
                host_slots=3, guest_slots=3, label_noise=1.0):
    return build_synthetic_split(n_train, n_val, n_test, frac, host_slots,
                                 guest_slots, 50, label_noise, seed)


def empty_aligned(like: AlignedData) -> AlignedData:
    return AlignedData([], like.x_host[:0], like.y[:0], like.x_guest[:0])


def empty_unaligned(like: UnalignedData) -> UnalignedData:
    return UnalignedData([], like.x_host[:0], like.y[:0])


def fresh_models(cfg, split, with_rep=True):
    """Host and guest exactly as the trainer builds them at init."""
    guest = build_guest(split.guest_schema, cfg.bottom_dims, cfg.embed_dim,
                        nn.make_optimizer(cfg.optimizer, cfg.lr), cfg.init_seed)
    host = build_host(split.host_schema, cfg.bottom_dims, cfg.top_dims,
                      cfg.rep_dims, cfg.embed_dim, guest.rep_dim,
                      nn.make_optimizer(cfg.optimizer, cfg.lr), cfg.init_seed,
                      with_rep=with_rep)
    return host, guest


def param_bytes(params: dict) -> dict:
    return {k: v.tobytes() for k, v in params.items()}


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


class TestCheckpointIO:
    def test_round_trip_is_bit_identical(self, tmp_path):
        ckpt = train_step1(small_split(), small_cfg(max_epochs=1))
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert back.method == ckpt.method == "fedud"
        assert back.phase == ckpt.phase == "step1"
        assert back.config == ckpt.config
        assert back.config_digest == ckpt.config_digest
        assert back.epoch == ckpt.epoch
        assert back.history == ckpt.history
        assert back.opt_meta == ckpt.opt_meta
        assert sorted(back.params) == sorted(ckpt.params)
        for name in ckpt.params:
            assert back.params[name].dtype == np.float64
            assert back.params[name].tobytes() == ckpt.params[name].tobytes()
        assert sorted(back.opt_arrays) == sorted(ckpt.opt_arrays)
        for name in ckpt.opt_arrays:
            assert back.opt_arrays[name].tobytes() == ckpt.opt_arrays[name].tobytes()

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_rejects_unsupported_version(self, tmp_path):
        ckpt = train_step1(small_split(), small_cfg(max_epochs=1))
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="unsupported version 9"):
            load_checkpoint(path)

    def test_rejects_truncation_anywhere(self, tmp_path):
        ckpt = train_step1(small_split(), small_cfg(max_epochs=1))
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        blob = path.read_bytes()
        cut_path = tmp_path / "cut.ckpt"
        for cut in (2, 6, 12, 40, len(blob) // 2, len(blob) - 1):
            cut_path.write_bytes(blob[:cut])
            with pytest.raises(CheckpointError, match="truncated"):
                load_checkpoint(cut_path)

    def test_rejects_trailing_bytes(self, tmp_path):
        ckpt = train_step1(small_split(), small_cfg(max_epochs=1))
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing bytes"):
            load_checkpoint(path)


class TestCheckpointCompat:
    def test_step2_needs_a_transfer_network(self):
        split = small_split()
        plain = train_fedsplitnn(split, small_cfg(max_epochs=1))
        with pytest.raises(CheckpointError, match="transfer network"):
            train_step2(split, small_cfg(), plain)

    def test_step2_rejects_mismatched_dims(self):
        split = small_split()
        step1 = train_step1(split, small_cfg(max_epochs=1))
        with pytest.raises(CheckpointError, match="rep_dims"):
            train_step2(split, small_cfg(rep_dims=(4,)), step1)
        with pytest.raises(CheckpointError, match="embed_dim"):
            train_step2(split, small_cfg(embed_dim=6), step1)

    def test_restores_optimizer_state(self):
        split = small_split()
        ckpt = train_step1(split, small_cfg(max_epochs=1))
        host, guest = models_from_checkpoint(ckpt, split.host_schema,
                                             split.guest_schema)
        assert host.optimizer.t == ckpt.opt_meta["host"]["t"] > 0
        assert guest.optimizer.t == ckpt.opt_meta["guest"]["t"] > 0
        for name, arr in host.optimizer.state_arrays().items():
            assert arr.tobytes() == ckpt.opt_arrays[name].tobytes()

    def test_rejects_schema_mismatch(self):
        ckpt = train_step1(small_split(), small_cfg(max_epochs=1))
        other = small_split(host_slots=4)
        with pytest.raises(CheckpointError, match="parameter set mismatch"):
            models_from_checkpoint(ckpt, other.host_schema, other.guest_schema)


# ---------------------------------------------------------------------------
# prediction container
# ---------------------------------------------------------------------------


class TestPredictionSet:
    def test_rejects_scores_on_the_boundary(self):
        for bad in (0.0, 1.0):
            with pytest.raises(ShapeError, match="strictly inside"):
                PredictionSet(["a", "b"], np.array([0.0, 1.0]),
                              np.array([0.5, bad]), ["aligned", "aligned"])

    def test_rejects_unknown_slice_tag(self):
        with pytest.raises(ShapeError, match="middling"):
            PredictionSet(["a"], np.array([1.0]), np.array([0.5]), ["middling"])

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ShapeError, match="disagree"):
            PredictionSet(["a", "b"], np.array([1.0]), np.array([0.5]),
                          ["aligned"])

    def test_csv_round_trip_is_exact(self, tmp_path):
        scores = np.array([0.25, 1 / 3, 1 - 1e-12, 1e-12, 0.1 + 0.2])
        preds = PredictionSet([f"k{i}" for i in range(5)],
                              np.array([0.0, 1.0, 1.0, 0.0, 1.0]), scores,
                              ["aligned", "aligned", "unaligned", "unaligned",
                               "aligned"])
        path = tmp_path / "p.csv"
        preds.to_csv(path)
        back = PredictionSet.from_csv(path)
        assert back.keys == preds.keys
        assert back.slice_tags == preds.slice_tags
        assert np.array_equal(back.labels, preds.labels)
        assert back.scores.tobytes() == preds.scores.tobytes()


# ---------------------------------------------------------------------------
# step 1 and the split baseline
# ---------------------------------------------------------------------------


class TestStepOne:
    def test_history_and_tagging(self):
        ckpt = train_step1(small_split(), small_cfg())
        assert ckpt.method == "fedud" and ckpt.phase == "step1"
        assert len(ckpt.history) == 2
        for row in ckpt.history:
            assert set(row) == {"epoch", "loss1", "loss2", "val_auc",
                                "train_forward_msgs", "train_backward_msgs"}
        assert 1 <= ckpt.epoch <= 2
        assert "host.rep.0.weight" in ckpt.params
        assert "guest.mlp.0.weight" in ckpt.params

    def test_first_batch_losses_match_fresh_models(self):
        # one batch per epoch, one epoch: the recorded losses are exactly the
        # losses of the initial parameters on the permuted full training set
        split = small_split()
        cfg = small_cfg(batch_size=4096, max_epochs=1, alpha=0.7)
        seen = []
        train_step1(split, cfg, step_hook=lambda ev: seen.append(ev))
        assert len(seen) == 1
        host, guest = fresh_models(cfg, split)
        batch = next(batch_iter(split.train.aligned, 4096, cfg.shuffle_seed, 1))
        h_g = guest.forward(batch.x_guest, "oracle", train=False).payload
        y_hat, _ = host.forward_aligned(batch.x_host, h_g)
        loss1, _ = nn.bce_loss(y_hat, batch.y)
        h_h, _ = host.bottom_forward(batch.x_host)
        rep_out, _ = host.rep_forward(h_h)
        loss2, _ = nn.mse_loss(rep_out, h_g)
        assert abs(seen[0]["loss1"] - loss1) <= 1e-12
        assert abs(seen[0]["loss2"] - loss2) <= 1e-12

    def test_alpha_zero_matches_split_baseline(self):
        split = small_split()
        with_rep = train_step1(split, small_cfg(alpha=0.0))
        # the baseline forces alpha to zero itself, so hand it the default
        baseline = train_fedsplitnn(split, small_cfg())
        assert [r["loss1"] for r in with_rep.history] == \
               [r["loss1"] for r in baseline.history]
        assert [r["val_auc"] for r in with_rep.history] == \
               [r["val_auc"] for r in baseline.history]
        for name, arr in baseline.params.items():
            assert arr.tobytes() == with_rep.params[name].tobytes()
        extras = set(with_rep.params) - set(baseline.params)
        assert extras and all(k.startswith("host.rep.") for k in extras)

    def test_alpha_zero_leaves_transfer_network_at_init(self):
        split = small_split()
        cfg = small_cfg(alpha=0.0)
        ckpt = train_step1(split, cfg)
        host0, _ = fresh_models(cfg, split)
        for name, arr in host0.params().items():
            if name.startswith("host.rep."):
                assert ckpt.params[name].tobytes() == arr.tobytes()

    def test_single_small_sgd_step_descends(self):
        # with the guest receiving the distillation gradient too, one joint
        # SGD step at a tiny rate cannot increase the combined objective
        split = small_split()
        cfg = small_cfg(optimizer="sgd", lr=1e-4, batch_size=4096,
                        max_epochs=1, alpha=1.0, distill_update_guest=True)
        seen = []
        ckpt = train_step1(split, cfg, step_hook=lambda ev: seen.append(ev))
        before = seen[0]["loss1"] + cfg.alpha * seen[0]["loss2"]
        host, guest = models_from_checkpoint(ckpt, split.host_schema,
                                             split.guest_schema, load_opt=False)
        aligned = split.train.aligned
        h_g = guest.forward(aligned.x_guest, "after", train=False).payload
        y_hat, _ = host.forward_aligned(aligned.x_host, h_g)
        loss1, _ = nn.bce_loss(y_hat, aligned.y)
        h_h, _ = host.bottom_forward(aligned.x_host)
        rep_out, _ = host.rep_forward(h_h)
        loss2, _ = nn.mse_loss(rep_out, h_g)
        assert loss1 + cfg.alpha * loss2 <= before + 1e-12

    def test_deterministic_across_runs(self):
        a = train_step1(small_split(), small_cfg())
        b = train_step1(small_split(), small_cfg())
        assert a.history == b.history
        assert param_bytes(a.params) == param_bytes(b.params)

    def test_requires_aligned_rows(self):
        split = small_split()
        starved = DatasetSplit(
            SplitPart(empty_aligned(split.train.aligned), split.train.unaligned),
            split.val, split.test, split.host_schema, split.guest_schema)
        with pytest.raises(ConfigError, match="non-empty aligned"):
            train_step1(starved, small_cfg())
        with pytest.raises(ConfigError, match="non-empty aligned"):
            train_fedsplitnn(starved, small_cfg())

    def test_divergence_reports_position(self):
        cfg = small_cfg(optimizer="sgd", lr=1e150, max_epochs=4)
        with np.errstate(over="ignore"), pytest.raises(DivergenceError) as err:
            train_step1(small_split(), cfg)
        assert err.value.epoch == 1
        assert err.value.batch >= 1


class TestSplitBaseline:
    def test_never_reads_unaligned_rows(self):
        split = small_split()
        ckpt = train_fedsplitnn(split, small_cfg())
        assert split.train.unaligned.reads == 0
        assert split.val.unaligned.reads == 0
        assert ckpt.method == "fedsplitnn" and ckpt.phase == "single"
        assert not any(k.startswith("host.rep.") for k in ckpt.params)

    def test_message_accounting(self):
        split = small_split()
        cfg = small_cfg(max_epochs=3, patience=0)
        link = Link(cfg.bottom_dims[-1])
        ckpt = train_fedsplitnn(split, cfg, link=link)
        n_batches = -(-split.train.aligned.n // cfg.batch_size)
        val_batches = -(-split.val.aligned.n // cfg.batch_size)
        assert link.transcript.count("backward_grads") == 3 * n_batches
        assert link.transcript.count("forward_reps") == 3 * (n_batches + val_batches)
        for row in ckpt.history:
            assert row["train_forward_msgs"] == n_batches
            assert row["train_backward_msgs"] == n_batches
        verdict = audit_transcript(link.transcript, cfg.bottom_dims[-1])
        assert verdict.passed and verdict.failures == []


# ---------------------------------------------------------------------------
# step 2
# ---------------------------------------------------------------------------


class TestStepTwo:
    def test_warm_starts_every_parameter(self):
        split = small_split()
        step1 = train_step1(split, small_cfg(max_epochs=1))
        first = {}

        def grab(ev):
            if ev["phase"] == "step2" and not first:
                first["params"] = param_bytes({**ev["host"].params(),
                                               **ev["guest"].params()})
                first["t"] = ev["host"].optimizer.t

        train_step2(split, small_cfg(max_epochs=1), step1, step_hook=grab)
        assert first["t"] == 0  # the phase starts with a fresh optimizer
        assert first["params"] == param_bytes(step1.params)

    def test_transfer_network_stays_frozen(self):
        split = small_split()
        step1 = train_step1(split, small_cfg(max_epochs=1))
        step2 = train_step2(split, small_cfg(max_epochs=2), step1)
        assert step2.method == "fedud" and step2.phase == "step2"
        for name in step1.params:
            if name.startswith("host.rep."):
                assert step2.params[name].tobytes() == step1.params[name].tobytes()
        assert step2.params["host.top.0.weight"].tobytes() != \
            step1.params["host.top.0.weight"].tobytes()

    def test_loss_decomposes_into_slice_terms(self):
        split = small_split()
        cfg = small_cfg(beta=1.7, max_epochs=2)
        step1 = train_step1(split, small_cfg(max_epochs=1))
        checked = []

        def check(ev):
            if ev["phase"] != "step2":
                return
            host, guest = ev["host"], ev["guest"]
            ab, ub = ev["aligned_batch"], ev["unaligned_batch"]
            h_g = guest.forward(ab.x_guest, "oracle", train=False).payload
            y_hat, _ = host.forward_aligned(ab.x_host, h_g)
            loss_a, _ = nn.bce_loss(y_hat, ab.y)
            y_u, _ = host.forward_unaligned(ub.x_host)
            loss_u, _ = nn.bce_loss(y_u, ub.y)
            assert abs(ev["aligned_loss"] - loss_a) <= 1e-12
            assert abs(ev["unaligned_loss"] - loss_u) <= 1e-12
            assert abs(ev["loss3"] - (loss_a + cfg.beta * loss_u)) <= 1e-12
            checked.append(1)

        train_step2(split, cfg, step1, step_hook=check)
        assert len(checked) >= 4

    def test_beta_zero_ignores_unaligned_rows(self):
        split_a = small_split()
        split_b = small_split()
        split_b = DatasetSplit(
            SplitPart(split_b.train.aligned,
                      empty_unaligned(split_b.train.unaligned)),
            split_b.val, split_b.test, split_b.host_schema, split_b.guest_schema)
        step1 = train_step1(split_a, small_cfg(max_epochs=1))
        with_rows = train_step2(split_a, small_cfg(beta=0.0), step1)
        without = train_step2(split_b, small_cfg(beta=0.0), step1)
        assert split_a.train.unaligned.reads == 0
        assert with_rows.history == without.history
        assert param_bytes(with_rows.params) == param_bytes(without.params)

    def test_shorter_stream_cycles(self):
        # 64 aligned rows against 320 unaligned at batch 32: ten steps per
        # epoch, with the two aligned batches revisited five times each
        split = small_split(frac=0.2, n_train=480)
        a = split.train.aligned
        u = split.train.unaligned
        assert a.n >= 64 and u.n >= 320
        shrunk = DatasetSplit(
            SplitPart(AlignedData(a.keys[:64], a.x_host[:64], a.y[:64],
                                  a.x_guest[:64]),
                      UnalignedData(u.keys[:320], u.x_host[:320], u.y[:320])),
            split.val, split.test, split.host_schema, split.guest_schema)
        step1 = train_step1(shrunk, small_cfg(max_epochs=1, batch_size=32))
        step2 = train_step2(shrunk, small_cfg(max_epochs=1, batch_size=32), step1)
        assert step2.history[0]["steps"] == 10
        assert shrunk.train.unaligned.reads == 320
        # cycling revisits the batches already materialized for the epoch, so
        # each phase reads the aligned pool exactly once
        assert shrunk.train.aligned.reads == 64 + 64

    def test_validation_covers_both_slices(self):
        # make the aligned validation slice single-class: phase 1 (which
        # validates on aligned rows only) reports no AUC, phase 2 (which
        # validates on everything) does
        split = small_split()
        va, vu = split.val.aligned, split.val.unaligned
        ones = np.where(va.y == 1.0)[0]
        zeros = np.where(vu.y == 0.0)[0]
        assert ones.size and zeros.size
        lopsided = DatasetSplit(
            split.train,
            SplitPart(AlignedData([va.keys[i] for i in ones], va.x_host[ones],
                                  va.y[ones], va.x_guest[ones]),
                      UnalignedData([vu.keys[i] for i in zeros],
                                    vu.x_host[zeros], vu.y[zeros])),
            split.test, split.host_schema, split.guest_schema)
        step1 = train_step1(lopsided, small_cfg())
        assert all(row["val_auc"] is None for row in step1.history)
        step2 = train_step2(lopsided, small_cfg(), step1)
        assert all(row["val_auc"] is not None for row in step2.history)

    def test_reinit_keeps_only_the_transfer_network(self):
        split = small_split()
        step1 = train_step1(split, small_cfg())
        cfg2 = small_cfg(step2_reinit=True)
        first = {}

        def grab(ev):
            if ev["phase"] == "step2" and not first:
                first["params"] = param_bytes(ev["host"].params())

        train_step2(split, cfg2, step1, step_hook=grab)
        host0, _ = fresh_models(cfg2, split)
        init = param_bytes(host0.params())
        for name, raw in first["params"].items():
            if name.startswith("host.rep."):
                assert raw == step1.params[name].tobytes()
            else:
                assert raw == init[name]
        assert first["params"]["host.bottom.0.weight"] != \
            step1.params["host.bottom.0.weight"].tobytes()

    def test_requires_aligned_rows(self):
        split = small_split()
        step1 = train_step1(split, small_cfg(max_epochs=1))
        starved = DatasetSplit(
            SplitPart(empty_aligned(split.train.aligned), split.train.unaligned),
            split.val, split.test, split.host_schema, split.guest_schema)
        with pytest.raises(ConfigError, match="non-empty aligned"):
            train_step2(starved, small_cfg(), step1)


# ---------------------------------------------------------------------------
# local baseline
# ---------------------------------------------------------------------------


def separable_split(n=240):
    """Labels fully determined by the first host slot."""
    y = np.arange(n, dtype=np.float64) % 2
    x_host = np.stack([y.astype(np.int64), np.full(n, 7, dtype=np.int64)], axis=1)
    x_guest = np.zeros((n, 1), dtype=np.int64)
    keys = [f"k{i:04d}" for i in range(n)]
    host_schema, guest_schema = synthetic_schemas(2, 1, 50)

    def part(lo, hi):
        return SplitPart(AlignedData(keys[lo:hi], x_host[lo:hi], y[lo:hi],
                                     x_guest[lo:hi]),
                         UnalignedData([], x_host[:0], y[:0]))

    return DatasetSplit(part(0, 160), part(160, 200), part(200, 240),
                        host_schema, guest_schema)


class TestLocalBaseline:
    def test_learns_separable_data(self):
        split = separable_split()
        cfg = small_cfg(max_epochs=12, patience=2, batch_size=32)
        ckpt = train_local_dnn(split, cfg)
        assert ckpt.method == "local_dnn" and ckpt.phase == "single"
        assert all(k.startswith("local.") for k in ckpt.params)
        preds = predict(ckpt, split, "local_dnn")
        assert auc(preds.scores, preds.labels) > 0.95

    def test_history_shape(self):
        ckpt = train_local_dnn(small_split(), small_cfg())
        for row in ckpt.history:
            assert set(row) == {"epoch", "loss1", "val_auc"}

    def test_deterministic_across_runs(self):
        a = train_local_dnn(small_split(), small_cfg())
        b = train_local_dnn(small_split(), small_cfg())
        assert a.history == b.history
        assert param_bytes(a.params) == param_bytes(b.params)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


class TestPredict:
    def test_method_must_match_checkpoint(self):
        split = small_split()
        ckpt = train_fedsplitnn(split, small_cfg(max_epochs=1))
        with pytest.raises(CheckpointError, match="fedsplitnn"):
            predict(ckpt, split, "fedud")

    def test_unaligned_inference_sends_no_messages(self):
        split = small_split()
        _, step2 = run_fedud(split, small_cfg(max_epochs=1))
        only_unaligned = DatasetSplit(
            split.train, split.val,
            SplitPart(empty_aligned(split.test.aligned), split.test.unaligned),
            split.host_schema, split.guest_schema)
        link = Link(small_cfg().bottom_dims[-1])
        preds = predict(step2, only_unaligned, "fedud", link=link)
        assert len(link.transcript) == 0
        assert preds.keys == split.test.unaligned.keys
        assert preds.slice_tags == ["unaligned"] * preds.n

    def test_local_scores_ignore_alignment(self):
        split = separable_split()
        ckpt = train_local_dnn(split, small_cfg(max_epochs=2))
        a = split.test.aligned
        doubled = DatasetSplit(
            split.train, split.val,
            SplitPart(a, UnalignedData([k + "-u" for k in a.keys],
                                       a.x_host.copy(), a.y.copy())),
            split.host_schema, split.guest_schema)
        preds = predict(ckpt, doubled, "local_dnn")
        half = a.n
        assert np.array_equal(preds.scores[:half], preds.scores[half:])

    def test_split_baseline_imputes_zero_representation(self):
        split = small_split()
        cfg = small_cfg(max_epochs=1, batch_size=4096)
        ckpt = train_fedsplitnn(split, cfg)
        reads_before = split.train.aligned.reads
        preds = predict(ckpt, split, "fedsplitnn")
        assert split.train.aligned.reads == reads_before
        host, _ = models_from_checkpoint(ckpt, split.host_schema,
                                         split.guest_schema, load_opt=False)
        u = split.test.unaligned
        zeros = np.zeros((u.n, host.guest_rep_dim))
        expect, _ = host.forward_aligned(u.x_host, zeros)
        got = preds.scores[np.array(preds.slice_tags) == "unaligned"]
        assert got.tobytes() == expect.tobytes()

    def test_transfer_beats_zero_imputation_on_unaligned(self):
        # end to end: when the shared latent is fully visible to both parties
        # there is plenty for the transfer network to carry, and scoring
        # unaligned rows through it outranks a zeroed guest input even at
        # small sample sizes; the default constants hide the shared latent
        # almost entirely from the host, which needs far more data to show
        saved = (d.HOST_MIX, d.LABEL_MIX, d.LABEL_SCALE, d.HOST_BUCKETS)
        d.HOST_MIX = (1.0, 1.0, 0.0, 0.0)
        d.LABEL_MIX = (1.0, 1.0, 1.0, 1.0)
        d.LABEL_SCALE = 3.0
        d.HOST_BUCKETS = 16
        try:
            cfg = small_cfg(batch_size=256, max_epochs=6, patience=1)
            for seed in range(1, 6):
                split = build_synthetic_split(6000, 1200, 1200, 0.5, 3, 3, 50,
                                              1.0, seed)
                _, step2 = run_fedud(split, cfg)
                base = train_fedsplitnn(split, cfg)

                def unaligned_auc(ckpt, method):
                    preds = predict(ckpt, split, method)
                    tags = np.array(preds.slice_tags)
                    return auc(preds.scores[tags == "unaligned"],
                               preds.labels[tags == "unaligned"])

                assert (unaligned_auc(step2, "fedud")
                        > unaligned_auc(base, "fedsplitnn"))
        finally:
            d.HOST_MIX, d.LABEL_MIX, d.LABEL_SCALE, d.HOST_BUCKETS = saved


class TestRunBothPhases:
    def test_shares_one_link_and_audits_clean(self):
        split = small_split()
        cfg = small_cfg(max_epochs=1)
        link = Link(cfg.bottom_dims[-1])
        step1, step2 = run_fedud(split, cfg, link=link)
        assert step1.phase == "step1" and step2.phase == "step2"
        assert step1.config_digest == step2.config_digest
        assert len(link.transcript) > 0
        assert audit_transcript(link.transcript, cfg.bottom_dims[-1]).passed
