"""Inspect what actually crosses the party boundary during training.

Every message between host and guest goes through a Link that records a
transcript. This demo trains briefly, prints the first few transcript
records, runs the audit, and shows that scoring unaligned rows adds no
messages at all: the transfer network keeps the guest out of that path.

Run: python3 demos/federation_transcript.py
"""
from fedud.config import TrainConfig
from fedud.data import AlignedData, DatasetSplit, SplitPart, build_synthetic_split
from fedud.federation import Link, audit_transcript
from fedud.trainer import predict, run_fedud

SEED = 3


def main():
    split = build_synthetic_split(
        n_train=2000, n_val=400, n_test=400, aligned_fraction=0.6,
        host_slots=4, guest_slots=4, vocab_size=100, label_noise=1.0,
        seed=SEED)
    cfg = TrainConfig(init_seed=SEED, shuffle_seed=SEED, batch_size=128,
                      max_epochs=2, patience=0, embed_dim=4,
                      bottom_dims=(32, 16), top_dims=(16,), rep_dims=(16,))

    link = Link(cfg.bottom_dims[-1])
    _, ckpt2 = run_fedud(split, cfg, link=link)

    print(f"transcript length after training: {len(link.transcript)}")
    print("first records on the wire (direction,variant,shape,bytes):")
    for line in link.transcript.export_lines()[:6]:
        print(f"  {line}")

    verdict = audit_transcript(link.transcript, cfg.bottom_dims[-1])
    print(f"\naudit passed: {verdict.passed}")

    # An unaligned-only view of the test part: scoring it must not touch
    # the guest, so the transcript cannot grow.
    empty_aligned = AlignedData([], split.test.aligned.x_host[:0],
                                split.test.aligned.y[:0],
                                split.test.aligned.x_guest[:0])
    unaligned_only = DatasetSplit(split.train, split.val,
                                  SplitPart(empty_aligned, split.test.unaligned),
                                  split.host_schema, split.guest_schema)
    before = len(link.transcript)
    preds = predict(ckpt2, unaligned_only, "fedud", link=link)
    print(f"scored {len(preds.keys)} unaligned test rows, "
          f"messages added: {len(link.transcript) - before}")


if __name__ == "__main__":
    main()
