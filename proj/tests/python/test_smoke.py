import math

import pytest

import opamp_attention as oa


def test_circuit_gains():
    ad, ac, k = oa.gains_from_resistors(1, 2, 1, 3)
    assert ad == pytest.approx(2.125)
    assert ac == pytest.approx(0.25)
    assert k == pytest.approx(8.5)
    _, ac_matched, k_matched = oa.gains_from_resistors(1000, 10000, 1000, 10000)
    assert abs(ac_matched) <= 1e-12
    assert math.isinf(k_matched)


def test_task_generation_and_oracle():
    ex = oa.generate_example(0, noise_ratio=0.9, seed=7)
    assert len(ex["documents"]) == oa.document_count(0.9) == 10
    assert oa.exact_match(oa.lookup_oracle(ex), ex["answer"]) == 1
    again = oa.generate_example(0, noise_ratio=0.9, seed=7)
    assert again == ex


def test_metrics():
    assert oa.partial_match([5, 6], [5]) == pytest.approx(2.0 / 3.0)
    assert oa.exact_match([1, 2], [1, 2]) == 1


def test_model_zero_init_identity():
    base = oa.build_base_model(vocab_size=32, width=16, heads=2, layers=1,
                               ffn_width=32, max_seq_len=64, seed=3)
    probe = [5, 9, 4, 11, 6]
    before = base.forward(probe)
    oa.attach_opamp_adapters(base, cmrr=10.0, adapter_dim=4, seed=5)
    after = base.forward(probe)
    assert base.kind == "opamp"
    for row_b, row_a in zip(before, after):
        for b, a in zip(row_b, row_a):
            assert abs(b - a) <= 1e-5


def test_finetune_and_trace(tmp_path):
    model = oa.build_base_model(vocab_size=32, width=16, heads=2, layers=1,
                                ffn_width=32, max_seq_len=128, seed=4)
    oa.attach_opamp_adapters(model, cmrr=10.0, adapter_dim=4, seed=6)
    examples = [oa.generate_example(i, vocab_size=32, noise_ratio=0.8, seed=9, max_seq_len=128)
                for i in range(8)]
    losses = oa.finetune(model, examples, epochs=2, seed=11)
    assert len(losses) == 2
    em, pm = oa.evaluate(model, examples[:2])
    assert 0.0 <= em <= 1.0 and 0.0 <= pm <= 1.0

    scores, golden = oa.trace_attention(model, examples[0])
    assert len(scores) == 5
    assert sum(scores) == pytest.approx(1.0, abs=1e-6)
    assert golden == examples[0]["golden_index"]

    path = str(tmp_path / "model.ckpt")
    oa.save_checkpoint(model, path)
    loaded = oa.load_checkpoint(path)
    assert loaded.cmrr == 10.0
    assert loaded.forward([1, 2, 3]) == model.forward([1, 2, 3])


def test_checkpoint_error():
    with pytest.raises(oa.CheckpointError):
        oa.load_checkpoint("/nonexistent/nope.ckpt")
