import math

import numpy as np
import pytest

from rdloc.classifier import (ClassifierHead, EncodedSequence, Encoding, LabeledDataset, LabeledItem,
                              Normalization, TrainHyper, encode_curve, encoding_frequencies,
                              predict, resample_log_magnitude, softmax, train)
from rdloc.errors import CoverageError, InvalidArgumentError, ShapeError
from rdloc.io import checkpoint_bytes
from rdloc.lstm import LstmParams
from rdloc.winding import FrequencyGrid, FrequencyResponse


def analytic(points):
    # smooth resonant curve with a few decades of dynamic range
    f = np.asarray(points)
    x = np.log10(f)
    return 1e-3 * 10 ** (np.sin(2.1 * x) - 0.3 * (x - 3) ** 2 / 4)


def curve(n, f_min=20.0, f_max=2.5e6, fn=analytic):
    g = FrequencyGrid.logspace(f_min, f_max, n)
    return FrequencyResponse(g, fn(g.points))


def test_constant_curve_at_corpus_mean_encodes_to_zeros():
    g = FrequencyGrid.logspace(20.0, 2.5e6, 500)
    fr = FrequencyResponse(g, np.full(len(g), 1e-2))
    norm = Normalization.fit([resample_log_magnitude(fr, 200)[0]])
    seq = encode_curve(fr, 200, norm)
    assert np.array_equal(seq.steps, np.zeros(200))


def test_encoding_is_deterministic():
    fr = curve(1000)
    a, b = encode_curve(fr), encode_curve(fr)
    assert np.array_equal(a.steps, b.steps)


def test_resampling_agrees_with_dense_grid():
    coarse = encode_curve(curve(1000)).steps
    dense = encode_curve(curve(4000)).steps
    assert np.max(np.abs(coarse - dense)) < 1e-3


def test_first_and_last_steps_sit_on_grid_ends():
    fr = curve(1000)
    values, _ = resample_log_magnitude(fr, 200)
    assert values[0] == pytest.approx(math.log10(fr.magnitude[0]), abs=1e-15)
    assert values[-1] == pytest.approx(math.log10(fr.magnitude[-1]), abs=1e-15)
    f = encoding_frequencies(200, fr.grid.f_min, fr.grid.f_max)
    assert f[0] == pytest.approx(20.0, rel=1e-14) and f[-1] == pytest.approx(2.5e6, rel=1e-14)


def test_narrow_curve_raises_coverage_error():
    with pytest.raises(CoverageError):
        encode_curve(curve(200, 100.0, 1e6), span=(20.0, 2.5e6))


def test_zero_magnitudes_are_floored_and_flagged():
    g = FrequencyGrid.logspace(20.0, 2.5e6, 50)
    mag = np.full(50, 1e-3)
    mag[10] = 0.0
    seq = encode_curve(FrequencyResponse(g, mag))
    assert seq.floored and np.all(np.isfinite(seq.steps))


def test_bad_step_count():
    with pytest.raises(InvalidArgumentError):
        encode_curve(curve(100), n_steps=1)


def test_rescaled_reference_encoding_ignores_severity():
    base = curve(1000)
    ref = resample_log_magnitude(base, 200)[0]
    for k in (2.0, 5.0):
        scaled = FrequencyResponse(base.grid, base.magnitude * 10 ** (k * 0.01 * np.sin(np.log(base.frequency))))
        unit = FrequencyResponse(base.grid, base.magnitude * 10 ** (0.01 * np.sin(np.log(base.frequency))))
        a = encode_curve(scaled, reference=ref, rescale=True).steps
        b = encode_curve(unit, reference=ref, rescale=True).steps
        assert np.allclose(a, b, atol=1e-9)


def lstm_and_head(hidden=3, classes=4, bias=None, seed=0):
    params = LstmParams.initialize(1, hidden, np.random.default_rng(seed))
    head = ClassifierHead(np.zeros((classes, hidden)), np.zeros(classes) if bias is None else bias)
    return params, head


def test_zero_head_gives_uniform_and_tie_breaks_to_section_one():
    params, head = lstm_and_head()
    label, p = predict(params, head, np.linspace(-1, 1, 20))
    assert label == 1
    assert np.allclose(p, 0.25, atol=1e-15)


def test_dominant_bias_wins():
    params, head = lstm_and_head(bias=np.array([10.0, 0, 0, 0]))
    for seed in range(5):
        x = np.random.default_rng(seed).normal(size=30)
        label, p = predict(params, head, x)
        assert label == 1
        # four classes: e^10 / (e^10 + 3)
        assert p[0] == pytest.approx(math.exp(10) / (math.exp(10) + 3), rel=1e-14)
        assert p[0] > 0.9998


def test_predict_rejects_length_mismatch():
    params, head = lstm_and_head()
    with pytest.raises(ShapeError):
        predict(params, head, np.zeros(10), n_steps=200)


def test_softmax_properties():
    rng = np.random.default_rng(3)
    for _ in range(200):
        z = rng.normal(scale=5.0, size=4)
        p = softmax(z)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all((p > 0) & (p < 1))
        assert np.argmax(softmax(z + rng.normal(scale=100))) == np.argmax(p)
    assert np.argmax(softmax(np.array([2.0, 2.0, 1.0, 2.0]))) == 0


def tiny_dataset(labels, seqs, n_sections=4):
    enc = Encoding(len(seqs[0]), 20.0, 2.5e6)
    items = [LabeledItem(EncodedSequence(s), lab, 9.0) for s, lab in zip(seqs, labels)]
    return LabeledDataset(items, enc, n_sections)


def test_single_item_converges_and_loss_decreases():
    ds = tiny_dataset([3], [np.sin(np.linspace(0, 3, 12))])
    model, tlog = train(ds, TrainHyper(hidden_size=4, max_epochs=3000, seed=7))
    first = tlog.losses[:50]
    assert all(b < a for a, b in zip(first, first[1:]))
    assert tlog.converged and tlog.losses[-1] < 1e-4
    label, _ = predict(model.lstm, model.head, ds.items[0].sequence)
    assert label == 3


def test_contradictory_labels_never_converge(caplog):
    seq = np.cos(np.linspace(0, 2, 8))
    ds = tiny_dataset([1, 2], [seq, seq])
    _, tlog = train(ds, TrainHyper(hidden_size=3, max_epochs=300, seed=1))
    assert not tlog.converged
    assert tlog.warning and "did not converge" in tlog.warning
    assert min(tlog.losses) >= math.log(2) - 1e-9


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(0)
    seqs = [rng.normal(size=10) for _ in range(4)]
    ds = tiny_dataset([1, 2, 3, 4], seqs)
    hyper = TrainHyper(hidden_size=4, max_epochs=60, seed=11)
    m1, l1 = train(ds, hyper)
    m2, l2 = train(ds, hyper)
    assert l1.to_csv() == l2.to_csv()
    assert checkpoint_bytes(m1) == checkpoint_bytes(m2)
    m3, l3 = train(ds, TrainHyper(hidden_size=4, max_epochs=60, seed=12))
    assert l3.to_csv() != l1.to_csv()


def test_training_log_csv_header():
    ds = tiny_dataset([2], [np.ones(5)])
    _, tlog = train(ds, TrainHyper(hidden_size=2, max_epochs=3))
    rows = tlog.to_csv().splitlines()
    assert rows[0] == "epoch,loss,train_accuracy"
    assert len(rows) == 4
