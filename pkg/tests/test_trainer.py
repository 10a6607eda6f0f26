import math
from dataclasses import replace

import pytest
import torch
from hypothesis import given, settings, strategies as st

from hatefusion.corpus import load_manifest
from hatefusion.errors import (
    ConfigError,
    CorruptCheckpoint,
    EmptyBatch,
    FingerprintMismatch,
    NonFiniteLogits,
    NonFiniteLoss,
)
from hatefusion.fusion import EnsembleModel
from hatefusion.synthetic import make_separable_corpus
from hatefusion.trainer import Checkpoint, TrainConfig, TrainHistory, fit, resume, weighted_cross_entropy

from conftest import png_captions


def brute_force_wce(logits, labels, weights):
    """Explicit softmax, explicit logs, explicit weight normalization."""
    num = den = 0.0
    for row, y in zip(logits, labels):
        z = sum(math.exp(v) for v in row)
        p = math.exp(row[y]) / z
        num += weights[y] * -math.log(p)
        den += weights[y]
    return num / den


def test_worked_examples():
    for w in ((1.0, 1.0), (0.3, 7.0)):
        loss = weighted_cross_entropy(torch.tensor([[0.0, 0.0]]), torch.tensor([1]), w)
        assert round(loss.item(), 6) == round(math.log(2), 6) == 0.693147
    loss = weighted_cross_entropy(torch.tensor([[0.0, math.log(3)]], dtype=torch.float64), torch.tensor([1]), (1.0, 1.0))
    assert round(loss.item(), 6) == 0.287682
    assert loss.item() == pytest.approx(math.log(4 / 3), abs=1e-12)
    loss = weighted_cross_entropy(torch.zeros(2, 2, dtype=torch.float64), torch.tensor([0, 1]), (0.5, 2.0))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.integers(1, 64).flatmap(
        lambda n: st.tuples(
            st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), min_size=n, max_size=n),
            st.lists(st.integers(0, 1), min_size=n, max_size=n),
        )
    ),
    st.tuples(st.floats(0.01, 10), st.floats(0.01, 10)),
)
def test_matches_brute_force(batch, weights):
    logits, labels = batch
    got = weighted_cross_entropy(torch.tensor(logits, dtype=torch.float64), torch.tensor(labels), weights).item()
    assert got == pytest.approx(brute_force_wce(logits, labels, weights), abs=1e-6)


def test_unit_weights_equal_plain_cross_entropy():
    gen = torch.Generator().manual_seed(0)
    for _ in range(50):
        n = int(torch.randint(1, 40, (1,), generator=gen))
        logits = torch.randn(n, 2, generator=gen)
        labels = torch.randint(0, 2, (n,), generator=gen)
        plain = -torch.log_softmax(logits, 1).gather(1, labels.unsqueeze(1)).squeeze(1)
        assert torch.equal(weighted_cross_entropy(logits, labels, (1.0, 1.0)), plain.sum() / n)


def test_loss_errors():
    with pytest.raises(EmptyBatch):
        weighted_cross_entropy(torch.zeros(0, 2), torch.zeros(0, dtype=torch.long), (1, 1))
    with pytest.raises(NonFiniteLogits):
        weighted_cross_entropy(torch.tensor([[float("nan"), 0.0]]), torch.tensor([0]), (1, 1))


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.learning_rate, c.weight_decay, c.max_seq_len, c.epochs) == (3e-4, 3e-5, 512, 100)
    assert (c.step_size, c.decay, c.batch_size, c.freeze_branches) == (30, 0.1, 32, False)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(class_weights=(1.0, -1.0))


def test_schedule_values():
    c = TrainConfig(epochs=3, step_size=2, decay=0.1, learning_rate=3e-4)
    lrs = [c.lr_at(e) for e in range(3)]
    assert lrs[:2] == [3e-4, 3e-4]
    assert lrs[2] == pytest.approx(3e-5, rel=1e-12)


def test_fingerprint_ignores_epoch_budget():
    assert TrainConfig(epochs=2).fingerprint() == TrainConfig(epochs=4).fingerprint()
    assert TrainConfig().fingerprint() != TrainConfig(learning_rate=1e-3).fingerprint()


def test_history_csv_round_trip():
    text = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n0,0.5,0.75,0.6,0.5,0.0003\n"
    h = TrainHistory.from_csv(text)
    assert h.to_csv() == text


# -- training runs on a small separable corpus --------------------------------


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    m = load_manifest(make_separable_corpus(d, per_cell=4))
    return m.with_texts(png_captions(m))


def _cfg(**kw):
    base = dict(epochs=3, batch_size=8, step_size=2, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_fit_records_schedule(small, stub_spec, tmp_path):
    ckpt, hist = fit(_cfg(), small, small, EnsembleModel.from_spec(stub_spec), tmp_path)
    assert [r.epoch for r in hist.records] == [0, 1, 2]
    assert [r.lr for r in hist.records] == [3e-4, 3e-4, 3e-4 * 0.1]
    assert ckpt.epoch == 3 and len(ckpt.history) == 3
    for name in ("final.pt", "best.pt", "history.csv"):
        assert (tmp_path / name).stat().st_size > 0
    assert TrainHistory.from_csv((tmp_path / "history.csv").read_text()).records == hist.records


@pytest.mark.slow
def test_overfits_sixteen_samples(small, stub_spec):
    _, hist = fit(_cfg(epochs=30, step_size=30), small, small, EnsembleModel.from_spec(stub_spec))
    assert hist.records[-1].train_acc == 1.0


def test_same_seed_same_history(small, stub_spec):
    a = fit(_cfg(), small, small, EnsembleModel.from_spec(stub_spec))[1]
    b = fit(_cfg(), small, small, EnsembleModel.from_spec(stub_spec))[1]
    assert a.to_csv() == b.to_csv()


def test_resume_matches_uninterrupted(small, stub_spec, tmp_path):
    straight_model = EnsembleModel.from_spec(stub_spec)
    straight, straight_hist = fit(_cfg(epochs=4), small, small, straight_model)

    first, _ = fit(_cfg(epochs=2), small, small, EnsembleModel.from_spec(stub_spec))
    first.save(tmp_path / "half.pt")
    resumed, resumed_hist = resume(Checkpoint.load(tmp_path / "half.pt"), _cfg(epochs=4), small, small)

    assert resumed_hist.to_csv() == straight_hist.to_csv()
    for k, v in straight.model_state.items():
        assert torch.equal(v, resumed.model_state[k]), k


def test_resume_guards(small, stub_spec, tmp_path):
    ckpt, _ = fit(_cfg(epochs=1), small, small, EnsembleModel.from_spec(stub_spec))
    with pytest.raises(FingerprintMismatch):
        resume(ckpt, _cfg(epochs=2, learning_rate=1e-3), small, small)
    path = ckpt.save(tmp_path / "c.pt")
    blob = path.read_bytes()
    (tmp_path / "trunc.pt").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CorruptCheckpoint):
        Checkpoint.load(tmp_path / "trunc.pt")
    (tmp_path / "junk.pt").write_bytes(b"\x00" * 100)
    with pytest.raises(CorruptCheckpoint):
        Checkpoint.load(tmp_path / "junk.pt")


def test_freeze_branches_keeps_backbones_bit_identical(small, stub_spec):
    model = EnsembleModel.from_spec(stub_spec)
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    fit(_cfg(epochs=2, freeze_branches=True), small, small, model)
    for name, p in model.named_parameters():
        if ".backbone." in name:
            assert torch.equal(p, before[name]), name
    assert not torch.equal(model.head.layer1.weight, before["head.layer1.weight"])
    assert not torch.equal(
        model.branches["vision"].projection.weight, before["branches.vision.projection.weight"]
    )


def test_zero_gradient_means_no_update(small, stub_spec):
    # with zero learning signal and no weight decay, Adam leaves parameters alone
    model = EnsembleModel.from_spec(replace(stub_spec, branches=("vision",)))
    with torch.no_grad():
        model.head.layer2.weight.zero_()
        model.head.layer2.bias.zero_()
        model.head.layer1.weight.zero_()
        model.head.layer1.bias.fill_(-1.0)
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    fit(_cfg(epochs=1, weight_decay=0.0), small, small, model)
    for name, p in model.named_parameters():
        if not name.startswith("head.layer2"):
            assert torch.equal(p, before[name]), name


def test_non_finite_loss_aborts(small, stub_spec):
    model = EnsembleModel.from_spec(stub_spec)
    with torch.no_grad():
        model.head.layer2.bias.fill_(float("nan"))
    with pytest.raises(NonFiniteLoss) as e:
        fit(_cfg(epochs=1), small, small, model)
    assert (e.value.epoch, e.value.batch) == (0, 0)


def test_empty_validation_is_tolerated(small, stub_spec):
    from hatefusion.corpus import DatasetManifest

    _, hist = fit(_cfg(epochs=1), small, DatasetManifest([]), EnsembleModel.from_spec(stub_spec))
    assert math.isnan(hist.records[0].val_acc)
