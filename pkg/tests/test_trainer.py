import numpy as np
import pytest

from anonavila.embedding_store import EmbeddingRecord, EmbeddingSet, Label
from anonavila.errors import AbnormalInTraining, BatchTooSmall, CheckFailed, InsufficientData
from anonavila.mlp import AdamState, adam_step, init_model
from anonavila.trainer import (
    GradCheckConfig,
    TrainConfig,
    composite_loss,
    composite_loss_and_grad,
    end_to_end_gradient_check,
    tiny_setup,
    train,
)


class CountingGrad:
    def __init__(self):
        self.calls = 0

    def __call__(self, model, images, nt, at):
        self.calls += 1
        return 0.0, [np.zeros(p.shape) for p in model.params()]


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(11)
    anchor = rng.standard_normal(512)
    x = anchor + 0.5 * rng.standard_normal((400, 512))
    nt = anchor + rng.standard_normal((5, 512))
    at = rng.standard_normal((3, 512))
    return x, nt, at


@pytest.mark.parametrize("n,bs,acc,updates,calls", [
    (200, 100, 1, 2, 2),
    (10000, 100, 100, 1, 100),
    (500, 100, 3, 2, 5),     # partial window flushed
    (250, 100, 1, 2, 2),     # trailing partial batch dropped
])
def test_update_counts(n, bs, acc, updates, calls):
    fake = CountingGrad()
    x = np.ones((n, 4))
    model = init_model(0, (8, 4, 3, 2))
    _, rep = train(model, x, np.ones((2, 4)), np.ones((2, 4)),
                   TrainConfig(batch_size=bs, accumulation_batches=acc), grad_fn=fake)
    assert rep.n_updates == updates and fake.calls == calls
    assert len(rep.batch_losses) == calls


def test_config_errors():
    with pytest.raises(BatchTooSmall):
        TrainConfig(batch_size=1)
    with pytest.raises(InsufficientData):
        train(init_model(0, (8, 4, 3, 2)), np.ones((5, 4)), np.ones((2, 4)), np.ones((2, 4)),
              TrainConfig(batch_size=10))


def test_abnormal_in_training():
    recs = [EmbeddingRecord("a", np.ones(4, np.float32)),
            EmbeddingRecord("b", np.ones(4, np.float32), label=Label.ABNORMAL)]
    with pytest.raises(AbnormalInTraining, match="'b'"):
        train(init_model(0, (8, 4, 3, 2)), EmbeddingSet(4, recs), np.ones((2, 4)), np.ones((2, 4)),
              TrainConfig(batch_size=2))


def test_input_model_untouched(data):
    x, nt, at = data
    model = init_model(1)
    before = model.copy()
    trained, _ = train(model, x[:200], nt, at, TrainConfig(batch_size=100, accumulation_batches=1))
    assert model.equals(before) and not trained.equals(before)


def test_matches_reference_loop(data):
    x, nt, at = data
    cfg = TrainConfig(batch_size=50, accumulation_batches=3, seed=4)
    trained, rep = train(init_model(2), x[:350], nt, at, cfg)

    ref = init_model(2)
    state = AdamState.zeros_like(ref)
    order = np.random.default_rng(4).permutation(350)
    batches = [order[k * 50:(k + 1) * 50] for k in range(7)]
    for window in (batches[0:3], batches[3:6], batches[6:7]):
        work = ref.astype(np.float64)
        total = None
        for idx in window:
            _, g = composite_loss_and_grad(work, x[idx].astype(np.float32).astype(np.float64), nt, at)
            total = g if total is None else [a + b for a, b in zip(total, g)]
        adam_step(ref, state, [g / len(window) for g in total])
    assert rep.n_updates == 3 and state.step_count == 3
    for a, b in zip(trained.params(), ref.params()):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-7)


def test_deterministic(data):
    x, nt, at = data
    cfg = TrainConfig(batch_size=100, accumulation_batches=2, seed=7)
    a, ra = train(init_model(3), x, nt, at, cfg)
    b, rb = train(init_model(3), x, nt, at, cfg)
    assert a.equals(b) and ra.batch_losses == rb.batch_losses


def test_loss_decreases(data):
    x, nt, at = data
    cfg = TrainConfig(batch_size=50, accumulation_batches=1, epochs=3, seed=0)
    model, rep = train(init_model(5), x, nt, at, cfg)
    assert rep.final_epoch_mean_loss < rep.initial_batch_loss
    assert composite_loss(model.astype(np.float64), x[:100], nt, at) < \
        composite_loss(init_model(5).astype(np.float64), x[:100], nt, at)


def test_report_json_keys():
    _, rep = train(init_model(0, (8, 4, 3, 2)), np.ones((4, 4)), np.ones((2, 4)), np.ones((2, 4)),
                   TrainConfig(batch_size=2, accumulation_batches=1), grad_fn=CountingGrad())
    d = rep.to_dict(timing=False)
    assert "duration_s" not in d and d["n_updates"] == 2 and d["initial_batch_loss"] == 0.0


def test_gradient_check_full_model():
    rep = end_to_end_gradient_check(GradCheckConfig(seed=3))
    assert rep.n_checked >= 200 and rep.max_rel_error < 1e-4


def test_gradient_check_zero_first_layer():
    # every augmented embedding equals rho(b1), so all cosines are 1 and the
    # loss is stationary; agreement with zero can only be absolute
    cfg = GradCheckConfig(seed=8, floor=1e-5)
    model, images, nt, at = tiny_setup(cfg)
    model.weights[0][:] = 0.0
    _, grads = composite_loss_and_grad(model, images, nt, at)
    assert max(np.abs(g).max() for g in grads) < 1e-12
    rep = end_to_end_gradient_check(cfg, model, images, nt, at)
    assert rep.max_rel_error < 1e-4


def test_gradient_check_every_coordinate_toy_width():
    cfg = GradCheckConfig(seed=2, dim=6)
    model, images, nt, at = tiny_setup(cfg)
    small = init_model(2, (12, 7, 5, 4), dtype=np.float64)
    for b in small.biases:
        b[:] = 0.05
    rep = end_to_end_gradient_check(cfg, small, images, nt, at, coords="all")
    assert rep.n_checked + rep.n_skipped >= rep.n_checked and rep.max_rel_error < 1e-4
    assert rep.n_checked > 0.9 * sum(p.size for p in small.params())


def test_gradient_check_catches_corruption():
    def wrong(model, images, nt, at):
        value, grads = composite_loss_and_grad(model, images, nt, at)
        grads[2] = grads[2] * 1.01
        return value, grads

    with pytest.raises(CheckFailed) as info:
        end_to_end_gradient_check(GradCheckConfig(seed=1), grad_fn=wrong)
    assert info.value.worst and all(r[0] == 2 for r in info.value.worst)
