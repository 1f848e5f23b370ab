import math

import numpy as np
import pytest
import torch

from ropelab.rotary import RotaryConfig
from ropelab.toy.data import (
    TaskParams,
    gen_grounding_task,
    gen_needle_task,
    serialize_example,
)
from ropelab.toy.model import (
    Encoding,
    LengthError,
    ToyDecoder,
    ToyModelConfig,
    masked_loss,
)
from ropelab.toy.train import (
    TrainConfig,
    TrainingDivergedError,
    evaluate_answer_accuracy,
    evaluate_masked_loss,
    train,
)

from reference import reference_decoder_forward


def _ids(length, offset=0):
    ids = np.arange(1, length + 1) + offset
    return ids, ids.copy()


@torch.no_grad()
def _forward(model, tokens, temporal, flatten):
    return model(tokens, temporal, flatten)


def _random_stream(rng, vocab, length):
    return torch.tensor([int(t) for t in rng.integers(0, vocab, size=length)])


# --------------------------------------------------------------- masked loss


def test_masked_loss_certain_model_is_zero():
    targets = torch.tensor([[1, 2, 3]])
    logits = torch.full((1, 3, 5), -1000.0, dtype=torch.float64)
    for i, t in enumerate([1, 2, 3]):
        logits[0, i, t] = 1000.0
    mask = torch.tensor([[True, True, True]])
    assert float(masked_loss(logits, targets, mask)) == pytest.approx(0.0, abs=1e-9)


def test_masked_loss_uniform_is_log_vocab():
    vocab = 37
    logits = torch.zeros((2, 4, vocab), dtype=torch.float64)
    targets = torch.randint(0, vocab, (2, 4))
    mask = torch.ones(2, 4, dtype=torch.bool)
    assert float(masked_loss(logits, targets, mask)) == pytest.approx(math.log(vocab))


def test_masked_loss_two_token_hand_case():
    # softmax([2, 0, 1]) -> p(correct=0) ; softmax([0, 0, 3]) -> p(correct=2)
    logits = torch.tensor([[[2.0, 0.0, 1.0], [0.0, 0.0, 3.0]]], dtype=torch.float64)
    targets = torch.tensor([[0, 2]])
    mask = torch.tensor([[True, True]])
    p1 = math.exp(2) / (math.exp(2) + 1 + math.e)
    p2 = math.exp(3) / (2 + math.exp(3))
    expected = -(math.log(p1) + math.log(p2)) / 2
    assert float(masked_loss(logits, targets, mask)) == pytest.approx(expected, rel=1e-12)


def test_masked_loss_ignores_unmasked_and_rejects_empty():
    logits = torch.zeros((1, 3, 4), dtype=torch.float64)
    logits[0, 0, 0] = 100.0
    targets = torch.tensor([[3, 1, 1]])
    mask = torch.tensor([[False, True, True]])
    assert float(masked_loss(logits, targets, mask)) == pytest.approx(math.log(4))
    with pytest.raises(ValueError):
        masked_loss(logits, targets, torch.zeros(1, 3, dtype=torch.bool))


# -------------------------------------------------------------------- forward


def test_flatten_rope_matches_reference_decoder():
    rng = np.random.default_rng(0)
    config = ToyModelConfig(
        vocab=50, d_model=32, heads=4, layers=2, encoding=Encoding.FLATTEN_ROPE,
        max_train_len=64,
    )
    model = ToyDecoder(config, seed=1)
    tokens = _random_stream(rng, 50, 20)
    temporal, flatten = _ids(20)
    logits = _forward(model, tokens, temporal, flatten).squeeze(0).numpy()

    weights = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    ref = reference_decoder_forward(weights, tokens.tolist(), list(flatten), heads=4)
    np.testing.assert_allclose(logits, ref, atol=1e-10)


def test_itrope_with_equal_ids_matches_flatten_mode():
    rng = np.random.default_rng(1)
    base = dict(vocab=40, d_model=16, heads=2, layers=2, max_train_len=32)
    itrope = ToyDecoder(ToyModelConfig(encoding=Encoding.ITROPE, **base), seed=2)
    flat = ToyDecoder(ToyModelConfig(encoding=Encoding.FLATTEN_ROPE, **base), seed=2)
    tokens = _random_stream(rng, 40, 12)
    temporal, flatten = _ids(12)
    np.testing.assert_allclose(
        _forward(itrope, tokens, temporal, flatten).numpy(),
        _forward(flat, tokens, temporal, flatten).numpy(),
        atol=1e-12,
    )


def test_frame_permutation_changes_logits():
    params = TaskParams(frames=6, tokens_per_frame=2, payload_size=8, duration_s=96,
                        examples=1)
    dataset = gen_needle_task(params, seed=3)
    example = dataset.examples[0]
    tokens, ids, _ = serialize_example(example)
    config = ToyModelConfig(vocab=dataset.vocab.size, d_model=32, heads=4, layers=2,
                            max_train_len=64)
    model = ToyDecoder(config, seed=4)
    base = _forward(model, torch.tensor(tokens), np.array(ids.temporal), np.array(ids.flatten))

    swapped = example.frames[:]
    swapped[0], swapped[1] = swapped[1], swapped[0]
    example.frames = swapped
    tokens2, ids2, _ = serialize_example(example)
    permuted = _forward(
        model, torch.tensor(tokens2), np.array(ids2.temporal), np.array(ids2.flatten)
    )
    assert not torch.allclose(base[0, -1], permuted[0, -1])


def test_zero_layer_model_is_position_independent():
    config = ToyModelConfig(vocab=30, d_model=16, heads=2, layers=0, max_train_len=512)
    model = ToyDecoder(config, seed=5)
    tokens = torch.tensor([7, 8, 7, 9])
    a = _forward(model, tokens, *_ids(4))
    b = _forward(model, tokens, *(i * 13 + 5 for i in _ids(4)))
    np.testing.assert_allclose(a.numpy(), b.numpy(), atol=0)
    np.testing.assert_allclose(a[0, 0].numpy(), a[0, 2].numpy(), atol=0)


def test_causality():
    rng = np.random.default_rng(6)
    config = ToyModelConfig(vocab=60, d_model=32, heads=4, layers=2, max_train_len=64)
    model = ToyDecoder(config, seed=7)
    tokens = _random_stream(rng, 60, 24)
    temporal, flatten = _ids(24)
    base = _forward(model, tokens, temporal, flatten)
    for position in (5, 12, 23):
        perturbed = tokens.clone()
        perturbed[position] = (int(perturbed[position]) + 1) % 60
        out = _forward(model, perturbed, temporal, flatten)
        np.testing.assert_allclose(
            out[0, :position].numpy(), base[0, :position].numpy(), atol=1e-12
        )
        assert not torch.allclose(out[0, position:], base[0, position:])


def test_length_guard():
    config = ToyModelConfig(vocab=20, d_model=16, heads=2, layers=1, max_train_len=8)
    model = ToyDecoder(config, seed=0)
    tokens = torch.zeros(10, dtype=torch.long)
    with pytest.raises(LengthError):
        model(tokens, *_ids(10))
    extended = ToyModelConfig(vocab=20, d_model=16, heads=2, layers=1,
                              max_train_len=8, extended_len=16)
    model2 = ToyDecoder(extended, seed=0)
    model2(tokens, *_ids(10))
    with pytest.raises(LengthError):
        model2(torch.zeros(17, dtype=torch.long), *_ids(17))


def test_interpolation_activates_only_past_trained_length():
    lam = (0.5, 0.5, 0.5, 0.5)
    base = dict(vocab=20, d_model=16, heads=2, layers=1, max_train_len=12,
                extended_len=40)
    scaled = ToyDecoder(
        ToyModelConfig(rotary=RotaryConfig(dim=8, lam=lam), **base), seed=3
    )
    plain = ToyDecoder(ToyModelConfig(**base), seed=3)
    short = torch.arange(8) % 20
    np.testing.assert_allclose(
        _forward(scaled, short, *_ids(8)).numpy(),
        _forward(plain, short, *_ids(8)).numpy(),
        atol=0,
    )
    long = torch.arange(20) % 20
    assert not torch.allclose(
        _forward(scaled, long, *_ids(20)), _forward(plain, long, *_ids(20))
    )


# ------------------------------------------------------------- gradient check


def test_gradients_match_central_finite_differences():
    torch.manual_seed(0)
    config = ToyModelConfig(vocab=12, d_model=8, heads=2, layers=1, max_train_len=16)
    model = ToyDecoder(config, seed=8)
    rng = np.random.default_rng(9)
    tokens = _random_stream(rng, 12, 7)
    temporal = np.array([1, 2, 3, 3, 4, 5, 6])
    flatten = np.arange(1, 8)
    targets = _random_stream(rng, 12, 7)
    mask = torch.tensor([False, False, True, False, True, True, False])

    def loss_value():
        logits = model(tokens, temporal, flatten)
        return masked_loss(logits[0], targets, mask)

    loss = loss_value()
    loss.backward()
    eps = 1e-6
    for name, param in model.named_parameters():
        grad = param.grad.clone()
        flat = param.data.view(-1)
        fd = torch.zeros_like(flat)
        for i in range(flat.numel()):
            original = float(flat[i])
            with torch.no_grad():
                flat[i] = original + eps
                up = float(loss_value())
                flat[i] = original - eps
                down = float(loss_value())
                flat[i] = original
            fd[i] = (up - down) / (2 * eps)
        fd = fd.view_as(param)
        denom = max(float(fd.norm()), 1e-12)
        rel = float((grad - fd).norm()) / denom
        assert rel <= 1e-5, f"{name}: relative gradient error {rel}"


# ------------------------------------------------------------------- training


def test_zero_steps_leaves_model_unchanged():
    params = TaskParams(frames=4, tokens_per_frame=2, payload_size=4, duration_s=64,
                        examples=8)
    dataset = gen_needle_task(params, seed=0)
    config = ToyModelConfig(vocab=dataset.vocab.size, d_model=16, heads=2, layers=1,
                            max_train_len=32)
    model = ToyDecoder(config, seed=1)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    result = train(model, dataset, TrainConfig(steps=0, seed=0))
    assert result.losses == []
    for key, value in model.state_dict().items():
        assert torch.equal(before[key], value)


def test_training_is_bitwise_deterministic():
    params = TaskParams(frames=4, tokens_per_frame=2, payload_size=4, duration_s=64,
                        examples=32)
    dataset = gen_needle_task(params, seed=0)

    def run():
        config = ToyModelConfig(vocab=dataset.vocab.size, d_model=16, heads=2,
                                layers=1, max_train_len=32)
        model = ToyDecoder(config, seed=1)
        result = train(model, dataset, TrainConfig(steps=25, batch_size=4, seed=2))
        return result.losses, model.state_dict()

    losses_a, state_a = run()
    losses_b, state_b = run()
    assert losses_a == losses_b
    for key in state_a:
        assert torch.equal(state_a[key], state_b[key])


def test_training_reduces_loss():
    params = TaskParams(frames=4, tokens_per_frame=2, payload_size=8, duration_s=64,
                        examples=256)
    dataset = gen_needle_task(params, seed=0)
    config = ToyModelConfig(vocab=dataset.vocab.size, d_model=32, heads=4, layers=2,
                            max_train_len=32, dtype="float32")
    model = ToyDecoder(config, seed=1)
    initial = evaluate_masked_loss(model, dataset)
    train(model, dataset, TrainConfig(steps=150, batch_size=16, lr=1e-3, seed=0))
    assert evaluate_masked_loss(model, dataset) < initial


def test_divergence_reports_step():
    params = TaskParams(frames=4, tokens_per_frame=2, payload_size=4, duration_s=64,
                        examples=16)
    dataset = gen_needle_task(params, seed=0)
    config = ToyModelConfig(vocab=dataset.vocab.size, d_model=16, heads=2, layers=1,
                            max_train_len=32, dtype="float32")
    model = ToyDecoder(config, seed=1)
    with torch.no_grad():
        model.embed.weight.mul_(1e30)  # force a non-finite loss immediately
    with pytest.raises(TrainingDivergedError) as err:
        train(model, dataset, TrainConfig(steps=5, batch_size=4, lr=1e30, seed=0))
    assert err.value.step in (0, 1)


def test_accuracy_counts_whole_answers():
    params = TaskParams(frames=2, tokens_per_frame=2, payload_size=4, duration_s=32,
                        examples=16)
    dataset = gen_needle_task(params, seed=0)
    config = ToyModelConfig(vocab=dataset.vocab.size, d_model=16, heads=2, layers=1,
                            max_train_len=16)
    model = ToyDecoder(config, seed=1)
    accuracy = evaluate_answer_accuracy(model, dataset)
    assert 0.0 <= accuracy <= 1.0
