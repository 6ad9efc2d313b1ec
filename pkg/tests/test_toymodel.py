import numpy as np
import pytest

from semiq.errors import DivergenceError, FormatError, InvalidInputError, ShapeError, TokenizationError
from semiq.labelcodec import render
from semiq.toymodel.gradcheck import brute_force_loss, relative_errors, small_instance
from semiq.toymodel.model import (
    BOS_ID,
    EOS_ID,
    FeatureScaler,
    ModelDims,
    caption_loss,
    forward,
    generate,
    generate_ids,
    init_params,
    loss_and_grad,
    param_shapes,
    zero_params,
)
from semiq.toymodel.optim import AdamWState, adamw_step
from semiq.toymodel.train import Checkpoint, Example, TrainConfig, collate, load_checkpoint, save_checkpoint, train
from semiq.toymodel.vocab import Vocabulary

# --- vocabulary


def test_vocab_round_trip():
    v = Vocabulary.build(["dog bark", "rain"])
    text = "The SNR is -12.5"
    ids = v.tokenize(text)
    assert v.tokens[:3] == ["<pad>", "<bos>", "<eos>"]
    assert v.detokenize(ids) == text
    assert v.detokenize(v.tokenize("Paying attention to the dog bark estimate the SNR")) == "Paying attention to the dog bark estimate the SNR"
    with pytest.raises(TokenizationError):
        v.tokenize("The SNR is loud")


def test_vocab_covers_every_rendered_label():
    v = Vocabulary.build(["speech"])
    for x in np.linspace(1, 5, 41):
        for s in ("text", "numeric"):
            pair = render("mos", "speech", x, s)
            assert v.detokenize(v.tokenize(pair.label)) == pair.label
    for x in np.linspace(-20, 20, 81):
        pair = render("snr", "speech", x, "numeric", fixed_prompt=True)
        v.tokenize(pair.prompt)
        assert v.detokenize(v.tokenize(pair.label)) == pair.label


# --- forward pass


def test_param_names_for_one_and_two_blocks():
    one = param_shapes(ModelDims(4, 10))
    two = param_shapes(ModelDims(4, 10, n_layers=2))
    assert "attn_q" in one and "block0.attn_q" in two and "block1.ff_w2" in two
    assert len(two) == len(one) + 8


@pytest.mark.parametrize("n_layers", [1, 2])
def test_causality(n_layers):
    params, (f, p, cin, _) = small_instance(1, n_layers)
    base = forward(params, f, p, cin)
    rng = np.random.default_rng(0)
    for _ in range(20):
        j = int(rng.integers(1, cin.shape[1]))
        c2 = cin.copy()
        c2[:, j] = rng.integers(3, 12, c2.shape[0])
        out = forward(params, f, p, c2)
        assert np.array_equal(out[:, :j], base[:, :j])


def test_zero_params_give_uniform_distribution():
    dims = ModelDims(feat_dim=6, vocab_size=12, d=8)
    logits = forward(zero_params(dims), np.ones(6), [3, 4], [BOS_ID, 5, 6])
    assert np.all(logits == 0.0)
    assert caption_loss(logits, [5, 6, EOS_ID]) == pytest.approx(3 * np.log(12))


def test_forward_validation():
    params, (f, p, cin, _) = small_instance()
    with pytest.raises(ShapeError):
        forward(params, f[:, :3], p, cin)
    bad = cin.copy()
    bad[:, 0] = 5
    with pytest.raises(InvalidInputError):
        forward(params, f, p, bad)
    with pytest.raises(ShapeError):
        forward(params, f, p, np.ones((3, 7), dtype=int))
    with pytest.raises(InvalidInputError):
        caption_loss(np.zeros((2, 4)), [0, 0])


# --- loss and gradients


@pytest.mark.parametrize("n_layers", [1, 2])
def test_loss_matches_brute_force(n_layers):
    params, (f, p, cin, cout) = small_instance(2, n_layers)
    fast = caption_loss(forward(params, f, p, cin), cout)
    assert abs(fast - brute_force_loss(params, f, p, cout)) < 1e-10


@pytest.mark.parametrize("n_layers", [1, 2])
def test_gradients_match_finite_differences(n_layers):
    params, batch = small_instance(0, n_layers)
    errs = relative_errors(params, batch)
    assert len(errs) == len(params.arrays)
    assert max(errs.values()) < 1e-4, errs


def test_pad_targets_carry_no_gradient():
    params, (f, p, cin, cout) = small_instance()
    c2 = cout.copy()
    c2[1, 3:] = 0
    l1, g1 = loss_and_grad(params, (f, p, cin, c2))
    cin2 = cin.copy()
    cin2[1, 4] = 7  # input after the last target never matters
    l2, g2 = loss_and_grad(params, (f, p, cin2, c2))
    assert l1 == pytest.approx(l2, abs=1e-12)


def test_divergence_raises():
    params, batch = small_instance()
    params.arrays["out_w"][:] = np.inf
    with pytest.raises((DivergenceError, FloatingPointError)):
        with np.errstate(all="ignore"):
            loss_and_grad(params, batch)


# --- optimiser


def test_adamw_first_step_is_lr_sign():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.5, -0.1, 0.0])}
    st = AdamWState.zeros_like(p)
    adamw_step(p, g, st, lr=0.1, weight_decay=0.0)
    assert np.allclose(p["w"], [0.9, -1.9, 3.0], atol=1e-6)
    assert st.t == 1


def test_adamw_decoupled_decay():
    p = {"w": np.array([2.0])}
    st = AdamWState.zeros_like(p)
    adamw_step(p, {"w": np.zeros(1)}, st, lr=0.1, weight_decay=0.5)
    assert p["w"][0] == pytest.approx(2.0 * (1 - 0.05))


def test_adamw_minimises_quadratic():
    p = {"w": np.array([5.0, -3.0])}
    st = AdamWState.zeros_like(p)
    for _ in range(2000):
        adamw_step(p, {"w": 2 * p["w"]}, st, lr=0.05)
    assert np.max(np.abs(p["w"])) < 1e-2


# --- training and decoding


def _tiny_task(n=1):
    v = Vocabulary.build(["dog"])
    dims = ModelDims(feat_dim=4, vocab_size=len(v), d=16, mapper_hidden=16, ff_hidden=32, max_len=10)
    rng = np.random.default_rng(0)
    ex = []
    for i in range(n):
        pair = render("snr", "dog", float(rng.uniform(-20, 20)), "numeric")
        ex.append(Example(rng.normal(size=4), v.tokenize(pair.prompt), v.tokenize(pair.label)))
    return v, dims, ex


def test_collate_shapes():
    _, _, ex = _tiny_task(3)
    f, p, cin, cout = collate(ex)
    assert cin[:, 0].tolist() == [BOS_ID] * 3
    for i, e in enumerate(ex):
        n = len(e.caption_ids)
        assert cout[i, n] == EOS_ID and cin[i, 1 : n + 1].tolist() == e.caption_ids


def test_overfit_single_example():
    v, dims, ex = _tiny_task(1)
    res = train(ex, ex, dims, TrainConfig(learning_rate=1e-2, epochs=150, batch_size=1, weight_decay=0.0))
    cap = generate(res.params, v, ex[0].features, ex[0].prompt_ids)
    assert cap == v.detokenize(ex[0].caption_ids)
    assert res.curve[-1][1] < res.curve[0][1]


def test_generate_max_len_and_determinism():
    v, dims, ex = _tiny_task(2)
    params = init_params(dims, seed=1)
    f, p, _, _ = collate(ex)
    ids = generate_ids(params, f, p, max_len=1)
    assert ids.shape == (2, 1)
    assert np.array_equal(generate_ids(params, f, p), generate_ids(params, f, p))


def test_training_is_deterministic():
    _, dims, ex = _tiny_task(6)
    cfg = TrainConfig(learning_rate=1e-3, epochs=3, batch_size=4, seed=5)
    a = train(ex[:4], ex[4:], dims, cfg)
    b = train(ex[:4], ex[4:], dims, cfg)
    assert a.curve == b.curve
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params.arrays)


def test_best_checkpoint_selection():
    _, dims, ex = _tiny_task(6)
    res = train(ex[:4], ex[4:], dims, TrainConfig(learning_rate=1e-2, epochs=5, batch_size=2))
    vals = [c[2] for c in res.curve]
    assert res.best_epoch == int(np.argmin(vals))


def test_curve_csv(tmp_path):
    _, dims, ex = _tiny_task(2)
    res = train(ex, ex, dims, TrainConfig(epochs=2, batch_size=2))
    res.write_curve(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 4


def test_checkpoint_round_trip(tmp_path):
    v, dims, ex = _tiny_task(2)
    params = init_params(dims, seed=2)
    scaler = FeatureScaler.fit(np.random.default_rng(0).normal(size=(10, 4)))
    save_checkpoint(tmp_path / "m.npz", Checkpoint(params, v, scaler, {"task": "snr"}))
    ck = load_checkpoint(tmp_path / "m.npz")
    assert ck.vocab.tokens == v.tokens and ck.meta == {"task": "snr"} and ck.params.dims == dims
    assert all(np.array_equal(ck.params[k], params[k]) for k in params.arrays)
    assert np.array_equal(ck.scaler.mean, scaler.mean)
    np.savez(tmp_path / "bad.npz", x=np.zeros(2))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.npz")


def test_train_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidInputError):
        train([], [], ModelDims(4, 10), TrainConfig())
