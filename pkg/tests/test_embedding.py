import math

import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dipss.embedding import (
    CAE3d,
    DiseaseEmbedder,
    EmbedParams,
    EmbedTrainConfig,
    Embedding,
    ExemplarSet,
    cae_loss,
    decode,
    embed_all,
    embedding_size,
    encode,
    encode_many,
    load_store,
    metric_class,
    metric_loss,
    metric_probability,
    probabilities_from_distances,
    reconstruction_loss,
    save_store,
    store_matrix,
    train_embedding,
)
from dipss.embedding.losses import metric_loss_from_distances
from dipss.embedding.training import batch_objective, choose_exemplars, params_from_network, stratified_batches
from dipss.exceptions import (
    ClassOutOfRange,
    DataError,
    DimensionMismatch,
    EmptyStore,
    MissingClass,
    ShapeIncompatible,
)
from dipss.phantom import STOCK_PROFILES, render_case
from dipss.preprocess import normalize_intensity
from dipss.volume import CaseRecord, Label, Volume


def _two_point(d2):
    """Exemplars on a line so that squared distances from the origin are d2."""
    return np.zeros(1), ExemplarSet(np.sqrt(np.asarray(d2, dtype=float))[:, None])


# ---------------------------------------------------------------- network

def test_reference_embedding_size():
    assert embedding_size((80, 80, 96)) == 150
    assert 80 * 80 * 96 / embedding_size((80, 80, 96)) == 4096
    net = CAE3d((80, 80, 96))
    with torch.no_grad():
        z = net.encode(torch.zeros(1, 80, 80, 96))
    assert z.shape == (1, 150)


def test_micro_network_size():
    net = CAE3d((8, 8, 8), (1,))
    assert sum(p.numel() for p in net.parameters()) <= 200
    assert net.embedding_dim == 64


@pytest.fixture(scope="module")
def small_params():
    torch.manual_seed(0)
    return params_from_network(CAE3d((16, 16, 24), (4, 8)))


def test_encode_decode_contract(small_params, rng):
    v = Volume(rng.uniform(0, 255, (16, 16, 24)))
    e1, e2 = encode(v, small_params), encode(v, small_params)
    assert e1.shape == (small_params.embedding_dim,) == (96,)
    assert np.array_equal(e1, e2)
    back = decode(e1, small_params)
    assert back.dims == (16, 16, 24) and np.all(np.isfinite(back.voxels))
    with pytest.raises(ShapeIncompatible):
        encode(Volume(np.zeros((16, 16, 16))), small_params)
    with pytest.raises(ShapeIncompatible):
        decode(np.zeros(5), small_params)


def test_encode_lipschitz_sane(small_params, rng):
    x = rng.uniform(0, 255, (16, 16, 24))
    base = encode(Volume(x), small_params)
    ratios = []
    for delta in (1e-1, 1.0, 10.0):
        y = x.copy()
        y[8, 8, 12] += delta
        ratios.append(np.linalg.norm(encode(Volume(y), small_params) - base) / delta)
    assert all(np.isfinite(ratios))
    assert max(ratios) < 10 * min(ratios) + 1e-6


# ---------------------------------------------------------------- losses

def test_reconstruction_examples():
    a, b = np.zeros((2, 1, 1)), np.array([0.6, 0.8]).reshape(2, 1, 1)
    assert reconstruction_loss(a, b) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert reconstruction_loss(b, b) == 0.0
    assert reconstruction_loss(3 * a, 3 * b) == pytest.approx(3 * reconstruction_loss(a, b))
    with pytest.raises(ShapeIncompatible):
        reconstruction_loss(np.zeros(3), np.zeros(4))


def test_probability_examples():
    p = metric_probability(*_two_point([0.0, 1.0]))
    assert p[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
    assert p == pytest.approx([0.7310585786, 0.2689414214], abs=1e-9)
    e, ex = np.zeros(3), ExemplarSet(np.eye(3) * 2, class_ids=(0, 1, 2))
    assert metric_probability(e, ex) == pytest.approx([1 / 3] * 3, abs=1e-15)


def test_probability_extended_precision():
    p = metric_probability(*_two_point([0.0, 50.0]))
    mp = 1 / (1 + mpmath.exp(-50))
    assert 1 - p[0] < 1e-20 and p[1] < 1e-20
    assert abs(mpmath.mpf(p[1]) - mpmath.exp(-50) * mp) < mpmath.mpf(1e-35)
    huge = probabilities_from_distances([1e3, 0.0, 999.0])
    assert np.all(np.isfinite(huge)) and huge[1] == 1.0


@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(0, 1e3)), st.floats(-1e3, 1e3))
def test_probability_sum_and_shift(d2, shift):
    p = probabilities_from_distances(d2)
    assert abs(p.sum() - 1) < 1e-12 and np.all(np.isfinite(p))
    q = probabilities_from_distances(d2 + shift)
    assert np.allclose(p, q, atol=1e-12)


def test_metric_loss_examples():
    e, ex = _two_point([0.0, 1.0])
    assert metric_loss(e, 0, ex) == pytest.approx(0.3133, abs=5e-5)
    assert metric_loss(e, 0, ex) == pytest.approx(-math.log(1 / (1 + math.exp(-1))), abs=1e-12)
    e, ex = _two_point([4.0, 4.0])
    assert metric_loss(e, 1, ex) == pytest.approx(math.log(2), abs=1e-12)
    e, ex = _two_point([0.0, 800.0])
    assert metric_loss(e, 0, ex) == pytest.approx(0.0, abs=1e-300)
    assert math.isfinite(metric_loss(e, 1, ex)) and metric_loss(e, 1, ex) == pytest.approx(800.0)
    with pytest.raises(ClassOutOfRange):
        metric_loss(e, 2, ex)
    with pytest.raises(DimensionMismatch):
        metric_probability(np.zeros(3), ex)
    with pytest.raises(DimensionMismatch):
        ExemplarSet(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        ExemplarSet(np.zeros((2, 2)), class_ids=(1, 1))


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_metric_loss_monotone_in_true_probability(a, b, other):
    d_a, d_b = np.array([a, other]), np.array([b, other])
    pa, pb = probabilities_from_distances(d_a)[0], probabilities_from_distances(d_b)[0]
    la, lb = metric_loss_from_distances(d_a, 0), metric_loss_from_distances(d_b, 0)
    assert la >= 0 and lb >= 0
    if pa > pb + 1e-12:
        assert la <= lb + 1e-12


def test_cae_loss():
    assert cae_loss(0, 0) == 0
    assert cae_loss(0.3, 0.6, EmbedTrainConfig()) == pytest.approx(0.5, abs=1e-12)
    assert cae_loss(0.3, 0.6, alpha=0) == 0.3


def test_torch_and_numpy_paths_agree():
    d2 = np.array([[0.3, 2.0], [5.0, 0.1]])
    t = torch.tensor(d2)
    assert np.allclose(probabilities_from_distances(d2), probabilities_from_distances(t).numpy())
    assert np.allclose(metric_loss_from_distances(d2, 1), metric_loss_from_distances(t, 1).numpy())


# ---------------------------------------------------------------- gradients

def _fd_max_rel_error(net, objective, eps=1e-4):
    net.zero_grad()
    objective().backward()
    worst = 0.0
    for p in net.parameters():
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + eps
            with torch.no_grad():
                up = objective().item()
            flat[i] = old - eps
            with torch.no_grad():
                down = objective().item()
            flat[i] = old
            num = (up - down) / (2 * eps)
            ana = p.grad.view(-1)[i].item()
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-7))
    return worst


def test_cae_loss_gradient_micro_network():
    torch.manual_seed(0)
    net = CAE3d((8, 8, 8), (1,)).double()
    with torch.no_grad():
        for p in net.parameters():
            p.mul_(3.0)  # keep activations clear of the ReLU kink
    x = torch.rand(4, 8, 8, 8, dtype=torch.float64)
    classes = np.array([0, 1, 0, 1])
    cfg = EmbedTrainConfig()

    def objective():
        return batch_objective(net, x, classes, cfg, np.random.default_rng(7))[2]

    assert _fd_max_rel_error(net, objective) < 1e-3


def test_reconstruction_gradient_decoder_probe():
    torch.manual_seed(1)
    net = CAE3d((8, 8, 8), (2,)).double()
    x = torch.rand(2, 8, 8, 8, dtype=torch.float64)
    probe = net.decoder.expand.weight if hasattr(net.decoder, "expand") else next(net.decoder.parameters())

    def objective():
        return reconstruction_loss(x, net(x)[1])

    net.zero_grad()
    objective().backward()
    i, eps = 3, 1e-4
    flat = probe.data.view(-1)
    old = flat[i].item()
    flat[i] = old + eps
    up = objective().item()
    flat[i] = old - eps
    down = objective().item()
    flat[i] = old
    num, ana = (up - down) / (2 * eps), probe.grad.view(-1)[i].item()
    assert abs(num - ana) / max(abs(num), 1e-8) < 1e-3


# ---------------------------------------------------------------- training

@pytest.fixture(scope="module")
def toy_cases():
    out = []
    for i in range(16):
        v, r = render_case(i, STOCK_PROFILES["synthB"], severity=1.0 if i % 2 else 0.0, dims=(16, 16, 24),
                           case_id=f"t{i:02d}")
        out.append((normalize_intensity(v)[0], r))
    return out


@pytest.fixture(scope="module")
def toy_params(toy_cases):
    return train_embedding(toy_cases, EmbedTrainConfig(epochs=30, channels=(4, 8), batch_size=4))


def test_descent_smoke(toy_params):
    log = toy_params.loss_log
    assert len(log) == 30
    assert all(math.isfinite(e["l_rmse"]) and math.isfinite(e["l_dist"]) for e in log)
    assert log[-1]["l_dist"] < log[0]["l_dist"]
    assert toy_params.all_finite()
    assert sorted(toy_params.metadata["trained_case_ids"]) == [f"t{i:02d}" for i in range(16)]


def test_training_deterministic(toy_cases):
    cfg = EmbedTrainConfig(epochs=2, channels=(2,), batch_size=4, seed=5)
    a, b = train_embedding(toy_cases, cfg), train_embedding(toy_cases, cfg)
    assert a.loss_log == b.loss_log
    assert all(np.array_equal(a.flat()[k], b.flat()[k]) for k in a.flat())


def test_pd_excluded_and_single_class(toy_cases):
    healthy = [c for c in toy_cases if c[1].label is Label.SYNTH_HEALTHY]
    with pytest.raises(MissingClass):
        train_embedding(healthy, EmbedTrainConfig(epochs=1, channels=(2,), batch_size=4))
    pd = (toy_cases[0][0], CaseRecord("pd0", dataset="PPMI", label="PD"))
    p = train_embedding(toy_cases[:4] + [pd], EmbedTrainConfig(epochs=1, channels=(2,), batch_size=4))
    assert "pd0" not in p.metadata["trained_case_ids"]
    assert metric_class("PD") is None and metric_class("AD") == 1 and metric_class("Control") == 0


def test_batches_and_exemplars():
    rng = np.random.default_rng(0)
    classes = np.array([0] * 7 + [1] * 5)
    batches = stratified_batches(classes, 4, rng)
    assert sorted(np.concatenate(batches).tolist()) == list(range(12))
    assert all(len(set(classes[b])) == 2 for b in batches)
    for b in batches:
        ex, anchors = choose_exemplars(classes[b], (0, 1), rng)
        assert [classes[b][i] for i in ex] == [0, 1]
        assert not set(ex) & set(anchors.tolist())
        assert len(ex) + len(anchors) == len(b)
    assert choose_exemplars(np.array([0, 0]), (0, 1), rng) is None


# ---------------------------------------------------------------- store and estimator

def test_embed_all_and_store(toy_cases, toy_params, tmp_path):
    extra = (Volume(np.zeros((8, 8, 8))), CaseRecord("odd"))
    res = embed_all(toy_cases + [extra], toy_params)
    assert len(res.embeddings) == 16 and [c for c, _ in res.skipped] == ["odd"]
    assert np.array_equal(res.embeddings[3].vector, encode(toy_cases[3][0], toy_params))
    assert np.array_equal(encode_many([v for v, _ in toy_cases], toy_params), store_matrix(res.embeddings))
    p = save_store(res.embeddings, tmp_path / "s.jsonl")
    back = load_store(p)
    assert back == res.embeddings
    assert back[0].record == res.embeddings[0].record


def test_store_errors(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(EmptyStore):
        load_store(tmp_path / "e.jsonl")
    (tmp_path / "b.jsonl").write_text('{"case_id": "x"}\n')
    with pytest.raises(DataError):
        load_store(tmp_path / "b.jsonl")
    with pytest.raises(ValueError):
        Embedding(np.array([np.nan]), CaseRecord("x"))


def test_estimator(toy_cases):
    X = [v for v, _ in toy_cases]
    y = [r.label.value for _, r in toy_cases]
    est = DiseaseEmbedder(epochs=2, channels=(2,), batch_size=4).fit(X, y)
    z = est.transform(X)
    assert z.shape == (16, 768)
    assert est.inverse_transform(z[:2]).shape == (2, 16, 16, 24)
    est2 = DiseaseEmbedder(epochs=2, channels=(2,), batch_size=4).fit(X, [int(r.label.value == "SYNTH_DISEASED")
                                                                          for _, r in toy_cases])
    assert np.array_equal(est2.transform(X), z)
    assert np.array_equal(DiseaseEmbedder.from_params(est.params_).transform(X), z)
    assert est.get_params()["alpha"] == pytest.approx(1 / 3)
    with pytest.raises(MissingClass):
        DiseaseEmbedder(epochs=1, channels=(2,), batch_size=4).fit(X, [0] * 16)


def test_estimator_accepts_label_enums(toy_cases):
    vols = [v for v, _ in toy_cases[:8]]
    labels = [r.label for _, r in toy_cases[:8]]
    a = DiseaseEmbedder(epochs=1, channels=(2,), batch_size=4).fit(vols, labels)
    b = DiseaseEmbedder(epochs=1, channels=(2,), batch_size=4).fit(vols, [lab.value for lab in labels])
    assert np.array_equal(a.transform(vols), b.transform(vols))
