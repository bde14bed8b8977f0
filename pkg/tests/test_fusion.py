import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adlfusion.errors import ConfigurationError, DimensionError
from adlfusion.fusion import (
    ClassifierHead,
    CrossAttentionBlock,
    Dense,
    FusionModel,
    ModelConfig,
    SharedMLP,
    TemporalAttentionBranch,
    aux_pose_predict,
    aux_pose_predict_backward,
    cross_attention,
    cross_attention_backward,
    flatten_tokens,
    fuse_and_classify,
    joint_mean_pool,
    joint_mean_pool_backward,
    masked_query,
    modulate,
    modulate_backward,
    shared_mlp,
    shared_mlp_backward,
    temporal_attention,
    token_index,
    unflatten_tokens,
)
from adlfusion.numerics import AdamConfig, Parameter, adam_step, finite_diff_check, glorot_uniform
from adlfusion.training import LossConfig, batch_loss_and_grad, generate_synthetic

TINY = ModelConfig.tiny()


def wrap(x):
    return Parameter(np.array(x, dtype=np.float64))


def check_grads(loss, params, tol):
    report = finite_diff_check(loss, params, tol=tol)
    assert report.passed, report.failures()


# -- config -----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(pose_frames=30, video_frames=8)
    with pytest.raises(ConfigurationError):
        ModelConfig(channels=100, num_heads=8)
    with pytest.raises(ConfigurationError):
        ModelConfig(num_classes=1)
    cfg = ModelConfig.tiny(num_heads=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        ModelConfig.from_dict({"bogus": 1})


# -- pose branch --------------------------------------------------------------

def test_joint_mean_pool_examples(rng):
    H = rng.normal(size=(4, 1, 6))
    npt.assert_array_equal(joint_mean_pool(H), H[:, 0])
    H = np.array([[[1.0, 3.0], [2.0, 4.0]]])
    npt.assert_array_equal(joint_mean_pool(H), [[1.5, 3.5]])
    with pytest.raises(DimensionError):
        joint_mean_pool(np.zeros((2, 0, 3)))


def test_joint_mean_pool_gradient(rng):
    H = wrap(rng.normal(size=(3, 4, 5)))
    g = rng.normal(size=(3, 5))
    H.grad = joint_mean_pool_backward(g, 4)
    check_grads(lambda: float((joint_mean_pool(H.value) * g).sum()), {"H": H}, 1e-6)


def make_mlp(rng, c_p, hidden, J, zero=False):
    mlp = SharedMLP(Dense.init(rng, c_p, hidden), Dense.init(rng, hidden, 3 * J))
    if zero:
        for d in (mlp.hidden, mlp.out):
            d.w.value[...] = 0.0
    return mlp


def test_shared_mlp_residual_identity(rng):
    pose = rng.normal(size=(6, 5, 3))
    m, u, _ = shared_mlp(rng.normal(size=(6, 4)), pose, make_mlp(rng, 4, 7, 5, zero=True))
    npt.assert_array_equal(m, pose.reshape(6, 15))
    assert np.all(u == 0)


def test_shared_mlp_full_size_shape(rng):
    pose = rng.normal(size=(32, 13, 3))
    m, _, _ = shared_mlp(rng.normal(size=(32, 64)), pose, make_mlp(rng, 64, 128, 13))
    assert m.shape == (32, 39)
    with pytest.raises(DimensionError):
        shared_mlp(rng.normal(size=(32, 64)), pose[:, :5], make_mlp(rng, 64, 128, 13))


def test_shared_mlp_gradient(rng):
    pose = rng.normal(size=(5, 4, 3))
    h = wrap(rng.normal(size=(5, 6)))
    mlp = make_mlp(rng, 6, 7, 4)
    g = rng.normal(size=(5, 12))
    _, _, cache = shared_mlp(h.value, pose, mlp)
    h.grad = shared_mlp_backward(g, cache)
    params = {"h": h, "w1": mlp.hidden.w, "b1": mlp.hidden.b, "w2": mlp.out.w, "b2": mlp.out.b}
    check_grads(lambda: float((shared_mlp(h.value, pose, mlp)[0] * g).sum()), params, 1e-5)


def test_aux_selector_and_average(rng):
    m = rng.normal(size=(8, 15))
    sel = np.zeros((8, 1))
    sel[-1] = 1.0
    pred, _ = aux_pose_predict(m, Parameter(sel), 5)
    npt.assert_array_equal(pred.predicted_pose, m[-1].reshape(5, 3))
    assert pred.horizon == 3
    const = np.tile(rng.normal(size=(1, 15)), (8, 1))
    pred, _ = aux_pose_predict(const, Parameter(np.full((8, 1), 1 / 8)), 5)
    npt.assert_allclose(pred.predicted_pose, const[0].reshape(5, 3), rtol=0, atol=1e-14)


def test_aux_learns_linear_motion():
    # joint moving at constant velocity; the target is its position 3 steps ahead
    T_p, horizon = 8, 3
    t = np.arange(T_p, dtype=np.float64)
    w = Parameter(np.zeros((T_p, 1)))
    rng = np.random.default_rng(0)
    cfg = AdamConfig(learning_rate=0.01)
    for _ in range(3000):
        x0, v = rng.uniform(-1, 1, size=(2, 3))
        m = (x0 + np.outer(t, v)).reshape(T_p, 3)
        target = (x0 + (T_p - 1 + horizon) * v)[None]
        pred, x = aux_pose_predict(m, w, 1, horizon)
        aux_pose_predict_backward(2 * (pred.predicted_pose - target), x, w)
        adam_step({"w": w}, cfg)
    losses = []
    for _ in range(50):
        x0, v = rng.uniform(-1, 1, size=(2, 3))
        m = (x0 + np.outer(t, v)).reshape(T_p, 3)
        pred, _ = aux_pose_predict(m, w, 1, horizon)
        losses.append(np.sum((pred.predicted_pose[0] - (x0 + (T_p - 1 + horizon) * v)) ** 2))
    assert np.mean(losses) < 1e-3


def make_branch(rng, d, T_p, ch=4, hidden=4, k=3):
    return TemporalAttentionBranch(
        Parameter(glorot_uniform(rng, k * d, k * ch, shape=(k, d, ch))), Parameter(np.zeros(ch)),
        Dense.init(rng, ch, hidden), Dense.init(rng, hidden, 1),
    )


def test_temporal_attention_examples(rng):
    branch = make_branch(rng, 6, 8)
    # constant scores: a zero score layer makes h* = 0
    branch.score.w.value[...] = 0.0
    att, _ = temporal_attention(rng.normal(size=(8, 6)), 4, branch)
    npt.assert_allclose(att.weights, 0.25, rtol=0, atol=1e-15)
    # identity conv and hidden layer, score picks channel 0: h* = [1, 0, 0, 0]
    d = 4
    eye = np.eye(d)
    branch = make_branch(rng, d, 8, ch=d, hidden=d)
    branch.conv_w.value[...] = 0.0
    branch.conv_w.value[1] = eye
    branch.hidden.w.value[...] = eye
    branch.score.w.value[...] = eye[:, :1]
    u = np.zeros((8, d))
    u[0:2, 0] = 1.0
    att, _ = temporal_attention(u, 4, branch)
    npt.assert_array_equal(att.h_star, [1.0, 0.0, 0.0, 0.0])
    assert abs(att.weights[0] - np.e / (np.e + 3)) < 1e-12
    with pytest.raises(ConfigurationError):
        temporal_attention(rng.normal(size=(8, 6)), 3, branch)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_temporal_attention_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    branch = make_branch(rng, 6, 8)
    att, _ = temporal_attention(rng.normal(scale=3, size=(8, 6)), 4, branch)
    assert abs(att.weights.sum() - 1.0) < 1e-12
    assert np.all(att.weights > 0)


# -- visual ops -----------------------------------------------------------------

def test_modulate_examples(rng):
    f = rng.normal(size=(4, 3, 3, 5))
    ft = modulate(f, np.full(4, 0.25))
    npt.assert_allclose(ft.mean(axis=(0, 1, 2)), f.mean(axis=(0, 1, 2)) / 4, rtol=1e-15, atol=1e-17)
    one_hot = np.array([0.0, 0.0, 1.0, 0.0])
    ft = modulate(f, one_hot)
    assert np.all(ft[[0, 1, 3]] == 0) and np.array_equal(ft[2], f[2])
    with pytest.raises(DimensionError):
        modulate(f, np.ones(3))


def test_modulate_linear(rng):
    f1, f2 = rng.normal(size=(2, 4, 2, 2, 3))
    a = rng.random(4)
    npt.assert_allclose(modulate(f1 + f2, a), modulate(f1, a) + modulate(f2, a), rtol=1e-15, atol=1e-15)


def test_modulate_gradient(rng):
    f = wrap(rng.normal(size=(3, 2, 2, 4)))
    a = wrap(rng.random(3))
    g = rng.normal(size=f.value.shape)
    f.grad, a.grad = modulate_backward(f.value, a.value, g)
    check_grads(lambda: float((modulate(f.value, a.value) * g).sum()), {"f": f, "alpha": a}, 1e-6)


def test_flatten_examples(rng):
    x = rng.normal(size=(1, 1, 1, 6))
    npt.assert_array_equal(flatten_tokens(x), x.reshape(1, 6))
    x = rng.normal(size=(3, 2, 4, 5))
    F = flatten_tokens(x)
    assert np.array_equal(unflatten_tokens(F, x.shape), x)
    for t in range(3):
        for h in range(2):
            for w in range(4):
                assert token_index(t, h, w, (2, 4)) == t * 8 + h * 4 + w
                npt.assert_array_equal(F[token_index(t, h, w, (2, 4))], x[t, h, w])


def test_masked_query_examples(rng):
    f = rng.normal(size=(1, 3, 3, 4))
    q, active = masked_query(f, np.ones((3, 3)))
    npt.assert_allclose(q, f[0].mean(axis=(0, 1)), rtol=1e-14)
    assert active
    f = rng.normal(size=(4, 3, 3, 4))
    m = np.zeros((3, 3))
    m[1, 2] = 1
    q, _ = masked_query(f, m)
    npt.assert_allclose(q, f[:, 1, 2].mean(axis=0), rtol=1e-14)
    q, active = masked_query(f, np.zeros((3, 3)))
    assert not active and np.all(q == 0)


def test_masked_query_token_order_invariant(rng):
    # permuting tokens and the pooling weights together gives the same query
    from adlfusion.fusion import pooling_matrix
    f = rng.normal(size=(2, 3, 3, 4))
    m = (rng.random((1, 3, 3)) < 0.5).astype(float)
    m[0, 0, 0] = 1
    w, _ = pooling_matrix(m, 2)
    F = flatten_tokens(f)
    perm = rng.permutation(F.shape[0])
    npt.assert_allclose(w[:, perm] @ F[perm], w @ F, rtol=1e-14)


# -- cross-attention ------------------------------------------------------------

def test_cross_attention_single_token(rng):
    block = CrossAttentionBlock.init(rng, 8, 2)
    F = rng.normal(size=(1, 8))
    A, cache = cross_attention(rng.normal(size=(3, 8)), F, block)
    assert np.all(cache["probs"] == 1.0)
    npt.assert_allclose(A, np.tile(F @ block.wv.value @ block.wo.value, (3, 1)), rtol=1e-13)


def test_cross_attention_constant_keys(rng):
    block = CrossAttentionBlock.init(rng, 8, 4)
    F = np.tile(rng.normal(size=(1, 8)), (6, 1))
    A, cache = cross_attention(rng.normal(size=(2, 8)), F, block)
    npt.assert_allclose(cache["probs"], 1 / 6, rtol=0, atol=1e-15)
    ref = (F @ block.wv.value).mean(axis=0) @ block.wo.value
    npt.assert_allclose(A, np.tile(ref, (2, 1)), rtol=0, atol=1e-9)


def test_cross_attention_errors(rng):
    with pytest.raises(ConfigurationError):
        CrossAttentionBlock.init(rng, 9, 2)
    block = CrossAttentionBlock.init(rng, 8, 2)
    with pytest.raises(DimensionError):
        cross_attention(rng.normal(size=(2, 8)), rng.normal(size=(4, 6)), block)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 4]))
def test_cross_attention_rows_sum_to_one(seed, heads):
    rng = np.random.default_rng(seed)
    block = CrossAttentionBlock.init(rng, 8, heads)
    _, cache = cross_attention(rng.normal(scale=4, size=(3, 8)), rng.normal(scale=4, size=(10, 8)), block)
    npt.assert_allclose(cache["probs"].sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_cross_attention_gradient(rng):
    block = CrossAttentionBlock.init(rng, 8, 2)
    Q, F = wrap(rng.normal(size=(2, 8))), wrap(rng.normal(size=(9, 8)))
    g = rng.normal(size=(2, 8))
    _, cache = cross_attention(Q.value, F.value, block)
    Q.grad, F.grad = cross_attention_backward(g, cache, block)
    params = {"Q": Q, "F": F, "wq": block.wq, "wk": block.wk, "wv": block.wv, "wo": block.wo}
    check_grads(lambda: float((cross_attention(Q.value, F.value, block)[0] * g).sum()), params, 1e-4)


# -- classifier and full model ------------------------------------------------------

def test_classifier_zero_weights_uniform(rng):
    layers = [Dense.init(rng, 8 + 4, 6), Dense.init(rng, 6, 5)]
    layers[-1].w.value[...] = 0.0
    probs, _, _ = fuse_and_classify(rng.normal(size=(1, 8)), rng.normal(size=(2, 1, 1, 4)), None,
                                    ClassifierHead(layers))
    npt.assert_allclose(probs, 0.2, rtol=0, atol=1e-15)


def tiny_batch(cfg, n=3, seed=0):
    return generate_synthetic(cfg, samples_per_class=1, seed=seed)[:n]


def test_forward_shapes_and_sums():
    model = FusionModel(TINY, seed=1)
    s = tiny_batch(TINY)[0]
    r = model.forward(s.pose, s.features, s.masks)
    assert r.probs.shape == (3,) and abs(r.probs.sum() - 1) < 1e-12
    assert r.pose.predicted_pose.shape == (5, 3)
    assert r.attention.weights.shape == (4,) and abs(r.attention.weights.sum() - 1) < 1e-12
    assert r.cross_attention.shape == (2, 2, 36)
    with pytest.raises(DimensionError):
        model.forward(s.pose[:4], s.features, s.masks)


@pytest.mark.parametrize("switch", ["use_pose_attention", "use_object_context", "use_pose_features"])
def test_ablation_switches(switch):
    cfg = TINY.with_(**{switch: False})
    model = FusionModel(cfg, seed=2)
    s = tiny_batch(cfg)[0]
    r = model.forward(s.pose, s.features, s.masks)
    assert abs(r.probs.sum() - 1) < 1e-12
    if switch == "use_pose_attention":
        npt.assert_array_equal(r.attention.weights, 0.25)
    if switch == "use_object_context":
        assert r.cross_attention.size == 0
    assert model.head.layers[0].w.value.shape[0] == cfg.embedding_dim
    batch = tiny_batch(cfg)
    model.zero_grad()
    batch_loss_and_grad(model, batch, LossConfig(), dropout=0.0)
    params = model.parameters()
    check_grads(lambda: batch_loss_and_grad(model, batch, LossConfig(), dropout=0.0,
                                            compute_grad=False)[0], params, 1e-4)


def test_end_to_end_gradient():
    model = FusionModel(TINY, seed=3)
    batch = tiny_batch(TINY)
    model.zero_grad()
    batch_loss_and_grad(model, batch, LossConfig(), dropout=0.0)
    check_grads(lambda: batch_loss_and_grad(model, batch, LossConfig(), dropout=0.0,
                                            compute_grad=False)[0], model.parameters(), 1e-4)


def test_state_round_trip():
    a, b = FusionModel(TINY, seed=0), FusionModel(TINY, seed=1)
    b.load_state(a.state())
    s = tiny_batch(TINY)[0]
    npt.assert_array_equal(a.predict(s.pose, s.features, s.masks), b.predict(s.pose, s.features, s.masks))
