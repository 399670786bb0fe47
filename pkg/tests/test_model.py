import numpy as np
import pytest

from tcdfern import autodiff as ad
from tcdfern import model as M
from tcdfern.autodiff import Tensor
from tcdfern.das import DasSample, FusedMoving, ReferenceSpatial, SpatialWindow
from tcdfern.errors import ConfigError, StructuralError

TABLE_DIMS = {
    "cnn_input": (224, 1),
    "conv1": (222, 64),
    "conv2": (220, 32),
    "flatten": (7040,),
    "cond_dense": (64,),
    "cond_duplicate": (50, 64),
    "static_concat": (50, 288),
    "mov_dense": (1,),
    "mov_duplicate": (50, 1),
    "moving_concat": (50, 2),
    "static_gru1": (50, 32),
    "static_gru2": (50, 32),
    "moving_gru1": (50, 32),
    "moving_gru2": (1, 32),
    "attn_dense1": (50, 3),
    "attn_dense2": (50, 1),
    "attn_flatten": (50,),
    "attn_softmax": (50,),
    "attn_context": (1, 32),
    "head_concat": (1, 64),
    "head_flatten": (64,),
    "head_dense": (32,),
    "head_out": (4,),
}


def zero_params(cfg, seed=0):
    p = M.init_params(cfg, np.random.default_rng(seed))
    for _, t in p.named_parameters():
        t.data = np.zeros_like(t.data)
    return p


def random_sample(cfg, rng, label=None):
    flat = rng.uniform(size=(cfg.tau, cfg.input_dim))
    deltas = rng.uniform(-0.01, 0.01, size=cfg.tau)
    return DasSample(
        spatial=SpatialWindow(flat),
        fused=FusedMoving(deltas),
        static=flat[-1],
        label=label,
    )


def test_default_shape_audit_matches_dimension_table():
    shapes = M.audit_shapes(M.ModelConfig())
    for key, want in TABLE_DIMS.items():
        assert shapes[key] == want, f"{key}: {shapes[key]} != {want}"


def test_parameter_count_near_reported_total():
    p = M.init_params(M.ModelConfig(), np.random.default_rng(0))
    assert abs(p.parameter_count() - 506_988) / 506_988 < 0.02


def test_variant_construction_and_structure():
    rng = np.random.default_rng(1)
    fern = M.init_params(M.ModelConfig(variant="FERN"), rng)
    assert fern.attn_w1 is None and fern.conv1_w is None and not fern.moving_gru
    dfern = M.init_params(M.ModelConfig(variant="D-FERN"), rng)
    assert dfern.moving_gru and dfern.attn_w1 is None and dfern.conv1_w is None
    tfern = M.init_params(M.ModelConfig(variant="T-FERN"), rng)
    assert tfern.attn_w1 is not None and tfern.conv1_w is None
    cfern = M.init_params(M.ModelConfig(variant="C-FERN"), rng)
    assert cfern.conv1_w is not None and cfern.attn_w1 is None and not cfern.moving_gru
    with pytest.raises(ConfigError):
        M.ModelConfig(variant="X-FERN")


def test_gru_zero_weights_hand_derived():
    # with all weights and biases zero: beta = sigmoid(0) = 0.5, candidate = 0,
    # state stays 0, and each step's output is sigmoid(0) = 0.5
    cfg = M.tiny_config()
    p = zero_params(cfg)
    seq = Tensor(np.random.default_rng(2).uniform(size=(2, cfg.tau, cfg.static_in)))
    outs, seq_out, last = M.conditional_gru_forward(seq, None, p.static_gru)
    np.testing.assert_array_equal(last.data, 0.0)
    for g in outs:
        np.testing.assert_array_equal(g.data, 0.5)


def test_gru_empty_condition_equals_unconditional():
    cfg = M.tiny_config()
    rng = np.random.default_rng(3)
    p = M.init_params(cfg, rng)
    seq = Tensor(rng.uniform(size=(2, cfg.tau, cfg.static_in)))
    cond = Tensor(np.zeros((2, 0)))
    a = M.conditional_gru_forward(seq, None, p.static_gru)[1]
    b = M.conditional_gru_forward(seq, cond, p.static_gru)[1]
    np.testing.assert_array_equal(a.data, b.data)


def test_gru_state_bounded():
    cfg = M.tiny_config()
    rng = np.random.default_rng(4)
    p = M.init_params(cfg, rng)
    for _, t in p.named_parameters():
        t.data = rng.normal(scale=3.0, size=t.data.shape)  # stress the bound
    seq = Tensor(rng.normal(size=(4, cfg.tau, cfg.static_in)))
    for layer in range(2):
        _, _, last = M.conditional_gru_forward(seq, None, p.static_gru[: layer + 1])
        assert (np.abs(last.data) < 1.0).all()


def test_condition_examples():
    zero = M.condition(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 4))))
    np.testing.assert_array_equal(zero.data, 0.0)
    c = M.condition(Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[0.5, 0.5]])))
    np.testing.assert_allclose(c.data, [[0.5, 1.5]])


def test_spatial_feature_shared_weights_on_reference():
    cfg = M.ModelConfig(dropout=0.0)
    rng = np.random.default_rng(5)
    p = M.init_params(cfg, rng)
    x = Tensor(rng.uniform(size=(1, cfg.input_dim)))
    c1 = M.spatial_domain_feature(x, p, train=False)
    c0 = M.spatial_domain_feature(Tensor(x.data.copy()), p, train=False)
    np.testing.assert_array_equal(c1.data, c0.data)
    assert c1.shape == (1, 64)


def test_spatial_feature_zero_weights_zero_output():
    cfg = M.ModelConfig(dropout=0.0)
    p = zero_params(cfg)
    out = M.spatial_domain_feature(Tensor(np.zeros((1, cfg.input_dim))), p, train=False)
    np.testing.assert_array_equal(out.data, 0.0)


def test_conditional_loss_examples():
    # y=0 with c1 == c0 -> 0
    c = Tensor(np.ones((1, 4)))
    assert M.conditional_loss(c, c, np.array([0]), margin=1.0).item() == 0.0
    # y=2, margin=1, nu=3 -> max(2-3, 0)^2 = 0
    c1 = Tensor(np.array([[3.0, 0.0, 0.0, 0.0]]))
    c0 = Tensor(np.zeros((1, 4)))
    assert M.conditional_loss(c1, c0, np.array([2]), margin=1.0).item() == 0.0
    # y=1, margin=1, nu=0.4 -> (1-0.4)^2 = 0.36
    c1 = Tensor(np.array([[0.4, 0.0, 0.0, 0.0]]))
    got = M.conditional_loss(c1, c0, np.array([1]), margin=1.0).item()
    assert abs(got - 0.36) < 1e-12


def test_total_loss_examples():
    onehot = np.array([[0.0, 1.0, 0.0, 0.0]])
    exact = Tensor(onehot.copy())
    assert M.total_loss(exact, onehot, 0.0, 0.5).item() < 1e-10
    uniform = Tensor(np.full((1, 4), 0.25))
    assert abs(M.total_loss(uniform, onehot, 0.0, 0.0).item() - np.log(4)) < 1e-12
    # lambda = 0 ignores the conditional term
    assert abs(
        M.total_loss(uniform, onehot, Tensor(123.0), 0.0).item() - np.log(4)
    ) < 1e-12
    # lambda scales it linearly
    assert abs(
        M.total_loss(uniform, onehot, Tensor(2.0), 0.5).item() - (np.log(4) + 1.0)
    ) < 1e-12


def test_time_selection_identical_rows_uniform():
    cfg = M.ModelConfig()
    rng = np.random.default_rng(6)
    p = M.init_params(cfg, rng)
    row = rng.uniform(size=32)
    g_seq = Tensor(np.tile(row, (1, cfg.tau, 1)))
    context, weights = M.time_selection(g_seq, p)
    np.testing.assert_allclose(weights.data[0], 1.0 / cfg.tau, atol=1e-12)
    assert abs(weights.data.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(context.data[0], row, atol=1e-12)
    assert context.shape == (1, 32) and weights.shape == (1, 50)


def test_feature_mapping_simplex_and_uniform_at_zero():
    cfg = M.ModelConfig()
    rng = np.random.default_rng(7)
    p = M.init_params(cfg, rng)
    feats = Tensor(rng.normal(size=(5, cfg.head_in)))
    _, probs = M.feature_mapping(feats, p)
    assert probs.shape == (5, 4)
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-9)
    pz = zero_params(cfg)
    _, probs0 = M.feature_mapping(feats, pz)
    np.testing.assert_allclose(probs0.data, 0.25, atol=1e-15)


def test_forward_deterministic_and_condition_neutral():
    cfg = M.ModelConfig(dropout=0.0)
    rng = np.random.default_rng(8)
    p = M.init_params(cfg, rng)
    sample = random_sample(cfg, rng, label=1)
    b = ReferenceSpatial(sample.static.copy())
    t1 = M.forward(sample, b, p, train=False)
    t2 = M.forward(sample, b, p, train=False)
    np.testing.assert_array_equal(t1.probs, t2.probs)
    # dropout off and b == s_n means the condition is exactly zero
    np.testing.assert_array_equal(t1.c, np.zeros(cfg.cond_dim))
    assert abs(t1.time_weights.sum() - 1.0) < 1e-9
    assert abs(t1.probs.sum() - 1.0) < 1e-9


def test_forward_probs_simplex_all_variants():
    rng = np.random.default_rng(9)
    for variant in M.VARIANTS:
        cfg = M.ModelConfig(variant=variant, dropout=0.0)
        p = M.init_params(cfg, rng)
        sample = random_sample(cfg, rng)
        b = ReferenceSpatial(rng.uniform(size=cfg.input_dim)) if cfg.has_condition else None
        trace = M.forward(sample, b, p, train=False)
        assert trace.probs.shape == (4,)
        assert (trace.probs >= 0).all() and abs(trace.probs.sum() - 1.0) < 1e-9
        if cfg.has_condition:
            assert trace.c1 is not None
        else:
            assert trace.c1 is None


def test_forward_batch_shape_validation():
    cfg = M.ModelConfig()
    p = M.init_params(cfg, np.random.default_rng(0))
    with pytest.raises(StructuralError):
        M.forward_batch(p, np.zeros((1, 10, cfg.input_dim)), np.zeros((1, 10)),
                        np.zeros((1, cfg.input_dim)), np.zeros(cfg.input_dim))


def test_missing_reference_rejected():
    cfg = M.ModelConfig()
    p = M.init_params(cfg, np.random.default_rng(0))
    with pytest.raises(StructuralError):
        M.forward_batch(p, np.zeros((1, cfg.tau, cfg.input_dim)),
                        np.zeros((1, cfg.tau)), np.zeros((1, cfg.input_dim)), None)


def test_end_to_end_gradients_tiny_config():
    assert M.end_to_end_grad_check(seed=0) < 1e-3


def test_batch_norm_running_update():
    cfg = M.tiny_config()
    rng = np.random.default_rng(10)
    p = M.init_params(cfg, rng)
    x = Tensor(rng.normal(loc=2.0, size=(4, cfg.tau, cfg.static_in)))
    before = p.bn["static"].mean.copy()
    y, new = M.batch_norm_seq(x, p.bn["static"], train=True)
    assert not np.allclose(new.mean, before)
    np.testing.assert_allclose(y.data.mean(axis=(0, 1)), 0.0, atol=1e-9)
    y_eval, same = M.batch_norm_seq(x, p.bn["static"], train=False)
    assert same is p.bn["static"]


def test_copy_params_is_deep():
    cfg = M.ModelConfig()
    p = M.init_params(cfg, np.random.default_rng(11))
    p.reference = np.zeros(cfg.input_dim)
    q = M.copy_params(p)
    q.head_w1.data[0, 0] += 1.0
    q.bn["static"].mean[0] += 1.0
    q.reference[0] += 1.0
    assert p.head_w1.data[0, 0] != q.head_w1.data[0, 0]
    assert p.bn["static"].mean[0] != q.bn["static"].mean[0]
    assert p.reference[0] != q.reference[0]
