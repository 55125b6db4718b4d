import numpy as np
import pytest

from textpose.gradcheck import grad_check
from textpose.refiner import (
    cross_attention, gate_scores, init_refiner_params, mean_rows,
    refine_joints,
)
from textpose.tensor import Tensor, sum_all


def np_softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ref_cross_attention(q_in, kv_in, p):
    q, k, v = q_in @ p["wq"], kv_in @ p["wk"], kv_in @ p["wv"]
    w = np_softmax_rows(q @ k.T / np.sqrt(q_in.shape[1]))
    return (w @ v) @ p["wo"]


def ref_mlp(x, p):
    return np.maximum(x @ p["w1"] + p["b1"], 0.0) @ p["w2"] + p["b2"]


def _attn(dim, seed):
    rng = np.random.default_rng(seed)
    return {k: rng.standard_normal((dim, dim)) / np.sqrt(dim)
            for k in ("wq", "wk", "wv", "wo")}


def as_tensors(arrs):
    return {k: Tensor(v) for k, v in arrs.items()}


# --- cross attention ------------------------------------------------------

def test_single_key_weight_exactly_one():
    p = _attn(8, 0)
    rng = np.random.default_rng(1)
    q = rng.standard_normal((5, 8))
    kv = rng.standard_normal((1, 8))
    out, w = cross_attention(Tensor(q), Tensor(kv), as_tensors(p), return_weights=True)
    assert w.shape == (5, 1)
    assert np.all(w.data == 1.0)
    # with one key the pre-projection context is the same for every joint
    ctx = kv @ p["wv"] @ p["wo"]
    assert np.allclose(out.data, np.broadcast_to(ctx, out.shape), atol=1e-12)


def test_identity_wiring_returns_kv_row():
    eye = {k: Tensor(np.eye(3)) for k in ("wq", "wk", "wv", "wo")}
    kv = np.array([[0.3, -1.2, 2.0]])
    q = np.array([[5.0, 5.0, 5.0]])
    out = cross_attention(Tensor(q), Tensor(kv), eye)
    assert np.array_equal(out.data, kv)


def test_cross_attention_matches_reference_N3_M4():
    p = _attn(6, 2)
    rng = np.random.default_rng(3)
    q, kv = rng.standard_normal((3, 6)), rng.standard_normal((4, 6))
    got = cross_attention(Tensor(q), Tensor(kv), as_tensors(p))
    assert np.allclose(got.data, ref_cross_attention(q, kv, p), atol=1e-12)


def test_cross_attention_matches_explicit_loop():
    dim = 4
    p = _attn(dim, 5)
    rng = np.random.default_rng(6)
    q_in, kv_in = rng.standard_normal((2, dim)), rng.standard_normal((3, dim))
    q, k, v = q_in @ p["wq"], kv_in @ p["wk"], kv_in @ p["wv"]
    want = np.zeros((2, dim))
    for i in range(2):
        scores = np.array([q[i] @ k[j] / np.sqrt(dim) for j in range(3)])
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        want[i] = sum(w[j] * v[j] for j in range(3)) @ p["wo"]
    got = cross_attention(Tensor(q_in), Tensor(kv_in), as_tensors(p))
    assert np.allclose(got.data, want, atol=1e-12)


def test_cross_attention_width_mismatch():
    with pytest.raises(ValueError):
        cross_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 6))),
                        {k: Tensor(np.eye(4)) for k in ("wq", "wk", "wv", "wo")})


# --- gates ----------------------------------------------------------------

def test_gate_zero_params_gives_half():
    p = {"w": Tensor(np.zeros((6, 1))), "b": Tensor(np.zeros((1, 1)))}
    scores = gate_scores(Tensor(np.random.default_rng(0).standard_normal((4, 6))), p)
    assert scores.shape == (4, 1)
    assert np.all(scores.data == 0.5)


def test_gate_saturates_with_large_bias():
    p = {"w": Tensor(np.zeros((3, 1))), "b": Tensor(np.full((1, 1), 20.0))}
    scores = gate_scores(Tensor(np.zeros((2, 3))), p)
    assert np.all(scores.data > 1.0 - 1e-8)
    assert np.all(scores.data < 1.0)  # strictly inside (0,1)


def test_gate_matches_hand_formula():
    rng = np.random.default_rng(8)
    e = rng.standard_normal((5, 4))
    w = rng.standard_normal((4, 1))
    b = rng.standard_normal((1, 1))
    got = gate_scores(Tensor(e), {"w": Tensor(w), "b": Tensor(b)})
    want = 1.0 / (1.0 + np.exp(-(e @ w + b)))
    assert np.allclose(got.data, want, atol=1e-12)
    assert np.all((got.data > 0.0) & (got.data < 1.0))


# --- full refiner ---------------------------------------------------------

def _inputs(n=3, m=4, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((n, dim)), rng.standard_normal((m, dim)),
            rng.standard_normal((1, dim)))


def test_identity_at_initialization_bitwise():
    joints, img, cls = _inputs(seed=11)
    params = as_tensors(init_refiner_params(8, 16, np.random.default_rng(12)))
    out = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), params)
    assert np.max(np.abs(out.data - joints)) == 0.0
    assert np.array_equal(out.data, joints)


def test_gates_forced_to_zero_reduce_fusion_input_to_joints():
    joints, img, cls = _inputs(seed=13)
    params = as_tensors(init_refiner_params(8, 16, np.random.default_rng(14)))
    trace = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), params,
                          gate_override=(0.0, 0.0), return_trace=True)
    assert np.array_equal(trace.fusion_input.data, joints)


def test_gates_strictly_in_unit_interval():
    joints, img, cls = _inputs(seed=15)
    params = as_tensors(init_refiner_params(8, 16, np.random.default_rng(16)))
    trace = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), params,
                          return_trace=True)
    for g in (trace.alpha, trace.beta):
        assert g.shape == (3, 1)
        assert np.all((g.data > 0.0) & (g.data < 1.0))


def _trained_like_params(dim, hidden, seed):
    # overwrite the zero-init fusion layer so the block actually does something
    arrs = init_refiner_params(dim, hidden, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    arrs["fuse.w2"] = rng.standard_normal(arrs["fuse.w2"].shape) / np.sqrt(hidden)
    arrs["fuse.b2"] = rng.standard_normal(arrs["fuse.b2"].shape) * 0.1
    return arrs


def test_refiner_matches_step_by_step_reference():
    dim, hidden = 6, 12
    joints, img, cls = _inputs(n=3, m=4, dim=dim, seed=17)
    arrs = _trained_like_params(dim, hidden, 18)

    def sub(prefix):
        return {k[len(prefix) + 1:]: v for k, v in arrs.items()
                if k.startswith(prefix + ".")}

    img_stream = ref_mlp(ref_cross_attention(joints, img, sub("img.attn")), sub("img.mlp"))
    cls_stream = ref_mlp(ref_cross_attention(joints, cls, sub("cls.attn")), sub("cls.mlp"))
    alpha = 1.0 / (1.0 + np.exp(-(img_stream @ arrs["gate.img.w"] + arrs["gate.img.b"])))
    beta = 1.0 / (1.0 + np.exp(-(cls_stream @ arrs["gate.cls.w"] + arrs["gate.cls.b"])))
    fused_in = alpha * img_stream + beta * cls_stream + joints
    want = joints + ref_mlp(fused_in, sub("fuse"))

    got = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), as_tensors(arrs))
    assert np.allclose(got.data, want, atol=1e-12)


def test_fixed_gates_differ_from_learnable_on_random_inputs():
    dim, hidden = 6, 12
    joints, img, cls = _inputs(n=3, m=4, dim=dim, seed=19)
    arrs = _trained_like_params(dim, hidden, 20)
    tens = as_tensors(arrs)
    gated = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), tens)
    fixed = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), tens,
                          learnable_gates=False)
    assert not np.allclose(gated.data, fixed.data)
    # fixed gates equal the gate_override=(1,1) path exactly
    ones = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), tens,
                         gate_override=(1.0, 1.0))
    assert np.array_equal(fixed.data, ones.data)


def test_outer_residual_flag():
    dim, hidden = 6, 12
    joints, img, cls = _inputs(n=2, m=3, dim=dim, seed=21)
    arrs = _trained_like_params(dim, hidden, 22)
    tens = as_tensors(arrs)
    with_res = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), tens)
    without = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), tens,
                            outer_residual=False)
    assert np.allclose(with_res.data - without.data, joints, atol=1e-12)


def test_bypass_matches_hand_formula():
    dim = 5
    joints, img, cls = _inputs(n=3, m=4, dim=dim, seed=23)
    arrs = init_refiner_params(dim, 10, np.random.default_rng(24), enabled=False)
    assert set(arrs) == {"bypass.img.w", "bypass.img.b", "bypass.cls.w", "bypass.cls.b"}
    got = refine_joints(Tensor(joints), Tensor(img), Tensor(cls),
                        as_tensors(arrs), enabled=False)
    pooled = img.mean(axis=0, keepdims=True)
    want = (joints
            + np.maximum(pooled @ arrs["bypass.img.w"] + arrs["bypass.img.b"], 0.0)
            + np.maximum(cls @ arrs["bypass.cls.w"] + arrs["bypass.cls.b"], 0.0))
    assert np.allclose(got.data, want, atol=1e-12)


def test_joint_permutation_equivariance():
    dim, hidden = 6, 12
    joints, img, cls = _inputs(n=4, m=3, dim=dim, seed=25)
    arrs = _trained_like_params(dim, hidden, 26)
    tens = as_tensors(arrs)
    perm = [3, 1, 0, 2]
    base = refine_joints(Tensor(joints), Tensor(img), Tensor(cls), tens)
    permed = refine_joints(Tensor(joints[perm]), Tensor(img), Tensor(cls), tens)
    assert np.allclose(permed.data, base.data[perm], atol=1e-12)


def test_mean_rows_matches_numpy():
    x = np.random.default_rng(27).standard_normal((5, 3))
    assert np.allclose(mean_rows(Tensor(x)).data, x.mean(axis=0, keepdims=True),
                       atol=1e-15)


def test_refiner_gradcheck_small():
    dim, hidden, n, m = 4, 6, 2, 3
    rng = np.random.default_rng(99)
    joints = rng.standard_normal((n, dim)) * 0.5
    img = rng.standard_normal((m, dim)) * 0.5
    cls = rng.standard_normal((1, dim)) * 0.5
    arrs = _trained_like_params(dim, hidden, 100)

    def fn(params):
        return sum_all(refine_joints(Tensor(joints), Tensor(img), Tensor(cls), params))

    report = grad_check(fn, arrs)
    assert report.ok, str(report)


def test_bypass_gradcheck_small():
    dim, n, m = 3, 2, 4
    rng = np.random.default_rng(101)
    joints = rng.standard_normal((n, dim)) * 0.5
    img = rng.standard_normal((m, dim)) * 0.5
    cls = rng.standard_normal((1, dim)) * 0.5
    arrs = init_refiner_params(dim, 6, rng, enabled=False)
    # keep ReLU inputs away from 0 so central differences stay two-sided
    arrs = {k: v + 0.05 * np.sign(v) if k.endswith(".w") else v for k, v in arrs.items()}

    def fn(params):
        return sum_all(refine_joints(Tensor(joints), Tensor(img), Tensor(cls),
                                     params, enabled=False))

    report = grad_check(fn, arrs)
    assert report.ok, str(report)
