import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affectseq import affect_head as head
from affectseq import autodiff as ad
from affectseq import metrics
from affectseq.affect_space import expected_aus, au_index, expression_index, relatedness_matrix
from affectseq.data import FrameRecipe, frame_batch, gen_frame_dataset
from affectseq.optim import adam_init

CFG = head.HeadConfig(d_in=8, width=8, n_blocks=2)


def zero_params(config):
    return {name: np.zeros(shape) for name, shape in config.param_shapes().items()}


def test_forward_zero_params_hits_activation_fixed_points():
    out = head.head_forward(np.zeros(8), zero_params(CFG), CFG)
    np.testing.assert_array_equal(out.va, [0.0, 0.0])
    np.testing.assert_allclose(out.expr, np.full(7, 1 / 7))
    np.testing.assert_array_equal(out.au, np.full(17, 0.5))
    out.validate()


def test_forward_output_satisfies_invariants():
    rng = np.random.default_rng(0)
    params = head.init_head_params(CFG, seed=1)
    out = head.head_forward(rng.normal(size=(32, 8)), params, CFG)
    out.validate()
    assert np.all(np.abs(out.expr.sum(axis=1) - 1.0) < 1e-9)
    assert out.concat().shape == (32, 26)


def test_graph_forward_matches_numeric():
    rng = np.random.default_rng(7)
    params = head.init_head_params(CFG, seed=2)
    feats = rng.normal(size=(5, 8))
    numeric = head.head_forward(feats, params, CFG)
    out_nodes, _ = head.head_nodes(CFG, ad.constant(feats))
    g = ad.Graph(ad.reduce_sum(ad.concat([out_nodes.va, out_nodes.expr, out_nodes.au], axis=1)))
    g.evaluate(params)
    np.testing.assert_allclose(g.cached_value(out_nodes.va), numeric.va, atol=1e-14)
    np.testing.assert_allclose(g.cached_value(out_nodes.expr), numeric.expr, atol=1e-14)
    np.testing.assert_allclose(g.cached_value(out_nodes.au), numeric.au, atol=1e-14)


# ---------------------------------------------------------------------------
# loss values


def test_concordance_identity_and_shift():
    assert head.concordance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)
    assert head.concordance([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]) == pytest.approx(4 / 7)
    assert head.concordance([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]) == 0.0


def test_concordance_agrees_with_metrics_route():
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = rng.normal(size=20)
        y = 0.6 * x + rng.normal(size=20)
        assert head.concordance(x, y) == pytest.approx(metrics.ccc(x, y), abs=1e-12)


def test_va_loss_perfect_predictions():
    rng = np.random.default_rng(1)
    labels = rng.uniform(-1, 1, size=(10, 2))
    assert head.va_concordance_loss(labels, labels) == pytest.approx(0.0, abs=1e-12)


def test_va_loss_constant_predictions():
    rng = np.random.default_rng(2)
    labels = rng.uniform(-1, 1, size=(10, 2))
    preds = np.full((10, 2), 0.3)
    assert head.va_concordance_loss(preds, labels) == pytest.approx(1.0, abs=1e-9)


def test_va_loss_half_perfect():
    rng = np.random.default_rng(3)
    valence = rng.uniform(-1, 1, size=10)
    labels = np.stack([valence, rng.uniform(-1, 1, size=10)], axis=1)
    preds = labels.copy()
    preds[:, 1] = 0.1  # arousal constant -> its concordance is ~0
    assert head.va_concordance_loss(preds, labels) == pytest.approx(0.5, abs=1e-9)


def test_expression_loss_values():
    perfect = np.zeros((3, 7))
    perfect[:, 2] = 1.0
    assert head.expression_loss(perfect, [2, 2, 2]) == pytest.approx(0.0, abs=1e-9)
    uniform = np.full((4, 7), 1 / 7)
    assert head.expression_loss(uniform, [0, 3, 5, 6]) == pytest.approx(math.log(7))
    floor = np.full((1, 7), 1e-12)
    assert head.expression_loss(floor, [4]) == pytest.approx(-math.log(1e-12), rel=1e-6)


def test_au_loss_values():
    y = np.array([[1.0, 0.0, 1.0]])
    p_exact = y.copy()
    assert head.au_detection_loss(p_exact, y) == pytest.approx(0.0, abs=1e-9)
    p_half = np.full((2, 4), 0.5)
    y_any = np.array([[1, 0, 1, 0], [0, 1, 1, 0]], dtype=float)
    assert head.au_detection_loss(p_half, y_any) == pytest.approx(math.log(2))
    assert head.au_detection_loss(np.array([[0.25]]), np.array([[1.0]])) == pytest.approx(math.log(4))


def test_coupling_loss_values():
    target = np.zeros(17)
    target[au_index(12)] = 1.0
    p = np.full(17, 0.9)
    p[au_index(12)] = 1.0 - 1e-12
    assert head.coupling_loss(p, target) == pytest.approx(0.0, abs=1e-9)
    p[au_index(12)] = 0.5
    assert head.coupling_loss(p, target) == pytest.approx(math.log(2))
    assert head.coupling_loss(np.full(17, 0.2), np.zeros(17)) == 0.0


def test_coupling_loss_batch_is_mean_of_rows():
    rng = np.random.default_rng(4)
    p = rng.uniform(0.05, 0.95, size=(6, 17))
    t = rng.uniform(0.0, 1.0, size=(6, 17))
    rows = [head.coupling_loss(p[i], t[i]) for i in range(6)]
    assert head.coupling_loss(p, t) == pytest.approx(np.mean(rows), abs=1e-12)


def test_coupling_loss_matches_scalar_loop():
    rng = np.random.default_rng(5)
    p = rng.uniform(0.01, 0.99, size=17)
    t = rng.uniform(0.0, 1.0, size=17)
    loop = -sum(t[i] * math.log(max(p[i], 1e-12)) for i in range(17))
    assert head.coupling_loss(p, t) == pytest.approx(loop, abs=1e-12)


def test_two_term_coupling_adds_complement():
    rng = np.random.default_rng(6)
    p = rng.uniform(0.01, 0.99, size=17)
    t = rng.uniform(0.0, 1.0, size=17)
    one = head.coupling_loss(p, t)
    two = head.coupling_loss(p, t, two_term=True)
    comp = -sum((1 - t[i]) * math.log(max(1 - p[i], 1e-12)) for i in range(17))
    assert two == pytest.approx(one + comp, abs=1e-10)


def test_conflict_penalty_exceeds_consistent_activation():
    # predicted happiness but sadness-only AUs active: the coupling loss
    # must punish that harder than activating the happiness AU set
    target = expected_aus(np.eye(7)[expression_index("happiness")])
    conflict = np.zeros(17)
    conflict[au_index(11)] = 1.0
    conflict[au_index(15)] = 1.0
    consistent = target.copy()
    assert head.coupling_loss(conflict, target) > head.coupling_loss(consistent, target)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_coupling_decreases_toward_target_from_below(seed, steps):
    rng = np.random.default_rng(seed)
    target = relatedness_matrix()[int(rng.integers(0, 6))]  # binary row
    p0 = rng.uniform(0.05, 0.5, size=17)
    support = target > 0
    values = []
    for alpha in np.linspace(0.0, 0.95, steps + 2):
        p = p0.copy()
        p[support] = p0[support] + alpha * (target[support] - p0[support])
        values.append(head.coupling_loss(p, target))
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# batched multi-task loss


def make_batch(n=12, seed=9, mix=(("va", 0.25), ("expr", 0.25), ("au", 0.25), ("all", 0.25))):
    samples, _ = gen_frame_dataset(seed, n, FrameRecipe(d_in=8, label_mix=mix))
    return frame_batch(samples)


def test_head_loss_total_is_sum_of_terms():
    batch = make_batch()
    params = head.init_head_params(CFG, seed=3)
    result = head.head_loss(batch, params, CFG)
    assert result.total == pytest.approx(sum(result.terms.values()), abs=1e-12)


def test_head_loss_terms_match_standalone_surfaces():
    batch = make_batch(n=16, seed=10)
    params = head.init_head_params(CFG, seed=4)
    out = head.head_forward(batch.features, params, CFG)
    result = head.head_loss(batch, params, CFG)

    va_rows = batch.va_mask
    expect_ccc = head.va_concordance_loss(out.va[va_rows], batch.va[va_rows])
    expr_rows = batch.expr_mask
    expect_cce = head.expression_loss(out.expr[expr_rows], batch.expr[expr_rows])
    au_rows = batch.au_mask
    expect_bce = head.au_detection_loss(out.au[au_rows], batch.au[au_rows])
    expect_coupling = head.coupling_loss(out.au, expected_aus(out.expr))

    assert result.terms["ccc"] == pytest.approx(expect_ccc, abs=1e-12)
    assert result.terms["cce"] == pytest.approx(expect_cce, abs=1e-12)
    assert result.terms["bce"] == pytest.approx(expect_bce, abs=1e-12)
    assert result.terms["coupling"] == pytest.approx(expect_coupling, abs=1e-12)


def test_head_loss_flags_absent_terms():
    batch = make_batch(n=10, seed=11, mix=(("au", 1.0),))
    params = head.init_head_params(CFG, seed=5)
    result = head.head_loss(batch, params, CFG)
    assert set(result.absent) == {"ccc", "cce"}
    assert result.terms["ccc"] == 0.0
    assert result.terms["cce"] == 0.0
    assert result.total == pytest.approx(result.terms["bce"] + result.terms["coupling"], abs=1e-12)


def test_head_loss_single_va_label_is_skipped():
    batch = make_batch(n=10, seed=12, mix=(("au", 1.0),))
    batch.va_mask[3] = True  # one labeled sample is not enough for moments
    params = head.init_head_params(CFG, seed=6)
    result = head.head_loss(batch, params, CFG)
    assert "ccc" in result.absent


def test_all_loss_terms_pass_grad_check():
    batch = make_batch(n=10, seed=13)
    graph, term_nodes, _ = head.head_loss_graph(CFG, batch)
    params = head.init_head_params(CFG, seed=7)
    report = ad.grad_check(graph, params, epsilon=1e-6, n_coords=120, seed=0)
    assert report.max_rel_error < 1e-4, report.per_param_max()
    # each term alone must also check out
    for name, node in term_nodes.items():
        g = ad.Graph(node, extra_params=[ad.param(n, s) for n, s in CFG.param_shapes().items()])
        r = ad.grad_check(g, params, epsilon=1e-6, n_coords=60, seed=1)
        assert r.max_rel_error < 1e-4, (name, r.per_param_max())


# ---------------------------------------------------------------------------
# training steps


def test_train_step_zero_lr_keeps_params():
    batch = make_batch()
    params = head.init_head_params(CFG, seed=8)
    state = adam_init(params)
    new_params, _, _ = head.head_train_step(batch, params, state, 0.0, CFG)
    for name in params:
        np.testing.assert_array_equal(new_params[name], params[name])


def test_train_step_deterministic():
    batch = make_batch()
    params = head.init_head_params(CFG, seed=9)
    outs = []
    for _ in range(2):
        state = adam_init(params)
        p, _, loss = head.head_train_step(batch, params, state, 1e-3, CFG)
        outs.append((p, loss.total))
    assert outs[0][1] == outs[1][1]
    for name in params:
        np.testing.assert_array_equal(outs[0][0][name], outs[1][0][name])


def test_training_halves_loss_on_fully_labeled_set():
    samples, _ = gen_frame_dataset(21, 64, FrameRecipe(d_in=16, noise=0.05))
    batch = frame_batch(samples)
    config = head.HeadConfig(d_in=16, width=16, n_blocks=2)
    params = head.init_head_params(config, seed=0)
    state = adam_init(params)
    first = None
    for _ in range(500):
        params, state, loss = head.head_train_step(batch, params, state, 3e-3, config)
        if first is None:
            first = loss.total
    assert loss.total <= 0.5 * first, (first, loss.total)


def test_golden_forward_seed42():
    import json
    from pathlib import Path

    blob = json.loads((Path(__file__).parent / "golden" / "forward_goldens.json").read_text())
    g = blob["head_forward_seed42"]
    config = head.HeadConfig(**g["config"])
    params = head.init_head_params(config, seed=42)
    feats = np.random.default_rng(42).normal(size=config.d_in)
    out = head.head_forward(feats, params, config)
    np.testing.assert_array_equal(out.va, g["va"])
    np.testing.assert_array_equal(out.expr, g["expr"])
    np.testing.assert_array_equal(out.au, g["au"])
