"""Bipartite graph construction, edge embeddings and message passing.

The one-edge oracle re-derives the layer arithmetic densely in plain
numpy, independent of the tensor library.
"""

import numpy as np
import pytest

from decaygraph import autodiff as ad
from decaygraph import graph as gr
from decaygraph.autodiff import Tensor
from decaygraph.data import Episode, SyntheticConfig, synthesize
from decaygraph.model import AblationFlags, DecayGraphClassifier, ModelConfig


def episode_from_mask(mask, values=None, times=None, label=0, pid="p"):
    mask = np.asarray(mask, dtype=np.float64)
    steps, v = mask.shape
    if values is None:
        values = np.where(mask > 0, 1.0, 0.0)
    if times is None:
        times = np.arange(1.0, steps + 1.0)
    delta = np.where(mask > 0, 1.0, 0.0)
    return Episode(pid, np.asarray(times, dtype=np.float64),
                   np.asarray(values, dtype=np.float64), mask, delta, label)


def tiny_params(d, v, seed=0, layers=1):
    cfg = ModelConfig(hidden_dim=d, codebook_size=4, n_layers=layers, seed=seed)
    model = DecayGraphClassifier(cfg, AblationFlags(), [f"v{i}" for i in range(v)])
    return model.params


# -- construction ------------------------------------------------------------

def test_zero_mask_zero_edges():
    ep = episode_from_mask(np.zeros((2, 3)))
    step = gr.build_graph_step([ep], 0, 3)
    assert step.n_edges == 0


def test_full_mask_edge_count():
    eps = [episode_from_mask(np.ones((1, 3)), pid="a"),
           episode_from_mask(np.ones((1, 3)), pid="b")]
    step = gr.build_graph_step(eps, 0, 3)
    assert step.n_edges == 6


def test_single_observation_edge():
    mask = np.zeros((1, 3))
    mask[0, 2] = 1
    step = gr.build_graph_step([episode_from_mask(mask)], 0, 3)
    assert list(step.patient_idx) == [0]
    assert list(step.variable_idx) == [2]


def test_edges_sorted_lexicographically():
    rng = np.random.default_rng(0)
    for _ in range(100):
        b, v = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        masks = [rng.integers(0, 2, (1, v)).astype(float) for _ in range(b)]
        eps = [episode_from_mask(m, pid=f"p{i}") for i, m in enumerate(masks)]
        step = gr.build_graph_step(eps, 0, v)
        pairs = list(zip(step.patient_idx, step.variable_idx))
        assert pairs == sorted(pairs)
        expected = {(p, n) for p, m in enumerate(masks)
                    for n in np.flatnonzero(m[0])}
        assert set(pairs) == expected


def test_short_episode_contributes_no_edges():
    long_ep = episode_from_mask(np.ones((3, 2)), pid="long")
    short_ep = episode_from_mask(np.ones((1, 2)), pid="short")
    step = gr.build_graph_step([long_ep, short_ep], 2, 2)
    assert set(step.patient_idx) == {0}


def test_non_finite_value_rejected():
    mask = np.ones((1, 2))
    values = np.array([[1.0, np.nan]])
    ep = episode_from_mask(mask, values=values)
    with pytest.raises(gr.GraphDataError, match=r"patient=0.*variable=1.*step=0"):
        gr.build_graph_step([ep], 0, 2)


# -- edge embeddings ------------------------------------------------------------

def test_zero_parameters_give_zero_embedding():
    params = tiny_params(d=4, v=2)
    for name in ("edge.value_w", "edge.value_b", "edge.time_freq",
                 "edge.time_phase", "edge.var_table"):
        params[name].data[:] = 0.0
    step = gr.build_graph_step([episode_from_mask(np.ones((1, 2)))], 0, 2)
    e = gr.init_edge_embeddings(step, params)
    np.testing.assert_array_equal(e.data, np.zeros((2, 4)))


def test_time_zero_zero_phase_kills_time_component():
    params = tiny_params(d=4, v=2)
    params["edge.time_phase"].data[:] = 0.0
    ep = episode_from_mask(np.ones((1, 2)), times=[0.0])
    step = gr.build_graph_step([ep], 0, 2)
    with_te = gr.init_edge_embeddings(step, params, use_time_embedding=True)
    without = gr.init_edge_embeddings(step, params, use_time_embedding=False)
    np.testing.assert_allclose(with_te.data, without.data, atol=1e-15)


def test_embedding_purity():
    params = tiny_params(d=4, v=3)
    mask = np.zeros((1, 3))
    mask[0, 1] = 1
    ep_a = episode_from_mask(mask, values=mask * 2.5, times=[3.0], pid="a")
    ep_b = episode_from_mask(mask, values=mask * 2.5, times=[3.0], pid="b")
    step = gr.build_graph_step([ep_a, ep_b], 0, 3)
    e = gr.init_edge_embeddings(step, params)
    np.testing.assert_array_equal(e.data[0], e.data[1])


# -- node init -------------------------------------------------------------------

def test_patient_init_constant_unit_norm():
    for d in (2, 8, 16):
        states = gr.init_patient_states(3, d)
        np.testing.assert_array_equal(states.data[0], states.data[1])
        assert np.linalg.norm(states.data[0]) == pytest.approx(1.0, rel=1e-12)


def test_variable_table_receives_gradient():
    params = tiny_params(d=4, v=2)
    table = params["node.var_table"]
    ep = episode_from_mask(np.ones((1, 2)))
    step = gr.build_graph_step([ep], 0, 2)
    e = gr.init_edge_embeddings(step, params)
    v_pat = gr.init_patient_states(1, 4)
    _, v_var, _ = gr.message_pass_layer(step, v_pat, table, e, params, 0)
    ad.zero_grad(params.values())
    ad.backward(ad.tensor_sum(v_var))
    assert table.grad is not None and np.any(table.grad != 0.0)


# -- message passing ----------------------------------------------------------------

def relu_np(x):
    return np.maximum(x, 0.0)


def test_one_edge_matches_dense_oracle():
    d = 4
    params = tiny_params(d=d, v=1, seed=7)
    mask = np.ones((1, 1))
    ep = episode_from_mask(mask, values=np.array([[1.7]]), times=[2.0])
    step = gr.build_graph_step([ep], 0, 1)
    e = gr.init_edge_embeddings(step, params)
    v_pat = gr.init_patient_states(1, d)
    v_var = params["node.var_table"]
    out_pat, out_var, out_e = gr.message_pass_layer(step, v_pat, v_var, e, params, 0)

    # dense re-derivation in plain numpy
    P = params
    vp = v_pat.data[0]
    vv = v_var.data[0]
    ee = e.data[0]
    m_to_pat = relu_np(np.concatenate([vv, ee]) @ P["sage0.msg_w"].data + P["sage0.msg_b"].data)
    m_to_var = relu_np(np.concatenate([vp, ee]) @ P["sage0.msg_w"].data + P["sage0.msg_b"].data)
    vp_new = relu_np(np.concatenate([vp, m_to_pat]) @ P["sage0.node_w"].data + P["sage0.node_b"].data)
    vv_new = relu_np(np.concatenate([vv, m_to_var]) @ P["sage0.node_w"].data + P["sage0.node_b"].data)
    e_new = ee + relu_np(np.concatenate([vp_new, vv_new, ee]) @ P["sage0.edge_w"].data
                         + P["sage0.edge_b"].data)

    np.testing.assert_allclose(out_pat.data[0], vp_new, atol=1e-9)
    np.testing.assert_allclose(out_var.data[0], vv_new, atol=1e-9)
    np.testing.assert_allclose(out_e.data[0], e_new, atol=1e-9)


def test_isolated_node_uses_empty_sum():
    d = 4
    params = tiny_params(d=d, v=2, seed=3)
    mask = np.zeros((1, 2))
    mask[0, 0] = 1  # variable 1 is isolated
    ep = episode_from_mask(mask)
    step = gr.build_graph_step([ep], 0, 2)
    e = gr.init_edge_embeddings(step, params)
    v_pat = gr.init_patient_states(1, d)
    v_var = params["node.var_table"]
    _, out_var, _ = gr.message_pass_layer(step, v_pat, v_var, e, params, 0)
    isolated = v_var.data[1]
    expected = relu_np(np.concatenate([isolated, np.zeros(d)]) @ params["sage0.node_w"].data
                       + params["sage0.node_b"].data)
    np.testing.assert_allclose(out_var.data[1], expected, atol=1e-12)


def test_edge_order_does_not_change_outputs():
    d = 4
    params = tiny_params(d=d, v=3, seed=5)
    mask = np.ones((1, 3))
    eps = [episode_from_mask(mask, values=mask * 1.5, pid="a"),
           episode_from_mask(mask, values=mask * 0.5, pid="b")]
    step = gr.build_graph_step(eps, 0, 3)
    e = gr.init_edge_embeddings(step, params)
    v_pat = gr.init_patient_states(2, d)
    v_var = params["node.var_table"]
    base_pat, base_var, base_e = gr.message_pass_layer(step, v_pat, v_var, e, params, 0)

    perm = np.array([5, 2, 4, 0, 3, 1])
    shuffled = gr.GraphStep(step.n_patients, step.n_variables,
                            step.patient_idx[perm], step.variable_idx[perm],
                            step.values[perm], step.times[perm], step.delta_t[perm])
    e2 = gr.init_edge_embeddings(shuffled, params)
    out_pat, out_var, out_e = gr.message_pass_layer(shuffled, v_pat, v_var, e2, params, 0)
    np.testing.assert_allclose(out_pat.data, base_pat.data, atol=1e-9)
    np.testing.assert_allclose(out_var.data, base_var.data, atol=1e-9)
    np.testing.assert_allclose(out_e.data, base_e.data[perm], atol=1e-9)


def test_node_update_depends_only_on_neighbourhood():
    d = 4
    params = tiny_params(d=d, v=2, seed=1)
    # patient 0 observes variable 0, patient 1 observes variable 1
    mask_a = np.array([[1.0, 0.0]])
    mask_b = np.array([[0.0, 1.0]])
    eps = [episode_from_mask(mask_a, pid="a"), episode_from_mask(mask_b, pid="b")]
    step = gr.build_graph_step(eps, 0, 2)
    v_pat = gr.init_patient_states(2, d)
    v_var = params["node.var_table"]
    e = gr.init_edge_embeddings(step, params)
    base_pat, _, _ = gr.message_pass_layer(step, v_pat, v_var, e, params, 0)

    # zero the edge that is not adjacent to patient 0
    e_mod = Tensor(e.data.copy())
    non_adjacent = int(np.flatnonzero(step.patient_idx == 1)[0])
    e_mod.data[non_adjacent] = 0.0
    mod_pat, _, _ = gr.message_pass_layer(step, v_pat, v_var, e_mod, params, 0)
    np.testing.assert_allclose(mod_pat.data[0], base_pat.data[0], atol=1e-9)
    assert not np.allclose(mod_pat.data[1], base_pat.data[1])


def test_stacked_layers_match_manual_composition():
    d = 4
    params = tiny_params(d=d, v=2, seed=9, layers=2)
    ep = episode_from_mask(np.ones((1, 2)))
    step = gr.build_graph_step([ep], 0, 2)
    e = gr.init_edge_embeddings(step, params)
    v_pat = gr.init_patient_states(1, d)
    v_var = params["node.var_table"]

    p1, v1, e1 = gr.message_pass_layer(step, v_pat, v_var, e, params, 0)
    p2, v2, e2 = gr.message_pass_layer(step, p1, v1, e1, params, 1)
    out_p, out_v, out_e = gr.message_pass(step, v_pat, v_var, e, params, 2)
    np.testing.assert_array_equal(out_p.data, p2.data)
    np.testing.assert_array_equal(out_v.data, v2.data)
    np.testing.assert_array_equal(out_e.data, e2.data)
    assert out_p.shape == v_pat.shape and out_e.shape == e.shape


def test_message_pass_rejects_zero_layers():
    params = tiny_params(d=4, v=2)
    ep = episode_from_mask(np.ones((1, 2)))
    step = gr.build_graph_step([ep], 0, 2)
    e = gr.init_edge_embeddings(step, params)
    with pytest.raises(gr.GraphConfigError):
        gr.message_pass(step, gr.init_patient_states(1, 4),
                        params["node.var_table"], e, params, 0)


def test_gradients_reach_every_graph_parameter():
    params = tiny_params(d=4, v=3, seed=2)
    cfg = SyntheticConfig(n_variables=3, n_episodes=2, decay_rates=[0.5, 1.0, 2.0],
                          obs_per_episode=6.0, horizon=24.0, seed=0,
                          label_coeffs=[1.0, -1.0, 0.5])
    ds = synthesize(cfg)
    step = gr.build_graph_step(ds.episodes, 0, 3)
    e = gr.init_edge_embeddings(step, params)
    v_pat = gr.init_patient_states(2, 4)
    out_p, out_v, out_e = gr.message_pass_layer(step, v_pat, params["node.var_table"],
                                                e, params, 0)
    ad.zero_grad(params.values())
    loss = ad.add(ad.tensor_sum(ad.mul(out_p, out_p)),
                  ad.add(ad.tensor_sum(ad.mul(out_v, out_v)),
                         ad.tensor_sum(ad.mul(out_e, out_e))))
    ad.backward(loss)
    for name in ("edge.value_w", "edge.value_b", "edge.time_freq", "edge.time_phase",
                 "edge.var_table", "node.var_table", "sage0.msg_w", "sage0.msg_b",
                 "sage0.node_w", "sage0.node_b", "sage0.edge_w", "sage0.edge_b"):
        grad = params[name].grad
        assert grad is not None and np.any(grad != 0.0), f"no gradient for {name}"
