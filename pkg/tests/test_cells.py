import numpy as np
import pytest

from hinas.autodiff import Tensor, grad_check
from hinas.autodiff import functional as F
from hinas.cells import (CellAlphas, ConvOp, EdgeMixture, Identity, OpKind, SuperCell, edge_index,
                         init_alpha, make_candidate_op, mixed_edge_forward, num_edges,
                         supercell_forward)
from hinas.supernet import RestorationTask, SuperNet


def edge(c=4, seed=0, alpha=None):
    a = CellAlphas(1).edge[0]
    if alpha is not None:
        a.data[...] = alpha
    return EdgeMixture(c, a, np.random.default_rng(seed))


def x_of(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def test_opkind_order_is_frozen():
    assert [k.name for k in OpKind] == ["CONV3", "SEP3", "SEP5", "DIL3", "DIL5", "SKIP", "NONE"]
    assert [int(k) for k in OpKind] == list(range(7))


def test_skip_and_none(rng):
    x = x_of(rng, 2, 8, 5, 5)
    assert make_candidate_op(OpKind.SKIP, 8)(x) is x
    xp = Tensor(x.data, requires_grad=True)
    z = make_candidate_op(OpKind.NONE, 8)(xp)
    np.testing.assert_array_equal(z.data, 0.0)
    F.sum(F.mul(z, 3.0)).backward()
    np.testing.assert_array_equal(xp.grad, 0.0)


@pytest.mark.parametrize("kind", [OpKind.CONV3, OpKind.SEP3, OpKind.SEP5, OpKind.DIL3, OpKind.DIL5])
def test_conv_kinds_keep_shape(rng, kind):
    op = make_candidate_op(kind, 4, rng)
    assert isinstance(op, ConvOp)
    assert op(x_of(rng, 2, 4, 9, 9)).shape == (2, 4, 9, 9)


def test_dil5_receptive_field(rng):
    op = make_candidate_op(OpKind.DIL5, 4, rng).eval()
    base = np.zeros((1, 4, 21, 21))
    x = base.copy()
    x[0, :, 10, 10] = 1.0
    # the LeakyReLU of a one-hot input is the same one-hot, so the response is the kernel footprint
    y = op(Tensor(x)).data - op(Tensor(base)).data
    rows = np.nonzero(np.abs(y[0]).sum(axis=(0, 2)) > 0)[0]
    assert rows.max() - rows.min() + 1 == 9


def test_saturated_alpha_selects_one_op(rng):
    x = x_of(rng, 2, 4, 6, 6)
    alpha = np.zeros(7)
    alpha[OpKind.SKIP] = 1e6
    np.testing.assert_allclose(edge(alpha=alpha)(x).data, x.data, atol=1e-6)
    for kind in (OpKind.CONV3, OpKind.SEP5, OpKind.DIL3):
        a = np.zeros(7)
        a[kind] = 50.0
        e = edge(alpha=a, seed=3)
        np.testing.assert_allclose(e(x).data, e.ops[kind.label](x).data, atol=1e-5)


def test_identity_fixture_mixture(rng):
    e = edge()
    for kind in OpKind:
        e.ops[kind.label] = Identity()
    x = x_of(rng, 1, 4, 5, 5)
    np.testing.assert_allclose(e(x).data, x.data, rtol=1e-6)


def test_alpha_shift_invariance(rng):
    x = x_of(rng, 2, 4, 6, 6)
    alpha = rng.standard_normal(7)
    a = edge(alpha=alpha, seed=5)(x).data
    b = edge(alpha=alpha + 3.5, seed=5)(x).data
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_mixture_width_check(rng):
    with pytest.raises(ValueError):
        edge(c=4)(x_of(rng, 1, 3, 5, 5))


def test_mixture_alpha_gradient(f64, rng):
    e = edge(c=2, seed=1, alpha=rng.standard_normal(7))
    x = x_of(rng, 2, 2, 5, 5)
    assert grad_check(lambda a: mixed_edge_forward(e, x, F.softmax(a)), [e.alpha]) < 1e-4


def test_supercell_shapes(rng):
    alphas = CellAlphas(4)
    cell = SuperCell(4, 0, 8, alphas, rng)
    x = x_of(rng, 2, 8, 6, 6)
    assert cell(x, x).shape == (2, 32, 6, 6)
    wide = SuperCell(4, 2, 8, CellAlphas(4), rng)
    assert wide.out_width == 2 ** 2 * 4 * 8 == 128
    with pytest.raises(ValueError):
        cell(x, x_of(rng, 2, 4, 6, 6))


def test_supercell_edge_count():
    cell = SuperCell(4, 0, 2, CellAlphas(4), np.random.default_rng(0))
    for i in range(4):
        assert sum(1 for key in cell.edges if key.endswith(f"_{i}")) == 2 + i
    assert len(cell.edges) == num_edges(4) == 14
    assert edge_index(3, 4) == 13


def test_all_none_cell_outputs_zero(rng):
    alphas = CellAlphas(3)
    for a in alphas.edge:
        a.data[OpKind.NONE] = 1e6
    cell = SuperCell(3, 0, 4, alphas, rng)
    x = x_of(rng, 1, 4, 5, 5)
    np.testing.assert_allclose(supercell_forward(cell, x, x).data, 0.0, atol=1e-6)


def test_init_alpha_uniform():
    alphas = CellAlphas(2)
    for a in alphas.edge:
        a.data[:] = np.arange(7)
    init_alpha([alphas])
    for a in alphas.edge:
        np.testing.assert_allclose(F.softmax(a).data, np.full(7, 1 / 7))


def test_layerwise_alpha_sets():
    task = RestorationTask.denoise()
    on = SuperNet(2, 2, 3, task, lwas=True)
    assert on.layer_alphas(0) is not on.layer_alphas(1)
    assert on.cells["l0_i0"].alphas is not on.cells["l1_i0"].alphas
    off = SuperNet(2, 2, 3, task, lwas=False)
    assert off.layer_alphas(0) is off.layer_alphas(2)
    assert off.cells["l0_i0"].edges["0_0"].alpha is off.cells["l2_i1"].edges["0_0"].alpha


def test_aliased_alpha_gives_identical_outputs(rng):
    alphas = CellAlphas(2)
    alphas.edge[0].data[:] = rng.standard_normal(7)
    a = SuperCell(2, 0, 3, alphas, np.random.default_rng(9), layer_index=0)
    b = SuperCell(2, 0, 3, alphas, np.random.default_rng(9), layer_index=2)
    x = x_of(rng, 1, 3, 6, 6)
    np.testing.assert_array_equal(a(x, x).data, b(x, x).data)


def test_softmax_alpha_sums_to_one(rng):
    alphas = CellAlphas(3)
    for a in alphas.edge:
        a.data[:] = rng.standard_normal(7) * 10
        assert F.softmax(a).data.sum() == pytest.approx(1.0, abs=1e-6)
