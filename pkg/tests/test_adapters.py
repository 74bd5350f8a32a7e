import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedravan import adapters as ad
from fedravan import linalg
from fedravan.errors import ShapeError

from oracles import central_fd, rel_err


def generic_ravan(stream, d_out=7, d_in=6, r=2, h=3, scheme="random_normal"):
    adapter = ad.init_ravan(d_out, d_in, r, h, ad.InitScheme(scheme), stream)
    adapter.cores = stream.standard_normal(adapter.cores.shape)
    adapter.scales = 1.0 + 0.3 * stream.standard_normal(h)
    return adapter


@pytest.mark.parametrize("scheme", ad.INIT_SCHEMES)
def test_fresh_init_has_zero_update(scheme, stream):
    adapter = ad.init_ravan(16, 12, 2, 3, ad.InitScheme(scheme), stream)
    assert np.array_equal(adapter.delta_w(), np.zeros((16, 12)))
    assert np.array_equal(adapter.scales, np.ones(3))
    w = stream.standard_normal((16, 12))
    x = stream.standard_normal((12, 4))
    assert np.array_equal(adapter.forward(w, x), w @ x)


def test_gram_schmidt_bases_are_jointly_orthonormal():
    adapter = ad.init_ravan(64, 64, 8, 4, ad.InitScheme("gram_schmidt"), linalg.make_stream(0, "gs"))
    b = np.concatenate(list(adapter.bases_b), axis=1)
    a = np.concatenate(list(adapter.bases_a), axis=0)
    assert np.abs(b.T @ b - np.eye(32)).max() < 1e-10
    assert np.abs(a @ a.T - np.eye(32)).max() < 1e-10


def test_gram_schmidt_needs_room(stream):
    with pytest.raises(ShapeError):
        ad.init_ravan(8, 8, 3, 3, ad.InitScheme("gram_schmidt"), stream)


def test_constant_init_repeats_bases(stream):
    adapter = ad.init_ravan(10, 10, 2, 2, ad.InitScheme("constant"), stream)
    assert np.array_equal(adapter.bases_b[0], adapter.bases_b[1])
    assert np.array_equal(adapter.bases_a[0], adapter.bases_a[1])


def test_shared_subspace_bases_share_column_space(stream):
    adapter = ad.init_ravan(12, 10, 3, 4, ad.InitScheme("shared_subspace"), stream)
    b = np.concatenate(list(adapter.bases_b), axis=1)
    a = np.concatenate(list(adapter.bases_a), axis=0)
    assert linalg.numerical_rank(b) == 3
    assert linalg.numerical_rank(a) == 3


def test_forward_hand_case():
    adapter = ad.RavanAdapter(np.eye(2)[None], np.eye(2)[None], np.eye(2)[None], np.array([2.0]),
                              np.array([True]))
    v = np.array([[1.5], [-4.0]])
    assert np.array_equal(adapter.forward(np.zeros((2, 2)), v), 2 * v)


def test_forward_matches_materialized_update(stream):
    adapter = generic_ravan(stream)
    w = stream.standard_normal((7, 6))
    x = stream.standard_normal((6, 6))
    assert np.abs(adapter.forward(w, x) - (adapter.delta_w() + w) @ x).max() < 1e-10


def test_delta_w_block_sum_by_hand():
    e = np.eye(2)
    b = np.stack([e[:, :1], e[:, 1:]])
    a = np.stack([e[:1], e[1:]])
    adapter = ad.RavanAdapter(b, a, np.array([[[3.0]], [[5.0]]]), np.array([1.0, 0.5]),
                              np.ones(2, dtype=bool))
    assert np.array_equal(adapter.delta_w(), [[3.0, 0.0], [0.0, 2.5]])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 10**6))
def test_delta_w_rank_bound(r, h, seed):
    g = linalg.make_stream(seed, "rank")
    adapter = generic_ravan(g, d_out=9, d_in=7, r=r, h=h)
    assert linalg.numerical_rank(adapter.delta_w()) <= min(h * r, 9, 7)


@pytest.mark.parametrize("h", [1, 2, 4])
def test_gram_schmidt_generic_rank_is_h_times_r(h):
    g = linalg.make_stream(h, "rank-gs")
    adapter = ad.init_ravan(64, 64, 4, h, ad.InitScheme("gram_schmidt"), g)
    adapter.cores = g.standard_normal(adapter.cores.shape)
    assert linalg.numerical_rank(adapter.delta_w()) == 4 * h


def test_constant_init_rank_at_most_r(stream):
    adapter = ad.init_ravan(64, 64, 4, 4, ad.InitScheme("constant"), stream)
    adapter.cores = stream.standard_normal(adapter.cores.shape)
    assert linalg.numerical_rank(adapter.delta_w()) <= 4


def test_core_gradient_hand_case():
    # y = W x + s B H A x = 0.5 * 2 = 1; L = (y - 3)^2 / 2; dL/dy = -2; dL/dH = -2 * 2 = -4
    one = np.ones((1, 1, 1))
    adapter = ad.RavanAdapter(one, one.copy(), 0.5 * one, np.array([1.0]), np.array([True]))
    x = np.array([[2.0]])
    y = adapter.forward(np.zeros((1, 1)), x)
    grads = adapter.backward(np.zeros((1, 1)), x, y - 3.0)
    assert grads["cores"][0, 0, 0] == -4.0
    assert grads["scales"][0] == -2.0  # <H, B^T G A^T> = 0.5 * (-4)


def test_zero_upstream_gives_zero_gradients(stream):
    adapter = generic_ravan(stream)
    grads = adapter.backward(np.zeros((7, 6)), stream.standard_normal((6, 3)), np.zeros((7, 3)))
    assert all(not g.any() for g in grads.values())


def _fd_check(adapter, stream, d_out, d_in):
    w = stream.standard_normal((d_out, d_in))
    x = stream.standard_normal((d_in, 4))
    target = stream.standard_normal((d_out, 4))

    def loss():
        return 0.5 * float(np.sum((adapter.forward(w, x) - target) ** 2))

    grads = adapter.backward(w, x, adapter.forward(w, x) - target)
    params = adapter.trainable_params()
    assert set(grads) == set(params)
    return max(rel_err(grads[k], central_fd(loss, params[k])) for k in params)


@pytest.mark.parametrize("scheme", ad.INIT_SCHEMES)
def test_ravan_gradients_match_finite_differences(scheme, stream):
    assert _fd_check(generic_ravan(stream, scheme=scheme), stream, 7, 6) < 1e-5


def test_lora_gradients_match_finite_differences(stream):
    for freeze in (False, True):
        adapter = ad.init_lora(6, 5, 3, stream, freeze_a=freeze)
        adapter.b = stream.standard_normal(adapter.b.shape)
        assert _fd_check(adapter, stream, 6, 5) < 1e-5
        assert ("a" in adapter.trainable_params()) is not freeze


def test_fedsb_gradients_match_finite_differences(stream):
    adapter = ad.FedSbAdapter(stream.standard_normal((6, 2)), stream.standard_normal((2, 2)),
                              stream.standard_normal((2, 4)))
    assert _fd_check(adapter, stream, 6, 4) < 1e-5


def test_masked_heads_get_no_gradient(stream):
    adapter = generic_ravan(stream)
    adapter.active_mask = np.array([True, False, True])
    grads = adapter.backward(np.zeros((7, 6)), stream.standard_normal((6, 3)),
                             stream.standard_normal((7, 3)))
    assert not grads["cores"][1].any() and grads["scales"][1] == 0
    assert grads["cores"][0].any()


def test_untrainable_scaling_has_no_scale_gradient(stream):
    adapter = generic_ravan(stream)
    adapter.trainable_scaling = False
    grads = adapter.backward(np.zeros((7, 6)), stream.standard_normal((6, 2)),
                             stream.standard_normal((7, 2)))
    assert set(grads) == {"cores"}


def test_single_head_matches_fedsb_bitwise(stream):
    b, h, a = stream.standard_normal((6, 3)), stream.standard_normal((3, 3)), stream.standard_normal((3, 5))
    ravan = ad.RavanAdapter(b[None], a[None], h[None].copy(), np.ones(1), np.ones(1, dtype=bool), False)
    fedsb = ad.FedSbAdapter(b, h.copy(), a)
    w = stream.standard_normal((6, 5))
    x = stream.standard_normal((5, 4))
    up = stream.standard_normal((6, 4))
    assert np.array_equal(ravan.forward(w, x), fedsb.forward(w, x))
    assert np.array_equal(ravan.backward(w, x, up)["cores"][0], fedsb.backward(w, x, up)["core"])


def test_fedsb_init_from_svd():
    adapter = ad.init_fedsb(np.diag([3.0, 2.0, 1.0]), 2)
    assert np.abs(adapter.delta_w() - np.diag([3.0, 2.0, 0.0])).max() < 1e-14
    full = ad.init_fedsb(np.diag([3.0, 2.0, 1.0]), 3)
    assert np.abs(full.delta_w() - np.diag([3.0, 2.0, 1.0])).max() < 1e-9


def test_fedsb_init_truncation_error_is_tail_energy(stream):
    dw = stream.standard_normal((10, 8))
    sv = linalg.svd(dw).singular_values
    adapter = ad.init_fedsb(dw, 4)
    err = linalg.frobenius_norm(dw - adapter.delta_w())
    assert abs(err - math.sqrt(np.sum(sv[4:] ** 2))) < 1e-8
    with pytest.raises(ShapeError):
        ad.init_fedsb(dw, 9)


def test_rank_bounds_large_layer_configurations():
    # four heads of rank 110 on a 768-wide layer: 4 * 110^2 = 48400 core entries
    assert ad.heads_rank(48400, 4) == 110
    assert ad.rank_bound_multihead(48400, 4, 768) == 440
    # vanilla LoRA rank 32 on 768-wide layers: 2 * 32 * 768 = 49152 entries
    assert ad.rank_bound_vanilla_multihead(49152, 4, 768) == 32
    assert ad.heads_rank(49152, 1) == 221


def test_rank_bound_cases():
    assert ad.rank_bound_multihead(50, 1, 100) == math.isqrt(50)
    assert ad.rank_bound_multihead(64, 16, 32) == 32  # N h >= d^2 caps at d
    assert ad.rank_bound_vanilla_multihead(2 * 32 * 64, 7, 64) == 32
    with pytest.raises(ValueError):
        ad.rank_bound_multihead(0, 1, 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10**6), st.integers(1, 64), st.integers(1, 4096))
def test_multihead_bound_exceeds_vanilla_when_sqrt_nh_larger(n, h, d):
    multi = ad.rank_bound_multihead(n, h, d)
    vanilla = ad.rank_bound_vanilla_multihead(n, h, d)
    if math.isqrt(n * h) > n // (2 * d) and vanilla < d:
        assert multi > vanilla
    assert multi <= d and vanilla <= d


@pytest.mark.parametrize("make", [
    lambda g: generic_ravan(g),
    lambda g: ad.init_lora(5, 4, 2, g, freeze_a=True),
    lambda g: ad.FedSbAdapter(g.standard_normal((6, 2)), g.standard_normal((2, 2)),
                              g.standard_normal((2, 4))),
])
def test_serialize_round_trip(make, stream):
    adapter = make(stream)
    if isinstance(adapter, ad.RavanAdapter):
        adapter.active_mask = np.array([True, False, True])
    back = ad.deserialize(ad.serialize(adapter))
    assert type(back) is type(adapter)
    for key, value in vars(adapter).items():
        other = getattr(back, key)
        assert np.array_equal(np.asarray(value), np.asarray(other)), key


def test_deserialize_rejects_garbage():
    with pytest.raises(ValueError):
        ad.deserialize(b"nope")
