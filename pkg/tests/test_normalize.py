import itertools

import numpy as np
from hypothesis import given, settings, strategies as st

from glassrecon.mesh.core import icosphere
from glassrecon.mesh.normalize import Similarity, minimal_enclosing_ball, normalize_scale


def brute_force_ball(P):
    """Smallest ball over all 2-, 3- and 4-point boundary supports."""
    best = (None, np.inf)
    for k in (2, 3, 4):
        for idx in itertools.combinations(range(len(P)), k):
            S = P[list(idx)]
            if k == 2:
                c = S.mean(0)
            else:
                # circumcentre in the affine span of S
                A = S[1:] - S[0]
                G = A @ A.T
                b = 0.5 * (A * A).sum(1)
                try:
                    lam = np.linalg.solve(G, b)
                except np.linalg.LinAlgError:
                    continue
                c = S[0] + lam @ A
            r = np.linalg.norm(S[0] - c)
            if r < best[1] and np.all(np.linalg.norm(P - c, axis=1) <= r * (1 + 1e-9) + 1e-12):
                best = (c, r)
    return best


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 11))
def test_welzl_matches_brute_force(seed, n):
    P = np.random.default_rng(seed).normal(size=(n, 3))
    c, r = minimal_enclosing_ball(P)
    bc, br = brute_force_ball(P)
    assert abs(r - br) < 1e-9 * max(1, br)
    assert np.linalg.norm(c - bc) < 1e-6
    assert np.all(np.linalg.norm(P - c, axis=1) <= r + 1e-9)


def test_already_normalized_is_identity():
    s = icosphere(3, 0.5)
    out, tf = normalize_scale(s)
    assert abs(tf.scale - 1) < 1e-9 and np.abs(tf.translation).max() < 1e-9


def test_radius_two_sphere():
    s = icosphere(3, 2.0)
    s = s.with_vertices(s.vertices + [3, -1, 2])
    out, tf = normalize_scale(s)
    assert abs(tf.scale - 0.25) < 1e-9
    assert np.allclose(tf.inverse().apply(out.vertices), s.vertices, atol=1e-9)
    c, r = minimal_enclosing_ball(out.vertices)
    assert abs(2 * r - 1) < 1e-9 and np.linalg.norm(c) < 1e-9


def test_similarity_compose_and_dict():
    a = Similarity(2.0, np.array([1.0, 0, 0]))
    b = Similarity(0.5, np.array([0, 3.0, 0]))
    x = np.array([[0.3, -0.2, 1.0]])
    assert np.allclose(b.compose(a).apply(x), b.apply(a.apply(x)))
    c = Similarity.from_dict(a.to_dict())
    assert c.scale == a.scale and np.array_equal(c.translation, a.translation)
