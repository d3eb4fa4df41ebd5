"""Reference-element quadrature rules (barycentric coordinates, weights sum to 1)."""
from __future__ import annotations

import numpy as np


def triangle_rule(order: int = 4):
    """Symmetric Gauss rule on the reference triangle.

    Returns (bary, w): barycentric points (nq, 3) and weights (nq,) normalised
    so that sum(w) = 1; multiply by the physical triangle area to integrate.
    Exact for polynomials of degree <= order.
    """
    if order <= 1:
        bary = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif order == 2:
        a = 2 / 3
        b = 1 / 6
        bary = np.array([[a, b, b], [b, a, b], [b, b, a]])
        w = np.full(3, 1 / 3)
    elif order <= 4:
        # two three-point orbits (degree 4)
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        bary = np.array(
            [
                [1 - 2 * a1, a1, a1],
                [a1, 1 - 2 * a1, a1],
                [a1, a1, 1 - 2 * a1],
                [1 - 2 * a2, a2, a2],
                [a2, 1 - 2 * a2, a2],
                [a2, a2, 1 - 2 * a2],
            ]
        )
        w = np.array([w1, w1, w1, w2, w2, w2])
    elif order <= 6:
        # 12-point degree-6 rule, used by oracle tests to cross-check the order-4 rule
        a1, w1 = 0.063089014491502, 0.050844906370207
        a2, w2 = 0.249286745170910, 0.116786275726379
        a3, b3, w3 = 0.310352451033785, 0.053145049844816, 0.082851075618374
        orb1 = [[1 - 2 * a1, a1, a1], [a1, 1 - 2 * a1, a1], [a1, a1, 1 - 2 * a1]]
        orb2 = [[1 - 2 * a2, a2, a2], [a2, 1 - 2 * a2, a2], [a2, a2, 1 - 2 * a2]]
        c3 = 1 - a3 - b3
        orb3 = [
            [a3, b3, c3],
            [a3, c3, b3],
            [b3, a3, c3],
            [b3, c3, a3],
            [c3, a3, b3],
            [c3, b3, a3],
        ]
        bary = np.array(orb1 + orb2 + orb3)
        w = np.array([w1] * 3 + [w2] * 3 + [w3] * 6)
    else:
        raise ValueError(f"no triangle rule of order {order}")
    w = w / w.sum()  # remove last-digit drift in tabulated values
    return bary, w


def tetrahedron_rule(order: int = 2):
    """Symmetric rule on the reference tetrahedron.

    Returns (bary, w): points (nq, 4), weights summing to 1; multiply by the
    tet volume to integrate. Exact for polynomials of degree <= order.
    """
    if order <= 1:
        bary = np.array([[0.25, 0.25, 0.25, 0.25]])
        w = np.array([1.0])
    elif order == 2:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        bary = np.array(
            [
                [a, b, b, b],
                [b, a, b, b],
                [b, b, a, b],
                [b, b, b, a],
            ]
        )
        w = np.full(4, 0.25)
    elif order <= 3:
        # 5-point degree-3 rule (one negative weight); oracle use only
        bary = np.array(
            [
                [0.25, 0.25, 0.25, 0.25],
                [0.5, 1 / 6, 1 / 6, 1 / 6],
                [1 / 6, 0.5, 1 / 6, 1 / 6],
                [1 / 6, 1 / 6, 0.5, 1 / 6],
                [1 / 6, 1 / 6, 1 / 6, 0.5],
            ]
        )
        w = np.array([-0.8, 0.45, 0.45, 0.45, 0.45])
    else:
        raise ValueError(f"no tetrahedron rule of order {order}")
    return bary, w
