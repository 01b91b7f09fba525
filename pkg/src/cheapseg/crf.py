"""4-connected Potts CRF: unary construction, energy and alpha-expansion."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .maxflow import SNK, CsrGraph

DEFAULT_EPS = 1e-6


@dataclass
class CrfProblem:
    unary: np.ndarray   # (H, W, C) costs
    lam: float = 1.5

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=np.float64)
        if self.unary.ndim != 3:
            raise ValueError("unary must have shape (H, W, C)")
        if not np.isfinite(self.unary).all():
            raise ValueError("unary costs must be finite")
        if self.lam < 0:
            raise ValueError("Potts strength must be non-negative")

    @property
    def shape(self):
        return self.unary.shape[:2]

    @property
    def num_classes(self):
        return self.unary.shape[2]


def build_unary(appearance, location, zeta, omega, alpha=1.0, eps=DEFAULT_EPS, zeta_mode="class"):
    """Per-pixel label costs from blended appearance/location probabilities.

    ``p = (1 - omega) * appearance + omega * location`` and the cost of class
    ``c`` is ``-log(max(eps, p[c] * zeta[c] ** alpha))``.  With
    ``zeta_mode="scalar"`` the prior instead scales every cost of the image
    by ``mean(zeta) ** alpha``.  ``appearance`` may be ``None`` when
    ``omega == 1`` and ``location`` may be ``None`` when ``omega == 0``.
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1], got %r" % omega)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if omega == 1.0:
        if location is None:
            raise ValueError("omega = 1 needs location probabilities")
        p = np.asarray(location, dtype=np.float64).copy()
    elif omega == 0.0:
        if appearance is None:
            raise ValueError("omega = 0 needs appearance probabilities")
        p = np.asarray(appearance, dtype=np.float64).copy()
    else:
        if appearance is None or location is None:
            raise ValueError("blending needs both appearance and location")
        appearance = np.asarray(appearance, dtype=np.float64)
        location = np.asarray(location, dtype=np.float64)
        if appearance.shape != location.shape:
            raise ValueError("appearance and location grids differ in shape")
        p = (1.0 - omega) * appearance + omega * location
    if zeta is None:
        return -np.log(np.maximum(eps, p))
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape != (p.shape[-1],):
        raise ValueError("prior length %d does not match %d classes" % (len(zeta), p.shape[-1]))
    if zeta_mode == "class":
        return -np.log(np.maximum(eps, p * zeta ** alpha))
    if zeta_mode == "scalar":
        return float(np.mean(zeta)) ** alpha * -np.log(np.maximum(eps, p))
    raise ValueError("unknown zeta_mode %r" % zeta_mode)


def discontinuities(labels):
    labels = np.asarray(labels)
    return int((labels[:, 1:] != labels[:, :-1]).sum() + (labels[1:, :] != labels[:-1, :]).sum())


def energy(problem, labels):
    labels = np.asarray(labels)
    if labels.shape != problem.shape:
        raise ValueError("labeling shape %s does not match problem %s" % (labels.shape, problem.shape))
    H, W = labels.shape
    un = problem.unary[np.arange(H)[:, None], np.arange(W)[None, :], labels].sum()
    return float(un + problem.lam * discontinuities(labels))


@lru_cache(maxsize=16)
def grid_graph(H, W):
    """4-connected grid as an arc-pair graph; edges are horizontal then vertical."""
    idx = np.arange(H * W).reshape(H, W)
    p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return CsrGraph(H * W, p, q), p, q


def expansion_move(problem, labels, alpha):
    """Optimal labeling within one alpha-expansion of ``labels`` (exact min-cut)."""
    H, W = problem.shape
    N = H * W
    lam = problem.lam
    U = problem.unary.reshape(N, -1)
    f = np.asarray(labels).reshape(N)
    graph, p, q = grid_graph(H, W)
    rows = np.arange(N)
    src = U[:, alpha].copy()      # paid when the pixel switches to alpha
    snk = U[rows, f].copy()       # paid when it keeps its label
    fp, fq = f[p], f[q]
    A = lam * (fp != fq)
    B = lam * (fp != alpha)
    C = lam * (fq != alpha)
    lin = np.bincount(p, weights=C - A, minlength=N) + np.bincount(q, weights=-C, minlength=N)
    src += np.maximum(lin, 0.0)
    snk += np.maximum(-lin, 0.0)
    w = B + C - A
    _, tree = graph.solve(w, np.zeros_like(w), src, snk)
    # maximal source side: pixels indifferent to the move keep their label
    keep = tree != SNK
    return np.where(keep, f, alpha).reshape(H, W)


def alpha_expansion(problem, init=None, max_sweeps=10, history=None):
    """Potts energy minimization by expansion moves over classes in ascending order.

    Stops after a full sweep without an energy decrease, or after
    ``max_sweeps`` sweeps.  If ``history`` is a list, the energy after
    each sweep is appended to it (the initial energy first).
    """
    if init is None:
        labels = problem.unary.argmin(axis=2)
    else:
        labels = np.array(init, dtype=np.int64)
        if labels.shape != problem.shape:
            raise ValueError("initial labeling has the wrong shape")
    labels = labels.astype(np.int64)
    e = energy(problem, labels)
    if history is not None:
        history.append(e)
    for _ in range(max_sweeps):
        improved = False
        for alpha in range(problem.num_classes):
            cand = expansion_move(problem, labels, alpha)
            ce = energy(problem, cand)
            if ce < e - 1e-10 * max(1.0, abs(e)):
                labels, e = cand, ce
                improved = True
        if history is not None:
            history.append(e)
        if not improved:
            break
    return labels
