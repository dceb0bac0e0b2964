"""Induced metric, Christoffel symbols and curvature of decoder manifolds.

Every function accepts jets with leading batch axes; results keep them.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import subspace_angles
from scipy.optimize import minimize

from .errors import DegenerateTangentError, DomainError, ShapeError, SingularMetricError
from .jets import Jet, MlpModel, decoder_jet

logger = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-6
N_DIRECTION_CANDIDATES = 256


@dataclass(frozen=True)
class GeometryAtPoint:
    """Metric, inverse metric, Christoffel symbols and curvature scalars at latent point(s)."""

    metric: np.ndarray
    metric_inverse: np.ndarray
    christoffel: np.ndarray
    pe_curvature: np.ndarray
    ex_curvature: np.ndarray
    jitter_used: np.ndarray

    def __getitem__(self, index) -> 'GeometryAtPoint':
        return GeometryAtPoint(self.metric[index], self.metric_inverse[index],
                               self.christoffel[index], self.pe_curvature[index],
                               self.ex_curvature[index], self.jitter_used[index])


def _failing_point(points: Optional[np.ndarray], index: int, m: int) -> np.ndarray:
    if points is None:
        return np.full(m, np.nan)
    return np.asarray(points, dtype=np.float64).reshape(-1, m)[index]


def metric_from_jet(jet: Jet, jitter_scale: float = DEFAULT_JITTER,
                    points: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Pull back the data-space inner product onto latent space.

    Args:
        jet: Jet at one or more latent points
        jitter_scale: Relative jitter; jitter_scale * trace(g) / m is added to the diagonal
        points: Latent coordinates of the jet, only used to report failures

    Returns:
        (g = J^T J, inverse of the jittered g, jitter added)
    """
    if jitter_scale < 0:
        raise DomainError(f"jitter_scale must be nonnegative, got {jitter_scale}")
    jac = jet.jacobian
    m = jac.shape[-1]
    g = np.einsum('...am,...an->...mn', jac, jac)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    jitter = jitter_scale * np.trace(g, axis1=-2, axis2=-1) / m
    g_jittered = g + jitter[..., None, None] * np.eye(m)
    try:
        chol = np.linalg.cholesky(g_jittered)
    except np.linalg.LinAlgError:
        flat = g_jittered.reshape(-1, m, m)
        flat_jitter = np.reshape(jitter, -1)
        for index in range(flat.shape[0]):
            try:
                np.linalg.cholesky(flat[index])
            except np.linalg.LinAlgError:
                raise SingularMetricError(_failing_point(points, index, m), float(flat_jitter[index]))
        raise
    chol_inv = np.linalg.inv(chol)
    g_inv = np.swapaxes(chol_inv, -1, -2) @ chol_inv
    g_inv = 0.5 * (g_inv + np.swapaxes(g_inv, -1, -2))
    return g, g_inv, jitter


def christoffel(jet: Jet, g_inverse: np.ndarray) -> np.ndarray:
    """Christoffel symbols of the second kind, indexed [kappa, mu, nu]."""
    first_kind = np.einsum('...al,...amn->...lmn', jet.jacobian, jet.hessian)
    gamma = np.einsum('...kl,...lmn->...kmn', g_inverse, first_kind)
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def _contracted_norm(tensor: np.ndarray, whitening: np.ndarray) -> np.ndarray:
    """sum_a g^{mu mu'} g^{nu nu'} X_a,mu,nu X_a,mu',nu' with g^{-1} = W W^T."""
    white = np.einsum('...mp,...amn,...nq->...apq', whitening, tensor, whitening)
    return np.einsum('...apq,...apq->...', white, white)


def tangential_normal(jet: Jet, gamma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split the Hessian into its tangential (Gamma J) and normal parts."""
    tangential = np.einsum('...ak,...kmn->...amn', jet.jacobian, gamma)
    return tangential, jet.hessian - tangential


def curvatures(jet: Jet, g_inverse: np.ndarray,
               gamma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parameter-effects and extrinsic curvature scalars (raw contractions).

    Returns:
        (L_PE, L_EX), both nonnegative
    """
    tangential, normal = tangential_normal(jet, gamma)
    whitening = np.linalg.cholesky(g_inverse)
    return _contracted_norm(tangential, whitening), _contracted_norm(normal, whitening)


def full_contraction(jet: Jet, g_inverse: np.ndarray) -> np.ndarray:
    """Contracted squared norm of the whole Hessian; equals L_PE + L_EX without jitter."""
    return _contracted_norm(jet.hessian, np.linalg.cholesky(g_inverse))


def geometry_at_point(jet: Jet, jitter_scale: float = DEFAULT_JITTER,
                      points: Optional[np.ndarray] = None) -> GeometryAtPoint:
    """Metric, Christoffel symbols and both curvature scalars in one pass."""
    g, g_inv, jitter = metric_from_jet(jet, jitter_scale, points)
    gamma = christoffel(jet, g_inv)
    pe, ex = curvatures(jet, g_inv, gamma)
    return GeometryAtPoint(g, g_inv, gamma, pe, ex, jitter)


def tangent_angles(jet_a: Jet, jet_b: Jet) -> np.ndarray:
    """Principal angles (radians, ascending) between the tangent spaces of two points."""
    for jet in (jet_a, jet_b):
        if jet.jacobian.ndim != 2:
            raise ShapeError("tangent_angles takes single-point jets")
        if np.linalg.matrix_rank(jet.jacobian) < jet.latent_dim:
            raise DegenerateTangentError(
                f"Jacobian has rank {np.linalg.matrix_rank(jet.jacobian)} < {jet.latent_dim}"
            )
    return np.sort(subspace_angles(jet_a.jacobian, jet_b.jacobian))


def _direction_candidates(m: int) -> np.ndarray:
    rng = np.random.default_rng(0)
    candidates = np.vstack([np.eye(m), rng.standard_normal((N_DIRECTION_CANDIDATES, m))])
    return candidates / np.linalg.norm(candidates, axis=1, keepdims=True)


def _max_directional(tensor: np.ndarray, whitening: np.ndarray) -> float:
    white = np.einsum('mp,amn,nq->apq', whitening, tensor, whitening)
    m = white.shape[-1]

    def norm_sq(u: np.ndarray) -> float:
        u = u / np.linalg.norm(u)
        bent = np.einsum('apq,p,q->a', white, u, u)
        return float(bent @ bent)

    candidates = _direction_candidates(m)
    scores = np.einsum('apq,kp,kq->ka', white, candidates, candidates)
    scores = np.einsum('ka,ka->k', scores, scores)
    best = candidates[int(np.argmax(scores))]
    if m > 1:
        result = minimize(lambda u: -norm_sq(u), best, method='BFGS')
        if -result.fun > norm_sq(best):
            best = result.x
    return float(np.sqrt(norm_sq(best)))


def directional_curvatures(jet: Jet, geometry: GeometryAtPoint) -> Tuple[float, float]:
    """
    Largest curvature over unit tangent directions at a single point.

    For a g-unit direction v the parameter-effects curvature is |T(v, v)| and the
    extrinsic curvature |P(v, v)|, with T and P the tangential and normal Hessian parts.
    """
    whitening = np.linalg.cholesky(geometry.metric_inverse)
    tangential, normal = tangential_normal(jet, geometry.christoffel)
    return _max_directional(tangential, whitening), _max_directional(normal, whitening)


def tangent_loadings(jet: Jet, direction: Sequence[float], feature_names: Sequence[str],
                     top: int = 20) -> List[Tuple[str, float]]:
    """Features ranked by the magnitude of the unit tangent vector J v."""
    tangent = jet.jacobian @ np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(tangent)
    if norm == 0:
        raise DegenerateTangentError("tangent vector along direction is zero")
    tangent = tangent / norm
    order = np.argsort(-np.abs(tangent), kind='stable')[:top]
    return [(feature_names[i], float(tangent[i])) for i in order]


def _evaluate_chunk(decoder: MlpModel, points: np.ndarray,
                    jitter_scale: float) -> Tuple[Jet, GeometryAtPoint]:
    jet = decoder_jet(decoder, points)
    return jet, geometry_at_point(jet, jitter_scale, points)


def evaluate_points(decoder: MlpModel, points: np.ndarray, jitter_scale: float = DEFAULT_JITTER,
                    workers: int = 1, chunk_size: int = 256) -> Tuple[Jet, GeometryAtPoint]:
    """
    Jets and geometry at many latent points, chunked across a thread pool.

    Chunks are reassembled in input order so results do not depend on ``workers``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    chunks = [points[i:i + chunk_size] for i in range(0, len(points), chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _evaluate_chunk(decoder, c, jitter_scale), chunks))
    else:
        results = [_evaluate_chunk(decoder, c, jitter_scale) for c in chunks]
    logger.debug(f"Evaluated geometry at {len(points)} points in {len(chunks)} chunks")

    jets = [r[0] for r in results]
    geos = [r[1] for r in results]
    jet = Jet(*(np.concatenate([getattr(j, name) for j in jets])
                for name in ('value', 'jacobian', 'hessian')))
    geometry = GeometryAtPoint(*(np.concatenate([getattr(g, name) for g in geos])
                                 for name in ('metric', 'metric_inverse', 'christoffel',
                                              'pe_curvature', 'ex_curvature', 'jitter_used')))
    return jet, geometry
