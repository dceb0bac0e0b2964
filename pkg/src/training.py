"""Gamma-VAE loss, exact gradients and the training loop."""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    DivergedTrainingError,
    DomainError,
    InsufficientPointsError,
    ShapeError,
    SingularMetricError,
)
from .geometry import christoffel, curvatures, evaluate_points, metric_from_jet
from .jets import (
    ModelPair,
    backward,
    decoder_jet_with_cache,
    encoder_forward,
    forward_with_cache,
    init_model_pair,
    jet_backward,
)

logger = logging.getLogger(__name__)

ALL_TERMS = ('recon', 'kl', 'pe', 'ex')
ADAM_EPSILON = 1e-8
METRICS_HEADER = ['epoch', 'recon', 'kl', 'pe_mean', 'ex_mean', 'pe_max_sqrt', 'ex_max_sqrt', 'loss']


@dataclass(frozen=True)
class TrainingConfig:
    """Loss weights, optimizer, sampler and architecture settings."""

    beta: float = 0.01
    gamma: float = 1e-3
    delta: float = 1e-3
    m_samples: int = 16
    sampler_scale: float = 2.0
    learning_rate: float = 1e-3
    first_moment_decay: float = 0.9
    second_moment_decay: float = 0.999
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    jitter_scale: float = 1e-6
    latent_dim: int = 2
    hidden_dims: Tuple[int, ...] = (32, 32)

    def __post_init__(self):
        for name in ('beta', 'gamma', 'delta', 'sampler_scale', 'jitter_scale'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ('m_samples', 'epochs', 'batch_size', 'latent_dim'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ('first_moment_decay', 'second_moment_decay'):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive, got {list(self.hidden_dims)}")

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> 'TrainingConfig':
        """Build from a mapping whose keys are exactly field names."""
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        converted = {}
        for name, value in values.items():
            default = known[name].default
            try:
                if isinstance(value, bool):
                    raise TypeError("booleans are not numbers")
                if name == 'hidden_dims':
                    converted[name] = tuple(_as_int(v) for v in value)
                elif isinstance(default, int):
                    converted[name] = _as_int(value)
                else:
                    converted[name] = float(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid value for {name}: {value!r} ({e})")
        return cls(**converted)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['hidden_dims'] = list(self.hidden_dims)
        return values

    @property
    def curvature_active(self) -> bool:
        return self.gamma > 0 or self.delta > 0


def _as_int(value: Any) -> int:
    if isinstance(value, float) and not value.is_integer():
        raise ValueError("expected an integer")
    return int(value)


@dataclass
class RandomStreams:
    """Independent generators derived from one seed."""

    init: np.random.Generator
    noise: np.random.Generator
    sampler: np.random.Generator
    shuffle: np.random.Generator


def derive_streams(seed: int) -> RandomStreams:
    init, noise, sampler, shuffle = (np.random.default_rng(s)
                                     for s in np.random.SeedSequence(seed).spawn(4))
    return RandomStreams(init, noise, sampler, shuffle)


@dataclass
class OptimizerState:
    """Adaptive-moment accumulators mirroring the model parameters."""

    first: List[np.ndarray]
    second: List[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: Sequence[np.ndarray]) -> 'OptimizerState':
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState,
              config: TrainingConfig) -> Tuple[List[np.ndarray], OptimizerState]:
    """One bias-corrected adaptive-moment update; returns new parameters and state."""
    b1, b2 = config.first_moment_decay, config.second_moment_decay
    step = state.step + 1
    first = [b1 * m + (1 - b1) * g for m, g in zip(state.first, grads)]
    second = [b2 * v + (1 - b2) * g * g for v, g in zip(state.second, grads)]
    new_params = []
    for p, m, v in zip(params, first, second):
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_params.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON))
    return new_params, OptimizerState(first, second, step)


def kl_divergence(mean: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(mean, exp(logvar)) || N(0, I)) summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return 0.5 * np.sum(mean ** 2 + np.exp(logvar) - 1.0 - logvar, axis=-1)


def reparameterize(mean: np.ndarray, logvar: np.ndarray, noise: np.ndarray) -> np.ndarray:
    return np.asarray(mean) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(noise)


def reconstruction_loss(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """Squared Euclidean error over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction shapes differ: {x.shape} vs {x_hat.shape}")
    return np.sum((x - x_hat) ** 2, axis=-1)


def sample_from_covariance(center: np.ndarray, covariance: np.ndarray, m_samples: int,
                           sampler_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws in the box spanned by the scaled principal axes of ``covariance``."""
    eigvals, eigvecs = np.linalg.eigh(covariance)
    half_widths = sampler_scale * np.sqrt(np.clip(eigvals, 0.0, None))
    u = rng.uniform(-1.0, 1.0, size=(m_samples, len(center)))
    return center + (u * half_widths) @ eigvecs.T


def sample_curvature_points(latent_means: np.ndarray, m_samples: int, sampler_scale: float,
                            rng: np.random.Generator) -> np.ndarray:
    """
    Latent points for the curvature penalty, drawn from the batch's embedding spread.

    The returned points carry no gradient back to the encoder.
    """
    latent_means = np.asarray(latent_means, dtype=np.float64)
    if latent_means.ndim != 2 or latent_means.shape[0] < 2:
        raise InsufficientPointsError(
            f"curvature sampling needs at least 2 embedded points, got {latent_means.shape[0]}"
        )
    center = latent_means.mean(axis=0)
    covariance = np.atleast_2d(np.cov(latent_means, rowvar=False, bias=True))
    if not (np.all(np.isfinite(center)) and np.all(np.isfinite(covariance))):
        raise DivergedTrainingError('embedding', float(np.sum(covariance)))
    return sample_from_covariance(center, covariance, m_samples, sampler_scale, rng)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values; penalties are the weighted curvature contributions."""

    recon: float
    kl: float
    pe_penalty: float
    ex_penalty: float
    pe_mean: float
    ex_mean: float
    pe_max: float
    ex_max: float
    total: float


def _times_inverse_metric(tensor: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    return np.einsum('...pm,...amn,...qn->...apq', g_inv, tensor, g_inv)


def _contraction_metric_grad(tensor: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    """d/dG of sum_a G G X X for one tensor X."""
    return (np.einsum('...nk,...apn,...aqk->...pq', g_inv, tensor, tensor)
            + np.einsum('...mk,...amp,...akq->...pq', g_inv, tensor, tensor))


def _sym_last(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def _curvature_jet_adjoints(jacobian: np.ndarray, hessian: np.ndarray, g_inv: np.ndarray,
                            gamma: np.ndarray, pe_weight: float, ex_weight: float,
                            jitter_scale: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Adjoints of pe_weight * sum L_PE + ex_weight * sum L_EX with respect to J and H.

    Reverses: g = J^T J + eps I, G = g^-1, A = J^T H, Gamma = G A, T = J Gamma, P = H - T.
    """
    m = jacobian.shape[-1]
    first_kind = np.einsum('...al,...amn->...lmn', jacobian, hessian)
    tangential = np.einsum('...ak,...kmn->...amn', jacobian, gamma)
    normal = hessian - tangential

    t_bar = 2.0 * pe_weight * _times_inverse_metric(tangential, g_inv)
    p_bar = 2.0 * ex_weight * _times_inverse_metric(normal, g_inv)
    g_inv_bar = (pe_weight * _contraction_metric_grad(tangential, g_inv)
                 + ex_weight * _contraction_metric_grad(normal, g_inv))

    h_bar = p_bar.copy()
    t_total = t_bar - p_bar
    j_bar = np.einsum('...amn,...kmn->...ak', t_total, gamma)
    gamma_bar = _sym_last(np.einsum('...ak,...amn->...kmn', jacobian, t_total))

    g_inv_bar = g_inv_bar + np.einsum('...kmn,...lmn->...kl', gamma_bar, first_kind)
    first_kind_bar = np.einsum('...kl,...kmn->...lmn', g_inv, gamma_bar)
    j_bar = j_bar + np.einsum('...lmn,...amn->...al', first_kind_bar, hessian)
    h_bar = h_bar + np.einsum('...al,...lmn->...amn', jacobian, first_kind_bar)

    g_inv_bar = _sym_last(g_inv_bar)
    g_bar = -g_inv @ g_inv_bar @ g_inv
    trace_bar = np.trace(g_bar, axis1=-2, axis2=-1)
    g0_bar = g_bar + (jitter_scale / m) * trace_bar[..., None, None] * np.eye(m)
    g0_bar = _sym_last(g0_bar)
    j_bar = j_bar + 2.0 * jacobian @ g0_bar
    return j_bar, h_bar


def _check_finite(term: str, value: float) -> None:
    if not np.isfinite(value):
        raise DivergedTrainingError(term, float(value))


def _evaluate(models: ModelPair, batch: np.ndarray, curvature_points: Optional[np.ndarray],
              config: TrainingConfig, rng: np.random.Generator, terms: Iterable[str],
              with_gradient: bool) -> Tuple[float, LossBreakdown, Optional[List[np.ndarray]]]:
    terms = set(terms)
    unknown = terms - set(ALL_TERMS)
    if unknown:
        raise DomainError(f"unknown loss terms: {sorted(unknown)}")
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[-1] != models.data_dim:
        raise ShapeError(f"batch has {batch.shape[-1]} features, model expects {models.data_dim}")
    n_batch = batch.shape[0]
    m = models.latent_dim

    enc_out, enc_cache = forward_with_cache(models.encoder, batch)
    mean, logvar = enc_out[:, :m], enc_out[:, m:]
    noise = rng.standard_normal((n_batch, m))
    z = reparameterize(mean, logvar, noise)
    x_hat, dec_cache = forward_with_cache(models.decoder, z)

    recon = float(np.mean(reconstruction_loss(batch, x_hat)))
    kl = float(np.mean(kl_divergence(mean, logvar)))
    _check_finite('recon', recon)
    _check_finite('kl', kl)
    recon_term = recon if 'recon' in terms else 0.0
    kl_term = config.beta * kl if 'kl' in terms else 0.0

    pe_weight = config.gamma if 'pe' in terms else 0.0
    ex_weight = config.delta if 'ex' in terms else 0.0
    pe_mean = ex_mean = pe_max = ex_max = 0.0
    pe_penalty = ex_penalty = 0.0
    curvature_state = None
    penalized = pe_weight > 0 or ex_weight > 0
    if curvature_points is not None and len(curvature_points) > 0:
        points = np.atleast_2d(np.asarray(curvature_points, dtype=np.float64))
        try:
            jet, jet_cache = decoder_jet_with_cache(models.decoder, points)
            _, g_inv, _ = metric_from_jet(jet, config.jitter_scale, points)
        except DomainError as e:
            # only non-finite jets get here: the decoder derivatives overflowed
            if penalized:
                raise DivergedTrainingError('pe' if pe_weight > 0 else 'ex', float('inf')) from e
            logger.debug(f"Curvature diagnostics skipped: {e}")
            pe_mean = ex_mean = pe_max = ex_max = float('nan')
        except SingularMetricError as e:
            if penalized:
                raise
            logger.debug(f"Curvature diagnostics skipped: {e}")
            pe_mean = ex_mean = pe_max = ex_max = float('nan')
        else:
            gamma = christoffel(jet, g_inv)
            pe, ex = curvatures(jet, g_inv, gamma)
            pe_mean, ex_mean = float(np.mean(pe)), float(np.mean(ex))
            pe_max, ex_max = float(np.max(pe)), float(np.max(ex))
            if pe_weight > 0:
                pe_penalty = pe_weight * pe_mean
                _check_finite('pe', pe_penalty)
            if ex_weight > 0:
                ex_penalty = ex_weight * ex_mean
                _check_finite('ex', ex_penalty)
            curvature_state = (jet, jet_cache, g_inv, gamma, len(points))

    total = recon_term + kl_term + pe_penalty + ex_penalty
    _check_finite('total', total)
    breakdown = LossBreakdown(recon, kl, pe_penalty, ex_penalty, pe_mean, ex_mean,
                              pe_max, ex_max, total)
    if not with_gradient:
        return total, breakdown, None

    # ELBO part through the reparameterized sample
    x_hat_bar = np.zeros_like(x_hat)
    if 'recon' in terms:
        x_hat_bar = -2.0 * (batch - x_hat) / n_batch
    dec_grads, z_bar = backward(models.decoder, dec_cache, x_hat_bar)
    sigma = np.exp(0.5 * logvar)
    mean_bar = z_bar.copy()
    logvar_bar = 0.5 * z_bar * noise * sigma
    if 'kl' in terms:
        mean_bar += config.beta * mean / n_batch
        logvar_bar += config.beta * 0.5 * (np.exp(logvar) - 1.0) / n_batch
    enc_grads, _ = backward(models.encoder, enc_cache, np.concatenate([mean_bar, logvar_bar], axis=1))

    if curvature_state is not None and (pe_weight > 0 or ex_weight > 0):
        jet, jet_cache, g_inv, gamma, n_points = curvature_state
        j_bar, h_bar = _curvature_jet_adjoints(
            jet.jacobian, jet.hessian, g_inv, gamma,
            pe_weight / n_points, ex_weight / n_points, config.jitter_scale,
        )
        curv_grads = jet_backward(models.decoder, jet_cache, None, j_bar, h_bar)
        dec_grads = [g + c for g, c in zip(dec_grads, curv_grads)]

    return total, breakdown, enc_grads + dec_grads


def total_loss(models: ModelPair, batch: np.ndarray, curvature_points: Optional[np.ndarray],
               config: TrainingConfig, rng: np.random.Generator,
               terms: Iterable[str] = ALL_TERMS) -> Tuple[float, LossBreakdown]:
    """
    Negative ELBO on ``batch`` plus the averaged curvature penalty.

    Args:
        models: Encoder/decoder pair
        batch: B x N data batch
        curvature_points: M x m latent points (treated as constants)
        config: Loss weights and jitter
        rng: Stream for the reparameterization noise
        terms: Subset of ('recon', 'kl', 'pe', 'ex') to include

    Returns:
        (total loss, per-term breakdown)
    """
    total, breakdown, _ = _evaluate(models, batch, curvature_points, config, rng, terms, False)
    return total, breakdown


def loss_and_gradient(models: ModelPair, batch: np.ndarray, curvature_points: Optional[np.ndarray],
                      config: TrainingConfig, rng: np.random.Generator,
                      terms: Iterable[str] = ALL_TERMS
                      ) -> Tuple[float, LossBreakdown, List[np.ndarray]]:
    """Loss, breakdown and exact gradient in ``models.parameters()`` order."""
    return _evaluate(models, batch, curvature_points, config, rng, terms, True)


def loss_gradient(models: ModelPair, batch: np.ndarray, curvature_points: Optional[np.ndarray],
                  config: TrainingConfig, rng: np.random.Generator,
                  terms: Iterable[str] = ALL_TERMS) -> List[np.ndarray]:
    """Exact gradient of ``total_loss`` for every encoder and decoder parameter."""
    return _evaluate(models, batch, curvature_points, config, rng, terms, True)[2]


@dataclass(frozen=True)
class CurvatureSummary:
    pe_mean: float
    ex_mean: float
    pe_max: float
    ex_max: float


def curvature_summary(models: ModelPair, points: np.ndarray, jitter_scale: float = 1e-6,
                      workers: int = 1) -> CurvatureSummary:
    """Mean and max curvature scalars of the decoder at ``points``."""
    _, geometry = evaluate_points(models.decoder, points, jitter_scale, workers)
    pe, ex = geometry.pe_curvature, geometry.ex_curvature
    return CurvatureSummary(float(np.mean(pe)), float(np.mean(ex)), float(np.max(pe)), float(np.max(ex)))


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    recon: float
    kl: float
    pe_mean: float
    ex_mean: float
    pe_max_sqrt: float
    ex_max_sqrt: float
    loss: float

    def row(self) -> List[Any]:
        return [getattr(self, name) for name in METRICS_HEADER]


@dataclass
class _EpochAccumulator:
    n_samples: int = 0
    recon: float = 0.0
    kl: float = 0.0
    loss: float = 0.0
    pe_sum: float = 0.0
    ex_sum: float = 0.0
    n_steps: int = 0
    pe_max: float = 0.0
    ex_max: float = 0.0

    def add(self, breakdown: LossBreakdown, batch_size: int) -> None:
        self.n_samples += batch_size
        self.recon += breakdown.recon * batch_size
        self.kl += breakdown.kl * batch_size
        self.loss += breakdown.total * batch_size
        self.n_steps += 1
        self.pe_sum += breakdown.pe_mean
        self.ex_sum += breakdown.ex_mean
        self.pe_max = float(np.maximum(self.pe_max, breakdown.pe_max))
        self.ex_max = float(np.maximum(self.ex_max, breakdown.ex_max))

    def finish(self, epoch: int) -> EpochMetrics:
        return EpochMetrics(
            epoch=epoch,
            recon=self.recon / self.n_samples,
            kl=self.kl / self.n_samples,
            pe_mean=self.pe_sum / self.n_steps,
            ex_mean=self.ex_sum / self.n_steps,
            pe_max_sqrt=float(np.sqrt(self.pe_max)),
            ex_max_sqrt=float(np.sqrt(self.ex_max)),
            loss=self.loss / self.n_samples,
        )


def train(matrix: np.ndarray, config: TrainingConfig,
          models: Optional[ModelPair] = None) -> Tuple[ModelPair, List[EpochMetrics]]:
    """
    Minimize the Gamma-VAE loss with adaptive-moment updates.

    Args:
        matrix: n x N training data (already normalized)
        config: Training settings; the seed fixes every random stream
        models: Optional starting point (default: fresh initialization from the seed)

    Returns:
        (trained model pair, per-epoch metrics)
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n_samples, data_dim = matrix.shape
    if n_samples == 0:
        raise InsufficientPointsError("training data is empty")
    if config.batch_size > n_samples:
        raise ConfigError(f"batch_size {config.batch_size} exceeds dataset size {n_samples}")
    if config.batch_size < 2:
        raise ConfigError("batch_size must be at least 2 for curvature sampling")

    streams = derive_streams(config.seed)
    if models is None:
        models = init_model_pair(data_dim, config.latent_dim, config.hidden_dims, streams.init)
    state = OptimizerState.zeros(models.parameters())
    n_batches = n_samples // config.batch_size
    log: List[EpochMetrics] = []
    logger.info(f"Training on {n_samples} x {data_dim} data: {config.epochs} epochs, "
                f"{n_batches} batches/epoch, beta={config.beta}, gamma={config.gamma}, "
                f"delta={config.delta}")

    for epoch in range(1, config.epochs + 1):
        acc = _EpochAccumulator()
        order = streams.shuffle.permutation(n_samples)
        for indices in np.array_split(order, n_batches):
            batch = matrix[indices]
            means, _ = encoder_forward(models.encoder, batch)
            try:
                points = sample_curvature_points(means, config.m_samples, config.sampler_scale,
                                                 streams.sampler)
                _, breakdown, grads = loss_and_gradient(models, batch, points, config, streams.noise)
            except DivergedTrainingError as e:
                logger.error(f"Training diverged in epoch {epoch}: {e}")
                raise DivergedTrainingError(e.term, e.value, log)
            params, state = adam_step(models.parameters(), grads, state, config)
            models = models.with_parameters(params)
            acc.add(breakdown, len(indices))
            logger.debug(f"epoch {epoch} step {state.step}: loss {breakdown.total:.6g}")
        metrics = acc.finish(epoch)
        log.append(metrics)
        logger.info(f"Epoch {epoch}: loss {metrics.loss:.6g}, recon {metrics.recon:.6g}, "
                    f"kl {metrics.kl:.6g}, pe {metrics.pe_mean:.3g}, ex {metrics.ex_mean:.3g}")
    return models, log


def sweep_regularization(matrix: np.ndarray, config: TrainingConfig,
                         values: Sequence[Tuple[float, float]]) -> List[Dict[str, float]]:
    """Train once per (gamma, delta) pair and report the final epoch's metrics."""
    rows = []
    for gamma, delta in values:
        logger.info(f"Sweep: gamma={gamma}, delta={delta}")
        _, log = train(matrix, replace(config, gamma=float(gamma), delta=float(delta)))
        final = log[-1]
        row = {'gamma': float(gamma), 'delta': float(delta)}
        row.update({name: getattr(final, name) for name in METRICS_HEADER})
        rows.append(row)
    return rows
