"""Jets (value, Jacobian, Hessian) of MLP decoders and analytic test manifolds.

All arrays are float64. Jet arrays may carry leading batch axes: ``value`` has
shape (..., N), ``jacobian`` (..., N, m) and ``hessian`` (..., N, m, m).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import DomainError, ParseError, ShapeError

logger = logging.getLogger(__name__)

SOFTPLUS_THRESHOLD = 30.0
CHECKPOINT_VERSION = 1
ACTIVATIONS = ('softplus', 'identity')
ROLES = ('encoder', 'decoder')

ArrayLike = Union[float, Sequence[float], np.ndarray]


def softplus_jet(x: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Softplus value with its first and second derivatives.

    Args:
        x: Finite scalar or array

    Returns:
        (ln(1+e^x), logistic(x), logistic(x)(1-logistic(x))), scalars for scalar input
    """
    x = np.asarray(x, dtype=np.float64)
    big = x > SOFTPLUS_THRESHOLD
    value = np.empty_like(x)
    value[big] = x[big] + np.log1p(np.exp(-x[big]))
    value[~big] = np.log1p(np.exp(x[~big]))
    first = expit(x)
    second = first * expit(-x)
    if x.ndim == 0:
        return value[()], first[()], second[()]
    return value, first, second


def _softplus_third(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return s * expit(-x) * (1.0 - 2.0 * s)


def _activate(name: str, y: np.ndarray, order: int = 0) -> List[np.ndarray]:
    """Activation value and derivatives up to ``order`` (max 3)."""
    if name == 'identity':
        derivs = [y, np.ones_like(y), np.zeros_like(y), np.zeros_like(y)]
        return derivs[:order + 1]
    value, first, second = softplus_jet(y)
    derivs = [value, first, second]
    if order >= 3:
        derivs.append(_softplus_third(y))
    return derivs[:order + 1]


@dataclass(frozen=True)
class Jet:
    """Value, Jacobian and Hessian of a map R^m -> R^N at one (or a batch of) latent points."""

    value: np.ndarray
    jacobian: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        n_out, m = self.jacobian.shape[-2:]
        if self.value.shape[-1] != n_out or self.hessian.shape[-3:] != (n_out, m, m):
            raise ShapeError(
                f"inconsistent jet shapes: value {self.value.shape}, "
                f"jacobian {self.jacobian.shape}, hessian {self.hessian.shape}"
            )
        for name in ('value', 'jacobian', 'hessian'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"jet {name} contains non-finite entries")

    @property
    def data_dim(self) -> int:
        return self.jacobian.shape[-2]

    @property
    def latent_dim(self) -> int:
        return self.jacobian.shape[-1]

    def __getitem__(self, index) -> 'Jet':
        """Select points from a batched jet."""
        return Jet(self.value[index], self.jacobian[index], self.hessian[index])


@dataclass(frozen=True)
class MlpModel:
    """Fully connected network: softplus hidden layers, identity output layer."""

    layer_dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    role: str
    hidden_activation: str = 'softplus'
    output_activation: str = 'identity'

    def __post_init__(self):
        if self.role not in ROLES:
            raise DomainError(f"unknown model role {self.role!r}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise DomainError(f"unsupported activation {act!r}")
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ShapeError(f"layer dims must be >= 2 positive integers, got {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError(f"{len(dims) - 1} layers expected, got "
                             f"{len(self.weights)} weights and {len(self.biases)} biases")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} do not match "
                                 f"dims {dims[i]} -> {dims[i + 1]}")
        object.__setattr__(self, 'layer_dims', dims)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def activation(self, layer: int) -> str:
        return self.output_activation if layer == self.n_layers - 1 else self.hidden_activation

    def parameters(self) -> List[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...]."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> 'MlpModel':
        return MlpModel(
            layer_dims=self.layer_dims,
            weights=tuple(np.asarray(p, dtype=np.float64) for p in params[0::2]),
            biases=tuple(np.asarray(p, dtype=np.float64) for p in params[1::2]),
            role=self.role,
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
        )


@dataclass(frozen=True)
class ModelPair:
    """Encoder q(z|x) and decoder f(z) sharing a latent dimension."""

    encoder: MlpModel
    decoder: MlpModel

    def __post_init__(self):
        if self.encoder.role != 'encoder' or self.decoder.role != 'decoder':
            raise DomainError("model pair needs an encoder and a decoder")
        if self.encoder.output_dim != 2 * self.decoder.input_dim:
            raise ShapeError(f"encoder output {self.encoder.output_dim} must be twice "
                             f"the decoder input {self.decoder.input_dim}")
        if self.encoder.input_dim != self.decoder.output_dim:
            raise ShapeError(f"encoder input {self.encoder.input_dim} differs from "
                             f"decoder output {self.decoder.output_dim}")

    @property
    def latent_dim(self) -> int:
        return self.decoder.input_dim

    @property
    def data_dim(self) -> int:
        return self.decoder.output_dim

    def parameters(self) -> List[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()

    def with_parameters(self, params: Sequence[np.ndarray]) -> 'ModelPair':
        n_enc = 2 * self.encoder.n_layers
        return ModelPair(self.encoder.with_parameters(params[:n_enc]),
                         self.decoder.with_parameters(params[n_enc:]))


def init_mlp(layer_dims: Sequence[int], role: str, rng: np.random.Generator) -> MlpModel:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(layer_dims), tuple(weights), tuple(biases), role)


def init_model_pair(data_dim: int, latent_dim: int, hidden_dims: Sequence[int],
                    rng: np.random.Generator) -> ModelPair:
    """Encoder N -> hidden -> 2m and mirrored decoder m -> hidden -> N."""
    hidden = [int(h) for h in hidden_dims]
    encoder = init_mlp([data_dim, *hidden, 2 * latent_dim], 'encoder', rng)
    decoder = init_mlp([latent_dim, *reversed(hidden), data_dim], 'decoder', rng)
    return ModelPair(encoder, decoder)


def _check_input(model: MlpModel, x: np.ndarray, role: Optional[str] = None) -> np.ndarray:
    if role is not None and model.role != role:
        raise DomainError(f"expected a {role} model, got {model.role}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != model.input_dim:
        raise ShapeError(f"{model.role} expects input dim {model.input_dim}, got shape {x.shape}")
    return x


def forward(model: MlpModel, x: ArrayLike) -> np.ndarray:
    """Plain forward pass over the last axis of ``x``."""
    a = _check_input(model, x)
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        y = a @ w.T + b
        a = _activate(model.activation(layer), y)[0]
    return a


def decode(model: MlpModel, z: ArrayLike) -> np.ndarray:
    """Decoder forward pass without derivatives."""
    _check_input(model, z, role='decoder')
    return forward(model, z)


def encoder_forward(model: MlpModel, x: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Split the encoder output into (mean, logvar), mean first."""
    out = forward(model, _check_input(model, x, role='encoder'))
    m = out.shape[-1] // 2
    return out[..., :m], out[..., m:]


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations from a value-only pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    preacts: List[np.ndarray] = field(default_factory=list)


def forward_with_cache(model: MlpModel, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Batched forward pass (x: B x d) remembering what backward needs."""
    cache = ForwardCache()
    a = _check_input(model, x)
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        cache.inputs.append(a)
        y = a @ w.T + b
        cache.preacts.append(y)
        a = _activate(model.activation(layer), y)[0]
    return a, cache


def backward(model: MlpModel, cache: ForwardCache,
             out_bar: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Reverse pass of ``forward_with_cache``.

    Args:
        model: The model that produced the cache
        cache: Forward cache
        out_bar: Adjoint of the output, same shape as the output

    Returns:
        (parameter gradients in ``model.parameters()`` order, input adjoint)
    """
    grads: List[np.ndarray] = [None] * (2 * model.n_layers)
    a_bar = out_bar
    for layer in reversed(range(model.n_layers)):
        y = cache.preacts[layer]
        first = _activate(model.activation(layer), y, order=1)[1]
        y_bar = a_bar * first
        grads[2 * layer] = y_bar.T @ cache.inputs[layer]
        grads[2 * layer + 1] = y_bar.sum(axis=0)
        a_bar = y_bar @ model.weights[layer]
    return grads, a_bar


def _symmetrize(h: np.ndarray) -> np.ndarray:
    return 0.5 * (h + np.swapaxes(h, -1, -2))


@dataclass
class JetCache:
    """Per-layer affine inputs (v, J, H), pre-activation jets and activation derivatives."""

    inputs: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    preacts: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)


def _propagate(model: MlpModel, z: np.ndarray,
               cache: Optional[JetCache] = None) -> Jet:
    m = model.input_dim
    v = z
    jac = np.broadcast_to(np.eye(m), z.shape[:-1] + (m, m)).copy()
    hess = np.zeros(z.shape[:-1] + (m, m, m))
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        if cache is not None:
            cache.inputs.append((v, jac, hess))
        y = v @ w.T + b
        jy = w @ jac
        hy = np.einsum('ab,...bmn->...amn', w, hess)
        if cache is not None:
            cache.preacts.append((y, jy, hy))
        if model.activation(layer) == 'identity':
            v, jac, hess = y, jy, _symmetrize(hy)
            continue
        v, s1, s2 = _activate(model.activation(layer), y, order=2)
        jac = s1[..., None] * jy
        hess = (s2[..., None, None] * jy[..., :, None] * jy[..., None, :]
                + s1[..., None, None] * hy)
        hess = _symmetrize(hess)
    return Jet(v, jac, hess)


def decoder_jet(model: MlpModel, z: ArrayLike) -> Jet:
    """
    Exact jet of the decoder at ``z`` by layer-wise propagation.

    The seed jet is J = I, H = 0; affine layers contract W into J and H, elementwise
    layers apply the chain rule with phi' and phi''.
    """
    z = _check_input(model, z, role='decoder')
    return _propagate(model, z)


def decoder_jet_with_cache(model: MlpModel, z: np.ndarray) -> Tuple[Jet, JetCache]:
    z = _check_input(model, z, role='decoder')
    cache = JetCache()
    return _propagate(model, z, cache), cache


def _flat(x: np.ndarray, core: int) -> np.ndarray:
    """Collapse all leading batch axes (none for a single point) into one."""
    return x.reshape((-1,) + x.shape[x.ndim - core:])


def jet_backward(model: MlpModel, cache: JetCache, value_bar: Optional[np.ndarray],
                 jacobian_bar: np.ndarray, hessian_bar: np.ndarray) -> List[np.ndarray]:
    """
    Parameter gradients of a scalar function of the output jet.

    Args:
        model: Decoder that produced ``cache``
        cache: Cache from ``decoder_jet_with_cache``
        value_bar, jacobian_bar, hessian_bar: Adjoints of the output jet
            (value_bar may be None when the loss does not depend on the value)

    Returns:
        Gradients in ``model.parameters()`` order, summed over batch axes
    """
    grads: List[np.ndarray] = [None] * (2 * model.n_layers)
    v_bar = np.zeros(cache.preacts[-1][0].shape) if value_bar is None else value_bar
    j_bar = jacobian_bar
    h_bar = _symmetrize(hessian_bar)
    for layer in reversed(range(model.n_layers)):
        y, jy, hy = cache.preacts[layer]
        if model.activation(layer) == 'identity':
            y_bar, jy_bar, hy_bar = v_bar, j_bar, h_bar
        else:
            _, s1, s2, s3 = _activate(model.activation(layer), y, order=3)
            # H' = s2 * (jy x jy) + s1 * hy, J' = s1 * jy, v' = phi(y)
            s1_bar = (np.einsum('...am,...am->...a', j_bar, jy)
                      + np.einsum('...amn,...amn->...a', h_bar, hy))
            s2_bar = np.einsum('...amn,...am,...an->...a', h_bar, jy, jy)
            jy_bar = (s1[..., None] * j_bar
                      + s2[..., None] * np.einsum('...amn,...an->...am',
                                                  h_bar + np.swapaxes(h_bar, -1, -2), jy))
            hy_bar = s1[..., None, None] * h_bar
            y_bar = s1 * v_bar + s2 * s1_bar + s3 * s2_bar
        v, jac, hess = cache.inputs[layer]
        w = model.weights[layer]
        # flatten batch axes so the weight gradient sums over every point
        grads[2 * layer] = (np.einsum('za,zb->ab', _flat(y_bar, 1), _flat(v, 1))
                            + np.einsum('zam,zbm->ab', _flat(jy_bar, 2), _flat(jac, 2))
                            + np.einsum('zamn,zbmn->ab', _flat(hy_bar, 3), _flat(hess, 3)))
        grads[2 * layer + 1] = y_bar.reshape(-1, y_bar.shape[-1]).sum(axis=0)
        if layer > 0:
            v_bar = y_bar @ w
            j_bar = np.einsum('ab,...am->...bm', w, jy_bar)
            h_bar = _symmetrize(np.einsum('ab,...amn->...bmn', w, hy_bar))
    return grads


@dataclass(frozen=True)
class AnalyticManifold:
    """Closed-form test manifold: plane(A, b), polar_sheet or sphere(R)."""

    kind: str
    matrix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    radius: float = 1.0

    @classmethod
    def plane(cls, matrix: ArrayLike, offset: Optional[ArrayLike] = None) -> 'AnalyticManifold':
        a = np.asarray(matrix, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"plane matrix must be 2-D, got shape {a.shape}")
        b = np.zeros(a.shape[0]) if offset is None else np.asarray(offset, dtype=np.float64)
        if b.shape != (a.shape[0],):
            raise ShapeError(f"plane offset must have length {a.shape[0]}")
        return cls('plane', matrix=a, offset=b)

    @classmethod
    def polar_sheet(cls) -> 'AnalyticManifold':
        return cls('polar_sheet')

    @classmethod
    def sphere(cls, radius: float = 1.0) -> 'AnalyticManifold':
        if not radius > 0:
            raise DomainError(f"sphere radius must be positive, got {radius}")
        return cls('sphere', radius=float(radius))

    @property
    def latent_dim(self) -> int:
        return self.matrix.shape[1] if self.kind == 'plane' else 2


def analytic_jet(manifold: AnalyticManifold, z: ArrayLike) -> Jet:
    """Exact closed-form jet of an analytic manifold at ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] != manifold.latent_dim:
        raise ShapeError(f"{manifold.kind} expects latent dim {manifold.latent_dim}, got {z.shape}")
    batch = z.shape[:-1]

    if manifold.kind == 'plane':
        a = manifold.matrix
        n, m = a.shape
        value = z @ a.T + manifold.offset
        jac = np.broadcast_to(a, batch + (n, m)).copy()
        return Jet(value, jac, np.zeros(batch + (n, m, m)))

    if manifold.kind == 'polar_sheet':
        r, theta = z[..., 0], z[..., 1]
        if np.any(r <= 0):
            raise DomainError("polar_sheet chart requires r > 0")
        c, s = np.cos(theta), np.sin(theta)
        zero = np.zeros_like(r)
        value = np.stack([r * c, r * s], axis=-1)
        jac = np.stack([np.stack([c, -r * s], axis=-1),
                        np.stack([s, r * c], axis=-1)], axis=-2)
        hess = np.stack([
            np.stack([np.stack([zero, -s], -1), np.stack([-s, -r * c], -1)], -2),
            np.stack([np.stack([zero, c], -1), np.stack([c, -r * s], -1)], -2),
        ], axis=-3)
        return Jet(value, jac, hess)

    if manifold.kind == 'sphere':
        u, v = z[..., 0], z[..., 1]
        if np.any((u <= 0) | (u >= np.pi)):
            raise DomainError("sphere chart requires 0 < u < pi")
        radius = manifold.radius
        su, cu, sv, cv = np.sin(u), np.cos(u), np.sin(v), np.cos(v)
        zero = np.zeros_like(u)
        value = radius * np.stack([su * cv, su * sv, cu], axis=-1)
        f_u = radius * np.stack([cu * cv, cu * sv, -su], axis=-1)
        f_v = radius * np.stack([-su * sv, su * cv, zero], axis=-1)
        f_uu = radius * np.stack([-su * cv, -su * sv, -cu], axis=-1)
        f_uv = radius * np.stack([-cu * sv, cu * cv, zero], axis=-1)
        f_vv = radius * np.stack([-su * cv, -su * sv, zero], axis=-1)
        jac = np.stack([f_u, f_v], axis=-1)
        hess = np.stack([np.stack([f_uu, f_uv], -1), np.stack([f_uv, f_vv], -1)], -2)
        return Jet(value, jac, hess)

    raise DomainError(f"unknown analytic manifold {manifold.kind!r}")


def _model_to_dict(model: MlpModel) -> dict:
    return {
        'dims': list(model.layer_dims),
        'weights': [w.ravel().tolist() for w in model.weights],
        'biases': [b.tolist() for b in model.biases],
    }


def _model_from_dict(payload: dict, role: str, activation: str) -> MlpModel:
    try:
        dims = [int(d) for d in payload['dims']]
        weights = tuple(np.asarray(w, dtype=np.float64).reshape(dims[i + 1], dims[i])
                        for i, w in enumerate(payload['weights']))
        biases = tuple(np.asarray(b, dtype=np.float64) for b in payload['biases'])
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ParseError(f"malformed {role} block in checkpoint: {e}")
    try:
        return MlpModel(tuple(dims), weights, biases, role, hidden_activation=activation)
    except (ShapeError, DomainError) as e:
        raise ParseError(f"invalid {role} in checkpoint: {e}")


def checkpoint_dict(models: ModelPair) -> dict:
    return {
        'version': CHECKPOINT_VERSION,
        'latent_dim': models.latent_dim,
        'encoder': _model_to_dict(models.encoder),
        'decoder': _model_to_dict(models.decoder),
        'activation': models.decoder.hidden_activation,
    }


def save_checkpoint(models: ModelPair, path: Union[str, Path]) -> None:
    """Write the model pair as a version-1 JSON checkpoint."""
    Path(path).write_text(json.dumps(checkpoint_dict(models)))
    logger.info(f"Checkpoint written: {path}")


def load_checkpoint(path: Union[str, Path]) -> ModelPair:
    """Read a version-1 JSON checkpoint."""
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as e:
        raise ParseError(f"cannot read checkpoint {path}: {e}")
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid checkpoint JSON in {path}: {e.msg}", line=e.lineno)
    if not isinstance(payload, dict):
        raise ParseError(f"checkpoint {path} must hold a JSON object")
    if payload.get('version') != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {payload.get('version')!r}")
    activation = payload.get('activation', 'softplus')
    encoder = _model_from_dict(payload.get('encoder', {}), 'encoder', activation)
    decoder = _model_from_dict(payload.get('decoder', {}), 'decoder', activation)
    try:
        models = ModelPair(encoder, decoder)
    except (ShapeError, DomainError) as e:
        raise ParseError(f"inconsistent checkpoint {path}: {e}")
    if models.latent_dim != payload.get('latent_dim'):
        raise ParseError(f"checkpoint latent_dim {payload.get('latent_dim')} does not match "
                         f"decoder input {models.latent_dim}")
    return models
