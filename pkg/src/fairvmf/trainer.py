"""The post-hoc embedding debiasing trainer.

A shallow MLP (affine, ReLU, affine, L2-normalize) maps input embeddings
to new unit-sphere embeddings and is trained jointly with the identity
centroids under :func:`fairvmf.fairloss.fair_vmf_loss` using Adam. The
whole loop is deterministic given the seed: weight init, centroid init
and the per-epoch shuffles all come from one PCG64 stream.

A trained model is serialized to a versioned binary checkpoint (magic
``FVMF-CKPT``); the per-epoch mean loss is exposed for the ``epoch,
mean_loss`` CSV diagnostic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .fairloss import FairKappas, IdentityTable, LossBatch, fair_vmf_loss

_CKPT_MAGIC = b"FVMF-CKPT"
_CKPT_VERSION = 1


class ZeroOutput(ValueError):
    """Raised when the MLP's pre-normalization output is numerically zero."""


class NonFiniteLoss(RuntimeError):
    """Raised when a training batch produces a non-finite loss."""

    def __init__(self, epoch: int, batch_index: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass(frozen=True)
class MlpConfig:
    """Layer sizes of the affine-relu-affine-normalize network."""

    d_in: int = 512
    hidden: int = 1024
    d_out: int = 512

    def __post_init__(self):
        for name in ("d_in", "hidden", "d_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; defaults follow the reference recipe
    (Adam, batch 1024, lr 0.01, 50 epochs)."""

    kappas: FairKappas
    epochs: int = 50
    batch_size: int = 1024
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValueError("Adam betas must lie in (0, 1)")
        if self.adam_epsilon <= 0.0:
            raise ValueError("adam_epsilon must be > 0")


@dataclass
class ModelState:
    """MLP weights, centroid table and Adam buffers.

    Parameter order (also the checkpoint block order): w1, b1, w2, b2,
    centroids.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    table: IdentityTable
    adam_m: list = field(default_factory=list)
    adam_v: list = field(default_factory=list)
    step: int = 0

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.table.centroids]

    @property
    def config(self) -> MlpConfig:
        return MlpConfig(d_in=self.w1.shape[0], hidden=self.w1.shape[1], d_out=self.w2.shape[1])


def init_model(mlp: MlpConfig, gender_of_identity, rng: np.random.Generator) -> ModelState:
    """Seeded init: He-uniform w1, Xavier-uniform w2, zero biases,
    standard-normal centroid parameters."""
    gender = np.asarray(gender_of_identity, dtype=np.int64)
    lim1 = np.sqrt(6.0 / mlp.d_in)
    w1 = rng.uniform(-lim1, lim1, size=(mlp.d_in, mlp.hidden))
    lim2 = np.sqrt(6.0 / (mlp.hidden + mlp.d_out))
    w2 = rng.uniform(-lim2, lim2, size=(mlp.hidden, mlp.d_out))
    centroids = rng.standard_normal((gender.shape[0], mlp.d_out))
    state = ModelState(
        w1=w1,
        b1=np.zeros(mlp.hidden),
        w2=w2,
        b2=np.zeros(mlp.d_out),
        table=IdentityTable(centroids=centroids, gender_of_identity=gender),
    )
    state.adam_m = [np.zeros_like(p) for p in state.parameters()]
    state.adam_v = [np.zeros_like(p) for p in state.parameters()]
    return state


def _forward(x: np.ndarray, state: ModelState):
    """Forward pass returning (unit outputs, cache for backward)."""
    pre1 = x @ state.w1 + state.b1
    act1 = np.maximum(pre1, 0.0)
    pre2 = act1 @ state.w2 + state.b2
    norms = np.linalg.norm(pre2, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise ZeroOutput("MLP produced a (near-)zero pre-normalization output")
    out = pre2 / norms
    return out, (x, pre1, act1, norms, out)


def mlp_forward(x, state: ModelState) -> np.ndarray:
    """Map inputs to unit-norm output embeddings.

    Accepts one vector (d_in,) or a batch (n, d_in); the output is
    normalize(w2 @ relu(w1 @ x + b1) + b2), unit within 1e-9.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if not np.all(np.isfinite(xb)):
        raise ValueError("non-finite input to mlp_forward")
    if xb.shape[1] != state.w1.shape[0]:
        raise ValueError(f"input dimension {xb.shape[1]} != d_in {state.w1.shape[0]}")
    out, _ = _forward(xb, state)
    return out[0] if single else out


def mlp_backward(state: ModelState, cache, grad_output: np.ndarray) -> list[np.ndarray]:
    """Gradients [dw1, db1, dw2, db2] from a cached forward pass.

    ``grad_output`` is the loss gradient w.r.t. the normalized outputs;
    the normalization is differentiated by projecting onto the tangent
    space at the output and dividing by the pre-normalization norm. Dead
    ReLU units (pre-activation < 0) pass no gradient.
    """
    x, pre1, act1, norms, out = cache
    grad_pre2 = (grad_output - np.sum(grad_output * out, axis=1, keepdims=True) * out) / norms
    grad_w2 = act1.T @ grad_pre2
    grad_b2 = grad_pre2.sum(axis=0)
    grad_act1 = grad_pre2 @ state.w2.T
    grad_pre1 = grad_act1 * (pre1 > 0.0)
    grad_w1 = x.T @ grad_pre1
    grad_b1 = grad_pre1.sum(axis=0)
    return [grad_w1, grad_b1, grad_w2, grad_b2]


def adam_step(state: ModelState, grads: list[np.ndarray], config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    params = state.parameters()
    if len(grads) != len(params):
        raise ValueError("one gradient array per parameter array required")
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.adam_m, state.adam_v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.adam_epsilon)


@dataclass(frozen=True)
class TrainResult:
    state: ModelState
    epoch_losses: list[float]


def train_batch(state: ModelState, x: np.ndarray, labels: np.ndarray, kappas: FairKappas):
    """Forward + loss + full backward for one batch.

    Returns (loss, gradients in parameter order).
    """
    out, cache = _forward(x, state)
    result = fair_vmf_loss(LossBatch(embeddings=out, labels=labels), state.table, kappas)
    return result.loss, mlp_backward(state, cache, result.grad_embeddings) + [result.grad_centroids]


def train(
    embeddings,
    labels,
    gender_of_identity,
    mlp: MlpConfig,
    config: TrainConfig,
) -> TrainResult:
    """Train the debiasing MLP plus centroids on a full dataset.

    Deterministic given (inputs, configs, seed): init and the per-epoch
    shuffle permutations are drawn from one seeded stream, batches are
    visited in order, and the last incomplete batch is kept.

    Raises
    ------
    NonFiniteLoss
        If any batch loss is non-finite (with the offending batch index).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("embeddings must be a nonempty (n, d_in) array")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must have one entry per embedding")
    gender = np.asarray(gender_of_identity, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= gender.shape[0]):
        raise ValueError("labels reference identities without a gender entry")
    if x.shape[1] != mlp.d_in:
        raise ValueError(f"embedding dimension {x.shape[1]} != mlp d_in {mlp.d_in}")

    rng = np.random.default_rng(config.seed)
    state = init_model(mlp, gender, rng)
    n = x.shape[0]
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = train_batch(state, x[idx], y[idx], config.kappas)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, batches, loss)
            adam_step(state, grads, config)
            total += loss
            batches += 1
        epoch_losses.append(total / batches)
        if not all(np.all(np.isfinite(p)) for p in state.parameters()):
            raise NonFiniteLoss(epoch, batches - 1, float("nan"))
    return TrainResult(state=state, epoch_losses=epoch_losses)


def loss_log_csv(epoch_losses) -> str:
    """The per-epoch loss diagnostic as ``epoch,mean_loss`` CSV text."""
    lines = ["epoch,mean_loss"]
    lines += [f"{i},{loss!r}" for i, loss in enumerate(epoch_losses)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, state: ModelState, config: TrainConfig) -> None:
    """Write a versioned binary checkpoint.

    Layout (all integers little-endian): magic ``FVMF-CKPT``, version u32,
    d_in/hidden/d_out/K u32, seed i64, epochs/batch_size u32, lr/beta1/
    beta2/epsilon/kappa0/kappa1 f64, K gender bytes, then float64 LE
    parameter blocks in order w1, b1, w2, b2, centroids.
    """
    cfg = state.config
    k = state.table.num_identities
    header = _CKPT_MAGIC + struct.pack(
        "<IIIIIqII6d",
        _CKPT_VERSION,
        cfg.d_in,
        cfg.hidden,
        cfg.d_out,
        k,
        config.seed,
        config.epochs,
        config.batch_size,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
        config.kappas.kappa0,
        config.kappas.kappa1,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(state.table.gender_of_identity.astype(np.uint8).tobytes())
        for p in state.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelState, TrainConfig]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValueError("not a FVMF-CKPT checkpoint")
    off = len(_CKPT_MAGIC)
    fixed = struct.calcsize("<IIIIIqII6d")
    (
        version,
        d_in,
        hidden,
        d_out,
        k,
        seed,
        epochs,
        batch_size,
        lr,
        beta1,
        beta2,
        eps,
        kappa0,
        kappa1,
    ) = struct.unpack_from("<IIIIIqII6d", blob, off)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += fixed
    gender = np.frombuffer(blob, dtype=np.uint8, count=k, offset=off).astype(np.int64)
    off += k
    shapes = [(d_in, hidden), (hidden,), (hidden, d_out), (d_out,), (k, d_out)]
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
        params.append(arr)
    if off != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    w1, b1, w2, b2, centroids = params
    state = ModelState(
        w1=w1, b1=b1, w2=w2, b2=b2,
        table=IdentityTable(centroids=centroids, gender_of_identity=gender),
    )
    state.adam_m = [np.zeros_like(p) for p in state.parameters()]
    state.adam_v = [np.zeros_like(p) for p in state.parameters()]
    config = TrainConfig(
        kappas=FairKappas(kappa0, kappa1),
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=lr,
        adam_beta1=beta1,
        adam_beta2=beta2,
        adam_epsilon=eps,
        seed=seed,
    )
    return state, config
