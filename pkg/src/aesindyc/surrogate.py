"""Autoencoder-wrapped latent SINDy-C one-step predictor.

    z_x = enc_state(x_t),  z_u = enc_control(u_t)
    x_hat_{t+1} = dec_state(Theta(z_x, z_u) @ Xi)

Training minimizes, per sample,

    |x_{t+1} - x_hat_{t+1}|^2 + l1 |x_t - dec_state(z_x)|^2 + l1 |u_t - dec_control(z_u)|^2

averaged over the batch, plus ``l2 * |Xi|_1`` added once.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndiff
from .dictionary import DictionarySpec, build_spec, evaluate
from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .ndiff import MlpParams, mlp_forward, mlp_from_dict, mlp_init, mlp_to_dict

CHECKPOINT_FORMAT = "aesindyc-surrogate"
CHECKPOINT_VERSION = 1

_NETS = ("enc_state", "dec_state", "enc_control", "dec_control")


@dataclass
class SurrogateParams:
    enc_state: MlpParams
    dec_state: MlpParams
    enc_control: MlpParams
    dec_control: MlpParams
    Xi: np.ndarray  # (d, n_state_latent)
    spec: DictionarySpec
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        ns, nc = self.spec.n_state, self.spec.n_control
        checks = [
            (self.enc_state.layer_sizes[-1], ns, "enc_state output"),
            (self.dec_state.layer_sizes[0], ns, "dec_state input"),
            (self.enc_control.layer_sizes[-1], nc, "enc_control output"),
            (self.dec_control.layer_sizes[0], nc, "dec_control input"),
            (self.dec_state.layer_sizes[-1], self.enc_state.layer_sizes[0], "dec_state output"),
            (self.dec_control.layer_sizes[-1], self.enc_control.layer_sizes[0], "dec_control output"),
        ]
        for got, want, what in checks:
            if got != want:
                raise ShapeError(f"{what} is {got}, expected {want}")
        if np.shape(self.Xi) != (self.spec.d, ns):
            raise ShapeError(f"Xi has shape {np.shape(self.Xi)}, expected {(self.spec.d, ns)}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")

    @property
    def obs_dim(self) -> int:
        return self.enc_state.layer_sizes[0]

    @property
    def act_dim(self) -> int:
        return self.enc_control.layer_sizes[0]

    @property
    def n_params(self) -> tuple[int, int]:
        """(autoencoder parameters, Xi entries)."""
        return sum(getattr(self, n).n_params for n in _NETS), int(np.size(self.Xi))

    def blocks(self) -> ndiff.Blocks:
        out = {}
        for name in _NETS:
            out.update(getattr(self, name).blocks(name))
        out["Xi"] = self.Xi
        return out

    def with_blocks(self, blocks) -> "SurrogateParams":
        """Same structure, new block values (arrays or tape tensors)."""
        nets = {name: getattr(self, name).with_blocks(blocks, name) for name in _NETS}
        obj = object.__new__(SurrogateParams)
        obj.__dict__.update(nets, Xi=blocks["Xi"], spec=self.spec, lambda1=self.lambda1, lambda2=self.lambda2)
        return obj

    def copy(self) -> "SurrogateParams":
        return self.with_blocks({k: np.array(v, copy=True) for k, v in self.blocks().items()})


def hidden_size(n_in: int, n_out: int) -> int:
    """Hidden width keeping in/hidden equal to hidden/out (geometric mean)."""
    return max(1, int(round(math.sqrt(n_in * n_out))))


def init_surrogate(
    obs_dim: int,
    act_dim: int,
    n_state_latent: int = 2,
    n_control_latent: int = 2,
    hidden_state: int | None = None,
    hidden_control: int | None = None,
    activation: str = "softplus",
    deg_state: int = 3,
    deg_control: int = 1,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    seed=0,
) -> SurrogateParams:
    """Fresh surrogate with one hidden layer per network and ``Xi = 0``.

    ``hidden_* = 0`` gives single affine layers.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hs = hidden_size(obs_dim, n_state_latent) if hidden_state is None else hidden_state
    hc = hidden_size(act_dim, n_control_latent) if hidden_control is None else hidden_control

    def shape(n_in, h, n_out):
        return [n_in, h, n_out] if h else [n_in, n_out]

    spec = build_spec(n_state_latent, n_control_latent, deg_state, deg_control)
    return SurrogateParams(
        enc_state=mlp_init(shape(obs_dim, hs, n_state_latent), activation, rng),
        dec_state=mlp_init(shape(n_state_latent, hs, obs_dim), activation, rng),
        enc_control=mlp_init(shape(act_dim, hc, n_control_latent), activation, rng),
        dec_control=mlp_init(shape(n_control_latent, hc, act_dim), activation, rng),
        Xi=np.zeros((spec.d, n_state_latent)),
        spec=spec,
        lambda1=lambda1,
        lambda2=lambda2,
    )


def encode_state(p: SurrogateParams, x):
    return mlp_forward(p.enc_state, x)


def encode_control(p: SurrogateParams, u):
    return mlp_forward(p.enc_control, u)


def decode_state(p: SurrogateParams, z):
    return mlp_forward(p.dec_state, z)


def decode_control(p: SurrogateParams, z):
    return mlp_forward(p.dec_control, z)


def latent_step(p: SurrogateParams, z_x, z_u):
    return ndiff.matmul(evaluate(p.spec, z_x, z_u), p.Xi)


def predict_next(p: SurrogateParams, x_t, u_t):
    """One-step prediction: encode, one dictionary evaluation times Xi, decode."""
    x_t = np.asarray(x_t, dtype=np.float64)
    u_t = np.asarray(u_t, dtype=np.float64)
    if x_t.shape[-1] != p.obs_dim or u_t.shape[-1] != p.act_dim:
        raise ShapeError(f"inputs ({x_t.shape[-1]}, {u_t.shape[-1]}) do not match surrogate ({p.obs_dim}, {p.act_dim})")
    return decode_state(p, latent_step(p, encode_state(p, x_t), encode_control(p, u_t)))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def _as_batch(batch):
    X, U, Xn = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in batch)
    if len(X) == 0:
        raise ConfigError("loss needs a non-empty batch")
    if not len(X) == len(U) == len(Xn):
        raise ShapeError("batch arrays differ in length")
    return X, U, Xn


def _loss_graph(p: SurrogateParams, X, U, Xn):
    """Composite loss built from ``ndiff`` ops; works for arrays and tensors."""
    zx = encode_state(p, X)
    zu = encode_control(p, U)
    pred = decode_state(p, latent_step(p, zx, zu))
    r_pred = ndiff.add(Xn, ndiff.neg(pred))
    r_x = ndiff.add(X, ndiff.neg(decode_state(p, zx)))
    r_u = ndiff.add(U, ndiff.neg(decode_control(p, zu)))
    per_sample = ndiff.add(
        ndiff.tsum(ndiff.mul(r_pred, r_pred), axis=1),
        ndiff.mul(p.lambda1, ndiff.add(ndiff.tsum(ndiff.mul(r_x, r_x), axis=1), ndiff.tsum(ndiff.mul(r_u, r_u), axis=1))),
    )
    return ndiff.add(ndiff.tmean(per_sample), ndiff.mul(p.lambda2, ndiff.tsum(ndiff.tabs(p.Xi))))


def loss(p: SurrogateParams, batch) -> float:
    X, U, Xn = _as_batch(batch)
    return float(_loss_graph(p, X, U, Xn))


def loss_terms(p: SurrogateParams, batch) -> dict:
    """Unweighted batch means of each loss component plus ``|Xi|_1``."""
    X, U, Xn = _as_batch(batch)
    zx, zu = encode_state(p, X), encode_control(p, U)
    pred = decode_state(p, latent_step(p, zx, zu))
    return {
        "prediction": float(np.mean(np.sum((Xn - pred) ** 2, axis=1))),
        "ae_state": float(np.mean(np.sum((X - decode_state(p, zx)) ** 2, axis=1))),
        "ae_control": float(np.mean(np.sum((U - decode_control(p, zu)) ** 2, axis=1))),
        "xi_l1": float(np.sum(np.abs(p.Xi))),
    }


def loss_and_grad(p: SurrogateParams, batch):
    X, U, Xn = _as_batch(batch)
    return ndiff.grad(lambda b: _loss_graph(p.with_blocks(b), X, U, Xn), p.blocks())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class FitReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


class SurrogateDivergence(NumericError):
    """Training hit a non-finite loss; ``params`` holds the last finite state."""

    def __init__(self, message, params, report):
        super().__init__(message)
        self.params = params
        self.report = report


def fit(
    p: SurrogateParams,
    data,
    epochs: int = 100,
    split: float = 0.8,
    batch: int = 64,
    lr: float = 1e-3,
    clip: float = 1.0,
    rng=None,
    opt_state=None,
):
    """Minibatch Adam on all blocks jointly.

    ``data`` is ``(X, U, X_next)``.  One random train/validation split is
    drawn per call; validation samples never enter an update.  Returns the
    trained params and a :class:`FitReport` with the full-split losses after
    every epoch.
    """
    X, U, Xn = _as_batch(data)
    n = len(X)
    if n < 10:
        raise ConfigError(f"need at least 10 transitions to fit, got {n}")
    if not 0 < split < 1:
        raise ConfigError(f"split must lie in (0, 1), got {split}")
    rng = rng if rng is not None else np.random.default_rng(0)
    report = FitReport()
    if epochs <= 0:
        return p, report

    start = time.perf_counter()
    perm = rng.permutation(n)
    n_train = int(round(split * n))
    tr, va = perm[:n_train], perm[n_train:]
    train = (X[tr], U[tr], Xn[tr])
    val = (X[va], U[va], Xn[va])

    blocks = {k: np.array(v, dtype=np.float64) for k, v in p.blocks().items()}
    state = opt_state if opt_state is not None else ndiff.OptimState.fresh(blocks, lr=lr)
    current = p
    for epoch in range(epochs):
        order = rng.permutation(n_train)
        for lo in range(0, n_train, batch):
            idx = order[lo : lo + batch]
            mb = (train[0][idx], train[1][idx], train[2][idx])
            try:
                _, grads = loss_and_grad(p.with_blocks(blocks), mb)
            except NumericError as exc:
                report.wall_time = time.perf_counter() - start
                raise SurrogateDivergence(f"epoch {epoch}: {exc}", current, report) from exc
            grads = ndiff.clip_grad_norm(grads, clip)
            blocks, state = ndiff.optim_step(blocks, grads, state)
        candidate = p.with_blocks(blocks)
        tl = loss(candidate, train)
        vl = loss(candidate, val) if len(va) else float("nan")
        if not (math.isfinite(tl) and (math.isfinite(vl) or not len(va))):
            report.wall_time = time.perf_counter() - start
            raise SurrogateDivergence(f"epoch {epoch}: non-finite loss", current, report)
        current = candidate
        report.train_loss.append(tl)
        report.val_loss.append(vl)
    report.wall_time = time.perf_counter() - start
    return current, report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def to_dict(p: SurrogateParams, config: dict | None = None) -> dict:
    """Serializable document.  Arrays are row-major flat lists."""
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config or {},
        "dictionary": p.spec.to_dict(),
        "lambda1": p.lambda1,
        "lambda2": p.lambda2,
        "networks": {name: mlp_to_dict(getattr(p, name)) for name in _NETS},
        "Xi": {"shape": list(np.shape(p.Xi)), "data": np.asarray(p.Xi).ravel().tolist()},
    }


def from_dict(doc: dict, expected_spec: DictionarySpec | None = None) -> SurrogateParams:
    try:
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"not a surrogate checkpoint (format={doc.get('format')!r})")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
        spec = DictionarySpec.from_dict(doc["dictionary"])
        if len(set(spec.terms)) != len(spec.terms):
            raise CheckpointError("dictionary term list contains duplicates")
        if expected_spec is not None and spec.terms != expected_spec.terms:
            mismatch = next(
                (i for i, (a, b) in enumerate(zip(spec.terms, expected_spec.terms)) if a != b),
                min(len(spec.terms), len(expected_spec.terms)),
            )
            raise CheckpointError(
                f"dictionary ordering mismatch at term {mismatch}: checkpoint has "
                f"{spec.terms[mismatch] if mismatch < len(spec.terms) else '<end>'}, expected "
                f"{expected_spec.terms[mismatch] if mismatch < len(expected_spec.terms) else '<end>'}"
            )
        nets = {name: mlp_from_dict(doc["networks"][name]) for name in _NETS}
        xi_shape = tuple(doc["Xi"]["shape"])
        Xi = np.array(doc["Xi"]["data"], dtype=np.float64).reshape(xi_shape)
        return SurrogateParams(**nets, Xi=Xi, spec=spec, lambda1=float(doc["lambda1"]), lambda2=float(doc["lambda2"]))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed surrogate checkpoint: {exc}") from exc


def save(p: SurrogateParams, path, config: dict | None = None) -> None:
    Path(path).write_text(json.dumps(to_dict(p, config)))


def load(path, expected_spec: DictionarySpec | None = None) -> SurrogateParams:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint {path}: {exc}") from exc
    return from_dict(doc, expected_spec)


def identity_surrogate(obs_dim: int, act_dim: int) -> SurrogateParams:
    """Exact ``x' = x`` surrogate: affine identity AEs, linear state rows of Xi = I.

    Latent sizes equal the observed sizes, so keep ``obs_dim`` small.
    """
    spec = build_spec(obs_dim, act_dim, 1, 1)

    def eye(n):
        return MlpParams([n, n], [np.eye(n)], [np.zeros(n)], "softplus")

    Xi = np.zeros((spec.d, obs_dim))
    Xi[:obs_dim] = np.eye(obs_dim)  # degree-1 state terms come first
    return SurrogateParams(eye(obs_dim), eye(obs_dim), eye(act_dim), eye(act_dim), Xi, spec)
