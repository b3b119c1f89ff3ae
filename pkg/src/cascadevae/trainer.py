"""Training loop: warm-up, alternating discrete solves, Adam updates.

One iteration draws a without-replacement minibatch from an epoch-seeded
shuffle, samples the posterior once, and (after the warm-up period t_d)
builds the reward matrix from S decoder evaluations at the drawn sample,
solves the batch assignment exactly, and takes a gradient step with the
discrete codes held fixed. Batch selection and the beta schedule are pure
functions of the iteration counter, and the noise stream counter is part of
the checkpoint, so a resumed run is bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .assignment import AssignmentInstance, solve_mcf
from .cascade import CascadeSchedule, betas_at, relieved_count
from .errors import ConfigError, FormatError
from .nn import AdamState, LossBreakdown, MlpParams
from .rng import Prng

CHECKPOINT_MAGIC = "CVCK1"
TRACE_HEADER = "iter,recon_nll,kl_weighted,collision,total,relieved"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    max_iter: int = 30000
    batch_size: int = 64
    t_d: int = 10000
    r: int = 1500
    beta_h: float = 10.0
    beta_l: float = 1.0
    lambda_prime: float = 0.001
    m: int = 5
    s_card: int = 3
    seed: int = 0
    enc_hidden: tuple[int, ...] = (128, 128)
    dec_hidden: tuple[int, ...] = (128, 128)
    trace_every: int = 1

    def validate(self) -> None:
        if self.max_iter < 0:
            raise ConfigError(f"max_iter must be >= 0, got {self.max_iter}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.t_d < self.max_iter and self.lambda_prime > 0 and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 once the pairwise penalty is active")
        if self.m < 1 or self.s_card < 1:
            raise ConfigError(f"need m >= 1 and s_card >= 1, got {self.m}, {self.s_card}")
        if self.trace_every < 1:
            raise ConfigError(f"trace_every must be >= 1, got {self.trace_every}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        CascadeSchedule(self.beta_h, self.beta_l, self.r, self.m)
        if self.lambda_prime < 0:
            raise ConfigError(f"lambda_prime must be >= 0, got {self.lambda_prime}")

    def schedule(self) -> CascadeSchedule:
        return CascadeSchedule(self.beta_h, self.beta_l, self.r, self.m)


@dataclass
class TrainState:
    params: MlpParams
    adam: AdamState
    iteration: int
    rng: Prng  # noise stream; its counter advances as training consumes draws


def init_state(config: TrainConfig, image_dim: int) -> TrainState:
    config.validate()
    root = Prng(config.seed)
    params = nn.init_params(
        [image_dim, *config.enc_hidden, 2 * config.m],
        [config.m + config.s_card, *config.dec_hidden, image_dim],
        config.m,
        config.s_card,
        root.child("init"),
    )
    return TrainState(
        params=params,
        adam=nn.init_adam_state(params),
        iteration=0,
        rng=root.child("noise"),
    )


def epoch_permutation(seed: int, epoch: int, n_rows: int) -> np.ndarray:
    """Row order for an epoch; a pure function of (seed, epoch)."""
    return Prng(seed).child(f"shuffle/{epoch}").permutation(n_rows)


def batch_rows(config: TrainConfig, n_rows: int, t: int, perm_cache: dict) -> np.ndarray:
    """Dataset rows for iteration t (1-based); trailing partial batches are dropped."""
    per_epoch = n_rows // config.batch_size
    if per_epoch < 1:
        raise ConfigError(
            f"batch_size {config.batch_size} exceeds dataset size {n_rows}"
        )
    epoch, slot = divmod(t - 1, per_epoch)
    if perm_cache.get("epoch") != epoch:
        perm_cache["epoch"] = epoch
        perm_cache["perm"] = epoch_permutation(config.seed, epoch, n_rows)
    lo = slot * config.batch_size
    return perm_cache["perm"][lo : lo + config.batch_size]


def train_step(state: TrainState, batch_x: np.ndarray, config: TrainConfig):
    """One iteration; returns (state, LossBreakdown, labels or None for warm-up)."""
    t = state.iteration + 1
    betas = betas_at(config.schedule(), t)
    n = batch_x.shape[0]
    post = nn.encoder_forward(state.params, batch_x)
    eps = state.rng.normals((n, config.m))
    labels = None
    if t > config.t_d:
        z = nn.reparameterize_with_eps(post, eps)
        rewards = np.empty((n, config.s_card))
        eye = np.eye(config.s_card)
        for k in range(config.s_card):
            probs = nn.decoder_forward(state.params, z, np.tile(eye[k], (n, 1)))
            rewards[:, k] = nn.bernoulli_loglik(probs, batch_x)
        labels = solve_mcf(AssignmentInstance(rewards, config.lambda_prime)).labels
        d_onehot = np.zeros((n, config.s_card))
        d_onehot[np.arange(n), labels] = 1.0
    else:
        d_onehot = np.zeros((n, config.s_card))
    loss, grads = nn.loss_and_grads_with_eps(
        state.params, batch_x, d_onehot, betas, config.lambda_prime, eps
    )
    params, adam = nn.adam_step(state.params, grads, state.adam, config.learning_rate)
    return TrainState(params, adam, t, state.rng), loss, labels


def train_run(
    config: TrainConfig,
    dataset,
    checkpoint_path: str | None = None,
    trace_path: str | None = None,
    start_state: TrainState | None = None,
    stop_iter: int | None = None,
) -> TrainState:
    """Run iterations start+1 .. stop (default config.max_iter) and persist artifacts.

    ``dataset`` is a data.Dataset or an (n, D) float array in [0, 1]. The
    trace CSV gets one row per executed and traced iteration; when resuming,
    rows continue from the checkpointed iteration.
    """
    config.validate()
    x_all = dataset.as_float() if hasattr(dataset, "as_float") else np.asarray(dataset, float)
    stop = config.max_iter if stop_iter is None else stop_iter
    if stop > config.max_iter:
        raise ConfigError(f"stop_iter {stop} exceeds max_iter {config.max_iter}")
    state = start_state if start_state is not None else init_state(config, x_all.shape[1])
    perm_cache: dict = {}
    trace_fh = open(trace_path, "w", encoding="ascii") if trace_path else None
    try:
        if trace_fh and state.iteration == 0:
            trace_fh.write(TRACE_HEADER + "\n")
        while state.iteration < stop:
            t = state.iteration + 1
            rows = batch_rows(config, x_all.shape[0], t, perm_cache)
            state, loss, _ = train_step(state, x_all[rows], config)
            if trace_fh and t % config.trace_every == 0:
                trace_fh.write(
                    f"{t},{loss.recon_nll!r},{loss.kl_weighted!r},"
                    f"{loss.collision!r},{loss.total!r},"
                    f"{relieved_count(config.schedule(), t)}\n"
                )
    finally:
        if trace_fh:
            trace_fh.close()
    if checkpoint_path:
        save_checkpoint(state, config, checkpoint_path)
    return state


def _config_header_items(config: TrainConfig) -> list[tuple[str, str]]:
    items = []
    for key, val in asdict(config).items():
        if isinstance(val, tuple):
            items.append((key, ",".join(str(v) for v in val)))
        elif isinstance(val, float):
            items.append((key, repr(val)))
        else:
            items.append((key, str(val)))
    return items


def save_checkpoint(state: TrainState, config: TrainConfig, path: str) -> None:
    """Versioned binary checkpoint; round-trips bit-exactly."""
    header = io.StringIO()
    header.write(f"{CHECKPOINT_MAGIC}\n")
    for key, val in _config_header_items(config):
        header.write(f"{key}={val}\n")
    header.write(f"iter={state.iteration}\n")
    header.write(f"rng_state={state.rng.seed}:{state.rng.counter}\n")
    header.write("\n")
    named = nn.named_arrays(state.params)
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        moments = list(zip(state.adam.first_moment, state.adam.second_moment))
        for (name, arr), (m1, m2) in zip(named, moments):
            for suffix, payload in (("", arr), (".m1", m1), (".m2", m2)):
                mat = payload if payload.ndim == 2 else payload.reshape(1, -1)
                fh.write(f"{name}{suffix} {mat.shape[0]} {mat.shape[1]}\n".encode("ascii"))
                fh.write(mat.astype("<f8").tobytes())


def _parse_config_header(fields: dict[str, str], path: str) -> TrainConfig:
    kwargs = {}
    defaults = TrainConfig()
    for key, val in fields.items():
        if not hasattr(defaults, key):
            raise FormatError(f"{path}: unknown config key {key!r}")
        current = getattr(defaults, key)
        if isinstance(current, tuple):
            kwargs[key] = tuple(int(v) for v in val.split(",")) if val else ()
        elif isinstance(current, float):
            kwargs[key] = float(val)
        else:
            kwargs[key] = int(val)
    return TrainConfig(**kwargs)


def load_checkpoint(path: str):
    """Inverse of :func:`save_checkpoint`; returns (TrainState, TrainConfig)."""
    with open(path, "rb") as fh:
        def read_line():
            line = fh.readline()
            if not line.endswith(b"\n"):
                raise FormatError(f"{path}: truncated checkpoint header")
            return line[:-1].decode("ascii")

        magic = read_line()
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(
                f"{path}: version mismatch: file has {magic!r}, reader expects {CHECKPOINT_MAGIC!r}"
            )
        fields: dict[str, str] = {}
        while True:
            line = read_line()
            if line == "":
                break
            if "=" not in line:
                raise FormatError(f"{path}: bad header line {line!r}")
            key, val = line.split("=", 1)
            fields[key] = val
        for key in ("iter", "rng_state"):
            if key not in fields:
                raise FormatError(f"{path}: missing header key {key!r}")
        iteration = int(fields.pop("iter"))
        rng_seed, rng_counter = fields.pop("rng_state").split(":")
        config = _parse_config_header(fields, path)

        arrays: dict[str, np.ndarray] = {}
        order: list[str] = []
        while True:
            line = fh.readline()
            if not line:
                break
            parts = line[:-1].decode("ascii").split()
            if len(parts) != 3:
                raise FormatError(f"{path}: bad array header {line!r}")
            name, rows, cols = parts[0], int(parts[1]), int(parts[2])
            nbytes = rows * cols * 8
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise FormatError(
                    f"{path}: truncated array {name!r}: expected {nbytes} bytes, got {len(raw)}"
                )
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
            order.append(name)

    def take(name, vector=False):
        if name not in arrays:
            raise FormatError(f"{path}: missing array {name!r}")
        arr = arrays.pop(name)
        return arr.reshape(-1) if vector else arr

    def load_stack(prefix, count):
        layers = []
        for i in range(count):
            layers.append(
                nn.DenseLayer(take(f"{prefix}{i}.w"), take(f"{prefix}{i}.b", vector=True))
            )
        return layers

    n_enc = len(config.enc_hidden) + 1
    n_dec = len(config.dec_hidden) + 1
    base_names = [n for n in order if not n.endswith((".m1", ".m2"))]
    encoder = load_stack("enc", n_enc)
    params = MlpParams(
        encoder=encoder,
        decoder=load_stack("dec", n_dec),
        latent_dim=config.m,
        discrete_card=config.s_card,
        image_dim=encoder[0].w.shape[0],
    )
    if params.encoder[-1].w.shape[1] != 2 * config.m:
        raise FormatError(
            f"{path}: encoder output width {params.encoder[-1].w.shape[1]} "
            f"does not match config m={config.m}"
        )
    if params.decoder[0].w.shape[0] != config.m + config.s_card:
        raise FormatError(
            f"{path}: decoder input width {params.decoder[0].w.shape[0]} "
            f"does not match config m+S={config.m + config.s_card}"
        )
    m1, m2 = [], []
    for name in base_names:
        ref = dict(nn.named_arrays(params))[name]
        for suffix, dest in ((".m1", m1), (".m2", m2)):
            arr = take(name + suffix)
            dest.append(arr.reshape(ref.shape))
    if arrays:
        raise FormatError(f"{path}: unexpected extra arrays {sorted(arrays)}")
    adam = AdamState(first_moment=m1, second_moment=m2, step_count=iteration)
    state = TrainState(
        params=params,
        adam=adam,
        iteration=iteration,
        rng=Prng(int(rng_seed), int(rng_counter)),
    )
    return state, config


def resume_run(
    checkpoint_path: str,
    config: TrainConfig,
    dataset,
    new_checkpoint_path: str | None = None,
    trace_path: str | None = None,
    stop_iter: int | None = None,
) -> TrainState:
    """Continue a checkpointed run; the stored config must match exactly."""
    state, stored = load_checkpoint(checkpoint_path)
    if stored != config:
        diffs = [
            f"{k}: stored {v!r} != given {getattr(config, k)!r}"
            for k, v in asdict(stored).items()
            if getattr(config, k) != v
        ]
        raise ConfigError(f"{checkpoint_path}: config mismatch: " + "; ".join(diffs))
    return train_run(
        config,
        dataset,
        checkpoint_path=new_checkpoint_path,
        trace_path=trace_path,
        start_state=state,
        stop_iter=stop_iter,
    )
