"""MLP encoder/decoder pair with hand-derived reverse-mode gradients.

The architecture family is fixed: a dense ReLU encoder producing the mean and
log-variance of a diagonal Gaussian posterior, and a dense ReLU decoder that
maps a latent sample concatenated with a one-hot (or all-zero) discrete code
to Bernoulli pixel means. Everything is float64 numpy, one row per sample.
There is no autodiff framework; the backward pass below is the exact
derivative of the clamped forward computation, which keeps it checkable
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Prng

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
PROB_EPS = 1e-7

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass
class DenseLayer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)


@dataclass
class MlpParams:
    """All encoder/decoder weights plus the latent geometry they imply."""

    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    latent_dim: int
    discrete_card: int
    image_dim: int

    def copy(self) -> "MlpParams":
        return MlpParams(
            encoder=[DenseLayer(l.w.copy(), l.b.copy()) for l in self.encoder],
            decoder=[DenseLayer(l.w.copy(), l.b.copy()) for l in self.decoder],
            latent_dim=self.latent_dim,
            discrete_card=self.discrete_card,
            image_dim=self.image_dim,
        )


@dataclass
class GaussianPosterior:
    mu: np.ndarray       # (n, m)
    log_var: np.ndarray  # (n, m), clamped to [LOG_VAR_MIN, LOG_VAR_MAX]


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON


@dataclass
class LossBreakdown:
    recon_nll: float
    kl_weighted: float
    collision: float
    total: float


def named_arrays(params: MlpParams) -> list[tuple[str, np.ndarray]]:
    """Deterministic (name, array) walk over all parameters."""
    out = []
    for i, layer in enumerate(params.encoder):
        out.append((f"enc{i}.w", layer.w))
        out.append((f"enc{i}.b", layer.b))
    for i, layer in enumerate(params.decoder):
        out.append((f"dec{i}.w", layer.w))
        out.append((f"dec{i}.b", layer.b))
    return out


def init_params(
    encoder_widths, decoder_widths, m: int, s_card: int, rng: Prng
) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    ``encoder_widths``/``decoder_widths`` are full width chains including the
    input and output layers; the encoder must end at 2m (stacked mean and
    log-variance) and the decoder must start at m + S and end at the image
    dimension.
    """
    encoder_widths = [int(w) for w in encoder_widths]
    decoder_widths = [int(w) for w in decoder_widths]
    if m < 1 or s_card < 1:
        raise ConfigError(f"latent_dim and discrete_card must be >= 1, got m={m}, S={s_card}")
    if len(encoder_widths) < 2 or len(decoder_widths) < 2:
        raise ConfigError("encoder and decoder need at least an input and an output width")
    if encoder_widths[-1] != 2 * m:
        raise ConfigError(
            f"encoder output width {encoder_widths[-1]} != 2*m = {2 * m}"
        )
    if decoder_widths[0] != m + s_card:
        raise ConfigError(
            f"decoder input width {decoder_widths[0]} != m + S = {m + s_card}"
        )
    if decoder_widths[-1] != encoder_widths[0]:
        raise ConfigError(
            f"decoder output width {decoder_widths[-1]} != image dim {encoder_widths[0]}"
        )

    def build(widths):
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            u = rng.uniforms(fan_in * fan_out).reshape(fan_in, fan_out)
            layers.append(DenseLayer((2.0 * u - 1.0) * limit, np.zeros(fan_out)))
        return layers

    return MlpParams(
        encoder=build(encoder_widths),
        decoder=build(decoder_widths),
        latent_dim=m,
        discrete_card=s_card,
        image_dim=encoder_widths[0],
    )


def _dense_forward(layers, inp):
    """ReLU between layers, linear last. Returns (out, preactivations, activations)."""
    acts = [inp]
    pres = []
    h = inp
    for i, layer in enumerate(layers):
        a = h @ layer.w + layer.b
        pres.append(a)
        if i < len(layers) - 1:
            h = np.maximum(a, 0.0)
            acts.append(h)
    return pres[-1], pres, acts


def _dense_backward(layers, pres, acts, dout):
    """Gradients of every layer plus the gradient at the chain input."""
    grads = []
    d = dout
    for i in reversed(range(len(layers))):
        grads.append(DenseLayer(acts[i].T @ d, d.sum(axis=0)))
        d = d @ layers[i].w.T
        if i > 0:
            d = d * (pres[i - 1] > 0.0)
    grads.reverse()
    return grads, d


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def encoder_forward(params: MlpParams, images: np.ndarray) -> GaussianPosterior:
    """Posterior mean and clamped log-variance for a batch of [0,1] images."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != params.image_dim:
        raise ValueError(
            f"expected images of shape (n, {params.image_dim}), got {images.shape}"
        )
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    out, _, _ = _dense_forward(params.encoder, images)
    m = params.latent_dim
    return GaussianPosterior(
        mu=out[:, :m],
        log_var=np.clip(out[:, m:], LOG_VAR_MIN, LOG_VAR_MAX),
    )


def _check_onehot(d_onehot: np.ndarray, s_card: int) -> None:
    if d_onehot.ndim != 2 or d_onehot.shape[1] != s_card:
        raise ValueError(f"expected discrete codes of shape (n, {s_card}), got {d_onehot.shape}")
    if not np.all((d_onehot == 0.0) | (d_onehot == 1.0)):
        raise ValueError("discrete codes must be 0/1")
    sums = d_onehot.sum(axis=1)
    if np.any(sums > 1.0):
        raise ValueError("discrete code rows must contain at most one 1")


def decoder_forward(params: MlpParams, z: np.ndarray, d_onehot: np.ndarray) -> np.ndarray:
    """Bernoulli pixel means for latent samples and one-hot (or all-zero) codes."""
    z = np.asarray(z, dtype=np.float64)
    d_onehot = np.asarray(d_onehot, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.latent_dim:
        raise ValueError(f"expected z of shape (n, {params.latent_dim}), got {z.shape}")
    _check_onehot(d_onehot, params.discrete_card)
    if z.shape[0] != d_onehot.shape[0]:
        raise ValueError(f"batch mismatch: z has {z.shape[0]} rows, d has {d_onehot.shape[0]}")
    logits, _, _ = _dense_forward(params.decoder, np.concatenate([z, d_onehot], axis=1))
    return np.clip(_sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)


def reparameterize_with_eps(post: GaussianPosterior, eps: np.ndarray) -> np.ndarray:
    return post.mu + np.exp(0.5 * post.log_var) * eps


def reparameterize(post: GaussianPosterior, rng: Prng) -> np.ndarray:
    """z = mu + sigma * eps with eps drawn from the given noise stream."""
    return reparameterize_with_eps(post, rng.normals(post.mu.shape))


def bernoulli_loglik(probs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-sample sum over pixels of x*ln(p) + (1-x)*ln(1-p)."""
    if probs.shape != x.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs x {x.shape}")
    return (x * np.log(probs) + (1.0 - x) * np.log1p(-probs)).sum(axis=1)


def gaussian_kl_per_dim(post: GaussianPosterior) -> np.ndarray:
    """Entry (i, j): KL of the (i, j) posterior factor from the standard normal."""
    lv = post.log_var
    return 0.5 * (post.mu**2 + np.exp(lv) - 1.0 - lv)


def collision_sum(d_onehot: np.ndarray) -> float:
    """Ordered count of equal-code pairs, sum_{i != j} d_i . d_j."""
    col = d_onehot.sum(axis=0)
    return float((col * col).sum() - col.sum())


class _Forward:
    __slots__ = (
        "enc_pres", "enc_acts", "mu", "lv_raw", "lv", "std", "z",
        "dec_pres", "dec_acts", "logits", "p", "pc", "loglik",
        "kl", "breakdown",
    )


def _forward(params, batch, d_onehot, betas, lambda_prime, eps):
    n = batch.shape[0]
    f = _Forward()
    enc_out, f.enc_pres, f.enc_acts = _dense_forward(params.encoder, batch)
    m = params.latent_dim
    f.mu = enc_out[:, :m]
    f.lv_raw = enc_out[:, m:]
    f.lv = np.clip(f.lv_raw, LOG_VAR_MIN, LOG_VAR_MAX)
    f.std = np.exp(0.5 * f.lv)
    f.z = f.mu + f.std * eps
    dec_in = np.concatenate([f.z, d_onehot], axis=1)
    f.logits, f.dec_pres, f.dec_acts = _dense_forward(params.decoder, dec_in)
    f.p = _sigmoid(f.logits)
    f.pc = np.clip(f.p, PROB_EPS, 1.0 - PROB_EPS)
    f.loglik = (batch * np.log(f.pc) + (1.0 - batch) * np.log1p(-f.pc)).sum(axis=1)
    f.kl = 0.5 * (f.mu**2 + np.exp(f.lv) - 1.0 - f.lv)
    recon_nll = float(-f.loglik.sum() / n)
    kl_weighted = float((f.kl * betas).sum() / n)
    collision = float(lambda_prime * collision_sum(d_onehot) / n)
    f.breakdown = LossBreakdown(
        recon_nll=recon_nll,
        kl_weighted=kl_weighted,
        collision=collision,
        total=recon_nll + kl_weighted + collision,
    )
    return f


def _validate_loss_inputs(params, batch, d_onehot, betas):
    batch = np.asarray(batch, dtype=np.float64)
    d_onehot = np.asarray(d_onehot, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.image_dim:
        raise ValueError(f"expected batch of shape (n, {params.image_dim}), got {batch.shape}")
    _check_onehot(d_onehot, params.discrete_card)
    if d_onehot.shape[0] != batch.shape[0]:
        raise ValueError("batch and discrete codes disagree on n")
    if betas.shape != (params.latent_dim,):
        raise ValueError(f"betas must have shape ({params.latent_dim},), got {betas.shape}")
    if np.any(betas < 0.0):
        raise ValueError("betas must be nonnegative")
    return batch, d_onehot, betas


def loss_value_with_eps(params, batch, d_onehot, betas, lambda_prime, eps) -> LossBreakdown:
    batch, d_onehot, betas = _validate_loss_inputs(params, batch, d_onehot, betas)
    return _forward(params, batch, d_onehot, betas, lambda_prime, eps).breakdown


def loss_and_grads_with_eps(params, batch, d_onehot, betas, lambda_prime, eps):
    """Loss terms and exact gradients with the noise realization held fixed.

    The collision term is constant in the parameters (it depends only on the
    discrete codes), so it appears in the breakdown but contributes nothing
    to the gradients.
    """
    batch, d_onehot, betas = _validate_loss_inputs(params, batch, d_onehot, betas)
    n = batch.shape[0]
    f = _forward(params, batch, d_onehot, betas, lambda_prime, eps)

    # d recon_nll / d logits; zero wherever the Bernoulli mean clamp is active.
    p_live = (f.p > PROB_EPS) & (f.p < 1.0 - PROB_EPS)
    dlogits = np.where(p_live, (f.p - batch) / n, 0.0)
    dec_grads, d_dec_in = _dense_backward(params.decoder, f.dec_pres, f.dec_acts, dlogits)
    dz = d_dec_in[:, : params.latent_dim]

    lv_live = (f.lv_raw > LOG_VAR_MIN) & (f.lv_raw < LOG_VAR_MAX)
    dmu = dz + betas * f.mu / n
    dlv = dz * eps * 0.5 * f.std + betas * 0.5 * (np.exp(f.lv) - 1.0) / n
    dlv = np.where(lv_live, dlv, 0.0)
    enc_grads, _ = _dense_backward(
        params.encoder, f.enc_pres, f.enc_acts, np.concatenate([dmu, dlv], axis=1)
    )
    grads = MlpParams(
        encoder=enc_grads,
        decoder=dec_grads,
        latent_dim=params.latent_dim,
        discrete_card=params.discrete_card,
        image_dim=params.image_dim,
    )
    return f.breakdown, grads


def loss_and_grads(params, batch, d_onehot, betas, lambda_prime, rng: Prng):
    """As :func:`loss_and_grads_with_eps` but drawing the posterior noise from ``rng``."""
    batch = np.asarray(batch, dtype=np.float64)
    eps = rng.normals((batch.shape[0], params.latent_dim))
    return loss_and_grads_with_eps(params, batch, d_onehot, betas, lambda_prime, eps)


def init_adam_state(params: MlpParams) -> AdamState:
    arrays = [a for _, a in named_arrays(params)]
    return AdamState(
        first_moment=[np.zeros_like(a) for a in arrays],
        second_moment=[np.zeros_like(a) for a in arrays],
        step_count=0,
    )


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns fresh (params, state)."""
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    garrs = [a for _, a in named_arrays(grads)]
    parrs = [a for _, a in named_arrays(params)]
    new_vals, new_m1, new_m2 = [], [], []
    for p, g, m1, m2 in zip(parrs, garrs, state.first_moment, state.second_moment):
        m1n = b1 * m1 + (1.0 - b1) * g
        m2n = b2 * m2 + (1.0 - b2) * g * g
        mhat = m1n / (1.0 - b1**t)
        vhat = m2n / (1.0 - b2**t)
        new_vals.append(p - lr * mhat / (np.sqrt(vhat) + eps))
        new_m1.append(m1n)
        new_m2.append(m2n)

    def rebuild(layers, flat):
        out = []
        for _ in layers:
            out.append(DenseLayer(flat.pop(0), flat.pop(0)))
        return out

    flat = list(new_vals)
    new_params = MlpParams(
        encoder=rebuild(params.encoder, flat),
        decoder=rebuild(params.decoder, flat),
        latent_dim=params.latent_dim,
        discrete_card=params.discrete_card,
        image_dim=params.image_dim,
    )
    new_state = AdamState(
        first_moment=new_m1,
        second_moment=new_m2,
        step_count=t,
        beta1=b1,
        beta2=b2,
        epsilon=eps,
    )
    return new_params, new_state


def finite_diff_check(
    params, batch, d_onehot, betas, lambda_prime, h: float, eps=None
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error is |a - fd| / max(1, |a|, |fd|). The posterior noise is
    held fixed across evaluations (by default a deterministic internal draw),
    so the loss is a smooth function of the parameters away from ReLU and
    clamp kinks. Parameters are perturbed in place and restored bit-exactly.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if eps is None:
        eps = Prng(2718).child("fd-eps").normals((batch.shape[0], params.latent_dim))
    _, grads = loss_and_grads_with_eps(params, batch, d_onehot, betas, lambda_prime, eps)
    garrs = [a for _, a in named_arrays(grads)]
    parrs = [a for _, a in named_arrays(params)]
    worst = 0.0
    for parr, garr in zip(parrs, garrs):
        flat_p = parr.reshape(-1)
        flat_g = garr.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + h
            f_plus = loss_value_with_eps(params, batch, d_onehot, betas, lambda_prime, eps).total
            flat_p[k] = orig - h
            f_minus = loss_value_with_eps(params, batch, d_onehot, betas, lambda_prime, eps).total
            flat_p[k] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = flat_g[k]
            rel = abs(a - fd) / max(1.0, abs(a), abs(fd))
            if rel > worst:
                worst = rel
    return worst


def kink_margin(params, batch, d_onehot, eps) -> float:
    """Distance of the forward pass to the nearest ReLU or clamp kink.

    Finite differences are invalid when a perturbation can cross a kink, so
    check harnesses reject configurations where this margin is small. The
    analytic gradient itself is exact everywhere off the kink set.
    """
    batch = np.asarray(batch, dtype=np.float64)
    d_onehot = np.asarray(d_onehot, dtype=np.float64)
    f = _forward(
        params, batch, d_onehot,
        np.zeros(params.latent_dim), 0.0, eps,
    )
    margin = np.inf
    for pres in (f.enc_pres[:-1], f.dec_pres[:-1]):
        for a in pres:
            if a.size:
                margin = min(margin, float(np.abs(a).min()))
    if f.lv_raw.size:
        margin = min(margin, float((LOG_VAR_MAX - np.abs(f.lv_raw)).min()))
    # logits beyond ~15 push the Bernoulli mean into its clamp region
    if f.logits.size:
        margin = min(margin, float((15.0 - np.abs(f.logits)).min()))
    return margin


def random_check_setup(rng: Prng, kink_tolerance: float = 1e-3):
    """A small random network, batch, and noise with no kink near the FD stencil.

    Draws are deterministic given ``rng``; configurations whose forward pass
    runs too close to a ReLU/clamp kink are rejected and redrawn, because the
    finite-difference oracle (not the gradient) breaks down there.
    """
    while True:
        image_dim = 6 + rng.randint(8)
        m = 2 + rng.randint(3)
        s_card = 2 + rng.randint(2)
        h1 = 5 + rng.randint(5)
        h2 = 5 + rng.randint(5)
        n = 2 + rng.randint(3)
        params = init_params(
            [image_dim, h1, h2, 2 * m], [m + s_card, h2, h1, image_dim], m, s_card, rng
        )
        batch = rng.uniforms(n * image_dim).reshape(n, image_dim)
        labels = rng.integers(s_card, n)
        d_onehot = np.zeros((n, s_card))
        d_onehot[np.arange(n), labels] = 1.0
        if rng.randint(4) == 0:
            d_onehot[0] = 0.0  # exercise the warm-up all-zero row
        betas = rng.uniforms(m) * 2.0
        lambda_prime = float(rng.uniforms(1)[0])
        eps = rng.normals((n, m))
        if kink_margin(params, batch, d_onehot, eps) > kink_tolerance:
            return params, batch, d_onehot, betas, lambda_prime, eps


def gradient_check_suite(num_nets: int, rng: Prng, h: float = 1e-5) -> float:
    """Max finite-difference relative error over ``num_nets`` random setups."""
    worst = 0.0
    for _ in range(num_nets):
        params, batch, d_onehot, betas, lam, eps = random_check_setup(rng)
        worst = max(worst, finite_diff_check(params, batch, d_onehot, betas, lam, h, eps=eps))
    return worst
