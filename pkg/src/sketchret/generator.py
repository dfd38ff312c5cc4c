"""Photo-conditioned sequential sketch generator.

A conv encoder keeps a spatial feature map; its global average pooling
parameterizes a variational latent that initializes the LSTM decoder. At
every step a 2D attention module produces a glimpse of the feature map,
and a linear head over the hidden state emits mixture-density parameters
(M bivariate normals over the offset) plus 3 pen-state logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv2d, ConvStack, Linear, LSTMCell, Module
from .sketch_data import PEN_DOWN, PEN_END, StrokeSequence

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GeneratorConfig:
    image_size: int = 64
    enc_channels: tuple = (32, 64, 96, 128)
    n_z: int = 128
    hidden: int = 512
    mixtures: int = 20
    attn_dim: int = 128
    attn_mode: str = "2d"  # "2d": 3x3 conv over the map; "1d": position-wise
    t_max: int = 100

    @property
    def output_dim(self) -> int:
        return 6 * self.mixtures + 3

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "enc_channels": list(self.enc_channels),
            "n_z": self.n_z,
            "hidden": self.hidden,
            "mixtures": self.mixtures,
            "attn_dim": self.attn_dim,
            "attn_mode": self.attn_mode,
            "t_max": self.t_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        return cls(**d)


@dataclass
class GmmStepParams:
    """Constrained mixture parameters for one (or a batch of) decode step."""

    pi: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    rho: np.ndarray
    pen_logits: np.ndarray


def split_gmm_params(raw: np.ndarray, mixtures: int, temperature: float | None = None) -> GmmStepParams:
    """Split a raw (…, 6M+3) head output into constrained GMM parameters.

    pi via softmax, sigmas via exp, rho via tanh; pen logits pass through.
    A sampling temperature divides the pi logits and multiplies the
    variances (so sigma scales by sqrt(tau)); it never touches training.
    """
    raw = np.asarray(raw, dtype=np.float64)
    m = mixtures
    if raw.shape[-1] != 6 * m + 3:
        raise ValueError(f"raw output has size {raw.shape[-1]}, expected {6 * m + 3}")
    pl = raw[..., :m]
    mu_x = raw[..., m : 2 * m]
    mu_y = raw[..., 2 * m : 3 * m]
    lsx = raw[..., 3 * m : 4 * m]
    lsy = raw[..., 4 * m : 5 * m]
    rho = np.tanh(raw[..., 5 * m : 6 * m])
    pen_logits = raw[..., 6 * m :].copy()
    if temperature is not None:
        pl = pl / temperature
        pen_logits = pen_logits / temperature
        lsx = lsx + 0.5 * np.log(temperature)
        lsy = lsy + 0.5 * np.log(temperature)
    pl = pl - pl.max(axis=-1, keepdims=True)
    pi = np.exp(pl)
    pi = pi / pi.sum(axis=-1, keepdims=True)
    return GmmStepParams(pi, mu_x, mu_y, np.exp(lsx), np.exp(lsy), rho, pen_logits)


def gmm_nll(params: GmmStepParams, dx, dy) -> np.ndarray:
    """Negative log density of the offset mixture at (dx, dy), log-space."""
    dx = np.asarray(dx, dtype=np.float64)[..., None]
    dy = np.asarray(dy, dtype=np.float64)[..., None]
    u = (dx - params.mu_x) / params.sigma_x
    v = (dy - params.mu_y) / params.sigma_y
    omr = 1.0 - params.rho**2
    z = u * u + v * v - 2.0 * params.rho * u * v
    log_n = (
        -z / (2.0 * omr)
        - LOG_2PI
        - np.log(params.sigma_x)
        - np.log(params.sigma_y)
        - 0.5 * np.log(omr)
    )
    comp = np.log(params.pi) + log_n
    top = comp.max(axis=-1)
    return -(np.log(np.exp(comp - top[..., None]).sum(axis=-1)) + top)


def pen_log_prob(pen_logits: np.ndarray, pen_index) -> np.ndarray:
    """Log probability of the given pen class under the logits."""
    shifted = pen_logits - pen_logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    idx = np.asarray(pen_index)
    picked = np.take_along_axis(shifted, idx[..., None], axis=-1)[..., 0]
    return picked - logz


# ---------------------------------------------------------------------------
# autograd loss paths
# ---------------------------------------------------------------------------


def gmm_nll_t(raw: Tensor, dx: np.ndarray, dy: np.ndarray, mixtures: int, temperature: float = 1.0) -> Tensor:
    """Differentiable per-row mixture NLL from the raw head output.

    raw: (N, 6M+3) Tensor; dx, dy: (N,) constants. Returns (N,) Tensor.
    """
    m = mixtures
    pl = raw[:, :m] * (1.0 / temperature)
    mu_x = raw[:, m : 2 * m]
    mu_y = raw[:, 2 * m : 3 * m]
    lsx = raw[:, 3 * m : 4 * m] + 0.5 * np.log(temperature)
    lsy = raw[:, 4 * m : 5 * m] + 0.5 * np.log(temperature)
    rho = raw[:, 5 * m : 6 * m].tanh()

    log_pi = ag.log_softmax(pl, axis=1)
    u = (Tensor(dx[:, None]) - mu_x) * (-lsx).exp()
    v = (Tensor(dy[:, None]) - mu_y) * (-lsy).exp()
    omr = 1.0 - rho * rho
    z = u * u + v * v - rho * u * v * 2.0
    log_n = -z / (omr * 2.0) - LOG_2PI - lsx - lsy - omr.log() * 0.5
    return -ag.logsumexp(log_pi + log_n, axis=1)


def pen_ce_t(raw: Tensor, pen_onehot: np.ndarray, mixtures: int, temperature: float = 1.0) -> Tensor:
    """Differentiable 3-class pen cross-entropy per row."""
    logits = raw[:, 6 * mixtures :] * (1.0 / temperature)
    logp = ag.log_softmax(logits, axis=1)
    return -(logp * Tensor(pen_onehot)).sum(axis=1)


def kl_loss(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(q(z|x) || N(0, I)) normalized per latent dimension, batch mean."""
    n_z = mu.shape[-1]
    per = (1.0 + log_var - mu * mu - log_var.exp()).sum(axis=-1) * (-0.5 / n_z)
    return per.mean() if per.ndim else per


def reconstruction_loss(
    raw: Tensor,
    targets: np.ndarray,
    mask: np.ndarray,
    mixtures: int,
) -> Tensor:
    """Offset NLL (masked to real steps) plus pen CE over the full padded
    length, divided by the padded length; batch mean.

    raw: (B, T_pad, 6M+3); targets: (B, T_pad, 5) with end-state padding;
    mask: (B, T_pad) 1.0 for steps inside the true sequence.
    """
    b, t_pad, k = raw.shape
    flat = raw.reshape(b * t_pad, k)
    nll = gmm_nll_t(flat, targets[:, :, 0].reshape(-1), targets[:, :, 1].reshape(-1), mixtures)
    ce = pen_ce_t(flat, targets[:, :, 2:].reshape(b * t_pad, 3), mixtures)
    nll_sum = (nll.reshape(b, t_pad) * Tensor(mask)).sum(axis=1)
    ce_sum = ce.reshape(b, t_pad).sum(axis=1)
    return ((nll_sum + ce_sum) * (1.0 / t_pad)).mean()


def vae_loss(recon: Tensor, kl: Tensor, omega_kl: float) -> Tensor:
    return recon + omega_kl * kl


def reparameterize(mu: Tensor, log_var: Tensor, eps: np.ndarray) -> Tensor:
    """z = mu + exp(log_var / 2) * eps."""
    return mu + (log_var * 0.5).exp() * Tensor(eps)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


def photos_to_nchw(photos) -> np.ndarray:
    """Stack a list of (H, W, 3) images into a (B, 3, H, W) float64 batch."""
    arr = np.stack([np.asarray(p, dtype=np.float64) for p in photos])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


class Attention2D(Module):
    """Glimpse attention over a spatial feature map.

    2d mode scores J = tanh(conv3x3(B) + W_s h); 1d mode replaces the conv
    with a position-wise projection (the feature map treated as a flat
    sequence, no neighborhood aggregation).
    """

    def __init__(self, channels: int, attn_dim: int, hidden: int, mode: str, rng):
        if mode not in ("2d", "1d"):
            raise ValueError(f"unknown attention mode {mode!r}")
        self.mode = mode
        if mode == "2d":
            self.map_proj = Conv2d(channels, attn_dim, 3, rng, stride=1, pad=1)
        else:
            self.map_proj = Linear(channels, attn_dim, rng)
        self.state_proj = Linear(hidden, attn_dim, rng)
        self.score = Linear(attn_dim, 1, rng)

    def precompute(self, fmap: Tensor):
        """Per-sequence work: project the feature map once."""
        b, c, h, w = fmap.shape
        flat = fmap.reshape(b, c, h * w)
        if self.mode == "2d":
            pre = self.map_proj(fmap).reshape(b, -1, h * w)
        else:
            cols = flat.transpose(0, 2, 1).reshape(b * h * w, c)
            pre = self.map_proj(cols).reshape(b, h * w, -1).transpose(0, 2, 1)
        return flat, pre

    def step(self, flat: Tensor, pre: Tensor, h_prev: Tensor):
        """One glimpse: returns (g (B, C), alpha (B, P))."""
        b, a, p = pre.shape
        proj = self.state_proj(h_prev).reshape(b, a, 1)
        j = (pre + proj).tanh()
        scores = self.score(j.transpose(0, 2, 1).reshape(b * p, a)).reshape(b, p)
        alpha = ag.softmax(scores, axis=1)
        g = (flat @ alpha.reshape(b, p, 1)).reshape(b, flat.shape[1])
        return g, alpha


class Generator(Module):
    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        c = config.enc_channels[-1]
        self.encoder = ConvStack(3, config.enc_channels, rng)
        self.mu_head = Linear(c, config.n_z, rng)
        self.logvar_head = Linear(c, config.n_z, rng)
        self.init_head = Linear(config.n_z, 2 * config.hidden, rng)
        self.attention = Attention2D(c, config.attn_dim, config.hidden, config.attn_mode, rng)
        self.lstm = LSTMCell(c + 5, config.hidden, rng)
        self.out_head = Linear(config.hidden, config.output_dim, rng)

    # -- encoder -------------------------------------------------------------

    def encode(self, photos_nchw: np.ndarray):
        """Photos -> (feature map B, mu, log_var)."""
        size = self.config.image_size
        if photos_nchw.shape[2] != size or photos_nchw.shape[3] != size:
            raise ValueError(f"expected {size}x{size} photos, got {photos_nchw.shape[2:]}")
        fmap = self.encoder(Tensor(photos_nchw))
        pooled = fmap.mean(axis=(2, 3))
        return fmap, self.mu_head(pooled), self.logvar_head(pooled)

    def init_state(self, z: Tensor):
        hidden = self.config.hidden
        both = self.init_head(z).tanh()
        return both[:, :hidden], both[:, hidden:]

    # -- teacher-forced decode -------------------------------------------------

    def decode(self, fmap: Tensor, z: Tensor, inputs: np.ndarray) -> Tensor:
        """Run the decoder over teacher-forced inputs (B, T, 5).

        Returns the raw head outputs (B, T, 6M+3).
        """
        b, t, _ = inputs.shape
        flat, pre = self.attention.precompute(fmap)
        h, c = self.init_state(z)
        hiddens = []
        for step in range(t):
            g, _ = self.attention.step(flat, pre, h)
            x = ag.concat([g, Tensor(inputs[:, step, :])], axis=1)
            h, c = self.lstm(x, h, c)
            hiddens.append(h)
        stacked = ag.stack(hiddens, axis=1).reshape(b * t, self.config.hidden)
        raw = self.out_head(stacked)
        return raw.reshape(b, t, self.config.output_dim)

    def loss(self, photos_nchw: np.ndarray, targets: np.ndarray, mask: np.ndarray, omega_kl: float, eps: np.ndarray):
        """Supervised VAE objective on a padded batch.

        targets: (B, T_pad, 5); mask: (B, T_pad). Returns a dict with
        tensors 'total', 'recon', 'kl'.
        """
        fmap, mu, log_var = self.encode(photos_nchw)
        z = reparameterize(mu, log_var, eps)
        inputs = decoder_inputs(targets)
        raw = self.decode(fmap, z, inputs)
        recon = reconstruction_loss(raw, targets, mask, self.config.mixtures)
        kl = kl_loss(mu, log_var)
        return {"total": vae_loss(recon, kl, omega_kl), "recon": recon, "kl": kl}

    # -- sampling ----------------------------------------------------------------

    def sample(
        self,
        photos_nchw: np.ndarray,
        rng: np.random.Generator | None = None,
        temperature: float = 1.0,
        greedy: bool = False,
        max_len: int | None = None,
    ) -> "SampleResult":
        """Autoregressively sample stroke sequences for a photo batch.

        Greedy mode picks the argmax mixture's mean and the argmax pen state
        deterministically (no rng needed, z = mu). Stochastic mode applies
        the temperature to the pi/pen logits (divides) and the variances
        (multiplies), and records the per-step log probability of the
        sampled point under the sampling distribution.
        """
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        if not greedy and rng is None:
            raise ValueError("stochastic sampling needs an rng")
        cfg = self.config
        max_len = cfg.t_max if max_len is None else min(max_len, cfg.t_max)
        b = photos_nchw.shape[0]
        m = cfg.mixtures

        with ag.no_grad():
            fmap, mu, log_var = self.encode(photos_nchw)
            if greedy:
                z = mu
            else:
                eps = rng.standard_normal(mu.shape)
                z = reparameterize(mu, log_var, eps)
            flat, pre = self.attention.precompute(fmap)
            h, c = self.init_state(z)

            points = np.zeros((b, max_len, 5))
            logp = np.zeros((b, max_len))
            h_trace = np.zeros((b, max_len, cfg.hidden))
            lengths = np.zeros(b, dtype=np.int64)
            active = np.ones(b, dtype=bool)
            prev = np.zeros((b, 5))
            prev[:, 2 + PEN_DOWN] = 1.0  # start token P0

            for t in range(max_len):
                g, _ = self.attention.step(flat, pre, h)
                x = ag.concat([g, Tensor(prev)], axis=1)
                h, c = self.lstm(x, h, c)
                raw = self.out_head(h).data
                params = split_gmm_params(raw, m, temperature=None if greedy else temperature)

                if greedy:
                    comp = np.argmax(params.pi, axis=1)
                    rows = np.arange(b)
                    dx = params.mu_x[rows, comp]
                    dy = params.mu_y[rows, comp]
                    pen = np.argmax(params.pen_logits, axis=1)
                else:
                    u = rng.random(b)
                    comp = (params.pi.cumsum(axis=1) < u[:, None]).sum(axis=1)
                    comp = np.minimum(comp, m - 1)
                    rows = np.arange(b)
                    e1 = rng.standard_normal(b)
                    e2 = rng.standard_normal(b)
                    rho = params.rho[rows, comp]
                    dx = params.mu_x[rows, comp] + params.sigma_x[rows, comp] * e1
                    dy = params.mu_y[rows, comp] + params.sigma_y[rows, comp] * (
                        rho * e1 + np.sqrt(1.0 - rho**2) * e2
                    )
                    pen_p = np.exp(params.pen_logits - params.pen_logits.max(axis=1, keepdims=True))
                    pen_p /= pen_p.sum(axis=1, keepdims=True)
                    pen = (pen_p.cumsum(axis=1) < rng.random(b)[:, None]).sum(axis=1)
                    pen = np.minimum(pen, 2)

                step_logp = gmm_nll(params, dx, dy) * -1.0 + pen_log_prob(params.pen_logits, pen)

                write = active
                points[write, t, 0] = dx[write]
                points[write, t, 1] = dy[write]
                points[write, t, 2 + pen[write]] = 1.0
                logp[write, t] = step_logp[write]
                h_trace[:, t, :] = h.data
                lengths[write] = t + 1
                active = active & (pen != PEN_END)

                prev = np.zeros((b, 5))
                prev[:, :2] = points[:, t, :2]
                prev[np.arange(b), 2 + np.argmax(points[:, t, 2:], axis=1)] = 1.0
                if not active.any():
                    break

            t_used = int(lengths.max())
            points = points[:, :t_used]
            logp = logp[:, :t_used]
            h_trace = h_trace[:, :t_used]

        # unfinished rows are terminated with a forced end state
        sequences = []
        for i in range(b):
            pts = points[i, : lengths[i]].copy()
            if pts[-1, 2 + PEN_END] != 1.0:
                pts[-1, 2:] = 0.0
                pts[-1, 2 + PEN_END] = 1.0
            sequences.append(StrokeSequence(pts))
        mask = (np.arange(t_used)[None, :] < lengths[:, None]).astype(np.float64)
        return SampleResult(sequences, points, lengths, logp, mask, h_trace, z.data.copy())


@dataclass
class SampleResult:
    sequences: list
    points: np.ndarray  # (B, T, 5) as sampled (before forced termination)
    lengths: np.ndarray  # (B,)
    logp: np.ndarray  # (B, T) per-step log prob under the sampling distribution
    mask: np.ndarray  # (B, T)
    h_trace: np.ndarray  # (B, T, hidden) decoder states, detached
    z: np.ndarray  # (B, n_z) latent actually used

    @property
    def logp_total(self) -> np.ndarray:
        return (self.logp * self.mask).sum(axis=1)


def decoder_inputs(targets: np.ndarray) -> np.ndarray:
    """Teacher-forcing inputs: start token followed by the shifted targets."""
    b, t, _ = targets.shape
    inputs = np.zeros_like(targets)
    inputs[:, 0, 2 + PEN_DOWN] = 1.0
    inputs[:, 1:] = targets[:, :-1]
    return inputs


def pad_batch(sequences, t_pad: int | None = None):
    """Pad stroke sequences to a common length with end-state targets.

    Returns (targets (B, T_pad, 5), mask (B, T_pad)).
    """
    lengths = [len(s) for s in sequences]
    t_pad = t_pad or max(lengths)
    b = len(sequences)
    targets = np.zeros((b, t_pad, 5))
    targets[:, :, 2 + PEN_END] = 1.0  # padding predicts "end"
    mask = np.zeros((b, t_pad))
    for i, seq in enumerate(sequences):
        t = min(len(seq), t_pad)
        targets[i, :t] = seq.points[:t]
        mask[i, :t] = 1.0
    return targets, mask


def sequence_log_prob(generator: Generator, photos_nchw: np.ndarray, result: SampleResult, temperature: float = 1.0) -> np.ndarray:
    """Teacher-forced recomputation of each sampled sequence's log prob.

    Uses the latent recorded in the sample; matches ``result.logp_total``.
    """
    with ag.no_grad():
        fmap, _, _ = generator.encode(photos_nchw)
        raw = generator.decode(fmap, Tensor(result.z), decoder_inputs(result.points))
    b, t, k = raw.shape
    flat = raw.data.reshape(b * t, k)
    params = split_gmm_params(flat, generator.config.mixtures, temperature=None if temperature == 1.0 else temperature)
    nll = gmm_nll(params, result.points[:, :, 0].reshape(-1), result.points[:, :, 1].reshape(-1))
    pen_idx = np.argmax(result.points[:, :, 2:], axis=2).reshape(-1)
    pen_lp = pen_log_prob(params.pen_logits, pen_idx)
    total = (-nll + pen_lp).reshape(b, t)
    return (total * result.mask).sum(axis=1)
