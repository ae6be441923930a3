"""Full model assembly: embedded windows flow through a gated-attention
encoder, the factor-conditioned latent path, and a gated-attention decoder
whose outputs feed the backcast and forecast heads.

The training objective is mean-squared backcast error plus mean-squared
forecast error plus a weighted KL term between the flowed posterior and
prior.  Six independent switches disable the excitation stage, the attention
gates, the factor-conditioned distributions, the flow, the KL term, and the
backcast head, each falling back to the plain-transformer behavior.

Everything is written over arbitrary leading batch axes: the documented
shapes (w x d memory, 9 x d factors) hold verbatim for a single window, and
training simply prepends a batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from datetime import datetime

import numpy as np

from tcvae.attention import GatedMultiHeadAttention, causal_mask
from tcvae.autodiff import (
    NonFiniteError,
    Parameter,
    Tensor,
    concat,
    default_dtype,
    matmul,
    no_grad,
    relu,
    rng_for,
)
from tcvae.data import DataError, Scaler, WindowBatch, stamp_features
from tcvae.embedding import InputEmbedding, build_decoder_input
from tcvae.factors import FACTOR_COUNT, HawkesAttention, extract_factors
from tcvae.latent import (
    FlowDynamics,
    GaussianParams,
    LatentSample,
    PosteriorNet,
    PriorNet,
    align_through_flow,
    ccnf_transform,
    closed_form_gaussian_kl,
    kl_divergence,
    sample_latent,
)
from tcvae.modules import MLP, LayerNorm, Linear, Module

__all__ = [
    "Adam",
    "DecoderBlock",
    "EncodeResult",
    "EncoderBlock",
    "ForecastOutput",
    "ModelConfig",
    "TCVAE",
    "TrainingError",
]

# entropy-stream namespaces so init, shuffling, and latent draws never collide
_INIT_STREAM = 0
_SHUFFLE_STREAM = 1
_LATENT_STREAM = 2


class TrainingError(RuntimeError):
    """Raised when optimization hits a non-finite loss."""


@dataclass
class ModelConfig:
    """Hyperparameters and ablation switches for one model instance."""

    d_x: int
    w: int
    h: int
    d: int = 64
    k: int = 64
    heads: int = 4
    token_len: int | None = None
    encoder_layers: int = 2
    decoder_layers: int = 1
    ffn_hidden: int | None = None
    flow_steps: int = 20
    lambda_kl: float = 0.01
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    target_columns: tuple[int, ...] | None = None
    use_tha: bool = True
    use_gam: bool = True
    use_fda: bool = True
    use_ccnf: bool = True
    use_kl: bool = True
    use_backcast: bool = True

    def __post_init__(self):
        if self.token_len is None:
            self.token_len = max(1, self.w // 2)
        if self.ffn_hidden is None:
            self.ffn_hidden = 2 * self.d
        if self.d % self.heads != 0:
            raise ValueError(f"model width {self.d} not divisible by {self.heads} heads")
        if self.d % 2 != 0:
            raise ValueError(f"model width must be even; got {self.d}")
        if self.lambda_kl < 0:
            raise ValueError(f"KL weight must be non-negative; got {self.lambda_kl}")
        if not 1 <= self.token_len <= self.w:
            raise ValueError(f"token_len must be in [1, {self.w}]; got {self.token_len}")
        if self.target_columns is not None:
            self.target_columns = tuple(int(c) for c in self.target_columns)
            if any(not 0 <= c < self.d_x for c in self.target_columns):
                raise ValueError(f"target columns out of range for {self.d_x} variables")

    @property
    def d_y(self) -> int:
        return self.d_x if self.target_columns is None else len(self.target_columns)

    @property
    def decoder_length(self) -> int:
        return self.token_len + self.h

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("target_columns") is not None:
            d["target_columns"] = tuple(d["target_columns"])
        return cls(**d)


@dataclass
class EncodeResult:
    """Encoder-side products consumed by the latent path and decoder."""

    memory: Tensor               # (..., w, d)
    factors: Tensor              # (..., 9, d)
    posterior: GaussianParams    # (..., w, k)
    prior: GaussianParams        # (..., w, k)


@dataclass
class ForecastOutput:
    """Decoded window with its loss components (scalars, zero when a term
    is switched off)."""

    backcast: Tensor | None      # (..., w, d_x)
    forecast: Tensor             # (..., h, d_y)
    reconstruction: Tensor
    forecasting: Tensor
    kl: Tensor
    total: Tensor


class EncoderBlock(Module):
    """Gated multi-head self-attention and a feed-forward stage, each as a
    residual branch normalized on entry.

    Normalizing the branch input rather than the residual sum leaves a
    linear path from the value embedding to the output heads, so a level
    shift in the inputs can pass straight through; with the sum normalized
    instead, the fixed-norm state must encode absolute level in its
    direction, which trains slowly and extrapolates poorly under drift."""

    def __init__(self, d: int, heads: int, ffn_hidden: int, rng: np.random.Generator):
        self.attention = GatedMultiHeadAttention(d, heads, FACTOR_COUNT, rng)
        self.attention_norm = LayerNorm(d)
        self.ffn_in = Linear(d, ffn_hidden, rng)
        self.ffn_out = Linear(ffn_hidden, d, rng)
        self.ffn_norm = LayerNorm(d)

    def __call__(self, x: Tensor, factors: Tensor, gated: bool) -> Tensor:
        attended = self.attention(self.attention_norm(x),
                                  factors=factors if gated else None, gated=gated)
        x = x + attended
        return x + self.ffn_out(relu(self.ffn_in(self.ffn_norm(x))))


class DecoderBlock(Module):
    """Causally masked gated self-attention, gated cross-attention over the
    encoder memory, then the feed-forward stage; residual branches are
    normalized on entry as in the encoder block."""

    def __init__(self, d: int, heads: int, ffn_hidden: int, rng: np.random.Generator):
        self.self_attention = GatedMultiHeadAttention(d, heads, FACTOR_COUNT, rng)
        self.self_norm = LayerNorm(d)
        self.cross_attention = GatedMultiHeadAttention(d, heads, FACTOR_COUNT, rng)
        self.cross_norm = LayerNorm(d)
        self.ffn_in = Linear(d, ffn_hidden, rng)
        self.ffn_out = Linear(ffn_hidden, d, rng)
        self.ffn_norm = LayerNorm(d)

    def __call__(self, x: Tensor, memory: Tensor, factors: Tensor, gated: bool) -> Tensor:
        fac = factors if gated else None
        attended = self.self_attention(self.self_norm(x), factors=fac,
                                       mask=causal_mask(x.shape[-2]), gated=gated)
        x = x + attended
        crossed = self.cross_attention(self.cross_norm(x), factors=fac,
                                       memory=memory, gated=gated)
        x = x + crossed
        return x + self.ffn_out(relu(self.ffn_in(self.ffn_norm(x))))


def _seed_tuple(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def _mse(prediction: Tensor, target: np.ndarray) -> Tensor:
    diff = prediction - Tensor(np.asarray(target, dtype=prediction.data.dtype))
    return (diff * diff).mean()


class TCVAE(Module):
    """Temporal conditional variational autoencoder for window forecasting."""

    def __init__(self, config: ModelConfig):
        cfg = config
        rng = rng_for((cfg.seed, _INIT_STREAM))
        self.config = cfg
        self.embedding = InputEmbedding(cfg.d_x, cfg.d, cfg.w, rng)
        self.hawkes = HawkesAttention(cfg.d, rng)
        self.encoder_blocks = [EncoderBlock(cfg.d, cfg.heads, cfg.ffn_hidden, rng)
                               for _ in range(cfg.encoder_layers)]
        self.prior_net = PriorNet(FACTOR_COUNT, cfg.d, cfg.k, rng)
        self.posterior_net = PosteriorNet(cfg.d, FACTOR_COUNT, cfg.k, rng)
        self.prior_generator = MLP(cfg.k, cfg.k, cfg.k, rng)
        self.posterior_generator = MLP(cfg.k, cfg.k, cfg.k, rng)
        self.prior_condition = Linear(FACTOR_COUNT * cfg.d, cfg.k, rng)
        self.posterior_condition = Linear((cfg.w + FACTOR_COUNT) * cfg.d, cfg.k, rng)
        self.flow = FlowDynamics(cfg.k, cfg.k, rng)
        self.latent_proj = Linear(cfg.k, cfg.d, rng)
        self.decoder_blocks = [DecoderBlock(cfg.d, cfg.heads, cfg.ffn_hidden, rng)
                               for _ in range(cfg.decoder_layers)]
        self.backcast_head = Linear(cfg.d, cfg.d_x, rng)
        self.backcast_mix = Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(cfg.decoder_length),
                       size=(cfg.w, cfg.decoder_length)).astype(default_dtype()))
        self.forecast_head = Linear(cfg.d, cfg.d_y, rng)
        self.assign_names()

    # -- encoder side ----------------------------------------------------

    def encode(self, values, stamps) -> EncodeResult:
        cfg = self.config
        embedded = self.embedding(values, stamps)
        modulated = self.hawkes(embedded.combined, modulate=cfg.use_tha)
        factors = extract_factors(modulated)
        state = embedded.combined
        for block in self.encoder_blocks:
            state = block(state, factors, cfg.use_gam)
        if cfg.use_fda:
            posterior = self.posterior_net(state, factors)
            prior = self.prior_net(factors, cfg.w)
        else:
            muted = Tensor(np.zeros_like(factors.data))
            posterior = self.posterior_net(state, muted)
            prior = GaussianParams(Tensor(np.zeros_like(posterior.mean.data)),
                                   Tensor(np.zeros_like(posterior.log_var.data)))
        return EncodeResult(memory=state, factors=factors,
                            posterior=posterior, prior=prior)

    # -- latent side -----------------------------------------------------

    def _flat_condition(self, rows: Tensor, proj: Linear) -> Tensor:
        lead = rows.shape[:-2]
        flat = rows.reshape(lead + (1, rows.shape[-2] * rows.shape[-1]))
        return proj(flat).reshape(lead + (proj.weight.shape[-1],))

    def latent_path(self, enc: EncodeResult, seed) -> tuple[LatentSample, LatentSample]:
        """Draw and transform the posterior latent; produce the prior record.

        With the flow on, the raw draw itself is transported so that the
        stored base density and trace correction describe the transformed
        point exactly; the generator shapes the decoder's copy downstream
        instead (see decoder_latent).  An unbounded generator inside the
        density chain would let training inflate the posterior scale at no
        reconstruction cost, because the saturating generator screens the
        decoder from the blow-up while the drawn point's log-density pays
        the loss.  The prior side is then an evaluation record of the
        posterior's transformed point under the prior's flowed density,
        built by reverse integration; the prior's own sample stream is
        consumed only when the flow is off.
        """
        cfg = self.config
        base = _seed_tuple(seed)
        if cfg.use_fda and cfg.use_ccnf:
            posterior = sample_latent(enc.posterior, None, base + (0,))
            joined = concat([enc.memory, enc.factors], axis=-2)
            cond_post = self._flat_condition(joined, self.posterior_condition)
            cond_prior = self._flat_condition(enc.factors, self.prior_condition)
            posterior.flow_output, posterior.flow_correction = ccnf_transform(
                posterior.latent, cond_post, self.flow, cfg.flow_steps)
            prior = align_through_flow(posterior.flow_output, enc.prior,
                                       cond_prior, self.flow, cfg.flow_steps)
        else:
            gen_post = self.posterior_generator if cfg.use_fda else None
            gen_prior = self.prior_generator if cfg.use_fda else None
            posterior = sample_latent(enc.posterior, gen_post, base + (0,))
            prior = sample_latent(enc.prior, gen_prior, base + (1,))
        return posterior, prior

    def decoder_latent(self, posterior: LatentSample) -> Tensor:
        """Latent actually fed to the decoder.

        With the flow on the generator is applied here, after the flow, so
        the sample's density bookkeeping stays exact; with the flow off the
        generator has already been applied inside the draw."""
        cfg = self.config
        if cfg.use_fda and cfg.use_ccnf:
            return self.posterior_generator(posterior.flow_output)
        return posterior.flow_output

    def kl_term(self, enc: EncodeResult, posterior: LatentSample,
                prior: LatentSample) -> Tensor:
        """Per-element KL: the single-draw estimate when the flow runs, the
        exact Gaussian form when it does not."""
        if self.config.use_fda and self.config.use_ccnf:
            return kl_divergence(posterior, prior)
        return closed_form_gaussian_kl(enc.posterior, enc.prior)

    # -- decoder side ----------------------------------------------------

    def decode(self, values: np.ndarray, input_stamps: np.ndarray,
               target_stamps: np.ndarray, z_star: Tensor,
               memory: Tensor) -> tuple[Tensor | None, Tensor]:
        cfg = self.config
        dec_values, dec_stamps = build_decoder_input(
            np.asarray(values, dtype=default_dtype()), input_stamps,
            target_stamps, cfg.token_len)
        embedded = self.embedding(dec_values, dec_stamps)
        modulated = self.hawkes(embedded.combined, modulate=cfg.use_tha)
        dec_factors = extract_factors(modulated)
        augmented = memory + self.latent_proj(z_star)
        state = embedded.combined
        for block in self.decoder_blocks:
            state = block(state, augmented, dec_factors, cfg.use_gam)
        length = state.shape[-2]
        forecast = self.forecast_head(state[..., length - cfg.h:, :])
        backcast = None
        if cfg.use_backcast:
            backcast = matmul(self.backcast_mix, self.backcast_head(state))
        return backcast, forecast

    # -- objective -------------------------------------------------------

    def forward(self, inputs: np.ndarray, targets: np.ndarray,
                input_stamps: np.ndarray, target_stamps: np.ndarray,
                seed) -> ForecastOutput:
        cfg = self.config
        enc = self.encode(inputs, input_stamps)
        posterior, prior = self.latent_path(enc, seed)
        backcast, forecast = self.decode(inputs, input_stamps, target_stamps,
                                         self.decoder_latent(posterior), enc.memory)
        zero = Tensor(np.asarray(0.0, dtype=forecast.data.dtype))
        reconstruction = _mse(backcast, inputs) if cfg.use_backcast else zero
        forecasting = _mse(forecast, targets)
        kl = self.kl_term(enc, posterior, prior).mean() if cfg.use_kl else zero
        total = reconstruction + forecasting + cfg.lambda_kl * kl
        return ForecastOutput(backcast=backcast, forecast=forecast,
                              reconstruction=reconstruction,
                              forecasting=forecasting, kl=kl, total=total)

    # -- training --------------------------------------------------------

    def fit(self, windows: WindowBatch, progress=None) -> list[float]:
        """Adam over shuffled minibatches; returns the per-epoch mean loss.

        Deterministic given the config seed: shuffles and latent draws use
        counter-based streams keyed by (seed, epoch, step).
        """
        cfg = self.config
        optimizer = Adam(self.parameters(), cfg.learning_rate)
        count = len(windows)
        if count == 0:
            raise DataError("cannot fit on an empty window set")
        steps = math.ceil(count / cfg.batch_size)
        trace: list[float] = []
        for epoch in range(cfg.epochs):
            order = rng_for((cfg.seed, _SHUFFLE_STREAM, epoch)).permutation(count)
            accumulated = 0.0
            for step in range(steps):
                chosen = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
                batch = windows.select(chosen)
                self.zero_grad()
                try:
                    out = self.forward(batch.inputs, batch.targets,
                                       batch.input_stamps, batch.target_stamps,
                                       seed=(cfg.seed, _LATENT_STREAM, epoch, step))
                    out.total.backward()
                except NonFiniteError as err:
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {step}") from err
                optimizer.step()
                accumulated += float(out.total.data) * len(chosen)
            trace.append(accumulated / count)
            if progress is not None:
                progress(epoch, trace[-1])
        return trace

    # -- inference -------------------------------------------------------

    def predict_normalized(self, inputs: np.ndarray, input_stamps: np.ndarray,
                           target_stamps: np.ndarray, seed) -> np.ndarray:
        """Forecast in normalized units via the posterior path; no gradients."""
        with no_grad():
            enc = self.encode(inputs, input_stamps)
            posterior, _ = self.latent_path(enc, seed)
            _, forecast = self.decode(inputs, input_stamps, target_stamps,
                                      self.decoder_latent(posterior), enc.memory)
        return np.asarray(forecast.data)

    def forecast(self, values: np.ndarray, timestamps: list[datetime],
                 scaler: Scaler, seed=0) -> np.ndarray:
        """Raw-unit horizon forecast for one window of raw observations."""
        cfg = self.config
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != cfg.w:
            raise DataError(f"expected a {cfg.w}-row window, got shape {values.shape}")
        if len(timestamps) != cfg.w:
            raise DataError(f"expected {cfg.w} timestamps, got {len(timestamps)}")
        normalized = scaler.transform(values).astype(default_dtype())
        input_stamps = np.stack([stamp_features(ts) for ts in timestamps])
        spacing = timestamps[1] - timestamps[0]
        future = [timestamps[-1] + (i + 1) * spacing for i in range(cfg.h)]
        target_stamps = np.stack([stamp_features(ts) for ts in future])
        predicted = self.predict_normalized(normalized, input_stamps,
                                            target_stamps, seed)
        columns = np.asarray(cfg.target_columns if cfg.target_columns is not None
                             else range(cfg.d_x))
        return predicted * scaler.denominator[columns] + scaler.min_vec[columns]


class Adam:
    """Adam with bias correction and a fixed learning rate.  Parameters that
    received no gradient in a step are left untouched."""

    def __init__(self, params: list[Parameter], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
