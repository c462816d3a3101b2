"""Dual-stream Transformer encoder-decoder with a convolutional post-net.

Post-LN blocks throughout (sublayer -> residual add -> layer norm).  The
encoder keeps the input time resolution and projects to a wider context
sequence consumed by both decoders through cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import EOS, PAD, SOS, VOCAB_SIZE

MAGIC = b"SFCK"


@dataclass
class StutterFormerConfig:
    n_mels: int = 80
    model_dim: int = 128
    context_dim: int = 256
    n_encoder_layers: int = 3
    n_decoder_layers: int = 3
    n_heads: int = 4
    ffn_dim: int = 512
    postnet_layers: int = 5
    postnet_channels: int = 256
    postnet_kernel: int = 5
    prenet_dims: tuple = (256, 128)
    embed_dim: int = 128
    vocab_size: int = VOCAB_SIZE
    prenet_dropout: float = 0.5
    max_decode_frames_ratio: float = 1.5
    energy_floor: float = -7.0
    energy_patience: int = 5
    max_len: int = 2000
    loss_weights: tuple = (1.0, 1.0, 1.0)  # (mse, mae, ce)

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ValueError("model_dim must be divisible by n_heads")
        if self.postnet_layers != 5:
            raise ValueError("post-net uses exactly five 1-D convolutions")


def mini_config(**overrides) -> StutterFormerConfig:
    base = dict(n_mels=32, model_dim=32, context_dim=64, ffn_dim=64,
                postnet_channels=32, prenet_dims=(64, 32), embed_dim=32)
    base.update(overrides)
    return StutterFormerConfig(**base)


def micro_config(**overrides) -> StutterFormerConfig:
    base = dict(n_mels=6, model_dim=4, context_dim=6, n_encoder_layers=1,
                n_decoder_layers=1, n_heads=2, ffn_dim=6, postnet_channels=4,
                postnet_kernel=3, prenet_dims=(5, 4), embed_dim=4, vocab_size=6,
                prenet_dropout=0.0)
    base.update(overrides)
    return StutterFormerConfig(**base)


def causal_mask(t: int) -> np.ndarray:
    return np.triu(np.ones((t, t), dtype=bool), k=1)


class FeedForward(nn.Module):
    def __init__(self, dim, hidden, rng):
        self.fc1 = nn.Linear(dim, hidden, rng)
        self.fc2 = nn.Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: StutterFormerConfig, rng):
        d = cfg.model_dim
        self.self_attn = nn.MultiHeadAttention(d, d, d, cfg.n_heads, rng)
        self.norm1 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_dim, rng)
        self.norm2 = nn.LayerNorm(d)

    def __call__(self, x: Tensor) -> Tensor:
        attn_out, _ = self.self_attn(x, x, x)
        x = self.norm1(x + attn_out)
        return self.norm2(x + self.ffn(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: StutterFormerConfig, rng):
        d = cfg.model_dim
        self.self_attn = nn.MultiHeadAttention(d, d, d, cfg.n_heads, rng)
        self.norm1 = nn.LayerNorm(d)
        self.cross_attn = nn.MultiHeadAttention(d, cfg.context_dim, d, cfg.n_heads, rng)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_dim, rng)
        self.norm3 = nn.LayerNorm(d)

    def __call__(self, x: Tensor, context: Tensor, mask: np.ndarray) -> Tensor:
        attn_out, _ = self.self_attn(x, x, x, mask)
        x = self.norm1(x + attn_out)
        cross_out, _ = self.cross_attn(x, context, context)
        x = self.norm2(x + cross_out)
        return self.norm3(x + self.ffn(x))

    def step(self, x_row: Tensor, x_all: Tensor, context: Tensor) -> Tensor:
        """One incremental row; x_all holds every layer input up to and
        including x_row, so causality needs no mask."""
        attn_out, _ = self.self_attn(x_row, x_all, x_all)
        x = self.norm1(x_row + attn_out)
        cross_out, _ = self.cross_attn(x, context, context)
        x = self.norm2(x + cross_out)
        return self.norm3(x + self.ffn(x))


class PostNet(nn.Module):
    """Five same-padded 1-D convolutions over the channel axis; tanh on 1-4."""

    def __init__(self, cfg: StutterFormerConfig, rng):
        c, k, m = cfg.postnet_channels, cfg.postnet_kernel, cfg.n_mels
        dims = [m] + [c] * (cfg.postnet_layers - 1) + [m]
        self.convs = [nn.Conv1d(dims[i], dims[i + 1], k, rng)
                      for i in range(cfg.postnet_layers)]

    def __call__(self, frames: Tensor) -> Tensor:
        """frames: (T, n_mels); returns the residual refinement, same shape."""
        x = ad.transpose(frames)  # (n_mels, T)
        for conv in self.convs[:-1]:
            x = ad.tanh(conv(x))
        x = self.convs[-1](x)
        return ad.transpose(x)


class StutterFormer(nn.Module):
    def __init__(self, cfg: StutterFormerConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        d = cfg.model_dim
        self.input_proj = nn.Linear(cfg.n_mels, d, rng)
        self.encoder_layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_encoder_layers)]
        self.context_proj = nn.Linear(d, cfg.context_dim, rng)

        self.prenet_fc1 = nn.Linear(cfg.n_mels, cfg.prenet_dims[0], rng)
        self.prenet_fc2 = nn.Linear(cfg.prenet_dims[0], d, rng)
        self.spec_layers = [DecoderLayer(cfg, rng) for _ in range(cfg.n_decoder_layers)]
        self.frame_proj = nn.Linear(d, cfg.n_mels, rng)
        self.postnet = PostNet(cfg, rng)

        self.embedding = nn.Embedding(cfg.vocab_size, d, rng)
        self.text_layers = [DecoderLayer(cfg, rng) for _ in range(cfg.n_decoder_layers)]
        self.vocab_proj = nn.Linear(d, cfg.vocab_size, rng)
        self._pe = nn.sinusoidal_pe(cfg.max_len, d)

    def _pe_slice(self, t, dtype):
        return Tensor(self._pe[:t].astype(dtype))

    # -- encoder ----------------------------------------------------------

    def encode(self, mel: np.ndarray, training: bool = True) -> Tensor:
        """mel (T, n_mels) -> context sequence (T, context_dim)."""
        dtype = self.input_proj.weight.data.dtype
        x = Tensor(np.asarray(mel, dtype=dtype))
        x = self.input_proj(x) + self._pe_slice(x.shape[0], dtype)
        for layer in self.encoder_layers:
            x = layer(x)
        return self.context_proj(x)

    # -- spectrogram decoder ----------------------------------------------

    def _prenet(self, frames: Tensor, rng) -> Tensor:
        p = self.cfg.prenet_dropout
        x = ad.dropout(ad.relu(self.prenet_fc1(frames)), p, rng)
        return ad.dropout(ad.relu(self.prenet_fc2(x)), p, rng)

    def _spec_step(self, inputs: np.ndarray, context: Tensor, dropout_rng) -> Tensor:
        """Run the decoder stack on all frames so far; inputs (T, n_mels)."""
        dtype = context.data.dtype
        t = inputs.shape[0]
        x = self._prenet(Tensor(np.asarray(inputs, dtype=dtype)), dropout_rng)
        x = x + self._pe_slice(t, dtype)
        mask = causal_mask(t)
        for layer in self.spec_layers:
            x = layer(x, context, mask)
        return self.frame_proj(x)  # (T, n_mels)

    def decode_spectrogram(self, context: Tensor, teacher: np.ndarray | None = None,
                           n_input_frames: int | None = None,
                           denorm: tuple = (0.0, 1.0), dropout_rng=None,
                           return_pre: bool = False):
        """Causal decode; post-net residual refinement on the full sequence.

        The autoregressive stream (pre post-net) is strictly causal in the
        teacher frames; the post-net then smooths over a 5-frame window, so ask
        for ``return_pre`` when checking causality.
        """
        cfg = self.cfg
        dropout_rng = dropout_rng if dropout_rng is not None else np.random.default_rng(0)
        if teacher is not None:
            # one parallel pass: inputs are the previous ground-truth frames
            inputs = np.vstack([np.zeros((1, cfg.n_mels)), np.asarray(teacher)[:-1]])
            pre = self._spec_step(inputs, context, dropout_rng)
        else:
            if n_input_frames is None:
                raise ValueError("free-running mode needs the input frame count")
            max_steps = max(1, int(cfg.max_decode_frames_ratio * n_input_frames))
            mean, scale = denorm
            dtype = context.data.dtype
            # incremental decode: each layer keeps its input rows so far, new
            # rows attend over them; one pass per frame instead of re-running
            # the whole prefix every step
            caches: list[list[np.ndarray]] = [[] for _ in self.spec_layers]
            prev = np.zeros((1, cfg.n_mels), dtype=dtype)
            out_rows = []
            quiet_run = 0
            heard_speech = False
            for step in range(max_steps):
                x = self._prenet(Tensor(prev), np.random.default_rng(step))
                x = x + Tensor(self._pe[step:step + 1].astype(dtype))
                for cache, layer in zip(caches, self.spec_layers):
                    cache.append(x.data)
                    x = layer.step(x, Tensor(np.concatenate(cache, axis=0)), context)
                y = self.frame_proj(x)  # (1, n_mels)
                out_rows.append(y.data[0])
                prev = y.data
                energy = float(y.data.mean()) * scale + mean
                if energy >= cfg.energy_floor:
                    heard_speech = True
                    quiet_run = 0
                elif heard_speech:
                    # leading silence must not trip the end-of-utterance stop
                    quiet_run += 1
                if quiet_run >= cfg.energy_patience:
                    break
            pre = Tensor(np.asarray(out_rows, dtype=dtype))
        post = pre + self.postnet(pre)
        if return_pre:
            return post, pre
        return post

    # -- transcript decoder -----------------------------------------------

    def decode_transcript(self, context: Tensor, teacher_tokens=None, max_tokens: int = 200):
        cfg = self.cfg
        dtype = context.data.dtype

        def run(token_ids):
            t = len(token_ids)
            x = self.embedding(token_ids) + self._pe_slice(t, dtype)
            mask = causal_mask(t)
            for layer in self.text_layers:
                x = layer(x, context, mask)
            return self.vocab_proj(x)

        if teacher_tokens is not None:
            logits = run(list(teacher_tokens))
            return logits, [int(i) for i in np.argmax(logits.data, axis=1)]
        tokens = [SOS]
        for _ in range(max_tokens):
            logits = run(tokens)
            nxt = int(np.argmax(logits.data[-1]))
            tokens.append(nxt)
            if nxt == EOS:
                break
        return run(tokens[:-1]) if len(tokens) > 1 else run(tokens), tokens[1:]

    # -- training objective -----------------------------------------------

    def forward_train(self, stuttered: np.ndarray, fluent: np.ndarray, tokens,
                      ablate: bool = False, dropout_rng=None) -> dict:
        """L_total = w1*L_mse + w2*L_mae + w3*L_ce (unit weights by default)."""
        w1, w2, w3 = self.cfg.loss_weights
        context = self.encode(stuttered, training=True)
        pred, pre = self.decode_spectrogram(context, teacher=fluent,
                                            dropout_rng=dropout_rng, return_pre=True)
        # the pre-postnet stream is what free-running decode feeds back, so it
        # must be trained against the target too or inference inputs drift
        l_mse = (nn.mse(pred, fluent) + nn.mse(pre, fluent)) * 0.5
        l_mae = (nn.mae(pred, fluent) + nn.mae(pre, fluent)) * 0.5
        if ablate:
            return {"mse": l_mse, "mae": l_mae, "total": l_mse * w1 + l_mae * w2}
        targets = list(tokens[1:]) + [PAD]
        logits, _ = self.decode_transcript(context, teacher_tokens=list(tokens))
        l_ce = nn.cross_entropy(logits, targets, pad_id=PAD)
        return {"mse": l_mse, "mae": l_mae, "ce": l_ce,
                "total": l_mse * w1 + l_mae * w2 + l_ce * w3}

    def transcript_parameter_names(self):
        prefixes = ("embedding", "text_layers", "vocab_proj")
        return [n for n in self.parameters() if n.startswith(prefixes)]
