"""Convolutional-BiLSTM multitask encoder-decoder with location-sensitive attention.

The encoder runs two strided conv blocks over (time, mel), then a bidirectional
convolutional LSTM over the downsampled time axis; per-step states are projected
to a context sequence that both decoders attend over.  The spectrogram decoder
uses location-sensitive attention, the transcript decoder content-based
attention, and the training loss is the plain sum L_mse + L_ce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import EOS, PAD, SOS, VOCAB_SIZE

MAGIC = b"SZCK"


@dataclass
class StutterZeroConfig:
    n_mels: int = 80
    conv_channels: tuple = (32, 64)
    conv_lstm_channels: int = 16
    conv_lstm_kernel: int = 3
    encoder_hidden: int = 256       # per direction; context is twice this
    prenet_dims: tuple = (256, 128)
    decoder_hidden: int = 512
    attention_dim: int = 128
    location_filters: int = 32
    location_kernel: int = 11
    embed_dim: int = 64
    transcript_hidden: int = 256
    vocab_size: int = VOCAB_SIZE
    prenet_dropout: float = 0.5
    max_decode_frames_ratio: float = 1.5
    energy_floor: float = -7.0      # de-normalized log10 power per frame
    energy_patience: int = 5

    @property
    def context_dim(self) -> int:
        return 2 * self.encoder_hidden

    def __post_init__(self):
        if any(v <= 0 for v in (self.n_mels, self.encoder_hidden, self.decoder_hidden,
                                self.attention_dim, self.vocab_size)):
            raise ValueError("all dimensions must be positive")


def mini_config(**overrides) -> StutterZeroConfig:
    """Reduced dimensions for desk-scale overfit runs (32 Mel channels, context 64)."""
    base = dict(n_mels=32, conv_channels=(8, 16), conv_lstm_channels=4,
                encoder_hidden=32, prenet_dims=(64, 32), decoder_hidden=64,
                attention_dim=32, location_filters=8, location_kernel=11,
                embed_dim=32, transcript_hidden=64)
    base.update(overrides)
    return StutterZeroConfig(**base)


def micro_config(**overrides) -> StutterZeroConfig:
    """Tiny instance for finite-difference checks of the full model."""
    base = dict(n_mels=8, conv_channels=(2, 3), conv_lstm_channels=2,
                encoder_hidden=4, prenet_dims=(6, 4), decoder_hidden=6,
                attention_dim=4, location_filters=2, location_kernel=3,
                embed_dim=3, transcript_hidden=5, vocab_size=6,
                prenet_dropout=0.0)
    base.update(overrides)
    return StutterZeroConfig(**base)


class LocationAttention(nn.Module):
    """Additive attention whose scores also see conv features of past alignments."""

    def __init__(self, query_dim, context_dim, attention_dim, n_filters, kernel, rng):
        self.query_proj = nn.Linear(query_dim, attention_dim, rng)
        self.memory_proj = nn.Linear(context_dim, attention_dim, rng)
        self.location_conv = nn.Conv1d(2, n_filters, kernel, rng)
        self.location_proj = nn.Linear(n_filters, attention_dim, rng)
        self.score_vec = nn.Linear(attention_dim, 1, rng)

    def __call__(self, query: Tensor, memory: Tensor, prev: Tensor, cumulative: Tensor):
        """query (1, q); memory (T, c); prev/cumulative (1, T) -> (context, weights, cum)."""
        feats = self.location_conv(ad.concat([prev, cumulative], axis=0))  # (F, T)
        feats = self.location_proj(ad.transpose(feats))                    # (T, att)
        scores = self.score_vec(ad.tanh(self.query_proj(query) + self.memory_proj(memory) + feats))
        weights = nn.softmax(ad.transpose(scores), axis=-1)                # (1, T)
        context = weights @ memory                                         # (1, c)
        return context, weights, cumulative + weights


class ContentAttention(nn.Module):
    def __init__(self, query_dim, context_dim, attention_dim, rng):
        self.query_proj = nn.Linear(query_dim, attention_dim, rng)
        self.memory_proj = nn.Linear(context_dim, attention_dim, rng)
        self.score_vec = nn.Linear(attention_dim, 1, rng)

    def __call__(self, query: Tensor, memory: Tensor):
        scores = self.score_vec(ad.tanh(self.query_proj(query) + self.memory_proj(memory)))
        weights = nn.softmax(ad.transpose(scores), axis=-1)
        return weights @ memory, weights


class Prenet(nn.Module):
    """Two bottleneck layers with dropout active in training and inference."""

    def __init__(self, in_dim, dims, dropout, rng):
        self.fc1 = nn.Linear(in_dim, dims[0], rng)
        self.fc2 = nn.Linear(dims[0], dims[1], rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, rng) -> Tensor:
        x = ad.dropout(ad.relu(self.fc1(x)), self.dropout, rng)
        return ad.dropout(ad.relu(self.fc2(x)), self.dropout, rng)


class StutterZero(nn.Module):
    def __init__(self, cfg: StutterZeroConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c1, c2 = cfg.conv_channels
        self.conv1 = nn.Conv2d(1, c1, (3, 3), (2, 2), (1, 1), rng)
        self.bn1 = nn.BatchNorm(c1)
        self.conv2 = nn.Conv2d(c1, c2, (3, 3), (2, 2), (1, 1), rng)
        self.bn2 = nn.BatchNorm(c2)
        self.mel_down = ((cfg.n_mels + 1) // 2 + 1) // 2  # ceil(ceil(n/2)/2)
        self.cell_fwd = nn.ConvLSTMCell(c2, cfg.conv_lstm_channels, rng, cfg.conv_lstm_kernel)
        self.cell_bwd = nn.ConvLSTMCell(c2, cfg.conv_lstm_channels, rng, cfg.conv_lstm_kernel)
        state_flat = cfg.conv_lstm_channels * self.mel_down
        self.proj_fwd = nn.Linear(state_flat, cfg.encoder_hidden, rng)
        self.proj_bwd = nn.Linear(state_flat, cfg.encoder_hidden, rng)

        self.prenet = Prenet(cfg.n_mels, cfg.prenet_dims, cfg.prenet_dropout, rng)
        self.attention = LocationAttention(cfg.decoder_hidden, cfg.context_dim,
                                           cfg.attention_dim, cfg.location_filters,
                                           cfg.location_kernel, rng)
        self.decoder_cell = nn.LSTMCell(cfg.prenet_dims[1] + cfg.context_dim,
                                        cfg.decoder_hidden, rng)
        self.frame_proj = nn.Linear(cfg.decoder_hidden + cfg.context_dim, cfg.n_mels, rng)

        self.embedding = nn.Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        self.transcript_cell = nn.LSTMCell(cfg.embed_dim + cfg.context_dim,
                                           cfg.transcript_hidden, rng)
        self.transcript_attention = ContentAttention(cfg.transcript_hidden, cfg.context_dim,
                                                     cfg.attention_dim, rng)
        self.vocab_proj = nn.Linear(cfg.transcript_hidden + cfg.context_dim,
                                    cfg.vocab_size, rng)

    # -- encoder ----------------------------------------------------------

    def encode(self, mel: np.ndarray, training: bool = True) -> Tensor:
        """mel: (T, n_mels) normalized log-Mel values -> (ceil(T/4), context_dim)."""
        if mel.shape[0] < 4:
            raise ValueError("encoder needs at least 4 input frames")
        dtype = self.conv1.weight.data.dtype
        x = Tensor(np.asarray(mel, dtype=dtype)[None, :, :])  # (1, T, n_mels)
        x = ad.relu(self.bn1(self.conv1(x), training))
        x = ad.relu(self.bn2(self.conv2(x), training))        # (C2, T4, M4)
        t4 = x.shape[1]
        steps = [x[:, t, :] for t in range(t4)]               # each (C2, M4)
        h_f, c_f = self.cell_fwd.zero_state(self.mel_down, dtype)
        h_b, c_b = self.cell_bwd.zero_state(self.mel_down, dtype)
        fwd, bwd = [], []
        for t in range(t4):
            h_f, c_f = self.cell_fwd(steps[t], h_f, c_f)
            fwd.append(h_f)
        for t in reversed(range(t4)):
            h_b, c_b = self.cell_bwd(steps[t], h_b, c_b)
            bwd.append(h_b)
        bwd.reverse()
        flat = lambda h: ad.reshape(h, (1, h.data.size))
        rows = [ad.concat([self.proj_fwd(flat(fwd[t])), self.proj_bwd(flat(bwd[t]))], axis=1)
                for t in range(t4)]
        return ad.concat(rows, axis=0)  # (T4, context_dim)

    # -- spectrogram decoder ----------------------------------------------

    def _init_alignment(self, t_enc, dtype):
        prev = np.zeros((1, t_enc), dtype=dtype)
        prev[0, 0] = 1.0
        return Tensor(prev), Tensor(np.zeros((1, t_enc), dtype=dtype))

    def decode_spectrogram(self, enc: Tensor, teacher: np.ndarray | None = None,
                           n_input_frames: int | None = None,
                           denorm: tuple = (0.0, 1.0), dropout_rng=None):
        """Teacher-forced when teacher frames are given, else free-running.

        Returns (frames Tensor (T_out, n_mels), alignments Tensor (T_out, T_enc)).
        """
        cfg = self.cfg
        dtype = enc.data.dtype
        dropout_rng = dropout_rng if dropout_rng is not None else np.random.default_rng(0)
        if teacher is None and n_input_frames is None:
            raise ValueError("free-running mode needs the input frame count for the length cap")
        max_steps = (teacher.shape[0] if teacher is not None
                     else max(1, int(cfg.max_decode_frames_ratio * n_input_frames)))
        t_enc = enc.shape[0]
        prev_w, cum = self._init_alignment(t_enc, dtype)
        h, c = self.decoder_cell.zero_state(dtype)
        context = Tensor(np.zeros((1, cfg.context_dim), dtype=dtype))
        prev_frame = Tensor(np.zeros((1, cfg.n_mels), dtype=dtype))
        mean, scale = denorm
        outputs, weights_rows = [], []
        quiet_run = 0
        heard_speech = False
        for step in range(max_steps):
            p = self.prenet(prev_frame, dropout_rng)
            h, c = self.decoder_cell(ad.concat([p, context], axis=1), h, c)
            context, w, cum = self.attention(h, enc, prev_w, cum)
            prev_w = w
            y = self.frame_proj(ad.concat([h, context], axis=1))  # (1, n_mels)
            outputs.append(y)
            weights_rows.append(w)
            if teacher is not None:
                prev_frame = Tensor(np.asarray(teacher[step], dtype=dtype)[None, :])
            else:
                prev_frame = Tensor(y.data.copy())
                energy = float(y.data.mean()) * scale + mean
                if energy >= cfg.energy_floor:
                    heard_speech = True
                    quiet_run = 0
                elif heard_speech:
                    # leading silence must not trip the end-of-utterance stop
                    quiet_run += 1
                if quiet_run >= cfg.energy_patience:
                    break
        return ad.concat(outputs, axis=0), ad.concat(weights_rows, axis=0)

    # -- transcript decoder -----------------------------------------------

    def decode_transcript(self, enc: Tensor, teacher_tokens=None, max_tokens: int = 200):
        """Returns (logits Tensor (L, vocab), predicted token ids list)."""
        cfg = self.cfg
        dtype = enc.data.dtype
        h, c = self.transcript_cell.zero_state(dtype)
        context = Tensor(np.zeros((1, cfg.context_dim), dtype=dtype))
        logits_rows, out_ids = [], []
        if teacher_tokens is not None:
            inputs = list(teacher_tokens)
        else:
            inputs = None
        token = SOS
        steps = len(inputs) if inputs is not None else max_tokens
        for step in range(steps):
            token = inputs[step] if inputs is not None else token
            if token >= cfg.vocab_size:
                raise ValueError(f"token id {token} outside vocabulary of {cfg.vocab_size}")
            emb = self.embedding([token])
            h, c = self.transcript_cell(ad.concat([emb, context], axis=1), h, c)
            context, _ = self.transcript_attention(h, enc)
            logits = self.vocab_proj(ad.concat([h, context], axis=1))
            logits_rows.append(logits)
            nxt = int(np.argmax(logits.data[0]))
            out_ids.append(nxt)
            if inputs is None:
                token = nxt
                if nxt == EOS:
                    break
        return ad.concat(logits_rows, axis=0), out_ids

    # -- training objective -----------------------------------------------

    def forward_train(self, stuttered: np.ndarray, fluent: np.ndarray, tokens,
                      ablate: bool = False, dropout_rng=None) -> dict:
        """Teacher-forced losses; L_total = L_mse + L_ce (or just L_mse when ablated)."""
        enc = self.encode(stuttered, training=True)
        pred, _ = self.decode_spectrogram(enc, teacher=fluent, dropout_rng=dropout_rng)
        l_mse = nn.mse(pred, fluent)
        if ablate:
            return {"mse": l_mse, "total": l_mse}
        targets = list(tokens[1:]) + [PAD]
        logits, _ = self.decode_transcript(enc, teacher_tokens=list(tokens))
        l_ce = nn.cross_entropy(logits, targets, pad_id=PAD)
        return {"mse": l_mse, "ce": l_ce, "total": l_mse + l_ce}

    def transcript_parameter_names(self):
        prefixes = ("embedding", "transcript_cell", "transcript_attention", "vocab_proj")
        return [n for n in self.parameters() if n.startswith(prefixes)]
