"""Per-modality encoder/decoder network.

The encoder is three fc layers d_t -> hidden -> hidden -> C whose final
pre-activation feeds two heads at once: a softmax over classes and a tanh
code that drives the mirror decoder (C -> hidden -> hidden -> d_t). The
second encoder layer's post-ReLU output is tapped as the feature the class
centers live in.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .rng import seed_stream

CHECKPOINT_VERSION = 1


@dataclass
class EncoderDecoder:
    encoder: list            # 3 DenseLayers
    decoder: list            # 3 DenseLayers, mirror of encoder
    centers: np.ndarray      # (C, hidden)
    dropout: float = nn.DEFAULT_DROPOUT

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_size

    @property
    def n_classes(self) -> int:
        return self.encoder[-1].out_size

    @property
    def hidden(self) -> int:
        return self.encoder[1].out_size

    def copy(self) -> "EncoderDecoder":
        return EncoderDecoder([l.copy() for l in self.encoder],
                              [l.copy() for l in self.decoder],
                              self.centers.copy(), self.dropout)


@dataclass
class EncodeOutput:
    x_f: np.ndarray          # (hidden, b) second-layer post-ReLU features
    logits: np.ndarray       # (C, b) final pre-activation
    x_softmax: np.ndarray    # (C, b)
    x_tanh: np.ndarray       # (C, b)


ENC_ACTS = ["relu", "relu", "identity"]
DEC_ACTS = ["relu", "relu", "identity"]


def init_model(d_t: int, n_classes: int, seed: int, hidden: int = 250,
               dropout: float = nn.DEFAULT_DROPOUT) -> EncoderDecoder:
    """Fresh model, deterministic under seed. Centers start at zero and are
    set from data by the trainer."""
    if d_t < 1:
        raise ValueError("d_t must be >= 1")
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = seed_stream(seed, "init")
    enc_sizes = [d_t, hidden, hidden, n_classes]
    dec_sizes = list(reversed(enc_sizes))
    encoder = [nn.init_layer(enc_sizes[i], enc_sizes[i + 1], rng)
               for i in range(3)]
    decoder = [nn.init_layer(dec_sizes[i], dec_sizes[i + 1], rng)
               for i in range(3)]
    centers = np.zeros((n_classes, hidden))
    return EncoderDecoder(encoder, decoder, centers, dropout)


def encode(model: EncoderDecoder, inputs: np.ndarray, train_mode: bool = False,
           rng: np.random.Generator | None = None):
    """Run the encoder; both heads are applied to the same final
    pre-activation. Returns (EncodeOutput, trace)."""
    logits, trace = nn.forward(model.encoder, ENC_ACTS, inputs,
                               train_mode=train_mode, rng=rng,
                               dropout=model.dropout)
    out = EncodeOutput(
        x_f=trace.postacts[1],
        logits=logits,
        x_softmax=nn.softmax(logits),
        x_tanh=np.tanh(logits),
    )
    return out, trace


def decode(model: EncoderDecoder, x_tanh: np.ndarray, train_mode: bool = False,
           rng: np.random.Generator | None = None):
    """Pass the tanh code through the decoder. Returns (x_hat, trace)."""
    return nn.forward(model.decoder, DEC_ACTS, x_tanh, train_mode=train_mode,
                      rng=rng, dropout=model.dropout)


def predict_label(model: EncoderDecoder, inputs: np.ndarray):
    """Argmax class per sample plus its softmax probability.

    Ties resolve to the lowest class index (argmax convention).
    """
    out, _ = encode(model, inputs, train_mode=False)
    labels = np.argmax(out.x_softmax, axis=0)
    confidences = out.x_softmax[labels, np.arange(out.x_softmax.shape[1])]
    return labels, confidences


def _pack(prefix: str, layers) -> dict:
    arrays = {}
    for i, layer in enumerate(layers):
        arrays[f"{prefix}{i}_w"] = layer.weights
        arrays[f"{prefix}{i}_b"] = layer.bias
    return arrays


def save_checkpoint(path, models: list):
    """Dump one or more modality models to a single npz file; the round
    trip is bit-exact."""
    arrays = {"version": np.array(CHECKPOINT_VERSION),
              "n_modalities": np.array(len(models))}
    for t, m in enumerate(models):
        arrays.update(_pack(f"m{t}_enc", m.encoder))
        arrays.update(_pack(f"m{t}_dec", m.decoder))
        arrays[f"m{t}_centers"] = m.centers
        arrays[f"m{t}_dropout"] = np.array(m.dropout)
    np.savez(path, **arrays)


def load_checkpoint(path) -> list:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        models = []
        for t in range(int(data["n_modalities"])):
            encoder = [nn.DenseLayer(data[f"m{t}_enc{i}_w"], data[f"m{t}_enc{i}_b"])
                       for i in range(3)]
            decoder = [nn.DenseLayer(data[f"m{t}_dec{i}_w"], data[f"m{t}_dec{i}_b"])
                       for i in range(3)]
            models.append(EncoderDecoder(encoder, decoder,
                                         data[f"m{t}_centers"],
                                         float(data[f"m{t}_dropout"])))
    return models
