"""Network container (encoder, decoder, self-expression C, FC head) and checkpoints."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import Conv2d, ConvTranspose2d, Dense, Flatten, Network, ReLU, Unflatten, softmax

MAGIC = b"RSCNCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def build_autoencoder(input_shape, encoder_spec, seed=0):
    """Conv encoder from ``encoder_spec`` and its mirrored transposed-conv decoder.

    ``input_shape`` is (C, H, W). The encoder ends in a Flatten so it
    produces one latent row per sample; the decoder starts by undoing it.
    The last decoder layer is linear.
    """
    rng = np.random.default_rng(seed)
    channels = [input_shape[0]] + [int(l["filters"]) for l in encoder_spec]
    enc, sizes = [], []
    shape = (1,) + tuple(input_shape)
    for i, layer in enumerate(encoder_spec):
        conv = Conv2d(channels[i], channels[i + 1], int(layer.get("kernel", 3)),
                      int(layer.get("stride", 1)), rng=rng)
        sizes.append(shape[2:])
        shape = conv.output_shape(shape)
        enc += [conv, ReLU()]
    enc_net = Network(enc + [Flatten()])
    dec = [Unflatten(shape[1:])]
    for i in range(len(encoder_spec) - 1, -1, -1):
        layer = encoder_spec[i]
        dec.append(ConvTranspose2d(channels[i + 1], channels[i], int(layer.get("kernel", 3)),
                                   int(layer.get("stride", 1)), rng=rng, output_size=sizes[i]))
        if i > 0:
            dec.append(ReLU())
    return enc_net, Network(dec)


class SubspaceNet:
    """All trainable parts of the model.

    With an empty encoder the model is shallow: samples are flattened and
    used directly as latent codes, and there is no decoder.
    """

    def __init__(self, input_shape, k, encoder_spec=(), seed=0):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.k = int(k)
        self.encoder_spec = [dict(l) for l in encoder_spec]
        self.seed = seed
        if self.encoder_spec:
            self.encoder, self.decoder = build_autoencoder(self.input_shape, self.encoder_spec, seed)
        else:
            self.encoder, self.decoder = Network([Flatten()]), None
        self.latent_dim = int(self.encoder.output_shape((1,) + self.input_shape)[1])
        self.head = Dense(self.latent_dim, self.k, rng=np.random.default_rng([seed, 1]))
        self.C = None
        self.centroids = np.zeros((self.k, self.k))

    @property
    def shallow(self):
        return self.decoder is None

    def init_C(self, n):
        self.C = np.zeros((n, n))
        return self.C

    def parameters(self, include_head=True, include_C=True):
        params = {f"enc.{n}": p for n, p in self.encoder.parameters().items()}
        if self.decoder is not None:
            params.update({f"dec.{n}": p for n, p in self.decoder.parameters().items()})
        if include_C and self.C is not None:
            params["C"] = self.C
        if include_head:
            params.update({f"head.{n}": p for n, p in self.head.params.items()})
        return params

    def _as_batch(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[1:] != self.input_shape:
            if X.ndim == 2 and X.shape[1] == int(np.prod(self.input_shape)):
                return X.reshape((len(X),) + self.input_shape)
            raise ValueError(f"input samples have shape {X.shape[1:]}, model expects {self.input_shape}")
        return X

    def encode(self, X):
        return self.encoder.forward(self._as_batch(X))

    def classify(self, Z):
        """Logits and softmax probabilities for latent rows Z."""
        logits = self.head.forward(np.atleast_2d(Z))
        return logits, softmax(logits)

    def predict(self, X):
        _, probs = self.classify(self.encode(X))
        return np.argmax(probs, axis=1)

    # -- checkpoints -------------------------------------------------------------
    def manifest(self):
        return {
            "input_shape": list(self.input_shape),
            "k": self.k,
            "encoder": self.encoder_spec,
            "seed": self.seed,
            "latent_dim": self.latent_dim,
            "encoder_layers": self.encoder.specs(),
            "decoder_layers": self.decoder.specs() if self.decoder is not None else [],
        }

    def state(self):
        arrays = dict(self.parameters())
        arrays["centroids"] = self.centroids
        return arrays

    def save(self, path, extra=None):
        manifest = self.manifest()
        if extra:
            manifest["extra"] = extra
        save_arrays(path, self.state(), manifest)

    @classmethod
    def load(cls, path):
        arrays, manifest = load_arrays(path)
        model = cls(manifest["input_shape"], manifest["k"], manifest["encoder"], manifest["seed"])
        if "C" in arrays:
            model.C = arrays.pop("C").copy()
        params = model.parameters()
        for name, value in arrays.items():
            if name == "centroids":
                model.centroids = value.copy()
                continue
            if name not in params:
                raise CheckpointError(f"checkpoint array {name!r} does not fit the architecture")
            if params[name].shape != value.shape:
                raise CheckpointError(f"{name}: shape {value.shape} != expected {params[name].shape}")
            params[name][...] = value
        return model


def save_arrays(path, arrays, manifest=None):
    """Versioned binary container: magic, version, JSON header, then row-major float64 payloads."""
    names = list(arrays)
    header = {
        "manifest": manifest or {},
        "arrays": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_arrays(path):
    raw = Path(path).read_bytes()
    head = len(MAGIC) + 8
    if len(raw) < head or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, size = struct.unpack("<II", raw[len(MAGIC):head])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[head:head + size])
    offset = head + size
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    return arrays, header["manifest"]


def save_matrix(path, C):
    save_arrays(path, {"C": C}, {"kind": "representation"})


def load_matrix(path):
    arrays, _ = load_arrays(path)
    return arrays["C"]
