"""Small MLP policy network: masked softmax head, manual backprop, file format.

The network is a plain fully connected stack (ReLU hidden layers) whose
parameters live in one flat float64 vector, which keeps the optimizer and
the on-disk format trivial.  Two forward paths exist on purpose:

* ``forward_scalar`` walks the flat parameter vector with plain Python
  floats.  The compiled simulation kernel implements the identical loop, so
  the two backends stay bit-for-bit interchangeable.
* ``forward_batch`` is the vectorized numpy path used for training, with
  ``backward_logprob`` accumulating score-function gradients.

Weight files are portable: a fixed header (magic, activation tag, layer
sizes) followed by row-major weight and bias matrices as little-endian
float64, in layer order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"RCMLP1\x00\x00"
_ACT_TAG_LEN = 8


def param_count(sizes):
    return sum((sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1))


@dataclass
class MLPWeights:
    """Flat-parameter MLP with layer-size metadata."""

    sizes: tuple
    params: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.ndim != 1 or self.params.size != param_count(self.sizes):
            raise ValueError(
                f"parameter vector has {self.params.size} entries, "
                f"layer sizes {self.sizes} need {param_count(self.sizes)}"
            )

    def layers(self):
        """Yield (W, b) views into the flat parameter vector, layer by layer."""
        off = 0
        for i in range(len(self.sizes) - 1):
            n_in, n_out = self.sizes[i], self.sizes[i + 1]
            W = self.params[off : off + n_in * n_out].reshape(n_out, n_in)
            off += n_in * n_out
            b = self.params[off : off + n_out]
            off += n_out
            yield W, b

    def copy(self):
        return MLPWeights(self.sizes, self.params.copy(), self.activation)


def init_weights(sizes, rng, scale="he"):
    """He-normal weight init with zero biases, drawn from `rng`."""
    parts = []
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        std = math.sqrt(2.0 / n_in)
        parts.append(rng.normal(0.0, std, size=n_in * n_out))
        parts.append(np.zeros(n_out))
    return MLPWeights(tuple(sizes), np.concatenate(parts))


def forward_scalar(weights, observation, mask):
    """Masked-softmax action probabilities for a single observation.

    Pure Python float arithmetic over the flat parameter vector; masked
    entries come back exactly 0 and the legal entries sum to 1.  Raises
    ValueError when observation or mask length disagrees with the net.
    """
    sizes = weights.sizes
    if len(observation) != sizes[0]:
        raise ValueError(f"observation length {len(observation)} != input size {sizes[0]}")
    if len(mask) != sizes[-1]:
        raise ValueError(f"mask length {len(mask)} != output size {sizes[-1]}")
    p = weights.params
    x = [float(v) for v in observation]
    off = 0
    for layer in range(len(sizes) - 1):
        n_in, n_out = sizes[layer], sizes[layer + 1]
        out = [0.0] * n_out
        for j in range(n_out):
            acc = 0.0
            row = off + j * n_in
            for i in range(n_in):
                acc += p[row + i] * x[i]
            out[j] = acc
        off += n_in * n_out
        for j in range(n_out):
            out[j] += p[off + j]
        off += n_out
        if layer < len(sizes) - 2:
            for j in range(n_out):
                if out[j] < 0.0:
                    out[j] = 0.0
        x = out
    return masked_softmax_scalar(x, mask)


def masked_softmax_scalar(logits, mask):
    """Softmax over legal entries only; illegal entries are exactly 0."""
    if not any(mask):
        raise ValueError("at least one action must be legal")
    hi = -math.inf
    for z, legal in zip(logits, mask):
        if legal and z > hi:
            hi = z
    total = 0.0
    exps = [0.0] * len(logits)
    for i, (z, legal) in enumerate(zip(logits, mask)):
        if legal:
            exps[i] = math.exp(z - hi)
            total += exps[i]
    return [e / total for e in exps]


def sample_from_probs(probs, u):
    """Index of the first action whose cumulative probability exceeds u."""
    acc = 0.0
    last_legal = 0
    for i, p in enumerate(probs):
        if p > 0.0:
            last_legal = i
        acc += p
        if u < acc:
            return i
    return last_legal  # guard against accumulated rounding at u ~ 1


def forward_batch(weights, X, mask):
    """Vectorized forward pass.

    X: (B, n_in) observations, mask: (B, n_out) legality.  Returns
    (probs, cache); the cache feeds :func:`backward_logprob`.
    """
    acts = [np.asarray(X, dtype=np.float64)]
    pre = []
    h = acts[0]
    layer_list = list(weights.layers())
    for k, (W, b) in enumerate(layer_list):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < len(layer_list) - 1 else z
        acts.append(h)
    logits = np.where(mask, h, -np.inf)
    stable = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(stable)
    probs = e / e.sum(axis=1, keepdims=True)
    cache = (acts, pre, probs, np.asarray(mask, dtype=bool))
    return probs, cache


def backward_logprob(weights, cache, actions, step_weights):
    """Gradient of sum_i step_weights[i] * log pi(actions[i] | X[i]).

    Returns a flat vector aligned with ``weights.params``.  Masked actions
    have probability exactly zero, so gradients never flow through them.
    """
    acts, pre, probs, mask = cache
    B = probs.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(B), actions] = 1.0
    # d logpi / d logits for the masked softmax: onehot - probs on legal entries
    delta = (onehot - probs) * step_weights[:, None]
    delta[~mask] = 0.0

    grad = np.zeros_like(weights.params)
    layer_list = list(weights.layers())
    offsets = []
    off = 0
    for W, b in layer_list:
        offsets.append(off)
        off += W.size + b.size

    for k in range(len(layer_list) - 1, -1, -1):
        W, b = layer_list[k]
        h_in = acts[k]
        gW = delta.T @ h_in
        gb = delta.sum(axis=0)
        o = offsets[k]
        grad[o : o + W.size] = gW.ravel()
        grad[o + W.size : o + W.size + b.size] = gb
        if k > 0:
            delta = (delta @ W) * (pre[k - 1] > 0.0)
    return grad


def save_weights(path, weights):
    """Write the portable weight file (see module docstring)."""
    tag = weights.activation.encode("ascii")
    if len(tag) > _ACT_TAG_LEN:
        raise ValueError("activation tag too long")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(tag.ljust(_ACT_TAG_LEN, b"\x00"))
        fh.write(struct.pack("<I", len(weights.sizes)))
        fh.write(struct.pack(f"<{len(weights.sizes)}I", *weights.sizes))
        fh.write(np.ascontiguousarray(weights.params, dtype="<f8").tobytes())


def load_weights(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a policy weight file")
        activation = fh.read(_ACT_TAG_LEN).rstrip(b"\x00").decode("ascii")
        (n_sizes,) = struct.unpack("<I", fh.read(4))
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        raw = fh.read()
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return MLPWeights(sizes, params, activation)
