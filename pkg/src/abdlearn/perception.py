"""Perception model: a small feed-forward softmax classifier.

Maps raw fixed-length feature vectors to distributions over symbolic values
and is trained by SGD on pseudo-labels coming out of abduction.  Backprop is
hand-rolled on numpy; grad_check verifies it against central finite
differences.  PairModel wraps a 2-class net into an antisymmetric scorer for
the dyadic ordering relation.
"""

from __future__ import annotations

import struct
from typing import Iterable, Optional

import numpy as np

_MAGIC = b"ABDM"
_VERSION = 1


class PerceptionError(ValueError):
    pass


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class MLP:
    """One hidden rectifier layer, softmax output, SGD with momentum."""

    def __init__(
        self,
        n_in: int,
        n_classes: int,
        hidden: int = 64,
        seed: int = 0,
        lr: float = 0.05,
        momentum: float = 0.9,
    ):
        if n_in < 1 or n_classes < 2 or hidden < 1:
            raise PerceptionError("bad layer dimensions")
        self.n_in, self.n_classes, self.hidden = n_in, n_classes, hidden
        self.lr, self.momentum = lr, momentum
        rng = np.random.default_rng(seed)
        self.W1 = self._glorot(rng, n_in, hidden)
        self.b1 = np.zeros(hidden)
        self.W2 = self._glorot(rng, hidden, n_classes)
        self.b2 = np.zeros(n_classes)
        self._vel = [np.zeros_like(p) for p in self.params()]
        self._rng = np.random.default_rng(seed + 0x5EED)

    @staticmethod
    def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    def params(self) -> "list[np.ndarray]":
        return [self.W1, self.b1, self.W2, self.b2]

    # -- forward --------------------------------------------------------------

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_in:
            raise PerceptionError(f"input dim {X.shape[1]} != model dim {self.n_in}")
        return X

    def _forward(self, X: np.ndarray):
        h = np.maximum(X @ self.W1 + self.b1, 0.0)
        return h, h @ self.W2 + self.b2

    def predict(self, x) -> np.ndarray:
        """Class distribution(s); a vector in gives a vector out."""
        single = np.asarray(x).ndim == 1
        X = self._check(x)
        probs = _softmax(self._forward(X)[1])
        return probs[0] if single else probs

    def log_probs(self, x) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        X = self._check(x)
        lp = _log_softmax(self._forward(X)[1])
        return lp[0] if single else lp

    def predict_label(self, x):
        """Argmax class; an int for one sample, an array for a batch."""
        out = np.argmax(self.predict(self._check(x)), axis=-1)
        return int(out[0]) if np.asarray(x).ndim == 1 else out

    # -- loss and gradients ----------------------------------------------------

    @staticmethod
    def _weights(n: int, sample_weight) -> np.ndarray:
        if sample_weight is None:
            return np.ones(n)
        w = np.asarray(sample_weight, dtype=float)
        if w.shape != (n,) or (w < 0).any() or w.sum() <= 0:
            raise PerceptionError("bad sample weights")
        return w

    def loss(self, X, y, sample_weight=None) -> float:
        X = self._check(X)
        y = np.asarray(y, dtype=int)
        w = self._weights(len(X), sample_weight)
        lp = _log_softmax(self._forward(X)[1])
        return float(-(w * lp[np.arange(len(X)), y]).sum() / w.sum())

    def grads(self, X, y, sample_weight=None):
        X = self._check(X)
        y = np.asarray(y, dtype=int)
        if (y < 0).any() or (y >= self.n_classes).any():
            raise PerceptionError("label out of range")
        w = self._weights(len(X), sample_weight)
        h, logits = self._forward(X)
        delta = _softmax(logits)
        delta[np.arange(len(X)), y] -= 1.0
        delta *= (w / w.sum())[:, None]
        gW2 = h.T @ delta
        gb2 = delta.sum(axis=0)
        dh = (delta @ self.W2.T) * (h > 0)
        gW1 = X.T @ dh
        gb1 = dh.sum(axis=0)
        return [gW1, gb1, gW2, gb2]

    def _step(self, grads) -> None:
        for p, v, g in zip(self.params(), self._vel, grads):
            v *= self.momentum
            v -= self.lr * g
            p += v

    def fit(
        self,
        X,
        y,
        epochs: int = 1,
        batch_size: Optional[int] = None,
        sample_weight=None,
    ) -> float:
        """Mini-batch SGD on weighted cross-entropy; returns the final loss."""
        X = self._check(X)
        y = np.asarray(y, dtype=int)
        if len(X) == 0:
            raise PerceptionError("empty batch")
        w = self._weights(len(X), sample_weight)
        bs = len(X) if batch_size is None else max(1, batch_size)
        for _ in range(epochs):
            order = self._rng.permutation(len(X))
            for start in range(0, len(X), bs):
                idx = order[start : start + bs]
                self._step(self.grads(X[idx], y[idx], w[idx]))
        final = self.loss(X, y, w)
        if not np.isfinite(final) or not all(np.isfinite(p).all() for p in self.params()):
            raise PerceptionError(
                f"training diverged: loss={final}, lr={self.lr}; reduce the step size"
            )
        return final

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack(">IIII", _VERSION, self.n_in, self.hidden, self.n_classes))
            f.write(struct.pack(">dd", self.lr, self.momentum))
            for p in self.params():
                f.write(np.ascontiguousarray(p, dtype=">f8").tobytes())

    @classmethod
    def load(cls, path) -> "MLP":
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:4] != _MAGIC:
            raise PerceptionError(f"{path}: not a model checkpoint (bad magic)")
        version, n_in, hidden, k = struct.unpack(">IIII", raw[4:20])
        if version != _VERSION:
            raise PerceptionError(f"{path}: unsupported checkpoint version {version}")
        lr, momentum = struct.unpack(">dd", raw[20:36])
        model = cls(n_in, k, hidden=hidden, lr=lr, momentum=momentum)
        off = 36
        for i, p in enumerate(model.params()):
            n = p.size * 8
            if off + n > len(raw):
                raise PerceptionError(f"{path}: truncated checkpoint")
            arr = np.frombuffer(raw[off : off + n], dtype=">f8").astype(float)
            model.params()[i][...] = arr.reshape(p.shape)
            off += n
        if off != len(raw):
            raise PerceptionError(f"{path}: trailing bytes in checkpoint")
        return model


def grad_check(model: MLP, x, y, n_samples: int = 24, step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between backprop and central differences."""
    X = model._check(x)
    y = np.asarray(y, dtype=int).reshape(-1)
    rng = np.random.default_rng(seed)
    analytic = model.grads(X, y)
    worst = 0.0
    params = model.params()
    for _ in range(max(n_samples, 20)):
        pi = rng.integers(len(params))
        flat = params[pi].reshape(-1)
        j = rng.integers(flat.size)
        keep = flat[j]
        flat[j] = keep + step
        up = model.loss(X, y)
        flat[j] = keep - step
        down = model.loss(X, y)
        flat[j] = keep
        numeric = (up - down) / (2 * step)
        a = analytic[pi].reshape(-1)[j]
        denom = max(abs(a) + abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst


def pretrain_few_shot(model: MLP, X, y, epochs: int = 200) -> float:
    """Fit on exactly one labeled instance per class."""
    y = np.asarray(y, dtype=int)
    if sorted(y.tolist()) != list(range(model.n_classes)):
        raise PerceptionError("few-shot pretraining needs exactly one example per class")
    return model.fit(X, y, epochs=epochs)


class PairModel:
    """Antisymmetric pairwise scorer built on a 2-class net.

    Only the canonically ordered pair (smaller content bytes first) is ever
    shown to the network; the other orientation is the complement, so
    p(a,b) + p(b,a) = 1 holds exactly and a self-pair scores 0.5.
    """

    def __init__(self, n_in: int, hidden: int = 64, seed: int = 0, lr: float = 0.05, momentum: float = 0.9):
        self.n_in = n_in
        self.net = MLP(2 * n_in, 2, hidden=hidden, seed=seed, lr=lr, momentum=momentum)

    @staticmethod
    def _key(a: np.ndarray) -> bytes:
        return np.ascontiguousarray(a, dtype=float).tobytes()

    def _canonical(self, a, b):
        """(first, second, swapped)."""
        return (a, b, False) if self._key(a) <= self._key(b) else (b, a, True)

    def predict_pair(self, a, b) -> float:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self._key(a) == self._key(b):
            return 0.5
        x, y, swapped = self._canonical(a, b)
        p = float(self.net.predict(np.concatenate([x, y]))[1])
        return 1.0 - p if swapped else p

    def fit_pairs(self, pairs: Iterable[tuple], epochs: int = 1, batch_size: Optional[int] = None) -> float:
        """pairs: (a, b, truth) triples; orientation is normalized here."""
        rows, labels = [], []
        for a, b, truth in pairs:
            a = np.asarray(a, dtype=float)
            b = np.asarray(b, dtype=float)
            if self._key(a) == self._key(b):
                continue  # a self-pair carries no orientation signal
            x, y, swapped = self._canonical(a, b)
            rows.append(np.concatenate([x, y]))
            labels.append(int(truth) ^ int(swapped))
        if not rows:
            return float("nan")
        return self.net.fit(np.stack(rows), np.array(labels), epochs=epochs, batch_size=batch_size)

    def save(self, path) -> None:
        self.net.save(path)

    @classmethod
    def load(cls, path) -> "PairModel":
        net = MLP.load(path)
        if net.n_in % 2:
            raise PerceptionError(f"{path}: not a pair model (odd input dim)")
        out = cls.__new__(cls)
        out.n_in = net.n_in // 2
        out.net = net
        return out
