"""Self-attention feature extractor over packet sequences.

A stack of pre-norm encoder blocks over packet embeddings with a learnable
sequence-level aggregation (SLA) token and positional embedding, average
pooling, two latent heads (l of width M, lambda of width N) and a softmax
classifier over seen device classes.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .checkpoint import load_checkpoint, save_checkpoint

logger = logging.getLogger("zest.sane")


@dataclass
class SaneConfig:
    n: int = 200               # packets per sequence
    f: int = 8                 # raw features per packet
    d_model: int = 64
    e: int = 2                 # encoder stack size
    h: int = 8                 # attention heads
    d_mlp: int = 256
    M: int = 20                # latent l width
    N: int = 3                 # latent lambda / attribute width
    num_classes: int = 10
    batch_size: int = 64
    epochs: int = 20
    learning_rate: float = 5e-4
    seed: int = 0
    standard_residual: bool = False   # post-norm encoder variant

    def __post_init__(self):
        if self.d_model % self.h != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by h={self.h}")
        if self.N >= self.M:
            raise ValueError(f"require N < M, got N={self.N}, M={self.M}")
        if self.e < 1:
            raise ValueError(f"encoder stack size must be >= 1, got {self.e}")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int,
            dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class SaneModel:
    """All learnable tensors of the feature extractor plus its configuration."""

    def __init__(self, config: SaneConfig, dtype=np.float32,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.dtype = dtype
        if rng is None:
            rng = np.random.default_rng(config.seed)
        c = config
        p: dict[str, nm.Tensor] = {}

        def add_param(name: str, data: np.ndarray) -> None:
            p[name] = nm.param(np.asarray(data, dtype=dtype), name=name)

        add_param("embed.w", _xavier(rng, c.f, c.d_model, dtype))
        add_param("embed.b", np.zeros(c.d_model))
        add_param("sla", rng.normal(0.0, 0.02, size=c.d_model))
        add_param("pos", rng.normal(0.0, 0.02, size=(c.n + 1, c.d_model)))
        for i in range(c.e):
            pre = f"block{i}"
            add_param(f"{pre}.ln1.gain", np.ones(c.d_model))
            add_param(f"{pre}.ln1.bias", np.zeros(c.d_model))
            for proj in ("wq", "wk", "wv", "wo"):
                add_param(f"{pre}.attn.{proj}", _xavier(rng, c.d_model, c.d_model, dtype))
            for bias in ("bq", "bk", "bv", "bo"):
                add_param(f"{pre}.attn.{bias}", np.zeros(c.d_model))
            add_param(f"{pre}.ln2.gain", np.ones(c.d_model))
            add_param(f"{pre}.ln2.bias", np.zeros(c.d_model))
            add_param(f"{pre}.mlp.w1", _xavier(rng, c.d_model, c.d_mlp, dtype))
            add_param(f"{pre}.mlp.b1", np.zeros(c.d_mlp))
            add_param(f"{pre}.mlp.w2", _xavier(rng, c.d_mlp, c.d_model, dtype))
            add_param(f"{pre}.mlp.b2", np.zeros(c.d_model))
        add_param("latent_l.w", _xavier(rng, c.d_model, c.M, dtype))
        add_param("latent_l.b", np.zeros(c.M))
        add_param("latent_lam.w", _xavier(rng, c.M, c.N, dtype))
        add_param("latent_lam.b", np.zeros(c.N))
        add_param("head.w", _xavier(rng, c.N, c.num_classes, dtype))
        add_param("head.b", np.zeros(c.num_classes))
        self.params = p

    def parameters(self) -> list[nm.Tensor]:
        return list(self.params.values())

    # -- forward ----------------------------------------------------------

    def _attention(self, x: nm.Tensor, block: int) -> tuple[nm.Tensor, nm.Tensor]:
        c = self.config
        p = self.params
        batch, tokens = x.shape[0], x.shape[1]
        head_dim = c.d_model // c.h
        pre = f"block{block}.attn"
        q = nm.linear(x, p[f"{pre}.wq"], p[f"{pre}.bq"])
        k = nm.linear(x, p[f"{pre}.wk"], p[f"{pre}.bk"])
        v = nm.linear(x, p[f"{pre}.wv"], p[f"{pre}.bv"])
        # scale q rather than the much larger score matrix
        q = nm.scale(q, 1.0 / float(np.sqrt(head_dim)))

        def split_heads(t: nm.Tensor) -> nm.Tensor:
            t = nm.reshape(t, (batch, tokens, c.h, head_dim))
            return nm.transpose(t, (0, 2, 1, 3))

        q, k, v = split_heads(q), split_heads(k), split_heads(v)
        scores = nm.matmul(q, nm.transpose(k, (0, 1, 3, 2)))
        attn = nm.softmax(scores)
        ctx = nm.matmul(attn, v)
        ctx = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)),
                         (batch, tokens, c.d_model))
        out = nm.linear(ctx, p[f"{pre}.wo"], p[f"{pre}.bo"])
        return out, attn

    def forward(self, x: np.ndarray, collect_attention: bool = False) -> dict:
        """Run a batch (B, n, f) through the network.

        Returns a dict of live Tensors: 'logits' (B, num_classes),
        'l' (B, M), 'lam' (B, N), and optionally 'attention' (list of
        per-block (B, h, n+1, n+1) arrays).
        """
        c = self.config
        p = self.params
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None, :, :]
        if x.shape[1:] != (c.n, c.f):
            raise nm.NumericsError(
                f"input shape {x.shape} incompatible with (B, {c.n}, {c.f})")
        batch = x.shape[0]

        emb = nm.linear(nm.param(x, "input"), p["embed.w"], p["embed.b"])
        sla = nm.broadcast_to(nm.reshape(p["sla"], (1, 1, c.d_model)),
                              (batch, 1, c.d_model))
        e = nm.concat_rows([sla, emb])
        e = nm.add(e, p["pos"])

        attention = []
        for i in range(c.e):
            pre = f"block{i}"
            if c.standard_residual:
                # textbook post-norm encoder
                r1, attn = self._attention(e, i)
                e = nm.layer_norm(nm.add(e, r1),
                                  p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
                m = nm.linear(e, p[f"{pre}.mlp.w1"], p[f"{pre}.mlp.b1"])
                m = nm.gelu(m)
                m = nm.linear(m, p[f"{pre}.mlp.w2"], p[f"{pre}.mlp.b2"])
                e = nm.layer_norm(nm.add(e, m),
                                  p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
            else:
                # as-printed: R1 = MHA(Norm(E)); R2 = MLP(Norm(E + R1));
                # E <- R2 + (E + R1)
                r1, attn = self._attention(
                    nm.layer_norm(e, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"]), i)
                e_r1 = nm.add(e, r1)
                m = nm.layer_norm(e_r1, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
                m = nm.linear(m, p[f"{pre}.mlp.w1"], p[f"{pre}.mlp.b1"])
                m = nm.gelu(m)
                m = nm.linear(m, p[f"{pre}.mlp.w2"], p[f"{pre}.mlp.b2"])
                e = nm.add(m, e_r1)
            if collect_attention:
                attention.append(attn.data)

        pooled = nm.mean_pool(e)
        latent_l = nm.linear(pooled, p["latent_l.w"], p["latent_l.b"])
        latent_lam = nm.linear(latent_l, p["latent_lam.w"], p["latent_lam.b"])
        logits = nm.linear(latent_lam, p["head.w"], p["head.b"])
        out = {"logits": logits, "l": latent_l, "lam": latent_lam}
        if collect_attention:
            out["attention"] = attention
        return out

    def predict_arrays(self, x: np.ndarray, batch_size: int = 64) -> dict:
        """Forward without keeping graphs; returns plain arrays."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None, :, :]
        logits, l, lam = [], [], []
        for start in range(0, x.shape[0], batch_size):
            out = self.forward(x[start:start + batch_size])
            logits.append(out["logits"].data)
            l.append(out["l"].data)
            lam.append(out["lam"].data)
        return {
            "logits": np.concatenate(logits),
            "l": np.concatenate(l),
            "lam": np.concatenate(lam),
        }

    # -- persistence ------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            arr = np.asarray(state[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"checkpoint tensor {name} has shape {arr.shape}, "
                    f"expected {t.data.shape}")
            t.data = arr.copy()

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.state_arrays(), asdict(self.config))

    @classmethod
    def load(cls, path: str | Path) -> "SaneModel":
        tensors, config = load_checkpoint(path)
        model = cls(SaneConfig(**config))
        model.load_state_arrays(tensors)
        return model


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def _to_arrays(points) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([p.features for p in points]).astype(np.float32)
    y = np.array([p.label for p in points], dtype=np.int64)
    return x, y


def train_sane(train_points, val_points, config: SaneConfig,
               log_path: str | Path | None = None) -> tuple[SaneModel, list[dict]]:
    """Supervised training on seen devices; returns the best-validation model
    (ties broken by earlier epoch) and the per-epoch log."""
    x_train, y_train = _to_arrays(train_points)
    x_val, y_val = _to_arrays(val_points)
    counts = np.bincount(y_train, minlength=config.num_classes)
    if y_train.min() < 0 or y_train.max() >= config.num_classes:
        raise ValueError(
            f"training labels outside 0..{config.num_classes - 1}")
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"no training data for class {int(empty[0])}")

    rng = np.random.default_rng(config.seed)
    model = SaneModel(config, rng=rng)
    opt = nm.Adam(model.parameters(), learning_rate=config.learning_rate)

    best_state: dict[str, np.ndarray] | None = None
    best_val = -1.0
    log: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x_train))
        total_loss = 0.0
        total_correct = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            out = model.forward(x_train[idx])
            loss = nm.cross_entropy(out["logits"], y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += float(loss.data) * len(idx)
            total_correct += int((out["logits"].data.argmax(axis=1) == y_train[idx]).sum())
        train_loss = total_loss / len(order)
        train_acc = total_correct / len(order)
        val_pred = model.predict_arrays(x_val)["logits"].argmax(axis=1)
        val_acc = float((val_pred == y_val).mean())
        log.append({"epoch": epoch, "train_loss": train_loss,
                    "train_acc": train_acc, "val_acc": val_acc})
        logger.info("epoch %d loss %.4f train_acc %.4f val_acc %.4f",
                    epoch, train_loss, train_acc, val_acc)
        if val_acc > best_val:
            best_val = val_acc
            best_state = model.state_arrays()

    if best_state is not None:
        model.load_state_arrays(best_state)
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("epoch,train_loss,train_acc,val_acc\n")
            for row in log:
                fh.write(f"{row['epoch']},{row['train_loss']:.6f},"
                         f"{row['train_acc']:.6f},{row['val_acc']:.6f}\n")
    return model, log


def evaluate_supervised(model: SaneModel, test_points) -> tuple[float, np.ndarray]:
    """Accuracy and per-class confusion matrix on labeled test sequences."""
    if not test_points:
        raise ValueError("empty test set")
    x, y = _to_arrays(test_points)
    c = model.config.num_classes
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"test labels outside 0..{c - 1}")
    pred = model.predict_arrays(x)["logits"].argmax(axis=1)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    accuracy = float((pred == y).mean())
    return accuracy, confusion
