"""The mask autoencoder: architecture, reconstruction and training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ShapeMismatchError
from .masks import CARDIAC_CLASSES, ClassSet, LabelMask, decode_argmax, encode_one_hot
from .nn import functional as F
from .nn.layers import LayerSpec, Sequential, he_normal_init, make_layer
from .nn.losses import generalized_dice_loss, mse_loss
from .nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)

# (out_channels, kernel, stride, padding) for the nine hidden encoder blocks;
# the latent convolution (latent_maps, 4, 2, 1) follows them.
CANONICAL_ROWS = (
    (32, 4, 2, 1),
    (32, 4, 2, 1),
    (32, 4, 2, 1),
    (32, 3, 1, 1),
    (64, 4, 2, 1),
    (64, 3, 1, 1),
    (128, 4, 2, 1),
    (64, 3, 1, 1),
    (32, 3, 1, 1),
)
LATENT_KERNEL, LATENT_STRIDE, LATENT_PADDING = 4, 2, 1


@dataclass(frozen=True)
class ArchitectureConfig:
    input_size: int = 256
    class_count: int = 4
    latent_maps: int = 100
    latent_size: int = 4
    rows: tuple = CANONICAL_ROWS
    scale_factor: float = 1.0  # multiplies hidden channel widths
    negative_slope: float = 0.2
    drop_prob: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(tuple(int(v) for v in r) for r in self.rows))

    @classmethod
    def scaled(cls, input_size: int, **kwargs) -> "ArchitectureConfig":
        """Drop leading stride-2 blocks until the chain lands on the latent size."""
        cfg = cls(input_size=input_size, **kwargs)
        rows = list(cfg.rows)

        def n_down(rs):
            return sum(1 for r in rs if r[2] == 2) + (LATENT_STRIDE == 2)

        while input_size < cfg.latent_size * 2 ** n_down(rows):
            lead = next((i for i, r in enumerate(rows) if r[2] == 2), None)
            if lead is None:
                break
            del rows[lead]
        if input_size != cfg.latent_size * 2 ** n_down(rows):
            raise ConfigurationError(
                f"input size {input_size} cannot be reduced to latent size {cfg.latent_size} "
                "by removing leading stride-2 blocks"
            )
        return replace(cfg, rows=tuple(rows))

    def encoder_rows(self):
        """All encoder convolutions ``(in, out, k, s, p)``, latent row last."""
        out = []
        c_in = self.class_count
        for c, k, s, p in self.rows:
            c_out = max(1, int(round(c * self.scale_factor)))
            out.append((c_in, c_out, k, s, p))
            c_in = c_out
        out.append((c_in, self.latent_maps, LATENT_KERNEL, LATENT_STRIDE, LATENT_PADDING))
        return out

    def shape_chain(self):
        """``(H, W, C)`` after the input and after every encoder row."""
        self.validate()
        size = self.input_size
        chain = [(size, size, self.class_count)]
        for _, c_out, k, s, p in self.encoder_rows():
            size = F.conv_output_size(size, k, s, p)
            chain.append((size, size, c_out))
        return chain

    def decoder_chain(self):
        self.validate()
        chain = [(self.latent_size, self.latent_size, self.latent_maps)]
        size = self.latent_size
        for c_in, _, k, s, p in reversed(self.encoder_rows()):
            size = F.conv_transpose_output_size(size, k, s, p)
            chain.append((size, size, c_in))
        return chain

    def validate(self):
        if self.class_count < 2:
            raise ConfigurationError("class_count must be >= 2")
        if self.input_size < 1 or self.latent_maps < 1 or self.latent_size < 1:
            raise ConfigurationError("sizes must be positive")
        size = self.input_size
        for i, (_, _, k, s, p) in enumerate(self.encoder_rows()):
            name = f"row {i + 1}" if i < len(self.rows) else "latent row"
            try:
                size = F.conv_output_size(size, k, s, p)
            except ConfigurationError as exc:
                raise ConfigurationError(f"{name}: {exc}") from None
        if size != self.latent_size:
            raise ConfigurationError(
                f"encoder ends at {size}x{size}, expected latent size {self.latent_size}"
            )
        for i, (_, _, k, s, p) in enumerate(reversed(self.encoder_rows())):
            size = F.conv_transpose_output_size(size, k, s, p)
        if size != self.input_size:
            raise ConfigurationError(f"decoder ends at {size}, expected {self.input_size}")

    def to_dict(self):
        d = asdict(self)
        d["rows"] = [list(r) for r in self.rows]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rows"] = tuple(tuple(r) for r in d["rows"])
        return cls(**d)


def _hidden_block(kind, c_in, c_out, k, s, p, cfg):
    return [
        LayerSpec(kind, c_in, c_out, k, s, p),
        LayerSpec("batchnorm", c_out, c_out),
        LayerSpec("leaky_relu", negative_slope=cfg.negative_slope),
        LayerSpec("dropout", drop_prob=cfg.drop_prob),
    ]


def encoder_specs(cfg: ArchitectureConfig):
    rows = cfg.encoder_rows()
    specs = []
    for c_in, c_out, k, s, p in rows[:-1]:
        specs += _hidden_block("conv", c_in, c_out, k, s, p, cfg)
    c_in, c_out, k, s, p = rows[-1]
    specs.append(LayerSpec("conv", c_in, c_out, k, s, p))  # linear latent
    return specs


def decoder_specs(cfg: ArchitectureConfig):
    mirrored = [(c_out, c_in, k, s, p) for c_in, c_out, k, s, p in reversed(cfg.encoder_rows())]
    specs = []
    for c_in, c_out, k, s, p in mirrored[:-1]:
        specs += _hidden_block("conv_transpose", c_in, c_out, k, s, p, cfg)
    c_in, c_out, k, s, p = mirrored[-1]
    specs.append(LayerSpec("conv_transpose", c_in, c_out, k, s, p))
    specs.append(LayerSpec("softmax_channel"))
    return specs


class AutoencoderModel:
    def __init__(self, config: ArchitectureConfig, classes: ClassSet | None = None, dtype=np.float32):
        config.validate()
        self.config = config
        self.classes = classes or (
            CARDIAC_CLASSES if config.class_count == 4
            else ClassSet(("background",) + tuple(f"class{i}" for i in range(1, config.class_count)))
        )
        if self.classes.count != config.class_count:
            raise ConfigurationError("class set size does not match class_count")
        self.encoder = Sequential(make_layer(s, dtype) for s in encoder_specs(config))
        self.decoder = Sequential(make_layer(s, dtype) for s in decoder_specs(config))
        self.network = Sequential(self.encoder.layers + self.decoder.layers)
        self.training = False

    def init_weights(self, rng: np.random.Generator):
        he_normal_init(self.network.layers, rng)
        return self

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def forward(self, x, train=None, rng=None):
        train = self.training if train is None else train
        return self.network.forward(x, train, rng)

    def backward(self, grad_out, caches):
        return self.network.backward(grad_out, caches)

    def predict(self, x):
        """Deterministic eval-mode probabilities; keeps no caches."""
        return self.network.predict(x)

    def encode(self, x):
        return self.encoder.predict(x)

    def param_dict(self):
        """Trainable arrays keyed by name (live references)."""
        return dict(self.network.named_params())

    def state_arrays(self):
        """Parameters then batchnorm buffers, in declared layer order."""
        return self.network.named_params() + self.network.named_buffers()

    def load_state_arrays(self, arrays: dict):
        for i, layer in enumerate(self.network.layers):
            for store in (layer.params, layer.buffers):
                for k, v in store.items():
                    src = arrays[f"{i}.{k}"]
                    if src.shape != v.shape:
                        raise ShapeMismatchError(f"tensor {i}.{k}: expected {v.shape}, got {src.shape}")
                    store[k] = np.array(src, dtype=v.dtype)

    def parameter_count(self):
        return sum(a.size for _, a in self.state_arrays())

    def astype(self, dtype):
        self.network.astype(dtype)
        return self

    def describe(self):
        lines = []
        shape = (1, self.config.class_count, self.config.input_size, self.config.input_size)
        for layer in self.network.layers:
            shape = layer.output_shape(shape)
            lines.append(f"{layer!r:<48s} -> {shape[2]}x{shape[3]}x{shape[1]}")
        return "\n".join(lines)


def build(config: ArchitectureConfig, seed: int | np.random.Generator | None = 0, classes=None) -> AutoencoderModel:
    """Construct the autoencoder and He-initialize it (``seed=None`` leaves zeros)."""
    model = AutoencoderModel(config, classes)
    if seed is not None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        model.init_weights(rng)
    return model


def _as_input(masks, model):
    size = model.config.input_size
    for m in masks:
        if m.shape != (size, size):
            raise ShapeMismatchError(
                f"mask of shape {m.shape} does not match the model input {size}x{size}; "
                "normalize it with center_fit first"
            )
    return np.stack([encode_one_hot(m, model.classes, dtype=np.float32) for m in masks])


def reconstruct_many(model: AutoencoderModel, masks, batch_size=8):
    """Pseudo ground truths and probability maps for a list of masks."""
    out = []
    for i in range(0, len(masks), batch_size):
        chunk = masks[i : i + batch_size]
        probs = model.predict(_as_input(chunk, model))
        for m, p in zip(chunk, probs):
            out.append((decode_argmax(p, m.spacing, model.classes), p))
    return out


def reconstruct(model: AutoencoderModel, mask: LabelMask):
    """Return ``(pgt, probs)`` for one normalized mask."""
    return reconstruct_many(model, [mask], 1)[0]


@dataclass
class TrainConfig:
    epochs: int = 500
    bg_exclusion_epochs: int = 10
    lr: float = 2e-4
    weight_decay: float = 1e-5
    batch_size: int = 8
    split_ratio: float = 0.8
    seed: int = 0

    def validate(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigurationError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not 0 <= self.bg_exclusion_epochs <= self.epochs:
            raise ConfigurationError("bg_exclusion_epochs must lie in [0, epochs]")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_mse: float
    train_gd: float
    val_loss: float
    gd_classes: tuple

    def to_dict(self):
        return asdict(self)


@dataclass
class Checkpoint:
    config: ArchitectureConfig
    arrays: dict  # name -> array, parameters then buffers
    best_val_loss: float
    epoch: int
    seed: int
    classes: ClassSet = field(default=CARDIAC_CLASSES)
    version: int = 1

    def to_model(self) -> AutoencoderModel:
        model = AutoencoderModel(self.config, self.classes)
        model.load_state_arrays(self.arrays)
        return model.eval()

    @classmethod
    def from_model(cls, model, best_val_loss=float("nan"), epoch=-1, seed=0):
        arrays = {k: v.copy() for k, v in model.state_arrays()}
        return cls(model.config, arrays, best_val_loss, epoch, seed, model.classes)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    final: Checkpoint

    @property
    def best_val_loss(self):
        return self.checkpoint.best_val_loss


def split_dataset(n: int, split_ratio: float, rng: np.random.Generator):
    n_train = int(n * split_ratio)
    if n_train < 1 or n_train >= n:
        raise ConfigurationError(
            f"{n} masks at split ratio {split_ratio} leave an empty "
            f"{'training' if n_train < 1 else 'validation'} split"
        )
    perm = rng.permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def combined_loss(probs, target, include_background):
    mse, g_mse = mse_loss(probs, target)
    gd, g_gd = generalized_dice_loss(probs, target, include_background)
    return mse + gd, mse, gd, g_mse + g_gd


def evaluate_loss(model, x, batch_size):
    """Full loss (background included), averaged over batches by size."""
    total = 0.0
    for i in range(0, len(x), batch_size):
        xb = x[i : i + batch_size]
        loss, _, _, _ = combined_loss(model.predict(xb), xb, True)
        total += loss * len(xb)
    return total / len(x)


def train(dataset, tcfg: TrainConfig, arch: ArchitectureConfig | None = None, callback=None):
    """Fit an autoencoder to trusted masks.

    Random draws come from one generator seeded with ``tcfg.seed``, in this
    order: train/validation split, weight init, then per epoch the batch
    shuffle followed by the dropout masks of each batch.

    The returned checkpoint holds the weights of the epoch with the lowest
    validation loss; ``final`` holds the weights after the last epoch.
    """
    tcfg.validate()
    dataset = list(dataset)
    if len(dataset) < 2:
        raise ConfigurationError("training needs at least two masks")
    if arch is None:
        h, w = dataset[0].shape
        if h != w:
            raise ConfigurationError(f"masks must be square, got {h}x{w}")
        arch = ArchitectureConfig() if h == 256 else ArchitectureConfig.scaled(h)
    rng = np.random.default_rng(tcfg.seed)
    train_idx, val_idx = split_dataset(len(dataset), tcfg.split_ratio, rng)
    model = AutoencoderModel(arch, dataset[0].classes).init_weights(rng)
    x_all = _as_input(dataset, model)
    x_train, x_val = x_all[train_idx], x_all[val_idx]

    params = model.param_dict()
    state = AdamState(lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    best = None
    history = []
    fg = tuple(range(1, arch.class_count))
    for epoch in range(tcfg.epochs):
        include_bg = epoch >= tcfg.bg_exclusion_epochs
        perm = rng.permutation(len(x_train))
        sums = np.zeros(3)
        for i in range(0, len(perm), tcfg.batch_size):
            xb = x_train[perm[i : i + tcfg.batch_size]]
            probs, caches = model.forward(xb, True, rng)
            loss, mse, gd, grad = combined_loss(probs, xb, include_bg)
            _, grads = model.backward(grad, caches)
            flat = {f"{j}.{k}": g for j, gd_ in enumerate(grads) for k, g in gd_.items()}
            adam_step(params, flat, state)
            sums += np.array([loss, mse, gd]) * len(xb)
        sums /= len(x_train)
        val = evaluate_loss(model, x_val, tcfg.batch_size)
        entry = EpochLog(epoch, float(sums[0]), float(sums[1]), float(sums[2]), float(val),
                         (0,) + fg if include_bg else fg)
        history.append(entry)
        if best is None or val < best.best_val_loss:
            best = Checkpoint.from_model(model, float(val), epoch, tcfg.seed)
        if callback is not None:
            callback(entry)
        log.debug("epoch %d train %.5f val %.5f", epoch, entry.train_loss, val)
    final = Checkpoint.from_model(model, float(history[-1].val_loss), tcfg.epochs - 1, tcfg.seed)
    return TrainResult(best, history, final)
