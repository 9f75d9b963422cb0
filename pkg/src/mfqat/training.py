"""Training loops: plain full-precision training, quantization-aware steps,
and warm-up calibration of the exponent biases.

One step runs the quantized forward (quantized weights, quantized
post-activation signals), the recorded backward, and a single optimizer
update covering the master weights and the learnable biases. Calibration
runs ordinary training steps with quantizers bypassed while recording the
running max |X| of every weight tensor and activation signal, then seeds
each bias from its tensor's maximum and marks it learnable.

All shuffling and augmentation randomness is keyed by (seed, epoch), so a
resumed run replays the exact batch sequence of an uninterrupted one.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import losses
from .autograd import Optimizer, Tape, ops
from .data import SegmentationSample, SyntheticShipConfig, augment_sample
from .models import QUANT_ACTIVE, QUANT_BYPASS, QUANT_CALIBRATE, ModelGraph
from .quantizer import InitMode, init_exponent_bias

LOSS_JACCARD_BCE = "jaccard_bce"
LOSS_CROSS_ENTROPY = "cross_entropy"


class TrainingDivergenceError(RuntimeError):
    pass


def _diagnose_nonfinite(model: ModelGraph) -> str:
    for i, layer in enumerate(model.layers):
        t = model.last_signals.get(layer.name)
        if t is None:
            continue
        data = t.data
        bad = ~np.isfinite(data)
        if bad.any():
            finite = data[~bad]
            stats = (
                f"min={finite.min():.4g} max={finite.max():.4g}" if finite.size else "no finite values"
            )
            return (
                f"first non-finite signal at layer {i} ({layer.name!r}): "
                f"{int(bad.sum())}/{data.size} bad elements, finite {stats}"
            )
    return "loss is non-finite but all recorded signals are finite"


def _loss_op(tape, logits, targets, loss_kind: str):
    if loss_kind == LOSS_JACCARD_BCE:
        return ops.jaccard_bce(tape, logits, targets)
    if loss_kind == LOSS_CROSS_ENTROPY:
        return ops.softmax_cross_entropy(tape, logits, targets)
    raise ValueError(f"unknown loss {loss_kind!r}")


def qat_step(model: ModelGraph, batch, optim: Optimizer,
             loss_kind: str = LOSS_JACCARD_BCE, quant: str = QUANT_ACTIVE) -> float:
    """One training step; returns the loss before the update."""
    x, targets = batch
    tape = Tape()
    out = model.forward(x, tape=tape, training=True, quant=quant)
    loss_t = _loss_op(tape, out, targets, loss_kind)
    loss = float(loss_t.data)
    if not math.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss: {_diagnose_nonfinite(model)}")
    optim.zero_grad()
    tape.backward(loss_t, 1.0)
    optim.step()
    return loss


def warmup_calibrate(model: ModelGraph, data_stream, optim: Optimizer | None = None,
                     n_iters: int = 200, init_mode: str = InitMode.PAPER_FORMULA,
                     loss_kind: str = LOSS_JACCARD_BCE) -> dict[str, float]:
    """Track signal maxima over ``n_iters`` bypassed training iterations, then
    seed every exponent bias and mark it learnable.

    ``data_stream`` is an iterable of (inputs, targets) batches; it is cycled
    when shorter than ``n_iters``. With ``optim=None`` the weights stay fixed
    and only the maxima are observed. Returns the assigned biases by state key.
    """
    for _, st in model.quant_states():
        st.observed_max = 0.0
    it = itertools.cycle(iter(data_stream))
    ran = 0
    for _ in range(n_iters):
        try:
            batch = next(it)
        except StopIteration:
            break
        if optim is None:
            model.forward(batch[0], tape=None, training=True, quant=QUANT_CALIBRATE)
        else:
            qat_step(model, batch, optim, loss_kind, quant=QUANT_CALIBRATE)
        ran += 1
    if ran == 0:
        raise ValueError("empty data stream: nothing to calibrate on")
    assigned: dict[str, float] = {}
    for key, st in model.quant_states():
        if st.observed_max > 0.0:
            st.e0 = init_exponent_bias(st.observed_max, st.format, init_mode)
        else:
            # dead signal: fall back to the IEEE-like default bias
            st.e0 = float(st.format.ieee_bias)
        st.learnable = True
        assigned[key] = st.e0
    return assigned


def set_fixed_biases(model: ModelGraph, fixed_bias: int | None = None) -> dict[str, float]:
    """Give every quantizer a fixed integer bias (IEEE-like default when None)."""
    assigned: dict[str, float] = {}
    for key, st in model.quant_states():
        st.e0 = float(st.format.ieee_bias if fixed_bias is None else fixed_bias)
        st.learnable = False
        assigned[key] = st.e0
    return assigned


# -- batching ------------------------------------------------------------------


def stack_segmentation(samples: list[SegmentationSample], idxs=None,
                       augment_cfg: SyntheticShipConfig | None = None,
                       epoch: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if idxs is None:
        idxs = range(len(samples))
    picked = []
    for i in idxs:
        s = samples[i]
        if augment_cfg is not None:
            s = augment_sample(s, augment_cfg, int(i), epoch)
        picked.append(s)
    x = np.stack([s.image for s in picked])
    t = np.stack([s.mask for s in picked])
    return x, t


def stack_classification(samples, idxs=None) -> tuple[np.ndarray, np.ndarray]:
    if idxs is None:
        idxs = range(len(samples))
    x = np.stack([samples[i][0] for i in idxs])
    labels = np.asarray([samples[i][1] for i in idxs], dtype=np.int64)
    return x, labels


def predict_all(model: ModelGraph, task: str, data, batch_size: int,
                quant: str) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode logits and stacked targets over a whole dataset."""
    preds, refs = [], []
    for start in range(0, len(data), batch_size):
        idxs = range(start, min(start + batch_size, len(data)))
        if task == "segmentation":
            x, t = stack_segmentation(data, idxs)
        else:
            x, t = stack_classification(data, idxs)
        out = model.forward(x, tape=None, training=False, quant=quant)
        preds.append(out.data)
        refs.append(t)
    return np.concatenate(preds), np.concatenate(refs)


def evaluate_model(model: ModelGraph, task: str, data, batch_size: int,
                   quant: str) -> float:
    """Mean IoU (segmentation) or top-1 accuracy (classification)."""
    logits, targets = predict_all(model, task, data, batch_size, quant)
    if task == "segmentation":
        return losses.mean_iou(losses.binarize_logits(logits), targets)
    return losses.top1_accuracy(logits, targets)


class Trainer:
    """Epoch loop around qat_step with deterministic shuffling.

    ``task`` is "segmentation" or "classification"; ``quant`` is the forward
    mode used for training steps (bypass for the full-precision phase, active
    for fine-tuning).
    """

    def __init__(self, model: ModelGraph, optim: Optimizer, task: str,
                 train_data, test_data, batch_size: int, seed: int,
                 quant: str = QUANT_BYPASS,
                 augment_cfg: SyntheticShipConfig | None = None):
        if task not in ("segmentation", "classification"):
            raise ValueError(f"unknown task {task!r}")
        self.model = model
        self.optim = optim
        self.task = task
        self.train_data = train_data
        self.test_data = test_data
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.quant = quant
        self.augment_cfg = augment_cfg
        self.epoch = 0
        self.history: list[dict] = []

    @property
    def loss_kind(self) -> str:
        return LOSS_JACCARD_BCE if self.task == "segmentation" else LOSS_CROSS_ENTROPY

    def _stack(self, data, idxs, epoch: int):
        if self.task == "segmentation":
            return stack_segmentation(data, idxs, self.augment_cfg, epoch)
        return stack_classification(data, idxs)

    def batches(self, epoch: int):
        """Shuffled minibatch index lists for one epoch; pure in (seed, epoch)."""
        n = len(self.train_data)
        order = np.random.default_rng([self.seed, 0x5E0, epoch]).permutation(n)
        for start in range(0, n, self.batch_size):
            yield order[start : start + self.batch_size]

    def train_one_epoch(self) -> float:
        self.optim.set_epoch(self.epoch)
        step_losses = []
        for idxs in self.batches(self.epoch):
            batch = self._stack(self.train_data, idxs, self.epoch)
            step_losses.append(
                qat_step(self.model, batch, self.optim, self.loss_kind, self.quant)
            )
        self.epoch += 1
        return float(np.mean(step_losses))

    def evaluate(self, data=None, quant: str | None = None) -> float:
        """Test metric (mean IoU or top-1) in eval mode; never augments."""
        data = self.test_data if data is None else data
        quant = self.quant if quant is None else quant
        return evaluate_model(self.model, self.task, data, self.batch_size, quant)

    def run(self, n_epochs: int, on_epoch=None) -> list[dict]:
        """Train for ``n_epochs`` more epochs, appending one history record each."""
        for _ in range(n_epochs):
            loss = self.train_one_epoch()
            metric = self.evaluate()
            record = {
                "epoch": self.epoch,
                "loss": loss,
                "metric": metric,
                "lr": self.optim.lr,
                "e0": {key: st.e0 for key, st in self.model.quant_states() if st.is_set},
            }
            self.history.append(record)
            if on_epoch is not None:
                on_epoch(record)
        return self.history
