"""Run orchestration: build models, optimizers and datasets from a RunConfig
and drive the full-precision / calibration / fine-tuning phases.

Every phase writes the same report bundle into its output directory: the
resolved config, a ``metrics.txt`` of per-epoch key=value records, a
``train.log`` text log, a training-curve figure, and the final checkpoint.
"""

from __future__ import annotations

import os
import sys

import numpy as np

from . import report
from .autograd import CosineSchedule, MultiStepSchedule, Optimizer
from .checkpoint import Checkpoint, load_checkpoint, restore_model, save_checkpoint
from .config import ConfigError, RunConfig
from .data import gen_classification, gen_synthetic_segmentation, load_image_mask_dir
from .models import (
    QUANT_ACTIVE,
    QUANT_BYPASS,
    ModelGraph,
    QuantSpec,
    build_model,
    build_thin_unet32,
    build_tiny_classifier,
    build_toy_segnet,
)
from .training import Trainer, evaluate_model, set_fixed_biases, warmup_calibrate


class RunError(RuntimeError):
    pass


def build_quant_spec(cfg: RunConfig) -> QuantSpec | None:
    if not cfg.get("quant", "enabled"):
        return None
    return QuantSpec(
        weight_format=cfg.weight_format(),
        activation_format=cfg.activation_format(),
    )


def build_model_from_config(cfg: RunConfig, quantized: bool = True) -> ModelGraph:
    quant = build_quant_spec(cfg) if quantized else None
    arch = str(cfg.get("model", "arch"))
    seed = int(cfg.get("run", "seed"))
    in_ch = int(cfg.get("model", "in_channels"))
    clip = bool(cfg.get("quant", "ste_clip_zero"))
    if arch == "thin-unet32":
        return build_thin_unet32(in_ch, quant, seed, clip)
    if arch == "toy-segnet":
        return build_toy_segnet(in_ch, quant, seed, clip)
    if arch == "tiny-classifier":
        return build_tiny_classifier(
            in_ch, int(cfg.get("model", "n_classes")),
            int(cfg.get("data", "image_size")), quant, seed, clip,
        )
    raise ConfigError(f"unknown arch {arch!r}")


def build_datasets(cfg: RunConfig):
    """Returns (task_kind, train_data, test_data, augment_cfg_or_None)."""
    task = str(cfg.get("run", "task"))
    seed = int(cfg.get("run", "seed"))
    n_train = int(cfg.get("data", "train_samples"))
    n_test = int(cfg.get("data", "test_samples"))
    if task == "synthetic-seg":
        synth = cfg.synthetic_config()
        samples = gen_synthetic_segmentation(synth, n_train + n_test)
        aug = synth if cfg.get("data", "augment") else None
        return "segmentation", samples[:n_train], samples[n_train:], aug
    if task == "dir-seg":
        root = str(cfg.get("data", "data_dir"))
        if not root:
            raise ConfigError("dir-seg task needs [data] data_dir")
        samples = [s for _, s in load_image_mask_dir(root)]
        if len(samples) < 2:
            raise RunError(f"{root}: need at least 2 samples, found {len(samples)}")
        n_test_eff = max(1, min(n_test, len(samples) // 5))
        return "segmentation", samples[:-n_test_eff], samples[-n_test_eff:], None
    if task == "sanity-classify":
        n_classes = int(cfg.get("model", "n_classes"))
        size = int(cfg.get("data", "image_size"))
        train = gen_classification(seed, n_train, n_classes, size)
        test = gen_classification(seed + 1, n_test, n_classes, size)
        return "classification", train, test, None
    raise ConfigError(f"unknown task {task!r}")


def build_optimizer(cfg: RunConfig, model: ModelGraph, total_epochs: int) -> Optimizer:
    lr = float(cfg.get("optim", "lr"))
    name = str(cfg.get("optim", "schedule"))
    if name == "cosine":
        schedule = CosineSchedule(lr, total_epochs)
    elif name == "multistep":
        schedule = MultiStepSchedule(
            lr, int(cfg.get("optim", "multistep_interval")),
            float(cfg.get("optim", "multistep_gamma")),
        )
    else:
        schedule = None
    return Optimizer(
        model.parameters(),
        model.quant_states(),
        algorithm=str(cfg.get("optim", "optimizer")),
        lr=lr,
        momentum=float(cfg.get("optim", "momentum")),
        weight_decay=float(cfg.get("optim", "weight_decay")),
        betas=(float(cfg.get("optim", "beta1")), float(cfg.get("optim", "beta2"))),
        eps=float(cfg.get("optim", "eps")),
        schedule=schedule,
    )


def make_trainer(cfg: RunConfig, model: ModelGraph, optim: Optimizer,
                 quant: str) -> Trainer:
    task, train_data, test_data, aug = build_datasets(cfg)
    return Trainer(
        model, optim, task, train_data, test_data,
        batch_size=int(cfg.get("run", "batch_size")),
        seed=int(cfg.get("run", "seed")),
        quant=quant,
        augment_cfg=aug,
    )


def warmup_batch_stream(trainer: Trainer):
    """Endless deterministic batch stream for warm-up calibration."""
    cycle = 0
    n = len(trainer.train_data)
    while True:
        order = np.random.default_rng([trainer.seed, 0xCAFE, cycle]).permutation(n)
        for start in range(0, n, trainer.batch_size):
            idxs = order[start : start + trainer.batch_size]
            yield trainer._stack(trainer.train_data, idxs, epoch=0)
        cycle += 1


def _write_reports(out_dir: str, cfg: RunConfig, trainer: Trainer, log_lines: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "config.txt"))
    report.write_metrics_file(trainer.history, os.path.join(out_dir, "metrics.txt"))
    with open(os.path.join(out_dir, "train.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + ("\n" if log_lines else ""))
    if trainer.history and cfg.get("run", "figures"):
        metric_name = "mean IoU" if trainer.task == "segmentation" else "top-1"
        report.save_training_curves(
            trainer.history, os.path.join(out_dir, "training_curves.png"), metric_name
        )


def _run_phase(cfg: RunConfig, trainer: Trainer, out_dir: str, epochs: int,
               quiet: bool = False) -> str:
    log_lines: list[str] = []

    def on_epoch(rec: dict):
        line = (f"[epoch {rec['epoch']}/{epochs}] loss {rec['loss']:.6f} "
                f"metric {rec['metric']:.4f} lr {rec['lr']:.2e}")
        log_lines.append(line)
        if not quiet:
            print(line, file=sys.stderr)

    trainer.run(epochs, on_epoch=on_epoch)
    _write_reports(out_dir, cfg, trainer, log_lines)
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    save_checkpoint(
        ckpt_path, trainer.model, trainer.optim,
        epoch=trainer.epoch, history=trainer.history,
        seed=trainer.seed, config_text=cfg.dumps(),
    )
    return ckpt_path


def train_full_precision(cfg: RunConfig, out_dir: str, quiet: bool = False) -> str:
    """Full-precision training; quantizers (if built) stay bypassed."""
    model = build_model_from_config(cfg)
    epochs = int(cfg.get("run", "epochs"))
    optim = build_optimizer(cfg, model, epochs)
    trainer = make_trainer(cfg, model, optim, QUANT_BYPASS)
    return _run_phase(cfg, trainer, out_dir, epochs, quiet)


def _load_pretrained(cfg: RunConfig, pretrained_path: str) -> tuple[ModelGraph, Checkpoint]:
    if not os.path.exists(pretrained_path):
        raise RunError(f"checkpoint not found: {pretrained_path}")
    ckpt = load_checkpoint(pretrained_path)
    model = build_model_from_config(cfg)
    if not model.attachments:
        raise ConfigError("qat phases need [quant] enabled = true")
    model.load_tensor_entries(ckpt.tensors)
    return model, ckpt


def qat_finetune(cfg: RunConfig, pretrained_path: str, out_dir: str,
                 quiet: bool = False) -> str:
    """Fine-tune a pretrained checkpoint with quantized forward passes.

    Learned-bias mode first runs warm-up calibration (training iterations
    with bias learning frozen) and seeds each bias from the observed maxima;
    fixed mode assigns the configured integer bias everywhere.
    """
    model, _ = _load_pretrained(cfg, pretrained_path)
    epochs = int(cfg.get("run", "finetune_epochs"))
    optim = build_optimizer(cfg, model, epochs)
    trainer = make_trainer(cfg, model, optim, QUANT_ACTIVE)
    if str(cfg.get("quant", "bias_mode")) == "learned":
        warmup_calibrate(
            model, warmup_batch_stream(trainer), optim,
            n_iters=int(cfg.get("quant", "warmup_iters")),
            init_mode=str(cfg.get("quant", "init_mode")),
            loss_kind=trainer.loss_kind,
        )
    else:
        set_fixed_biases(model, cfg.fixed_bias_value())
    return _run_phase(cfg, trainer, out_dir, epochs, quiet)


def calibrate_only(cfg: RunConfig, pretrained_path: str, out_path: str) -> dict[str, float]:
    """Warm-up calibration alone; writes a calibrated checkpoint."""
    model, _ = _load_pretrained(cfg, pretrained_path)
    optim = build_optimizer(cfg, model, int(cfg.get("run", "finetune_epochs")))
    trainer = make_trainer(cfg, model, optim, QUANT_ACTIVE)
    assigned = warmup_calibrate(
        model, warmup_batch_stream(trainer), optim,
        n_iters=int(cfg.get("quant", "warmup_iters")),
        init_mode=str(cfg.get("quant", "init_mode")),
        loss_kind=trainer.loss_kind,
    )
    save_checkpoint(out_path, model, optim, epoch=0, history=[],
                    seed=trainer.seed, config_text=cfg.dumps())
    return assigned


def evaluate_checkpoint(ckpt_path: str, out_dir: str | None = None) -> tuple[str, float]:
    """Metric of a stored model on its configured test set.

    Quantizers run when they are attached and calibrated; otherwise the model
    evaluates in full precision. Returns (metric_name, value).
    """
    if not os.path.exists(ckpt_path):
        raise RunError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    if not ckpt.config_text:
        raise RunError(f"{ckpt_path}: checkpoint carries no config")
    cfg = RunConfig.loads(ckpt.config_text)
    model = restore_model(ckpt)
    task, _, test_data, _ = build_datasets(cfg)
    quant = QUANT_ACTIVE if all(st.is_set for _, st in model.quant_states()) and \
        model.attachments else QUANT_BYPASS
    batch = int(cfg.get("run", "batch_size"))
    value = evaluate_model(model, task, test_data, batch, quant)
    name = "mean_iou" if task == "segmentation" else "top1"
    if out_dir and task == "segmentation" and cfg.get("run", "figures"):
        os.makedirs(out_dir, exist_ok=True)
        from . import losses
        from .training import predict_all
        logits, targets = predict_all(model, task, test_data[:4], batch, quant)
        images = np.stack([s.image for s in test_data[:4]])
        report.save_prediction_panel(
            images, targets, losses.binarize_logits(logits),
            os.path.join(out_dir, "predictions.png"),
        )
    return name, value
