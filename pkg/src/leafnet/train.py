"""Training and evaluation drivers shared by the CLI and the test suite."""

import json
import math
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import (DatasetError, SplitSpec, batch_iter, save_manifest,
                   scan_dataset, stratified_split)
from .layers import ModelConfig, ResNet9, kaiming_init
from .metrics import (ConfusionMatrix, build_report, overall, render_confusion,
                      render_report)
from .optim import Adam, ConstantSchedule, CosineSchedule
from .tensor import NumericError


@dataclass
class TrainConfig:
    """Run parameters; the defaults are the reference recipe: 5 epochs,
    batch 32, Adam at 1e-3 with 1e-4 weight decay, cosine decay to zero.
    """

    data_dir: str = ""
    train_dir: str = ""
    val_dir: str = ""
    out_dir: str = "runs/latest"
    epochs: int = 5
    batch_size: int = 32
    base_lr: float = 0.001
    weight_decay: float = 0.0001
    seed: int = 42
    img_size: int = 256
    schedule: str = "cosine"  # "cosine" (per step) | "cosine-epoch" | "constant"
    deterministic: bool = True
    threads: int = 0  # 0 leaves library defaults alone
    train_fraction: float = 0.8014
    save_every: int = 0  # extra checkpoint every N epochs; 0 disables
    report_format: str = "csv"
    f1_aggregation: str = "weighted"

    def to_dict(self) -> dict:
        return asdict(self)


def _apply_thread_limit(threads: int):
    if threads <= 0:
        return None
    os.environ.setdefault("OMP_NUM_THREADS", str(threads))
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=threads)
    except ImportError:
        return None


def resolve_manifests(config: TrainConfig):
    """(train, holdout) manifests from either one root or a pre-split pair."""
    if config.data_dir and (config.train_dir or config.val_dir):
        raise DatasetError("give either --data-dir or the --train-dir/--val-dir pair, not both")
    if config.data_dir:
        manifest = scan_dataset(config.data_dir)
        return stratified_split(
            manifest, SplitSpec(train_fraction=config.train_fraction, seed=config.seed))
    if config.train_dir and config.val_dir:
        train = scan_dataset(config.train_dir)
        val = scan_dataset(config.val_dir)
        if train.class_names != val.class_names:
            diff = sorted(set(train.class_names) ^ set(val.class_names))
            raise DatasetError(f"train and val trees disagree on class names: {diff}")
        return train, val
    raise DatasetError("no dataset given: need --data-dir or both --train-dir and --val-dir")


def evaluate(model: ResNet9, manifest, class_names, batch_size=32, img_size=256):
    """Eval-mode forward over every sample; returns a ConfusionMatrix.

    ``class_names`` is the model's label space; manifest classes must be a
    subset of it (labels are remapped by name). Prediction is the argmax
    logit, ties to the lowest class index.
    """
    index_of = {name: i for i, name in enumerate(class_names)}
    missing = [n for n in manifest.class_names if n not in index_of]
    if missing:
        raise DatasetError("evaluation data has classes the model does not know: "
                           + ", ".join(repr(n) for n in missing))
    remap = [index_of[n] for n in manifest.class_names]
    model.eval()
    cm = ConfusionMatrix(len(class_names))
    with T.no_grad():
        for batch in batch_iter(manifest, batch_size, img_size=img_size, shuffle=False):
            logits = model(batch.images)
            preds = np.argmax(logits.data, axis=1)
            cm.update_many([remap[l] for l in batch.labels], preds)
    return cm


def train_model(config: TrainConfig, log=print):
    """Full training run; returns a summary dict of artifacts and metrics.

    Per step: cosine (or constant) learning rate by global step, train-mode
    forward, cross-entropy, backward, Adam update. After each epoch the
    holdout is evaluated in eval mode and a ``epoch,train_loss,val_accuracy,lr``
    line is appended; the logged lr is the schedule at the step counter after
    the epoch, so the last line records the end-of-schedule rate.
    """
    T.set_deterministic(config.deterministic)
    _apply_thread_limit(config.threads)
    t0 = time.time()

    train_manifest, holdout_manifest = resolve_manifests(config)
    class_names = list(train_manifest.class_names)
    if len(class_names) < 2:
        raise DatasetError("need at least 2 classes to train a classifier")

    os.makedirs(config.out_dir, exist_ok=True)
    save_manifest(train_manifest, os.path.join(config.out_dir, "train_manifest.csv"))
    save_manifest(holdout_manifest, os.path.join(config.out_dir, "holdout_manifest.csv"))

    arch = ModelConfig(num_classes=len(class_names), img_size=config.img_size)
    model = ResNet9(arch)
    master = T.Rng(config.seed)
    kaiming_init(model, master.spawn(0))

    steps_per_epoch = math.ceil(len(train_manifest) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    per_epoch = config.schedule == "cosine-epoch"
    if config.schedule == "cosine" and total_steps > 0:
        sched = CosineSchedule(config.base_lr, total_steps)
    elif per_epoch and config.epochs > 0:
        sched = CosineSchedule(config.base_lr, config.epochs)
    elif config.schedule in ("cosine", "cosine-epoch", "constant"):
        sched = ConstantSchedule(config.base_lr)
    else:
        raise ValueError(f"schedule must be 'cosine', 'cosine-epoch' or 'constant', "
                         f"got {config.schedule!r}")

    opt = Adam(model.named_parameters(), lr=config.base_lr,
               weight_decay=config.weight_decay)

    with open(os.path.join(config.out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({"config": config.to_dict(), "class_names": class_names,
                   "num_train": len(train_manifest), "num_holdout": len(holdout_manifest),
                   "steps_per_epoch": steps_per_epoch, "total_steps": total_steps},
                  fh, indent=2)

    meta_base = {"config": config.to_dict(), "total_steps": total_steps}
    epoch_rows = []
    best = {"accuracy": -1.0, "epoch": -1}
    global_step = 0
    best_path = os.path.join(config.out_dir, "best.ckpt")
    final_path = os.path.join(config.out_dir, "final.ckpt")

    for epoch in range(config.epochs):
        model.train()
        loss_sum, sample_count = 0.0, 0
        epoch_seed = master.spawn(1 + epoch).seed
        for i, batch in enumerate(batch_iter(
                train_manifest, config.batch_size, img_size=config.img_size,
                shuffle=True, seed=epoch_seed)):
            lr_now = sched(epoch if per_epoch else global_step)
            logits = model(batch.images)
            loss = T.cross_entropy(logits, batch.labels)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise NumericError(f"non-finite training loss at epoch {epoch} batch {i}")
            opt.zero_grad()
            T.backward(loss, params=[p for _, p in opt.named_params])
            opt.step(lr_now)
            global_step += 1
            loss_sum += loss_val * len(batch.labels)
            sample_count += len(batch.labels)

        train_loss = loss_sum / max(1, sample_count)
        cm = evaluate(model, holdout_manifest, class_names,
                      batch_size=config.batch_size, img_size=config.img_size)
        accuracy = overall(cm, "micro")[0]
        lr_logged = sched(epoch + 1 if per_epoch else global_step)
        epoch_rows.append((epoch, train_loss, accuracy, lr_logged))
        log(f"epoch {epoch}: train_loss={train_loss:.4f} "
            f"val_accuracy={accuracy:.4f} lr={lr_logged:.6g}")

        if accuracy > best["accuracy"]:
            best = {"accuracy": accuracy, "epoch": epoch}
            save_checkpoint(best_path, model, class_names,
                            meta={**meta_base, "epoch": epoch, "val_accuracy": accuracy,
                                  "role": "best"})
        if config.save_every > 0 and (epoch + 1) % config.save_every == 0:
            save_checkpoint(os.path.join(config.out_dir, f"epoch_{epoch:03d}.ckpt"),
                            model, class_names,
                            meta={**meta_base, "epoch": epoch, "val_accuracy": accuracy})

    # Final artifacts; epochs=0 still needs one (chance-level) evaluation.
    if config.epochs == 0:
        cm = evaluate(model, holdout_manifest, class_names,
                      batch_size=config.batch_size, img_size=config.img_size)
    final_accuracy = overall(cm, "micro")[0]
    save_checkpoint(final_path, model, class_names,
                    meta={**meta_base, "epoch": config.epochs - 1,
                          "val_accuracy": final_accuracy, "role": "final"})
    if best["epoch"] < 0:
        best = {"accuracy": final_accuracy, "epoch": -1}
        save_checkpoint(best_path, model, class_names,
                        meta={**meta_base, "epoch": -1, "val_accuracy": final_accuracy,
                              "role": "best"})

    with open(os.path.join(config.out_dir, "epochs.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("epoch,train_loss,val_accuracy,lr\n")
        for epoch, tl, acc, lr in epoch_rows:
            fh.write(f"{epoch},{tl!r},{acc!r},{lr!r}\n")

    report = build_report(cm, class_names, mode=config.f1_aggregation)
    ext = "json" if config.report_format == "json" else "csv"
    report_path = os.path.join(config.out_dir, f"report.{ext}")
    render_report(report, fmt=ext, destination=report_path)
    render_confusion(cm, class_names,
                     destination=os.path.join(config.out_dir, "confusion.csv"))

    return {
        "out_dir": config.out_dir,
        "class_names": class_names,
        "epochs": epoch_rows,
        "best_epoch": best["epoch"],
        "best_accuracy": best["accuracy"],
        "final_accuracy": final_accuracy,
        "final_checkpoint": final_path,
        "best_checkpoint": best_path,
        "report_path": report_path,
        "seconds": time.time() - t0,
    }
