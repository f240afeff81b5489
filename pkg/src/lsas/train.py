"""Dataset ingestion, SGD training loop, evaluation and FPS benchmarking."""

from __future__ import annotations

import csv
import os
import random
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, Subset

from .resnet import ModelConfig, build_model, count_parameters, save_checkpoint

DATA_DIR_ENV = "LSAS_DATA_DIR"

# (mean, std, crop padding) per dataset; 96x96 inputs get proportional padding
DATASET_STATS = {
    "cifar10": ((0.4914, 0.4822, 0.4465), (0.2470, 0.2435, 0.2616), 4),
    "cifar100": ((0.5071, 0.4865, 0.4409), (0.2673, 0.2564, 0.2762), 4),
    "stl10": ((0.4467, 0.4398, 0.4066), (0.2603, 0.2566, 0.2713), 12),
}
DATASET_CLASSES = {"cifar10": 10, "cifar100": 100, "stl10": 10, "imagenet": 1000}


class DatasetUnavailableError(RuntimeError):
    """Requested dataset is not present and could not be fetched."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass
class TrainConfig:
    dataset: str = "cifar10"
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 164
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_milestones: tuple = (81, 122)
    seed: int = 1
    output_dir: str = "runs"
    train_subset: int | None = None
    test_subset: int | None = None
    num_workers: int = 0
    device: str = "auto"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def resolve_device(self) -> torch.device:
        if self.device != "auto":
            return torch.device(self.device)
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")


@dataclass
class BenchResult:
    fps: float
    batch_size: int
    warmup_batches: int
    timed_batches: int
    device: str


@dataclass
class TrainResult:
    run_dir: Path
    history: list  # rows of (epoch, lr, train_loss, test_acc)
    best_acc: float
    best_checkpoint: Path
    final_checkpoint: Path


def data_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(DATA_DIR_ENV, "data"))


def _download_hint(name: str, root: Path) -> str:
    return (
        f"dataset {name!r} not found under {root}; set {DATA_DIR_ENV} to a directory "
        f"holding it, or run with network access so torchvision can download it "
        f"(torchvision.datasets, download=True)"
    )


def classification_transforms(name: str, augment: bool):
    """Standard pipeline: random crop (reflect padding) + horizontal flip at
    p=0.5 when augmenting, then tensor conversion and per-dataset
    normalization."""
    from torchvision import transforms

    name = name.lower()
    if name == "imagenet":
        norm = transforms.Normalize((0.485, 0.456, 0.406), (0.229, 0.224, 0.225))
        if augment:
            return transforms.Compose(
                [
                    transforms.RandomResizedCrop(224),
                    transforms.RandomHorizontalFlip(),
                    transforms.ToTensor(),
                    norm,
                ]
            )
        return transforms.Compose(
            [transforms.Resize(256), transforms.CenterCrop(224), transforms.ToTensor(), norm]
        )
    mean, std, pad = DATASET_STATS[name]
    side = 96 if name == "stl10" else 32
    steps = []
    if augment:
        steps += [
            transforms.RandomCrop(side, padding=pad, padding_mode="reflect"),
            transforms.RandomHorizontalFlip(),
        ]
    steps += [transforms.ToTensor(), transforms.Normalize(mean, std)]
    return transforms.Compose(steps)


def load_dataset(name: str, train: bool, root=None, augment: bool | None = None):
    """Torchvision dataset with the standard crop/flip/normalize pipeline.

    Augmentation is applied to training splits only unless overridden.
    """
    from torchvision import datasets

    name = name.lower()
    if name not in DATASET_CLASSES:
        raise ValueError(f"unknown dataset {name!r}; expected one of {sorted(DATASET_CLASSES)}")
    root = data_root(root)
    if augment is None:
        augment = train
    tf = classification_transforms(name, augment)

    if name == "imagenet":
        split_dir = root / ("train" if train else "val")
        if not split_dir.is_dir():
            raise DatasetUnavailableError(
                f"imagenet split directory {split_dir} missing; point {DATA_DIR_ENV} "
                "at a root with train/ and val/ ImageFolder layouts"
            )
        return datasets.ImageFolder(split_dir, transform=tf)

    try:
        if name == "stl10":
            return datasets.STL10(root, split="train" if train else "test", transform=tf, download=True)
        cls = datasets.CIFAR10 if name == "cifar10" else datasets.CIFAR100
        return cls(root, train=train, transform=tf, download=True)
    except Exception as exc:
        raise DatasetUnavailableError(_download_hint(name, root)) from exc


def _maybe_subset(dataset, limit):
    if limit is None or limit >= len(dataset):
        return dataset
    return Subset(dataset, range(limit))


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if torch.cuda.is_available():
        torch.cuda.manual_seed_all(seed)


def decayed_parameter_names(model: nn.Module) -> list:
    """Weight decay is uniform: the decayed set is exactly the trainable set."""
    return [n for n, p in model.named_parameters() if p.requires_grad]


def _loader(dataset, cfg: TrainConfig, shuffle: bool) -> DataLoader:
    gen = torch.Generator()
    gen.manual_seed(cfg.seed)
    return DataLoader(
        dataset,
        batch_size=cfg.batch_size,
        shuffle=shuffle,
        num_workers=cfg.num_workers,
        generator=gen if shuffle else None,
        drop_last=False,
    )


def _next_run_dir(base: Path) -> Path:
    base.mkdir(parents=True, exist_ok=True)
    existing = [int(p.name.split("-")[1]) for p in base.glob("run-*") if p.name.split("-")[1].isdigit()]
    return base / f"run-{max(existing, default=0) + 1:03d}"


def train(cfg: TrainConfig, train_data=None, test_data=None, log=print) -> TrainResult:
    """Full SGD loop: per-epoch loss/accuracy history, best+final checkpoints.

    ``train_data``/``test_data`` override dataset loading (any map-style
    dataset of (image, label) pairs), which keeps the loop testable without
    the real archives.
    """
    seed_everything(cfg.seed)
    device = cfg.resolve_device()

    if train_data is None:
        train_data = load_dataset(cfg.dataset, train=True)
    if test_data is None:
        test_data = load_dataset(cfg.dataset, train=False)
    train_data = _maybe_subset(train_data, cfg.train_subset)
    test_data = _maybe_subset(test_data, cfg.test_subset)

    model = build_model(cfg.model).to(device)
    params = list(model.parameters())
    optimizer = torch.optim.SGD(
        params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(cfg.lr_milestones), gamma=0.1
    )
    criterion = nn.CrossEntropyLoss()

    run_dir = _next_run_dir(Path(cfg.output_dir))
    run_dir.mkdir(parents=True)
    (run_dir / "decayed_params.txt").write_text(
        "\n".join(decayed_parameter_names(model)) + "\n"
    )
    history_path = run_dir / "history.csv"
    with open(history_path, "w", newline="") as fh:
        csv.writer(fh).writerow(["epoch", "lr", "train_loss", "test_acc"])

    train_loader = _loader(train_data, cfg, shuffle=True)
    test_loader = _loader(test_data, cfg, shuffle=False)
    log(
        f"training {cfg.model.attention}/{cfg.model.depth} on {cfg.dataset}: "
        f"{len(train_data)} train / {len(test_data)} test samples, "
        f"{count_parameters(model)} params, device {device}"
    )

    best_acc = -1.0
    best_path = run_dir / "best.pt"
    final_path = run_dir / "final.pt"
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        lr_now = optimizer.param_groups[0]["lr"]
        total_loss, total_seen = 0.0, 0
        for images, labels in train_loader:
            images, labels = images.to(device), labels.to(device)
            optimizer.zero_grad(set_to_none=True)
            loss = criterion(model(images), labels)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} after {total_seen} samples "
                    f"(lr={lr_now}); lower the learning rate or check the data"
                )
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * labels.size(0)
            total_seen += labels.size(0)
        scheduler.step()

        train_loss = total_loss / max(total_seen, 1)
        test_acc = evaluate_model(model, test_loader, device)
        history.append((epoch, lr_now, train_loss, test_acc))
        with open(history_path, "a", newline="") as fh:
            csv.writer(fh).writerow([epoch, lr_now, f"{train_loss:.6f}", f"{test_acc:.4f}"])
        log(f"epoch {epoch:3d} lr {lr_now:.4f} loss {train_loss:.4f} acc {test_acc:.2f}%")

        if test_acc > best_acc:
            best_acc = test_acc
            save_checkpoint(best_path, model, optimizer, epoch, {"test_acc": test_acc})
    save_checkpoint(final_path, model, optimizer, cfg.epochs, {"test_acc": history[-1][3]})
    return TrainResult(run_dir, history, best_acc, best_path, final_path)


@torch.no_grad()
def evaluate_model(model: nn.Module, loader, device=None) -> float:
    """Top-1 accuracy in percent over a loader; augmentation-free by contract."""
    device = device or next(model.parameters()).device
    was_training = model.training
    model.eval()
    correct, total = 0, 0
    for images, labels in loader:
        images, labels = images.to(device), labels.to(device)
        pred = model(images).argmax(dim=1)
        correct += (pred == labels).sum().item()
        total += labels.size(0)
    model.train(was_training)
    if total == 0:
        raise ValueError("evaluation split is empty")
    return 100.0 * correct / total


def evaluate_checkpoint(path, dataset=None, split="test", root=None, batch_size=256, subset=None) -> float:
    """Rebuild the stored model and score it on a dataset split."""
    from .resnet import load_checkpoint

    model, payload = load_checkpoint(path)
    cfg = model.config
    name = (dataset or "cifar10").lower()
    expected = DATASET_CLASSES.get(name)
    if expected is not None and cfg.num_classes != expected:
        raise ValueError(
            f"checkpoint has {cfg.num_classes} classes but {name} has {expected}"
        )
    data = load_dataset(name, train=(split == "train"), root=root, augment=False)
    data = _maybe_subset(data, subset)
    loader = DataLoader(data, batch_size=batch_size, shuffle=False)
    return evaluate_model(model, loader)


def benchmark_fps(
    model: nn.Module,
    batch_size: int = 64,
    device=None,
    input_size=None,
    warmup_batches: int = 5,
    timed_batches: int = 10,
    repeats: int = 3,
) -> BenchResult:
    """Inference throughput: median over ``repeats`` timed runs, no gradients."""
    if warmup_batches < 5:
        raise ValueError("benchmark requires at least 5 warmup batches")
    device = torch.device(device) if device is not None else next(model.parameters()).device
    if input_size is None:
        input_size = getattr(getattr(model, "config", None), "input_size", (32, 32))
    was_training = model.training
    model.eval()
    x = torch.randn(batch_size, 3, *input_size, device=device)
    rates = []
    with torch.inference_mode():
        for _ in range(warmup_batches):
            model(x)
        for _ in range(repeats):
            if device.type == "cuda":
                torch.cuda.synchronize(device)
            start = time.perf_counter()
            for _ in range(timed_batches):
                model(x)
            if device.type == "cuda":
                torch.cuda.synchronize(device)
            elapsed = time.perf_counter() - start
            rates.append(timed_batches * batch_size / elapsed)
    model.train(was_training)
    return BenchResult(
        fps=statistics.median(rates),
        batch_size=batch_size,
        warmup_batches=warmup_batches,
        timed_batches=timed_batches,
        device=str(device),
    )
