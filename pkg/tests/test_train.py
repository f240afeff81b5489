import csv

import pytest
import torch
from torch.utils.data import DataLoader, TensorDataset

from lsas.resnet import ModelConfig, build_model, save_checkpoint
from lsas.train import (
    DatasetUnavailableError,
    TrainConfig,
    TrainingDiverged,
    benchmark_fps,
    classification_transforms,
    decayed_parameter_names,
    evaluate_checkpoint,
    evaluate_model,
    load_dataset,
    seed_everything,
    train,
)

SMALL_MODEL = ModelConfig(depth=83, attention="se", lsas_order=1, gate_mu=128)


def small_cfg(tmp_path, **overrides):
    defaults = dict(
        dataset="cifar10",
        model=SMALL_MODEL,
        epochs=1,
        batch_size=32,
        lr=0.05,
        lr_milestones=(1000,),
        seed=3,
        output_dir=str(tmp_path / "runs"),
        train_subset=96,
        test_subset=64,
        device="cpu",
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValueError):
            TrainConfig(weight_decay=-0.1)

    def test_decay_set_is_exactly_the_trainable_set(self):
        model = build_model(SMALL_MODEL)
        decayed = decayed_parameter_names(model)
        trainable = [n for n, p in model.named_parameters() if p.requires_grad]
        assert decayed == trainable
        assert any("gammas" in n for n in decayed)  # chain params are not exempt


class TestTrainLoop:
    def test_smoke_single_epoch(self, tmp_path, synthetic_dataset):
        data = synthetic_dataset(160, seed=0)
        cfg = small_cfg(tmp_path)
        result = train(cfg, train_data=data, test_data=synthetic_dataset(64, seed=1), log=lambda *_: None)
        assert len(result.history) == 1
        assert result.run_dir.name == "run-001"
        with open(result.run_dir / "history.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "lr", "train_loss", "test_acc"]
        assert len(rows) == 2
        assert (result.run_dir / "decayed_params.txt").exists()
        assert result.best_checkpoint.exists() and result.final_checkpoint.exists()

        # a second run appends a fresh directory
        again = train(cfg, train_data=data, test_data=synthetic_dataset(64, seed=1), log=lambda *_: None)
        assert again.run_dir.name == "run-002"

    def test_loss_decreases_and_learns_synthetic(self, tmp_path, synthetic_dataset):
        cfg = small_cfg(tmp_path, epochs=3, train_subset=240, test_subset=100)
        result = train(
            cfg,
            train_data=synthetic_dataset(240, seed=2),
            test_data=synthetic_dataset(100, seed=9),
            log=lambda *_: None,
        )
        losses = [row[2] for row in result.history]
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert result.history[-1][3] > 40.0

    def test_two_runs_same_seed_identical(self, tmp_path, synthetic_dataset):
        runs = []
        for sub in ("a", "b"):
            cfg = small_cfg(tmp_path / sub, epochs=2, train_subset=96, test_subset=32, seed=11)
            result = train(
                cfg,
                train_data=synthetic_dataset(96, seed=4),
                test_data=synthetic_dataset(32, seed=5),
                log=lambda *_: None,
            )
            runs.append(result.history)
        assert runs[0] == runs[1]

    def test_nan_loss_aborts_with_diagnostic(self, tmp_path, synthetic_dataset):
        data = synthetic_dataset(64, seed=0)
        images = data.tensors[0].clone()
        images[0, 0, 0, 0] = float("nan")
        poisoned = TensorDataset(images, data.tensors[1])
        cfg = small_cfg(tmp_path, train_subset=64, test_subset=32)
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train(cfg, train_data=poisoned, test_data=data, log=lambda *_: None)


class TestEvaluate:
    def test_untrained_balanced_split_is_chance_level(self, synthetic_dataset):
        data = synthetic_dataset(400, seed=6)
        loader = DataLoader(data, batch_size=100)
        accs = []
        for seed in (0, 1, 2):
            seed_everything(seed)
            model = build_model(ModelConfig(depth=83))
            accs.append(evaluate_model(model, loader))
        mean = sum(accs) / len(accs)
        assert 7.0 <= mean <= 13.0

    def test_empty_split_rejected(self):
        model = build_model(ModelConfig(depth=83))
        empty = DataLoader(TensorDataset(torch.zeros(0, 3, 32, 32), torch.zeros(0, dtype=torch.long)))
        with pytest.raises(ValueError):
            evaluate_model(model, empty)

    def test_deterministic_accuracy(self, synthetic_dataset):
        seed_everything(0)
        model = build_model(ModelConfig(depth=83))
        loader = DataLoader(synthetic_dataset(128, seed=7), batch_size=64)
        assert evaluate_model(model, loader) == evaluate_model(model, loader)

    def test_checkpoint_class_mismatch(self, tmp_path):
        model = build_model(ModelConfig(depth=83, num_classes=10))
        path = tmp_path / "ck.pt"
        save_checkpoint(path, model)
        with pytest.raises(ValueError, match="classes"):
            evaluate_checkpoint(path, dataset="cifar100")


class TestBenchmark:
    def test_fps_positive_and_fields(self):
        model = build_model(ModelConfig(depth=83)).eval()
        result = benchmark_fps(model, batch_size=2, timed_batches=2, repeats=2)
        assert result.fps > 0
        assert result.batch_size == 2
        assert result.warmup_batches >= 5
        assert result.device == "cpu"

    def test_warmup_floor_enforced(self):
        model = build_model(ModelConfig(depth=83))
        with pytest.raises(ValueError):
            benchmark_fps(model, warmup_batches=2)


class TestDatasets:
    def test_unknown_dataset(self):
        with pytest.raises(ValueError):
            load_dataset("mnist", train=True)

    def test_missing_data_has_actionable_hint(self, tmp_path):
        with pytest.raises(DatasetUnavailableError, match="LSAS_DATA_DIR"):
            load_dataset("cifar10", train=True, root=tmp_path)

    def test_missing_imagenet_split(self, tmp_path):
        with pytest.raises(DatasetUnavailableError, match="train/"):
            load_dataset("imagenet", train=True, root=tmp_path)

    @pytest.mark.parametrize("name,side,pad", [("cifar10", 32, 4), ("stl10", 96, 12)])
    def test_training_augmentation_pipeline(self, name, side, pad):
        from torchvision import transforms

        pipeline = classification_transforms(name, augment=True).transforms
        crop = next(t for t in pipeline if isinstance(t, transforms.RandomCrop))
        flip = next(t for t in pipeline if isinstance(t, transforms.RandomHorizontalFlip))
        assert crop.size == (side, side)
        assert crop.padding == pad
        assert crop.padding_mode == "reflect"
        assert flip.p == 0.5
        assert any(isinstance(t, transforms.Normalize) for t in pipeline)

    def test_eval_pipeline_has_no_augmentation(self):
        from torchvision import transforms

        pipeline = classification_transforms("cifar10", augment=False).transforms
        assert not any(
            isinstance(t, (transforms.RandomCrop, transforms.RandomHorizontalFlip))
            for t in pipeline
        )
