import numpy as np
import pytest
import torch

from src.cohort.schemas import Side
from src.core.errors import ModelLoadError, TargetRangeError
from src.imaging.schemas import AugmentationParams
from src.nnmodel.dataset import KneeDataset, TrainingSample
from src.nnmodel.loss import multitask_loss
from src.nnmodel.model import build_multitask_model
from src.nnmodel.schemas import BackboneSpec, FoldSplit, SnapshotInfo, TrainingSchedule
from src.nnmodel.snapshots import (
    ModelSnapshot,
    load_ensemble,
    load_fold_models,
    load_snapshot,
    save_snapshot,
    write_ensemble_manifest,
)
from src.tests.conftest import make_prepared


def _samples(n=12):
    return [
        TrainingSample(subject_id=f"S{i:02d}", side=Side.RIGHT.value, image=make_prepared(i), y=i % 3, kl=i % 5)
        for i in range(n)
    ]


def test_model_output_shapes(tiny_spec):
    model = build_multitask_model(tiny_spec, seed=0)
    prog, kl = model(torch.zeros(2, 1, 300, 300))
    assert prog.shape == (2, 3) and kl.shape == (2, 5)


def test_progression_head_does_not_touch_kl_logits(tiny_spec):
    model = build_multitask_model(tiny_spec, seed=0).eval()
    x = torch.rand(2, 1, 64, 64, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        _, kl_before = model(x)
        for param in model.head_prog.parameters():
            param.add_(torch.randn_like(param))
        _, kl_after = model(x)
    assert torch.equal(kl_before, kl_after)


def test_eval_forward_is_deterministic(tiny_spec):
    model = build_multitask_model(tiny_spec, seed=0).eval()
    x = torch.rand(4, 1, 64, 64, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        first = model(x)
        second = model(x)
    assert all(torch.equal(a, b) for a, b in zip(first, second))


def test_same_seed_same_initial_weights(tiny_spec):
    a = build_multitask_model(tiny_spec, seed=3).state_dict()
    b = build_multitask_model(tiny_spec, seed=3).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_resnet_spec_needs_512_channels():
    with pytest.raises(ValueError):
        BackboneSpec(name="resnet18", feature_channels=64)


def test_missing_pretrained_weights_file(tmp_path):
    spec = BackboneSpec(name="tiny", feature_channels=8, pretrained_weights=tmp_path / "nope.pt")
    with pytest.raises(ModelLoadError):
        build_multitask_model(spec)


def test_loss_is_sum_of_head_cross_entropies():
    prog = torch.tensor([[2.0, 0.0, -1.0]])
    kl = torch.tensor([[0.0, 0.0, 0.0, 0.0, 0.0]])
    loss = multitask_loss(prog, kl, torch.tensor([0]), torch.tensor([3]))
    expected = -torch.log_softmax(prog, 1)[0, 0] + np.log(5.0)
    assert float(loss) == pytest.approx(float(expected), rel=1e-6)


def test_loss_rejects_out_of_range_targets():
    with pytest.raises(TargetRangeError):
        multitask_loss(torch.zeros(1, 3), torch.zeros(1, 5), torch.tensor([3]), torch.tensor([0]))
    with pytest.raises(TargetRangeError):
        multitask_loss(torch.zeros(1, 3), torch.zeros(1, 5), torch.tensor([0]), torch.tensor([5]))


def test_loss_gradients_match_finite_differences():
    """Autograd against central differences on a small double-precision model."""
    torch.manual_seed(0)
    model = build_multitask_model(BackboneSpec(name="tiny", feature_channels=8), seed=0).double().eval()
    x = torch.rand(3, 1, 32, 32, dtype=torch.float64)
    y = torch.tensor([0, 1, 2])
    kl = torch.tensor([0, 2, 4])

    def loss_value():
        prog, kl_logits = model(x)
        return multitask_loss(prog, kl_logits, y, kl)

    model.zero_grad()
    loss_value().backward()

    eps = 1e-6
    checked = [model.head_prog[1].weight, model.head_kl[1].bias, model.conv_block[0][0].weight]
    worst = 0.0
    for param in checked:
        flat = param.data.view(-1)
        grad = param.grad.view(-1)
        for i in range(min(flat.numel(), 6)):
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
                up = loss_value().item()
                flat[i] = original - eps
                down = loss_value().item()
                flat[i] = original
            numeric = (up - down) / (2 * eps)
            analytic = grad[i].item()
            scale = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / scale)
    assert worst < 1e-4


def test_dataset_items_depend_on_seed_epoch_and_index():
    dataset = KneeDataset(_samples(4), AugmentationParams(), seed=1)
    first, y, kl = dataset[2]
    again, _, _ = dataset[2]
    assert first.shape == (1, 300, 300) and first.dtype == torch.float32
    assert (y, kl) == (2, 2)
    assert torch.equal(first, again)

    dataset.set_epoch(1)
    assert not torch.equal(first, dataset[2][0])


def test_dataset_without_params_returns_center_crop():
    samples = _samples(1)
    image, _, _ = KneeDataset(samples)[0]
    expected = samples[0].image.pixels[5:305, 5:305].astype(np.float32) / 255.0
    np.testing.assert_allclose(image[0].numpy(), expected)


def test_subset_keeps_only_requested_subjects():
    dataset = KneeDataset(_samples(6), seed=2)
    subset = dataset.subset(["S01", "S04"], AugmentationParams())
    assert [s.subject_id for s in subset.samples] == ["S01", "S04"]
    assert subset.params is not None and subset.seed == 2


def _snapshot(spec, fold=0, seed=0):
    model = build_multitask_model(spec, seed=seed)
    info = SnapshotInfo(
        fold_index=fold,
        split=FoldSplit(fold_index=fold, train_subject_ids=("A",), val_subject_ids=("B",)),
        epoch=3,
        validation_ap=0.5,
        seed=seed,
        schedule=TrainingSchedule(),
        backbone=spec,
    )
    return ModelSnapshot(info=info, state_dict=model.state_dict())


def test_snapshot_round_trip(tmp_path, tiny_spec):
    snapshot = _snapshot(tiny_spec)
    back = load_snapshot(save_snapshot(snapshot, tmp_path / "fold_0.pt"))
    assert back.info == snapshot.info
    x = torch.rand(1, 1, 300, 300)
    with torch.no_grad():
        expected = snapshot.to_model()(x)[0]
        actual = back.to_model()(x)[0]
    torch.testing.assert_close(actual, expected)


def test_corrupt_snapshot(tmp_path):
    path = tmp_path / "fold_0.pt"
    path.write_bytes(b"not a torch file")
    with pytest.raises(ModelLoadError):
        load_snapshot(path)
    with pytest.raises(ModelLoadError):
        load_snapshot(tmp_path / "missing.pt")


def test_ensemble_manifest_lists_folds_in_order(tmp_path, tiny_spec):
    snapshots = [_snapshot(tiny_spec, fold=f, seed=f) for f in (2, 0, 1)]
    for s in snapshots:
        save_snapshot(s, tmp_path / f"fold_{s.fold_index}.pt")
    write_ensemble_manifest(snapshots, tmp_path)

    loaded = load_ensemble(tmp_path)
    assert [s.fold_index for s in loaded] == [0, 1, 2]
    fold_models = load_fold_models(loaded)
    assert [f.fold_index for f in fold_models] == [0, 1, 2]
    assert not fold_models[0].model.training


def test_missing_ensemble_manifest(tmp_path):
    with pytest.raises(ModelLoadError):
        load_ensemble(tmp_path)
