import copy

import numpy as np
import pytest
import torch

from src.cohort.schemas import Side
from src.core.errors import TrainingDivergedError
from src.imaging.schemas import PreparedImage
from src.nnmodel.dataset import KneeDataset, TrainingSample
from src.nnmodel.schemas import FoldSplit, TrainingSchedule
from src.nnmodel.snapshots import load_ensemble
from src.nnmodel.train import predict_binary, train_cv, train_fold


def _signal_samples(n: int, seed: int = 0):
    """Progressors carry a bright square at the center of the knee."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        y = [0, 1, 2][i % 3]
        pixels = rng.integers(0, 120, size=(310, 310)).astype(np.uint8)
        if y:
            pixels[130:180, 130:180] = 230
        image = PreparedImage(pixels=pixels, side=Side.RIGHT, flipped=False)
        samples.append(TrainingSample(subject_id=f"S{i:03d}", side="right", image=image, y=y, kl=min(y + 1, 4)))
    return samples


def _split(samples, n_val):
    ids = [s.subject_id for s in samples]
    return FoldSplit(fold_index=0, train_subject_ids=tuple(ids[n_val:]), val_subject_ids=tuple(ids[:n_val]))


def _conv_state(model):
    return {k: v.clone() for k, v in model.conv_block.state_dict().items()}


def test_freeze_lr_drop_and_best_epoch(tiny_spec):
    """Conv block untouched while frozen, LR dropped on schedule, snapshot = best validation AP."""
    samples = _signal_samples(18)
    schedule = TrainingSchedule(freeze_epochs=1, train_epochs=3, lr=1e-3, lr_drop_epoch=2, batch_size=6)
    conv_states, full_states = {}, {}

    def callback(epoch, model):
        conv_states[epoch] = _conv_state(model)
        full_states[epoch] = copy.deepcopy(model.state_dict())

    snapshot = train_fold(KneeDataset(samples), _split(samples, 6), schedule, tiny_spec, seed=0, callback=callback)

    # frozen epoch: weights and batch-norm statistics identical
    for name, before in conv_states[0].items():
        assert torch.equal(before, conv_states[1][name]), name
    assert any(not torch.equal(conv_states[1][k], conv_states[2][k]) for k in conv_states[1])

    history = snapshot.info.history
    assert [h.epoch for h in history] == [1, 2, 3, 4]
    assert [h.lr for h in history] == pytest.approx([1e-3, 1e-3, 1e-4, 1e-4])
    assert [h.frozen for h in history] == [True, False, False, False]

    aps = [h.validation_ap for h in history]
    best = int(np.argmax(aps)) + 1
    assert snapshot.epoch == best
    assert snapshot.validation_ap == max(aps)
    for name, tensor in snapshot.state_dict.items():
        assert torch.equal(tensor, full_states[best][name]), name


def test_same_seed_same_snapshot(tiny_spec, short_schedule):
    samples = _signal_samples(9)
    split = _split(samples, 3)
    a = train_fold(KneeDataset(samples), split, short_schedule, tiny_spec, seed=5)
    b = train_fold(KneeDataset(samples), split, short_schedule, tiny_spec, seed=5)
    assert a.epoch == b.epoch
    assert all(torch.equal(a.state_dict[k], b.state_dict[k]) for k in a.state_dict)


def test_non_finite_loss_aborts_training(mocker, tiny_spec, short_schedule):
    mocker.patch(
        "src.nnmodel.train.multitask_loss",
        return_value=torch.tensor(float("nan"), requires_grad=True),
    )
    samples = _signal_samples(6)
    with pytest.raises(TrainingDivergedError) as excinfo:
        train_fold(KneeDataset(samples), _split(samples, 3), short_schedule, tiny_spec, seed=0)
    assert excinfo.value.epoch == 1


def test_predict_binary_is_p1_plus_p2(constant_model_factory):
    model = constant_model_factory([0.5, 0.3, 0.2], [0.2] * 5)
    scores = predict_binary(model, KneeDataset(_signal_samples(4)), batch_size=3)
    np.testing.assert_allclose(scores, 0.5, atol=1e-6)


def test_train_cv_writes_one_snapshot_per_fold(tmp_path, tiny_spec, short_schedule):
    samples = _signal_samples(12)
    ids = [s.subject_id for s in samples]
    splits = [
        FoldSplit(fold_index=0, train_subject_ids=tuple(ids[6:]), val_subject_ids=tuple(ids[:6])),
        FoldSplit(fold_index=1, train_subject_ids=tuple(ids[:6]), val_subject_ids=tuple(ids[6:])),
    ]
    snapshots = train_cv(KneeDataset(samples), splits, short_schedule, tiny_spec, seed=10, out_dir=tmp_path)

    assert sorted(p.name for p in tmp_path.glob("fold_*.pt")) == ["fold_0.pt", "fold_1.pt"]
    assert (tmp_path / "ensemble.json").exists()
    assert [s.info.seed for s in snapshots] == [10, 11]
    loaded = load_ensemble(tmp_path)
    assert [s.info.split for s in loaded] == splits


@pytest.mark.slow
def test_full_schedule_contracts_on_200_images(tiny_spec):
    """Default 2 + 20 epoch schedule on a 200-image synthetic set."""
    samples = _signal_samples(200, seed=1)
    schedule = TrainingSchedule(batch_size=32)
    conv_states = {}

    def callback(epoch, model):
        if epoch <= 3:
            conv_states[epoch] = _conv_state(model)

    snapshot = train_fold(KneeDataset(samples), _split(samples, 50), schedule, tiny_spec, seed=0, callback=callback)

    for name, before in conv_states[0].items():
        assert torch.equal(before, conv_states[2][name]), name
    assert any(not torch.equal(conv_states[2][k], conv_states[3][k]) for k in conv_states[2])
    lrs = [h.lr for h in snapshot.info.history]
    assert len(lrs) == 22
    assert lrs[14] == pytest.approx(1e-3) and lrs[15] == pytest.approx(1e-4)
    aps = [h.validation_ap for h in snapshot.info.history]
    assert snapshot.epoch == int(np.argmax(aps)) + 1
