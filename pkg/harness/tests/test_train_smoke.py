"""Training/evaluation smoke tests on a generated desk-scale dataset.

The dataset comes from the generator CLI (the harness only consumes its
manifest + PNG interface). Network weights start from random init: the
sandbox has no pretrained-weight downloads, and the smoke criteria do not
depend on them.
"""

import json
import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from segharness.data import load_manifest, load_pair, manifest_samples
from segharness.metrics import confusion_matrix, scores_from_confusion
from segharness.model import UNetResNet50
from segharness.train import TrainConfig, evaluate, predict_full, train


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("harness_desk")
    cmd = [sys.executable, "-m", "surfgen.cli", "dataset", "--scale", "desk",
           "--out-dir", str(out), "--seed", "77"]
    proc = subprocess.run(cmd, capture_output=True, text=True, timeout=1200)
    assert proc.returncode == 0, proc.stderr
    manifest = load_manifest(out / "manifest.json")
    assert len(manifest["images"]) == 36
    return manifest


class TestTrainingSmoke:
    def test_two_epochs_decrease_loss_on_twenty_images(self, desk_dataset):
        samples = manifest_samples(desk_dataset)[:20]
        config = TrainConfig(max_epochs=2, restarts=1, pretrained=False,
                             batch_size=4, seed=3)
        result = train(config, desk_dataset, samples)
        losses = result["history"]["train_loss"]
        assert len(losses) == 2
        assert losses[-1] < losses[0], f"loss did not decrease: {losses}"

    def test_evaluation_deterministic_given_checkpoint(self, desk_dataset):
        torch.manual_seed(0)
        model = UNetResNet50(pretrained=False)
        rec = manifest_samples(desk_dataset, defective_only=True)[0]
        img, _ = load_pair(desk_dataset, rec)
        a = predict_full(model, img)
        b = predict_full(model, img)
        assert np.array_equal(a, b)
        assert a.shape == img.shape

    def test_oracle_and_all_background_scores(self, desk_dataset):
        # run the metric path over real label files: ground truth as
        # prediction scores 100, constant background scores 0
        samples = [r for r in manifest_samples(desk_dataset, defective_only=True)]
        conf_oracle = np.zeros((3, 3), dtype=np.int64)
        conf_allbg = np.zeros((3, 3), dtype=np.int64)
        found_defect = False
        for rec in samples:
            _, mask = load_pair(desk_dataset, rec)
            found_defect = found_defect or mask.any()
            conf_oracle += confusion_matrix(mask, mask)
            conf_allbg += confusion_matrix(np.zeros_like(mask), mask)
        assert found_defect, "desk dataset produced no visible defects"
        oracle = scores_from_confusion(conf_oracle)
        allbg = scores_from_confusion(conf_allbg)
        assert oracle["mF1"] == pytest.approx(100.0)
        assert oracle["mIoU"] == pytest.approx(100.0)
        assert allbg["mP"] == 0.0 and allbg["mR"] == 0.0


class TestEvaluatePath:
    def test_full_image_evaluation_runs(self, desk_dataset):
        torch.manual_seed(1)
        model = UNetResNet50(pretrained=False)
        samples = manifest_samples(desk_dataset, defective_only=True)[:2]
        scores = evaluate(model, desk_dataset, samples)
        for key in ("mP", "mR", "mF1", "mIoU"):
            assert 0.0 <= scores[key] <= 100.0
