"""Dice/ASSD metrics against hand values and a brute-force all-pairs oracle."""
import json
import math

import numpy as np
import pytest
import torch

from helpers import PixelNet, assd_brute, surface_brute
from sfdaseg.data.records import DatasetManifest, SampleRecord
from sfdaseg.errors import ContractError
from sfdaseg.metrics import (
    EvalReport,
    assd,
    dice,
    evaluate,
    extract_surface,
    largest_connected_component,
    predict_masks,
)


def _mask(rows):
    return np.asarray(rows, dtype=np.uint8)


# ---------------------------------------------------------------- dice

def test_dice_identical_nonempty():
    m = _mask([[1, 1], [0, 1]])
    assert dice(m, m) == 100.0


def test_dice_disjoint():
    assert dice(_mask([[1, 0], [0, 0]]), _mask([[0, 0], [0, 1]])) == 0.0


def test_dice_half_overlap():
    # |P|=|G|=2, |P∩G|=1 -> 2*1/(2+2) = 50%
    p = _mask([[1, 1, 0, 0]])
    g = _mask([[0, 1, 1, 0]])
    assert dice(p, g) == 50.0


def test_dice_both_empty_is_perfect():
    z = np.zeros((4, 4), dtype=np.uint8)
    assert dice(z, z) == 100.0


def test_dice_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.random((9, 7)) > 0.6
        b = rng.random((9, 7)) > 0.6
        assert dice(a, b) == dice(b, a)


def test_dice_invariant_under_shared_permutation():
    rng = np.random.default_rng(4)
    a = rng.random((6, 6)) > 0.5
    b = rng.random((6, 6)) > 0.5
    perm = rng.permutation(36)
    ap = a.reshape(-1)[perm].reshape(6, 6)
    bp = b.reshape(-1)[perm].reshape(6, 6)
    assert dice(a, b) == dice(ap, bp)


def test_dice_shape_mismatch_rejected():
    with pytest.raises(ContractError):
        dice(np.zeros((3, 3)), np.zeros((4, 4)))
    with pytest.raises(ContractError):
        dice(np.zeros((3, 3, 3)), np.zeros((3, 3, 3)))


# ---------------------------------------------------------------- surfaces

def test_surface_matches_brute_loop():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m = rng.random((rng.integers(1, 12), rng.integers(1, 12))) > 0.5
        got = extract_surface(m)
        assert np.array_equal(got, surface_brute(m))


def test_surface_filled_square_is_ring():
    m = np.zeros((6, 6), dtype=np.uint8)
    m[1:5, 1:5] = 1
    surf = extract_surface(m)
    inner = np.zeros_like(m, dtype=bool)
    inner[2:4, 2:4] = True
    assert surf.sum() == 12           # 4x4 block minus its 2x2 interior
    assert not surf[inner].any()


# ---------------------------------------------------------------- assd

def test_assd_identical_masks_zero():
    m = np.zeros((8, 8), dtype=np.uint8)
    m[2:6, 2:6] = 1
    assert assd(m, m) == 0.0


def test_assd_single_pixels_distance_three():
    a = np.zeros((1, 4), dtype=np.uint8)
    b = np.zeros((1, 4), dtype=np.uint8)
    a[0, 0] = 1
    b[0, 3] = 1
    assert assd(a, b) == 3.0


def test_assd_shifted_square_matches_brute():
    a = np.zeros((10, 10), dtype=np.uint8)
    b = np.zeros((10, 10), dtype=np.uint8)
    a[2:6, 2:6] = 1
    b[3:7, 2:6] = 1  # shifted down one pixel
    assert assd(a, b) == assd_brute(a, b)


def test_assd_empty_mask_sentinel():
    z = np.zeros((6, 8), dtype=np.uint8)
    m = z.copy()
    m[2, 2] = 1
    sentinel = math.hypot(6, 8)
    assert assd(z, m) == sentinel
    assert assd(m, z) == sentinel
    assert assd(z, z) == sentinel


def test_assd_symmetric():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.random((8, 8)) > 0.55
        b = rng.random((8, 8)) > 0.55
        assert assd(a, b) == assd(b, a)


def test_assd_translation_invariant():
    a = np.zeros((12, 12), dtype=np.uint8)
    b = np.zeros((12, 12), dtype=np.uint8)
    a[2:5, 2:6] = 1
    b[3:5, 3:6] = 1
    shifted_a = np.roll(np.roll(a, 4, axis=0), 3, axis=1)
    shifted_b = np.roll(np.roll(b, 4, axis=0), 3, axis=1)
    assert assd(a, b) == assd(shifted_a, shifted_b)


def test_assd_exhaustive_vs_brute_oracle():
    # fast distance-transform path must equal all-pairs exactly (subset of the
    # acceptance-scale suite, different seed)
    rng = np.random.default_rng(12)
    for _ in range(150):
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        density = rng.uniform(0.1, 0.9)
        a = rng.random((h, w)) < density
        b = rng.random((h, w)) < density
        assert assd(a, b) == assd_brute(a, b)


# ---------------------------------------------------------------- lcc filter

def test_lcc_keeps_largest():
    m = np.zeros((8, 8), dtype=np.uint8)
    m[0:3, 0:3] = 1       # 9 px
    m[6, 6] = 1           # 1 px speck
    out = largest_connected_component(m)
    assert out.sum() == 9
    assert out[6, 6] == 0


def test_lcc_tie_keeps_first_component():
    m = np.zeros((5, 5), dtype=np.uint8)
    m[0, 0] = 1           # first in raster order
    m[4, 4] = 1           # same size
    out = largest_connected_component(m)
    assert out[0, 0] == 1 and out[4, 4] == 0


def test_lcc_diagonal_is_not_connected():
    m = np.zeros((4, 4), dtype=np.uint8)
    m[0, 0] = m[1, 1] = m[2, 2] = 1  # 4-connectivity: three separate specks
    out = largest_connected_component(m)
    assert out.sum() == 1


def test_lcc_empty_passthrough():
    z = np.zeros((4, 4), dtype=np.uint8)
    assert largest_connected_component(z).sum() == 0


# ---------------------------------------------------------------- evaluate

def _gt_manifest(gts, h=8, w=8):
    rng = np.random.default_rng(0)
    records = []
    for i, gt in enumerate(gts):
        img = rng.random((h, w, 3)).astype(np.float32)
        records.append(SampleRecord(f"s{i:02d}", img, gt, "target"))
    return DatasetManifest("fixture", "test", records, (h, w), {})


class _FixedModel(PixelNet):
    """Ignores the input and returns stored probability maps in order."""

    def __init__(self, prob_batches):
        super().__init__()
        self._batches = [torch.as_tensor(b, dtype=torch.float32) for b in prob_batches]
        self._cursor = 0

    def forward_with_features(self, x):
        out = self._batches[self._cursor % len(self._batches)]
        self._cursor += 1
        return out[: x.shape[0]], torch.zeros(x.shape[0], 1, *x.shape[-2:])


def test_evaluate_perfect_model():
    gt = np.zeros((2, 8, 8), dtype=np.uint8)
    gt[0, 2:6, 2:6] = 1
    gt[1, 3:5, 3:5] = 1
    manifest = _gt_manifest([gt, gt])
    model = _FixedModel([np.stack([gt.astype(np.float32)] * 2)])
    report = evaluate(model, manifest)
    assert report.mean_dice == 100.0
    assert report.mean_assd == 0.0
    for cls in ("disc", "cup"):
        assert report.summary[cls]["dice"] == 100.0
        assert report.summary[cls]["assd"] == 0.0


def test_evaluate_all_background_flags_sentinel():
    gt = np.zeros((2, 8, 8), dtype=np.uint8)
    gt[0, 2:6, 2:6] = 1
    gt[1, 3:5, 3:5] = 1
    manifest = _gt_manifest([gt])
    model = _FixedModel([np.zeros((1, 2, 8, 8), dtype=np.float32)])
    report = evaluate(model, manifest)
    assert report.mean_dice == 0.0
    sid = next(iter(report.per_sample))
    for cls in ("disc", "cup"):
        entry = report.per_sample[sid][cls]
        assert entry["sentinel"] is True
        assert entry["assd"] == math.hypot(8, 8)


def test_evaluate_hand_fixture():
    # two samples, hand-computed per-class dice/assd
    gt = np.zeros((2, 8, 8), dtype=np.uint8)
    gt[0, 2:6, 2:6] = 1               # disc: 4x4 square
    gt[1, 3:5, 3:5] = 1               # cup: 2x2 square
    pred = gt.copy()
    pred[0] = 0
    pred[0, 3:7, 2:6] = 1             # disc shifted down 1: dice = 2*12/32 = 75
    manifest = _gt_manifest([gt, gt])
    model = _FixedModel([np.stack([pred.astype(np.float32)] * 2)])
    report = evaluate(model, manifest)
    assert report.summary["disc"]["dice"] == pytest.approx(75.0)
    assert report.summary["cup"]["dice"] == pytest.approx(100.0)
    expected_disc_assd = assd_brute(pred[0], gt[0])
    assert report.summary["disc"]["assd"] == pytest.approx(expected_disc_assd)
    assert report.summary["disc"]["dice_std"] == pytest.approx(0.0)
    assert report.mean_dice == pytest.approx((75.0 + 100.0) / 2)


def test_evaluate_requires_annotations():
    rng = np.random.default_rng(0)
    rec = SampleRecord("x", rng.random((8, 8, 3)).astype(np.float32), None, "target")
    manifest = DatasetManifest("nogt", "test", [rec], (8, 8), {})
    with pytest.raises(ContractError):
        evaluate(_FixedModel([np.zeros((1, 2, 8, 8))]), manifest)


def test_predict_masks_lcc_toggle():
    probs = np.zeros((1, 2, 8, 8), dtype=np.float32)
    probs[0, :, 1:4, 1:4] = 0.9       # main blob
    probs[0, :, 6, 6] = 0.9           # speck
    model = _FixedModel([probs])
    with_filter = predict_masks(model, torch.zeros(1, 3, 8, 8))
    model._cursor = 0
    without = predict_masks(model, torch.zeros(1, 3, 8, 8), lcc_filter=False)
    assert with_filter[0, 0, 6, 6] == 0
    assert without[0, 0, 6, 6] == 1


def test_report_json_roundtrip():
    gt = np.zeros((2, 8, 8), dtype=np.uint8)
    gt[0, 2:6, 2:6] = 1
    gt[1, 3:5, 3:5] = 1
    manifest = _gt_manifest([gt])
    report = evaluate(_FixedModel([np.stack([gt.astype(np.float32)])]), manifest)
    doc = json.loads(report.to_json())
    assert doc["mean_dice"] == report.mean_dice
    back = EvalReport.from_json(report.to_json())
    assert back.summary == report.summary
    assert back.per_sample == report.per_sample


def test_report_csv_has_mean_rows():
    gt = np.zeros((2, 8, 8), dtype=np.uint8)
    gt[0, 2:6, 2:6] = 1
    gt[1, 3:5, 3:5] = 1
    manifest = _gt_manifest([gt, gt])
    report = evaluate(_FixedModel([np.stack([gt.astype(np.float32)] * 2)]), manifest)
    lines = report.to_csv().strip().splitlines()
    assert lines[0] == "id,class,dice,assd"
    assert len(lines) == 1 + 2 * 2 + 2          # header + per-sample + MEAN rows
    assert sum(1 for l in lines if l.startswith("MEAN,")) == 2
    rendered = report.render()
    assert "disc" in rendered and "cup" in rendered and "±" in rendered
