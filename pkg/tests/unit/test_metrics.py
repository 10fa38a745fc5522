"""Tests for reconstruction and distribution metrics."""
import numpy as np
import pytest

from g2d2.core.metrics import default_peak, evaluate, mse, psnr, token_accuracy, tv_distance
from g2d2.core.types import TokenField

pytestmark = pytest.mark.unit


def test_psnr_exact_match_is_infinite():
    x = np.array([0.0, 1.0, 2.0])
    assert psnr(x, x) == float("inf")


def test_psnr_reference_values():
    ref = np.zeros(4)
    assert psnr(ref + 1.0, ref, peak=1.0) == pytest.approx(0.0)
    assert psnr(ref + 0.1, ref, peak=1.0) == pytest.approx(20.0)


def test_psnr_decreases_with_mse():
    ref = np.array([0.0, 1.0])
    values = [psnr(ref + e, ref) for e in (0.01, 0.1, 0.5)]
    assert values[0] > values[1] > values[2]


def test_psnr_validation():
    with pytest.raises(ValueError):
        psnr(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        psnr(np.zeros(2), np.ones(2), peak=0.0)


def test_default_peak():
    assert default_peak(np.array([-1.0, 3.0])) == 4.0
    assert default_peak(np.array([2.0, 2.0])) == 1.0


def test_tv_values():
    assert tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert tv_distance([0.5, 0.5], [1.0, 0.0]) == 0.5
    with pytest.raises(ValueError):
        tv_distance([0.5, 0.4], [0.5, 0.5])


def test_tv_symmetric_and_triangle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p, q, r = rng.dirichlet(np.ones(6), size=3)
        assert tv_distance(p, q) == pytest.approx(tv_distance(q, p))
        assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12


def test_token_accuracy():
    a = TokenField([0, 1, 2, 1], 3)
    b = TokenField([0, 2, 2, 0], 3)
    assert token_accuracy(a, b) == 0.5
    with pytest.raises(ValueError):
        token_accuracy(a, TokenField([0, 1], 3))


def test_evaluate_report():
    z = TokenField([0, 1], 2)
    report = evaluate(np.array([0.0, 1.0]), np.array([0.0, 1.0]), z, z)
    assert report.psnr_is_infinite
    assert report.mse == 0.0
    assert report.token_accuracy == 1.0
    assert report.tv_distance is None
    report = evaluate(np.zeros(2), np.ones(2), z, z, peak=1.0, p=[0.5, 0.5], q=[1.0, 0.0])
    assert report.to_dict()["tv_distance"] == 0.5
    assert mse(np.zeros(2), np.ones(2)) == 1.0
