import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpld_onn.actfit import ActivationCoeffs
from fpld_onn.errors import NumericalDomainError, ParameterError
from fpld_onn.laser import OMEGA, PS, Waveform, gaussian_waveform
from fpld_onn.onn import MlpModel, evaluate, init_model
from fpld_onn.physim import (
    LaserConfig,
    PulseGrid,
    encode_pixel,
    evaluate_physical,
    infer_image,
    measure_peak_fwhm,
    neuron_response,
    seeded_subset,
    weighted_sum,
    write_label_table,
    write_scatter_csv,
)
from fpld_onn.xfer import extract_transfer_curve

LASER = LaserConfig()
GRID = PulseGrid()


def _act(det_omega, fwhm):
    return ActivationCoeffs([2.0, 1.0, 1.0, 1.0, 0.3, 2.0, 0.02], 150.0,
                            detuning=det_omega * OMEGA, pulse_fwhm=fwhm)


# -- encoding / measurement ---------------------------------------------------

def test_encode_zero_is_zero():
    assert not np.any(encode_pixel(0.0).samples)


def test_encode_unit_pixel():
    w = encode_pixel(1.0, 40.0)
    assert w.samples.max() == 1.0
    assert np.argmax(w.samples) == GRID.n // 2
    peak, fwhm = measure_peak_fwhm(w)
    assert peak == 1.0
    assert abs(fwhm - 40.0) <= 0.1


@pytest.mark.parametrize("v", [-0.01, 1.01, float("nan")])
def test_encode_rejects_out_of_range(v):
    with pytest.raises(NumericalDomainError):
        encode_pixel(v)


def test_grid_checks():
    with pytest.raises(ParameterError):
        encode_pixel(0.5, 80.0)                    # 400 ps < 6 x 80 ps
    with pytest.raises(ParameterError):
        PulseGrid(400 * PS, 0.1 * PS).check(40.0)


def test_fwhm_of_analytic_gaussian():
    sigma = 17.0
    t = np.arange(0, 400.0 + 1e-9, 0.05)
    w = Waveform(0.0, 0.05 * PS, np.exp(-0.5 * ((t - 200) / sigma) ** 2))
    expected = 2 * math.sqrt(2 * math.log(2)) * sigma
    assert abs(expected - 40.03) < 0.01
    assert abs(measure_peak_fwhm(w)[1] - expected) <= 0.1


def test_fwhm_errors():
    with pytest.raises(NumericalDomainError):
        measure_peak_fwhm(Waveform(0.0, PS, np.zeros(100)))
    with pytest.raises(NumericalDomainError):
        measure_peak_fwhm(Waveform(0.0, PS, np.array([0.0, 1.0])))
    edge = np.linspace(0, 1, 100)                 # still rising at the window end
    with pytest.raises(NumericalDomainError):
        measure_peak_fwhm(Waveform(0.0, PS, edge))


@settings(max_examples=30, deadline=None)
@given(fwhm=st.floats(10.0, 60.0), peak=st.floats(1e-3, 200.0))
def test_fwhm_of_sampled_gaussians(fwhm, peak):
    w = gaussian_waveform(peak, fwhm * PS, 0.05 * PS, 400 * PS)
    p, f = measure_peak_fwhm(w)
    assert abs(f - fwhm) <= 0.01
    assert p == pytest.approx(peak, rel=1e-6)


# -- multiply-accumulate ------------------------------------------------------

def test_weighted_sum_linearity():
    ws = [encode_pixel(v) for v in (0.2, 0.7, 1.0)]
    weights = [0.5, 1.5, 0.25]
    out = weighted_sum(ws, weights)
    expected = sum(w * p for w, p in zip(weights, (0.2, 0.7, 1.0)))
    assert abs(out.samples.max() - expected) <= 1e-12 * expected
    twice = weighted_sum(ws, [2 * w for w in weights])
    np.testing.assert_allclose(twice.samples, 2 * out.samples, rtol=1e-15)


def test_weighted_sum_zero():
    out = weighted_sum([encode_pixel(0.3), encode_pixel(0.9)], [0.0, 0.0])
    assert not np.any(out.samples)


def test_weighted_sum_intercept_pulse():
    out = weighted_sum([encode_pixel(0.0)], [1.0], intercept=0.75, fwhm_ps=45.0)
    p, f = measure_peak_fwhm(out)
    assert p == 0.75 and abs(f - 45.0) <= 0.01


def test_weighted_sum_distorted_bound():
    t = GRID.times / PS
    a = Waveform(0.0, GRID.dt, np.exp(-np.abs(t - 190) / 15.0))
    b = Waveform(0.0, GRID.dt, np.where(np.abs(t - 215) < 20, 1.0 - np.abs(t - 215) / 20, 0.0))
    out = weighted_sum([a, b], [0.8, 1.3])
    assert out.samples.max() <= 0.8 * a.samples.max() + 1.3 * b.samples.max()
    assert out.samples.max() < 0.8 + 1.3 - 1e-3     # misaligned peaks


def test_weighted_sum_errors():
    a = encode_pixel(0.5)
    b = Waveform(0.0, 0.1 * PS, np.ones(10))
    with pytest.raises(NumericalDomainError):
        weighted_sum([a, b], [1.0, 1.0])
    with pytest.raises(NumericalDomainError):
        weighted_sum([a], [1.0, 2.0])
    with pytest.raises(NumericalDomainError):
        weighted_sum([a], [-1.0])


# -- neurons ------------------------------------------------------------------

def test_zero_input_gives_floor():
    out = neuron_response(LASER, -29 * OMEGA, encode_pixel(0.0))
    assert out.samples.max() < 1e-2
    assert len(out) == GRID.n


def test_neuron_peak_on_transfer_curve():
    peaks = [15.0, 30.0, 60.0]                       # above the -29 Omega threshold
    curve = extract_transfer_curve(LASER.params, LASER.bias, -9, -29 * OMEGA, 40.0, peaks)
    for p, expected in zip(peaks, curve.p_out):
        drive = Waveform(0.0, GRID.dt, p * GRID.unit_pulse(40.0))
        got = neuron_response(LASER, -29 * OMEGA, drive).samples.max()
        assert abs(got - expected) <= 0.02 * expected


def test_neuron_broadens_strong_pulse():
    drive = Waveform(0.0, GRID.dt, 60.0 * GRID.unit_pulse(40.0))
    out = neuron_response(LASER, -25 * OMEGA, drive)
    assert measure_peak_fwhm(out)[1] > 40.0


# -- inference ----------------------------------------------------------------

def test_black_image_ties_to_label_zero():
    m = init_model((784, 10, 10), _act(-29, 40), _act(-29, 45), 0)
    m.w1[:] = 0.0
    m.w2[:] = 0.0
    label, records = infer_image(m, LASER, np.zeros(784))
    assert label == 0
    out_peaks = [r.post_peak for r in records if r.layer == 2]
    assert len(out_peaks) == 10 and len(set(out_peaks)) == 1
    assert max(out_peaks) < 1e-2


def test_inference_smoke_and_exports(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.uniform(0, 1, (10, 784)) * (rng.random((10, 784)) < 0.2)
    labels = rng.integers(0, 10, 10)
    m = init_model((784, 10, 10), _act(-29, 40), _act(-29, 45), 0)
    m.w1 *= 0.5
    res = evaluate_physical(m, LASER, images, labels, chunk=4)
    assert 0.0 <= res.accuracy <= 1.0
    assert not res.failures
    assert len(res.records) == 10 * 20
    assert res.counts.sum() == 10
    # batch and single-image paths agree
    lab, recs = infer_image(m, LASER, images[3])
    assert lab == res.predictions[3]
    assert [r.post_peak for r in recs] == [r.post_peak for r in res.records[60:80]]
    write_scatter_csv(tmp_path / "s.csv", res.records)
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 200
    assert float(rows[5]["post_peak_mW"]) == res.records[5].post_peak
    ana = evaluate(m, images, labels)
    write_label_table(tmp_path / "l.csv", ana.per_label, res.per_label, res.counts)
    assert (tmp_path / "l.csv").read_text().startswith("label,count,")


def test_physical_rejects_bad_input():
    m = init_model((784, 10, 10), _act(-29, 40), _act(-29, 45), 0)
    with pytest.raises(NumericalDomainError):
        evaluate_physical(m, LASER, np.zeros((0, 784)), np.zeros(0, dtype=int))
    with pytest.raises(NumericalDomainError):
        infer_image(m, LASER, np.full(784, 1.5))


def test_seeded_subset():
    a = seeded_subset(10_000, 1000, 0)
    assert np.array_equal(a, seeded_subset(10_000, 1000, 0))
    assert a.size == 1000 and np.all(np.diff(a) > 0)
    assert not np.array_equal(a, seeded_subset(10_000, 1000, 1))
    assert np.array_equal(seeded_subset(5, 10), np.arange(5))
