"""Smoke tests for the python bindings (the C++ suites carry the real load)."""

import math
import os

import numpy as np
import pytest

import htsim

ASSETS = os.environ.get("HTSIM_ASSET_DIR", os.path.join(os.path.dirname(__file__), "..", "..", "assets"))


@pytest.fixture(scope="module")
def desk():
    model = htsim.load_model(os.path.join(ASSETS, "desk_vgg.htnn"))
    ds = htsim.load_dataset(
        os.path.join(ASSETS, "synth10_test_images.htsr"),
        os.path.join(ASSETS, "synth10_test_labels.htsr"),
    )
    return model, ds


def test_expected_mu_hand_enumeration():
    assert htsim.expected_mu_at_p(2, 0.5, 1.0) == pytest.approx(1.25, abs=1e-12)
    assert htsim.expected_mu_at_p(0, 0.5, 1.0) == 0.0


def test_default_table_reproduces_anchor():
    ber = htsim.default_bit_error_model()
    cfg = htsim.HybridConfig(3, 5, 0.68)
    assert htsim.expected_mu(cfg, ber, 2**-7) == pytest.approx(0.01, rel=1e-3)
    assert repr(cfg) == "3-5 @ 0.68V"


def test_quantize_roundtrip_within_half_step():
    scheme = htsim.QuantScheme.signed_for_max_abs(1.0)
    x = np.linspace(-0.99, 0.99, 101)
    qt = htsim.quantize(x, scheme)
    back = htsim.dequantize(qt)
    assert np.max(np.abs(back - x)) <= scheme.scale / 2 + 1e-12


def test_inject_confines_flips_to_lsbs():
    scheme = htsim.QuantScheme.unsigned_for_max(1.0)
    rng = np.random.default_rng(5)
    qt = htsim.quantize(rng.random(512), scheme)
    ber = htsim.BitErrorModel([(0.6, 0.5)])
    out = htsim.inject(qt, htsim.HybridConfig(5, 3, 0.6), ber, seed=9)
    diff = np.bitwise_xor(qt.codes, out.codes)
    assert int(np.max(diff >> 3)) == 0
    assert int(np.count_nonzero(diff)) > 0


def test_sample_noise_matches_expectation_roughly():
    ber = htsim.BitErrorModel([(0.7, 0.1)])
    cfg = htsim.HybridConfig(4, 4, 0.7)
    codes = np.random.default_rng(7).integers(0, 256, size=200000, dtype=np.uint8)
    deltas = htsim.sample_noise(codes, False, 1.0, cfg, ber, seed=3)
    mu = htsim.expected_mu(cfg, ber, 1.0)
    assert np.mean(np.abs(deltas)) == pytest.approx(mu, rel=0.05)


def test_fgsm_identity_and_bound(desk):
    model, ds = desk
    x = ds.example(0)
    same = htsim.fgsm(model, x, ds.labels[0], 0.0)
    assert np.array_equal(same, x)
    adv = htsim.fgsm(model, x, ds.labels[0], 0.1)
    assert np.max(np.abs(adv - x)) <= 0.1 + 1e-12
    assert adv.min() >= 0.0 and adv.max() <= 1.0


def test_evaluate_is_deterministic_and_matches_reference(desk):
    model, ds = desk
    acc1, conf1 = htsim.evaluate(model, ds, seed=1)
    acc2, conf2 = htsim.evaluate(model, ds, seed=1)
    assert (acc1, conf1) == (acc2, conf2)
    assert acc1 == pytest.approx(model.reference_clean_accuracy, abs=1e-9)
    noisy_acc, _ = htsim.evaluate(model, ds, plan=[(0, "activation_mb", "1-7")], v_dd=0.65, seed=1, subset=200)
    assert 0.0 <= noisy_acc <= 100.0


def test_weight_attack_formulations_agree():
    rng = np.random.default_rng(11)
    w = rng.normal(size=64)
    g = rng.normal(size=64)
    a = htsim.weight_attack_ideal(w, g, 0.05)
    b = htsim.weight_attack_sni(w, 0.05, htsim.noise_direction(g))
    assert np.array_equal(a, b)


def test_section_attack_smoke(desk):
    model, ds = desk
    layer = model.attackable_layers[0]
    sel = htsim.select_section(
        model, layer, htsim.HybridConfig(7, 1, 0.72), htsim.default_bit_error_model(),
        ds, batch=16, resamples=8, seed=4,
    )
    assert 0.0 <= sel.match_percent <= 100.0
    rep = htsim.attack_section(model, ds, sel, mu=0.05, subset=100)
    assert rep["config"] == repr(htsim.config_for_mu(0.05))
    assert rep["layer"] == layer
    assert 0.0 <= rep["post_accuracy"] <= 100.0


def test_cost_headline_percentages():
    energy = htsim.energy_compare([(1000, 8, 0, 0.68)], [(1000, 0, 8, 0.9)])
    area = htsim.area_compare([(1000, 8, 0, 0.68)], [(1000, 0, 8, 0.9)])
    assert energy == pytest.approx(-35.45, abs=0.1)
    assert area == pytest.approx(30.0, abs=1e-9)


def test_loss_uniform_logits():
    assert htsim.loss(np.zeros(10), 3) == pytest.approx(math.log(10.0))
