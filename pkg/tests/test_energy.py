"""Tests for energy.py: operation counting and the energy estimate."""

import json
import math

import numpy as np
import pytest

from spiking_par.energy import (
    EnergyModel,
    EnergyProbe,
    count_sops,
    dense_mac_breakdown,
    dense_mac_count,
    estimate_energy,
    measure_energy,
    tap_coverage,
    valid_taps,
)
from spiking_par.errors import ConfigError
from spiking_par.functional import conv2d_array
from spiking_par.spikingformer import ConvBN, ModelConfig, Spikingformer


def _images(rng, cfg, batch):
    return rng.uniform(0.0, 1.0, size=(batch, cfg.in_channels, cfg.image_height, cfg.image_width)).astype(np.float32)


class TestTapCoverage:
    def test_padded_3x3(self):
        np.testing.assert_array_equal(tap_coverage(4, 3, 1, 1), [2, 3, 3, 2])
        assert valid_taps(4, 3, 1, 1) == 10

    def test_pointwise(self):
        np.testing.assert_array_equal(tap_coverage(5, 1, 1, 0), np.ones(5))


class TestConvCounting:
    @pytest.mark.parametrize(("kernel", "h", "w"), [(3, 6, 5), (1, 4, 4), (5, 7, 3)])
    def test_sops_match_all_ones_convolution(self, rng, kernel, h, w):
        layer = ConvBN("probe", 3, 4, kernel, rng, np.float64)
        x = rng.integers(0, 2, size=(2, 3, h, w)).astype(np.float64)
        probe = EnergyProbe()
        probe.on_conv(layer, x)
        # every output sums its in-window nonzero inputs once per output channel
        ones = np.ones((4, 3, kernel, kernel))
        expected = conv2d_array(x, ones, padding=kernel // 2).sum()
        assert probe.layers["probe"].sops == int(expected)

    def test_single_interior_spike_reaches_every_tap(self, rng):
        layer = ConvBN("probe", 2, 5, 3, rng, np.float64)
        x = np.zeros((1, 2, 6, 6))
        x[0, 1, 2, 3] = 1.0
        probe = EnergyProbe()
        probe.on_conv(layer, x)
        assert probe.layers["probe"].sops == 9 * 5

    def test_all_ones_input_has_sops_equal_macs(self, rng):
        layer = ConvBN("probe", 2, 3, 3, rng, np.float64)
        probe = EnergyProbe()
        probe.on_conv(layer, np.ones((1, 2, 5, 4)))
        entry = probe.layers["probe"]
        assert entry.sops == entry.macs
        assert entry.real_macs == 0

    def test_real_input_is_counted_as_macs(self, rng):
        layer = ConvBN("probe", 2, 3, 3, rng, np.float64)
        probe = EnergyProbe()
        probe.on_conv(layer, rng.normal(size=(1, 2, 4, 4)))
        entry = probe.layers["probe"]
        assert entry.sops == 0
        assert entry.real_macs == entry.macs == 3 * 2 * 10 * 10

    def test_encoder_is_dense_even_with_binary_pixels(self, rng):
        layer = ConvBN("encoder", 1, 2, 3, rng, np.float64, consumes_spikes=False)
        probe = EnergyProbe()
        probe.on_conv(layer, np.ones((1, 1, 3, 3)))
        assert probe.layers["encoder"].sops == 0


class TestModelCounting:
    def test_probe_macs_match_closed_form(self, rng, tiny_model_config):
        cfg = tiny_model_config
        batch = 3
        probe = count_sops(Spikingformer(cfg), _images(rng, cfg, batch))
        breakdown = dense_mac_breakdown(cfg)
        conv_macs = sum(v for k, v in breakdown.items() if k != "head")
        # convolutions run once per time step; the head runs once per sample
        assert probe.total_macs == cfg.time_steps * batch * conv_macs + batch * breakdown["head"]
        assert dense_mac_count(cfg, batch) == batch * sum(breakdown.values())

    def test_spike_layers_report_sops_and_firing_rates(self, rng, tiny_model_config):
        probe = count_sops(Spikingformer(tiny_model_config), _images(rng, tiny_model_config, 2))
        assert probe.layers["encoder"].sops == 0
        assert probe.layers["head"].sops == 0
        assert probe.total_sops > 0
        for stats in probe.spike_stats.values():
            assert 0.0 <= stats.firing_rate <= 1.0

    def test_silent_encoder_silences_the_network(self, rng, tiny_model_config):
        model = Spikingformer(tiny_model_config)
        model.encoder.weight.data[...] = 0.0
        report = measure_energy(model, [_images(rng, tiny_model_config, 2)], EnergyModel())
        assert report.sops == 0
        expected_real = sum(layer.macs for layer in report.layers if layer.name in {"encoder", "head"})
        assert report.real_macs == expected_real

    def test_relu_mode_has_no_sops(self, rng, tiny_model_config):
        cfg = ModelConfig(**{**tiny_model_config.__dict__, "neuron_mode": "relu"})
        probe = count_sops(Spikingformer(cfg), _images(rng, cfg, 2))
        assert probe.total_sops == 0
        assert probe.total_real_macs == probe.total_macs


class TestEstimate:
    def test_arithmetic(self):
        est = estimate_energy(sops=1000, real_macs=10, ann_macs=500, model=EnergyModel(e_mac=4.6, e_ac=0.9))
        assert est.snn_pj == pytest.approx(900 + 46)
        assert est.ann_pj == pytest.approx(2300)
        assert est.ratio == pytest.approx(946 / 2300)

    @pytest.mark.parametrize(("e_mac", "e_ac"), [(0.9, 4.6), (1.0, 0.0), (1.0, 1.0)])
    def test_invalid_constants(self, e_mac, e_ac):
        with pytest.raises(ConfigError):
            EnergyModel(e_mac=e_mac, e_ac=e_ac)

    def test_report_json(self, tmp_path, rng, tiny_model_config):
        model = Spikingformer(tiny_model_config)
        batches = [_images(rng, tiny_model_config, 2), _images(rng, tiny_model_config, 1)]
        report = measure_energy(model, batches, EnergyModel())
        report.write(tmp_path / "energy.json")
        payload = json.loads((tmp_path / "energy.json").read_text())
        assert payload["samples"] == 3
        assert payload["totals"]["sops"] == report.sops
        assert payload["ratio"] == pytest.approx(report.estimate.ratio)
        assert {layer["name"] for layer in payload["layers"]} >= {"encoder", "tokenizer.0", "head"}

    def test_cost_never_falls_as_spike_density_grows(self, rng):
        layer = ConvBN("spikes", 4, 6, 3, rng, np.float64)
        draws = rng.uniform(size=(2, 4, 8, 8))
        costs = []
        for density in np.linspace(0.0, 1.0, 11):
            counts = EnergyProbe()
            counts.on_conv(layer, (draws < density).astype(np.float64))
            est = estimate_energy(counts.total_sops, counts.total_real_macs, counts.total_macs, EnergyModel())
            costs.append(est.snn_pj)
        assert costs[0] == 0.0
        assert (np.diff(costs) >= 0).all()
        assert costs[-1] > costs[0]

    def test_pointwise_ratio_scales_with_firing_rate(self, rng):
        layer = ConvBN("spikes", 4, 6, 1, rng, np.float64)
        x = (rng.uniform(size=(3, 4, 5, 5)) < 0.3).astype(np.float64)
        counts = EnergyProbe()
        counts.on_conv(layer, x)
        model = EnergyModel()
        est = estimate_energy(counts.total_sops, counts.total_real_macs, counts.total_macs, model)
        rate = counts.layers["spikes"].firing_rate
        assert est.ratio == pytest.approx(rate * model.e_ac / model.e_mac)
        assert est.ratio < 1.0

    def test_single_step_model_costs_less_than_its_dense_twin(self, rng, tiny_model_config):
        cfg = ModelConfig(**{**tiny_model_config.__dict__, "time_steps": 1})
        report = measure_energy(Spikingformer(cfg), [_images(rng, cfg, 2)], EnergyModel())
        assert report.macs == report.ann_macs
        assert report.estimate.ratio < 1.0

    def test_totals_sum_the_layers(self, rng, tiny_model_config):
        model = EnergyModel()
        batches = [_images(rng, tiny_model_config, 2), _images(rng, tiny_model_config, 3)]
        report = measure_energy(Spikingformer(tiny_model_config), batches, model)
        payload = report.to_dict()
        totals = payload["totals"]
        assert totals["sops"] == sum(layer["sops"] for layer in payload["layers"])
        assert totals["macs"] == sum(layer["macs"] for layer in payload["layers"])
        assert totals["real_macs"] == sum(layer.real_macs for layer in report.layers)
        per_layer = math.fsum(model.e_ac * layer.sops + model.e_mac * layer.real_macs for layer in report.layers)
        assert totals["snn_pj"] == pytest.approx(per_layer, rel=1e-12)
        assert totals["ann_pj"] == pytest.approx(model.e_mac * totals["ann_macs"])
