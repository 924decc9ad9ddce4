import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from slicetwin import domain
from slicetwin.domain import (ConfigError, SLASpec, ScenarioConfig, SliceClass,
                              apply_settings, build_slices, default_config, from_text,
                              require_valid, to_text, validate)


def test_default_config_matches_documented_values():
    cfg = default_config()
    assert cfg.alpha == 0.4
    assert cfg.beta == 0.6
    assert cfg.prediction_horizon == 5
    assert cfg.edge_capacity_units == 100
    assert cfg.horizon_slots == 5000
    assert cfg.burst_factor == 1.5
    assert cfg.twin_update_interval_slots == 1
    assert cfg.repetitions == 10
    assert cfg.recurrent_hidden_size == 64
    assert cfg.recurrent_learning_rate == 0.001
    assert cfg.sla_embb.latency_threshold_ms == 20.0
    assert cfg.sla_urllc.latency_threshold_ms == 5.0
    assert cfg.sla_mmtc.latency_threshold_ms == 50.0


def test_default_config_is_valid():
    assert validate(default_config()) == []


def test_validate_names_offending_field():
    errors = validate(replace(default_config(), alpha=-0.1))
    assert len(errors) == 1
    assert "alpha" in errors[0]


def test_validate_open_interval_threshold():
    cfg = replace(default_config(),
                  sla_embb=SLASpec(latency_threshold_ms=20.0, satisfaction_threshold=1.0))
    errors = validate(cfg)
    assert any("satisfaction_threshold" in e for e in errors)


def test_validate_collects_all_violations():
    cfg = replace(default_config(), alpha=-1.0, beta=-2.0, load_scale=0.0)
    errors = validate(cfg)
    assert len(errors) == 3


def test_require_valid_raises_config_error():
    with pytest.raises(ConfigError, match="alpha"):
        require_valid(replace(default_config(), alpha=-1.0))


def test_text_round_trip_default():
    cfg = default_config()
    assert from_text(to_text(cfg)) == cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="nonsense"):
        from_text("nonsense = 3\n")
    with pytest.raises(ConfigError, match="sla_embb.bogus"):
        apply_settings(default_config(), {"sla_embb.bogus": "1"})


def test_dotted_override():
    cfg = apply_settings(default_config(), {"sla_urllc.latency_threshold_ms": "7.5",
                                            "load_scale": "0.6"})
    assert cfg.sla_urllc.latency_threshold_ms == 7.5
    assert cfg.load_scale == 0.6
    # untouched siblings survive
    assert cfg.sla_urllc.satisfaction_threshold == 0.95


@st.composite
def valid_configs(draw):
    return replace(
        default_config(),
        horizon_slots=draw(st.integers(0, 10000)),
        prediction_horizon=draw(st.integers(1, 12)),
        load_scale=draw(st.floats(0.1, 2.0, allow_nan=False)),
        burst_factor=draw(st.floats(1.0, 3.0, allow_nan=False)),
        alpha=draw(st.floats(0.0, 5.0, allow_nan=False)),
        beta=draw(st.floats(0.0, 5.0, allow_nan=False)),
        num_slices=draw(st.integers(1, 24)),
        seed=draw(st.integers(0, 2 ** 63)),
        forecaster_kind=draw(st.sampled_from(domain.FORECASTER_KINDS)),
        controller_kind=draw(st.sampled_from(domain.CONTROLLER_KINDS)),
        sla_embb=SLASpec(
            latency_threshold_ms=draw(st.floats(1.0, 100.0, allow_nan=False)),
            satisfaction_threshold=draw(st.floats(0.5, 0.99, allow_nan=False)),
            safety_fraction=draw(st.floats(0.1, 1.0, allow_nan=False,
                                           exclude_min=True)),
        ),
    )


@settings(max_examples=60, deadline=None)
@given(valid_configs())
def test_serialization_round_trip_property(cfg):
    assert validate(cfg) == []
    assert from_text(to_text(cfg)) == cfg


def test_build_slices_cycles_classes_and_splits_rates():
    cfg = replace(default_config(), num_slices=6)
    slices = build_slices(cfg)
    assert [s.class_ for s in slices] == [SliceClass.EMBB, SliceClass.URLLC,
                                          SliceClass.MMTC] * 2
    # doubled slice count halves each slice's share; total offered load constant
    assert slices[0].base_rate == pytest.approx(0.15)
    total = sum(s.base_rate for s in slices)
    assert total == pytest.approx(0.30 + 0.10 + 0.20)


def test_telemetry_validation():
    domain.TelemetryVector(0.1, 0.5, 0.9, 1.0).validate()
    with pytest.raises(ValueError):
        domain.TelemetryVector(-0.1, 0.5, 0.9, 1.0).validate()
    with pytest.raises(ValueError):
        domain.TelemetryVector(0.1, 1.5, 0.9, 1.0).validate()
    with pytest.raises(ValueError):
        domain.TelemetryVector(math.nan, 0.5, 0.9, 1.0).validate()
