import json

import pytest

from qaroute.config import ENV_API_KEY, EngineConfig, load_or_default


def test_defaults_match_shipped_thresholds():
    cfg = EngineConfig()
    assert cfg.alpha == 0.5
    assert cfg.tau_conflict == 0.70
    assert cfg.tau_conf == 0.35
    assert cfg.tau_cov == 0.30
    assert cfg.tau_amb == 0.45
    assert cfg.tau_i == 0.0
    assert cfg.kg_phase2_tau == 0.50
    assert cfg.kg_weight_cap == 0.95
    assert cfg.offline is True


def test_provenance_tracks_overrides():
    cfg = EngineConfig(alpha=0.7)
    prov = cfg.provenance()
    assert prov["alpha"] == "overridden"
    assert prov["tau_conflict"] == "default"
    assert "api_key" not in prov


def test_roundtrip_preserves_values(tmp_path):
    cfg = EngineConfig(alpha=0.25, retrieval_k=10, tau_amb=0.6)
    p = tmp_path / "cfg.json"
    cfg.save(p)
    back = EngineConfig.load(p)
    assert back.alpha == 0.25 and back.retrieval_k == 10 and back.tau_amb == 0.6
    assert back.provenance()["alpha"] == "overridden"


def test_api_key_never_serialized(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_API_KEY, "sekret")
    cfg = load_or_default(None)
    assert cfg.api_key == "sekret"
    p = tmp_path / "cfg.json"
    cfg.save(p)
    assert "sekret" not in p.read_text()
    assert EngineConfig.load(p).api_key == "sekret"  # re-read from env


def test_validation():
    with pytest.raises(ValueError):
        EngineConfig(alpha=1.5)
    with pytest.raises(ValueError):
        EngineConfig(retrieval_k=0)
    with pytest.raises(ValueError):
        EngineConfig(tau_conflict=-0.1)


def test_gate_thresholds_projection():
    t = EngineConfig(tau_i=0.25).gate_thresholds()
    assert t.tau_i == 0.25 and t.tau_conflict == 0.70


def test_unknown_keys_ignored_on_load(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"alpha": 0.4, "provenance": {}, "bogus": 1}))
    cfg = EngineConfig.load(p)
    assert cfg.alpha == 0.4
