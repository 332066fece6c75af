import pytest

from egpu.config import (ConfigError, NotPowerOfTwo, RegionOverlap, UnknownKey, UnknownPreset, ZeroResource,
                         load_config, serialize, static_report)


def test_presets_differ_in_lanes_and_banks():
    a, b, c = (load_config(preset=p) for p in ("4t", "8t", "16t"))
    assert (a.threads_per_cu, b.threads_per_cu, c.threads_per_cu) == (2, 4, 8)
    assert (a.dcache_banks, b.dcache_banks, c.dcache_banks) == (2, 4, 8)
    assert a.num_cus == b.num_cus == c.num_cus
    assert c.total_threads == 64


def test_document_and_override_precedence():
    cfg = load_config("preset = 8t\nnum_cus = 4  # comment\n", ["num_cus=1"])
    assert cfg.preset == "egpu-8t" and cfg.num_cus == 1 and cfg.threads_per_cu == 4


def test_preset_sets_leakage():
    assert load_config(preset="16t").energy_coeffs.leakage_power_total == 305.32


def test_serialize_round_trip():
    cfg = load_config(preset="16t", overrides=["dcache_size=8192", "e_bus_txn=7.5"])
    assert load_config(serialize(cfg)) == cfg


@pytest.mark.parametrize("override, exc", [
    ("bogus=1", UnknownKey),
    ("dcache_size=3000", NotPowerOfTwo),
    ("num_cus=0", ZeroResource),
    ("stack_base=0x8000", RegionOverlap),
    ("gating=sometimes", ConfigError),
    ("e_bus_txn=-1", ConfigError),
])
def test_invalid_configs(override, exc):
    with pytest.raises(exc):
        load_config(overrides=[override])


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        load_config(preset="egpu-32t")


def test_static_table_published_pairs():
    assert static_report("4t") == {"preset": "egpu-4t", "area_mm2": 0.24, "leakage_uw": 130.13, "estimated": False}
    assert static_report("egpu-16t")["leakage_uw"] == 305.32
    assert static_report("host-only")["area_mm2"] == 0.15
    assert static_report("8t")["estimated"] is True
