# afc/test_config.py
"""
Tests for config loading: precedence, the default turbine split and the
cross-field checks.

Run: pytest afc/test_config.py -v
"""

import pytest

from config import default_split, load_config, parse_offsets, parse_widths, write_config
from errors import UsageError

TURBINES = "WT01,WT02,WT03,WT04,WT05"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ('SEED', 'TURBINES', 'LEARNING_RATE', 'FORECAST_OFFSETS'):
        monkeypatch.delenv(f"AFC_{key}", raising=False)


def _write(tmp_path, *lines):
    path = tmp_path / "afc.env"
    path.write_text('\n'.join(lines) + '\n')
    return str(path)


def test_defaults():
    cfg = load_config(overrides={'TURBINES': TURBINES})

    assert cfg.nan_threshold == 0.20
    assert cfg.window_length == 12
    assert cfg.forecast_offsets == [1]
    assert cfg.layer_widths == [512, 256, 128, 64, 32, 16]
    assert cfg.epochs_per_dataset == 10
    assert cfg.reference_turbine == "WT01"
    assert cfg.scada_path("WT02").endswith("scada_WT02.csv")


def test_default_split():
    ids = [f"WT{i:02d}" for i in range(1, 15)]
    train, test = default_split(ids)
    assert len(train) == 9 and len(test) == 5
    assert train == ids[:9]

    train, test = default_split(ids[:5])
    assert (train, test) == (ids[:3], ids[3:5])

    train, test = default_split(["WT01", "WT02"])
    assert (train, test) == (["WT01"], ["WT02"])

    with pytest.raises(UsageError):
        default_split(["WT01"])


def test_precedence(tmp_path, monkeypatch):
    path = _write(tmp_path, f"TURBINES={TURBINES}", "SEED=1")
    assert load_config(path).seed == 1

    monkeypatch.setenv("AFC_SEED", "2")
    assert load_config(path).seed == 2
    assert load_config(path, {'seed': '3'}).seed == 3


def test_explicit_split(tmp_path):
    path = _write(tmp_path, f"TURBINES={TURBINES}", "TRAIN_TURBINES=WT02,WT04")
    cfg = load_config(path)
    assert cfg.train_turbines == ["WT02", "WT04"]
    assert cfg.test_turbines == ["WT01", "WT03", "WT05"]
    assert cfg.reference_turbine == "WT02"


@pytest.mark.parametrize("lines", [
    ["TRAIN_TURBINES=WT01,WT02", "TEST_TURBINES=WT02,WT03"],
    ["TRAIN_TURBINES=WT01,WT02", "REFERENCE_TURBINE=WT05"],
    ["TRAIN_TURBINES=WT01,WT09"],
    ["FORECAST_OFFSETS=1,4"],
    ["NAN_THRESHOLD=1.5"],
    ["LAYER_WIDTHS=16,0"],
    ["SEED=abc"],
    ["RF_BOOTSTRAP=maybe"],
    ["EPOCHS_PER_DATASET=0"],
    ["KNN_K=0"],
])
def test_invalid_values(tmp_path, lines):
    path = _write(tmp_path, f"TURBINES={TURBINES}", *lines)
    with pytest.raises(UsageError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(UsageError, match="not found"):
        load_config(str(tmp_path / "missing.env"))


def test_no_turbines():
    with pytest.raises(UsageError):
        load_config()


def test_parse_lists():
    assert parse_widths('LAYER_WIDTHS', "64, 32,16") == [64, 32, 16]
    assert parse_offsets('FWS', "0,1,2,3") == [0, 1, 2, 3]
    with pytest.raises(UsageError, match="range 0-3"):
        parse_offsets('FWS', "4")
    with pytest.raises(UsageError):
        parse_widths('LAYER_WIDTHS', "")


def test_sweep_depths(tmp_path):
    path = _write(tmp_path, f"TURBINES={TURBINES}", "SWEEP_DEPTHS=16;32,16", "SWEEP_FWS=1,2,3")
    cfg = load_config(path)
    assert cfg.sweep_depths == [[16], [32, 16]]
    assert cfg.sweep_fws == [1, 2, 3]


def test_per_turbine_paths(tmp_path):
    path = _write(tmp_path, f"TURBINES={TURBINES}", "SCADA_WT03=/data/wt3.csv")
    cfg = load_config(path)
    assert cfg.scada_path("WT03") == "/data/wt3.csv"
    assert cfg.alarm_path("WT03").endswith("alarms_WT03.csv")


def test_stage_configs():
    cfg = load_config(overrides={
        'TURBINES': TURBINES, 'LEARNING_RATE': '0.005', 'BATCH_SIZE': '16',
        'RF_N_TREES': '7', 'DT_MAX_DEPTH': '4', 'RF_BOOTSTRAP': 'false',
    })
    train_cfg = cfg.train_config()
    assert train_cfg.learning_rate == 0.005
    assert train_cfg.batch_size == 16
    assert train_cfg.seed == cfg.seed

    params = cfg.classifier_params()
    assert params.n_trees == 7
    assert params.max_depth == 4
    assert params.bootstrap is False


def test_write_config_round_trip(tmp_path):
    cfg = load_config(overrides={
        'TURBINES': TURBINES, 'TRAIN_TURBINES': 'WT01,WT03,WT05', 'FORECAST_OFFSETS': '1,2',
        'LAYER_WIDTHS': '32,16', 'SEED': '9', 'SCADA_WT01': '/tmp/a.csv',
    })
    path = str(tmp_path / "run" / "config.env")
    write_config(cfg, path)

    assert load_config(path).to_dict() == cfg.to_dict()
