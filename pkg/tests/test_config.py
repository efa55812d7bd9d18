import pytest

from core.config import (
    DEFAULT_POPULATION_CAP,
    SimConfig,
    apply_env,
    build_config,
    env_truthy,
    int_env,
    load_config,
    parse_text,
)
from core.errors import ConfigError

SAMPLE = """
# b3 desk run
[model]
speed = "exp:3.0"
t = 8
times = 4, 6, 8
betas = 0.3,1.1; 0.2,1.2
rho = 0.7
replicas = 4096   # per horizon
snapshot = 2.5
"""


def test_parse_text_skips_comments_and_sections():
    raw = parse_text(SAMPLE)
    assert raw["speed"] == "exp:3.0"
    assert raw["replicas"] == "4096"
    assert "[model]" not in raw


def test_build_config_converts_values():
    cfg = build_config(parse_text(SAMPLE))
    assert cfg.t == 8.0
    assert cfg.times == (4.0, 6.0, 8.0)
    assert cfg.horizons() == (4.0, 6.0, 8.0)
    assert cfg.betas == ((0.3, 1.1), (0.2, 1.2))
    assert cfg.rho == 0.7
    assert cfg.replicas == 4096
    assert cfg.snapshot == (2.5, None)
    assert cfg.population_cap == DEFAULT_POPULATION_CAP


def test_defaults():
    cfg = SimConfig()
    assert cfg.speed == "exp:3.0"
    assert cfg.horizons() == (6.0,)
    assert cfg.grid_step_for(6.0) == pytest.approx(0.25)
    assert cfg.grid_step_for(2.0) == pytest.approx(0.1)


def test_beta_grid_expands_to_square():
    cfg = build_config({"beta_grid": "0:0.2:0.1"})
    betas = cfg.beta_list()
    assert len(betas) == 9
    assert betas[0] == (0.0, 0.0)
    assert betas[-1] == (0.2, 0.2)


def test_none_clears_optional_keys():
    base = build_config({"snapshot": "2,1.5", "envelope": "0.3,20"})
    assert base.snapshot == (2.0, 1.5)
    cleared = build_config({"snapshot": "none", "envelope": ""}, base)
    assert cleared.snapshot is None
    assert cleared.envelope is None


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as info:
        build_config({"temperature": "1"})
    assert info.value.key == "temperature"


@pytest.mark.parametrize(
    "raw, key",
    [
        ({"rho": "1.5"}, "rho"),
        ({"replicas": "0"}, "replicas"),
        ({"replicas": "2.5"}, "replicas"),
        ({"t": "abc"}, "t"),
        ({"betas": "0.3"}, "betas"),
        ({"beta_grid": "1:0:0.1"}, "beta_grid"),
        ({"phase_factor": "3"}, "phase_factor"),
    ],
)
def test_invalid_values(raw, key):
    with pytest.raises(ConfigError) as info:
        build_config(raw)
    assert info.value.key == key


def test_malformed_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("t = 4\njust words\n")


def test_env_overrides(monkeypatch):
    monkeypatch.setenv("CREM_SEED", "42")
    monkeypatch.setenv("CREM_POPULATION_CAP", "1000")
    cfg = apply_env(SimConfig())
    assert cfg.seed == 42
    assert cfg.population_cap == 1000


def test_env_helpers(monkeypatch):
    monkeypatch.setenv("CREM_WORKERS", "not-a-number")
    assert int_env("CREM_WORKERS", 3) == 3
    monkeypatch.setenv("CREM_FLAG", "Yes")
    assert env_truthy("CREM_FLAG")
    monkeypatch.delenv("CREM_FLAG")
    assert env_truthy("CREM_FLAG", default=True)


def test_load_config_text_file(tmp_path, monkeypatch):
    monkeypatch.delenv("CREM_SEED", raising=False)
    monkeypatch.delenv("CREM_POPULATION_CAP", raising=False)
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE, encoding="utf-8")
    cfg, meta = load_config(str(path))
    assert cfg.replicas == 4096
    assert meta["source"] == "text file"
    assert meta["status"] == "ready"
    assert meta["path"] == str(path)


def test_load_config_defaults_without_path(monkeypatch):
    monkeypatch.delenv("CREM_SEED", raising=False)
    monkeypatch.delenv("CREM_POPULATION_CAP", raising=False)
    cfg, meta = load_config(None)
    assert cfg == SimConfig()
    assert meta["source"] == "defaults"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(str(tmp_path / "nope.cfg"))
    assert info.value.key == "--config"


def test_load_config_workbook(tmp_path, monkeypatch):
    pytest.importorskip("openpyxl")
    pd = pytest.importorskip("pandas")
    monkeypatch.delenv("CREM_SEED", raising=False)
    monkeypatch.delenv("CREM_POPULATION_CAP", raising=False)
    path = tmp_path / "run.xlsx"
    frame = pd.DataFrame({"Key": ["t", "betas", "replicas"], "Value": ["5", "0.3,1.1", "64"]})
    frame.to_excel(path, sheet_name="General", index=False)
    cfg, meta = load_config(str(path))
    assert cfg.t == 5.0
    assert cfg.betas == ((0.3, 1.1),)
    assert cfg.replicas == 64
    assert meta["source"] == "Excel file"


def test_workbook_without_headers(tmp_path):
    pytest.importorskip("openpyxl")
    pd = pytest.importorskip("pandas")
    path = tmp_path / "bad.xlsx"
    pd.DataFrame({"name": ["t"], "amount": ["5"]}).to_excel(path, sheet_name="General", index=False)
    with pytest.raises(ConfigError, match="missing required header"):
        load_config(str(path))
