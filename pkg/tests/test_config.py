import pytest

from licra.config import ConfigError, build_tabular, build_target, features, load, loads, schedule
from licra.envs.merton import MertonEnv

BASE = '[experiment]\nname = "t"\n\n[environment]\nname = "chain2"\n'


def test_defaults_filled():
    cfg = loads(BASE)
    assert cfg["experiment"]["horizon"] == 200 and cfg["experiment"]["out"] == "runs/t"
    assert cfg["learner"]["steps"] == 1000 * 200
    assert cfg["schedule"]["exploration"] == "branch"


@pytest.mark.parametrize("path", ["chain2", "chain2_budget", "chain2_zero_cost", "merton", "fa_aggregation"])
def test_round_trip(path, tmp_path):
    from pathlib import Path

    cfg = load(Path(__file__).parents[1] / "configs" / f"{path}.ini")
    again = loads(cfg.dumps())
    assert again == cfg
    assert loads(again.dumps()).dumps() == cfg.dumps()


@pytest.mark.parametrize("text, line, field", [
    (BASE.replace("chain2", "chian2"), 5, "name"),
    (BASE + '\n[learner]\nkind = "ppo"\n', 8, "kind"),
    (BASE + "\n[schedule]\nomega = \"fast\"\n", 8, "omega"),
    (BASE + "\n[schedule]\nwarmup = 3\n", 8, "warmup"),
    (BASE + "\n[budget]\nmode = \"hard\"\n", 7, "n"),
    ('[experiment]\nseeds = [-1]\n[environment]\nname = "chain2"\n', 2, "seeds"),
])
def test_errors_are_line_anchored(text, line, field):
    with pytest.raises(ConfigError) as exc:
        loads(text)
    assert field in str(exc.value)
    if line is not None and exc.value.line is not None:
        assert exc.value.line == line


def test_unknown_block():
    with pytest.raises(ConfigError, match="unknown block"):
        loads(BASE + "\n[extras]\nx = 1\n")


def test_cost_not_allowed_on_simulators():
    with pytest.raises(ConfigError):
        loads('[environment]\nname = "lane"\n[cost]\nform = "fixed"\nkappa = 1.0\n')


def test_lane_preset():
    cfg = loads('[environment]\nname = "lane"\npreset = "contested"\n')
    assert cfg["environment"]["v_max"] == 1.0 and cfg["experiment"]["horizon"] == 200
    explicit = loads('[environment]\nname = "lane"\npreset = "contested"\nv_max = 2.0\n')
    assert explicit["environment"]["v_max"] == 2.0


def test_build_budget():
    cfg = loads(BASE + "\n[budget]\nn = 2\n")
    built = build_tabular(cfg)
    assert built.mdp.n_states == 8 and built.base_states == 2


def test_build_merton_target():
    built = build_target(loads('[environment]\nname = "merton"\nhorizon = 10\n'))
    assert isinstance(built.env, MertonEnv) and built.env.params.horizon == 10


def test_schedule_and_features():
    cfg = loads(BASE + '\n[learner]\nkind = "linear_fa"\n\n[features]\ntype = "aggregation"\ngroups = [0, 0]\n'
                       '\n[schedule]\nalpha0 = 0.5\n')
    assert schedule(cfg).alpha0 == 0.5
    assert features(cfg, 2, 2).dim == 2
    with pytest.raises(ConfigError):
        features(cfg, 3, 2)


def test_with_value_revalidates():
    cfg = loads(BASE)
    assert cfg.with_value("experiment", "seeds", [7]).seeds == [7]
    with pytest.raises(ConfigError):
        cfg.with_value("learner", "kind", "nope")
