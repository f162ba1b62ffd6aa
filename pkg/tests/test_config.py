from importlib import resources

import numpy as np
import pytest

from maxminplan import config
from maxminplan.config import ConfigError, parse
from maxminplan.game import G1, G2, G3

MINIMAL = """\
[experiment]
seed = 3

[topology]
name = G1
"""


def bundled(name):
    return resources.files("maxminplan.data").joinpath(name)


def test_minimal_config_uses_desk_defaults():
    cfg = parse(MINIMAL)
    assert (cfg.seed, cfg.horizon, cfg.gamma, cfg.algorithm) == (3, 30, 1.0, "proposed")
    assert cfg.planner.n_queries == 50 and cfg.optimizer.n_iters == 500
    assert cfg.schedule.at(0) is G1
    assert cfg.formation.n_agents == 5 and cfg.initial.shape == (5, 2)


def test_full_scale():
    cfg = parse(MINIMAL.replace("seed = 3", "seed = 3\nscale = full"))
    assert (cfg.horizon, cfg.planner.n_queries, cfg.optimizer.n_iters) == (150, 100, 1000)


def test_explicit_keys_override_scale():
    cfg = parse(MINIMAL + "[planner]\nn_queries = 7\nk_a = 3.5\n")
    assert cfg.planner.n_queries == 7 and cfg.planner.k_a == 3.5


@pytest.mark.parametrize("name", ["g1.ini", "g3.ini", "switching.ini", "two_agent.ini"])
def test_bundled_configs_load(name):
    with resources.as_file(bundled(name)) as path:
        cfg = config.load(path)
    assert cfg.seed == 0


def test_switch_schedule():
    cfg = parse(MINIMAL + "switch = G1:10, G2:5\n")
    assert [cfg.schedule.at(t) for t in (0, 9, 10, 14, 15)] == [G1, G1, G2, G2, G1]


def test_switching_name():
    cfg = parse(MINIMAL.replace("G1", "switching"))
    assert cfg.schedule.at(0) is G1 and cfg.schedule.at(10) is G2


def test_custom_topology_and_inline_formation():
    cfg = parse("""\
[experiment]
seed = 1
[topology]
name = custom
n_agents = 3
edges = 1-2, 2-3
[formation]
desired = 0 0; 1 0; 2 0
initial = 0 1; 1 1; 2 1.5
""")
    topo = cfg.schedule.at(0)
    assert topo.n_agents == 3 and topo.has_edge(0, 1) and not topo.has_edge(0, 2)
    assert np.array_equal(cfg.formation.desired, [[0, 0], [1, 0], [2, 0]])
    assert cfg.initial[2, 1] == 1.5


def test_eight_agent_defaults():
    cfg = parse(MINIMAL.replace("G1", "G3"))
    assert cfg.schedule.at(0) is G3 and cfg.formation.n_agents == 8


def test_out_dir_relative_to_config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(MINIMAL.replace("seed = 3", "seed = 3\nout = results/a"))
    assert config.load(path).out_dir == tmp_path / "results" / "a"


@pytest.mark.parametrize("text,line,fragment", [
    ("[experiment]\nseed = 1\nhorizn = 4\n[topology]\nname = G1\n", 3, "horizn: unknown key"),
    ("[experiment]\nseed = x\n[topology]\nname = G1\n", 2, "cannot read 'x'"),
    ("[experiment]\nhorizon = 4\n[topology]\nname = G1\n", 1, "seed is required"),
    ("[experiment]\nseed = 1\n[topology]\nname = G9\n", 4, "unknown topology"),
    ("[experiment]\nseed = 1\nalgorithm = greedy\n[topology]\nname = G1\n", 3, "choose from"),
    ("[experiment]\nseed = 1\n[topology]\nname = custom\nn_agents = 2\nedges = 1+2\n", 6, "malformed edge"),
    ("[experiment]\nseed = 1\n[topology]\nname = G1\n[formation]\ndesired = 0 0; 1 1\n", 6, "has 2 agents"),
    ("[experiment]\nseed = 1\n[topology]\nname = G1\n[solver]\nk = 1\n", 5, "unknown section"),
    ("[experiment]\nseed = 1\n[topology]\nname = G1\n[planner]\n\nucb_c = -2\n", 7, "ucb_c"),
])
def test_errors_name_file_and_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse(text, "exp.ini")
    msg = str(info.value)
    assert msg.startswith(f"exp.ini:{line}:"), msg
    assert fragment in msg


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        config.load(tmp_path / "nope.ini")


def test_syntax_error_is_config_error():
    with pytest.raises(ConfigError):
        parse("seed = 1\n", "exp.ini")
