import pytest
import yaml

from rrjdetect.config import BUILTIN_SCENARIOS, load_scenario, parse_scenario
from rrjdetect.errors import ConfigError

MINIMAL = """\
topology:
  positions: [[0, 0], [30, 0], [0, 60]]
"""


def _write(tmp_path, text):
    path = tmp_path / "sc.yaml"
    path.write_text(text)
    return path


class TestBuiltins:
    @pytest.mark.parametrize("name", BUILTIN_SCENARIOS)
    def test_load(self, name):
        sc = load_scenario(name)
        assert sc.source == f"<builtin {name}>"
        assert sc.topology.m == int(name[1:])
        assert (sc.lam, sc.gamma) == (0.5, 1.0)
        assert len(sc.jammer.grid) == 81
        assert sc.optimizer.tau_eta[0] == pytest.approx(1.05)

    def test_experiment_config(self, m4):
        cfg = m4.experiment_config(threads=2, n=10)
        assert cfg.n == 10 and cfg.threads == 2 and cfg.seed == m4.experiment.seed
        assert m4.with_seed(7).experiment_config().seed == 7


class TestParsing:
    def test_defaults(self, tmp_path):
        sc = load_scenario(_write(tmp_path, MINIMAL))
        assert sc.experiment.W == 1000 and sc.optimizer.order == 1
        assert sc.jammer.grid == [] and sc.figures

    def test_ranges_and_lists(self, tmp_path):
        sc = load_scenario(_write(tmp_path, MINIMAL + """\
jammer:
  grid: {p_R: [0.5, 1], p_J: {start: 0, stop: 1, num: 3}}
optimizer:
  tau_eta: 1.3
"""))
        assert sc.jammer.grid == [(0.5, 0.0), (0.5, 0.5), (0.5, 1.0), (1.0, 0.0), (1.0, 0.5), (1.0, 1.0)]
        assert sc.optimizer.tau_eta == (1.3,)

    @pytest.mark.parametrize("extra, line, message", [
        ("chain:\n  lamda: 1\n", 4, "unknown key"),
        ("experiment:\n  model: coarse\n", 4, "must be one of"),
        ("experiment:\n  W: 1.5\n", 4, "expected an integer"),
        ("chain:\n  gamma: 0\n", 4, "must be >"),
        ("jammer:\n  p_R: 2\n", 4, "must be <="),
        ("jammer:\n  naive: maybe\n", 4, "true or false"),
        ("optimizer:\n  order: 3\n", 4, "must be 1 or 2"),
        ("optimizer:\n  expansion_point: [0, 1]\n", 4, "two numbers"),
        ("outputs:\n  dir: x\n", 3, "unknown section"),
        ("jammer:\n  grid: {p_R: [2], p_J: [0]}\n", 4, "[0, 1]"),
    ])
    def test_errors_carry_location(self, tmp_path, extra, line, message):
        path = _write(tmp_path, MINIMAL + extra)
        with pytest.raises(ConfigError) as info:
            load_scenario(path)
        text = str(info.value)
        assert f"{path}:{line}" in text
        assert message in text

    def test_topology_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="theta"):
            load_scenario(_write(tmp_path, MINIMAL + "  theta: 1.0e-14\n"))
        with pytest.raises(ConfigError, match="positions"):
            load_scenario(_write(tmp_path, "topology:\n  p_t: 1\n"))

    def test_missing_file_and_bad_yaml(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_scenario(tmp_path / "nope.yaml")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_scenario(_write(tmp_path, "topology: [\n"))

    def test_parse_document(self):
        sc = parse_scenario(yaml.safe_load(MINIMAL))
        assert sc.source == "<memory>" and sc.topology.m == 3
        with pytest.raises(ConfigError):
            parse_scenario([1, 2])
