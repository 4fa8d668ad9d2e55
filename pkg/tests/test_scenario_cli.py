import io
import textwrap
from fractions import Fraction

import pytest

from conftest import within_sigma
from qrelay.adversary import StatisticsReport, exact_statistics
from qrelay.cli import bundled_scenarios, main, resolve_scenario, run_scenario
from qrelay.scenario import (
    ScenarioError,
    ScenarioInvariantError,
    oracle_check,
    parse_attack,
    parse_scenario,
    read_stats,
)

SMALL = textwrap.dedent("""\
    [scenario]
    name = small
    claim = test
    figure = qber-by-attack

    [session]
    rounds = 20000
    seed = 3
    relays = 1

    [sweep]
    attack = none, both-independent, both-reuse
    """)


def write(tmp_path, text, name="s.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_attack():
    assert parse_attack("both-reuse").name == "both-reuse"
    assert parse_attack("legs:1,3").legs == frozenset({1, 3})
    assert parse_attack("legs:1+3").legs == frozenset({1, 3})
    assert parse_attack("legs:2+3:reuse").basis_rule.value == "reuse"
    with pytest.raises(ValueError):
        parse_attack("everything")


def test_sweep_points():
    s = parse_scenario(SMALL)
    assert [p["attack"].name for p in s.points()] == ["none", "both-independent", "both-reuse"]


@pytest.mark.parametrize("text,line", [
    (SMALL.replace("rounds = 20000", "rounds = many"), 7),
    (SMALL.replace("seed = 3", "seed = -1"), 8),
    (SMALL.replace("attack = none,", "attack = sometimes,"), 12),
    (SMALL + "[channel]\nplatform = balloon\n", 14),
    (SMALL + "[channel]\nlength_km = 1\nintrinsic_qber = 2\n", 15),
])
def test_parse_errors_name_the_line(text, line):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text, "s.ini")
    assert f"s.ini:{line}" in str(exc.value)
    assert not isinstance(exc.value, ScenarioInvariantError)


def test_parse_error_exit_1_and_no_output(tmp_path, capsys):
    path = write(tmp_path, SMALL.replace("rounds = 20000", "rounds = 0"))
    out = tmp_path / "out"
    assert main(["run", str(path), "--out", str(out)]) == 1
    assert "s.ini:7" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_invariant_violation_exit_2(tmp_path):
    text = SMALL.replace("[sweep]\nattack = none, both-independent, both-reuse\n",
                         "mode = carol\n[sweep]\nrelays = 1, 2\n")
    out = tmp_path / "out"
    assert main(["run", str(write(tmp_path, text)), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())


def test_attack_on_missing_leg_exit_2(tmp_path):
    text = SMALL.replace("attack = none, both-independent, both-reuse", "attack = none, legs:1+3")
    assert main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 2


def test_usage_errors_exit_1(tmp_path):
    assert main([]) == 1
    assert main(["run", "no-such-scenario"]) == 1
    assert main(["run", "sift-vs-relays", "--seed", "-4"]) == 1


def test_run_writes_stats_and_figure(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(write(tmp_path, SMALL)), "--out", str(out), "--transcript"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["small.csv", "small.png", "small.run0.transcript.csv",
                     "small.run1.transcript.csv", "small.run2.transcript.csv"]
    text = (out / "small.csv").read_text()
    assert text.startswith("# scenario: small\n# reproduces: test\n# seed: 3\n")
    rows = read_stats(out / "small.csv")
    assert [r["attack"] for r in rows] == ["none", "both-independent", "both-reuse"]
    header = (out / "small.run0.transcript.csv").read_text().splitlines()[0]
    assert header.startswith("round,")


def test_seed_override_changes_output(tmp_path):
    path = write(tmp_path, SMALL)
    a = run_scenario(path, tmp_path / "a", figures=False).read_text()
    b = run_scenario(path, tmp_path / "b", seed=4, figures=False).read_text()
    assert "# seed: 4" in b and a != b


def test_fig2_bands(tmp_path):
    rows = read_stats(run_scenario(resolve_scenario("fig2-attack-sweep"), tmp_path,
                                   figures=False))
    got = {r["attack"]: (float(r["qber_ab"]), float(r["trent_residual"])) for r in rows}
    expected = {"none": 0, "ch1": 0.25, "ch2": 0.25, "both-independent": 0.375,
                "both-reuse": 0.25}
    for attack, q in expected.items():
        assert abs(got[attack][0] - q) <= 0.01


def test_sift_vs_relays(tmp_path):
    rows = read_stats(run_scenario(resolve_scenario("sift-vs-relays"), tmp_path,
                                   figures=False))
    for r in rows:
        n = int(r["relays"])
        assert within_sigma(float(r["kept_fraction"]), 2.0 ** -(n + 1), int(r["rounds"]))


def test_xor_chain_scenario(tmp_path):
    out = tmp_path / "x"
    assert main(["run", "xor-chain", "--out", str(out), "--transcript"]) == 0
    rows = read_stats(out / "xor-chain.csv")
    assert all(r["alice_bob_agree"] == "1" and r["relays_agree"] == "1" for r in rows)
    ann = (out / "xor-chain.run0.announcements.txt").read_text().splitlines()
    assert len(ann) == 1 and ann[0].startswith("relay1,")


def test_oracle_check_passes(capsys):
    assert main(["oracle-check", "fig2-attack-sweep"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "run,label,statistic,observed,expected,n,z,status"
    assert len(lines) == 1 + 5 * len(StatisticsReport.FIELDS)


def test_oracle_check_catches_wrong_oracle():
    scenario = parse_scenario(SMALL)

    def wrong(policy, d1=0, d2=0):
        right = exact_statistics(policy, d1, d2)
        return StatisticsReport(right.bob_qber + Fraction(1, 10), right.trent_qber,
                                right.trent_wrong_bob_right, right.eve_information)

    assert oracle_check(scenario).passed
    report = oracle_check(scenario, exact=wrong)
    assert not report.passed
    assert any(line.endswith("FAIL") for line in report.lines())


def test_oracle_check_rejects_other_kinds(capsys):
    assert main(["oracle-check", "sift-vs-relays"]) == 1


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert len(out.splitlines()) == len(bundled_scenarios()) == 7
    assert "fig2-attack-sweep" in out
