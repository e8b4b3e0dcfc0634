import csv
import io
import json
import math

import pytest

from privlens.cli import ConfigError, main, parse_rho, parse_spec
from privlens.simplex import FunctionSpec


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def csv_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestParsing:
    def test_spec_forms(self, tmp_path):
        want = FunctionSpec.from_atoms([[0, 1, 2], [3, 4]])
        path = tmp_path / 'spec.json'
        path.write_text('{"r":5,"atoms":[[0,1,2],[3,4]]}')
        assert parse_spec(str(path)) == want
        assert parse_spec('{"r":5,"atoms":[[0,1,2],[3,4]]}') == want
        assert parse_spec('[[0,1,2],[3,4]]') == want
        assert parse_spec('3,2') == want

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            parse_spec('3,x')

    def test_rho_forms(self):
        assert parse_rho('0.3:0.7:0.2') == (0.3, 0.5, 0.7)
        assert parse_rho('0.3,0.5') == (0.3, 0.5)
        assert parse_rho(0.8) == (0.8,)

    @pytest.mark.parametrize('text', ['0.7:0.3:0.1', '0.1:0.2:0', '1.5', '0', 'abc'])
    def test_bad_rho(self, text):
        with pytest.raises(ConfigError):
            parse_rho(text)


class TestOmega:
    def test_example_values(self, capsys):
        code, out, _ = run(capsys, 'omega', '--spec', '3,2', '--rho', '0.3,0.5,0.7')
        assert code == 0
        rows = {float(r['param']): float(r['value']) for r in csv_rows(out)}
        assert rows[0.3] == pytest.approx(2.321928, abs=1e-6)
        assert rows[0.5] == pytest.approx(2.321928, abs=1e-6)
        assert rows[0.7] == pytest.approx(1.584963, abs=1e-6)

    def test_breakpoints_for_singletons(self, capsys):
        code, out, _ = run(capsys, 'omega', '--spec', '1,1,1,1', '--rho', '0.1:1:0.05')
        assert code == 0
        rows = [(float(r['param']), float(r['value'])) for r in csv_rows(out)]
        for l in (1, 2, 3, 4):
            value = next(v for p, v in rows if p == pytest.approx(1 / l, abs=1e-11))
            assert value == pytest.approx(math.log2(l), abs=1e-11)
        assert [p for p, _ in rows] == sorted(p for p, _ in rows)

    def test_empty_range_is_config_error(self, capsys):
        code, _, err = run(capsys, 'omega', '--spec', '3,2', '--rho', '0.7:0.3:0.1')
        assert code == 2
        assert 'rho' in err

    def test_missing_spec(self, capsys):
        assert run(capsys, 'omega', '--rho', '0.5')[0] == 2

    def test_json_is_rounded(self, capsys):
        _, out, _ = run(capsys, 'omega', '--spec', '3,2', '--rho', '0.7', '--format', 'json')
        doc = json.loads(out)
        assert doc[0]['value'] == float(format(math.log2(3), '.12g'))


class TestMechanism:
    def test_v1_case(self, capsys):
        code, out, _ = run(capsys, 'mechanism', '--spec', '1,1,1,1,1', '--rho', '0.4')
        doc = json.loads(out)
        assert code == 0
        assert (doc['case'], doc['k_prime'], doc['l']) == ('V1', 3, 2)
        assert doc['rho_qr_valid'] is True

    def test_v2_case(self, capsys):
        code, out, _ = run(capsys, 'mechanism', '--spec', '1,1,1', '--rho', '0.45')
        doc = json.loads(out)
        assert code == 0
        assert (doc['case'], doc['k_prime']) == ('V2', 2)
        assert doc['V_prime']['rows'][0] == pytest.approx([0.9, 0.1], abs=1e-12)

    def test_worst_case_marker(self, capsys):
        code, out, _ = run(capsys, 'mechanism', '--spec', '2,1,1', '--rho', '0.2')
        doc = json.loads(out)
        assert code == 0
        assert doc['regime'] == 'worst-case'
        assert doc['W_l']['rows'][0] == pytest.approx([1 / 3] * 3, abs=1e-12)

    def test_range_rejected(self, capsys):
        assert run(capsys, 'mechanism', '--spec', '2,1', '--rho', '0.6,0.7')[0] == 2


class TestBounds:
    def test_n_sweep(self, capsys):
        code, out, _ = run(capsys, 'bounds', '--spec', '3,2', '--rho', '0.8', '--n', '8,32,128',
                           '--budget', '300')
        assert code == 0
        rows = csv_rows(out)
        conv = [float(r['value']) for r in rows if r['kind'] == 'converse']
        assert len(conv) == 3
        assert conv[0] > conv[-1] > math.log2(3)
        ach = [r for r in rows if r['kind'] == 'achievability']
        assert [r['param'] for r in ach] == ['8', '32', '128']

    def test_validity_flags(self, capsys, tmp_path):
        out_path = tmp_path / 'b.csv'
        code, _, _ = run(capsys, 'bounds', '--spec', '1,1,1,1,1', '--rho', '0.4', '--n', '3,500',
                         '--out', str(out_path))
        assert code == 0
        rows = csv_rows(out_path.read_text())
        flags = {r['param']: r['valid'] for r in rows if r['kind'] == 'achievability'}
        assert flags == {'3': 'false', '500': 'true'}
        assert not any(r['kind'] == 'converse' for r in rows)

    def test_large_n_achievability_near_omega(self, capsys):
        _, out, _ = run(capsys, 'bounds', '--spec', '3,2', '--rho', '0.7', '--n', '100000',
                        '--budget', '20')
        ach = next(float(r['value']) for r in csv_rows(out) if r['kind'] == 'achievability')
        assert ach == pytest.approx(math.log2(3), abs=1e-3)

    def test_double_sweep_rejected(self, capsys):
        assert run(capsys, 'bounds', '--spec', '3,2', '--rho', '0.6,0.7', '--n', '8,16')[0] == 2


class TestSimulate:
    def test_json_schema_and_determinism(self, capsys):
        argv = ('simulate', '--spec', '2,1', '--rho', '0.7', '--n', '4', '--samples', '20000',
                '--seed', '9')
        code, out, _ = run(capsys, *argv)
        assert code == 0
        doc = json.loads(out)
        assert set(doc) == {'mean', 'std_error', 'samples', 'seed'}
        assert (doc['samples'], doc['seed']) == (20000, 9)
        assert run(capsys, *argv)[1] == out

    def test_config_file_precedence(self, capsys, tmp_path):
        cfg = tmp_path / 'cfg.json'
        cfg.write_text(json.dumps({'spec': '2,1', 'rho': 0.7, 'n': 3, 'samples': 5000,
                                   'seed': 1}))
        _, out, _ = run(capsys, 'simulate', '--config', str(cfg))
        assert json.loads(out)['seed'] == 1
        _, out, _ = run(capsys, 'simulate', '--config', str(cfg), '--seed', '4')
        doc = json.loads(out)
        assert (doc['seed'], doc['samples']) == (4, 5000)

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / 'cfg.json'
        cfg.write_text('{"colour": 1}')
        assert run(capsys, 'simulate', '--config', str(cfg))[0] == 2


class TestMinimax:
    def test_small_grid(self, capsys):
        code, out, _ = run(capsys, 'minimax', '--rho', '0.4', '--n', '1', '--grid', '21')
        assert code == 0
        doc = json.loads(out)
        assert 0.97 <= doc['value'] <= 1.0

    def test_budget_is_config_error(self, capsys):
        assert run(capsys, 'minimax', '--rho', '0.8', '--n', '2', '--grid', '201')[0] == 2


class TestVerify:
    def test_only_one_check(self, capsys):
        code, out, _ = run(capsys, 'verify', '--only', 'lemma4')
        assert code == 0
        assert out.startswith('PASS lemma4')
        assert len(out.strip().splitlines()) == 1

    def test_mutation_fails(self, capsys):
        code, out, _ = run(capsys, 'verify', '--only', 'theorem1', '--mutate')
        assert code == 3
        assert out.startswith('FAIL theorem1')

    def test_unknown_check(self, capsys):
        assert run(capsys, 'verify', '--only', 'nope')[0] == 2

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 2
