"""Tests for the command-line interface."""

import argparse
import json

import pandas as pd
import pytest

from onebit.cli import EXIT_CONFIG_ERROR, main, parse_int_list, parse_snr


class TestArgumentParsing:
    def test_snr_range_is_inclusive(self) -> None:
        assert parse_snr("0:20:5") == [0.0, 5.0, 10.0, 15.0, 20.0]
        assert parse_snr("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_snr_list(self) -> None:
        assert parse_snr("0, 2.5,10") == [0.0, 2.5, 10.0]

    @pytest.mark.parametrize("text", ["0:10", "0:10:0", "a,b"])
    def test_bad_snr(self, text: str) -> None:
        with pytest.raises((argparse.ArgumentTypeError, ValueError)):
            parse_snr(text)

    def test_int_list(self) -> None:
        assert parse_int_list("2,3,4") == [2, 3, 4]
        with pytest.raises(argparse.ArgumentTypeError):
            parse_int_list("2,x")


class TestMain:
    def test_audit_to_file(self, tmp_path) -> None:
        out = tmp_path / "audit.csv"
        code = main(["prop1-audit", "--nt", "4", "--k", "2", "--trials", "3", "--out", str(out)])
        assert code == 0
        frame = pd.read_csv(out)
        assert len(frame) == 3
        assert frame["passed"].all()

    def test_config_file_with_overrides(self, tmp_path) -> None:
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"nt": 4, "k": 2, "snr_db": [0, 30], "trials": 2, "precoders": ["ci-1bit"]}))
        out = tmp_path / "ber.csv"
        code = main(["ber-sweep", "--config", str(config), "--snr", "10", "--no-timing", "--out", str(out)])
        assert code == 0
        frame = pd.read_csv(out)
        assert frame["snr_db"].tolist() == [10.0]
        assert frame["wall_ms"].tolist() == [0.0]

    def test_csv_to_stdout(self, capsys) -> None:
        code = main(["node-count", "--nt", "4", "--k-values", "1", "--trials", "2"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("nt,k,modulation,method")
        assert len(lines) == 3

    def test_unknown_config_key(self, tmp_path, capsys) -> None:
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"nt": 4, "antennas": 8}))
        assert main(["ber-sweep", "--config", str(config)]) == EXIT_CONFIG_ERROR
        assert "configuration error" in capsys.readouterr().err

    def test_too_many_users(self) -> None:
        assert main(["ber-sweep", "--nt", "2", "--k", "3"]) == EXIT_CONFIG_ERROR

    def test_unknown_modulation(self) -> None:
        assert main(["ber-sweep", "--mod", "32apsk"]) == EXIT_CONFIG_ERROR

    def test_unknown_precoder(self) -> None:
        assert main(["ber-sweep", "--nt", "4", "--trials", "1", "--precoders", "mmse"]) == EXIT_CONFIG_ERROR

    def test_missing_config_file(self, tmp_path) -> None:
        assert main(["convergence", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG_ERROR

    def test_unwritable_output(self, tmp_path) -> None:
        code = main(["prop1-audit", "--nt", "4", "--k", "2", "--trials", "1", "--out", str(tmp_path / "a" / "b.csv")])
        assert code == 1

    def test_bad_argument_type_exits(self) -> None:
        with pytest.raises(SystemExit) as exc:
            main(["ber-sweep", "--snr", "0:10"])
        assert exc.value.code == 2
