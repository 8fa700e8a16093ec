"""Figure smoke tests over checked-in tablime CSV fixtures.

The fixtures were produced by the tablime CLI (explain/field/sweep) and are
consumed here purely through the documented CSV contracts.
"""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from limefigures import FigureSpec, SchemaError, render
from limefigures.render import read_rows

DATA = Path(__file__).parent / "data"
A2_CSV = DATA / "a2_linear_explain.csv"
A7_CSV = DATA / "a7_indicator_field.csv"
CONST_CSV = DATA / "constant_field.csv"
SWEEP_CSV = DATA / "indicator_sweep.csv"


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestWhisker:
    def test_a2_csv_yields_eleven_boxes(self, tmp_path):
        out = tmp_path / "a2.png"
        result = render(FigureSpec(str(A2_CSV), "whisker", str(out)))
        assert result.marks == 11  # intercept + 10 coefficients
        assert out.stat().st_size > 0

    def test_svg_output(self, tmp_path):
        out = tmp_path / "a2.svg"
        result = render(FigureSpec(str(A2_CSV), "whisker", str(out),
                                   title="linear model"))
        assert out.stat().st_size > 0
        assert result.path == str(out)

    def test_input_untouched(self, tmp_path):
        before = digest(A2_CSV)
        render(FigureSpec(str(A2_CSV), "whisker", str(tmp_path / "x.png")))
        assert digest(A2_CSV) == before

    def test_same_csv_same_plotted_data(self, tmp_path):
        a = render(FigureSpec(str(A2_CSV), "whisker", str(tmp_path / "a.png")))
        b = render(FigureSpec(str(A2_CSV), "whisker", str(tmp_path / "b.png")))
        np.testing.assert_array_equal(a.data["mean"], b.data["mean"])
        np.testing.assert_array_equal(a.data["theory"], b.data["theory"])


class TestField:
    def test_a7_csv_yields_one_arrow_per_bin(self, tmp_path):
        out = tmp_path / "a7.png"
        result = render(FigureSpec(str(A7_CSV), "field", str(out)))
        assert result.marks == 16  # 4x4 bins
        assert out.stat().st_size > 0

    def test_constant_model_arrows_are_zero_length(self, tmp_path):
        result = render(FigureSpec(str(CONST_CSV), "field",
                                   str(tmp_path / "c.png")))
        lengths = np.hypot(result.data["beta_1"], result.data["beta_2"])
        np.testing.assert_array_equal(lengths, 0.0)

    def test_indicator_field_signs(self):
        # the fixture's rectangle fills bin (0, 2): positive components only
        # on the aligned row/column
        rows = read_rows(A7_CSV, "field")
        for r in rows:
            assert (float(r["beta_1"]) > 0) == (int(r["bin_i"]) == 0)
            assert (float(r["beta_2"]) > 0) == (int(r["bin_j"]) == 2)


class TestSweep:
    def test_sweep_curves(self, tmp_path):
        out = tmp_path / "sweep.png"
        result = render(FigureSpec(str(SWEEP_CSV), "sweep", str(out)))
        assert result.marks == 3  # intercept + 2 coefficients
        assert out.stat().st_size > 0


class TestSchema:
    def test_empty_csv_is_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(SchemaError):
            render(FigureSpec(str(empty), "whisker", str(tmp_path / "x.png")))

    def test_missing_column_named_in_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("feature_index,beta_hat_mean\n0,1.0\n")
        with pytest.raises(SchemaError, match="beta_hat_std"):
            render(FigureSpec(str(bad), "whisker", str(tmp_path / "x.png")))

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            FigureSpec(str(A2_CSV), "pie", str(tmp_path / "x.png"))

    def test_wrong_kind_for_csv(self, tmp_path):
        with pytest.raises(SchemaError, match="bin_i"):
            render(FigureSpec(str(A2_CSV), "field", str(tmp_path / "x.png")))


class TestCli:
    def test_script_entry(self, tmp_path, capsys):
        from limefigures.cli import main
        out = tmp_path / "fig.png"
        assert main([str(A2_CSV), "--kind", "whisker", "--out", str(out)]) == 0
        assert out.stat().st_size > 0
        assert "11 marks" in capsys.readouterr().out

    def test_script_reports_schema_errors(self, tmp_path, capsys):
        from limefigures.cli import main
        empty = tmp_path / "empty.csv"
        empty.write_text("a,b\n")
        code = main([str(empty), "--kind", "field", "--out",
                     str(tmp_path / "x.png")])
        assert code == 2
        assert "bin_i" in capsys.readouterr().err
