import csv
import json
from pathlib import Path

import pytest
from matplotlib.patches import Rectangle

from metafed_figures import FigureSpec, SchemaError, render, render_to_file
from metafed_figures.cli import main
from metafed_figures.spec import load_spec, read_table

FIXTURES = Path(__file__).parent / "fixtures"
TRADEOFF = FIXTURES / "tradeoff.csv"
BARS = FIXTURES / "bars.csv"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def bar_patches(ax):
    return [p for p in ax.patches if isinstance(p, Rectangle)]


class TestTradeoffLines:
    def test_series_values_equal_csv(self, tmp_path):
        rows = read_rows(TRADEOFF)
        spec = FigureSpec(TRADEOFF, "tradeoff-lines", tmp_path / "t.png")
        fig = render(spec)
        ax = fig.axes[0]
        lines = {line.get_label(): line for line in ax.lines}
        for setting in {r["setting"] for r in rows}:
            series = sorted((r for r in rows if r["setting"] == setting),
                            key=lambda r: float(r["t0"]))
            for label_part, column in ((": meta-training", "maml_kj"),
                                       (": task adaptations", "fl_sum_kj"),
                                       (": total", "total_kj")):
                line = lines[f"{setting}{label_part}"]
                assert list(line.get_xdata()) == [float(r["t0"]) for r in series]
                assert list(line.get_ydata()) == [float(r[column]) for r in series]

    def test_total_lines_dashed_with_argmin_markers(self, tmp_path):
        rows = read_rows(TRADEOFF)
        settings = sorted({r["setting"] for r in rows})
        fig = render(FigureSpec(TRADEOFF, "tradeoff-lines", tmp_path / "t.png"))
        ax = fig.axes[0]
        dashed = [l for l in ax.lines if l.get_linestyle() == "--"]
        assert len(dashed) == len(settings) == 2
        stars = [l for l in ax.lines if l.get_label().endswith(": optimum")]
        assert len(stars) == len(settings)
        for setting in settings:
            argmin_rows = [r for r in rows
                           if r["setting"] == setting and int(r["is_argmin"])]
            star = next(l for l in stars
                        if l.get_label() == f"{setting}: optimum")
            assert list(star.get_xdata()) == [float(r["t0"]) for r in argmin_rows]
            assert list(star.get_ydata()) == [float(r["total_kj"])
                                              for r in argmin_rows]

    def test_setting_filter(self, tmp_path):
        fig = render(FigureSpec(TRADEOFF, "tradeoff-lines", tmp_path / "t.png",
                                settings=("uplink_fast",)))
        labels = [l.get_label() for l in fig.axes[0].lines]
        assert all(label.startswith("uplink_fast") for label in labels)

    def test_unknown_setting_rejected(self, tmp_path):
        with pytest.raises(SchemaError, match="settings"):
            render(FigureSpec(TRADEOFF, "tradeoff-lines", tmp_path / "t.png",
                              settings=("nope",)))


class TestBars:
    def test_exactly_one_plus_m_bars(self, tmp_path):
        rows = read_rows(BARS)
        fig = render(FigureSpec(BARS, "bars-energy", tmp_path / "b.png"))
        bars = bar_patches(fig.axes[0])
        assert len(bars) == len(rows) == 7
        heights = [p.get_height() for p in bars]
        assert heights == [float(r["energy_with_meta_kj"]) for r in rows]

    def test_no_transfer_markers_not_bars(self, tmp_path):
        rows = read_rows(BARS)
        fig = render(FigureSpec(BARS, "bars-rounds", tmp_path / "b.png"))
        ax = fig.axes[0]
        assert len(bar_patches(ax)) == 7
        marker_line = next(l for l in ax.lines
                           if l.get_label() == "random initialization")
        assert list(marker_line.get_ydata()) == [float(r["rounds_no_meta"])
                                                 for r in rows]

    def test_entries_order_preserved(self, tmp_path):
        rows = read_rows(BARS)
        fig = render(FigureSpec(BARS, "bars-energy", tmp_path / "b.png"))
        labels = [t.get_text() for t in fig.axes[0].get_xticklabels()]
        assert labels == [r["entry"] for r in rows]


class TestValidation:
    def test_empty_csv_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(SchemaError, match="empty"):
            read_table(empty, "bars-energy")

    def test_header_only_rejected(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("schema,entry,energy_with_meta_kj,energy_no_meta_kj\n")
        with pytest.raises(SchemaError, match="empty"):
            read_table(path, "bars-energy")

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("schema,entry,energy_with_meta_kj\nbars-v1,meta,1.0\n")
        with pytest.raises(SchemaError, match="energy_no_meta_kj"):
            read_table(path, "bars-energy")

    def test_wrong_schema_tag_rejected(self, tmp_path):
        path = tmp_path / "w.csv"
        rows = read_rows(BARS)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows([{**r, "schema": "rounds-v1"} for r in rows])
        with pytest.raises(SchemaError, match="bars"):
            read_table(path, "bars-energy")

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(SchemaError, match="kind"):
            FigureSpec(BARS, "pie", tmp_path / "x.png")


class TestOutput:
    def test_render_to_file_deterministic(self, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        render_to_file(FigureSpec(TRADEOFF, "tradeoff-lines", a))
        render_to_file(FigureSpec(TRADEOFF, "tradeoff-lines", b))
        assert a.read_bytes() == b.read_bytes()

    def test_spec_json_roundtrip(self, tmp_path):
        doc = {"csv": str(TRADEOFF), "kind": "tradeoff-lines",
               "out": str(tmp_path / "o.png"), "title": "x",
               "settings": ["uplink_fast"]}
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(doc))
        spec = load_spec(path)
        assert spec.kind == "tradeoff-lines"
        assert spec.settings == ("uplink_fast",)


class TestCli:
    def test_positional_form(self, tmp_path, capsys):
        out = tmp_path / "out.png"
        assert main(["render", str(BARS), "bars-energy", str(out)]) == 0
        assert out.exists()

    def test_spec_form(self, tmp_path):
        out = tmp_path / "out.png"
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({"csv": str(TRADEOFF),
                                         "kind": "tradeoff-lines",
                                         "out": str(out)}))
        assert main(["render", "--spec", str(spec_path)]) == 0
        assert out.exists()

    def test_empty_csv_nonzero_exit(self, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        code = main(["render", str(empty), "bars-energy",
                     str(tmp_path / "x.png")])
        assert code == 1
        assert "empty" in capsys.readouterr().err

    def test_bad_arg_count(self, tmp_path):
        assert main(["render", str(BARS)]) == 1
