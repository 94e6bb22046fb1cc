"""End-to-end CLI tests over a miniature experiment config.

Everything runs in-process through cli.main so exit codes and written
files are observable.  The config is deliberately tiny: these tests check
interfaces and reproducibility, not model quality.
"""

import copy
import json

import numpy as np
import pytest

from slimadapt import cli
from slimadapt.checkpoint import load_checkpoint, save_checkpoint
from slimadapt.slimnet import Architecture
from slimadapt.trainer import init_bank

CONFIG = {
    "seed": 3,
    "out_dir": "PLACEHOLDER",
    "dataset": {"kind": "MIXED", "magnitude": 0.8, "noise_std": 1.0,
                "K": 3, "d": 6, "n_s": 120, "n_t": 120},
    "architecture": {"input_dim": 6, "block_max_widths": [16, 24], "layers_per_block": 1},
    "trainer": {"mode": "slimda", "epochs": 2, "batch_size": 32, "model_batch_size": 3},
    "search": {"k": 3, "q": 4, "tolerance": 0.05, "n_random": 5},
}


@pytest.fixture
def workdir(tmp_path):
    out = tmp_path / "run"
    cfg = dict(copy.deepcopy(CONFIG), out_dir=str(out))
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    return cfg_path, out


def run(args):
    return cli.main([str(a) for a in args])


class TestGenData:
    def test_writes_identical_bytes_twice(self, workdir):
        cfg_path, out = workdir
        assert run(["gen-data", "--config", cfg_path]) == 0
        first = (out / "dataset.json").read_bytes()
        assert run(["gen-data", "--config", cfg_path]) == 0
        assert (out / "dataset.json").read_bytes() == first

    def test_missing_field_names_it(self, workdir, tmp_path, capsys):
        cfg = dict(copy.deepcopy(CONFIG), out_dir=str(tmp_path / "x"))
        del cfg["dataset"]["K"]
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(cfg))
        assert run(["gen-data", "--config", p]) == 2
        assert "dataset.K" in capsys.readouterr().err

    def test_summary_counts_sum_to_sizes(self, workdir, capsys):
        cfg_path, _ = workdir
        run(["gen-data", "--config", cfg_path])
        out = capsys.readouterr().out
        counts = json.loads(out[out.index("["): out.index("]") + 1])
        assert sum(counts) == CONFIG["dataset"]["n_s"]


class TestTrain:
    def test_train_writes_checkpoint_and_metrics(self, workdir):
        cfg_path, out = workdir
        run(["gen-data", "--config", cfg_path])
        assert run(["train", "--config", cfg_path]) == 0
        assert (out / "checkpoint.json").exists()
        lines = (out / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == cli.METRICS_HEADER
        assert len(lines) == 1 + CONFIG["trainer"]["epochs"]

    def test_zero_epochs_checkpoint_equals_initialization(self, workdir, tmp_path):
        cfg = dict(copy.deepcopy(CONFIG), out_dir=str(tmp_path / "z"),
                   trainer=dict(CONFIG["trainer"], epochs=0))
        p = tmp_path / "zero.json"
        p.write_text(json.dumps(cfg))
        run(["gen-data", "--config", p])
        assert run(["train", "--config", p]) == 0
        bank, meta = load_checkpoint(tmp_path / "z" / "checkpoint.json")
        fresh = init_bank(bank.arch, cfg["seed"])
        for name in fresh.params:
            np.testing.assert_array_equal(bank[name].data, fresh[name].data)

    def test_rerun_same_seed_identical_metrics_modulo_timing(self, workdir):
        cfg_path, out = workdir
        run(["gen-data", "--config", cfg_path])
        run(["train", "--config", cfg_path])
        first = (out / "metrics.csv").read_text()
        run(["train", "--config", cfg_path])
        second = (out / "metrics.csv").read_text()
        strip = lambda text: ["," .join(r.split(",")[:-1]) for r in text.splitlines()]
        assert strip(first) == strip(second)

    def test_mode_flag_changes_mode_column(self, workdir):
        cfg_path, out = workdir
        run(["gen-data", "--config", cfg_path])
        run(["train", "--config", cfg_path, "--mode", "baseline"])
        body = (out / "metrics.csv").read_text().splitlines()[1]
        assert body.split(",")[1] == "baseline"


class TestSearchEvalCorrelate:
    @pytest.fixture
    def trained(self, workdir):
        cfg_path, out = workdir
        run(["gen-data", "--config", cfg_path])
        run(["train", "--config", cfg_path])
        return cfg_path, out

    def test_greedy_report_shape_and_monotone_widths(self, trained):
        cfg_path, out = trained
        assert run(["search", "--config", cfg_path]) == 0
        lines = (out / "search.csv").read_text().strip().split("\n")
        assert lines[0] == "step,budget_ratio,widths,delta,flops"
        assert len(lines) == 1 + CONFIG["search"]["k"]
        prev = None
        for line in lines[1:]:
            widths = [int(w) for w in line.split(",")[2].split("|")]
            if prev is not None:
                assert all(b >= a for a, b in zip(prev, widths))
            prev = widths

    def test_random_report_rows_and_reveal_labels(self, trained):
        cfg_path, out = trained
        assert run(["search", "--config", cfg_path, "--strategy", "random",
                    "--reveal-labels"]) == 0
        lines = (out / "search.csv").read_text().strip().split("\n")
        assert lines[0].endswith(",accuracy")
        assert len(lines) == 1 + CONFIG["search"]["k"] * CONFIG["search"]["n_random"]
        for line in lines[1:]:
            acc = float(line.split(",")[-1])
            assert 0.0 <= acc <= 1.0

    def test_explicit_budget_flag(self, trained):
        cfg_path, out = trained
        assert run(["search", "--config", cfg_path, "--budgets", "0.5,1.0"]) == 0
        lines = (out / "search.csv").read_text().strip().split("\n")
        assert len(lines) == 3

    def test_eval_report(self, trained):
        cfg_path, out = trained
        assert run(["eval", "--config", cfg_path, "--widths", "16,24;2,3;8,12"]) == 0
        lines = (out / "eval.csv").read_text().strip().split("\n")
        assert lines[0] == "widths,flops_ratio,accuracy,delta_vs_full"
        assert len(lines) == 4
        full_row = lines[1].split(",")
        assert full_row[0] == "16|24"
        assert float(full_row[1]) == 1.0
        assert float(full_row[3]) == 0.0  # delta vs itself
        assert run(["eval", "--config", cfg_path]) == 0  # default widths
        assert len((out / "eval.csv").read_text().strip().split("\n")) == 3

    def test_eval_rejects_illegal_widths(self, trained):
        cfg_path, _ = trained
        assert run(["eval", "--config", cfg_path, "--widths", "1,24"]) == 2

    def test_correlate_outputs(self, trained):
        cfg_path, out = trained
        assert run(["correlate", "--config", cfg_path, "--n", "6"]) == 0
        scatter = (out / "correlate_scatter.csv").read_text().strip().split("\n")
        summary = (out / "correlate_summary.csv").read_text().strip().split("\n")
        assert scatter[0] == "budget_ratio,delta,accuracy"
        assert len(scatter) == 1 + CONFIG["search"]["k"] * 6
        assert summary[0] == "budget_ratio,pearson,spearman,n"
        for line in summary[1:]:
            pearson = float(line.split(",")[1])
            assert -1.0 <= pearson <= 1.0

    def test_checkpoint_architecture_mismatch_is_config_error(self, trained, tmp_path):
        cfg_path, out = trained
        other = Architecture(input_dim=6, block_max_widths=(8, 8), layers_per_block=1,
                             class_count=3)
        save_checkpoint(out / "checkpoint.json", init_bank(other, 0), 0, 0, "slimda")
        assert run(["search", "--config", cfg_path]) == 2


class TestReproducibility:
    def test_pipeline_outputs_byte_identical_across_runs(self, workdir, tmp_path):
        cfg_path, out = workdir

        def full_run():
            run(["gen-data", "--config", cfg_path])
            run(["train", "--config", cfg_path])
            run(["search", "--config", cfg_path, "--reveal-labels"])
            run(["eval", "--config", cfg_path])
            files = {}
            for name in ("dataset.json", "checkpoint.json", "search.csv", "eval.csv"):
                files[name] = (out / name).read_bytes()
            # metrics.csv contains wall time; compare with the timing column masked
            rows = (out / "metrics.csv").read_text().splitlines()
            files["metrics.csv"] = "\n".join(",".join(r.split(",")[:-1]) for r in rows)
            return files

        a = full_run()
        b = full_run()
        assert a.keys() == b.keys()
        for name in a:
            assert a[name] == b[name], f"{name} differs between identical runs"
