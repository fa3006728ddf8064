import csv
import math
from pathlib import Path

import pytest

from neurovio.cli import EXIT_ASSERTION, main
from neurovio.dataio import load_euroc_layout


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def gen_small(out: Path, *extra) -> Path:
    assert main(["gen", "--duration", "1.0", "--height", "12", "--width", "16", "--out", str(out), *extra]) == 0
    return out


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    return gen_small(tmp_path_factory.mktemp("data"))


def read_log(path: Path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestGen:
    def test_sixty_seconds(self, tmp_path, capsys):
        assert main(["gen", "--duration", "60", "--seed", "7", "--height", "12", "--width", "16",
                     "--out", str(tmp_path)]) == 0
        assert "wrote 600 frames" in capsys.readouterr().out
        assert len(list((tmp_path / "full" / "images").glob("*.pgm"))) == 600

    def test_byte_identical_rerun(self, tmp_path):
        a = tree_bytes(gen_small(tmp_path / "a", "--seed", "3"))
        b = tree_bytes(gen_small(tmp_path / "b", "--seed", "3"))
        a.pop("config.echo"), b.pop("config.echo")
        assert a == b

    def test_corrupt_fraction(self, tmp_path):
        gen_small(tmp_path, "--corrupt", "0.2", "--duration", "4.0")
        ds = load_euroc_layout(tmp_path / "full")
        flagged = [o.frame.corrupted for o in ds]
        assert sum(flagged) == round(0.2 * len(ds)) == 8
        assert all((o.frame.pixels == 0).all() for o, bad in zip(ds, flagged) if bad)

    def test_echo_round_trip(self, tmp_path):
        gen_small(tmp_path / "a", "--seed", "5", "--corrupt", "0.1")
        assert main(["gen", "--config", str(tmp_path / "a" / "config.echo"), "--out", str(tmp_path / "b")]) == 0
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        echo_a, echo_b = a.pop("config.echo").decode(), b.pop("config.echo").decode()
        assert a == b
        assert echo_a.replace(str(tmp_path / "a"), "X") == echo_b.replace(str(tmp_path / "b"), "X")

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["gen", "--out", str(blocker / "sub")]) == 2


class TestTrain:
    @pytest.mark.parametrize("mode", [["--loss", "beta", "--beta", "500"], ["--loss", "sigma"]])
    def test_smoke(self, small_data, tmp_path, mode):
        assert main(["train", "--data", str(small_data), "--epochs", "1", "--out", str(tmp_path), *mode]) == 0
        row, = read_log(tmp_path / "train_log.csv")
        assert list(row) == ["epoch", "train_loss", "val_trans_rmse_m", "val_rot_rmse_rad", "s_x", "s_q"]
        assert all(math.isfinite(float(row[k])) for k in ("train_loss", "val_trans_rmse_m", "s_x", "s_q"))
        assert (tmp_path / "model.ckpt").exists()

    def test_resume_continues(self, small_data, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--data", str(small_data), "--epochs", "2", "--out", str(first)]) == 0
        assert main(["train", "--data", str(small_data), "--epochs", "1", "--resume", str(first / "model.ckpt"),
                     "--out", str(second)]) == 0
        assert [r["epoch"] for r in read_log(second / "train_log.csv")] == ["3"]

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2


class TestEvalBoundFly:
    def test_eval_passthrough(self, small_data, tmp_path, capsys):
        code = main(["eval", "--data", str(small_data), "--estimator", "passthrough", "--out", str(tmp_path),
                     "--assert-rmse", "0"])
        assert code == 0
        metrics = dict(line.split(" = ") for line in (tmp_path / "metrics.txt").read_text().splitlines())
        assert float(metrics["trans_rmse_m"]) == 0.0

    def test_eval_missing_checkpoint(self, small_data, tmp_path):
        with pytest.raises(SystemExit):
            main(["eval", "--data", str(small_data), "--out", str(tmp_path)])

    def test_bound_self_test(self, tmp_path, capsys):
        assert main(["bound", "--self-test", "true", "--out", str(tmp_path)]) == 0
        assert "1.618033988" in capsys.readouterr().out

    def test_bound_on_data(self, small_data, tmp_path):
        assert main(["bound", "--data", str(small_data), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "bound.csv").read_text().startswith("timestamp_s,kf_err_m,ml_err_m,kf_steady_std_m")

    def test_fly_truth(self, tmp_path):
        assert main(["fly", "--estimator", "truth", "--assert-landing", "0.05", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "flight.svg").exists()

    def test_violated_assertion_exit_code(self, tmp_path):
        assert main(["fly", "--estimator", "truth", "--assert-landing", "1e-9", "--out", str(tmp_path)]) \
            == EXIT_ASSERTION

    def test_report(self, tmp_path):
        run = tmp_path / "run"
        main(["fly", "--estimator", "truth", "--out", str(run)])
        assert main(["report", "--inputs", str(run), "--out", str(tmp_path)]) == 0
        assert "flight_summary.txt" in (tmp_path / "report.md").read_text()
