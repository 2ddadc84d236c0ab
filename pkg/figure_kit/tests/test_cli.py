"""Command line behavior, plus an end-to-end run against the thermlab CLI."""

import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from figure_kit.cli import main
from figure_kit.render import draw
from figure_kit.schemas import load_table

from builders import write_cascade, write_sweep, write_verdicts

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

DECAYING = [0.01, 0.0025, 0.000625]


def test_success_prints_output_path(tmp_path, capsys):
    csv = write_cascade(tmp_path / "cascade.csv", DECAYING)
    out = tmp_path / "cascade.png"
    rc = main(["--kind", "cascade", "--in", str(csv), "--out", str(out)])
    assert rc == 0
    assert capsys.readouterr().out.strip() == str(out)
    assert out.read_bytes().startswith(PNG_MAGIC)


def test_missing_column_exits_2(tmp_path, capsys):
    bad = tmp_path / "cascade.csv"
    bad.write_text("n,sup_error\n1,0.01\n")
    rc = main(["--kind", "cascade", "--in", str(bad), "--out", str(tmp_path / "o.png")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "missing column 'a'" in err


def test_overwrite_refused_without_force(tmp_path, capsys):
    csv = write_cascade(tmp_path / "cascade.csv", DECAYING)
    out = tmp_path / "cascade.png"
    out.write_bytes(b"sentinel")
    rc = main(["--kind", "cascade", "--in", str(csv), "--out", str(out)])
    assert rc == 2
    assert "--force" in capsys.readouterr().err
    assert out.read_bytes() == b"sentinel"


def test_force_flag_overwrites(tmp_path):
    csv = write_cascade(tmp_path / "cascade.csv", DECAYING)
    out = tmp_path / "cascade.png"
    out.write_bytes(b"sentinel")
    rc = main(
        ["--kind", "cascade", "--in", str(csv), "--out", str(out), "--force"]
    )
    assert rc == 0
    assert out.read_bytes().startswith(PNG_MAGIC)


def test_verdicts_json_accepted_alongside_csv(tmp_path):
    csv = write_cascade(tmp_path / "cascade.csv", DECAYING)
    verdicts = write_verdicts(
        tmp_path / "verdicts.json", {"cascade": {"fitted_decay_exponent": 4.0}}
    )
    out = tmp_path / "cascade.png"
    rc = main(
        [
            "--kind", "cascade",
            "--in", str(csv),
            "--in", str(verdicts),
            "--out", str(out),
        ]
    )
    assert rc == 0
    assert out.exists()


def test_unknown_kind_is_an_argparse_error(tmp_path):
    csv = write_cascade(tmp_path / "cascade.csv", DECAYING)
    with pytest.raises(SystemExit) as excinfo:
        main(["--kind", "heatmap", "--in", str(csv), "--out", "o.png"])
    assert excinfo.value.code == 2


def test_missing_required_flags_exit_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["--kind", "cascade"])
    assert excinfo.value.code == 2


def test_bad_rho_exits_2(tmp_path, capsys):
    csv = write_cascade(tmp_path / "cascade.csv", DECAYING)
    rc = main(
        [
            "--kind", "cascade",
            "--in", str(csv),
            "--out", str(tmp_path / "o.png"),
            "--rho", "1.5",
        ]
    )
    assert rc == 2
    assert "rho" in capsys.readouterr().err


def test_missing_input_file_exits_2(tmp_path, capsys):
    rc = main(
        [
            "--kind", "cascade",
            "--in", str(tmp_path / "absent.csv"),
            "--out", str(tmp_path / "o.png"),
        ]
    )
    assert rc == 2
    assert "absent.csv" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    csv = write_cascade(tmp_path / "cascade.csv", DECAYING)
    out = tmp_path / "cascade.png"
    proc = subprocess.run(
        [
            sys.executable, "-m", "figure_kit.cli",
            "--kind", "cascade", "--in", str(csv), "--out", str(out),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.read_bytes().startswith(PNG_MAGIC)


BASELINE_STYLE = """
[grid]
nx = 129

[coefficients]
sigma_family = affine
sigma_intercept = 2.0
sigma_slope = 1.0
sigma_lower = 1.5
sigma_upper = 4.0
sigma_minus = 1.5
c_sigma = 1.0
lambda_family = constant
lambda_value = 0.1
lambda_plus = 0.1
f_kind = constant
f_value = 1.0

[regularity]
n_max = 4
stability_scales = 1.0, 0.5, 0.25, 0.125
"""

CONVERGENCE_SWEEP = """
[coefficients]
sigma_family = constant
sigma_value = 2.0
sigma_minus = 2.0
c_sigma = 0.0
lambda_family = constant
lambda_value = 0.0
lambda_plus = 0.0
f_kind = product_sines
f_amplitude = 1.0

[sweep]
axis = gridSize
values = 17, 33, 65
"""


@pytest.fixture(scope="module")
def runner_outputs(tmp_path_factory):
    """Run the installed thermlab CLI once; every figure test reads from it."""
    thermlab = shutil.which("thermlab")
    if thermlab is None:
        pytest.skip("thermlab CLI is not installed")
    root = tmp_path_factory.mktemp("runner")
    baseline_cfg = root / "baseline.ini"
    baseline_cfg.write_text(BASELINE_STYLE)
    sweep_cfg = root / "convergence.ini"
    sweep_cfg.write_text(CONVERGENCE_SWEEP)
    baseline_out = root / "baseline"
    sweep_out = root / "convergence"
    for args in (
        [thermlab, "regularity", "--config", str(baseline_cfg),
         "--out", str(baseline_out), "--quiet"],
        [thermlab, "sweep", "--config", str(sweep_cfg),
         "--out", str(sweep_out), "--quiet"],
    ):
        proc = subprocess.run(args, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    return baseline_out, sweep_out


def test_all_four_kinds_render_from_runner_outputs(runner_outputs, tmp_path):
    baseline_out, sweep_out = runner_outputs
    verdicts = baseline_out / "verdicts.json"
    jobs = {
        "cascade": [baseline_out / "cascade.csv", verdicts],
        "modulus": [baseline_out / "modulus.csv", verdicts],
        "stability": [baseline_out / "stability.csv", verdicts],
        "convergence": [sweep_out / "sweep.csv"],
    }
    for kind, inputs in jobs.items():
        out = tmp_path / f"{kind}.png"
        argv = ["--kind", kind, "--out", str(out)]
        for path in inputs:
            argv += ["--in", str(path)]
        assert main(argv) == 0, kind
        assert out.read_bytes().startswith(PNG_MAGIC)


def test_runner_cascade_figure_carries_reference_line(runner_outputs):
    import json

    import matplotlib.pyplot as plt

    baseline_out, _ = runner_outputs
    verdicts = json.loads((baseline_out / "verdicts.json").read_text())
    fitted = verdicts["cascade"]["fitted_decay_exponent"]
    assert fitted is not None, "run too coarse to fit a decay exponent"
    table = load_table(baseline_out / "cascade.csv", "cascade")
    fig, ax = plt.subplots()
    try:
        draw(ax, "cascade", [table], annotations=verdicts)
        labels = [line.get_label() for line in ax.lines]
        assert any(
            lab.startswith("reference slope -2 log(1/rho)") for lab in labels
        )
        texts = [t.get_text() for t in ax.texts]
        assert any(t.startswith("fitted decay exponent =") for t in texts)
    finally:
        plt.close(fig)


def test_runner_sweep_over_other_axis_is_rejected(runner_outputs, tmp_path, capsys):
    baseline_out, _ = runner_outputs
    rc = main(
        [
            "--kind", "convergence",
            "--in", str(baseline_out / "cascade.csv"),
            "--out", str(tmp_path / "o.png"),
        ]
    )
    assert rc == 2
    assert "missing column" in capsys.readouterr().err
