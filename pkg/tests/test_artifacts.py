"""Golden regression checks on every artifact format.

Exact bytes are compared run-to-run elsewhere (acceptance criterion 8);
here the *content* of each artifact at a pinned config is fingerprinted
with rounded numerics so a silent format or semantics change fails
loudly without being brittle to BLAS reassociation across platforms.
"""

import json

import numpy as np
import pytest

from ditskip.cli import main


@pytest.fixture(scope="module")
def artifact_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("artifacts")
    doc = {
        "seed": 12,
        "model": {"layers": 2, "patches": 4, "hidden": 6, "classes": 3,
                  "spectral_clip": 0.35, "logit_cap": 60.0},
        "schedule": {"train_steps": 300, "beta_min": 1e-4, "beta_max": 2e-3},
        "plan": {"num_steps": 6, "guidance": 1.5},
        "lazy": {"rho_attn": 1e-3, "rho_feed": 1e-3, "threshold": 0.5},
        "train": {"learning_rate": 1e-4, "steps": 3, "batch": 2, "window": 3,
                  "loss_mode": "self-distill", "fd_epsilon": 1e-5, "null_prob": 0.1},
        "data": {"size": 8, "mean_scale": 1.0, "noise_scale": 0.5},
    }
    config = tmp / "config.json"
    config.write_text(json.dumps(doc), encoding="utf-8")
    out = tmp / "run"
    assert main(["sample", "--config", str(config), "--lazy", "on", "--batch", "2",
                 "--out", str(out)]) == 0
    ckpt = tmp / "model.ckpt"
    assert main(["train", "--config", str(config), "--out", str(ckpt)]) == 0
    sweep = tmp / "sweep.csv"
    assert main(["sweep", "--config", str(config), "--rhos", "1e-6,1e-3",
                 "--eval-batch", "2", "--out", str(sweep)]) == 0
    report = tmp / "report.json"
    assert main(["verify", "--suite", "scaling", "--trials", "100", "--out", str(report)]) == 0
    macs_json = tmp / "macs.json"
    assert main(["macs", "--preset", "xl2-256", "--steps", "50", "--lazy-ratio", "0.5",
                 "--json", str(macs_json)]) == 0
    return tmp


def test_heatmap_csv_format(artifact_dir):
    lines = (artifact_dir / "run" / "heatmap.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "layer,kind,step,skip_rate"
    assert len(lines) == 1 + 2 * 2 * 6  # kinds * layers * steps
    for line in lines[1:]:
        layer, kind, step, rate = line.split(",")
        assert kind in ("attn", "feed")
        assert 0.0 <= float(rate) <= 1.0
        assert 0 <= int(layer) < 2 and 0 <= int(step) < 6


def test_run_stats_schema(artifact_dir):
    stats = json.loads((artifact_dir / "run" / "run_stats.json").read_text(encoding="utf-8"))
    assert set(stats) >= {"num_layers", "num_steps", "num_trajectories", "lazy_ratio",
                          "mean_lazy_ratio", "computed", "skipped", "lazy", "config",
                          "mac_tally"}
    assert stats["num_trajectories"] == 4  # two samples, conditional + null branches
    assert len(stats["lazy_ratio"]["attn"]) == 4
    assert stats["config"]["schedule"]["train_steps"] == 300
    for kind in ("attn", "feed"):
        assert 0.0 <= stats["mean_lazy_ratio"][kind] <= 1.0
    tally = stats["mac_tally"]
    # every module evaluation is either spent or saved: 2 layers x 2 kinds x
    # 6 steps x 4 trajectories, at 2ND^2 (attn) / ND^2 (feed) each
    unit = 4 * 6 * 6
    assert tally["total_spent"] + tally["total_saved"] == 6 * 4 * 2 * (2 * unit + unit)


def test_latents_shape_and_finiteness(artifact_dir):
    latents = np.load(artifact_dir / "run" / "latents.npy")
    assert latents.shape == (2, 4, 6)
    assert latents.dtype == np.float64
    assert np.all(np.isfinite(latents))


def test_loss_trace_format(artifact_dir):
    lines = (artifact_dir / "model.ckpt.loss.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "step,total_loss,lazy_loss,distill_loss"
    assert len(lines) == 1 + 3
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        assert int(fields[0]) == i
        total, lazy, distill = map(float, fields[1:])
        assert total == pytest.approx(lazy + distill, rel=1e-12)


def test_sweep_table_format(artifact_dir):
    lines = (artifact_dir / "sweep.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "rho,gamma_attn,gamma_feed,consistency_error"
    rhos = [float(line.split(",")[0]) for line in lines[1:]]
    assert rhos == sorted(rhos) == [1e-6, 1e-3]


def test_verification_report_schema(artifact_dir):
    payload = json.loads((artifact_dir / "report.json").read_text(encoding="utf-8"))
    assert isinstance(payload, list) and payload
    for entry in payload:
        assert set(entry) >= {"name", "trials", "worst_ratio", "bound_value", "pass", "params"}


def test_macs_report_schema(artifact_dir):
    payload = json.loads((artifact_dir / "macs.json").read_text(encoding="utf-8"))
    assert payload["preset"] == "xl2-256"
    assert 2.81 <= payload["tmacs"] <= 2.93
    assert payload["tmacs_with_activation_matmuls"] > payload["tmacs_weight_matmuls_only"]


def test_figures_rendered(artifact_dir):
    for name in ("run/heatmap.png", "model.ckpt.loss.png", "sweep.png"):
        assert (artifact_dir / name).stat().st_size > 1000, name


def test_verify_all_suites_cli(tmp_path, capsys):
    out = tmp_path / "all.json"
    code = main(["verify", "--suite", "all", "--trials", "60", "--out", str(out)])
    assert code == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    names = {entry["name"] for entry in payload}
    assert {"scaling/row", "lipschitz/attn", "similarity-floor/feed",
            "linear-probe/attn", "error-propagation"} <= names
    text = capsys.readouterr().out
    assert text.count("PASS") == len(payload)
