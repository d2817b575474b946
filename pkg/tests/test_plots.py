from ditskip.lazy import RunStats
from ditskip.plots import render_heatmap, render_loss_curve, render_sweep


def test_render_heatmap(tmp_path):
    stats = RunStats(3, 5, 2)
    stats.record(1, "attn", 2, 0, skip=True, score=0.8)
    path = tmp_path / "heatmap.png"
    render_heatmap(stats, path)
    assert path.stat().st_size > 1000


def test_render_loss_curve(tmp_path):
    trace = [{"step": i, "total_loss": 1.0 / (i + 1), "lazy_loss": 0.5 / (i + 1),
              "distill_loss": 0.5 / (i + 1)} for i in range(10)]
    path = tmp_path / "loss.png"
    render_loss_curve(trace, path)
    assert path.stat().st_size > 1000


def test_render_sweep(tmp_path):
    rows = [
        {"rho": 1e-7, "gamma_attn": 0.0, "gamma_feed": 0.0, "consistency_error": 0.0},
        {"rho": 1e-4, "gamma_attn": 0.4, "gamma_feed": 0.5, "consistency_error": 0.3},
        {"rho": 1e-2, "gamma_attn": 0.9, "gamma_feed": 0.9, "consistency_error": 0.9},
    ]
    path = tmp_path / "sweep.png"
    render_sweep(rows, path)
    assert path.stat().st_size > 1000
