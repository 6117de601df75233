"""Render the report tables as matplotlib figures (PNG), one file per
figure-analog table. Point estimates are drawn with a thick 68% bar and a
thin 95% bar, matching the tabular CI pair."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

GROUP_METRIC_TABLES = {
    "f1_portfolio_irr": "Portfolio IRR by group",
    "f3_target_return": "Mean target return by group",
    "f3_principal_lost": "Fraction of principal lost by group",
    "a5_default_rate": "Default rate by group",
    "a7_irr_volatility": "IRR volatility by group",
    "f7_approval_delta": "Counterfactual approval change (aware - blind)",
    "f7_apr_delta": "Counterfactual APR change (aware - blind)",
    "f8_realized_irr": "Mean individual IRR by group",
    "f8_counterfactual_irr": "No-shopping counterfactual IRR by group",
}


def _interval_panel(ax, rows, title):
    ys = range(len(rows))
    for y, r in zip(ys, rows):
        ax.plot([r["ci95_lo"], r["ci95_hi"]], [y, y], color="tab:blue", lw=1)
        ax.plot([r["ci68_lo"], r["ci68_hi"]], [y, y], color="tab:blue", lw=4, alpha=0.7)
        ax.plot(r["point"], y, "o", color="black", ms=4)
    ax.set_yticks(list(ys), [r["group"] for r in rows])
    ax.invert_yaxis()
    ax.set_title(title, fontsize=10)
    ax.grid(axis="x", alpha=0.3)


def _group_metric_figure(rows, title, path):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3), constrained_layout=True)
    for ax, axis_name in zip(axes, ("race", "gender")):
        sub = [r for r in rows if r["axis"] == axis_name]
        if sub:
            _interval_panel(ax, sub, axis_name)
    fig.suptitle(title, fontsize=11)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _calibration_figure(points, smooth, title, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), constrained_layout=True)
    for ax, axis_name in zip(axes, ("race", "gender")):
        pts = [r for r in points if r["axis"] == axis_name]
        groups = sorted({r["group"] for r in pts})
        for g in groups:
            sub = [r for r in pts if r["group"] == g]
            ax.errorbar(
                [r["pred_mean"] for r in sub],
                [r["obs_rate"] for r in sub],
                yerr=[
                    [r["obs_rate"] - r["ci_lo"] for r in sub],
                    [r["ci_hi"] - r["obs_rate"] for r in sub],
                ],
                marker="o", ms=3, lw=1, capsize=2, label=g,
            )
            sm = [r for r in smooth if r["axis"] == axis_name and r["group"] == g]
            if sm:
                ax.plot([r["pred"] for r in sm], [r["rate"] for r in sm], lw=1, alpha=0.6)
        lim = ax.get_xlim()
        ax.plot(lim, lim, ls="--", color="gray", lw=1)
        ax.set_xlabel("predicted default risk")
        ax.set_ylabel("observed default rate")
        ax.set_title(axis_name, fontsize=10)
        ax.legend(fontsize=7)
    fig.suptitle(title, fontsize=11)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _apr_curve_figure(rows, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), constrained_layout=True)
    for ax, axis_name in zip(axes, ("race", "gender")):
        sub = [r for r in rows if r["axis"] == axis_name]
        for g in sorted({r["group"] for r in sub}):
            grp = [r for r in sub if r["group"] == g]
            x = [r["apr"] for r in grp]
            ax.plot(x, [r["default_rate"] for r in grp], label=g, lw=1.5)
            ax.fill_between(x, [r["ci_lo"] for r in grp], [r["ci_hi"] for r in grp], alpha=0.15)
        ax.set_xlabel("APR")
        ax.set_ylabel("default rate")
        ax.set_title(axis_name, fontsize=10)
        ax.legend(fontsize=7)
    fig.suptitle("Default rate as a function of APR", fontsize=11)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _curve_echo_figure(rows, path):
    fig, ax = plt.subplots(figsize=(5, 4), constrained_layout=True)
    ax.plot([r["principal_lost"] for r in rows], [r["target_return"] for r in rows], "o-")
    ax.set_xlabel("realized principal-lost rate (target-return decile)")
    ax.set_ylabel("mean target return")
    ax.set_title("Target return vs realized loss", fontsize=11)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _decile_curve_figure(rows, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), constrained_layout=True)
    for ax, axis_name in zip(axes, ("race", "gender")):
        sub = [r for r in rows if r["axis"] == axis_name]
        for g in sorted({r["group"] for r in sub}):
            grp = [r for r in sub if r["group"] == g]
            ax.plot([r["target_return"] for r in grp], [r["default_rate"] for r in grp],
                    "o-", ms=3, lw=1, label=g)
        ax.set_xlabel("mean target return (decile)")
        ax.set_ylabel("default rate")
        ax.set_title(axis_name, fontsize=10)
        ax.legend(fontsize=7)
    fig.suptitle("Default rate across target-return deciles", fontsize=11)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_all(report, fig_dir: str) -> dict[str, str]:
    """Render every renderable table; returns {table: relative png path}."""
    os.makedirs(fig_dir, exist_ok=True)
    out = {}

    def save(name, fn, *args):
        path = os.path.join(fig_dir, f"{name}.png")
        fn(*args, path)
        out[name] = os.path.join("figures", f"{name}.png")

    tables = report.tables
    for name, title in GROUP_METRIC_TABLES.items():
        rows = tables.get(name)
        if rows:
            save(name, lambda rows, title, p: _group_metric_figure(rows, title, p), rows, title)
    for name, title in (
        ("f4_calibration_blind", "Calibration of the blind risk model"),
        ("f6_calibration_aware", "Calibration of the aware risk model"),
    ):
        if tables.get(name):
            save(name, _calibration_figure, tables[name], tables.get(name + "_smooth", []), title)
    if tables.get("f5_default_by_apr"):
        save("f5_default_by_apr", _apr_curve_figure, tables["f5_default_by_apr"])
    if tables.get("f2_target_return_curve"):
        save("f2_target_return_curve", _curve_echo_figure, tables["f2_target_return_curve"])
    if tables.get("a6_target_default_curve"):
        save("a6_target_default_curve", _decile_curve_figure, tables["a6_target_default_curve"])
    return out
