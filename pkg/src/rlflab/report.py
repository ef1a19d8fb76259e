"""Text summaries and static SVG plots from run records."""
from __future__ import annotations

import json
import os

import numpy as np

from . import arrayio


def find_records(path):
    """Record files under ``path``: the file itself, ``path/record.json`` or one level down."""
    if os.path.isfile(path):
        return [path]
    direct = os.path.join(path, "record.json")
    if os.path.isfile(direct):
        return [direct]
    out = []
    for name in sorted(os.listdir(path)):
        p = os.path.join(path, name, "record.json")
        if os.path.isfile(p):
            out.append(p)
    return out


def load_record(path):
    with open(path) as fh:
        text = fh.read().strip()
    return json.loads(text) if text else {}


def _numeric_columns(rows):
    cols = []
    for k in rows[0]:
        try:
            np.array([float(r[k]) for r in rows])
            cols.append(k)
        except (TypeError, ValueError):
            pass
    return cols


def _plot_table(name, rows, dest):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = _numeric_columns(rows)
    if len(cols) < 2:
        return None
    col = {k: np.array([float(r[k]) for r in rows]) for k in cols}
    fig, ax = plt.subplots(figsize=(5, 3.6))
    if name.startswith("decay_") or name == "commutator_bound":
        x = col["alpha"]
        ys = ["norm_1"] if name.startswith("decay_") else ["ratio"]
        for yk in ys:
            y = col[yk]
            ax.loglog(x, y, "o-", label=yk)
            ok = (x > 0) & (y > 0)
            if ok.sum() >= 2:
                slope = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0]
                ax.annotate(f"slope {slope:.3f}", xy=(0.05, 0.9), xycoords="axes fraction")
        ax.set_xlabel("alpha")
    elif name.startswith("defect_"):
        y = col["defect"]
        ax.errorbar(np.arange(len(y)), y, yerr=col.get("stderr"), fmt=".", ms=3)
        ax.set_xlabel("row")
        ax.set_ylabel("defect")
    else:
        x = col[cols[0]]
        for yk in cols[1:]:
            y = col[yk]
            if np.all(y > 0) and np.all(x > 0):
                ax.loglog(x, y, "o-", label=yk)
            else:
                ax.plot(x, y, "o-", label=yk)
        ax.set_xlabel(cols[0])
    ax.set_title(name)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(dest, format="svg")
    plt.close(fig)
    return dest


PLOTTED = ("decay_", "ladder_", "defect_", "commutator_bound")


def report(path, plot_dir=None):
    """Summary text, warnings and written plot paths for a record or run directory."""
    records = find_records(path)
    warnings, plots, lines = [], [], []
    if not records:
        warnings.append(f"no record found under {path}")
    entries = []
    for rp in records:
        rec = load_record(rp)
        entries.append((rec.get("scenario", ""), rp, rec))
    entries.sort(key=lambda e: e[0])
    lines.append(f"{'scenario':28s} {'result':6s} {'checks':>6s} {'failed':>6s} {'wall_s':>8s}")
    total = 0
    for scen, rp, rec in entries:
        checks = rec.get("checks", [])
        asserted = [c for c in checks if c.get("asserted", True)]
        failed = [c for c in asserted if not c.get("passed")]
        total += len(asserted)
        status = "PASS" if not failed else "FAIL"
        lines.append(f"{scen or '-':28s} {status:6s} {len(asserted):6d} {len(failed):6d} "
                     f"{rec.get('wall_time', 0.0):8.2f}")
        for c in checks:
            mark = "ok" if c.get("passed") else ("FAIL" if c.get("asserted", True) else "info")
            lines.append(f"    {mark:4s} {c['name']:44s} {c['value']:.4g} {c['op']} {c['threshold']:.4g}")
        base = os.path.dirname(rp)
        for tname, fname in sorted(rec.get("artifacts", {}).items()):
            fpath = os.path.join(base, fname)
            if not os.path.exists(fpath):
                warnings.append(f"{scen}: missing artifact {fname}")
                continue
            if fname.endswith(".csv") and tname.startswith(PLOTTED):
                rows = arrayio.read_csv(fpath)
                if rows:
                    dest = os.path.join(plot_dir or base, f"{tname}.svg")
                    os.makedirs(os.path.dirname(dest), exist_ok=True)
                    if _plot_table(tname, rows, dest):
                        plots.append(dest)
    lines.append(f"total asserted checks: {total}")
    lines += [f"warning: {w}" for w in warnings]
    return {"text": "\n".join(lines), "warnings": warnings, "plots": plots, "n_checks": total}
